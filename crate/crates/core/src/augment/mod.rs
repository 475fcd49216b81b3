//! Augmentation descriptors: sampling and deterministic replay.
//!
//! A descriptor holds every parameter needed to reproduce one augmentation
//! chain. Replay applies, in order: crop → resize → flip → RA ops → mix →
//! erase. The mixing partner goes through the same crop/flip/RA chain as the
//! primary image before being blended or pasted.

mod ops;
mod replay;
mod sample;

pub use ops::{apply_ra_op, crop_resize, flip_horizontal, RaOp, RA_OP_COUNT};
pub(crate) use replay::prepare_partner;
pub use replay::{
    cutmix_paste, erase, mixup_blend, pixel_span, replay, replay_geometric, CountingPartners, NoPartners, Partner,
    PartnerProvider,
};
pub use sample::{augment_online, sample_descriptor};

use crate::{Error, Result};

/// Axis-aligned box in fractions of the image size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl Rect {
    pub const FULL: Rect = Rect::new(0.0, 0.0, 1.0, 1.0);
    pub const EMPTY: Rect = Rect::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(x: f32, y: f32, w: f32, h: f32) -> Self {
        Self { x, y, w, h }
    }

    /// `0 ≤ x, y` and `x + w, y + h ≤ 1` up to `eps`, with non-negative size.
    pub fn within_unit(&self, eps: f32) -> bool {
        let ok = |v: f32| v.is_finite();
        ok(self.x)
            && ok(self.y)
            && ok(self.w)
            && ok(self.h)
            && self.x >= -eps
            && self.y >= -eps
            && self.w >= 0.0
            && self.h >= 0.0
            && self.x + self.w <= 1.0 + eps
            && self.y + self.h <= 1.0 + eps
    }

    pub fn area(&self) -> f32 {
        self.w * self.h
    }
}

/// Which descriptor blocks are present. Bit 0 (RRC) is always set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VariantFlags(u16);

impl VariantFlags {
    pub const RRC: u16 = 1;
    pub const RA_RE: u16 = 1 << 1;
    pub const MIXING: u16 = 1 << 2;

    pub fn from_bits(bits: u16) -> Option<Self> {
        if bits & Self::RRC == 0 || bits & !(Self::RRC | Self::RA_RE | Self::MIXING) != 0 {
            None
        } else {
            Some(Self(bits))
        }
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn has_ra_re(self) -> bool {
        self.0 & Self::RA_RE != 0
    }

    pub fn has_mixing(self) -> bool {
        self.0 & Self::MIXING != 0
    }
}

/// The four reinforced-dataset variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Rrc,
    RrcMixing,
    RrcRaRe,
    RrcMixingRaRe,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Rrc, Variant::RrcMixing, Variant::RrcRaRe, Variant::RrcMixingRaRe];

    pub fn flags(self) -> VariantFlags {
        let bits = match self {
            Variant::Rrc => VariantFlags::RRC,
            Variant::RrcMixing => VariantFlags::RRC | VariantFlags::MIXING,
            Variant::RrcRaRe => VariantFlags::RRC | VariantFlags::RA_RE,
            Variant::RrcMixingRaRe => VariantFlags::RRC | VariantFlags::RA_RE | VariantFlags::MIXING,
        };
        VariantFlags(bits)
    }

    pub fn from_flags(flags: VariantFlags) -> Self {
        match (flags.has_mixing(), flags.has_ra_re()) {
            (false, false) => Variant::Rrc,
            (true, false) => Variant::RrcMixing,
            (false, true) => Variant::RrcRaRe,
            (true, true) => Variant::RrcMixingRaRe,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rrc => "rrc",
            Variant::RrcMixing => "rrc+mixing",
            Variant::RrcRaRe => "rrc+ra/re",
            Variant::RrcMixingRaRe => "rrc+m*+r*",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase();
        Variant::ALL.into_iter().find(|v| v.name() == norm).ok_or_else(|| {
            Error::invalid(format!("unknown variant {s:?} (expected rrc, rrc+mixing, rrc+ra/re or rrc+m*+r*)"))
        })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One RandAugment slot. `op == -1` marks an empty slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaSlot {
    pub op: i32,
    pub magnitude: f32,
}

impl RaSlot {
    pub const EMPTY: RaSlot = RaSlot { op: -1, magnitude: 0.0 };

    pub fn is_empty(&self) -> bool {
        self.op < 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixUp {
    pub partner: i32,
    /// Weight of the primary image.
    pub lambda: f32,
}

impl MixUp {
    pub const NONE: MixUp = MixUp { partner: -1, lambda: 0.0 };

    pub fn is_applied(&self) -> bool {
        self.partner >= 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutMix {
    pub partner: i32,
    /// Region of the output taken from the partner.
    pub rect: Rect,
}

impl CutMix {
    pub const NONE: CutMix = CutMix { partner: -1, rect: Rect::EMPTY };

    pub fn is_applied(&self) -> bool {
        self.partner >= 0
    }
}

/// Mixing coefficients for a second output of a double-mix pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MixCoefficients {
    Lambda(f32),
    Box(Rect),
}

/// Replayable parameters of one augmentation chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationDescriptor {
    pub flags: VariantFlags,
    pub crop: Rect,
    pub flip: bool,
    pub ra: [RaSlot; 2],
    /// `w == 0` means not applied.
    pub erase: Rect,
    pub mixup: MixUp,
    pub cutmix: CutMix,
}

impl AugmentationDescriptor {
    /// Full-image crop with every optional block empty.
    pub fn identity(flags: VariantFlags) -> Self {
        Self {
            flags,
            crop: Rect::FULL,
            flip: false,
            ra: [RaSlot::EMPTY; 2],
            erase: Rect::EMPTY,
            mixup: MixUp::NONE,
            cutmix: CutMix::NONE,
        }
    }

    pub fn erase_applied(&self) -> bool {
        self.erase.w > 0.0
    }

    pub fn mix_applied(&self) -> bool {
        self.mixup.is_applied() || self.cutmix.is_applied()
    }

    pub fn mix_partner(&self) -> Option<u32> {
        if self.mixup.is_applied() {
            Some(self.mixup.partner as u32)
        } else if self.cutmix.is_applied() {
            Some(self.cutmix.partner as u32)
        } else {
            None
        }
    }

    /// Weight of the primary image in the mixed output: λ for MixUp, the
    /// un-pasted area fraction for CutMix, 1 when no mixing is applied.
    pub fn primary_weight(&self, target_w: usize, target_h: usize) -> f32 {
        if self.mixup.is_applied() {
            self.mixup.lambda
        } else if self.cutmix.is_applied() {
            let r = self.cutmix.rect;
            let (x0, x1) = pixel_span(r.x, r.w, target_w);
            let (y0, y1) = pixel_span(r.y, r.h, target_h);
            1.0 - ((x1 - x0) * (y1 - y0)) as f32 / (target_w * target_h) as f32
        } else {
            1.0
        }
    }

    /// Invariant violations, empty when the descriptor is well formed.
    pub fn violations(&self, num_images: Option<u64>) -> Vec<String> {
        const EPS: f32 = 1e-6;
        let mut v = Vec::new();
        if !self.crop.within_unit(EPS) || self.crop.w <= 0.0 || self.crop.h <= 0.0 {
            v.push(format!("crop {:?} outside the unit square", self.crop));
        }
        for (i, slot) in self.ra.iter().enumerate() {
            if slot.op < -1 || slot.op >= RA_OP_COUNT as i32 {
                v.push(format!("ra slot {i} has unknown op {}", slot.op));
            } else if !slot.is_empty() && !(0.0..=10.0).contains(&slot.magnitude) {
                v.push(format!("ra slot {i} magnitude {} outside [0, 10]", slot.magnitude));
            }
            if !self.flags.has_ra_re() && !slot.is_empty() {
                v.push(format!("ra slot {i} set without the RA/RE block"));
            }
        }
        if self.erase_applied() {
            if !self.erase.within_unit(EPS) {
                v.push(format!("erase box {:?} outside the unit square", self.erase));
            }
            if !self.flags.has_ra_re() {
                v.push("erase set without the RA/RE block".into());
            }
        }
        if self.mixup.is_applied() && self.cutmix.is_applied() {
            v.push("both mixup and cutmix have a partner".into());
        }
        if self.mix_applied() && !self.flags.has_mixing() {
            v.push("mix partner set without the mixing block".into());
        }
        if self.mixup.partner < -1 || self.cutmix.partner < -1 {
            v.push("negative partner id other than the -1 sentinel".into());
        }
        if self.mixup.is_applied() && !(0.0..=1.0).contains(&self.mixup.lambda) {
            v.push(format!("mixup lambda {} outside [0, 1]", self.mixup.lambda));
        }
        if self.cutmix.is_applied() && !self.cutmix.rect.within_unit(EPS) {
            v.push(format!("cutmix box {:?} outside the unit square", self.cutmix.rect));
        }
        if let (Some(n), Some(p)) = (num_images, self.mix_partner()) {
            if p as u64 >= n {
                v.push(format!("mix partner {p} >= num_images {n}"));
            }
        }
        v
    }

    /// Mixes the image with itself: the active mix slot's partner becomes
    /// `own_id`. A descriptor whose mix did not fire is returned unchanged.
    pub fn make_self_mix(&self, own_id: u32) -> Result<Self> {
        if !self.flags.has_mixing() {
            return Err(Error::invalid("self-mix requires the mixing block"));
        }
        let mut out = *self;
        if out.mixup.is_applied() {
            out.mixup.partner = own_id as i32;
        } else if out.cutmix.is_applied() {
            out.cutmix.partner = own_id as i32;
        }
        Ok(out)
    }

    /// Pair of descriptors sharing everything except the mixing coefficients.
    pub fn make_double_mix(&self, second: MixCoefficients) -> Result<(Self, Self)> {
        if !self.flags.has_mixing() {
            return Err(Error::invalid("double-mix requires the mixing block"));
        }
        let mut other = *self;
        match second {
            MixCoefficients::Lambda(l) if self.mixup.is_applied() => {
                if !(0.0..=1.0).contains(&l) {
                    return Err(Error::invalid(format!("lambda {l} outside [0, 1]")));
                }
                other.mixup.lambda = l;
            }
            MixCoefficients::Box(r) if self.cutmix.is_applied() => {
                if !r.within_unit(1e-6) {
                    return Err(Error::invalid(format!("cutmix box {r:?} outside the unit square")));
                }
                other.cutmix.rect = r;
            }
            _ => return Err(Error::invalid("second coefficients do not match the active mix slot")),
        }
        Ok((*self, other))
    }
}

/// Sampling distribution for descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationPolicy {
    pub variant: Variant,
    pub flip_prob: f64,
    pub ra_prob: f64,
    pub erase_prob: f64,
    /// Probability that one of MixUp/CutMix fires; the two are then chosen
    /// with equal probability.
    pub mix_prob: f64,
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
    pub crop_scale: (f64, f64),
    pub crop_ratio: (f64, f64),
    /// RA magnitudes are drawn from N(ra_magnitude, ra_magnitude_std²) and
    /// clipped to [0, 10].
    pub ra_magnitude: f64,
    pub ra_magnitude_std: f64,
    pub erase_scale: (f64, f64),
    pub erase_ratio: (f64, f64),
}

impl AugmentationPolicy {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            flip_prob: 0.5,
            ra_prob: 1.0,
            erase_prob: 0.25,
            mix_prob: 0.5,
            mixup_alpha: 0.2,
            cutmix_alpha: 1.0,
            crop_scale: (0.08, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            ra_magnitude: 9.0,
            ra_magnitude_std: 0.5,
            erase_scale: (0.02, 1.0 / 3.0),
            erase_ratio: (0.3, 3.3),
        }
    }

    /// Policy whose crop is always the full image and which never flips.
    pub fn degenerate(variant: Variant) -> Self {
        Self { flip_prob: 0.0, crop_scale: (1.0, 1.0), crop_ratio: (1.0, 1.0), ..Self::new(variant) }
    }

    pub fn flags(&self) -> VariantFlags {
        self.variant.flags()
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {p} outside [0, 1]")))
            }
        };
        prob("flip_prob", self.flip_prob)?;
        prob("ra_prob", self.ra_prob)?;
        prob("erase_prob", self.erase_prob)?;
        prob("mix_prob", self.mix_prob)?;
        for (name, a) in [("mixup_alpha", self.mixup_alpha), ("cutmix_alpha", self.cutmix_alpha)] {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid(format!("{name} = {a} must be positive")));
            }
        }
        let range = |name: &str, (lo, hi): (f64, f64), min: f64| {
            if lo > min && lo <= hi && hi.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = ({lo}, {hi}) is not a valid range")))
            }
        };
        range("crop_scale", self.crop_scale, 0.0)?;
        if self.crop_scale.1 > 1.0 {
            return Err(Error::invalid("crop_scale upper bound exceeds 1"));
        }
        range("crop_ratio", self.crop_ratio, 0.0)?;
        range("erase_scale", self.erase_scale, 0.0)?;
        range("erase_ratio", self.erase_ratio, 0.0)?;
        if !(0.0..=10.0).contains(&self.ra_magnitude) || self.ra_magnitude_std < 0.0 {
            return Err(Error::invalid("ra magnitude must lie in [0, 10] with std >= 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_roundtrip_and_reject() {
        for v in Variant::ALL {
            let f = v.flags();
            assert_eq!(VariantFlags::from_bits(f.bits()), Some(f));
            assert_eq!(Variant::from_flags(f), v);
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(VariantFlags::from_bits(0b110).is_none());
        assert!(VariantFlags::from_bits(0b1001).is_none());
    }

    #[test]
    fn self_mix_requires_mixing() {
        let d = AugmentationDescriptor::identity(Variant::Rrc.flags());
        assert!(d.make_self_mix(3).is_err());
        assert!(d.make_double_mix(MixCoefficients::Lambda(0.5)).is_err());
    }

    #[test]
    fn double_mix_only_changes_coefficients() {
        let mut d = AugmentationDescriptor::identity(Variant::RrcMixing.flags());
        d.crop = Rect::new(0.1, 0.2, 0.5, 0.6);
        d.flip = true;
        d.mixup = MixUp { partner: 4, lambda: 0.3 };
        let (a, b) = d.make_double_mix(MixCoefficients::Lambda(0.8)).unwrap();
        assert_eq!(a, d);
        assert_eq!(b.crop, d.crop);
        assert_eq!(b.flip, d.flip);
        assert_eq!(b.ra, d.ra);
        assert_eq!(b.mixup.partner, 4);
        assert_eq!(b.mixup.lambda, 0.8);
        assert!(d.make_double_mix(MixCoefficients::Box(Rect::FULL)).is_err());
    }

    #[test]
    fn violations_catch_bad_boxes() {
        let mut d = AugmentationDescriptor::identity(Variant::RrcMixingRaRe.flags());
        assert!(d.violations(Some(10)).is_empty());
        d.crop = Rect::new(0.5, 0.0, 0.7, 1.0);
        assert_eq!(d.violations(None).len(), 1);
        d.crop = Rect::FULL;
        d.mixup.partner = 1;
        d.cutmix.partner = 2;
        assert!(!d.violations(None).is_empty());
    }

    #[test]
    fn policy_defaults_validate() {
        for v in Variant::ALL {
            AugmentationPolicy::new(v).validate().unwrap();
            AugmentationPolicy::degenerate(v).validate().unwrap();
        }
        let mut p = AugmentationPolicy::new(Variant::Rrc);
        p.mixup_alpha = 0.0;
        assert!(p.validate().is_err());
    }
}
