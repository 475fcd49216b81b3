use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::{apply_ra_op, crop_resize, flip_horizontal};
use super::{AugmentationDescriptor, Rect};
use crate::dataset::{Image, LabeledDataset};
use crate::{Error, Result};

/// A resolved mixing partner.
#[derive(Clone, Copy, Debug)]
pub enum Partner<'a> {
    /// Untransformed source image; replay applies the primary's crop, flip and
    /// RA ops to it before mixing.
    Raw(&'a Image),
    /// Already augmented image, used as-is (resized if needed).
    Prepared(&'a Image),
}

/// Resolves partner image ids referenced by mixing descriptors.
pub trait PartnerProvider: Sync {
    fn partner(&self, id: u32) -> Option<Partner<'_>>;
}

impl PartnerProvider for LabeledDataset {
    fn partner(&self, id: u32) -> Option<Partner<'_>> {
        ((id as usize) < self.len()).then(|| Partner::Raw(self.image(id as usize)))
    }
}

/// Provider that resolves nothing, for descriptors without mixing.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoPartners;

impl PartnerProvider for NoPartners {
    fn partner(&self, _id: u32) -> Option<Partner<'_>> {
        None
    }
}

/// Counts partner loads on behalf of another provider.
#[derive(Debug)]
pub struct CountingPartners<'a, P: ?Sized> {
    inner: &'a P,
    loads: AtomicU64,
}

impl<'a, P: PartnerProvider + ?Sized> CountingPartners<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        Self { inner, loads: AtomicU64::new(0) }
    }

    pub fn loads(&self) -> u64 {
        self.loads.load(Ordering::Relaxed)
    }
}

impl<P: PartnerProvider + ?Sized> PartnerProvider for CountingPartners<'_, P> {
    fn partner(&self, id: u32) -> Option<Partner<'_>> {
        self.loads.fetch_add(1, Ordering::Relaxed);
        self.inner.partner(id)
    }
}

/// Pixel range `[start, end)` covered by a fractional span on an axis of
/// `size` pixels.
pub fn pixel_span(start: f32, len: f32, size: usize) -> (usize, usize) {
    let size_f = size as f32;
    let a = (start * size_f).round().clamp(0.0, size_f) as usize;
    let b = ((start + len) * size_f).round().clamp(a as f32, size_f) as usize;
    (a, b)
}

/// `round(λ·primary + (1 − λ)·partner)` per sample.
pub fn mixup_blend(primary: &Image, partner: &Image, lambda: f32) -> Result<Image> {
    same_dims(primary, partner)?;
    let mu = 1.0 - lambda;
    let data = primary
        .data()
        .iter()
        .zip(partner.data())
        .map(|(&a, &b)| (lambda * a as f32 + mu * b as f32).round().clamp(0.0, 255.0) as u8)
        .collect();
    Image::new(primary.dims(), data)
}

/// Copies the `rect` region of `partner` into `primary`.
pub fn cutmix_paste(primary: &mut Image, partner: &Image, rect: Rect) -> Result<()> {
    same_dims(primary, partner)?;
    let (h, w, ch) = (primary.height(), primary.width(), primary.channels());
    let (x0, x1) = pixel_span(rect.x, rect.w, w);
    let (y0, y1) = pixel_span(rect.y, rect.h, h);
    let src = partner.data();
    let dst = primary.data_mut();
    for y in y0..y1 {
        let a = (y * w + x0) * ch;
        let b = (y * w + x1) * ch;
        dst[a..b].copy_from_slice(&src[a..b]);
    }
    Ok(())
}

/// Zero-fills the `rect` region.
pub fn erase(img: &mut Image, rect: Rect) {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let (x0, x1) = pixel_span(rect.x, rect.w, w);
    let (y0, y1) = pixel_span(rect.y, rect.h, h);
    let dst = img.data_mut();
    for y in y0..y1 {
        dst[(y * w + x0) * ch..(y * w + x1) * ch].fill(0);
    }
}

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch { expected: a.dims().to_string(), actual: b.dims().to_string() });
    }
    Ok(())
}

/// Crop → resize → flip → RA ops.
pub fn replay_geometric(desc: &AugmentationDescriptor, source: &Image, target_hw: (usize, usize)) -> Result<Image> {
    let mut img = crop_resize(source, desc.crop, target_hw.0, target_hw.1);
    if desc.flip {
        img = flip_horizontal(&img);
    }
    for slot in desc.ra.iter().filter(|s| !s.is_empty()) {
        img = apply_ra_op(slot.op, slot.magnitude, &img)?;
    }
    Ok(img)
}

/// Resolves `partner_id` and brings it to the primary's augmented state.
pub(crate) fn prepare_partner(
    desc: &AugmentationDescriptor,
    image_id: u64,
    partner_id: u32,
    partners: &dyn PartnerProvider,
    target_hw: (usize, usize),
) -> Result<Image> {
    match partners.partner(partner_id) {
        Some(Partner::Raw(img)) => replay_geometric(desc, img, target_hw),
        Some(Partner::Prepared(img)) if (img.height(), img.width()) == target_hw => Ok(img.clone()),
        Some(Partner::Prepared(img)) => Ok(crop_resize(img, Rect::FULL, target_hw.0, target_hw.1)),
        None => Err(Error::UnresolvedPartner { image: image_id, partner: partner_id as i64 }),
    }
}

/// Replays `desc` on `source` at `target_hw`. Pure: equal inputs give
/// byte-identical output.
pub fn replay(
    desc: &AugmentationDescriptor,
    source: &Image,
    image_id: u64,
    partners: &dyn PartnerProvider,
    target_hw: (usize, usize),
) -> Result<Image> {
    let mut out = replay_geometric(desc, source, target_hw)?;
    if let Some(pid) = desc.mix_partner() {
        let partner = prepare_partner(desc, image_id, pid, partners, target_hw)?;
        if desc.mixup.is_applied() {
            out = mixup_blend(&out, &partner, desc.mixup.lambda)?;
        } else {
            cutmix_paste(&mut out, &partner, desc.cutmix.rect)?;
        }
    }
    if desc.erase_applied() {
        erase(&mut out, desc.erase);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{MixUp, Variant};
    use crate::dataset::Dims;

    fn constant_pair(a: u8, b: u8) -> LabeledDataset {
        let dims = Dims::new(4, 4, 1);
        LabeledDataset::new(dims, 2, vec![Image::filled(dims, a), Image::filled(dims, b)], vec![0, 1]).unwrap()
    }

    #[test]
    fn mixup_of_constants() {
        let ds = constant_pair(100, 200);
        let mut d = AugmentationDescriptor::identity(Variant::RrcMixing.flags());
        d.mixup = MixUp { partner: 1, lambda: 0.3 };
        let out = replay(&d, ds.image(0), 0, &ds, (4, 4)).unwrap();
        assert!(out.data().iter().all(|&v| v == 170));
    }

    #[test]
    fn identity_replay() {
        let ds = constant_pair(5, 6);
        let d = AugmentationDescriptor::identity(Variant::Rrc.flags());
        assert_eq!(replay(&d, ds.image(1), 1, &NoPartners, (4, 4)).unwrap(), *ds.image(1));
    }

    #[test]
    fn unresolved_partner_is_an_error() {
        let ds = constant_pair(5, 6);
        let mut d = AugmentationDescriptor::identity(Variant::RrcMixing.flags());
        d.mixup = MixUp { partner: 7, lambda: 0.5 };
        let err = replay(&d, ds.image(0), 0, &ds, (4, 4)).unwrap_err();
        assert!(matches!(err, Error::UnresolvedPartner { image: 0, partner: 7 }));
    }

    #[test]
    fn erase_zeroes_box() {
        let mut img = Image::filled(Dims::new(4, 4, 3), 9);
        erase(&mut img, Rect::new(0.25, 0.5, 0.5, 0.5));
        for y in 0..4 {
            for x in 0..4 {
                let inside = (1..3).contains(&x) && (2..4).contains(&y);
                assert_eq!(img.get(y, x, 2) == 0, inside);
            }
        }
    }

    #[test]
    fn counting_partners_counts() {
        let ds = constant_pair(1, 2);
        let counting = CountingPartners::new(&ds);
        assert!(counting.partner(1).is_some());
        assert!(counting.partner(2).is_none());
        assert_eq!(counting.loads(), 2);
    }
}
