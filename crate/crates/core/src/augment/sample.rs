use super::ops::{apply_ra_op, crop_resize, flip_horizontal, RA_OP_COUNT};
use super::replay::{cutmix_paste, erase, mixup_blend};
use super::{AugmentationDescriptor, AugmentationPolicy, CutMix, MixUp, RaSlot, Rect};
use crate::dataset::{Dims, Image, LabeledDataset};
use crate::rng::SeededRng;
use crate::{Error, Result};

const CROP_ATTEMPTS: usize = 10;
const ERASE_ATTEMPTS: usize = 10;

fn randint_inclusive(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Inception-style random resized crop over `dims`.
fn sample_crop(policy: &AugmentationPolicy, dims: Dims, rng: &mut SeededRng) -> Rect {
    let (hh, ww) = (dims.height, dims.width);
    let area = (hh * ww) as f64;
    let (lr0, lr1) = (policy.crop_ratio.0.ln(), policy.crop_ratio.1.ln());
    let frac = |x: usize, y: usize, w: usize, h: usize| {
        Rect::new(
            (x as f64 / ww as f64) as f32,
            (y as f64 / hh as f64) as f32,
            (w as f64 / ww as f64) as f32,
            (h as f64 / hh as f64) as f32,
        )
    };
    for _ in 0..CROP_ATTEMPTS {
        let target = area * rng.uniform_range(policy.crop_scale.0, policy.crop_scale.1);
        let ratio = rng.uniform_range(lr0, lr1).exp();
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= ww && h <= hh {
            let y = randint_inclusive(rng, 0, hh - h);
            let x = randint_inclusive(rng, 0, ww - w);
            return frac(x, y, w, h);
        }
    }
    // Central crop fallback.
    let in_ratio = ww as f64 / hh as f64;
    let (w, h) = if in_ratio < policy.crop_ratio.0 {
        (ww, ((ww as f64 / policy.crop_ratio.0).round() as usize).clamp(1, hh))
    } else if in_ratio > policy.crop_ratio.1 {
        (((hh as f64 * policy.crop_ratio.1).round() as usize).clamp(1, ww), hh)
    } else {
        (ww, hh)
    };
    frac((ww - w) / 2, (hh - h) / 2, w, h)
}

fn sample_ra(policy: &AugmentationPolicy, rng: &mut SeededRng) -> [RaSlot; 2] {
    if !rng.bernoulli(policy.ra_prob) {
        return [RaSlot::EMPTY; 2];
    }
    let mut slot = || {
        let op = rng.below(RA_OP_COUNT) as i32;
        let magnitude = if policy.ra_magnitude_std > 0.0 {
            rng.normal(policy.ra_magnitude, policy.ra_magnitude_std)
        } else {
            policy.ra_magnitude
        };
        RaSlot { op, magnitude: magnitude.clamp(0.0, 10.0) as f32 }
    };
    [slot(), slot()]
}

fn sample_mix(policy: &AugmentationPolicy, image_id: u64, dataset_size: usize, rng: &mut SeededRng) -> (MixUp, CutMix) {
    if !rng.bernoulli(policy.mix_prob) {
        return (MixUp::NONE, CutMix::NONE);
    }
    let use_cutmix = rng.bernoulli(0.5);
    let own = (image_id % dataset_size as u64) as usize;
    let partner = ((own + 1 + rng.below(dataset_size - 1)) % dataset_size) as i32;
    if !use_cutmix {
        let lambda = rng.beta(policy.mixup_alpha, policy.mixup_alpha) as f32;
        (MixUp { partner, lambda }, CutMix::NONE)
    } else {
        let lambda = rng.beta(policy.cutmix_alpha, policy.cutmix_alpha);
        let cut = (1.0 - lambda).sqrt();
        let cx = rng.uniform();
        let cy = rng.uniform();
        let x0 = (cx - cut / 2.0).clamp(0.0, 1.0);
        let x1 = (cx + cut / 2.0).clamp(0.0, 1.0);
        let y0 = (cy - cut / 2.0).clamp(0.0, 1.0);
        let y1 = (cy + cut / 2.0).clamp(0.0, 1.0);
        let rect = Rect::new(x0 as f32, y0 as f32, (x1 - x0) as f32, (y1 - y0) as f32);
        (MixUp::NONE, CutMix { partner, rect })
    }
}

fn sample_erase(policy: &AugmentationPolicy, dims: Dims, rng: &mut SeededRng) -> Rect {
    if !rng.bernoulli(policy.erase_prob) {
        return Rect::EMPTY;
    }
    let (hh, ww) = (dims.height, dims.width);
    let area = (hh * ww) as f64;
    let (lr0, lr1) = (policy.erase_ratio.0.ln(), policy.erase_ratio.1.ln());
    for _ in 0..ERASE_ATTEMPTS {
        let target = area * rng.uniform_range(policy.erase_scale.0, policy.erase_scale.1);
        let ratio = rng.uniform_range(lr0, lr1).exp();
        let h = (target * ratio).sqrt().round() as usize;
        let w = (target / ratio).sqrt().round() as usize;
        if w > 0 && h > 0 && w < ww && h < hh {
            let y = randint_inclusive(rng, 0, hh - h);
            let x = randint_inclusive(rng, 0, ww - w);
            return Rect::new(
                (x as f64 / ww as f64) as f32,
                (y as f64 / hh as f64) as f32,
                (w as f64 / ww as f64) as f32,
                (h as f64 / hh as f64) as f32,
            );
        }
    }
    Rect::EMPTY
}

fn check_mixing(policy: &AugmentationPolicy, dataset_size: usize) -> Result<()> {
    if policy.flags().has_mixing() && dataset_size < 2 {
        return Err(Error::invalid(format!("mixing needs at least 2 images, dataset has {dataset_size}")));
    }
    Ok(())
}

/// Draws a descriptor for image `image_id` of a dataset with `dataset_size`
/// images of `source_dims`. Blocks outside the policy's variant stay empty.
///
/// Draw order is crop, flip, RA, mix, erase; [`augment_online`] consumes the
/// stream in the same order.
pub fn sample_descriptor(
    policy: &AugmentationPolicy,
    source_dims: Dims,
    image_id: u64,
    dataset_size: usize,
    rng: &mut SeededRng,
) -> Result<AugmentationDescriptor> {
    check_mixing(policy, dataset_size)?;
    let flags = policy.flags();
    let mut d = AugmentationDescriptor::identity(flags);
    d.crop = sample_crop(policy, source_dims, rng);
    d.flip = rng.bernoulli(policy.flip_prob);
    if flags.has_ra_re() {
        d.ra = sample_ra(policy, rng);
    }
    if flags.has_mixing() {
        (d.mixup, d.cutmix) = sample_mix(policy, image_id, dataset_size, rng);
    }
    if flags.has_ra_re() {
        d.erase = sample_erase(policy, source_dims, rng);
    }
    Ok(d)
}

fn geometric_online(img: &Image, crop: Rect, flip: bool, ra: &[RaSlot; 2], target_hw: (usize, usize)) -> Result<Image> {
    let mut out = crop_resize(img, crop, target_hw.0, target_hw.1);
    if flip {
        out = flip_horizontal(&out);
    }
    for s in ra.iter().filter(|s| !s.is_empty()) {
        out = apply_ra_op(s.op, s.magnitude, &out)?;
    }
    Ok(out)
}

/// Augments image `image_id` of `dataset` directly from `rng`, transforming
/// as each block is drawn and never materialising a descriptor.
pub fn augment_online(
    policy: &AugmentationPolicy,
    dataset: &LabeledDataset,
    image_id: usize,
    target_hw: (usize, usize),
    rng: &mut SeededRng,
) -> Result<Image> {
    check_mixing(policy, dataset.len())?;
    let flags = policy.flags();
    let source = dataset.image(image_id);
    let crop = sample_crop(policy, source.dims(), rng);
    let mut img = crop_resize(source, crop, target_hw.0, target_hw.1);
    let flip = rng.bernoulli(policy.flip_prob);
    if flip {
        img = flip_horizontal(&img);
    }
    let mut ra = [RaSlot::EMPTY; 2];
    if flags.has_ra_re() {
        ra = sample_ra(policy, rng);
        for s in ra.iter().filter(|s| !s.is_empty()) {
            img = apply_ra_op(s.op, s.magnitude, &img)?;
        }
    }
    if flags.has_mixing() {
        let (mixup, cutmix) = sample_mix(policy, image_id as u64, dataset.len(), rng);
        if mixup.is_applied() {
            let partner = geometric_online(dataset.image(mixup.partner as usize), crop, flip, &ra, target_hw)?;
            img = mixup_blend(&img, &partner, mixup.lambda)?;
        } else if cutmix.is_applied() {
            let partner = geometric_online(dataset.image(cutmix.partner as usize), crop, flip, &ra, target_hw)?;
            cutmix_paste(&mut img, &partner, cutmix.rect)?;
        }
    }
    if flags.has_ra_re() {
        let rect = sample_erase(policy, source.dims(), rng);
        if rect.w > 0.0 {
            erase(&mut img, rect);
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{replay, Variant};

    fn freq(policy: &AugmentationPolicy, n: usize, f: impl Fn(&AugmentationDescriptor) -> bool) -> f64 {
        let dims = Dims::new(16, 16, 1);
        let hits = (0..n)
            .filter(|&i| {
                let mut rng = SeededRng::new(77, i as u64);
                f(&sample_descriptor(policy, dims, i as u64, 100, &mut rng).unwrap())
            })
            .count();
        hits as f64 / n as f64
    }

    #[test]
    fn rrc_variant_leaves_optional_blocks_empty() {
        let p = AugmentationPolicy::new(Variant::Rrc);
        for i in 0..200 {
            let d = sample_descriptor(&p, Dims::new(16, 16, 3), i, 10, &mut SeededRng::new(i, 1)).unwrap();
            assert_eq!(d.ra, [RaSlot::EMPTY; 2]);
            assert_eq!(d.erase, Rect::EMPTY);
            assert_eq!(d.mixup, MixUp::NONE);
            assert_eq!(d.cutmix, CutMix::NONE);
            assert!(d.violations(Some(10)).is_empty());
        }
    }

    #[test]
    fn flip_frequency() {
        let f = freq(&AugmentationPolicy::new(Variant::Rrc), 10_000, |d| d.flip);
        assert!((0.48..=0.52).contains(&f), "{f}");
    }

    #[test]
    fn full_variant_frequencies() {
        let p = AugmentationPolicy::new(Variant::RrcMixingRaRe);
        let erase = freq(&p, 10_000, |d| d.erase_applied());
        let mix = freq(&p, 10_000, |d| d.mix_applied());
        assert!((0.23..=0.27).contains(&erase), "{erase}");
        assert!((0.47..=0.53).contains(&mix), "{mix}");
    }

    #[test]
    fn mixing_needs_two_images() {
        let p = AugmentationPolicy::new(Variant::RrcMixing);
        let err = sample_descriptor(&p, Dims::new(4, 4, 1), 0, 1, &mut SeededRng::new(0, 0));
        assert!(err.is_err());
    }

    #[test]
    fn partner_is_never_self() {
        let p = AugmentationPolicy { mix_prob: 1.0, ..AugmentationPolicy::new(Variant::RrcMixing) };
        for i in 0..500u64 {
            let d = sample_descriptor(&p, Dims::new(8, 8, 1), i % 3, 3, &mut SeededRng::new(5, i)).unwrap();
            let partner = d.mix_partner().unwrap() as u64;
            assert_ne!(partner, i % 3);
            assert!(partner < 3);
        }
    }

    #[test]
    fn degenerate_policy_gives_identity_crop() {
        let p = AugmentationPolicy::degenerate(Variant::Rrc);
        let d = sample_descriptor(&p, Dims::new(16, 16, 1), 0, 1, &mut SeededRng::new(3, 3)).unwrap();
        assert_eq!(d, AugmentationDescriptor::identity(Variant::Rrc.flags()));
    }

    #[test]
    fn online_matches_replay() {
        let dims = Dims::new(12, 12, 3);
        let mut rng = SeededRng::new(1, 1);
        let images = (0..4)
            .map(|_| Image::new(dims, (0..dims.len()).map(|_| rng.below(256) as u8).collect()).unwrap())
            .collect();
        let ds = LabeledDataset::new(dims, 2, images, vec![0, 1, 0, 1]).unwrap();
        for v in Variant::ALL {
            let p = AugmentationPolicy::new(v);
            for i in 0..50u64 {
                let id = (i % 4) as usize;
                let d = sample_descriptor(&p, dims, id as u64, 4, &mut SeededRng::new(9, i)).unwrap();
                let replayed = replay(&d, ds.image(id), id as u64, &ds, (10, 10)).unwrap();
                let online = augment_online(&p, &ds, id, (10, 10), &mut SeededRng::new(9, i)).unwrap();
                assert_eq!(replayed, online, "variant {v}, case {i}");
            }
        }
    }
}
