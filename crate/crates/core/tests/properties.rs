use proptest::prelude::*;

use dr_core::augment::{
    augment_online, cutmix_paste, pixel_span, replay, sample_descriptor, AugmentationPolicy, Rect, Variant,
};
use dr_core::dataset::{Dims, Image, LabeledDataset};
use dr_core::loader::{index_window, CurriculumSchedule, WindowPreset};
use dr_core::nn::ece;
use dr_core::rng::SeededRng;
use dr_core::store::{record_size, total_size};
use dr_core::teacher::{densify, sparsify};

fn dataset(seed: u64, dims: Dims, n: usize) -> LabeledDataset {
    let mut rng = SeededRng::new(seed, 0);
    let images =
        (0..n).map(|_| Image::new(dims, (0..dims.len()).map(|_| rng.below(256) as u8).collect()).unwrap()).collect();
    let labels = (0..n).map(|i| (i % 3) as u16).collect();
    LabeledDataset::new(dims, 3, images, labels).unwrap()
}

fn variant() -> impl Strategy<Value = Variant> {
    prop::sample::select(Variant::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn replay_matches_online(seed in any::<u64>(), v in variant(), h in 4usize..14, w in 4usize..14, c in prop::sample::select(vec![1usize, 3])) {
        let ds = dataset(seed, Dims::new(h, w, c), 6);
        let policy = AugmentationPolicy::new(v);
        let id = (seed % 6) as usize;
        let mut a = SeededRng::new(seed, 1);
        let d = sample_descriptor(&policy, ds.dims(), id as u64, ds.len(), &mut a).unwrap();
        prop_assert!(d.violations(Some(6)).is_empty(), "{:?}", d.violations(Some(6)));
        let replayed = replay(&d, ds.image(id), id as u64, &ds, (8, 9)).unwrap();
        let mut b = SeededRng::new(seed, 1);
        let online = augment_online(&policy, &ds, id, (8, 9), &mut b).unwrap();
        prop_assert_eq!(replayed, online);
    }

    #[test]
    fn pixel_span_stays_in_bounds(start in 0f32..1.0, len in 0f32..1.0, size in 1usize..300) {
        let (a, b) = pixel_span(start, len, size);
        prop_assert!(a <= b && b <= size);
    }

    #[test]
    fn cutmix_changes_only_the_box(seed in any::<u64>(), x in 0f32..1.0, y in 0f32..1.0, fw in 0f32..1.0, fh in 0f32..1.0) {
        let ds = dataset(seed, Dims::new(9, 11, 1), 2);
        let rect = Rect::new(x * (1.0 - fw), y * (1.0 - fh), fw, fh);
        let mut out = ds.image(0).clone();
        cutmix_paste(&mut out, ds.image(1), rect).unwrap();
        let (x0, x1) = pixel_span(rect.x, rect.w, 11);
        let (y0, y1) = pixel_span(rect.y, rect.h, 9);
        for yy in 0..9 {
            for xx in 0..11 {
                let src = if (y0..y1).contains(&yy) && (x0..x1).contains(&xx) { ds.image(1) } else { ds.image(0) };
                prop_assert_eq!(out.get(yy, xx, 0), src.get(yy, xx, 0));
            }
        }
    }

    #[test]
    fn sparsify_keeps_the_largest(row in prop::collection::vec(0f32..1.0, 2..20), k in 1usize..20) {
        let k = k.min(row.len());
        let sp = sparsify(&row, k).unwrap();
        let kept: Vec<u32> = sp.entries().iter().map(|e| e.0).collect();
        let smallest_kept = sp.entries().iter().map(|e| e.1).fold(f32::INFINITY, f32::min);
        for (i, &p) in row.iter().enumerate() {
            if !kept.contains(&(i as u32)) {
                prop_assert!(p <= smallest_kept);
            }
        }
        if sp.entries().iter().any(|e| e.1 > 0.0) {
            let dense = densify(&sp, row.len()).unwrap();
            prop_assert!((dense.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn store_size_formula(images in 0u64..10_000, n in 1u64..500, k in 1usize..50, v in variant(), id in 0usize..64) {
        // Independent oracle: per-block byte counts of the record layout.
        let flags = v.flags();
        let rec = 8 * k + 4 * 4 + 1 + if flags.has_ra_re() { 2 * 2 * 4 + 4 * 4 } else { 0 }
            + if flags.has_mixing() { 2 * 4 + (1 + 4) * 4 } else { 0 };
        prop_assert_eq!(record_size(k, flags), rec);
        let total = total_size(images, n, k, flags, id).unwrap();
        prop_assert_eq!(total, 33 + id as u64 + images * n * rec as u64);
    }

    #[test]
    fn curriculum_window_is_monotone_between_endpoints(total in 1usize..200) {
        let s = CurriculumSchedule::preset(WindowPreset::Easy, WindowPreset::All, total);
        let mut prev = s.window_at(0);
        for t in 1..=total {
            let w = s.window_at(t);
            prop_assert!(w.1 >= prev.1 - 1e-12 && w.0 <= w.1);
            prev = w;
        }
        prop_assert!((prev.1 - 100.0).abs() < 1e-9);
    }

    #[test]
    fn index_window_is_never_empty(n in 1usize..500, a in 0f64..100.0, width in 0f64..100.0) {
        let b = (a + width).min(100.0);
        let (lo, hi) = index_window(n, (a, b));
        prop_assert!(lo < hi && hi <= n);
    }

    #[test]
    fn ece_is_bounded(points in prop::collection::vec((0.001f64..=1.0, any::<bool>()), 1..200), bins in 1usize..30) {
        let (conf, ok): (Vec<f64>, Vec<bool>) = points.into_iter().unzip();
        let e = ece(&conf, &ok, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }
}
