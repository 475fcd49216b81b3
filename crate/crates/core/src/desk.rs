//! Synthetic desk-scale classification data with a known generator.
//!
//! Each class owns a smooth template made of a few Gaussian blobs. A sample is
//! a shifted, contrast-jittered blend of its class template with a random
//! distractor template, plus pixel noise. The distractor weight makes the true
//! posterior genuinely soft, which is what gives a teacher's probabilities
//! more information than the hard label.

use crate::dataset::{Dims, Image, LabeledDataset};
use crate::rng::{tags, SeededRng};
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct DeskConfig {
    pub num_classes: usize,
    pub dims: Dims,
    pub blobs_per_class: usize,
    /// Maximum absolute shift in pixels along each axis.
    pub max_shift: i32,
    /// Weight of the class template, drawn uniformly from this range; the
    /// distractor receives the complement.
    pub class_weight: (f64, f64),
    pub contrast: (f64, f64),
    pub amplitude: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dims: Dims::new(16, 16, 1),
            blobs_per_class: 4,
            max_shift: 2,
            class_weight: (0.55, 1.0),
            contrast: (0.7, 1.3),
            amplitude: 70.0,
            noise_std: 24.0,
            seed: 2023,
        }
    }
}

/// Class-conditional image generator.
#[derive(Clone, Debug)]
pub struct DeskGenerator {
    config: DeskConfig,
    templates: Vec<Vec<f32>>,
}

impl DeskGenerator {
    pub fn new(config: DeskConfig) -> Result<Self> {
        config.dims.validate()?;
        let mut rng = SeededRng::derive(config.seed, &[tags::DESK, u64::MAX]);
        let Dims { height, width, channels } = config.dims;
        let templates = (0..config.num_classes)
            .map(|_| {
                let mut t = vec![0f32; config.dims.len()];
                for _ in 0..config.blobs_per_class {
                    let cy = rng.uniform_range(2.0, height as f64 - 2.0);
                    let cx = rng.uniform_range(2.0, width as f64 - 2.0);
                    let sigma = rng.uniform_range(1.2, 3.0);
                    let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                    let amps: Vec<f64> = (0..channels).map(|_| sign * rng.uniform_range(0.5, 1.0)).collect();
                    for y in 0..height {
                        for x in 0..width {
                            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                            let g = (-d2 / (2.0 * sigma * sigma)).exp();
                            for (c, a) in amps.iter().enumerate() {
                                t[(y * width + x) * channels + c] += (a * g) as f32;
                            }
                        }
                    }
                }
                let peak = t.iter().fold(0f32, |m, v| m.max(v.abs())).max(1e-6);
                t.iter_mut().for_each(|v| *v /= peak);
                t
            })
            .collect();
        Ok(Self { config, templates })
    }

    pub fn config(&self) -> &DeskConfig {
        &self.config
    }

    pub fn dims(&self) -> Dims {
        self.config.dims
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Template value at `(y, x, c)` after shifting by `(dy, dx)`; zero outside.
    #[inline]
    fn shifted(&self, class: usize, y: i32, x: i32, c: usize, dy: i32, dx: i32) -> f32 {
        let Dims { height, width, channels } = self.config.dims;
        let (sy, sx) = (y - dy, x - dx);
        if sy < 0 || sx < 0 || sy >= height as i32 || sx >= width as i32 {
            return 0.0;
        }
        self.templates[class][(sy as usize * width + sx as usize) * channels + c]
    }

    /// Noise-free rendering of `class` at shift `(dy, dx)` with unit contrast.
    pub fn mean_image(&self, class: usize, dy: i32, dx: i32) -> Image {
        let dims = self.config.dims;
        let mut data = Vec::with_capacity(dims.len());
        for y in 0..dims.height as i32 {
            for x in 0..dims.width as i32 {
                for c in 0..dims.channels {
                    let v = 128.0 + self.config.amplitude * self.shifted(class, y, x, c, dy, dx) as f64;
                    data.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Image::new(dims, data).expect("dims validated")
    }

    /// Draws sample number `index`; the same index always yields the same
    /// (image, label).
    pub fn sample(&self, index: u64) -> (Image, u16) {
        let cfg = &self.config;
        let mut rng = SeededRng::derive(cfg.seed, &[tags::DESK, index]);
        let label = rng.below(cfg.num_classes);
        let distractor =
            if cfg.num_classes > 1 { (label + 1 + rng.below(cfg.num_classes - 1)) % cfg.num_classes } else { label };
        let weight = rng.uniform_range(cfg.class_weight.0, cfg.class_weight.1);
        let contrast = rng.uniform_range(cfg.contrast.0, cfg.contrast.1);
        let span = 2 * cfg.max_shift as usize + 1;
        let dy = rng.below(span) as i32 - cfg.max_shift;
        let dx = rng.below(span) as i32 - cfg.max_shift;
        let dims = cfg.dims;
        let mut data = Vec::with_capacity(dims.len());
        for y in 0..dims.height as i32 {
            for x in 0..dims.width as i32 {
                for c in 0..dims.channels {
                    let t = weight * self.shifted(label, y, x, c, dy, dx) as f64
                        + (1.0 - weight) * self.shifted(distractor, y, x, c, dy, dx) as f64;
                    let v = 128.0 + cfg.amplitude * contrast * t + rng.normal(0.0, cfg.noise_std);
                    data.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        (Image::new(dims, data).expect("dims validated"), label as u16)
    }

    /// Samples `offset..offset + count` as a dataset.
    pub fn dataset(&self, offset: u64, count: usize) -> Result<LabeledDataset> {
        let (images, labels) = (0..count as u64).map(|i| self.sample(offset + i)).unzip();
        LabeledDataset::new(self.config.dims, self.config.num_classes, images, labels)
    }

    /// Class posterior under the shift-marginalised Gaussian model that
    /// ignores distractors and contrast jitter. Images are compared at the
    /// generator's resolution.
    pub fn posterior(&self, image: &Image) -> Vec<f64> {
        let cfg = &self.config;
        let dims = cfg.dims;
        let var2 = 2.0 * cfg.noise_std * cfg.noise_std;
        let mut log_terms = Vec::with_capacity(cfg.num_classes);
        for class in 0..cfg.num_classes {
            let mut per_shift = Vec::new();
            for dy in -cfg.max_shift..=cfg.max_shift {
                for dx in -cfg.max_shift..=cfg.max_shift {
                    let mut sq = 0.0;
                    for y in 0..dims.height {
                        for x in 0..dims.width {
                            for c in 0..dims.channels {
                                let mu =
                                    128.0 + cfg.amplitude * self.shifted(class, y as i32, x as i32, c, dy, dx) as f64;
                                let d = image.get(y, x, c) as f64 - mu;
                                sq += d * d;
                            }
                        }
                    }
                    per_shift.push(-sq / var2);
                }
            }
            log_terms.push(log_sum_exp(&per_shift));
        }
        let z = log_sum_exp(&log_terms);
        log_terms.iter().map(|l| (l - z).exp()).collect()
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
