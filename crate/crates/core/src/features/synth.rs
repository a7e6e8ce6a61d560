//! Seeded generator of grouped image corpora with coupled SIFT/color
//! descriptors.
//!
//! Every group owns a set of latent "parts"; each part is a SIFT center, a
//! Color Names center and a keypoint. An image of the group emits one feature
//! per part, perturbed by per-feature noise and by a per-image illumination
//! change that rescales the color mass before re-normalization. When
//! `sift_pool` is set, SIFT centers are drawn from a pool shared by all groups,
//! so unrelated groups collide in SIFT space while their colors stay apart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{
    root_sift_transform, CnDescriptor, FeatureTuple, ImageRecord, Keypoint, CN_DIM, SIFT_DIM,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub groups: usize,
    pub images_per_group: usize,
    pub features_per_image: usize,
    /// Per-feature noise, relative to the mean bin value of the SIFT center
    /// and to the uniform color level for Color Names.
    pub noise: f64,
    /// Standard deviation of the per-image log color gain.
    pub illum: f64,
    /// Size of the SIFT center pool shared across groups. `None` gives every
    /// part its own center.
    pub sift_pool: Option<usize>,
    /// Dirichlet concentration of the color centers; small values give
    /// patches dominated by one or two colors.
    pub color_concentration: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            groups: 100,
            images_per_group: 4,
            features_per_image: 50,
            noise: 0.05,
            illum: 0.1,
            sift_pool: None,
            color_concentration: 0.3,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::Config("groups must be at least 1".into()));
        }
        if self.images_per_group < 2 {
            return Err(Error::Config("images_per_group must be at least 2".into()));
        }
        if self.features_per_image == 0 {
            return Err(Error::Config(
                "features_per_image must be at least 1".into(),
            ));
        }
        if self.sift_pool == Some(0) {
            return Err(Error::Config("sift_pool must be at least 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be finite and >= 0, got {}",
                self.noise
            )));
        }
        if !(self.illum >= 0.0 && self.illum.is_finite()) {
            return Err(Error::Config(format!(
                "illum must be finite and >= 0, got {}",
                self.illum
            )));
        }
        if !(self.color_concentration > 0.0 && self.color_concentration.is_finite()) {
            return Err(Error::Config("color_concentration must be positive".into()));
        }
        let total = self.groups as u64 * self.images_per_group as u64;
        if total > u32::MAX as u64 {
            return Err(Error::Config("too many images for 32-bit ids".into()));
        }
        Ok(())
    }
}

struct Part {
    sift: Vec<f64>,
    sift_level: f64,
    color: [f64; CN_DIM],
    keypoint: Keypoint,
}

fn sift_center(rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Cubing a uniform draw gives the peaky, mostly-small bins of real SIFT.
    (0..SIFT_DIM)
        .map(|_| rng.random::<f64>().powi(3) * 100.0)
        .collect()
}

fn color_center(rng: &mut ChaCha8Rng, gamma: &Gamma<f64>) -> [f64; CN_DIM] {
    loop {
        let mut c = [0.0; CN_DIM];
        for v in c.iter_mut() {
            *v = gamma.sample(rng);
        }
        let s: f64 = c.iter().sum();
        if s > 0.0 && s.is_finite() {
            c.iter_mut().for_each(|v| *v /= s);
            return c;
        }
    }
}

fn to_simplex(values: &[f64; CN_DIM]) -> Option<CnDescriptor> {
    let s: f64 = values.iter().sum();
    if s.is_nan() || s <= 0.0 {
        return None;
    }
    let mut out = [0.0f32; CN_DIM];
    for (o, v) in out.iter_mut().zip(values) {
        *o = (v / s) as f32;
    }
    CnDescriptor::new(&out).ok()
}

/// Generates `groups * images_per_group` images; `image_id` is the running
/// index and `group_id` the generating group. Pure in `(config, seed)`.
pub fn generate_synthetic_corpus(config: &SynthConfig, seed: u64) -> Result<Vec<ImageRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(config.color_concentration, 1.0)
        .map_err(|e| Error::Config(format!("color_concentration: {e}")))?;

    let pool: Vec<Vec<f64>> = match config.sift_pool {
        Some(p) => (0..p).map(|_| sift_center(&mut rng)).collect(),
        None => Vec::new(),
    };

    let mut images = Vec::with_capacity(config.groups * config.images_per_group);
    for group in 0..config.groups {
        let parts: Vec<Part> = (0..config.features_per_image)
            .map(|_| {
                let sift = if pool.is_empty() {
                    sift_center(&mut rng)
                } else {
                    pool[rng.random_range(0..pool.len())].clone()
                };
                let sift_level = sift.iter().sum::<f64>() / SIFT_DIM as f64;
                let color = color_center(&mut rng, &gamma);
                let keypoint = Keypoint {
                    x: rng.random_range(0.0..640.0),
                    y: rng.random_range(0.0..480.0),
                    scale: rng.random_range(1.5..12.0),
                };
                Part {
                    sift,
                    sift_level,
                    color,
                    keypoint,
                }
            })
            .collect();

        for k in 0..config.images_per_group {
            let image_id = (group * config.images_per_group + k) as u32;
            let mut gain = [1.0f64; CN_DIM];
            for g in gain.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *g = (config.illum * z).exp();
            }
            let mut features = Vec::with_capacity(parts.len());
            for part in &parts {
                let raw: Vec<f32> = part
                    .sift
                    .iter()
                    .map(|&c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (c + config.noise * part.sift_level * z).max(0.0) as f32
                    })
                    .collect();
                let sift = root_sift_transform(&raw)?;

                let mut color = [0.0f64; CN_DIM];
                for ((out, &c), &g) in color.iter_mut().zip(&part.color).zip(&gain) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *out = (c * g + config.noise * z / CN_DIM as f64).max(0.0);
                }
                let color = to_simplex(&color)
                    .or_else(|| to_simplex(&part.color))
                    .ok_or_else(|| Error::Training("degenerate color center".into()))?;
                features.push(FeatureTuple::new(sift, color, part.keypoint)?);
            }
            images.push(ImageRecord {
                image_id,
                group_id: group as u32,
                features,
            });
        }
    }
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn zero_noise_gives_identical_tuples() {
        let cfg = SynthConfig {
            groups: 1,
            images_per_group: 2,
            features_per_image: 1,
            noise: 0.0,
            illum: 0.0,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic_corpus(&cfg, 7).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[0].features, corpus[1].features);
        assert_eq!(corpus[0].features.len(), 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            groups: 5,
            features_per_image: 8,
            ..SynthConfig::default()
        };
        let a = generate_synthetic_corpus(&cfg, 42).unwrap();
        let b = generate_synthetic_corpus(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn counts_and_groups() {
        let cfg = SynthConfig {
            groups: 100,
            images_per_group: 4,
            features_per_image: 3,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic_corpus(&cfg, 1).unwrap();
        assert_eq!(corpus.len(), 400);
        let groups: HashSet<u32> = corpus.iter().map(|r| r.group_id).collect();
        assert_eq!(groups.len(), 100);
        let ids: HashSet<u32> = corpus.iter().map(|r| r.image_id).collect();
        assert_eq!(ids.len(), 400);
    }

    #[test]
    fn rejects_zero_sized_fields() {
        for cfg in [
            SynthConfig {
                groups: 0,
                ..SynthConfig::default()
            },
            SynthConfig {
                images_per_group: 1,
                ..SynthConfig::default()
            },
            SynthConfig {
                features_per_image: 0,
                ..SynthConfig::default()
            },
            SynthConfig {
                sift_pool: Some(0),
                ..SynthConfig::default()
            },
        ] {
            assert!(matches!(
                generate_synthetic_corpus(&cfg, 0),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn shared_pool_makes_groups_collide() {
        let cfg = SynthConfig {
            groups: 10,
            features_per_image: 20,
            sift_pool: Some(5),
            noise: 0.0,
            illum: 0.0,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic_corpus(&cfg, 3).unwrap();
        let distinct: HashSet<Vec<u32>> = corpus
            .iter()
            .flat_map(|r| r.features.iter())
            .map(|f| f.sift.as_slice().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert!(distinct.len() <= 5);
    }
}
