//! Local descriptors: rootSIFT, patch-mean Color Names, and the image records
//! that carry them.

mod io;
mod synth;

pub use io::{read_corpus, read_corpus_text, write_corpus, write_corpus_text};
pub use synth::{generate_synthetic_corpus, SynthConfig};

use crate::error::{Error, Result};

/// Dimension of a SIFT descriptor.
pub const SIFT_DIM: usize = 128;
/// Dimension of a Color Names descriptor.
pub const CN_DIM: usize = 11;

/// Tolerance on the sum of a Color Names vector.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// A 128-bin gradient histogram, stored after the rootSIFT transform.
#[derive(Debug, Clone, PartialEq)]
pub struct SiftDescriptor(Vec<f32>);

impl SiftDescriptor {
    /// Wraps values that are already rootSIFT-transformed.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        check_sift_values(&values)?;
        Ok(SiftDescriptor(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

fn check_sift_values(values: &[f32]) -> Result<()> {
    if values.len() != SIFT_DIM {
        return Err(Error::DimensionMismatch {
            expected: SIFT_DIM,
            got: values.len(),
        });
    }
    if let Some((i, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(Error::InvalidDescriptor(format!("SIFT bin {i} is {v}")));
    }
    Ok(())
}

/// An 11-D probability vector over the basic color terms.
#[derive(Debug, Clone, PartialEq)]
pub struct CnDescriptor([f32; CN_DIM]);

impl CnDescriptor {
    pub fn new(values: &[f32]) -> Result<Self> {
        if values.len() != CN_DIM {
            return Err(Error::DimensionMismatch {
                expected: CN_DIM,
                got: values.len(),
            });
        }
        check_simplex(values)?;
        let mut out = [0.0; CN_DIM];
        out.copy_from_slice(values);
        Ok(CnDescriptor(out))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn values(&self) -> &[f32; CN_DIM] {
        &self.0
    }
}

pub(crate) fn check_simplex(values: &[f32]) -> Result<()> {
    if let Some((i, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
    {
        return Err(Error::NotSimplex(format!("entry {i} is {v}")));
    }
    let sum: f64 = values.iter().map(|&v| v as f64).sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::NotSimplex(format!("entries sum to {sum}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub scale: f32,
}

/// One keypoint with its coupled SIFT and color descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTuple {
    pub sift: SiftDescriptor,
    pub color: CnDescriptor,
    pub keypoint: Keypoint,
}

impl FeatureTuple {
    pub fn new(sift: SiftDescriptor, color: CnDescriptor, keypoint: Keypoint) -> Result<Self> {
        if keypoint.scale.is_nan() || keypoint.scale <= 0.0 {
            return Err(Error::InvalidDescriptor(format!(
                "keypoint scale must be positive, got {}",
                keypoint.scale
            )));
        }
        Ok(FeatureTuple {
            sift,
            color,
            keypoint,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: u32,
    /// Ground-truth relevance group.
    pub group_id: u32,
    pub features: Vec<FeatureTuple>,
}

/// l1-normalizes then takes the element-wise square root. The zero vector maps
/// to itself.
pub fn root_sift_transform(raw: &[f32]) -> Result<SiftDescriptor> {
    check_sift_values(raw)?;
    let l1: f64 = raw.iter().map(|&v| v as f64).sum();
    if l1 == 0.0 {
        return Ok(SiftDescriptor(vec![0.0; SIFT_DIM]));
    }
    let values = raw
        .iter()
        .map(|&v| ((v as f64) / l1).sqrt() as f32)
        .collect();
    Ok(SiftDescriptor(values))
}

/// Averages per-pixel Color Names vectors over a keypoint's patch.
pub fn mean_cn_descriptor(pixels: &[[f32; CN_DIM]]) -> Result<CnDescriptor> {
    if pixels.is_empty() {
        return Err(Error::EmptyPatch);
    }
    let mut acc = [0.0f64; CN_DIM];
    for px in pixels {
        check_simplex(px)?;
        for (a, &v) in acc.iter_mut().zip(px) {
            *a += v as f64;
        }
    }
    let n = pixels.len() as f64;
    let mut out = [0.0f32; CN_DIM];
    for (o, a) in out.iter_mut().zip(acc) {
        *o = (a / n) as f32;
    }
    CnDescriptor::new(&out)
}

/// Patch side length used by extraction tooling when pooling Color Names,
/// as a multiple of keypoint scale. Not used by the engine itself.
pub const DEFAULT_CN_PATCH_SCALE: f32 = 4.0;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_hot(len: usize, at: usize) -> Vec<f32> {
        let mut v = vec![0.0; len];
        v[at] = 1.0;
        v
    }

    #[test]
    fn root_sift_zero_maps_to_zero() {
        let out = root_sift_transform(&[0.0; SIFT_DIM]).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn root_sift_one_hot_is_fixed() {
        let out = root_sift_transform(&one_hot(SIFT_DIM, 5)).unwrap();
        assert_eq!(out.as_slice(), one_hot(SIFT_DIM, 5).as_slice());
    }

    #[test]
    fn root_sift_three_one() {
        let mut raw = vec![0.0; SIFT_DIM];
        raw[0] = 3.0;
        raw[1] = 1.0;
        let out = root_sift_transform(&raw).unwrap();
        assert!((out.as_slice()[0] as f64 - 0.75f64.sqrt()).abs() < 1e-6);
        assert!((out.as_slice()[1] as f64 - 0.5).abs() < 1e-6);
        assert!(out.as_slice()[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn root_sift_rejects_bad_input() {
        let mut raw = vec![0.0; SIFT_DIM];
        raw[3] = -1.0;
        assert!(matches!(
            root_sift_transform(&raw),
            Err(Error::InvalidDescriptor(_))
        ));
        raw[3] = f32::NAN;
        assert!(matches!(
            root_sift_transform(&raw),
            Err(Error::InvalidDescriptor(_))
        ));
        assert!(matches!(
            root_sift_transform(&[1.0; 12]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mean_cn_examples() {
        let mut v = [0.0f32; CN_DIM];
        v[0] = 0.3;
        v[4] = 0.7;
        assert_eq!(mean_cn_descriptor(&[v]).unwrap().values(), &v);

        let mut e1 = [0.0f32; CN_DIM];
        e1[1] = 1.0;
        let mut e2 = [0.0f32; CN_DIM];
        e2[2] = 1.0;
        let m = mean_cn_descriptor(&[e1, e2]).unwrap();
        assert_eq!(m.values()[1], 0.5);
        assert_eq!(m.values()[2], 0.5);

        let mut a = [0.0f32; CN_DIM];
        a[0] = 0.6;
        a[1] = 0.4;
        let mut b = [0.0f32; CN_DIM];
        b[0] = 0.2;
        b[1] = 0.8;
        let m = mean_cn_descriptor(&[a, b]).unwrap();
        assert!((m.values()[0] - 0.4).abs() < 1e-7);
        assert!((m.values()[1] - 0.6).abs() < 1e-7);
        assert!(m.values()[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_cn_empty_patch() {
        assert!(matches!(mean_cn_descriptor(&[]), Err(Error::EmptyPatch)));
    }

    #[test]
    fn cn_rejects_off_simplex() {
        assert!(matches!(
            CnDescriptor::new(&[0.5; CN_DIM]),
            Err(Error::NotSimplex(_))
        ));
    }

    #[test]
    fn keypoint_scale_must_be_positive() {
        let sift = root_sift_transform(&one_hot(SIFT_DIM, 0)).unwrap();
        let color = CnDescriptor::new(&one_hot(CN_DIM, 0)).unwrap();
        let kp = Keypoint {
            x: 0.0,
            y: 0.0,
            scale: 0.0,
        };
        assert!(FeatureTuple::new(sift, color, kp).is_err());
    }

    fn simplex_strategy() -> impl Strategy<Value = [f32; CN_DIM]> {
        prop::array::uniform11(0.0f64..1.0).prop_filter_map("non-degenerate", |raw| {
            let s: f64 = raw.iter().sum();
            (s > 1e-3).then(|| {
                let mut out = [0.0f32; CN_DIM];
                for (o, r) in out.iter_mut().zip(raw) {
                    *o = (r / s) as f32;
                }
                out
            })
        })
    }

    proptest! {
        #[test]
        fn root_sift_has_unit_l2_norm(raw in prop::collection::vec(0.0f32..100.0, SIFT_DIM)) {
            prop_assume!(raw.iter().any(|&v| v > 0.0));
            let out = root_sift_transform(&raw).unwrap();
            let l2: f64 = out.as_slice().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            prop_assert!((l2 - 1.0).abs() < 1e-6);
        }

        #[test]
        fn mean_cn_stays_on_simplex(pixels in prop::collection::vec(simplex_strategy(), 1..20)) {
            let m = mean_cn_descriptor(&pixels).unwrap();
            prop_assert!(check_simplex(m.as_slice()).is_ok());
        }
    }
}
