//! Binary signatures attached to indexed features: 64-bit Hamming Embedding
//! for SIFT and the 22-bit semantic binarization of Color Names.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codebook::Codebook;
use crate::error::{eof_as_format, Error, Result};
use crate::features::{check_simplex, CnDescriptor, SiftDescriptor, CN_DIM, SIFT_DIM};

pub const SIFT_SIG_BITS: u32 = 64;
pub const CN_SIG_BITS: u32 = 22;
const HE_DIM: usize = SIFT_SIG_BITS as usize;
const CN_MASK: u32 = (1 << CN_SIG_BITS) - 1;
const LOW_MASK: u32 = (1 << CN_DIM) - 1;
const MAGIC: &[u8; 4] = b"CMIH";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SiftSignature(pub u64);

impl SiftSignature {
    pub fn bits(self) -> u64 {
        self.0
    }
}

/// 22 logical bits: bit `i` is the "above th2" flag of color `i`, bit `11 + i`
/// the "above th1" flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct CnSignature(u32);

impl CnSignature {
    /// Accepts only patterns reachable by [`cn_binarize`].
    pub fn from_bits(bits: u32) -> Option<Self> {
        let high = bits >> CN_DIM;
        (bits & !CN_MASK == 0 && high & !(bits & LOW_MASK) == 0).then_some(CnSignature(bits))
    }

    pub fn bits(self) -> u32 {
        self.0
    }
}

/// Population count of `a ^ b` over the low `width` bits.
#[inline]
pub fn hamming_distance(a: u64, b: u64, width: u32) -> u32 {
    debug_assert!(width <= 64);
    let mask = if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    };
    ((a ^ b) & mask).count_ones()
}

/// Binarizes a Color Names vector against its 2nd and 5th largest values.
pub fn cn_binarize(desc: &CnDescriptor) -> CnSignature {
    let f = desc.values();
    let mut sorted = *f;
    // Stable descending sort.
    sorted.sort_by(|a, b| b.total_cmp(a));
    let th1 = sorted[1];
    let th2 = sorted[4];
    let mut bits = 0u32;
    for (i, &v) in f.iter().enumerate() {
        if v > th1 {
            bits |= 1 << i | 1 << (CN_DIM + i);
        } else if v > th2 {
            bits |= 1 << i;
        }
    }
    CnSignature(bits)
}

/// [`cn_binarize`] on raw values, validating the simplex constraint first.
pub fn cn_binarize_values(values: &[f32]) -> Result<CnSignature> {
    if values.len() != CN_DIM {
        return Err(Error::DimensionMismatch {
            expected: CN_DIM,
            got: values.len(),
        });
    }
    check_simplex(values)?;
    Ok(cn_binarize(&CnDescriptor::new(values)?))
}

/// Random orthonormal projection plus per-word median thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct HeModel {
    seed: u64,
    /// 64 rows of 128, row-major.
    projection: Vec<f32>,
    thresholds: Vec<[f32; HE_DIM]>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeTrainingReport {
    /// Words without training samples; their thresholds are all zero.
    pub empty_words: Vec<u32>,
}

fn orthonormal_rows(seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(HE_DIM);
    while rows.len() < HE_DIM {
        let mut v: Vec<f64> = (0..SIFT_DIM)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        // Two passes of modified Gram-Schmidt keep the rows orthogonal to f64 precision.
        for _ in 0..2 {
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        rows.push(v);
    }
    rows.into_iter().flatten().map(|v| v as f32).collect()
}

fn median(values: &mut [f32]) -> f32 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        ((values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0) as f32
    }
}

impl HeModel {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_words(&self) -> usize {
        self.thresholds.len()
    }

    pub fn projection_row(&self, k: usize) -> &[f32] {
        &self.projection[k * SIFT_DIM..(k + 1) * SIFT_DIM]
    }

    pub fn thresholds(&self, word: usize) -> Option<&[f32; HE_DIM]> {
        self.thresholds.get(word)
    }

    /// Projects a descriptor; each component is accumulated in `f64` and
    /// rounded once to `f32`, the precision thresholds are stored at.
    pub fn project(&self, desc: &[f32]) -> Result<[f32; HE_DIM]> {
        if desc.len() != SIFT_DIM {
            return Err(Error::DimensionMismatch {
                expected: SIFT_DIM,
                got: desc.len(),
            });
        }
        let mut out = [0.0f32; HE_DIM];
        for (k, o) in out.iter_mut().enumerate() {
            let dot: f64 = self
                .projection_row(k)
                .iter()
                .zip(desc)
                .map(|(&p, &d)| p as f64 * d as f64)
                .sum();
            *o = dot as f32;
        }
        Ok(out)
    }

    /// Bit `k` is set iff the `k`-th projected component strictly exceeds the
    /// word's threshold.
    pub fn signature(&self, desc: &[f32], word: u32) -> Result<SiftSignature> {
        let th = self
            .thresholds
            .get(word as usize)
            .ok_or(Error::WordOutOfRange {
                word: word as usize,
                size: self.thresholds.len(),
            })?;
        let proj = self.project(desc)?;
        Ok(SiftSignature(signature_bits(&proj, th)))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        for &v in &self.projection {
            w.write_f32::<LittleEndian>(v)?;
        }
        w.write_u32::<LittleEndian>(self.thresholds.len() as u32)?;
        for th in &self.thresholds {
            for &v in th {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(eof_as_format)?;
        if &magic != MAGIC {
            return Err(Error::format("HE model file: bad magic"));
        }
        let seed = r.read_u64::<LittleEndian>().map_err(eof_as_format)?;
        let mut projection = vec![0.0f32; HE_DIM * SIFT_DIM];
        r.read_f32_into::<LittleEndian>(&mut projection)
            .map_err(eof_as_format)?;
        let words = r.read_u32::<LittleEndian>().map_err(eof_as_format)? as usize;
        let mut thresholds = Vec::with_capacity(words.min(1 << 20));
        for _ in 0..words {
            let mut th = [0.0f32; HE_DIM];
            r.read_f32_into::<LittleEndian>(&mut th)
                .map_err(eof_as_format)?;
            thresholds.push(th);
        }
        if projection
            .iter()
            .chain(thresholds.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::format("HE model file: non-finite value"));
        }
        Ok(HeModel {
            seed,
            projection,
            thresholds,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[inline]
pub(crate) fn signature_bits(proj: &[f32; HE_DIM], th: &[f32; HE_DIM]) -> u64 {
    proj.iter().zip(th).enumerate().fold(
        0u64,
        |acc, (k, (p, t))| if p > t { acc | 1 << k } else { acc },
    )
}

/// Trains the projection and per-word median thresholds from labelled
/// descriptors.
pub fn train_he_model<S: AsRef<[f32]>>(
    samples: &[(S, u32)],
    book: &Codebook,
    seed: u64,
) -> Result<(HeModel, HeTrainingReport)> {
    if book.dim() != SIFT_DIM {
        return Err(Error::DimensionMismatch {
            expected: SIFT_DIM,
            got: book.dim(),
        });
    }
    let words = book.len();
    let mut model = HeModel {
        seed,
        projection: orthonormal_rows(seed),
        thresholds: Vec::new(),
    };

    let mut per_word: Vec<Vec<[f32; HE_DIM]>> = vec![Vec::new(); words];
    for (desc, word) in samples {
        let w = *word as usize;
        if w >= words {
            return Err(Error::WordOutOfRange {
                word: w,
                size: words,
            });
        }
        per_word[w].push(model.project(desc.as_ref())?);
    }

    let mut report = HeTrainingReport::default();
    let mut column = Vec::new();
    model.thresholds = per_word
        .iter()
        .enumerate()
        .map(|(w, projs)| {
            let mut th = [0.0f32; HE_DIM];
            if projs.is_empty() {
                report.empty_words.push(w as u32);
                return th;
            }
            for (k, t) in th.iter_mut().enumerate() {
                column.clear();
                column.extend(projs.iter().map(|p| p[k]));
                *t = median(&mut column);
            }
            th
        })
        .collect();
    Ok((model, report))
}

impl AsRef<[f32]> for SiftDescriptor {
    fn as_ref(&self) -> &[f32] {
        self.as_slice()
    }
}
