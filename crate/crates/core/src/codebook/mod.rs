//! Visual-word codebooks and exhaustive quantization.

mod kmeans;

pub use kmeans::{train_kmeans, train_kmeans_with_report, KMeansReport};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{eof_as_format, Error, Result};
use crate::features::{CN_DIM, SIFT_DIM};

const MAGIC: &[u8; 4] = b"CMIC";

/// Which descriptor space a codebook partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Sift,
    Color,
    /// Any other dimension; used for toy and test vocabularies.
    Other,
}

impl Family {
    pub fn for_dim(dim: usize) -> Family {
        match dim {
            SIFT_DIM => Family::Sift,
            CN_DIM => Family::Color,
            _ => Family::Other,
        }
    }

    fn expected_dim(self) -> Option<usize> {
        match self {
            Family::Sift => Some(SIFT_DIM),
            Family::Color => Some(CN_DIM),
            Family::Other => None,
        }
    }

    fn code(self) -> u8 {
        match self {
            Family::Sift => 0,
            Family::Color => 1,
            Family::Other => 2,
        }
    }

    fn from_code(code: u8) -> Option<Family> {
        match code {
            0 => Some(Family::Sift),
            1 => Some(Family::Color),
            2 => Some(Family::Other),
            _ => None,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sift" => Ok(Family::Sift),
            "color" | "cn" => Ok(Family::Color),
            _ => Err(Error::Config(format!("unknown codebook family `{s}`"))),
        }
    }
}

/// Squared Euclidean distance, accumulated in `f64`.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// `m` nearest words, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub word_ids: Vec<u32>,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    family: Family,
    dim: usize,
    centroids: Vec<f32>,
}

impl Codebook {
    pub fn new<C: AsRef<[f32]>>(family: Family, centroids: &[C]) -> Result<Self> {
        let dim = match (family.expected_dim(), centroids.first()) {
            (Some(d), _) => d,
            (None, Some(c)) => c.as_ref().len(),
            (None, None) => 0,
        };
        let mut flat = Vec::with_capacity(centroids.len() * dim);
        for c in centroids {
            flat.extend_from_slice(c.as_ref());
            if c.as_ref().len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.as_ref().len(),
                });
            }
        }
        Self::from_flat(family, dim, flat)
    }

    pub fn from_flat(family: Family, dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if let Some(d) = family.expected_dim() {
            if d != dim {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: dim,
                });
            }
        }
        if dim == 0 || centroids.is_empty() {
            return Err(Error::Training(
                "codebook needs at least one centroid".into(),
            ));
        }
        if !centroids.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: centroids.len() % dim,
            });
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training("non-finite centroid".into()));
        }
        Ok(Codebook {
            family,
            dim,
            centroids,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of words.
    pub fn len(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn centroid(&self, word: usize) -> &[f32] {
        &self.centroids[word * self.dim..(word + 1) * self.dim]
    }

    pub fn centroids(&self) -> impl Iterator<Item = &[f32]> {
        self.centroids.chunks_exact(self.dim)
    }

    fn check_dim(&self, desc: &[f32]) -> Result<()> {
        if desc.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: desc.len(),
            });
        }
        Ok(())
    }

    /// Nearest centroid; ties go to the lowest index.
    pub fn quantize_nearest(&self, desc: &[f32]) -> Result<u32> {
        self.check_dim(desc)?;
        Ok(self.nearest_unchecked(desc).0 as u32)
    }

    pub(crate) fn nearest_unchecked(&self, desc: &[f32]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids().enumerate() {
            let d = squared_distance(desc, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// The `m` nearest centroids ordered by (distance, index).
    pub fn quantize_multiple(&self, desc: &[f32], m: usize) -> Result<Assignment> {
        self.check_dim(desc)?;
        let k = self.len();
        if m == 0 || m > k {
            return Err(Error::AssignmentRange { m, k });
        }
        let mut scored: Vec<(f64, u32)> = self
            .centroids()
            .enumerate()
            .map(|(i, c)| (squared_distance(desc, c), i as u32))
            .collect();
        let by_rank = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if m < k {
            scored.select_nth_unstable_by(m - 1, by_rank);
            scored.truncate(m);
        }
        scored.sort_unstable_by(by_rank);
        Ok(Assignment {
            word_ids: scored.iter().map(|s| s.1).collect(),
            distances: scored.iter().map(|s| s.0).collect(),
        })
    }

    /// Layout: `"CMIC"`, family `u8`, k `u32`, dim `u32`, then `k * dim` `f32`.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u8(self.family.code())?;
        w.write_u32::<LittleEndian>(self.len() as u32)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        for &v in &self.centroids {
            w.write_f32::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(eof_as_format)?;
        if &magic != MAGIC {
            return Err(Error::format("codebook file: bad magic"));
        }
        let family = Family::from_code(r.read_u8().map_err(eof_as_format)?)
            .ok_or_else(|| Error::format("codebook file: unknown family"))?;
        let k = r.read_u32::<LittleEndian>().map_err(eof_as_format)? as usize;
        let dim = r.read_u32::<LittleEndian>().map_err(eof_as_format)? as usize;
        let total = k
            .checked_mul(dim)
            .filter(|&t| t <= 1 << 32)
            .ok_or_else(|| Error::format("codebook file: implausible size"))?;
        let mut centroids = vec![0.0f32; total];
        r.read_f32_into::<LittleEndian>(&mut centroids)
            .map_err(eof_as_format)?;
        Codebook::from_flat(family, dim, centroids)
            .map_err(|e| Error::format(format!("codebook file: {e}")))
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
