//! Index files.
//!
//! Layout (little-endian): `"CMIX"`, version `u16`, flags `u8`, `K_s u32`,
//! `K_c u32`, `N u32`, entry count `u64`; per entry `i u32`, `j u32`, posting
//! count `u32`, then postings as `image_id u32`, `sift_sig u64` (flag bit 0),
//! `cn_sig u32` low 22 bits (flag bit 1); then the norm table as an image
//! count `u32` followed by `(image_id u32, norm f64)` pairs. Flag bit 2 marks
//! a one-dimensional baseline index, whose entries all have `j = 0`.
//!
//! Entries, postings and norms are written in sorted order, so equal indexes
//! serialize to identical bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{BaselineIndex, BaselinePosting, InvertedIndex, MultiIndex, NormTable, Posting};
use crate::error::{eof_as_format, Error, Result};
use crate::signatures::{CnSignature, SiftSignature};

const MAGIC: &[u8; 4] = b"CMIX";
const VERSION: u16 = 1;
const FLAG_SIFT_SIG: u8 = 1;
const FLAG_CN_SIG: u8 = 1 << 1;
const FLAG_ONE_DIM: u8 = 1 << 2;

/// Either flavour of index, as found in a file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyIndex {
    Multi(MultiIndex),
    Baseline(BaselineIndex),
}

impl AnyIndex {
    pub fn as_inverted(&self) -> &dyn InvertedIndex {
        match self {
            AnyIndex::Multi(m) => m,
            AnyIndex::Baseline(b) => b,
        }
    }
}

impl MultiIndex {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        if !self.is_frozen() {
            return Err(Error::NotFrozen);
        }
        write_header(
            w,
            FLAG_SIFT_SIG | FLAG_CN_SIG,
            self.k_s,
            self.k_c,
            self.num_images(),
            self.num_entries(),
        )?;
        for ((i, j), postings) in self.entries() {
            w.write_u32::<LittleEndian>(i)?;
            w.write_u32::<LittleEndian>(j)?;
            w.write_u32::<LittleEndian>(postings.len() as u32)?;
            for p in postings {
                w.write_u32::<LittleEndian>(p.image_id)?;
                w.write_u64::<LittleEndian>(p.sift_sig.bits())?;
                w.write_u32::<LittleEndian>(p.cn_sig.bits())?;
            }
        }
        write_norms(w, self.norm_table())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        match read_any(r)? {
            AnyIndex::Multi(m) => Ok(m),
            AnyIndex::Baseline(_) => Err(Error::format("index file holds a baseline index")),
        }
    }
}

impl BaselineIndex {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        if !self.is_frozen() {
            return Err(Error::NotFrozen);
        }
        write_header(
            w,
            FLAG_SIFT_SIG | FLAG_ONE_DIM,
            self.k_s(),
            1,
            self.num_images(),
            self.num_entries(),
        )?;
        for word in 0..self.k_s() {
            let list = self.list(word);
            if list.is_empty() {
                continue;
            }
            w.write_u32::<LittleEndian>(word)?;
            w.write_u32::<LittleEndian>(0)?;
            w.write_u32::<LittleEndian>(list.len() as u32)?;
            for p in list {
                w.write_u32::<LittleEndian>(p.image_id)?;
                w.write_u64::<LittleEndian>(p.sift_sig.bits())?;
            }
        }
        write_norms(w, self.norm_table())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        match read_any(r)? {
            AnyIndex::Baseline(b) => Ok(b),
            AnyIndex::Multi(_) => Err(Error::format("index file holds a multi-index")),
        }
    }
}

fn write_header<W: Write>(
    w: &mut W,
    flags: u8,
    k_s: u32,
    k_c: u32,
    n: u32,
    entries: u64,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u8(flags)?;
    w.write_u32::<LittleEndian>(k_s)?;
    w.write_u32::<LittleEndian>(k_c)?;
    w.write_u32::<LittleEndian>(n)?;
    w.write_u64::<LittleEndian>(entries)?;
    Ok(())
}

fn write_norms<W: Write>(w: &mut W, norms: &NormTable) -> Result<()> {
    w.write_u32::<LittleEndian>(norms.len() as u32)?;
    for (id, norm) in norms.iter() {
        w.write_u32::<LittleEndian>(id)?;
        w.write_f64::<LittleEndian>(norm)?;
    }
    Ok(())
}

pub fn read_any<R: Read>(r: &mut R) -> Result<AnyIndex> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof_as_format)?;
    if &magic != MAGIC {
        return Err(Error::format("index file: bad magic"));
    }
    let version = r.read_u16::<LittleEndian>().map_err(eof_as_format)?;
    if version != VERSION {
        return Err(Error::format(format!(
            "index file: unsupported version {version}"
        )));
    }
    let flags = r.read_u8().map_err(eof_as_format)?;
    if flags & !(FLAG_SIFT_SIG | FLAG_CN_SIG | FLAG_ONE_DIM) != 0 {
        return Err(Error::format(format!(
            "index file: unknown flags {flags:#x}"
        )));
    }
    let has_sift = flags & FLAG_SIFT_SIG != 0;
    let has_cn = flags & FLAG_CN_SIG != 0;
    let one_dim = flags & FLAG_ONE_DIM != 0;
    let k_s = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
    let k_c = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
    let n = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
    let entry_count = r.read_u64::<LittleEndian>().map_err(eof_as_format)?;
    if one_dim && (k_c != 1 || has_cn) {
        return Err(Error::format(
            "index file: baseline index with a color dimension",
        ));
    }

    let mut entries = Vec::new();
    let mut last: Option<(u32, u32)> = None;
    for _ in 0..entry_count {
        let i = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
        let j = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
        if last.is_some_and(|l| l >= (i, j)) {
            return Err(Error::format("index file: entries out of order"));
        }
        last = Some((i, j));
        let count = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
        let mut postings = Vec::with_capacity((count as usize).min(1 << 20));
        for _ in 0..count {
            let image_id = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
            let sift_sig = if has_sift {
                r.read_u64::<LittleEndian>().map_err(eof_as_format)?
            } else {
                0
            };
            let cn_bits = if has_cn {
                r.read_u32::<LittleEndian>().map_err(eof_as_format)?
            } else {
                0
            };
            let cn_sig = CnSignature::from_bits(cn_bits).ok_or_else(|| {
                Error::format(format!("index file: invalid color signature {cn_bits:#x}"))
            })?;
            postings.push(Posting {
                image_id,
                sift_sig: SiftSignature(sift_sig),
                cn_sig,
            });
        }
        entries.push(((i, j), postings));
    }

    let norm_count = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
    let mut norms = NormTable::default();
    for _ in 0..norm_count {
        let id = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
        let norm = r.read_f64::<LittleEndian>().map_err(eof_as_format)?;
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::format(format!(
                "index file: invalid norm {norm} for image {id}"
            )));
        }
        norms.insert(id, norm);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::format("index file: trailing bytes"));
    }

    if one_dim {
        let mut lists = BTreeMap::new();
        for ((i, j), postings) in entries {
            if j != 0 {
                return Err(Error::format("index file: baseline entry with j != 0"));
            }
            let list = postings
                .into_iter()
                .map(|p| BaselinePosting {
                    image_id: p.image_id,
                    sift_sig: p.sift_sig,
                })
                .collect();
            lists.insert(i, list);
        }
        Ok(AnyIndex::Baseline(BaselineIndex::from_parts(
            k_s, n, lists, norms,
        )?))
    } else {
        Ok(AnyIndex::Multi(MultiIndex::from_parts(
            k_s, k_c, n, entries, norms,
        )?))
    }
}

pub fn save_index(index: &MultiIndex, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    index.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<MultiIndex> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    MultiIndex::read_from(&mut BufReader::new(File::open(path)?))
}

pub fn load_any_index(path: &Path) -> Result<AnyIndex> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    read_any(&mut BufReader::new(File::open(path)?))
}

impl BaselineIndex {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{generate_synthetic_corpus, ImageRecord, SynthConfig};
    use crate::index::test_support::*;
    use crate::index::{build_baseline_index, build_multi_index};

    fn corpus() -> Vec<ImageRecord> {
        // Features quantize to axis words through their dominant bins.
        (0..6u32)
            .map(|id| ImageRecord {
                image_id: id * 3,
                group_id: id / 2,
                features: (0..5)
                    .map(|k| tuple(((id + k) % 4) as usize, (k % 3) as usize))
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn multi_round_trip() {
        let m = axis_models(4, 3);
        let idx = build_multi_index(&corpus(), &m).unwrap();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        let back = MultiIndex::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, idx);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn empty_round_trip() {
        let m = axis_models(4, 3);
        let idx = build_multi_index(&[], &m).unwrap();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        assert_eq!(MultiIndex::read_from(&mut buf.as_slice()).unwrap(), idx);
    }

    #[test]
    fn baseline_round_trip_and_kind_checks() {
        let m = axis_models(4, 3);
        let b = build_baseline_index(&corpus(), &m.sift_book, &m.he).unwrap();
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        assert_eq!(BaselineIndex::read_from(&mut buf.as_slice()).unwrap(), b);
        assert!(MultiIndex::read_from(&mut buf.as_slice()).is_err());
        assert!(matches!(
            read_any(&mut buf.as_slice()).unwrap(),
            AnyIndex::Baseline(_)
        ));
    }

    #[test]
    fn corruption_is_a_format_error() {
        let m = axis_models(4, 3);
        let idx = build_multi_index(&corpus(), &m).unwrap();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'Q';
        assert!(matches!(
            MultiIndex::read_from(&mut bad.as_slice()),
            Err(Error::Format(_))
        ));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(
            MultiIndex::read_from(&mut bad.as_slice()),
            Err(Error::Format(_))
        ));
        let mut bad = buf.clone();
        bad.truncate(buf.len() - 5);
        assert!(matches!(
            MultiIndex::read_from(&mut bad.as_slice()),
            Err(Error::Format(_))
        ));
        let mut bad = buf;
        bad.push(0);
        assert!(matches!(
            MultiIndex::read_from(&mut bad.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn unfrozen_index_is_not_saved() {
        let idx = MultiIndex::new(2, 2);
        assert!(matches!(
            idx.write_to(&mut Vec::new()),
            Err(Error::NotFrozen)
        ));
    }

    #[test]
    fn synthetic_resave_is_byte_identical() {
        use crate::codebook::{train_kmeans, Family};
        use crate::index::Models;
        use crate::signatures::train_he_model;

        let cfg = SynthConfig {
            groups: 100,
            images_per_group: 4,
            features_per_image: 6,
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic_corpus(&cfg, 5).unwrap();
        let sifts: Vec<&[f32]> = corpus
            .iter()
            .flat_map(|r| &r.features)
            .map(|f| f.sift.as_slice())
            .collect();
        let colors: Vec<&[f32]> = corpus
            .iter()
            .flat_map(|r| &r.features)
            .map(|f| f.color.as_slice())
            .collect();
        let sift_book = train_kmeans(&sifts, 32, 5, 1).unwrap();
        let color_book = train_kmeans(&colors, 16, 5, 2).unwrap();
        assert_eq!(sift_book.family(), Family::Sift);
        let labelled: Vec<(&[f32], u32)> = sifts
            .iter()
            .map(|s| (*s, sift_book.quantize_nearest(s).unwrap()))
            .collect();
        let (he, _) = train_he_model(&labelled, &sift_book, 3).unwrap();
        let models = Models::new(sift_book, color_book, he).unwrap();
        let idx = build_multi_index(&corpus, &models).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.cmix");
        let p2 = dir.path().join("b.cmix");
        save_index(&idx, &p1).unwrap();
        save_index(&load_index(&p1).unwrap(), &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(load_index(&p2).unwrap(), idx);
    }
}
