//! The coupled multi-index: a sparse `K_s x K_c` grid of posting lists keyed
//! by (SIFT word, color word), with the per-pair image counts and per-image
//! norms needed for tf-idf scoring. The 1-D SIFT-only index lives in
//! [`baseline`].

pub mod baseline;
mod io;
mod memory;

pub use baseline::{build_baseline_index, BaselineIndex, BaselinePosting};
pub use io::{load_any_index, load_index, save_index, AnyIndex};
pub use memory::{memory_footprint, MemoryFootprint, MemoryProfile};

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::features::{FeatureTuple, ImageRecord, CN_DIM, SIFT_DIM};
use crate::signatures::{cn_binarize, CnSignature, HeModel, SiftSignature};

/// Trained models shared by indexing and querying.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub sift_book: Codebook,
    pub color_book: Codebook,
    pub he: HeModel,
}

impl Models {
    pub fn new(sift_book: Codebook, color_book: Codebook, he: HeModel) -> Result<Self> {
        check_sift_models(&sift_book, &he)?;
        if color_book.dim() != CN_DIM {
            return Err(Error::DimensionMismatch {
                expected: CN_DIM,
                got: color_book.dim(),
            });
        }
        Ok(Models {
            sift_book,
            color_book,
            he,
        })
    }

    pub fn k_s(&self) -> u32 {
        self.sift_book.len() as u32
    }

    pub fn k_c(&self) -> u32 {
        self.color_book.len() as u32
    }
}

pub(crate) fn check_sift_models(sift_book: &Codebook, he: &HeModel) -> Result<()> {
    if sift_book.dim() != SIFT_DIM {
        return Err(Error::DimensionMismatch {
            expected: SIFT_DIM,
            got: sift_book.dim(),
        });
    }
    if he.num_words() != sift_book.len() {
        return Err(Error::Config(format!(
            "HE model has thresholds for {} words but the SIFT codebook has {}",
            he.num_words(),
            sift_book.len()
        )));
    }
    Ok(())
}

/// A feature after single assignment, as stored on the database side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodedFeature {
    pub sift_word: u32,
    pub color_word: u32,
    pub sift_sig: SiftSignature,
    pub cn_sig: CnSignature,
}

pub fn encode_feature(f: &FeatureTuple, models: &Models) -> Result<EncodedFeature> {
    let sift_word = models.sift_book.quantize_nearest(f.sift.as_slice())?;
    let color_word = models.color_book.quantize_nearest(f.color.as_slice())?;
    Ok(EncodedFeature {
        sift_word,
        color_word,
        sift_sig: models.he.signature(f.sift.as_slice(), sift_word)?,
        cn_sig: cn_binarize(&f.color),
    })
}

/// One indexed feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Posting {
    pub image_id: u32,
    pub sift_sig: SiftSignature,
    pub cn_sig: CnSignature,
}

/// `N` and the per-pair image counts `n_ij`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdfTable {
    n_images: u32,
    counts: BTreeMap<(u32, u32), u32>,
}

impl IdfTable {
    pub fn n_images(&self) -> u32 {
        self.n_images
    }

    pub fn count(&self, i: u32, j: u32) -> u32 {
        self.counts.get(&(i, j)).copied().unwrap_or(0)
    }

    /// `N / n_ij`.
    pub fn idf(&self, i: u32, j: u32) -> Result<f64> {
        match self.count(i, j) {
            0 => Err(Error::UndefinedEntry(i, j)),
            n => Ok(self.n_images as f64 / n as f64),
        }
    }
}

/// Per-image l2 norm of the term-frequency histogram.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormTable {
    norms: BTreeMap<u32, f64>,
}

impl NormTable {
    pub fn get(&self, image_id: u32) -> Option<f64> {
        self.norms.get(&image_id).copied()
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.norms.iter().map(|(&k, &v)| (k, v))
    }

    pub(crate) fn insert(&mut self, image_id: u32, norm: f64) {
        self.norms.insert(image_id, norm);
    }
}

/// l2 norm of a sparse histogram given by its non-zero counts.
pub fn image_norm<I: IntoIterator<Item = u32>>(counts: I) -> Result<f64> {
    let mut sum = 0u64;
    let mut any = false;
    for c in counts {
        if c == 0 {
            continue;
        }
        any = true;
        sum += c as u64 * c as u64;
    }
    if !any {
        return Err(Error::ZeroFeatures);
    }
    Ok((sum as f64).sqrt())
}

/// Summary counts shared by both index flavours.
pub trait InvertedIndex {
    fn num_images(&self) -> u32;
    fn num_postings(&self) -> u64;
    /// Number of non-empty entries.
    fn num_entries(&self) -> u64;
    /// Bytes of directory metadata per non-empty entry.
    fn directory_entry_bytes(&self) -> u64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiIndex {
    k_s: u32,
    k_c: u32,
    /// Row `i` maps color word `j` to the postings of entry `W_ij`.
    rows: Vec<BTreeMap<u32, Vec<Posting>>>,
    idf: IdfTable,
    norms: NormTable,
    image_ids: BTreeMap<u32, ()>,
    frozen: bool,
}

impl MultiIndex {
    pub fn new(k_s: u32, k_c: u32) -> Self {
        MultiIndex {
            k_s,
            k_c,
            rows: vec![BTreeMap::new(); k_s as usize],
            idf: IdfTable::default(),
            norms: NormTable::default(),
            image_ids: BTreeMap::new(),
            frozen: false,
        }
    }

    pub fn k_s(&self) -> u32 {
        self.k_s
    }

    pub fn k_c(&self) -> u32 {
        self.k_c
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn idf_table(&self) -> &IdfTable {
        &self.idf
    }

    pub fn norm_table(&self) -> &NormTable {
        &self.norms
    }

    pub fn idf(&self, i: u32, j: u32) -> Result<f64> {
        self.idf.idf(i, j)
    }

    pub fn entry(&self, i: u32, j: u32) -> &[Posting] {
        self.rows
            .get(i as usize)
            .and_then(|r| r.get(&j))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Non-empty entries of SIFT word `i`, ordered by color word.
    pub fn row(&self, i: u32) -> impl Iterator<Item = (u32, &[Posting])> {
        self.rows
            .get(i as usize)
            .into_iter()
            .flat_map(|r| r.iter().map(|(&j, p)| (j, p.as_slice())))
    }

    /// All non-empty entries in `(i, j)` order.
    pub fn entries(&self) -> impl Iterator<Item = ((u32, u32), &[Posting])> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |(&j, p)| ((i as u32, j), p.as_slice())))
    }

    /// Adds one image's encoded features. Rejected after [`freeze`](Self::freeze).
    pub fn add_image(&mut self, image_id: u32, features: &[EncodedFeature]) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        if self.image_ids.contains_key(&image_id) {
            return Err(Error::DuplicateImage(image_id));
        }
        for f in features {
            if f.sift_word >= self.k_s {
                return Err(Error::WordOutOfRange {
                    word: f.sift_word as usize,
                    size: self.k_s as usize,
                });
            }
            if f.color_word >= self.k_c {
                return Err(Error::WordOutOfRange {
                    word: f.color_word as usize,
                    size: self.k_c as usize,
                });
            }
        }
        self.image_ids.insert(image_id, ());
        self.idf.n_images += 1;

        let mut hist: HashMap<(u32, u32), u32> = HashMap::new();
        for f in features {
            *hist.entry((f.sift_word, f.color_word)).or_default() += 1;
            self.rows[f.sift_word as usize]
                .entry(f.color_word)
                .or_default()
                .push(Posting {
                    image_id,
                    sift_sig: f.sift_sig,
                    cn_sig: f.cn_sig,
                });
        }
        for &pair in hist.keys() {
            *self.idf.counts.entry(pair).or_default() += 1;
        }
        if !hist.is_empty() {
            self.norms
                .insert(image_id, image_norm(hist.values().copied())?);
        }
        Ok(())
    }

    /// Sorts every posting list into canonical order and makes the index
    /// read-only.
    pub fn freeze(&mut self) {
        for row in &mut self.rows {
            for postings in row.values_mut() {
                postings.sort_unstable();
            }
        }
        // Only needed to reject duplicates while building.
        self.image_ids.clear();
        self.frozen = true;
    }

    pub(crate) fn from_parts(
        k_s: u32,
        k_c: u32,
        n_images: u32,
        entries: Vec<((u32, u32), Vec<Posting>)>,
        norms: NormTable,
    ) -> Result<Self> {
        let mut index = MultiIndex::new(k_s, k_c);
        for ((i, j), postings) in entries {
            if i >= k_s || j >= k_c {
                return Err(Error::format(format!(
                    "entry ({i}, {j}) outside {k_s} x {k_c} grid"
                )));
            }
            if postings.is_empty() {
                return Err(Error::format(format!("entry ({i}, {j}) is empty")));
            }
            let mut ids: Vec<u32> = postings.iter().map(|p| p.image_id).collect();
            ids.sort_unstable();
            ids.dedup();
            let distinct = ids.len() as u32;
            if distinct > n_images {
                return Err(Error::format("more images in an entry than in the index"));
            }
            index.idf.counts.insert((i, j), distinct);
            if index.rows[i as usize].insert(j, postings).is_some() {
                return Err(Error::format(format!("entry ({i}, {j}) repeated")));
            }
        }
        index.idf.n_images = n_images;
        index.norms = norms;
        index.freeze();
        Ok(index)
    }
}

impl InvertedIndex for MultiIndex {
    fn num_images(&self) -> u32 {
        self.idf.n_images
    }

    fn num_postings(&self) -> u64 {
        self.rows
            .iter()
            .flat_map(|r| r.values())
            .map(|p| p.len() as u64)
            .sum()
    }

    fn num_entries(&self) -> u64 {
        self.rows.iter().map(|r| r.len() as u64).sum()
    }

    fn directory_entry_bytes(&self) -> u64 {
        12
    }
}

/// Encodes every feature with its nearest word pair and both signatures,
/// then builds and freezes the index.
pub fn build_multi_index(corpus: &[ImageRecord], models: &Models) -> Result<MultiIndex> {
    let encoded = corpus
        .par_iter()
        .map(|img| {
            img.features
                .iter()
                .map(|f| encode_feature(f, models))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut index = MultiIndex::new(models.k_s(), models.k_c());
    for (img, feats) in corpus.iter().zip(&encoded) {
        index.add_image(img.image_id, feats)?;
    }
    index.freeze();
    Ok(index)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::codebook::Family;
    use crate::features::{root_sift_transform, CnDescriptor, Keypoint};
    use crate::signatures::train_he_model;

    pub fn tuple(sift_hot: usize, color_hot: usize) -> FeatureTuple {
        let mut raw = vec![0.0f32; SIFT_DIM];
        raw[sift_hot] = 1.0;
        raw[(sift_hot + 1) % SIFT_DIM] = 0.5;
        let mut cn = [0.0f32; CN_DIM];
        cn[color_hot] = 1.0;
        FeatureTuple::new(
            root_sift_transform(&raw).unwrap(),
            CnDescriptor::new(&cn).unwrap(),
            Keypoint {
                x: 1.0,
                y: 1.0,
                scale: 2.0,
            },
        )
        .unwrap()
    }

    /// Axis-aligned codebooks: SIFT word `w` sits on tuple(w, _), color word `c` on one-hot `c`.
    pub fn axis_models(k_s: usize, k_c: usize) -> Models {
        let sift: Vec<Vec<f32>> = (0..k_s)
            .map(|w| tuple(w, 0).sift.as_slice().to_vec())
            .collect();
        let color: Vec<Vec<f32>> = (0..k_c)
            .map(|c| {
                let mut v = vec![0.0f32; CN_DIM];
                v[c] = 1.0;
                v
            })
            .collect();
        let sift_book = Codebook::new(Family::Sift, &sift).unwrap();
        let color_book = Codebook::new(Family::Color, &color).unwrap();
        let samples: Vec<(Vec<f32>, u32)> = sift.iter().cloned().zip(0..).collect();
        let (he, _) = train_he_model(&samples, &sift_book, 1).unwrap();
        Models::new(sift_book, color_book, he).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    fn image(id: u32, feats: Vec<FeatureTuple>) -> ImageRecord {
        ImageRecord {
            image_id: id,
            group_id: 0,
            features: feats,
        }
    }

    #[test]
    fn empty_corpus() {
        let m = axis_models(4, 3);
        let index = build_multi_index(&[], &m).unwrap();
        assert_eq!(index.num_entries(), 0);
        assert_eq!(index.num_images(), 0);
        assert!(index.is_frozen());
    }

    #[test]
    fn one_image_one_tuple() {
        let m = axis_models(4, 3);
        let index = build_multi_index(&[image(9, vec![tuple(2, 1)])], &m).unwrap();
        assert_eq!(index.num_postings(), 1);
        assert_eq!(index.entry(2, 1).len(), 1);
        assert_eq!(index.idf_table().count(2, 1), 1);
        assert_eq!(index.norm_table().get(9), Some(1.0));
    }

    #[test]
    fn two_identical_tuples() {
        let m = axis_models(4, 3);
        let index = build_multi_index(&[image(1, vec![tuple(3, 2), tuple(3, 2)])], &m).unwrap();
        assert_eq!(index.num_entries(), 1);
        assert_eq!(index.entry(3, 2).len(), 2);
        assert_eq!(index.idf_table().count(3, 2), 1);
        assert_eq!(index.norm_table().get(1), Some(2.0));
    }

    #[test]
    fn duplicate_image_rejected() {
        let m = axis_models(2, 2);
        let corpus = [image(1, vec![tuple(0, 0)]), image(1, vec![tuple(1, 1)])];
        assert!(matches!(
            build_multi_index(&corpus, &m),
            Err(Error::DuplicateImage(1))
        ));
    }

    #[test]
    fn frozen_rejects_mutation() {
        let m = axis_models(2, 2);
        let mut index = build_multi_index(&[image(1, vec![tuple(0, 0)])], &m).unwrap();
        let f = encode_feature(&tuple(1, 1), &m).unwrap();
        assert!(matches!(index.add_image(2, &[f]), Err(Error::Frozen)));
    }

    #[test]
    fn idf_examples() {
        let mut t = IdfTable {
            n_images: 10,
            counts: BTreeMap::new(),
        };
        t.counts.insert((0, 0), 2);
        t.counts.insert((1, 0), 10);
        assert_eq!(t.idf(0, 0).unwrap(), 5.0);
        assert_eq!(t.idf(1, 0).unwrap(), 1.0);
        assert!(matches!(t.idf(2, 2), Err(Error::UndefinedEntry(2, 2))));
        let single = IdfTable {
            n_images: 1,
            counts: [((0, 0), 1)].into_iter().collect(),
        };
        assert_eq!(single.idf(0, 0).unwrap(), 1.0);
    }

    #[test]
    fn norm_examples() {
        assert_eq!(image_norm([1]).unwrap(), 1.0);
        assert_eq!(image_norm([3, 4]).unwrap(), 5.0);
        assert_eq!(image_norm([1; 7]).unwrap(), 7f64.sqrt());
        assert!(matches!(
            image_norm(Vec::<u32>::new()),
            Err(Error::ZeroFeatures)
        ));
    }

    #[test]
    fn zero_feature_image_counts_toward_n() {
        let m = axis_models(2, 2);
        let index =
            build_multi_index(&[image(1, vec![tuple(0, 0)]), image(2, vec![])], &m).unwrap();
        assert_eq!(index.num_images(), 2);
        assert_eq!(index.idf(0, 0).unwrap(), 2.0);
        assert_eq!(index.norm_table().get(2), None);
    }
}
