//! Conventional one-dimensional inverted index over SIFT words.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;

use super::{check_sift_models, image_norm, InvertedIndex, NormTable};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::features::ImageRecord;
use crate::signatures::{HeModel, SiftSignature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BaselinePosting {
    pub image_id: u32,
    pub sift_sig: SiftSignature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineIndex {
    k_s: u32,
    lists: Vec<Vec<BaselinePosting>>,
    /// Images containing each word.
    word_images: Vec<u32>,
    n_images: u32,
    norms: NormTable,
    image_ids: HashSet<u32>,
    frozen: bool,
}

impl BaselineIndex {
    pub fn new(k_s: u32) -> Self {
        BaselineIndex {
            k_s,
            lists: vec![Vec::new(); k_s as usize],
            word_images: vec![0; k_s as usize],
            n_images: 0,
            norms: NormTable::default(),
            image_ids: HashSet::new(),
            frozen: false,
        }
    }

    pub fn k_s(&self) -> u32 {
        self.k_s
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn norm_table(&self) -> &NormTable {
        &self.norms
    }

    pub fn list(&self, word: u32) -> &[BaselinePosting] {
        self.lists
            .get(word as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Number of images containing `word`.
    pub fn image_count(&self, word: u32) -> u32 {
        self.word_images.get(word as usize).copied().unwrap_or(0)
    }

    /// `N / n_i`.
    pub fn idf(&self, word: u32) -> Result<f64> {
        match self.image_count(word) {
            0 => Err(Error::UndefinedEntry(word, 0)),
            n => Ok(self.n_images as f64 / n as f64),
        }
    }

    /// Adds one image given its (word, signature) features.
    pub fn add_image(&mut self, image_id: u32, features: &[(u32, SiftSignature)]) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        if !self.image_ids.insert(image_id) {
            return Err(Error::DuplicateImage(image_id));
        }
        if let Some(&(w, _)) = features.iter().find(|(w, _)| *w >= self.k_s) {
            self.image_ids.remove(&image_id);
            return Err(Error::WordOutOfRange {
                word: w as usize,
                size: self.k_s as usize,
            });
        }
        self.n_images += 1;
        let mut hist: HashMap<u32, u32> = HashMap::new();
        for &(w, sig) in features {
            *hist.entry(w).or_default() += 1;
            self.lists[w as usize].push(BaselinePosting {
                image_id,
                sift_sig: sig,
            });
        }
        for &w in hist.keys() {
            self.word_images[w as usize] += 1;
        }
        if !hist.is_empty() {
            self.norms
                .insert(image_id, image_norm(hist.values().copied())?);
        }
        Ok(())
    }

    pub fn freeze(&mut self) {
        for l in &mut self.lists {
            l.sort_unstable();
        }
        self.image_ids.clear();
        self.frozen = true;
    }

    pub(crate) fn from_parts(
        k_s: u32,
        n_images: u32,
        lists: BTreeMap<u32, Vec<BaselinePosting>>,
        norms: NormTable,
    ) -> Result<Self> {
        let mut index = BaselineIndex::new(k_s);
        for (w, postings) in lists {
            if w >= k_s {
                return Err(Error::format(format!("word {w} outside codebook of {k_s}")));
            }
            let mut ids: Vec<u32> = postings.iter().map(|p| p.image_id).collect();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() as u32 > n_images {
                return Err(Error::format("more images in an entry than in the index"));
            }
            index.word_images[w as usize] = ids.len() as u32;
            index.lists[w as usize] = postings;
        }
        index.n_images = n_images;
        index.norms = norms;
        index.freeze();
        Ok(index)
    }
}

impl InvertedIndex for BaselineIndex {
    fn num_images(&self) -> u32 {
        self.n_images
    }

    fn num_postings(&self) -> u64 {
        self.lists.iter().map(|l| l.len() as u64).sum()
    }

    fn num_entries(&self) -> u64 {
        self.lists.iter().filter(|l| !l.is_empty()).count() as u64
    }

    fn directory_entry_bytes(&self) -> u64 {
        8
    }
}

pub fn build_baseline_index(
    corpus: &[ImageRecord],
    sift_book: &Codebook,
    he: &HeModel,
) -> Result<BaselineIndex> {
    check_sift_models(sift_book, he)?;
    let encoded = corpus
        .par_iter()
        .map(|img| {
            img.features
                .iter()
                .map(|f| {
                    let w = sift_book.quantize_nearest(f.sift.as_slice())?;
                    Ok((w, he.signature(f.sift.as_slice(), w)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut index = BaselineIndex::new(sift_book.len() as u32);
    for (img, feats) in corpus.iter().zip(&encoded) {
        index.add_image(img.image_id, feats)?;
    }
    index.freeze();
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::test_support::*;

    fn image(id: u32, feats: Vec<crate::features::FeatureTuple>) -> ImageRecord {
        ImageRecord {
            image_id: id,
            group_id: 0,
            features: feats,
        }
    }

    #[test]
    fn vacuous_and_single() {
        let m = axis_models(4, 3);
        let empty = build_baseline_index(&[], &m.sift_book, &m.he).unwrap();
        assert_eq!(empty.num_postings(), 0);
        assert_eq!(empty.num_images(), 0);

        let one =
            build_baseline_index(&[image(5, vec![tuple(1, 2)])], &m.sift_book, &m.he).unwrap();
        assert_eq!(one.list(1).len(), 1);
        assert_eq!(one.image_count(1), 1);
        assert_eq!(one.norm_table().get(5), Some(1.0));
        assert_eq!(one.idf(1).unwrap(), 1.0);
        assert!(one.idf(0).is_err());
    }

    #[test]
    fn identical_tuples_share_a_list() {
        let m = axis_models(4, 3);
        let idx = build_baseline_index(
            &[image(5, vec![tuple(1, 2), tuple(1, 0)])],
            &m.sift_book,
            &m.he,
        )
        .unwrap();
        // Color differs but the SIFT word is the same.
        assert_eq!(idx.list(1).len(), 2);
        assert_eq!(idx.image_count(1), 1);
        assert_eq!(idx.norm_table().get(5), Some(2.0));
    }

    #[test]
    fn rejects_duplicates_and_frozen_writes() {
        let m = axis_models(2, 2);
        let corpus = [image(3, vec![tuple(0, 0)]), image(3, vec![])];
        assert!(matches!(
            build_baseline_index(&corpus, &m.sift_book, &m.he),
            Err(Error::DuplicateImage(3))
        ));
        let mut idx = build_baseline_index(&corpus[..1], &m.sift_book, &m.he).unwrap();
        assert!(matches!(idx.add_image(4, &[]), Err(Error::Frozen)));
    }
}
