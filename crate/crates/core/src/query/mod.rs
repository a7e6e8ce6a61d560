//! Online retrieval over the multi-index and the 1-D baseline.
//!
//! Each query feature is multiply assigned on both axes; every posting in a
//! traversed entry is weighted by the Hamming kernels of its signatures and by
//! `idf^2`, optionally down-weighted for burstiness, and accumulated per
//! database image. Final scores are divided by `||Q|| * ||I||`.

pub mod oracle;
mod params;

pub use oracle::{brute_force_score, BruteForceOracle};
pub use params::QueryParams;

use std::collections::HashMap;

use serde::Serialize;

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::features::ImageRecord;
use crate::index::{
    image_norm, AnyIndex, BaselineIndex, InvertedIndex, Models, MultiIndex, Posting,
};
use crate::signatures::{
    cn_binarize, hamming_distance, CnSignature, HeModel, SiftSignature, CN_SIG_BITS, SIFT_SIG_BITS,
};

/// Database images for one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    pub query_id: u32,
    /// `(image_id, score)`, sorted by descending score then ascending id.
    pub results: Vec<(u32, f64)>,
}

impl RankedList {
    pub fn new(query_id: u32, mut results: Vec<(u32, f64)>) -> Self {
        results.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        RankedList { query_id, results }
    }

    pub fn empty(query_id: u32) -> Self {
        RankedList {
            query_id,
            results: Vec::new(),
        }
    }

    /// Drops one image (normally the query itself) from the list.
    pub fn without(&self, image_id: u32) -> RankedList {
        RankedList {
            query_id: self.query_id,
            results: self
                .results
                .iter()
                .copied()
                .filter(|r| r.0 != image_id)
                .collect(),
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.results.iter().map(|r| r.0)
    }

    pub fn score_of(&self, image_id: u32) -> Option<f64> {
        self.results.iter().find(|r| r.0 == image_id).map(|r| r.1)
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }
}

/// Work done by one query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TraversalStats {
    pub postings_visited: u64,
    /// Non-empty entries scanned.
    pub entries_visited: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub ranked: RankedList,
    pub stats: TraversalStats,
}

#[inline]
fn hamming_kernel(d: u32, threshold: u32, sigma: f64) -> f64 {
    if d < threshold {
        let d = d as f64;
        (-(d * d) / (sigma * sigma)).exp()
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn color_factor(q: CnSignature, db: CnSignature, params: &QueryParams) -> f64 {
    if !params.enable_color_he {
        return 1.0;
    }
    let d = hamming_distance(q.bits() as u64, db.bits() as u64, CN_SIG_BITS);
    hamming_kernel(d, params.kappa_color, params.sigma_color)
}

#[inline]
pub(crate) fn sift_factor(q: SiftSignature, db: SiftSignature, params: &QueryParams) -> f64 {
    if !params.enable_sift_he {
        return 1.0;
    }
    let d = hamming_distance(q.bits(), db.bits(), SIFT_SIG_BITS);
    hamming_kernel(d, params.tau_sift, params.sigma_sift)
}

/// Strength of a match between two features already sharing an entry:
/// the product of the enabled color and SIFT Hamming kernels.
pub fn match_weight(
    q_sift: SiftSignature,
    q_cn: CnSignature,
    db: &Posting,
    params: &QueryParams,
) -> f64 {
    color_factor(q_cn, db.cn_sig, params) * sift_factor(q_sift, db.sift_sig, params)
}

/// Burstiness scale for `t` matches between one query feature and one image.
pub fn burstiness_factor(t: u32) -> f64 {
    1.0 / (t as f64).sqrt()
}

/// Applies the intra-image burstiness rule to the matches of one query
/// feature against one database image.
pub fn burstiness_reweight(weights: &[f64]) -> Vec<f64> {
    if weights.is_empty() {
        return Vec::new();
    }
    let s = burstiness_factor(weights.len() as u32);
    weights.iter().map(|w| w * s).collect()
}

pub(crate) fn idf_value(n_images: u32, n_pair: u32, log: bool) -> f64 {
    let ratio = n_images as f64 / n_pair as f64;
    if log {
        ratio.ln()
    } else {
        ratio
    }
}

/// Per-query score accumulation with per-feature burstiness grouping.
struct Accumulator {
    burst: bool,
    scores: HashMap<u32, f64>,
    current: HashMap<u32, (f64, u32)>,
}

impl Accumulator {
    fn new(burst: bool) -> Self {
        Accumulator {
            burst,
            scores: HashMap::new(),
            current: HashMap::new(),
        }
    }

    #[inline]
    fn add(&mut self, image_id: u32, weight: f64) {
        let e = self.current.entry(image_id).or_insert((0.0, 0));
        e.0 += weight;
        e.1 += 1;
    }

    fn end_feature(&mut self) {
        for (image_id, (sum, t)) in self.current.drain() {
            let v = if self.burst {
                sum * burstiness_factor(t)
            } else {
                sum
            };
            *self.scores.entry(image_id).or_insert(0.0) += v;
        }
    }

    fn finish(
        self,
        query_id: u32,
        query_norm: f64,
        norm_of: impl Fn(u32) -> Option<f64>,
    ) -> Result<RankedList> {
        let mut results = Vec::with_capacity(self.scores.len());
        for (id, acc) in self.scores {
            let n = norm_of(id)
                .ok_or_else(|| Error::format(format!("no norm for indexed image {id}")))?;
            results.push((id, acc / (query_norm * n)));
        }
        Ok(RankedList::new(query_id, results))
    }
}

/// Scores every database image against `query` with the coupled multi-index.
pub fn query_multi_index(
    query: &ImageRecord,
    index: &MultiIndex,
    models: &Models,
    params: &QueryParams,
) -> Result<QueryOutcome> {
    if !index.is_frozen() {
        return Err(Error::NotFrozen);
    }
    if index.k_s() != models.k_s() || index.k_c() != models.k_c() {
        return Err(Error::Config(format!(
            "index is {} x {} but codebooks are {} x {}",
            index.k_s(),
            index.k_c(),
            models.k_s(),
            models.k_c()
        )));
    }
    params.validate(index.k_s(), Some(index.k_c()))?;

    let mut stats = TraversalStats::default();
    if query.features.is_empty() {
        return Ok(QueryOutcome {
            ranked: RankedList::empty(query.image_id),
            stats,
        });
    }

    let n_images = index.idf_table().n_images();
    let mut acc = Accumulator::new(params.enable_burst);
    let mut hist: HashMap<(u32, u32), u32> = HashMap::new();
    let mut color_mask = vec![false; index.k_c() as usize];
    for f in &query.features {
        let sift_words = models
            .sift_book
            .quantize_multiple(f.sift.as_slice(), params.ma_sift)?;
        let color_words = models
            .color_book
            .quantize_multiple(f.color.as_slice(), params.ma_color)?;
        *hist
            .entry((sift_words.word_ids[0], color_words.word_ids[0]))
            .or_default() += 1;
        let q_cn = cn_binarize(&f.color);
        let proj = if params.enable_sift_he {
            Some(models.he.project(f.sift.as_slice())?)
        } else {
            None
        };

        color_mask.iter_mut().for_each(|m| *m = false);
        for &j in &color_words.word_ids {
            color_mask[j as usize] = true;
        }
        for &i in &sift_words.word_ids {
            let q_sift = match &proj {
                Some(p) => SiftSignature(crate::signatures::signature_bits(
                    p,
                    models.he.thresholds(i as usize).unwrap(),
                )),
                None => SiftSignature(0),
            };
            for (j, postings) in index.row(i) {
                if !color_mask[j as usize] {
                    continue;
                }
                stats.entries_visited += 1;
                stats.postings_visited += postings.len() as u64;
                let idf = idf_value(n_images, index.idf_table().count(i, j), params.log_idf);
                let idf2 = idf * idf;
                for p in postings {
                    let w = match_weight(q_sift, q_cn, p, params);
                    if w > 0.0 {
                        acc.add(p.image_id, w * idf2);
                    }
                }
            }
        }
        acc.end_feature();
    }
    let q_norm = image_norm(hist.values().copied())?;
    let ranked = acc.finish(query.image_id, q_norm, |id| index.norm_table().get(id))?;
    Ok(QueryOutcome { ranked, stats })
}

/// Scores every database image with the SIFT-only inverted index.
pub fn query_baseline(
    query: &ImageRecord,
    index: &BaselineIndex,
    sift_book: &Codebook,
    he: &HeModel,
    params: &QueryParams,
) -> Result<QueryOutcome> {
    if !index.is_frozen() {
        return Err(Error::NotFrozen);
    }
    if index.k_s() as usize != sift_book.len() || he.num_words() != sift_book.len() {
        return Err(Error::Config(format!(
            "baseline index has {} words, codebook {}, HE model {}",
            index.k_s(),
            sift_book.len(),
            he.num_words()
        )));
    }
    params.validate(index.k_s(), None)?;

    let mut stats = TraversalStats::default();
    if query.features.is_empty() {
        return Ok(QueryOutcome {
            ranked: RankedList::empty(query.image_id),
            stats,
        });
    }

    let n_images = InvertedIndex::num_images(index);
    let mut acc = Accumulator::new(params.enable_burst);
    let mut hist: HashMap<u32, u32> = HashMap::new();
    for f in &query.features {
        let sift_words = sift_book.quantize_multiple(f.sift.as_slice(), params.ma_sift)?;
        *hist.entry(sift_words.word_ids[0]).or_default() += 1;
        let proj = if params.enable_sift_he {
            Some(he.project(f.sift.as_slice())?)
        } else {
            None
        };
        for &i in &sift_words.word_ids {
            let list = index.list(i);
            if list.is_empty() {
                continue;
            }
            let q_sift = match &proj {
                Some(p) => SiftSignature(crate::signatures::signature_bits(
                    p,
                    he.thresholds(i as usize).unwrap(),
                )),
                None => SiftSignature(0),
            };
            stats.entries_visited += 1;
            stats.postings_visited += list.len() as u64;
            let idf = idf_value(n_images, index.image_count(i), params.log_idf);
            let idf2 = idf * idf;
            for p in list {
                // Color factor is 1 here; the product keeps the arithmetic
                // identical to the multi-index path.
                let w = 1.0 * sift_factor(q_sift, p.sift_sig, params);
                if w > 0.0 {
                    acc.add(p.image_id, w * idf2);
                }
            }
        }
        acc.end_feature();
    }
    let q_norm = image_norm(hist.values().copied())?;
    let ranked = acc.finish(query.image_id, q_norm, |id| index.norm_table().get(id))?;
    Ok(QueryOutcome { ranked, stats })
}

/// Dispatches on the index flavour.
pub fn query_any(
    query: &ImageRecord,
    index: &AnyIndex,
    models: &Models,
    params: &QueryParams,
) -> Result<QueryOutcome> {
    match index {
        AnyIndex::Multi(m) => query_multi_index(query, m, models, params),
        AnyIndex::Baseline(b) => query_baseline(query, b, &models.sift_book, &models.he, params),
    }
}
