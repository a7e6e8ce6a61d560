//! Exhaustive reference scorer. Recomputes quantization, signatures, idf and
//! norms from the raw corpus and compares every query feature against every
//! database feature, without touching an index.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::{QueryParams, RankedList};
use crate::codebook::{squared_distance, Codebook};
use crate::error::Result;
use crate::features::{FeatureTuple, ImageRecord};
use crate::index::Models;
use crate::signatures::{cn_binarize, CnSignature};

/// Word ids ordered by distance, ties by id.
fn rank_words(book: &Codebook, desc: &[f32]) -> Vec<u32> {
    let mut d: Vec<(f64, u32)> = book
        .centroids()
        .enumerate()
        .map(|(w, c)| (squared_distance(desc, c), w as u32))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().map(|(_, w)| w).collect()
}

fn popcount_diff(a: u64, b: u64) -> u32 {
    let mut x = a ^ b;
    let mut n = 0;
    while x != 0 {
        x &= x - 1;
        n += 1;
    }
    n
}

fn gaussian_gate(d: u32, limit: u32, sigma: f64) -> f64 {
    if d >= limit {
        return 0.0;
    }
    (-((d * d) as f64) / (sigma * sigma)).exp()
}

struct DbFeature {
    sift_word: u32,
    color_word: u32,
    sift_bits: u64,
    cn: CnSignature,
}

struct QueryFeature {
    sift_words: Vec<u32>,
    color_words: Vec<u32>,
    sift_set: HashSet<u32>,
    color_set: HashSet<u32>,
    projection: Vec<f32>,
    cn: CnSignature,
}

/// Database side prepared once, queried many times.
pub struct BruteForceOracle<'a> {
    models: &'a Models,
    images: Vec<(u32, Vec<DbFeature>)>,
    n_images: u32,
    pair_images: HashMap<(u32, u32), u32>,
    word_images: HashMap<u32, u32>,
    pair_norms: HashMap<u32, f64>,
    word_norms: HashMap<u32, f64>,
}

fn l2(hist: impl Iterator<Item = u32>) -> f64 {
    hist.map(|c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
}

fn he_bits(models: &Models, projection: &[f32], word: u32) -> u64 {
    let th = models
        .he
        .thresholds(word as usize)
        .expect("word within HE model");
    let mut bits = 0u64;
    for k in 0..64 {
        if projection[k] > th[k] {
            bits |= 1 << k;
        }
    }
    bits
}

impl<'a> BruteForceOracle<'a> {
    pub fn new(corpus: &[ImageRecord], models: &'a Models) -> Result<Self> {
        let mut images = Vec::with_capacity(corpus.len());
        let mut pair_images: HashMap<(u32, u32), u32> = HashMap::new();
        let mut word_images: HashMap<u32, u32> = HashMap::new();
        let mut pair_norms = HashMap::new();
        let mut word_norms = HashMap::new();
        for img in corpus {
            let mut feats = Vec::with_capacity(img.features.len());
            let mut pairs: BTreeMap<(u32, u32), u32> = BTreeMap::new();
            let mut words: BTreeMap<u32, u32> = BTreeMap::new();
            for f in &img.features {
                let i = rank_words(&models.sift_book, f.sift.as_slice())[0];
                let j = rank_words(&models.color_book, f.color.as_slice())[0];
                let proj = models.he.project(f.sift.as_slice())?;
                feats.push(DbFeature {
                    sift_word: i,
                    color_word: j,
                    sift_bits: he_bits(models, &proj, i),
                    cn: cn_binarize(&f.color),
                });
                *pairs.entry((i, j)).or_default() += 1;
                *words.entry(i).or_default() += 1;
            }
            for p in pairs.keys() {
                *pair_images.entry(*p).or_default() += 1;
            }
            for w in words.keys() {
                *word_images.entry(*w).or_default() += 1;
            }
            if !feats.is_empty() {
                pair_norms.insert(img.image_id, l2(pairs.values().copied()));
                word_norms.insert(img.image_id, l2(words.values().copied()));
            }
            images.push((img.image_id, feats));
        }
        Ok(BruteForceOracle {
            models,
            images,
            n_images: corpus.len() as u32,
            pair_images,
            word_images,
            pair_norms,
            word_norms,
        })
    }

    fn prepare(
        &self,
        f: &FeatureTuple,
        params: &QueryParams,
        with_color: bool,
    ) -> Result<QueryFeature> {
        let mut sift_words = rank_words(&self.models.sift_book, f.sift.as_slice());
        sift_words.truncate(params.ma_sift);
        let color_words = if with_color {
            let mut c = rank_words(&self.models.color_book, f.color.as_slice());
            c.truncate(params.ma_color);
            c
        } else {
            Vec::new()
        };
        Ok(QueryFeature {
            sift_set: sift_words.iter().copied().collect(),
            color_set: color_words.iter().copied().collect(),
            sift_words,
            color_words,
            projection: self.models.he.project(f.sift.as_slice())?.to_vec(),
            cn: cn_binarize(&f.color),
        })
    }

    fn weight(
        &self,
        q: &QueryFeature,
        y: &DbFeature,
        params: &QueryParams,
        with_color: bool,
    ) -> f64 {
        let mut w = 1.0;
        if with_color && params.enable_color_he {
            let d = popcount_diff(q.cn.bits() as u64, y.cn.bits() as u64);
            w *= gaussian_gate(d, params.kappa_color, params.sigma_color);
        }
        if params.enable_sift_he {
            let d = popcount_diff(
                he_bits(self.models, &q.projection, y.sift_word),
                y.sift_bits,
            );
            w *= gaussian_gate(d, params.tau_sift, params.sigma_sift);
        }
        w
    }

    fn run(
        &self,
        query: &ImageRecord,
        params: &QueryParams,
        with_color: bool,
    ) -> Result<RankedList> {
        if query.features.is_empty() {
            return Ok(RankedList::empty(query.image_id));
        }
        let qs = query
            .features
            .iter()
            .map(|f| self.prepare(f, params, with_color))
            .collect::<Result<Vec<_>>>()?;

        let mut q_hist: HashMap<(u32, u32), u32> = HashMap::new();
        for q in &qs {
            let j = if with_color { q.color_words[0] } else { 0 };
            *q_hist.entry((q.sift_words[0], j)).or_default() += 1;
        }
        let q_norm = l2(q_hist.values().copied());

        let mut results = Vec::new();
        for (image_id, feats) in &self.images {
            let mut total = 0.0;
            let mut any = false;
            for q in &qs {
                let mut matches = Vec::new();
                for y in feats {
                    if !q.sift_set.contains(&y.sift_word)
                        || (with_color && !q.color_set.contains(&y.color_word))
                    {
                        continue;
                    }
                    let w = self.weight(q, y, params, with_color);
                    if w <= 0.0 {
                        continue;
                    }
                    let n = if with_color {
                        self.pair_images[&(y.sift_word, y.color_word)]
                    } else {
                        self.word_images[&y.sift_word]
                    };
                    let ratio = self.n_images as f64 / n as f64;
                    let idf = if params.log_idf { ratio.ln() } else { ratio };
                    matches.push(w * idf * idf);
                }
                if matches.is_empty() {
                    continue;
                }
                any = true;
                let t = matches.len() as f64;
                for m in matches {
                    total += if params.enable_burst { m / t.sqrt() } else { m };
                }
            }
            if any {
                let norm = if with_color {
                    self.pair_norms[image_id]
                } else {
                    self.word_norms[image_id]
                };
                results.push((*image_id, total / (q_norm * norm)));
            }
        }
        Ok(RankedList::new(query.image_id, results))
    }

    /// Reference for the coupled multi-index query.
    pub fn score(&self, query: &ImageRecord, params: &QueryParams) -> Result<RankedList> {
        self.run(query, params, true)
    }

    /// Reference for the SIFT-only baseline query.
    pub fn score_baseline(&self, query: &ImageRecord, params: &QueryParams) -> Result<RankedList> {
        self.run(query, params, false)
    }
}

/// One-shot convenience wrapper around [`BruteForceOracle`].
pub fn brute_force_score(
    query: &ImageRecord,
    corpus: &[ImageRecord],
    models: &Models,
    params: &QueryParams,
) -> Result<RankedList> {
    BruteForceOracle::new(corpus, models)?.score(query, params)
}
