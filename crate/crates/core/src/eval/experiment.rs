//! End-to-end experiment: corpus, training, both index kinds, an ablation
//! grid of query settings, and a metrics report per row.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::Config;
use super::metrics::{
    average_precision, mean_average_precision, ns_score, top_k_precision, GroundTruth,
};
use crate::codebook::train_kmeans;
use crate::error::{Error, Result};
use crate::features::{generate_synthetic_corpus, read_corpus, ImageRecord, SynthConfig};
use crate::index::{
    build_baseline_index, build_multi_index, memory_footprint, AnyIndex, MemoryFootprint,
    MemoryProfile, Models,
};
use crate::query::{query_any, QueryParams, RankedList};
use crate::signatures::train_he_model;

const EXPERIMENT_KEYS: &[&str] = &[
    "seed",
    "corpus",
    "groups",
    "images_per_group",
    "features_per_image",
    "noise",
    "illum",
    "sift_pool",
    "color_concentration",
    "k_s",
    "k_c",
    "kmeans_iters",
    "grid",
    "max_queries",
    "report",
    "sidecar",
];

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    Synthetic(SynthConfig),
    File(PathBuf),
}

/// Which rows of the ablation grid to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grid {
    /// All 16 combinations of the four toggles.
    Full,
    /// Baseline and c-MI, everything else at the configured settings.
    Pair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusSource,
    pub k_s: usize,
    pub k_c: usize,
    pub kmeans_iters: usize,
    /// Settings used when a toggle is on.
    pub params: QueryParams,
    pub grid: Grid,
    /// Query with every `n / max_queries`-th image instead of all of them.
    pub max_queries: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            corpus: CorpusSource::Synthetic(SynthConfig::default()),
            k_s: 256,
            k_c: 32,
            kmeans_iters: 15,
            params: QueryParams::for_color_codebook(32),
            grid: Grid::Full,
            max_queries: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_config(c: &Config) -> Result<Self> {
        c.check_keys(EXPERIMENT_KEYS)?;
        let d = ExperimentConfig::default();
        let corpus = match c.existing_path("corpus")? {
            Some(p) => CorpusSource::File(p),
            None => {
                let s = SynthConfig::default();
                CorpusSource::Synthetic(SynthConfig {
                    groups: c.get_or("groups", s.groups)?,
                    images_per_group: c.get_or("images_per_group", s.images_per_group)?,
                    features_per_image: c.get_or("features_per_image", s.features_per_image)?,
                    noise: c.get_or("noise", s.noise)?,
                    illum: c.get_or("illum", s.illum)?,
                    sift_pool: c.get("sift_pool")?,
                    color_concentration: c.get_or("color_concentration", s.color_concentration)?,
                })
            }
        };
        let k_c: usize = c.get_or("k_c", d.k_c)?;
        let grid = match c.raw("grid").unwrap_or("full") {
            "full" => Grid::Full,
            "pair" => Grid::Pair,
            other => {
                return Err(Error::Config(format!(
                    "grid must be `full` or `pair`, got `{other}`"
                )))
            }
        };
        Ok(ExperimentConfig {
            seed: c.get_or("seed", d.seed)?,
            corpus,
            k_s: c.get_or("k_s", d.k_s)?,
            k_c,
            kmeans_iters: c.get_or("kmeans_iters", d.kmeans_iters)?,
            params: c.query_params(QueryParams::for_color_codebook(k_c as u32))?,
            grid,
            max_queries: c.get("max_queries")?,
        })
    }
}

/// The four switches of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Toggles {
    pub cmi: bool,
    pub burst: bool,
    pub he: bool,
    pub ma: bool,
}

impl Toggles {
    pub fn all() -> Vec<Toggles> {
        (0..16u8)
            .map(|b| Toggles {
                cmi: b & 8 != 0,
                burst: b & 4 != 0,
                he: b & 2 != 0,
                ma: b & 1 != 0,
            })
            .collect()
    }

    /// Query settings for this row. MA off means single SIFT assignment; the
    /// color assignment of c-MI rows is left as configured.
    pub fn apply(self, on: &QueryParams) -> QueryParams {
        QueryParams {
            ma_sift: if self.ma { on.ma_sift } else { 1 },
            enable_burst: self.burst && on.enable_burst,
            enable_sift_he: self.he && on.enable_sift_he,
            enable_color_he: self.cmi && on.enable_color_he,
            ..*on
        }
    }

    pub fn memory_profile(self) -> MemoryProfile {
        match (self.cmi, self.he) {
            (false, false) => MemoryProfile::Baseline,
            (true, false) => MemoryProfile::Cmi,
            (false, true) => MemoryProfile::He,
            (true, true) => MemoryProfile::CmiHe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub query_id: u32,
    pub ns_score: Option<f64>,
    pub average_precision: Option<f64>,
    pub top1: f64,
    pub top10: f64,
    pub postings_visited: u64,
    pub entries_visited: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    /// `None` unless every query's group has four images.
    pub ns_score: Option<f64>,
    pub map: Option<f64>,
    pub top1: f64,
    pub top10: f64,
    pub mean_postings_visited: f64,
    pub mean_entries_visited: f64,
    pub memory: MemoryFootprint,
    pub per_query: Vec<QueryMetrics>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Runs every query against `index` and scores the results.
pub fn evaluate_queries(
    queries: &[ImageRecord],
    index: &AnyIndex,
    models: &Models,
    params: &QueryParams,
    truth: &GroundTruth,
    profile: MemoryProfile,
) -> Result<(MetricsReport, Vec<RankedList>)> {
    let outcomes = queries
        .par_iter()
        .map(|q| query_any(q, index, models, params))
        .collect::<Result<Vec<_>>>()?;
    let mut per_query = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        per_query.push(QueryMetrics {
            query_id: o.ranked.query_id,
            ns_score: ns_score(&o.ranked, truth).ok(),
            average_precision: average_precision(&o.ranked, truth),
            top1: top_k_precision(&o.ranked, truth, 1)?,
            top10: top_k_precision(&o.ranked, truth, 10)?,
            postings_visited: o.stats.postings_visited,
            entries_visited: o.stats.entries_visited,
        });
    }
    let ns_all: Option<Vec<f64>> = per_query.iter().map(|q| q.ns_score).collect();
    let aps: Vec<Option<f64>> = per_query.iter().map(|q| q.average_precision).collect();
    let report = MetricsReport {
        ns_score: ns_all
            .filter(|v| !v.is_empty())
            .map(|v| mean(v.into_iter())),
        map: mean_average_precision(&aps),
        top1: mean(per_query.iter().map(|q| q.top1)),
        top10: mean(per_query.iter().map(|q| q.top10)),
        mean_postings_visited: mean(per_query.iter().map(|q| q.postings_visited as f64)),
        mean_entries_visited: mean(per_query.iter().map(|q| q.entries_visited as f64)),
        memory: memory_footprint(index.as_inverted(), profile),
        per_query,
    };
    Ok((report, outcomes.into_iter().map(|o| o.ranked).collect()))
}

/// Trains both codebooks and the HE model on every feature of `corpus`.
pub fn train_models(
    corpus: &[ImageRecord],
    k_s: usize,
    k_c: usize,
    iters: usize,
    seed: u64,
) -> Result<Models> {
    let sift: Vec<&[f32]> = corpus
        .iter()
        .flat_map(|r| r.features.iter().map(|f| f.sift.as_slice()))
        .collect();
    let color: Vec<&[f32]> = corpus
        .iter()
        .flat_map(|r| r.features.iter().map(|f| f.color.as_slice()))
        .collect();
    if sift.is_empty() {
        return Err(Error::ZeroFeatures);
    }
    let sift_book = train_kmeans(&sift, k_s, iters, seed)?;
    let color_book = train_kmeans(&color, k_c, iters, seed.wrapping_add(1))?;
    let labelled: Vec<(&[f32], u32)> = sift
        .par_iter()
        .map(|s| Ok((*s, sift_book.quantize_nearest(s)?)))
        .collect::<Result<_>>()?;
    let (he, report) = train_he_model(&labelled, &sift_book, seed.wrapping_add(2))?;
    if !report.empty_words.is_empty() {
        log::warn!(
            "{} SIFT words received no HE training samples",
            report.empty_words.len()
        );
    }
    Models::new(sift_book, color_book, he)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowReport {
    pub toggles: Toggles,
    pub params: QueryParams,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub images: usize,
    pub features: usize,
    pub groups: usize,
    pub k_s: usize,
    pub k_c: usize,
    pub queries: usize,
    /// Share of SIFT words whose features come from more than one group.
    pub shared_sift_words: f64,
    pub rows: Vec<RowReport>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl ExperimentReport {
    pub fn row(&self, t: Toggles) -> Option<&RowReport> {
        self.rows.iter().find(|r| r.toggles == t)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# cmi experiment report");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "images = {}", self.images);
        let _ = writeln!(s, "features = {}", self.features);
        let _ = writeln!(s, "groups = {}", self.groups);
        let _ = writeln!(s, "k_s = {}", self.k_s);
        let _ = writeln!(s, "k_c = {}", self.k_c);
        let _ = writeln!(s, "queries = {}", self.queries);
        let _ = writeln!(s, "shared_sift_words = {:.4}", self.shared_sift_words);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<5} {:<5} {:<5} {:<5} {:>8} {:>8} {:>8} {:>8} {:>14} {:>13}",
            "cmi",
            "burst",
            "he",
            "ma",
            "ns",
            "map",
            "top1",
            "top10",
            "postings/query",
            "bytes/feature"
        );
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{:<5} {:<5} {:<5} {:<5} {:>8} {:>8} {:>8.4} {:>8.4} {:>14.1} {:>13}",
                on_off(r.toggles.cmi),
                on_off(r.toggles.burst),
                on_off(r.toggles.he),
                on_off(r.toggles.ma),
                fmt_opt(m.ns_score),
                fmt_opt(m.map),
                m.top1,
                m.top10,
                m.mean_postings_visited,
                m.memory.bytes_per_feature
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialize report: {e}")))
    }
}

/// Fraction of used SIFT words whose nearest-word features span two or more groups.
pub fn shared_word_fraction(corpus: &[ImageRecord], models: &Models) -> Result<f64> {
    let mut groups: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); models.sift_book.len()];
    for r in corpus {
        for f in &r.features {
            groups[models.sift_book.quantize_nearest(f.sift.as_slice())? as usize]
                .insert(r.group_id);
        }
    }
    let used = groups.iter().filter(|g| !g.is_empty()).count();
    if used == 0 {
        return Ok(0.0);
    }
    Ok(groups.iter().filter(|g| g.len() > 1).count() as f64 / used as f64)
}

fn load_corpus(source: &CorpusSource, seed: u64) -> Result<Vec<ImageRecord>> {
    match source {
        CorpusSource::Synthetic(s) => generate_synthetic_corpus(s, seed),
        CorpusSource::File(p) => read_corpus(p),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let corpus = load_corpus(&cfg.corpus, cfg.seed)?;
    let truth = GroundTruth::from_corpus(&corpus)?;
    log::info!("corpus: {} images", corpus.len());
    let models = train_models(&corpus, cfg.k_s, cfg.k_c, cfg.kmeans_iters, cfg.seed)?;
    let multi = AnyIndex::Multi(build_multi_index(&corpus, &models)?);
    let base = AnyIndex::Baseline(build_baseline_index(
        &corpus,
        &models.sift_book,
        &models.he,
    )?);

    let queries: Vec<ImageRecord> = match cfg.max_queries {
        Some(0) => return Err(Error::Config("max_queries must be positive".into())),
        Some(m) if m < corpus.len() => {
            let step = corpus.len().div_ceil(m);
            corpus.iter().step_by(step).cloned().collect()
        }
        _ => corpus.clone(),
    };

    let toggles = match cfg.grid {
        Grid::Full => Toggles::all(),
        Grid::Pair => vec![
            Toggles {
                cmi: false,
                burst: true,
                he: true,
                ma: true,
            },
            Toggles {
                cmi: true,
                burst: true,
                he: true,
                ma: true,
            },
        ],
    };
    let mut rows = Vec::with_capacity(toggles.len());
    for t in toggles {
        let params = t.apply(&cfg.params);
        let index = if t.cmi { &multi } else { &base };
        let (metrics, _) = evaluate_queries(
            &queries,
            index,
            &models,
            &params,
            &truth,
            t.memory_profile(),
        )?;
        log::info!("row {t:?}: map {:?}", metrics.map);
        rows.push(RowReport {
            toggles: t,
            params,
            metrics,
        });
    }
    let groups: BTreeSet<u32> = corpus.iter().map(|r| r.group_id).collect();
    Ok(ExperimentReport {
        seed: cfg.seed,
        images: corpus.len(),
        features: corpus.iter().map(|r| r.features.len()).sum(),
        groups: groups.len(),
        k_s: cfg.k_s,
        k_c: cfg.k_c,
        queries: queries.len(),
        shared_sift_words: shared_word_fraction(&corpus, &models)?,
        rows,
    })
}

/// Loads a config file, runs it, and writes the report files it names.
pub fn run_experiment_file(path: &Path) -> Result<ExperimentReport> {
    let c = Config::load(path)?;
    let report = run_experiment(&ExperimentConfig::from_config(&c)?)?;
    if let Some(p) = c.path("report") {
        std::fs::write(p, report.to_text())?;
    }
    if let Some(p) = c.path("sidecar") {
        std::fs::write(p, report.to_json()?)?;
    }
    Ok(report)
}

/// `query_id,rank,image_id,score` lines for external plotting.
pub fn ranked_lists_csv(lists: &[RankedList]) -> String {
    let mut s = String::from("query_id,rank,image_id,score\n");
    for l in lists {
        for (rank, (id, score)) in l.results.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{:.12}", l.query_id, rank + 1, id, score);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            corpus: CorpusSource::Synthetic(SynthConfig {
                groups: 12,
                features_per_image: 20,
                ..SynthConfig::default()
            }),
            k_s: 40,
            k_c: 8,
            kmeans_iters: 8,
            params: QueryParams::for_color_codebook(8),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn grid_has_sixteen_distinct_rows() {
        let t = Toggles::all();
        assert_eq!(t.len(), 16);
        assert_eq!(t.iter().collect::<BTreeSet<_>>().len(), 16);
        let off = Toggles {
            cmi: false,
            burst: false,
            he: false,
            ma: false,
        }
        .apply(&QueryParams::default());
        assert_eq!(off.ma_sift, 1);
        assert!(!off.enable_burst && !off.enable_sift_he && !off.enable_color_he);
    }

    #[test]
    fn full_run_is_deterministic_and_consistent() {
        let cfg = small();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.rows.len(), 16);
        for r in &a.rows {
            let m = &r.metrics;
            let ns = mean(m.per_query.iter().map(|q| q.ns_score.unwrap()));
            assert!((m.ns_score.unwrap() - ns).abs() < 1e-12);
            assert!((0.0..=4.0).contains(&ns));
            let map = m.map.unwrap();
            assert!((0.0..=1.0).contains(&map));
            assert!((m.top1 - mean(m.per_query.iter().map(|q| q.top1))).abs() < 1e-12);
            assert!(m.top1 <= m.top10);
        }
    }

    #[test]
    fn config_keys() {
        let c = Config::parse("seed = 9\nk_c = 10\ngrid = pair\nma_sift = 2\ngroups = 3").unwrap();
        let e = ExperimentConfig::from_config(&c).unwrap();
        assert_eq!(e.seed, 9);
        assert_eq!(e.params.ma_color, 5);
        assert_eq!(e.params.ma_sift, 2);
        assert_eq!(e.grid, Grid::Pair);
        assert!(ExperimentConfig::from_config(&Config::parse("bogus = 1").unwrap()).is_err());
        let missing = Config::parse("corpus = /no/such/file.cmid").unwrap();
        assert!(matches!(
            ExperimentConfig::from_config(&missing),
            Err(Error::MissingInput(_))
        ));
    }

    #[test]
    fn csv_lines() {
        let l = RankedList::new(3, vec![(1, 0.5), (2, 0.25)]);
        let csv = ranked_lists_csv(&[l]);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("3,1,1,0.500000000000"));
    }
}
