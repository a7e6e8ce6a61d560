use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cmi::codebook::{train_kmeans, Codebook, Family};
use cmi::eval::{
    evaluate_queries, ranked_lists_csv, run_experiment, Config, ExperimentConfig, GroundTruth,
};
use cmi::features::{
    generate_synthetic_corpus, read_corpus, write_corpus, write_corpus_text, ImageRecord,
    SynthConfig,
};
use cmi::index::{
    build_baseline_index, build_multi_index, load_any_index, memory_footprint, save_index,
    AnyIndex, InvertedIndex, MemoryProfile, Models,
};
use cmi::query::{query_any, QueryParams};
use cmi::signatures::{train_he_model, HeModel};
use cmi::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cmi",
    version,
    about = "Coupled SIFT x color multi-index retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Baseline,
    Cmi,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known groups.
    GenSynth {
        #[arg(long, default_value_t = 100)]
        groups: usize,
        #[arg(long, default_value_t = 4)]
        images_per_group: usize,
        #[arg(long, default_value_t = 50)]
        features: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0.1)]
        illum: f64,
        /// Share SIFT centers across groups from a pool of this size.
        #[arg(long)]
        sift_pool: Option<usize>,
        #[arg(long, default_value_t = 0.3)]
        color_concentration: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the ground truth (image_id group_id per line).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Write the text format instead of binary.
        #[arg(long)]
        text: bool,
    },
    /// Train a k-means codebook on one descriptor family of a corpus.
    TrainCodebook {
        #[arg(long)]
        family: Family,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the SIFT Hamming Embedding model.
    TrainHe {
        #[arg(long)]
        sift_book: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Build a multi-index or a baseline index.
    BuildIndex {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        sift_book: PathBuf,
        /// Required for `--mode cmi`.
        #[arg(long)]
        color_book: Option<PathBuf>,
        #[arg(long)]
        he: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the database for one image of the corpus named in the params file.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        query_id: u32,
        /// Results to print.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Query with every corpus image and score against ground truth.
    Evaluate {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Optional rank/score CSV for plotting.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Traversal statistics and memory footprint of an index.
    Bench {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        params: PathBuf,
    },
    /// Run the ablation experiment described by a config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// JSON sidecar with the same numbers.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
}

const PARAM_FILE_KEYS: &[&str] = &["corpus", "sift_book", "color_book", "he"];

/// Models and query corpus named by a params file.
struct Session {
    models: Models,
    corpus: Vec<ImageRecord>,
    params: QueryParams,
}

fn required(c: &Config, key: &str) -> Result<PathBuf> {
    c.existing_path(key)?
        .ok_or_else(|| Error::Config(format!("params file needs `{key} = <path>`")))
}

fn open_session(params_path: &Path, index: &AnyIndex) -> Result<Session> {
    let c = Config::load(params_path)?;
    c.check_keys(PARAM_FILE_KEYS)?;
    let sift_book = Codebook::load(&required(&c, "sift_book")?)?;
    let he = HeModel::load(&required(&c, "he")?)?;
    let color_book = match (index, c.existing_path("color_book")?) {
        (_, Some(p)) => Codebook::load(&p)?,
        (AnyIndex::Baseline(_), None) => Codebook::new(Family::Color, &[[1.0f32 / 11.0; 11]])?,
        (AnyIndex::Multi(_), None) => {
            return Err(Error::Config(
                "params file needs `color_book = <path>`".into(),
            ))
        }
    };
    let models = Models::new(sift_book, color_book, he)?;
    let corpus = read_corpus(&required(&c, "corpus")?)?;
    let params = c.query_params(QueryParams::for_color_codebook(models.k_c()))?;
    Ok(Session {
        models,
        corpus,
        params,
    })
}

fn profile_for(index: &AnyIndex, params: &QueryParams) -> MemoryProfile {
    match (index, params.enable_sift_he) {
        (AnyIndex::Multi(_), true) => MemoryProfile::CmiHe,
        (AnyIndex::Multi(_), false) => MemoryProfile::Cmi,
        (AnyIndex::Baseline(_), true) => MemoryProfile::He,
        (AnyIndex::Baseline(_), false) => MemoryProfile::Baseline,
    }
}

fn descriptors(corpus: &[ImageRecord], family: Family) -> Vec<&[f32]> {
    corpus
        .iter()
        .flat_map(|r| r.features.iter())
        .map(|f| match family {
            Family::Color => f.color.as_slice(),
            _ => f.sift.as_slice(),
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth {
            groups,
            images_per_group,
            features,
            noise,
            illum,
            sift_pool,
            color_concentration,
            seed,
            out,
            truth,
            text,
        } => {
            let cfg = SynthConfig {
                groups,
                images_per_group,
                features_per_image: features,
                noise,
                illum,
                sift_pool,
                color_concentration,
            };
            let corpus = generate_synthetic_corpus(&cfg, seed)?;
            if text {
                write_corpus_text(&out, &corpus)?;
            } else {
                write_corpus(&out, &corpus)?;
            }
            if let Some(t) = truth {
                GroundTruth::from_corpus(&corpus)?.save(&t)?;
            }
            println!("wrote {} images to {}", corpus.len(), out.display());
        }
        Command::TrainCodebook {
            family,
            k,
            iters,
            seed,
            input,
            out,
        } => {
            if family == Family::Other {
                return Err(Error::Config("family must be `sift` or `color`".into()));
            }
            let corpus = read_corpus(&input)?;
            let book = train_kmeans(&descriptors(&corpus, family), k, iters, seed)?;
            book.save(&out)?;
            println!("trained {} words of dimension {}", book.len(), book.dim());
        }
        Command::TrainHe {
            sift_book,
            input,
            out,
            seed,
        } => {
            let book = Codebook::load(&sift_book)?;
            let corpus = read_corpus(&input)?;
            let labelled = descriptors(&corpus, Family::Sift)
                .into_iter()
                .map(|s| Ok((s, book.quantize_nearest(s)?)))
                .collect::<Result<Vec<_>>>()?;
            let (he, report) = train_he_model(&labelled, &book, seed)?;
            he.save(&out)?;
            println!(
                "trained HE thresholds for {} words ({} without samples)",
                he.num_words(),
                report.empty_words.len()
            );
        }
        Command::BuildIndex {
            mode,
            sift_book,
            color_book,
            he,
            input,
            out,
        } => {
            let sift_book = Codebook::load(&sift_book)?;
            let he = HeModel::load(&he)?;
            let corpus = read_corpus(&input)?;
            match mode {
                Mode::Cmi => {
                    let path = color_book
                        .ok_or_else(|| Error::Config("--color-book is required for cmi".into()))?;
                    let models = Models::new(sift_book, Codebook::load(&path)?, he)?;
                    let index = build_multi_index(&corpus, &models)?;
                    save_index(&index, &out)?;
                    println!(
                        "indexed {} images, {} postings",
                        index.num_images(),
                        index.num_postings()
                    );
                }
                Mode::Baseline => {
                    let index = build_baseline_index(&corpus, &sift_book, &he)?;
                    index.save(&out)?;
                    println!(
                        "indexed {} images, {} postings",
                        index.num_images(),
                        index.num_postings()
                    );
                }
            }
        }
        Command::Query {
            index,
            params,
            query_id,
            top,
        } => {
            let index = load_any_index(&index)?;
            let s = open_session(&params, &index)?;
            let q = s
                .corpus
                .iter()
                .find(|r| r.image_id == query_id)
                .ok_or_else(|| {
                    Error::Config(format!("image {query_id} not in the query corpus"))
                })?;
            let out = query_any(q, &index, &s.models, &s.params)?;
            println!("rank image_id score");
            for (r, (id, score)) in out.ranked.results.iter().take(top).enumerate() {
                println!("{} {} {:.6}", r + 1, id, score);
            }
            println!("postings_visited = {}", out.stats.postings_visited);
            println!("entries_visited = {}", out.stats.entries_visited);
        }
        Command::Evaluate {
            index,
            truth,
            params,
            report,
            scores,
        } => {
            let index = load_any_index(&index)?;
            let s = open_session(&params, &index)?;
            let truth = GroundTruth::load(&truth)?;
            let profile = profile_for(&index, &s.params);
            let (m, lists) =
                evaluate_queries(&s.corpus, &index, &s.models, &s.params, &truth, profile)?;
            let fmt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into());
            let text = format!(
                "# cmi evaluation report\nqueries = {}\nns_score = {}\nmap = {}\ntop1 = {:.6}\ntop10 = {:.6}\n\
                 mean_postings_visited = {:.3}\nmean_entries_visited = {:.3}\nbytes_per_feature = {}\n",
                m.per_query.len(),
                fmt(m.ns_score),
                fmt(m.map),
                m.top1,
                m.top10,
                m.mean_postings_visited,
                m.mean_entries_visited,
                m.memory.bytes_per_feature
            );
            std::fs::write(&report, &text)?;
            let sidecar =
                serde_json::to_string_pretty(&m).map_err(|e| Error::Config(e.to_string()))?;
            std::fs::write(report.with_extension("json"), sidecar)?;
            if let Some(p) = scores {
                std::fs::write(p, ranked_lists_csv(&lists))?;
            }
            print!("{text}");
        }
        Command::Bench { index, params } => {
            let index = load_any_index(&index)?;
            let s = open_session(&params, &index)?;
            let mut postings = 0u64;
            let mut entries = 0u64;
            for q in &s.corpus {
                let st = query_any(q, &index, &s.models, &s.params)?.stats;
                postings += st.postings_visited;
                entries += st.entries_visited;
            }
            let n = s.corpus.len().max(1) as f64;
            println!("queries = {}", s.corpus.len());
            println!("mean_postings_visited = {:.3}", postings as f64 / n);
            println!("mean_entries_visited = {:.3}", entries as f64 / n);
            for p in MemoryProfile::ALL {
                let f = memory_footprint(index.as_inverted(), p);
                println!(
                    "memory {:<8} bytes_per_feature = {:<5} total_bytes = {} directory_bytes = {}",
                    p.name(),
                    f.bytes_per_feature,
                    f.total_bytes,
                    f.directory_bytes
                );
            }
        }
        Command::Experiment {
            config,
            report,
            sidecar,
        } => {
            let c = Config::load(&config)?;
            let r = run_experiment(&ExperimentConfig::from_config(&c)?)?;
            let text = r.to_text();
            if let Some(p) = report.or_else(|| c.path("report")) {
                std::fs::write(p, &text)?;
            }
            if let Some(p) = sidecar.or_else(|| c.path("sidecar")) {
                std::fs::write(p, r.to_json()?)?;
            }
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
