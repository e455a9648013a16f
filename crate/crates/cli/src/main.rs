#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fives_core::data::{holdout_split, load_csv, preprocess, split_dataset, PreprocessOptions, Schema, Splits};
use fives_core::downstream::{
    cmi_rank_pairs, fit_and_score, random_cross_baseline, EvaluationReport, LrConfig, DEFAULT_CROSS_CARDINALITY_CAP,
};
use fives_core::graph::{
    binarize, derive_cross_features, load_crosses_csv, save_crosses_csv, CrossFeature, CrossOptions, Thresholds,
};
use fives_core::model::{check_model_gradients, evaluate, AdjSource, ModelGradCheck};
use fives_core::search::{fit, SearchConfig, SearchResult};
use fives_core::synth::{write_table_csv, xor_table, XorOptions};
use fives_core::theory::{fuzz_prop1, FuzzOptions, SamplerMode};
use fives_core::{FivesError, Result};
use manifest::{manifest_path, RunManifest};

#[derive(Parser)]
#[command(name = "fives", version, about = "Search, extract and evaluate high-order cross features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discretize, encode and split a CSV into train/val/test tables.
    Preprocess {
        #[arg(long)]
        csv: PathBuf,
        /// Fixed test rows; the validation split is then held out of --csv.
        #[arg(long)]
        test_csv: Option<PathBuf>,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        multi_granularity: bool,
        #[arg(long, default_value_t = 5)]
        min_freq: usize,
        /// Train, validation and test fractions.
        #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
        fractions: Vec<f64>,
        /// Validation fraction of --csv when --test-csv is given.
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the adjacency search on preprocessed data.
    Search {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Derive cross features from a search result.
    Extract {
        #[arg(long)]
        search: PathBuf,
        /// One value per propagation layer, or one value for all of them.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        max_order: Option<usize>,
        #[arg(long, default_value_t = 100_000)]
        cap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the L1 logistic regression on train and report test AUC.
    Lr {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "baseline")]
        crosses: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// Pairs kept by the CMI baseline.
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        /// Crosses drawn by the random baseline.
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 2)]
        max_order: usize,
        #[arg(long, default_value_t = 1.0)]
        l1: f64,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_CROSS_CARDINALITY_CAP)]
        cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test AUC of the searched network itself.
    Evaluate {
        #[arg(long)]
        search: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuzz the product-feature mutual information bound.
    Prop1 {
        #[arg(long, default_value_t = 100_000)]
        n_samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "both")]
        mode: SamplerMode,
        #[arg(long, default_value_t = 1e-9)]
        margin: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the model gradients.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        inject_bug: bool,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic XOR dataset as CSV plus its schema.
    SynthXor {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        distractors: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for `xor.csv` and `schema.json`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    None,
    Random,
    Cmi,
}

enum Outcome {
    Success,
    VerificationFailed(String),
}

fn exit_code(err: &FivesError) -> u8 {
    match err {
        FivesError::Numeric(_) | FivesError::NumericDomain(_) | FivesError::DegenerateData(_) | FivesError::Metric(_) => 3,
        _ => 2,
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} does not exist", path.display())).into())
    }
}

fn num_threads() -> usize {
    std::env::var("FIVES_NUM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Preprocess {
            csv,
            test_csv,
            schema,
            out,
            multi_granularity,
            min_freq,
            fractions,
            val_fraction,
            seed,
        } => {
            let mut m = RunManifest::start("preprocess");
            if fractions.len() != 3 {
                return Err(FivesError::Config(format!("--fractions needs 3 values, got {}", fractions.len())));
            }
            require(&csv)?;
            let schema_def = Schema::load(&schema)?;
            let opts = PreprocessOptions { min_freq, multi_granularity };
            let raw = load_csv(&csv, &schema_def)?;
            let splits = match &test_csv {
                None => {
                    let encoded = preprocess(&raw, &opts)?;
                    split_dataset(&encoded, (fractions[0], fractions[1], fractions[2]), seed)?
                }
                Some(test_path) => {
                    let n_train = raw.n_rows();
                    let all = raw.concat(load_csv(test_path, &schema_def)?)?;
                    let encoded = preprocess(&all, &opts)?;
                    let n = encoded.n_rows();
                    let test = encoded.select_rows(&(n_train..n).collect::<Vec<_>>());
                    let rest = encoded.select_rows(&(0..n_train).collect::<Vec<_>>());
                    let (train, val) = holdout_split(&rest, val_fraction, seed)?;
                    Splits { train, val, test }
                }
            };
            splits.save(&out)?;
            let vocab: serde_json::Map<String, serde_json::Value> = splits
                .train
                .columns
                .iter()
                .map(|c| (c.name.clone(), serde_json::json!(c.vocab)))
                .collect();
            write_json(&out.join("vocab.json"), &vocab)?;
            println!(
                "{}",
                serde_json::json!({
                    "train": splits.train.n_rows(),
                    "val": splits.val.n_rows(),
                    "test": splits.test.n_rows(),
                    "features": splits.train.n_features(),
                })
            );
            m.config = Some(schema);
            m.inputs = std::iter::once(csv).chain(test_csv).collect();
            m.outputs = Splits::FILES.iter().map(|f| out.join(f)).chain([out.join("vocab.json")]).collect();
            m.seed = Some(seed);
            m.finish(&manifest_path(&out))?;
        }
        Command::Search { data, config, out, seed } => {
            let mut m = RunManifest::start("search");
            let mut cfg = match &config {
                Some(p) => SearchConfig::load(p)?,
                None => SearchConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            require(&data)?;
            let splits = Splits::load(&data)?;
            let result = fit(&splits.train, &splits.val, &cfg)?;
            result.save(&out)?;
            for e in &result.metrics {
                println!(
                    "{}",
                    serde_json::json!({
                        "epoch": e.epoch,
                        "train_loss": e.train_loss,
                        "val_loss": e.val_loss,
                        "val_auc": e.val_auc,
                        "tau": e.tau,
                    })
                );
            }
            m.config = config;
            m.inputs = vec![data];
            m.outputs = ["adjacency.json", "params.json", "model.json", "config.json", "metrics.ndjson"]
                .iter()
                .map(|f| out.join(f))
                .collect();
            m.seed = Some(cfg.seed);
            m.finish(&manifest_path(&out))?;
        }
        Command::Extract {
            search,
            thresholds,
            max_order,
            cap,
            out,
        } => {
            let mut m = RunManifest::start("extract");
            require(&search)?;
            let result = SearchResult::load(&search)?;
            let k = result.adjacency.soft.k();
            let th = match thresholds {
                None => result.adjacency.thresholds.clone(),
                Some(v) if v.len() == 1 => Thresholds::uniform(k, v[0]),
                Some(v) => Thresholds(v),
            };
            th.validate(k)?;
            let binary = binarize(&result.adjacency.soft, &th)?;
            let opts = CrossOptions {
                max_order: max_order.unwrap_or(usize::MAX),
                cap,
                ..Default::default()
            };
            let crosses = derive_cross_features(&binary, Some(&result.adjacency.soft), &opts)?;
            let names: Vec<&str> = result.layout.spec.names.iter().map(String::as_str).collect();
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            save_crosses_csv(&out, &crosses, &names)?;
            println!("{}", serde_json::json!({ "n_crosses": crosses.len() }));
            m.inputs = vec![search];
            m.outputs = vec![out.clone()];
            m.finish(&manifest_path(&out))?;
        }
        Command::Lr {
            data,
            crosses,
            baseline,
            top_n,
            count,
            max_order,
            l1,
            max_iter,
            tol,
            cap,
            seed,
            out,
        } => {
            let mut m = RunManifest::start("lr");
            require(&data)?;
            let splits = Splits::load(&data)?;
            let names = splits.train.names();
            let (pipeline, list): (&str, Vec<CrossFeature>) = match (&crosses, baseline) {
                (Some(path), _) => ("fives+lr", load_crosses_csv(path, &names)?),
                (None, None | Some(Baseline::None)) => ("lr", Vec::new()),
                (None, Some(Baseline::Random)) => (
                    "random+lr",
                    random_cross_baseline(splits.train.n_features(), count, max_order, seed)?,
                ),
                (None, Some(Baseline::Cmi)) => ("cmi+lr", cmi_rank_pairs(&splits.train, top_n)?),
            };
            let config = LrConfig { l1, max_iter, tol };
            let (_, score) = fit_and_score(&splits.train, &splits.test, &list, &config, cap)?;
            let report = EvaluationReport::new(pipeline, score, &list, &splits.test)?;
            write_json(&out, &report)?;
            println!("{}", serde_json::json!({ "pipeline": pipeline, "auc": score, "n_crosses": list.len() }));
            m.inputs = std::iter::once(data).chain(crosses).collect();
            m.outputs = vec![out.clone()];
            m.seed = Some(seed);
            m.finish(&manifest_path(&out))?;
        }
        Command::Evaluate { search, data, out } => {
            let mut m = RunManifest::start("evaluate");
            require(&search)?;
            let result = SearchResult::load(&search)?;
            require(&data)?;
            let splits = Splits::load(&data)?;
            let adj = result.final_adjacency()?;
            let eval = evaluate(
                &result.params,
                &result.layout,
                &splits.test,
                AdjSource::Fixed(&adj),
                result.config.aggregate_eps,
                1024,
            )?;
            write_json(&out, &serde_json::json!({ "pipeline": "fives", "auc": eval.auc, "loss": eval.loss }))?;
            println!("{}", serde_json::json!({ "pipeline": "fives", "auc": eval.auc }));
            m.inputs = vec![search, data];
            m.outputs = vec![out.clone()];
            m.finish(&manifest_path(&out))?;
        }
        Command::Prop1 {
            n_samples,
            seed,
            mode,
            margin,
            out,
        } => {
            let mut m = RunManifest::start("prop1");
            let report = fuzz_prop1(&FuzzOptions {
                n_samples,
                seed,
                mode,
                margin,
                threads: num_threads(),
                ..Default::default()
            })?;
            write_json(&out, &report)?;
            println!(
                "{}",
                serde_json::json!({
                    "n_samples": report.n_samples,
                    "n_skipped_degenerate": report.n_skipped_degenerate,
                    "n_violations": report.n_violations,
                    "max_ratio": report.max_ratio,
                })
            );
            m.outputs = vec![out.clone()];
            m.seed = Some(seed);
            m.finish(&manifest_path(&out))?;
            if !report.bound_verified() {
                return Ok(Outcome::VerificationFailed(format!(
                    "{} bound violations, {} incremental-bound violations",
                    report.n_violations, report.incremental_bound_violations
                )));
            }
        }
        Command::Gradcheck {
            config,
            seed,
            inject_bug,
            tolerance,
            out,
        } => {
            let mut m = RunManifest::start("gradcheck");
            let mut opts: ModelGradCheck = match &config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
                    .map_err(|e| FivesError::Config(format!("invalid gradcheck config: {e}")))?,
                None => ModelGradCheck::default(),
            };
            if let Some(s) = seed {
                opts.seed = s;
            }
            opts.inject_bug |= inject_bug;
            let report = check_model_gradients(&opts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(path) = &out {
                write_json(path, &report)?;
                m.config = config;
                m.outputs = vec![path.clone()];
                m.seed = Some(opts.seed);
                m.finish(&manifest_path(path))?;
            }
            if report.max_rel_error >= tolerance {
                return Ok(Outcome::VerificationFailed(format!(
                    "max relative error {:.3e} >= {tolerance:e}",
                    report.max_rel_error
                )));
            }
        }
        Command::SynthXor {
            n,
            noise,
            distractors,
            seed,
            out,
        } => {
            let mut m = RunManifest::start("synth-xor");
            let table = xor_table(&XorOptions {
                n,
                noise,
                n_distractors: distractors,
                seed,
            })?;
            std::fs::create_dir_all(&out)?;
            write_table_csv(&table, std::fs::File::create(out.join("xor.csv"))?)?;
            let schema = Schema::new(
                table.names().into_iter().map(fives_core::data::ColumnSpec::categorical).collect(),
                "label",
            )?;
            write_json(&out.join("schema.json"), &schema)?;
            m.outputs = vec![out.join("xor.csv"), out.join("schema.json")];
            m.seed = Some(seed);
            m.finish(&manifest_path(&out))?;
        }
    }
    Ok(Outcome::Success)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
