use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::{info, warn};

use codofuzz::dataio::{self, build_seed_set, load_dataset, save_suite, DatasetSource};
use codofuzz::desk;
use codofuzz::evaluation::{
    emit_report, rotation_correlation, write_rotation_rows, RotationSettings,
};
use codofuzz::fuzzer::{resume_fuzz, run_fuzz, seed_set_rng, Checkpoint, FuzzRun};
use codofuzz::oracle::{open_oracle, serve};
use codofuzz::FuzzConfig;

/// Exit status of a run that stopped on an oracle failure and left a checkpoint.
const EXIT_RESUMABLE: u8 = 3;
const CHECKPOINT: &str = "checkpoint.json";

#[derive(Parser)]
#[command(
    name = "codofuzz",
    version,
    about = "Co-domain coverage guided fuzzing for classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuzz a classifier and write the resulting test suite.
    Fuzz {
        /// Run config (TOML), or `desk` for the shipped desk settings.
        #[arg(long)]
        config: Option<String>,
        /// Seed dataset: IDX pair, PNG directory, blob spec (.toml) or `desk`.
        #[arg(long)]
        seeds: Option<String>,
        /// builtin:desk, builtin:<model.json>, tcp:<host>:<port> or cmd:<command>.
        #[arg(long)]
        oracle: String,
        #[arg(long)]
        out: PathBuf,
        /// Continue from <out>/checkpoint.json.
        #[arg(long)]
        resume: bool,
        /// Overrides max_iterations.
        #[arg(long)]
        iterations: Option<u64>,
        /// Overrides rng_seed.
        #[arg(long)]
        rng_seed: Option<u64>,
    },
    /// Compute metrics and histograms for one or more suites.
    Evaluate {
        #[arg(long = "suite", required = true)]
        suites: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rotate a labeled set by growing angles and record what coverage selects.
    RotateCorrelate {
        #[arg(long)]
        data: String,
        #[arg(long)]
        oracle: String,
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,15")]
        degrees: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        bins: usize,
        #[arg(long, default_value_t = 10)]
        cap: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Count the unreachable low-confidence cells in the denominator.
        #[arg(long)]
        include_infeasible: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a builtin model over the line protocol on stdin/stdout.
    Serve {
        /// builtin:desk or builtin:<model.json>.
        #[arg(long)]
        model: String,
        /// Exit after answering this many predict requests.
        #[arg(long)]
        max_requests: Option<u64>,
    },
    /// Write the shipped desk dataset spec, model and run config.
    Desk {
        #[arg(long)]
        out: PathBuf,
        /// Also render the dataset as images/ + labels.csv.
        #[arg(long)]
        images: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Fuzz {
            config,
            seeds,
            oracle,
            out,
            resume,
            iterations,
            rng_seed,
        } => fuzz(config, seeds, &oracle, &out, resume, iterations, rng_seed),
        Command::Evaluate { suites, out } => evaluate(&suites, &out).map(|_| ExitCode::SUCCESS),
        Command::RotateCorrelate {
            data,
            oracle,
            degrees,
            bins,
            cap,
            seed,
            include_infeasible,
            out,
        } => {
            let oracle = open_oracle(&oracle)?;
            let items = load_dataset(&DatasetSource::from_arg(&data)?, Some(oracle.n_classes()))?;
            let settings = RotationSettings {
                n_bins: bins,
                cap,
                rng_seed: seed,
                exclude_infeasible: !include_infeasible,
            };
            let rows = rotation_correlation(&items, &*oracle, &degrees, &settings)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_rotation_rows(&rows, &out)?;
            for r in &rows {
                println!(
                    "u={:>5} accuracy={:.4} selected={} selected_errors={} cdc={:.4}",
                    r.max_degrees,
                    r.accuracy_on_tu,
                    r.n_selected,
                    r.n_selected_errors,
                    r.cdc_achieved
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            model,
            max_requests,
        } => {
            if !model.starts_with("builtin:") {
                bail!("serve only hosts builtin models, got {model:?}");
            }
            let oracle = open_oracle(&model)?;
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            let n = serve(&*oracle, stdin, stdout, max_requests)?;
            info!("served {n} predict requests");
            Ok(ExitCode::SUCCESS)
        }
        Command::Desk { out, images } => {
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("desk_blobs.toml"), desk::desk_blobs().to_toml())?;
            fs::write(
                out.join("desk_model.json"),
                desk::model_json(&desk::desk_model()),
            )?;
            fs::write(
                out.join("desk_fuzz.toml"),
                desk::desk_fuzz_config().to_toml(),
            )?;
            if images {
                dataio::png::write_png_directory(
                    &out.join("dataset"),
                    &desk::desk_blobs().generate()?,
                )?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(arg: Option<&str>) -> anyhow::Result<FuzzConfig> {
    Ok(match arg {
        None => FuzzConfig::default(),
        Some("desk") => desk::shipped_fuzz_config(),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            FuzzConfig::from_toml(&text)?
        }
    })
}

fn fuzz(
    config: Option<String>,
    seeds: Option<String>,
    oracle_desc: &str,
    out: &Path,
    resume: bool,
    iterations: Option<u64>,
    rng_seed: Option<u64>,
) -> anyhow::Result<ExitCode> {
    let oracle = open_oracle(oracle_desc)?;
    let checkpoint_path = out.join(CHECKPOINT);
    let run: FuzzRun = if resume {
        let text = fs::read_to_string(&checkpoint_path)
            .with_context(|| format!("reading {}", checkpoint_path.display()))?;
        let mut cp: Checkpoint = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", checkpoint_path.display()))?;
        if let Some(n) = iterations {
            cp.config.max_iterations = n;
        }
        info!("resuming at iteration {}", cp.iteration);
        resume_fuzz(cp, &*oracle)?
    } else {
        let mut cfg = load_config(config.as_deref())?;
        if let Some(n) = iterations {
            cfg.max_iterations = n;
        }
        if let Some(s) = rng_seed {
            cfg.rng_seed = s;
        }
        cfg.validate()?;
        let Some(seeds) = seeds else {
            bail!("--seeds is required unless --resume is given");
        };
        let items = load_dataset(&DatasetSource::from_arg(&seeds)?, Some(oracle.n_classes()))?;
        let mut rng = seed_set_rng(cfg.rng_seed);
        let set = build_seed_set(&items, &*oracle, cfg.seeds_per_class, &mut rng)?;
        info!("{} seeds from {} items", set.seeds.len(), items.len());
        run_fuzz(cfg, set.seeds, &*oracle)?
    };

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let config = run.fuzzer.config().clone();
    save_suite(
        out,
        &run.suite,
        Some(&config),
        Some(&run.report),
        &oracle.describe(),
    )?;
    info!(
        "suite of {} inputs written to {} (cdc {:.4}, kcdc {:.4})",
        run.suite.inputs.len(),
        out.display(),
        run.report.cdc,
        run.report.kcdc
    );
    match run.error {
        Some(e) => {
            let cp = serde_json::to_vec(&run.fuzzer.checkpoint())?;
            fs::write(&checkpoint_path, cp)
                .with_context(|| format!("writing {}", checkpoint_path.display()))?;
            warn!("oracle failed: {e}; rerun with --resume to continue");
            Ok(ExitCode::from(EXIT_RESUMABLE))
        }
        None => {
            if checkpoint_path.exists() {
                fs::remove_file(&checkpoint_path)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn evaluate(suites: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    let mut loaded = Vec::with_capacity(suites.len());
    for dir in suites {
        let suite =
            dataio::load_suite(dir).with_context(|| format!("loading suite {}", dir.display()))?;
        let base = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "suite".into());
        let mut name = base.clone();
        let mut k = 2;
        while loaded.iter().any(|(n, _)| *n == name) {
            name = format!("{base}_{k}");
            k += 1;
        }
        loaded.push((name, suite.suite));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let named: Vec<(String, &codofuzz::TestSuite)> =
        loaded.iter().map(|(n, s)| (n.clone(), s)).collect();
    for m in emit_report(&named, out)? {
        println!("{}: {}", m.name, serde_json::to_string(&m.metrics)?);
    }
    Ok(())
}
