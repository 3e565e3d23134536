use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deepchoice::{Error, Result};
use deepchoice_cli::config::{parse_override, read_table, resolve, set_path, Command};
use deepchoice_cli::{exit_code, run_experiment};

/// Environment variable holding the worker-thread count.
const THREADS_ENV: &str = "DEEPCHOICE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "deepchoice", version, about = "Neural demand estimation experiments")]
struct Cli {
    /// TOML experiment file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Arbitrary override, e.g. `--set deepset.train.epochs=200`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug, Default)]
struct SimFlags {
    /// Named simulation design.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    j: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a dataset and its truth model.
    Simulate {
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Fit estimators on a dataset (simulated when --data is absent).
    Train {
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated estimator names.
        #[arg(long)]
        estimators: Option<String>,
    },
    /// Replicated estimator comparison.
    Benchmark {
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        estimators: Option<String>,
        #[arg(long)]
        new_product: bool,
    },
    /// Cross-fit debiased estimate of the average price effect.
    Infer {
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Confidence-interval coverage over repeated simulations.
    Coverage {
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long)]
        sims: Option<usize>,
    },
    /// Own-price elasticities for automobile data.
    Empirical {
        /// Auto CSV; a synthetic dataset is generated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// `none` or `blp`.
        #[arg(long)]
        iv: Option<String>,
    },
    /// Run the command named in the config file.
    Run,
}

fn put(t: &mut toml::Table, key: &str, v: impl Into<toml::Value>) -> Result<()> {
    set_path(t, key, v.into())
}

fn path_value(p: &std::path::Path) -> toml::Value {
    toml::Value::String(p.to_string_lossy().into_owned())
}

fn apply_sim(t: &mut toml::Table, sim: &SimFlags) -> Result<()> {
    if let Some(p) = &sim.preset {
        put(t, "preset", p.as_str())?;
    }
    for (key, v) in [("sim.j", sim.j), ("sim.m", sim.m), ("sim.k", sim.k)] {
        if let Some(v) = v {
            put(t, key, v as i64)?;
        }
    }
    Ok(())
}

fn estimator_list(s: &str) -> toml::Value {
    toml::Value::Array(
        s.split(',')
            .map(|e| toml::Value::String(e.trim().to_string()))
            .collect(),
    )
}

fn build_table(cli: &Cli) -> Result<toml::Table> {
    let mut t = match &cli.config {
        Some(p) => read_table(p)?,
        None => toml::Table::new(),
    };
    let command = match &cli.command {
        Cmd::Simulate { sim } => {
            apply_sim(&mut t, sim)?;
            Some(Command::Simulate)
        }
        Cmd::Train { sim, data, estimators } => {
            apply_sim(&mut t, sim)?;
            if let Some(d) = data {
                t.insert("data".into(), path_value(d));
            }
            if let Some(e) = estimators {
                put(&mut t, "train.estimators", estimator_list(e))?;
            }
            Some(Command::Train)
        }
        Cmd::Benchmark {
            sim,
            reps,
            estimators,
            new_product,
        } => {
            apply_sim(&mut t, sim)?;
            if let Some(r) = reps {
                put(&mut t, "benchmark.reps", *r as i64)?;
            }
            if let Some(e) = estimators {
                put(&mut t, "benchmark.estimators", estimator_list(e))?;
            }
            if *new_product {
                put(&mut t, "benchmark.new_product", true)?;
            }
            Some(Command::Benchmark)
        }
        Cmd::Infer { sim, data, folds } => {
            apply_sim(&mut t, sim)?;
            if let Some(d) = data {
                t.insert("data".into(), path_value(d));
            }
            if let Some(f) = folds {
                put(&mut t, "infer.folds", *f as i64)?;
            }
            Some(Command::Infer)
        }
        Cmd::Coverage { sim, sims } => {
            apply_sim(&mut t, sim)?;
            if !t.contains_key("preset") {
                put(&mut t, "preset", "coverage")?;
            }
            if let Some(s) = sims {
                put(&mut t, "coverage.sims", *s as i64)?;
            }
            Some(Command::Coverage)
        }
        Cmd::Empirical { data, iv } => {
            if let Some(d) = data {
                t.insert("data".into(), path_value(d));
            }
            if let Some(iv) = iv {
                put(&mut t, "empirical.iv", iv.as_str())?;
            }
            Some(Command::Empirical)
        }
        Cmd::Run => None,
    };
    if let Some(c) = command {
        put(&mut t, "command", c.name())?;
    }
    if let Some(o) = &cli.out {
        t.insert("output_dir".into(), path_value(o));
    }
    if let Some(s) = cli.seed {
        let s = i64::try_from(s).map_err(|_| Error::Config(format!("seed {s} is too large")))?;
        put(&mut t, "seed", s)?;
    }
    for o in &cli.overrides {
        let (k, v) = parse_override(o)?;
        set_path(&mut t, &k, v)?;
    }
    Ok(t)
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}='{raw}' must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = init_threads()
        .and_then(|_| build_table(&cli))
        .and_then(resolve)
        .and_then(|cfg| run_experiment(&cfg));
    match result {
        Ok(summary) => {
            for f in &summary.outputs {
                println!("{}", summary.output_dir.join(&f.file).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
