//! Command dispatch. Every artifact is written atomically into the output
//! directory and listed in the manifest.

use std::path::{Path, PathBuf};

use deepchoice::baselines::{fit_mean, fit_mnl, fit_rcl, fit_stacked_np, BaselineFit};
use deepchoice::causal::{coverage_experiment, crossfit_debiased, CoverageRow};
use deepchoice::deepset::{train, DeepSetModel};
use deepchoice::elastic::{benchmark_run, elasticity_curve, CurvePoint, fit_estimator, mae_rmse, Estimator, PriceShift};
use deepchoice::nn::{stream_id, RngStream};
use deepchoice::sim::{read_dataset_csv, simulate, split, write_dataset_csv, Dataset, Dgp};
use deepchoice::{Error, Market, Result, SharePredictor};
use serde::Serialize;

use crate::autos::{load_auto_csv, write_auto_csv, AutoData};
use crate::config::{Command, ExperimentConfig};
use crate::empirical::run_empirical;
use crate::manifest::{Manifest, OutputFile, CONFIG_ECHO};

const SPLIT_STREAM: u64 = 0x7370_6c69;

/// Collects the files a run writes.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records a file already written under the output directory.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let bytes = std::fs::metadata(self.path(name))?.len();
        self.files.push(OutputFile {
            file: name.into(),
            bytes,
        });
        Ok(())
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        deepchoice::util::write_atomic(&self.path(name), bytes)?;
        self.record(name)
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.bytes(name, &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Corrupt(e.to_string()))?;
        self.bytes(name, &bytes)
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub command: Command,
    pub output_dir: PathBuf,
    pub outputs: Vec<OutputFile>,
}

/// Runs the configured command and writes its artifacts, the configuration
/// echo and the manifest.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let command = cfg
        .command
        .ok_or_else(|| Error::Config("no command given".into()))?;
    cfg.validate()?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    log::info!("{} → {}", command.name(), cfg.output_dir.display());
    match command {
        Command::Simulate => cmd_simulate(cfg, &mut out)?,
        Command::Train => cmd_train(cfg, &mut out)?,
        Command::Benchmark => cmd_benchmark(cfg, &mut out)?,
        Command::Infer => cmd_infer(cfg, &mut out)?,
        Command::Coverage => cmd_coverage(cfg, &mut out)?,
        Command::Empirical => cmd_empirical(cfg, &mut out)?,
    }
    out.bytes(CONFIG_ECHO, cfg.to_toml_string()?.as_bytes())?;
    let manifest = Manifest::new(cfg, command.name(), out.files.clone());
    manifest.write(&out.dir)?;
    Ok(RunSummary {
        command,
        output_dir: out.dir,
        outputs: out.files,
    })
}

fn input_markets(cfg: &ExperimentConfig) -> Result<Vec<Market>> {
    match &cfg.data {
        Some(path) => read_dataset_csv(path),
        None => Ok(simulate(&cfg.sim)?.markets),
    }
}

fn cmd_simulate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let data = simulate(&cfg.sim)?;
    write_dataset_csv(&data.markets, out.path("dataset.csv"))?;
    out.record("dataset.csv")?;
    if let Some(truth) = &data.truth {
        out.json("truth.json", truth)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitMetric {
    estimator: String,
    split: &'static str,
    #[serde(rename = "MAE")]
    mae: f64,
    #[serde(rename = "RMSE")]
    rmse: f64,
    n_obs: usize,
}

fn share_errors(pred: &dyn SharePredictor, markets: &[Market]) -> Result<(f64, f64, usize)> {
    let mut p = Vec::new();
    let mut y = Vec::new();
    for m in markets {
        p.extend(pred.predict_market(m)?);
        y.extend(&m.shares);
    }
    let (mae, rmse) = mae_rmse(&p, &y)?;
    Ok((mae, rmse, p.len()))
}

fn cmd_train(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let markets = input_markets(cfg)?;
    let dataset = Dataset::new(markets, None);
    let mut rng = RngStream::new(cfg.seed, stream_id(&[SPLIT_STREAM]));
    let (train_set, test_set) = split(&dataset, cfg.train.train_ratio, &mut rng)?;
    let mut metrics = Vec::new();
    for &est in &cfg.train.estimators {
        let pred: Box<dyn SharePredictor> = match est {
            Estimator::DeepSet => {
                let k_in = train_set.markets[0].num_features();
                let mut model = DeepSetModel::new(
                    k_in,
                    cfg.deepset.arch.clone(),
                    &mut RngStream::new(cfg.seed, stream_id(&[0x6473])),
                )?;
                let report = train(&mut model, &train_set.markets, &cfg.deepset.train)?;
                log::info!("deepset: train MSE {:.3e}", report.final_mse);
                model.save(out.path("deepset.json"))?;
                out.record("deepset.json")?;
                Box::new(model)
            }
            other => {
                let fit = match other {
                    Estimator::Mnl => BaselineFit::Mnl(fit_mnl(&train_set.markets)?),
                    Estimator::Rcl => BaselineFit::Rcl(fit_rcl(&train_set.markets, &cfg.rcl)?),
                    Estimator::StackedNp => BaselineFit::StackedNp(fit_stacked_np(&train_set.markets, &cfg.stacked)?),
                    _ => BaselineFit::Mean(fit_mean(&train_set.markets)?),
                };
                let name = format!("{}.json", other.name());
                out.bytes(&name, &fit.to_json()?)?;
                Box::new(fit)
            }
        };
        for (split_name, ms) in [("train", &train_set.markets), ("test", &test_set.markets)] {
            let (mae, rmse, n_obs) = share_errors(pred.as_ref(), ms)?;
            metrics.push(FitMetric {
                estimator: est.name().into(),
                split: split_name,
                mae,
                rmse,
                n_obs,
            });
        }
    }
    out.csv("train_metrics.csv", &metrics)
}

fn cmd_benchmark(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let bench = cfg.benchmark_config();
    let tables = benchmark_run(&bench)?;
    for (name, rows) in tables.tables() {
        out.csv(&format!("{name}.csv"), rows)?;
    }
    if cfg.sim.dgp == Dgp::Inattention && cfg.benchmark.curve_points >= 2 {
        let points = inattention_curve(cfg)?;
        out.csv("elasticity_curve.csv", &points)?;
    }
    Ok(())
}

/// Own-elasticity curve of product 0 in the first test market of
/// replication 0, for the truth and every estimator that fits.
fn inattention_curve(cfg: &ExperimentConfig) -> Result<Vec<CurvePoint>> {
    let bench = cfg.benchmark_config();
    let data = simulate(&bench.sim)?;
    let truth = data
        .truth
        .clone()
        .ok_or_else(|| Error::Config("simulated data lacks a truth model".into()))?;
    let mut rng = RngStream::new(bench.sim.seed, stream_id(&[SPLIT_STREAM]));
    let (train_set, test_set) = split(&data, bench.train_ratio, &mut rng)?;
    let mut preds: Vec<Box<dyn SharePredictor>> = vec![Box::new(truth)];
    for &est in &bench.estimators {
        match fit_estimator(est, &train_set.markets, &bench, bench.sim.seed) {
            Ok(p) => preds.push(p),
            Err(e) => log::warn!("curve: {} failed: {e}", est.name()),
        }
    }
    let n = cfg.benchmark.curve_points;
    let prices: Vec<f64> = (0..n).map(|i| 0.1 + 3.9 * i as f64 / (n - 1) as f64).collect();
    let refs: Vec<&dyn SharePredictor> = preds.iter().map(|p| p.as_ref()).collect();
    elasticity_curve(
        &refs,
        &test_set.markets[0],
        0,
        &prices,
        PriceShift::Pct(bench.elasticity_pct),
    )
}

#[derive(Debug, Serialize)]
struct PsiRow {
    market_id: u64,
    product_id: u64,
    psi: f64,
}

fn cmd_infer(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let markets = input_markets(cfg)?;
    let mut result = crossfit_debiased(&markets, &cfg.crossfit_config())?;
    let psi = std::mem::take(&mut result.psi);
    out.json("inference.json", &result)?;
    let ids = markets
        .iter()
        .flat_map(|m| m.product_ids.iter().map(move |&p| (m.id, p)));
    let rows: Vec<PsiRow> = ids
        .zip(psi)
        .map(|((market_id, product_id), psi)| PsiRow {
            market_id,
            product_id,
            psi,
        })
        .collect();
    out.csv("psi.csv", &rows)
}

#[derive(Debug, Serialize)]
struct CoverageSummary {
    theta0: f64,
    coverage: f64,
    mean_bias: f64,
    plug_in_coverage: f64,
    plug_in_mean_bias: f64,
    skew_debiased: f64,
    skew_plug_in: f64,
    n_ok: usize,
    n_failed: usize,
}

fn cmd_coverage(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let report = coverage_experiment(&cfg.coverage_config())?;
    out.csv::<CoverageRow>("coverage.csv", &report.rows)?;
    out.json(
        "coverage_summary.json",
        &CoverageSummary {
            theta0: report.theta0,
            coverage: report.coverage,
            mean_bias: report.mean_bias,
            plug_in_coverage: report.plug_in_coverage,
            plug_in_mean_bias: report.plug_in_mean_bias,
            skew_debiased: report.skew_debiased,
            skew_plug_in: report.skew_plug_in,
            n_ok: report.n_ok,
            n_failed: report.n_failed,
        },
    )
}

fn cmd_empirical(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let data = match &cfg.data {
        Some(path) => load_auto_csv(path)?,
        None => {
            let records = cfg.synthetic.generate()?;
            write_auto_csv(&records, out.path("autos.csv"))?;
            out.record("autos.csv")?;
            AutoData::from_records(records)?
        }
    };
    let result = run_empirical(&data, &cfg.empirical, cfg.seed)?;
    out.csv("elasticities.csv", &result.rows)?;
    out.csv("summary.csv", &result.summary)?;
    if let Some(fs) = &result.first_stage {
        out.json("first_stage.json", fs)?;
    }
    Ok(())
}

/// Exit status for an error: 2 configuration, 3 data, 4 numerics.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::NonFinite(_) | Error::Diverged { .. } | Error::UndefinedElasticity { .. } => 4,
        _ => 3,
    }
}
