//! Subcommand implementations behind the `scd` binary.
//!
//! Every file written here is a pure function of the resolved config: no
//! timestamps, paths or thread counts leak into the outputs.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::federation::{self, run_training, stream_seed, Phase, RoundRecord, TrainingOutcome};
use crate::model::MlpSpec;
use crate::spectrum;
use crate::timing::{speedup_report, Protocol, SpeedupReport};

/// Environment variable that replaces the config's `out_dir`. `--out` wins over it.
pub const OUT_DIR_ENV: &str = "SPFL_OUT_DIR";

pub const ROUNDS_HEADER: [&str; 9] = [
    "round", "gm_acc", "pm_acc", "gm_ce", "gm_reg", "pm_ce", "pm_reg", "t_sim_cw", "t_sim_wf",
];

/// Flags shared by the subcommands that read a config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed_override: Option<u64>,
    pub threads: Option<usize>,
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}

/// Applies `--seed-override K`: data, init and sampling seeds become `K`, `K+1`, `K+2`.
pub fn apply_seed_override(cfg: &mut ExperimentConfig, seed: Option<u64>) {
    if let Some(k) = seed {
        cfg.seed_data = k;
        cfg.seed_init = k.wrapping_add(1);
        cfg.seed_sampling = k.wrapping_add(2);
    }
}

/// `--out`, then the environment override, then the config.
pub fn resolve_out_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.out_path(),
    }
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(Error::invalid("--threads must be at least 1")),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?
            .install(f),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub sampling: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FineTuneSummary {
    pub epochs: usize,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub strategy: String,
    pub rounds: usize,
    pub param_count: usize,
    pub final_gm_acc: f64,
    pub final_pm_acc: f64,
    pub best_gm_acc: f64,
    pub best_gm_round: usize,
    pub best_pm_acc: f64,
    pub best_pm_round: usize,
    pub zeta_total_cw: Option<f64>,
    pub zeta_total_wf: Option<f64>,
    /// Present when both protocols were simulated.
    pub speedup: Option<SpeedupReport>,
    pub fine_tune: Option<FineTuneSummary>,
    /// FNV-1a checksum of the final generic weights.
    pub gm_checksum: String,
    pub warnings: Vec<String>,
    pub seeds: Seeds,
    pub config: ExperimentConfig,
}

/// Everything `cmd_run` produces, kept in memory for callers such as `sweep`.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: RunSummary,
    pub outcome: TrainingOutcome,
    pub spec: MlpSpec,
}

fn best(records: &[RoundRecord], acc: impl Fn(&RoundRecord) -> f64) -> (f64, usize) {
    // Earliest round wins ties.
    records.iter().fold((f64::NEG_INFINITY, 0), |(b, r), rec| {
        if acc(rec) > b {
            (acc(rec), rec.round)
        } else {
            (b, r)
        }
    })
}

/// Trains, fine-tunes held-out clients and builds the summary. Writes nothing.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunResult> {
    let prep = cfg.prepare()?;
    let spec = prep.setup.spec.clone();
    let outcome = run_training(prep.setup)?;
    let records = &outcome.records;

    let fine_tune = if prep.held_out.is_empty() {
        None
    } else {
        let hyper = cfg.fine_tune_hyper();
        let accuracies = prep
            .held_out
            .par_iter()
            .enumerate()
            .map(|(j, (train, test))| {
                let seed = stream_seed(cfg.seed_sampling, cfg.n_clients + j, 0, Phase::FineTune);
                federation::fine_tune_new_client(
                    &outcome.server.w_g,
                    train,
                    test,
                    &spec,
                    &hyper,
                    seed,
                )
                .map(|(_, acc)| acc)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
        Some(FineTuneSummary {
            epochs: hyper.epochs,
            accuracies,
            mean_accuracy,
        })
    };

    let cw = outcome.timeline(Protocol::ComputeAndWait);
    let wf = outcome.timeline(Protocol::WaitFree);
    let speedup = match (cw, wf, records.is_empty()) {
        (Some(cw), Some(wf), false) => {
            let trace: Vec<f64> = records.iter().map(|r| r.pm_weighted_acc).collect();
            Some(speedup_report(cw, wf, &trace, cfg.target_acc)?)
        }
        _ => None,
    };
    let last = records.last();
    let (best_gm_acc, best_gm_round) = best(records, |r| r.gm_global_acc);
    let (best_pm_acc, best_pm_round) = best(records, |r| r.pm_weighted_acc);
    let summary = RunSummary {
        strategy: cfg.variant().name().to_string(),
        rounds: records.len(),
        param_count: spec.param_count(),
        final_gm_acc: last.map_or(0.0, |r| r.gm_global_acc),
        final_pm_acc: last.map_or(0.0, |r| r.pm_weighted_acc),
        best_gm_acc: if records.is_empty() { 0.0 } else { best_gm_acc },
        best_gm_round,
        best_pm_acc: if records.is_empty() { 0.0 } else { best_pm_acc },
        best_pm_round,
        zeta_total_cw: cw.map(|t| t.total),
        zeta_total_wf: wf.map(|t| t.total),
        speedup,
        fine_tune,
        gm_checksum: format!("{:016x}", outcome.server.w_g.checksum()),
        warnings: prep.warnings,
        seeds: Seeds {
            data: cfg.seed_data,
            init: cfg.seed_init,
            sampling: cfg.seed_sampling,
        },
        config: cfg.clone(),
    };
    Ok(RunResult {
        summary,
        outcome,
        spec,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(
        format!("write {}", path.display()),
        std::io::Error::other(e.to_string()),
    )
}

pub fn write_rounds_csv(path: &Path, records: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(ROUNDS_HEADER)
        .map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            r.gm_global_acc.to_string(),
            r.pm_weighted_acc.to_string(),
            r.gm_ce.to_string(),
            r.gm_reg.to_string(),
            r.pm_ce.to_string(),
            r.pm_reg.to_string(),
            opt(r.t_sim_cw),
            opt(r.t_sim_wf),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("write {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))
}

/// Writes `rounds.csv`, `summary.json` and `generic.ckpt` into `out_dir`.
pub fn cmd_run(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<RunSummary> {
    let result = with_threads(threads, || execute(cfg))?;
    create_dir(out_dir)?;
    write_rounds_csv(&out_dir.join("rounds.csv"), &result.outcome.records)?;
    write_json(&out_dir.join("summary.json"), &result.summary)?;
    Checkpoint::new(&result.spec, result.outcome.server.w_g.clone())?
        .save(&out_dir.join("generic.ckpt"))?;
    Ok(result.summary)
}

/// Parameters accepted by `sweep`.
pub const SWEEP_PARAMS: [&str; 6] = [
    "lambda_p", "lambda_g", "tau", "alpha", "strategy", "ablation",
];

/// Ablation cells: which of the two spectral terms stay on.
pub const ABLATION_CELLS: [&str; 4] = ["both", "no_gm_term", "no_pm_term", "neither"];

/// Returns a copy of `base` with `param` set to `value`.
pub fn sweep_point(base: &ExperimentConfig, param: &str, value: &str) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    let num = || {
        value.parse::<f64>().map_err(|_| {
            Error::invalid(format!("sweep value `{value}` for {param} is not a number"))
        })
    };
    match param {
        "lambda_p" => cfg.lambda_p = num()?,
        "lambda_g" => cfg.lambda_g = num()?,
        "tau" => cfg.tau = num()?,
        "alpha" => cfg.alpha = num()?,
        "strategy" => cfg.strategy = value.to_string(),
        "ablation" => {
            cfg.strategy = "spectral_codistill".into();
            let (keep_p, keep_g) = match value {
                "both" => (true, true),
                "no_gm_term" => (true, false),
                "no_pm_term" => (false, true),
                "neither" => (false, false),
                other => {
                    return Err(Error::invalid(format!(
                        "unknown ablation cell `{other}` (expected one of {})",
                        ABLATION_CELLS.join(", ")
                    )))
                }
            };
            if !keep_p {
                cfg.lambda_p = 0.0;
            }
            if !keep_g {
                cfg.lambda_g = 0.0;
            }
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown sweep parameter `{other}` (expected one of {})",
                SWEEP_PARAMS.join(", ")
            )))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub const SWEEP_HEADER: [&str; 12] = [
    "param",
    "value",
    "final_gm_acc",
    "final_pm_acc",
    "best_gm_acc",
    "best_pm_acc",
    "rounds_to_target",
    "zeta_cw",
    "zeta_wf",
    "speedup",
    "fine_tune_acc",
    "gm_checksum",
];

/// One training run per value, in the given order. Writes `sweep.csv`.
pub fn cmd_sweep(
    base: &ExperimentConfig,
    param: &str,
    values: &[String],
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<Vec<RunSummary>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let points = values
        .iter()
        .map(|v| sweep_point(base, param, v))
        .collect::<Result<Vec<_>>>()?;
    let summaries = with_threads(threads, || {
        points
            .par_iter()
            .map(|cfg| execute(cfg).map(|r| r.summary))
            .collect::<Result<Vec<_>>>()
    })?;

    create_dir(out_dir)?;
    let path = out_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(SWEEP_HEADER)
        .map_err(|e| csv_err(&path, e))?;
    for (value, s) in values.iter().zip(&summaries) {
        let sp = s.speedup.as_ref();
        w.write_record([
            param.to_string(),
            value.clone(),
            s.final_gm_acc.to_string(),
            s.final_pm_acc.to_string(),
            s.best_gm_acc.to_string(),
            s.best_pm_acc.to_string(),
            sp.and_then(|r| r.rounds_to_target)
                .map(|r| r.to_string())
                .unwrap_or_default(),
            opt(s.zeta_total_cw),
            opt(s.zeta_total_wf),
            opt(sp.and_then(|r| r.speedup)),
            opt(s.fine_tune.as_ref().map(|f| f.mean_accuracy)),
            s.gm_checksum.clone(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("write {}", path.display()), e))?;
    Ok(summaries)
}

/// Writes `index,magnitude` rows for the stored model's spectrum, optionally truncated.
pub fn cmd_inspect_spectrum(checkpoint: &Path, tau: Option<f64>, out: impl Write) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut s = spectrum::spectrum(ck.weights.as_slice())?;
    if let Some(t) = tau {
        s = spectrum::truncate(&s, t)?;
    }
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| Error::io("write spectrum", std::io::Error::other(e.to_string()));
    w.write_record(["index", "magnitude"]).map_err(fail)?;
    for (i, m) in s.values().iter().enumerate() {
        w.write_record([i.to_string(), m.to_string()])
            .map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io("write spectrum", e))
}

/// Per-client label histograms of the configured Dirichlet split, as CSV.
///
/// Returns the mean client-to-global total-variation distance.
pub fn cmd_partition(cfg: &ExperimentConfig, out: impl Write) -> Result<f64> {
    cfg.validate()?;
    let ds = cfg.load_dataset()?;
    let total = cfg.n_clients + cfg.held_out_clients;
    let part = crate::data::dirichlet_partition(&ds, total, cfg.alpha, cfg.seed_data)?;
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| Error::io("write partition", std::io::Error::other(e.to_string()));
    let mut header = vec!["client".to_string(), "role".to_string(), "n".to_string()];
    header.extend((0..ds.num_classes).map(|c| format!("class_{c}")));
    w.write_record(&header).map_err(fail)?;
    for (k, hist) in part.histograms(&ds).iter().enumerate() {
        let role = if k < cfg.n_clients {
            "train"
        } else {
            "held_out"
        };
        let mut row = vec![
            k.to_string(),
            role.to_string(),
            hist.iter().sum::<usize>().to_string(),
        ];
        row.extend(hist.iter().map(|c| c.to_string()));
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io("write partition", e))?;
    Ok(part.mean_tv_to_global(&ds))
}
