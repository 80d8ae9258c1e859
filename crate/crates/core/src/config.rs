//! Experiment configuration.
//!
//! Configs are flat TOML documents: one `key = value` per line, typed values,
//! no tables. Unknown and duplicate keys are rejected. Every key except
//! `dataset`, `n_clients` and `rounds` has a default, listed in
//! [`ExperimentConfig::default_for`] and in the README.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, LabelColumn, Partition, SyntheticKind};
use crate::error::{Error, Result};
use crate::federation::{ClientState, LocalHyper, Strategy, TrainingSetup, Variant};
use crate::losses::DistillCoefficients;
use crate::model::{init_model, MlpSpec};
use crate::spectrum::DEFAULT_EPS;
use crate::timing::{ClientTiming, Protocol};

fn d_n_samples() -> usize {
    4000
}
fn d_num_classes() -> usize {
    10
}
fn d_in_dim() -> usize {
    16
}
fn d_noise() -> f64 {
    0.5
}
fn d_participation() -> f64 {
    1.0
}
fn d_alpha() -> f64 {
    0.1
}
fn d_test_fraction() -> f64 {
    0.2
}
fn d_hidden() -> Vec<usize> {
    vec![64, 32]
}
fn d_eta() -> f64 {
    0.05
}
fn d_epochs() -> usize {
    1
}
fn d_lambda_p() -> f64 {
    1.0
}
fn d_lambda_g() -> f64 {
    0.1
}
fn d_tau() -> f64 {
    0.2
}
fn d_eps() -> f64 {
    DEFAULT_EPS
}
fn d_strategy() -> String {
    "spectral_codistill".into()
}
fn d_mu_ditto() -> f64 {
    0.1
}
fn d_one() -> f64 {
    1.0
}
fn d_zero() -> f64 {
    0.0
}
fn d_seed_data() -> u64 {
    1
}
fn d_seed_init() -> u64 {
    2
}
fn d_seed_sampling() -> u64 {
    3
}
fn d_protocols() -> Vec<String> {
    vec!["compute_and_wait".into(), "wait_free".into()]
}
fn d_target_acc() -> f64 {
    0.8
}
fn d_fine_tune_epochs() -> usize {
    5
}
fn d_out_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `gaussian_blobs`, `two_spirals` or `csv`.
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_path: Option<String>,
    /// Column name or zero-based index; defaults to the last column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(default = "d_n_samples")]
    pub n_samples: usize,
    #[serde(default = "d_num_classes")]
    pub num_classes: usize,
    #[serde(default = "d_in_dim")]
    pub in_dim: usize,
    #[serde(default = "d_noise")]
    pub noise: f64,

    pub n_clients: usize,
    pub rounds: usize,
    /// Extra clients kept out of training and used for fine-tuning evaluation.
    #[serde(default)]
    pub held_out_clients: usize,
    #[serde(default = "d_participation")]
    pub participation: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_test_fraction")]
    pub test_fraction: f64,

    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_eta")]
    pub eta_g: f64,
    #[serde(default = "d_eta")]
    pub eta_p: f64,
    #[serde(default = "d_epochs")]
    pub epochs_g: usize,
    #[serde(default = "d_epochs")]
    pub epochs_p: usize,
    /// `0` means full batch.
    #[serde(default)]
    pub batch_size: usize,

    #[serde(default = "d_lambda_p")]
    pub lambda_p: f64,
    #[serde(default = "d_lambda_g")]
    pub lambda_g: f64,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default)]
    pub normalize_spectrum: bool,
    #[serde(default = "d_strategy")]
    pub strategy: String,
    #[serde(default = "d_mu_ditto")]
    pub mu_ditto: f64,

    #[serde(default = "d_one")]
    pub t_gm_epoch: f64,
    #[serde(default = "d_one")]
    pub t_pm_epoch: f64,
    #[serde(default = "d_one")]
    pub t_up: f64,
    #[serde(default = "d_one")]
    pub t_down: f64,
    #[serde(default = "d_zero")]
    pub t_agg: f64,
    /// Client `k` gets its timings scaled by `1 + timing_spread · u_k`, `u_k ~ U[0, 1)`.
    #[serde(default = "d_zero")]
    pub timing_spread: f64,

    #[serde(default = "d_seed_data")]
    pub seed_data: u64,
    #[serde(default = "d_seed_init")]
    pub seed_init: u64,
    #[serde(default = "d_seed_sampling")]
    pub seed_sampling: u64,

    #[serde(default = "d_protocols")]
    pub protocols: Vec<String>,
    #[serde(default = "d_target_acc")]
    pub target_acc: f64,
    #[serde(default = "d_fine_tune_epochs")]
    pub fine_tune_epochs: usize,
    /// Defaults to `eta_p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_tune_eta: Option<f64>,
    #[serde(default = "d_out_dir")]
    pub out_dir: String,
}

fn range(key: &str, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, what))
    }
}

impl ExperimentConfig {
    /// A config with every default applied.
    pub fn default_for(dataset: &str, n_clients: usize, rounds: usize) -> Self {
        let text = format!("dataset = \"{dataset}\"\nn_clients = {n_clients}\nrounds = {rounds}\n");
        toml::from_str(&text).expect("defaults deserialize")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or standard input when `path` is `-`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = if path == Path::new("-") {
            std::io::read_to_string(std::io::stdin())
                .map_err(|e| Error::io("read config from stdin", e))?
        } else {
            std::fs::read_to_string(path)
                .map_err(|e| Error::io(format!("read {}", path.display()), e))?
        };
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match self.dataset.as_str() {
            "gaussian_blobs" | "two_spirals" => {
                range(
                    "n_samples",
                    self.n_samples >= self.num_classes,
                    "must be >= num_classes",
                )?;
                range("num_classes", self.num_classes >= 1, "must be >= 1")?;
                range("in_dim", self.in_dim >= 2, "must be >= 2")?;
                range(
                    "noise",
                    self.noise >= 0.0 && self.noise.is_finite(),
                    "must be finite and >= 0",
                )?;
            }
            "csv" => range(
                "data_path",
                self.data_path.is_some(),
                "required when dataset = \"csv\"",
            )?,
            other => {
                return Err(Error::config(
                    "dataset",
                    format!(
                        "unknown dataset `{other}` (expected gaussian_blobs, two_spirals or csv)"
                    ),
                ))
            }
        }
        range("n_clients", self.n_clients >= 1, "must be >= 1")?;
        range(
            "participation",
            self.participation > 0.0 && self.participation <= 1.0,
            "must lie in (0, 1]",
        )?;
        range(
            "participation",
            self.participation * self.n_clients as f64 >= 1.0 - 1e-9,
            "participation * n_clients must be >= 1",
        )?;
        range(
            "alpha",
            self.alpha > 0.0 && self.alpha.is_finite(),
            "must be positive",
        )?;
        range(
            "test_fraction",
            self.test_fraction > 0.0 && self.test_fraction < 0.5,
            "must lie in (0, 0.5)",
        )?;
        range(
            "hidden",
            !self.hidden.contains(&0),
            "layer widths must be positive",
        )?;
        for (key, v) in [("eta_g", self.eta_g), ("eta_p", self.eta_p)] {
            range(key, v > 0.0 && v.is_finite(), "must be positive")?;
        }
        for (key, v) in [
            ("lambda_p", self.lambda_p),
            ("lambda_g", self.lambda_g),
            ("mu_ditto", self.mu_ditto),
        ] {
            range(key, v >= 0.0 && v.is_finite(), "must be finite and >= 0")?;
        }
        range(
            "tau",
            self.tau > 0.0 && self.tau <= 1.0,
            "must lie in (0, 1]",
        )?;
        range(
            "eps",
            self.eps > 0.0 && self.eps.is_finite(),
            "must be positive",
        )?;
        self.strategy.parse::<Variant>().map_err(|_| {
            Error::config("strategy", format!("unknown strategy `{}`", self.strategy))
        })?;
        for (key, v) in [
            ("t_gm_epoch", self.t_gm_epoch),
            ("t_pm_epoch", self.t_pm_epoch),
            ("t_up", self.t_up),
            ("t_down", self.t_down),
            ("t_agg", self.t_agg),
            ("timing_spread", self.timing_spread),
        ] {
            range(key, v >= 0.0 && v.is_finite(), "must be finite and >= 0")?;
        }
        for p in &self.protocols {
            p.parse::<Protocol>()
                .map_err(|_| Error::config("protocols", format!("unknown protocol `{p}`")))?;
        }
        range(
            "target_acc",
            (0.0..=1.0).contains(&self.target_acc),
            "must lie in [0, 1]",
        )?;
        if let Some(eta) = self.fine_tune_eta {
            range(
                "fine_tune_eta",
                eta > 0.0 && eta.is_finite(),
                "must be positive",
            )?;
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        self.strategy.parse().expect("validated strategy")
    }

    pub fn protocol_list(&self) -> Vec<Protocol> {
        self.protocols
            .iter()
            .map(|p| p.parse().expect("validated protocol"))
            .collect()
    }

    pub fn coeffs(&self) -> DistillCoefficients {
        DistillCoefficients {
            lambda_p: self.lambda_p,
            lambda_g: self.lambda_g,
            tau: self.tau,
            eps: self.eps,
            normalize: self.normalize_spectrum,
        }
    }

    pub fn strategy(&self) -> Strategy {
        Strategy {
            variant: self.variant(),
            coeffs: self.coeffs(),
            mu_ditto: self.mu_ditto,
        }
    }

    pub fn gm_hyper(&self) -> LocalHyper {
        LocalHyper {
            eta: self.eta_g,
            epochs: self.epochs_g,
            batch_size: self.batch_size,
        }
    }

    pub fn pm_hyper(&self) -> LocalHyper {
        LocalHyper {
            eta: self.eta_p,
            epochs: self.epochs_p,
            batch_size: self.batch_size,
        }
    }

    pub fn fine_tune_hyper(&self) -> LocalHyper {
        LocalHyper {
            eta: self.fine_tune_eta.unwrap_or(self.eta_p),
            epochs: self.fine_tune_epochs,
            batch_size: self.batch_size,
        }
    }

    pub fn base_timing(&self) -> ClientTiming {
        ClientTiming {
            t_gm_epoch: self.t_gm_epoch,
            t_pm_epoch: self.t_pm_epoch,
            t_up: self.t_up,
            t_down: self.t_down,
        }
    }

    /// Per-client timings; identical for every client when `timing_spread = 0`.
    pub fn client_timings(&self, n: usize) -> Vec<ClientTiming> {
        let base = self.base_timing();
        if self.timing_spread == 0.0 {
            return vec![base; n];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed_sampling ^ 0x7469_6d69_6e67);
        (0..n)
            .map(|_| base.scaled(1.0 + self.timing_spread * rng.random_range(0.0..1.0)))
            .collect()
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match self.dataset.as_str() {
            "csv" => {
                let path = self
                    .data_path
                    .as_deref()
                    .ok_or_else(|| Error::config("data_path", "missing"))?;
                let column = match &self.label_column {
                    Some(c) => c.parse::<LabelColumn>().expect("infallible"),
                    None => {
                        // Default to the last column of the first line.
                        let text = std::fs::read_to_string(path)
                            .map_err(|e| Error::io(format!("read {path}"), e))?;
                        let width = text
                            .lines()
                            .next()
                            .map(|l| l.split(',').count())
                            .unwrap_or(0);
                        LabelColumn::Index(width.saturating_sub(1))
                    }
                };
                data::load_csv(path, &column)
            }
            kind => data::gen_synthetic(
                kind.parse::<SyntheticKind>()?,
                self.n_samples,
                self.num_classes,
                self.in_dim,
                self.noise,
                self.seed_data,
            ),
        }
    }

    pub fn layer_sizes(&self, in_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut sizes = vec![in_dim];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(num_classes);
        sizes
    }

    /// Loads data, partitions it and initializes every model.
    pub fn prepare(&self) -> Result<PreparedExperiment> {
        self.validate()?;
        let ds = self.load_dataset()?;
        let total_clients = self.n_clients + self.held_out_clients;
        let partition = data::dirichlet_partition(&ds, total_clients, self.alpha, self.seed_data)?;
        let splits = data::split_local(
            &partition,
            &ds,
            self.test_fraction,
            self.seed_data.wrapping_add(1),
        )?;
        let spec = MlpSpec::new(self.layer_sizes(ds.in_dim, ds.num_classes), self.seed_init)?;
        let w0 = init_model(&spec)?;
        let timings = self.client_timings(self.n_clients);

        let mut pairs = splits.clients.into_iter();
        let clients: Vec<ClientState> = (0..self.n_clients)
            .map(|k| {
                let (train, test) = pairs
                    .next()
                    .expect("partition has n_clients + held_out entries");
                ClientState::new(k, train, test, w0.clone(), timings[k])
            })
            .collect();
        let held_out: Vec<(Dataset, Dataset)> = pairs.collect();
        let tests: Vec<&Dataset> = clients.iter().map(|c| &c.test).collect();
        let global_test = Dataset::concat(&tests)?;

        Ok(PreparedExperiment {
            setup: TrainingSetup {
                spec,
                clients,
                global_test,
                strategy: self.strategy(),
                gm_hyper: self.gm_hyper(),
                pm_hyper: self.pm_hyper(),
                rounds: self.rounds,
                participation: self.participation,
                sampling_seed: self.seed_sampling,
                t_agg: self.t_agg,
                protocols: self.protocol_list(),
            },
            held_out,
            partition,
            dataset: ds,
            warnings: splits.warnings,
        })
    }

    pub fn out_path(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }
}

#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub setup: TrainingSetup,
    /// `(train, test)` for each held-out client.
    pub held_out: Vec<(Dataset, Dataset)>,
    pub partition: Partition,
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}
