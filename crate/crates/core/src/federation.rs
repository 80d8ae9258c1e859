//! The federated training loop.
//!
//! Each round: the server broadcasts the generic model; every sampled client
//! runs its generic update (distilling from the truncated spectrum of its own
//! previous personalized model), the server averages the uploads, and each
//! sampled client then runs its personalized update against the full spectrum
//! of the generic model *it* just trained, not the freshly aggregated one.
//! That ordering is what lets the personalized phase overlap communication.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{self, DistillCoefficients, LossParts};
use crate::model::{self, ce_loss_and_grad, LabeledBatch, MlpSpec};
use crate::spectrum::{ParamVector, SpectrumKind, SpectrumVector};
use crate::timing::{self, ClientTiming, Protocol, Schedule, Timeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Spectral co-distillation in both directions.
    SpectralCodistill,
    /// Generic model only; personalized accuracy is the generic model on local data.
    Fedavg,
    /// Generic model by FedAvg, personalized models by plain local training.
    LocalOnly,
    /// Personalized models regularized by `μ/2 ‖w_p − w_G,i‖²`.
    DittoL2,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::SpectralCodistill,
        Variant::Fedavg,
        Variant::LocalOnly,
        Variant::DittoL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SpectralCodistill => "spectral_codistill",
            Variant::Fedavg => "fedavg",
            Variant::LocalOnly => "local_only",
            Variant::DittoL2 => "ditto_l2",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub variant: Variant,
    pub coeffs: DistillCoefficients,
    pub mu_ditto: f64,
}

/// Plain gradient-descent settings for one local phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalHyper {
    pub eta: f64,
    pub epochs: usize,
    /// Minibatch size; `0` means full batch.
    pub batch_size: usize,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub train: Dataset,
    pub test: Dataset,
    /// Personalized model.
    pub w_p: ParamVector,
    /// This client's most recent locally updated generic model.
    pub w_g_local: ParamVector,
    pub n_i: usize,
    pub timing: ClientTiming,
}

impl ClientState {
    pub fn new(
        id: usize,
        train: Dataset,
        test: Dataset,
        w0: ParamVector,
        timing: ClientTiming,
    ) -> Self {
        ClientState {
            id,
            n_i: train.len(),
            train,
            test,
            w_p: w0.clone(),
            w_g_local: w0,
            timing,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub w_g: ParamVector,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub gm_global_acc: f64,
    pub pm_weighted_acc: f64,
    pub gm_ce: f64,
    pub gm_reg: f64,
    pub pm_ce: f64,
    pub pm_reg: f64,
    pub participants: Vec<usize>,
    /// Cumulative simulated time at round end, compute-and-wait.
    pub t_sim_cw: Option<f64>,
    /// Cumulative simulated time at round end, wait-free.
    pub t_sim_wf: Option<f64>,
}

/// Mean loss parts over the steps of one local phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseStats {
    pub ce: f64,
    pub reg: f64,
    pub steps: usize,
}

impl PhaseStats {
    fn add(&mut self, ce: f64, reg: f64) {
        self.ce += ce;
        self.reg += reg;
        self.steps += 1;
    }

    fn finish(mut self) -> Self {
        if self.steps > 0 {
            self.ce /= self.steps as f64;
            self.reg /= self.steps as f64;
        }
        self
    }
}

/// Which local phase a random stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Generic = 1,
    Personalized = 2,
    FineTune = 3,
}

/// Seed for a `(seed, client, round, phase)` stream, independent of thread count.
pub fn stream_seed(seed: u64, client: usize, round: usize, phase: Phase) -> u64 {
    // splitmix64 finalizer over a combined key.
    let mut z = seed
        ^ (client as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (round as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ (phase as u64).wrapping_mul(0x1656_67b1_9e37_79f9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Minibatches for one epoch. Full batch keeps the natural order.
fn epoch_batches(
    data: &Dataset,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabeledBatch>> {
    if batch_size == 0 || batch_size >= data.len() {
        return Ok(vec![data.as_batch()?]);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|idx| data.batch(idx))
        .collect()
}

/// Runs `hyper.epochs` of gradient descent with `loss` evaluated per minibatch.
fn descend<F>(
    start: &ParamVector,
    data: &Dataset,
    hyper: &LocalHyper,
    seed: u64,
    mut loss: F,
) -> Result<(ParamVector, PhaseStats)>
where
    F: FnMut(&ParamVector, &LabeledBatch) -> Result<LossParts>,
{
    let mut w = start.clone();
    let mut stats = PhaseStats::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..hyper.epochs {
        for batch in epoch_batches(data, hyper.batch_size, &mut rng)? {
            let parts = loss(&w, &batch)?;
            stats.add(parts.ce, parts.reg);
            w.descend(hyper.eta, &parts.grad);
            if !w.is_finite() {
                // The caller fills in the round.
                return Err(Error::NonFinite {
                    round: 0,
                    detail: format!(
                        "step produced non-finite weights (ce = {}, reg = {})",
                        parts.ce, parts.reg
                    ),
                });
            }
        }
    }
    Ok((w, stats.finish()))
}

fn plain_ce(w: &ParamVector, spec: &MlpSpec, batch: &LabeledBatch) -> Result<LossParts> {
    let (ce, grad) = ce_loss_and_grad(w, spec, batch)?;
    Ok(LossParts {
        ce,
        reg: 0.0,
        total: ce,
        grad,
    })
}

fn check_len(what: &str, w: &ParamVector, spec: &MlpSpec) -> Result<()> {
    if w.len() != spec.param_count() {
        return Err(Error::invalid(format!(
            "{what} has {} parameters, model needs {}",
            w.len(),
            spec.param_count()
        )));
    }
    Ok(())
}

/// Generic-model update starting from the broadcast model.
///
/// The teacher is the truncated spectrum of the client's previous
/// personalized model, computed once and held fixed for all epochs. The
/// result is also stored in `client.w_g_local`.
pub fn gm_update(
    client: &mut ClientState,
    w_g_broadcast: &ParamVector,
    strategy: &Strategy,
    hyper: &LocalHyper,
    spec: &MlpSpec,
    stream: u64,
) -> Result<(ParamVector, PhaseStats)> {
    check_len("broadcast generic model", w_g_broadcast, spec)?;
    check_len("personalized model", &client.w_p, spec)?;
    let (w, stats) = match strategy.variant {
        Variant::SpectralCodistill => {
            let teacher = losses::gm_teacher(&client.w_p, strategy.coeffs.tau)?;
            debug_assert!(matches!(teacher.kind(), SpectrumKind::Truncated(_)));
            descend(w_g_broadcast, &client.train, hyper, stream, |w, b| {
                losses::gm_loss_and_grad(w, &teacher, spec, b, &strategy.coeffs)
            })?
        }
        Variant::Fedavg | Variant::LocalOnly | Variant::DittoL2 => {
            descend(w_g_broadcast, &client.train, hyper, stream, |w, b| {
                plain_ce(w, spec, b)
            })?
        }
    };
    client.w_g_local = w.clone();
    Ok((w, stats))
}

/// Full teacher spectrum consumed by the personalized update, when the strategy uses one.
pub fn pm_teacher_for(
    strategy: &Strategy,
    w_g_updated: &ParamVector,
) -> Result<Option<SpectrumVector>> {
    match strategy.variant {
        Variant::SpectralCodistill => Ok(Some(losses::pm_teacher(w_g_updated)?)),
        _ => Ok(None),
    }
}

/// Personalized-model update starting from the client's previous personalized model.
///
/// `w_g_updated` must be this client's own generic model from this round's
/// [`gm_update`]. For [`Variant::Fedavg`] there is no personalized model to
/// train and `client.w_p` is returned unchanged.
pub fn pm_update(
    client: &mut ClientState,
    w_g_updated: &ParamVector,
    strategy: &Strategy,
    hyper: &LocalHyper,
    spec: &MlpSpec,
    stream: u64,
) -> Result<(ParamVector, PhaseStats)> {
    check_len("updated generic model", w_g_updated, spec)?;
    check_len("personalized model", &client.w_p, spec)?;
    let (w, stats) = match strategy.variant {
        Variant::SpectralCodistill => {
            let teacher =
                pm_teacher_for(strategy, w_g_updated)?.expect("spectral strategy has a teacher");
            debug_assert_eq!(teacher.kind(), SpectrumKind::Full);
            descend(&client.w_p, &client.train, hyper, stream, |w, b| {
                losses::pm_loss_and_grad(w, &teacher, spec, b, &strategy.coeffs)
            })?
        }
        Variant::LocalOnly => descend(&client.w_p, &client.train, hyper, stream, |w, b| {
            plain_ce(w, spec, b)
        })?,
        Variant::DittoL2 => {
            let mu = strategy.mu_ditto;
            descend(&client.w_p, &client.train, hyper, stream, |w, b| {
                let mut parts = plain_ce(w, spec, b)?;
                let mut sq = 0.0;
                for ((g, wi), gi) in parts
                    .grad
                    .as_mut_slice()
                    .iter_mut()
                    .zip(w.as_slice())
                    .zip(w_g_updated.as_slice())
                {
                    let diff = wi - gi;
                    sq += diff * diff;
                    *g += mu * diff;
                }
                parts.reg = 0.5 * sq;
                parts.total = parts.ce + mu * parts.reg;
                Ok(parts)
            })?
        }
        Variant::Fedavg => (client.w_p.clone(), PhaseStats::default()),
    };
    client.w_p = w.clone();
    Ok((w, stats))
}

/// Sample-weighted average `Σ (n_i / Σn) w_i`.
pub fn aggregate(updates: &[(&ParamVector, usize)]) -> Result<ParamVector> {
    let (first, _) = updates
        .first()
        .ok_or_else(|| Error::invalid("nothing to aggregate"))?;
    let d = first.len();
    if updates.iter().any(|(w, _)| w.len() != d) {
        return Err(Error::invalid("aggregated models differ in length"));
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::invalid("aggregation weights sum to zero"));
    }
    let mut out = vec![0.0; d];
    for (w, n) in updates {
        let p = *n as f64 / total as f64;
        for (o, v) in out.iter_mut().zip(w.as_slice()) {
            *o += p * v;
        }
    }
    ParamVector::new(out)
}

/// Uniformly samples `⌈C·N⌉` distinct client ids, sorted ascending.
pub fn sample_participants(
    n_clients: usize,
    fraction: f64,
    seed: u64,
    round: usize,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "participation must lie in (0, 1], got {fraction}"
        )));
    }
    let raw = fraction * n_clients as f64;
    if raw < 1.0 - 1e-9 {
        return Err(Error::invalid(format!(
            "participation {fraction} of {n_clients} clients selects fewer than one"
        )));
    }
    let count = (raw - 1e-9).ceil() as usize;
    if count >= n_clients {
        return Ok((0..n_clients).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, usize::MAX, round, Phase::Generic));
    let mut ids = rand::seq::index::sample(&mut rng, n_clients, count).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

pub fn accuracy(w: &ParamVector, data: &Dataset, spec: &MlpSpec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty test set"));
    }
    let pred = model::predict(w, spec, &data.inputs, data.in_dim)?;
    let correct = pred
        .iter()
        .zip(&data.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Accuracy of the generic model on the pooled test set.
pub fn evaluate_generic(w_g: &ParamVector, global_test: &Dataset, spec: &MlpSpec) -> Result<f64> {
    accuracy(w_g, global_test, spec)
}

/// `Σ (n_i / n) · acc_i` of each personalized model on its own local test set.
pub fn evaluate_personalized(clients: &[ClientState], spec: &MlpSpec) -> Result<f64> {
    if clients.is_empty() {
        return Err(Error::invalid("no clients to evaluate"));
    }
    let n: usize = clients.iter().map(|c| c.n_i).sum();
    let mut total = 0.0;
    for c in clients {
        total += c.n_i as f64 / n as f64 * accuracy(&c.w_p, &c.test, spec)?;
    }
    Ok(total)
}

/// Starts a newcomer from the generic model and fine-tunes it with plain cross-entropy.
pub fn fine_tune_new_client(
    w_g: &ParamVector,
    train: &Dataset,
    test: &Dataset,
    spec: &MlpSpec,
    hyper: &LocalHyper,
    seed: u64,
) -> Result<(ParamVector, f64)> {
    check_len("generic model", w_g, spec)?;
    let (w, _) = descend(w_g, train, hyper, seed, |w, b| plain_ce(w, spec, b))?;
    if !w.is_finite() {
        return Err(Error::NonFinite {
            round: 0,
            detail: "fine-tuned model".into(),
        });
    }
    let acc = accuracy(&w, test, spec)?;
    Ok((w, acc))
}

/// Everything the training loop needs, already materialized.
#[derive(Debug, Clone)]
pub struct TrainingSetup {
    pub spec: MlpSpec,
    pub clients: Vec<ClientState>,
    pub global_test: Dataset,
    pub strategy: Strategy,
    pub gm_hyper: LocalHyper,
    pub pm_hyper: LocalHyper,
    pub rounds: usize,
    pub participation: f64,
    pub sampling_seed: u64,
    pub t_agg: f64,
    pub protocols: Vec<Protocol>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub records: Vec<RoundRecord>,
    pub schedule: Schedule,
    pub timelines: Vec<Timeline>,
}

impl TrainingOutcome {
    pub fn timeline(&self, protocol: Protocol) -> Option<&Timeline> {
        self.timelines.iter().find(|t| t.protocol == protocol)
    }
}

fn in_round(round: usize, client: usize, phase: &str, e: Error) -> Error {
    match e {
        Error::NonFinite { detail, .. } => Error::NonFinite {
            round,
            detail: format!("client {client}, {phase} phase: {detail}"),
        },
        other => other,
    }
}

fn watchdog(
    round: usize,
    client: usize,
    phase: &str,
    w: &ParamVector,
    stats: &PhaseStats,
) -> Result<()> {
    if !w.is_finite() || !stats.ce.is_finite() || !stats.reg.is_finite() {
        return Err(Error::NonFinite {
            round,
            detail: format!(
                "client {client}, {phase} phase: ce = {}, reg = {}",
                stats.ce, stats.reg
            ),
        });
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Runs the configured number of rounds and replays them on the simulated clock.
///
/// Client updates inside a round run on the current rayon pool; results do
/// not depend on its size.
pub fn run_training(setup: TrainingSetup) -> Result<TrainingOutcome> {
    let TrainingSetup {
        spec,
        mut clients,
        global_test,
        strategy,
        gm_hyper,
        pm_hyper,
        rounds,
        participation,
        sampling_seed,
        t_agg,
        protocols,
    } = setup;
    spec.validate()?;
    strategy.coeffs.validate()?;
    if clients.is_empty() {
        return Err(Error::invalid("no clients"));
    }
    if clients.iter().enumerate().any(|(i, c)| c.id != i) {
        return Err(Error::invalid("client ids must be 0..N in order"));
    }
    let w0 = clients[0].w_g_local.clone();
    check_len("initial generic model", &w0, &spec)?;
    let mut server = ServerState { w_g: w0, round: 0 };
    let mut records = Vec::with_capacity(rounds);
    let mut schedule = Schedule {
        participants: Vec::with_capacity(rounds),
        epochs_g: gm_hyper.epochs,
        epochs_p: pm_hyper.epochs,
    };

    for t in 1..=rounds {
        let participants = sample_participants(clients.len(), participation, sampling_seed, t)?;
        let mut selected = vec![false; clients.len()];
        for &k in &participants {
            selected[k] = true;
        }

        let broadcast = server.w_g.clone();
        let gm_results: Vec<(usize, PhaseStats)> = clients
            .par_iter_mut()
            .filter(|c| selected[c.id])
            .map(|c| {
                let stream = stream_seed(sampling_seed, c.id, t, Phase::Generic);
                let (w, stats) = gm_update(c, &broadcast, &strategy, &gm_hyper, &spec, stream)
                    .map_err(|e| in_round(t, c.id, "generic", e))?;
                watchdog(t, c.id, "generic", &w, &stats)?;
                Ok((c.id, stats))
            })
            .collect::<Vec<Result<_>>>()
            .into_iter()
            // Lowest client id wins when several fail, whatever the pool size.
            .collect::<Vec<Result<_>>>()
            .into_iter()
            .collect::<Result<_>>()?;

        let updates: Vec<(&ParamVector, usize)> = participants
            .iter()
            .map(|&k| (&clients[k].w_g_local, clients[k].n_i))
            .collect();
        server.w_g = aggregate(&updates)?;
        server.round = t;

        let pm_results: Vec<(usize, PhaseStats)> = if strategy.variant == Variant::Fedavg {
            // The generic model doubles as every client's personalized model.
            for c in clients.iter_mut() {
                c.w_p = server.w_g.clone();
            }
            participants
                .iter()
                .map(|&k| (k, PhaseStats::default()))
                .collect()
        } else {
            clients
                .par_iter_mut()
                .filter(|c| selected[c.id])
                .map(|c| {
                    let stream = stream_seed(sampling_seed, c.id, t, Phase::Personalized);
                    let teacher = c.w_g_local.clone();
                    let (w, stats) = pm_update(c, &teacher, &strategy, &pm_hyper, &spec, stream)
                        .map_err(|e| in_round(t, c.id, "personalized", e))?;
                    watchdog(t, c.id, "personalized", &w, &stats)?;
                    Ok((c.id, stats))
                })
                .collect::<Result<_>>()?
        };

        records.push(RoundRecord {
            round: t,
            gm_global_acc: evaluate_generic(&server.w_g, &global_test, &spec)?,
            pm_weighted_acc: evaluate_personalized(&clients, &spec)?,
            gm_ce: mean(gm_results.iter().map(|(_, s)| s.ce)),
            gm_reg: mean(gm_results.iter().map(|(_, s)| s.reg)),
            pm_ce: mean(pm_results.iter().map(|(_, s)| s.ce)),
            pm_reg: mean(pm_results.iter().map(|(_, s)| s.reg)),
            participants: participants.clone(),
            t_sim_cw: None,
            t_sim_wf: None,
        });
        schedule.participants.push(participants);
    }

    let mut timelines = Vec::new();
    if rounds > 0 {
        let timings: Vec<ClientTiming> = clients.iter().map(|c| c.timing).collect();
        for &p in &protocols {
            let tl = timing::simulate(&schedule, &timings, t_agg, p)?;
            for (rec, end) in records.iter_mut().zip(tl.round_ends()) {
                match p {
                    Protocol::ComputeAndWait => rec.t_sim_cw = Some(end),
                    Protocol::WaitFree => rec.t_sim_wf = Some(end),
                }
            }
            timelines.push(tl);
        }
    }

    Ok(TrainingOutcome {
        server,
        clients,
        records,
        schedule,
        timelines,
    })
}
