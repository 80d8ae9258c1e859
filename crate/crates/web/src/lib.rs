//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each operation is a plain Rust function returning a serializable report, so it can be
//! tested natively. The `#[wasm_bindgen]` wrappers only encode that report as JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use scd_core::data::{dirichlet_partition, gen_synthetic, SyntheticKind};
use scd_core::error::{Error, Result};
use scd_core::model::{init_model, MlpSpec};
use scd_core::spectrum::{spectrum, truncate};
use scd_core::timing::{
    closed_form_round_time, simulate, ClientTiming, Protocol, Schedule, Timeline,
};

/// Upper bound on parameters so a typo in the page cannot freeze the tab.
pub const MAX_PARAMS: usize = 1 << 20;

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub d: usize,
    /// Number of leading coefficients the generic-model term compares.
    pub kept: usize,
    pub magnitudes: Vec<f64>,
    /// Share of spectral energy in the kept coefficients.
    pub kept_energy: f64,
}

pub fn init_spectrum(layer_sizes: &[usize], seed: u64, tau: f64) -> Result<SpectrumReport> {
    let spec = MlpSpec::new(layer_sizes.to_vec(), seed)?;
    if spec.param_count() > MAX_PARAMS {
        return Err(Error::InvalidArgument(format!(
            "{} parameters exceeds the demo limit of {MAX_PARAMS}",
            spec.param_count()
        )));
    }
    let w = init_model(&spec)?;
    let s = spectrum(w.as_slice())?;
    let d = s.len();
    let kept = truncate(&s, tau)?.len();
    let energy = |v: &[f64]| v.iter().map(|m| m * m).sum::<f64>();
    let total = energy(s.values());
    Ok(SpectrumReport {
        d,
        kept,
        kept_energy: if total > 0.0 {
            energy(&s.values()[..kept]) / total
        } else {
            0.0
        },
        magnitudes: s.values().to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolInputs {
    pub timing: ClientTiming,
    pub t_agg: f64,
    pub epochs_g: usize,
    pub epochs_p: usize,
    pub n_clients: usize,
    pub rounds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolReport {
    pub compute_and_wait: Timeline,
    pub wait_free: Timeline,
    pub round_cw: f64,
    pub round_wf: f64,
    pub speedup: f64,
}

pub fn compare_protocols(inp: &ProtocolInputs) -> Result<ProtocolReport> {
    if inp.n_clients == 0 || inp.n_clients > 64 || inp.rounds == 0 || inp.rounds > 200 {
        return Err(Error::InvalidArgument(
            "demo supports 1..=64 clients and 1..=200 rounds".into(),
        ));
    }
    let schedule = Schedule::full(inp.n_clients, inp.rounds, inp.epochs_g, inp.epochs_p);
    let timings = vec![inp.timing; inp.n_clients];
    let cw = simulate(&schedule, &timings, inp.t_agg, Protocol::ComputeAndWait)?;
    let wf = simulate(&schedule, &timings, inp.t_agg, Protocol::WaitFree)?;
    let round = |p| closed_form_round_time(&inp.timing, inp.epochs_g, inp.epochs_p, inp.t_agg, p);
    let speedup = if wf.total > 0.0 {
        cw.total / wf.total
    } else {
        1.0
    };
    Ok(ProtocolReport {
        round_cw: round(Protocol::ComputeAndWait),
        round_wf: round(Protocol::WaitFree),
        speedup,
        compute_and_wait: cw,
        wait_free: wf,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionReport {
    pub alpha: f64,
    pub histograms: Vec<Vec<usize>>,
    pub mean_tv: f64,
}

pub fn partition_histograms(
    n_samples: usize,
    num_classes: usize,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<PartitionReport> {
    if n_samples > 100_000 || n_clients > 200 {
        return Err(Error::InvalidArgument(
            "demo supports up to 100000 samples and 200 clients".into(),
        ));
    }
    // Features are irrelevant to the split, so the smallest allowed dataset suffices.
    let ds = gen_synthetic(
        SyntheticKind::GaussianBlobs,
        n_samples,
        num_classes,
        2,
        0.0,
        seed,
    )?;
    let p = dirichlet_partition(&ds, n_clients, alpha, seed)?;
    Ok(PartitionReport {
        alpha,
        mean_tv: p.mean_tv_to_global(&ds),
        histograms: p.histograms(&ds),
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// Spectrum of a freshly initialized MLP, as JSON.
#[wasm_bindgen(js_name = initSpectrum)]
pub fn init_spectrum_js(
    layer_sizes: Vec<u32>,
    seed: u32,
    tau: f64,
) -> std::result::Result<String, JsError> {
    let sizes: Vec<usize> = layer_sizes.into_iter().map(|s| s as usize).collect();
    to_js(init_spectrum(&sizes, seed as u64, tau))
}

/// Both protocol timelines for homogeneous clients, as JSON.
#[wasm_bindgen(js_name = compareProtocols)]
#[allow(clippy::too_many_arguments)]
pub fn compare_protocols_js(
    t_gm_epoch: f64,
    t_pm_epoch: f64,
    t_up: f64,
    t_down: f64,
    t_agg: f64,
    epochs_g: u32,
    epochs_p: u32,
    n_clients: u32,
    rounds: u32,
) -> std::result::Result<String, JsError> {
    to_js(compare_protocols(&ProtocolInputs {
        timing: ClientTiming {
            t_gm_epoch,
            t_pm_epoch,
            t_up,
            t_down,
        },
        t_agg,
        epochs_g: epochs_g as usize,
        epochs_p: epochs_p as usize,
        n_clients: n_clients as usize,
        rounds: rounds as usize,
    }))
}

/// Per-client label histograms of a Dirichlet split, as JSON.
#[wasm_bindgen(js_name = partitionHistograms)]
pub fn partition_histograms_js(
    n_samples: u32,
    num_classes: u32,
    n_clients: u32,
    alpha: f64,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(partition_histograms(
        n_samples as usize,
        num_classes as usize,
        n_clients as usize,
        alpha,
        seed as u64,
    ))
}
