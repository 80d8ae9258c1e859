//! Weight-space spectra.
//!
//! A model's weights are flattened into one [`ParamVector`]; its *spectrum*
//! is the vector of DFT magnitudes of that whole vector. Distillation between
//! two models compares spectra with the divergence
//! `D(p‖q) = Σ p_i log p_i − p_i log q_i` (with `0 log 0 = 0`), which is the
//! KL divergence when `p` and `q` happen to be stochastic vectors but is
//! applied here to raw magnitudes unless normalization is requested.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

/// Default floor applied inside logarithms.
pub const DEFAULT_EPS: f64 = 1e-12;

/// Flattened model weights in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("parameter vector must be non-empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "parameter vector entry {i} is not finite"
            )));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self -= step * grad`.
    pub fn descend(&mut self, step: f64, grad: &ParamVector) {
        debug_assert_eq!(self.len(), grad.len());
        for (w, g) in self.0.iter_mut().zip(&grad.0) {
            *w -= step * g;
        }
    }

    /// Order-sensitive checksum over the exact bit patterns.
    pub fn checksum(&self) -> u64 {
        // FNV-1a over the little-endian bytes.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.0 {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Complex DFT output of a real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum(pub Vec<Complex64>);

impl ComplexSpectrum {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Full,
    Truncated(f64),
}

impl SpectrumKind {
    /// Retained fraction; a full spectrum behaves like `τ = 1`.
    pub fn tau(self) -> f64 {
        match self {
            SpectrumKind::Full => 1.0,
            SpectrumKind::Truncated(t) => t,
        }
    }
}

/// Non-negative DFT magnitudes, possibly truncated to the leading entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumVector {
    values: Vec<f64>,
    kind: SpectrumKind,
}

impl SpectrumVector {
    pub fn new(values: Vec<f64>, kind: SpectrumKind) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!(
                "spectrum entry {i} must be finite and non-negative"
            )));
        }
        Ok(SpectrumVector { values, kind })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> SpectrumKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Number of entries kept by truncation at ratio `tau`.
pub fn truncated_len(d: usize, tau: f64) -> usize {
    // Guard the ceiling against products like 0.3 * 10 = 3.0000000000000004.
    let raw = tau * d as f64;
    let rounded = raw.round();
    let m = if (raw - rounded).abs() < 1e-9 * raw.max(1.0) {
        rounded
    } else {
        raw.ceil()
    };
    (m as usize).clamp(1, d)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("tau must lie in (0, 1], got {tau}")))
    }
}

pub fn dft(w: &[f64]) -> Result<ComplexSpectrum> {
    if w.is_empty() {
        return Err(Error::invalid("DFT of an empty vector"));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("DFT input contains non-finite entries"));
    }
    Ok(ComplexSpectrum(fft::plan_for(w.len()).forward_real(w)))
}

pub fn spectrum(w: &[f64]) -> Result<SpectrumVector> {
    let z = dft(w)?;
    Ok(SpectrumVector {
        values: z.0.iter().map(|c| c.norm()).collect(),
        kind: SpectrumKind::Full,
    })
}

/// Keeps the literal first `⌈τd⌉` entries in standard DFT order.
pub fn truncate(s: &SpectrumVector, tau: f64) -> Result<SpectrumVector> {
    check_tau(tau)?;
    if s.kind != SpectrumKind::Full {
        return Err(Error::invalid("only a full spectrum can be truncated"));
    }
    let m = truncated_len(s.len(), tau);
    Ok(SpectrumVector {
        values: s.values[..m].to_vec(),
        kind: SpectrumKind::Truncated(tau),
    })
}

/// Divergence settings shared by the value and the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralDivergence {
    pub eps: f64,
    /// Rescale both spectra to sum 1 before comparing.
    pub normalize: bool,
}

impl Default for SpectralDivergence {
    fn default() -> Self {
        SpectralDivergence {
            eps: DEFAULT_EPS,
            normalize: false,
        }
    }
}

fn normalized(v: &[f64]) -> (Vec<f64>, f64) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        (v.iter().map(|x| x / total).collect(), total)
    } else {
        (v.to_vec(), total)
    }
}

impl SpectralDivergence {
    pub fn new(eps: f64, normalize: bool) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::invalid(format!("eps must be positive, got {eps}")));
        }
        Ok(SpectralDivergence { eps, normalize })
    }

    fn raw(&self, p: &[f64], q: &[f64]) -> f64 {
        p.iter()
            .zip(q)
            .map(|(&pi, &qi)| {
                if pi == 0.0 {
                    0.0
                } else {
                    let pf = pi.max(self.eps);
                    pf * (pf.ln() - qi.max(self.eps).ln())
                }
            })
            .sum()
    }

    pub fn value(&self, p: &SpectrumVector, q: &SpectrumVector) -> Result<f64> {
        if p.len() != q.len() || p.kind.tau() != q.kind.tau() {
            return Err(Error::invalid(format!(
                "divergence operands differ: {} entries ({:?}) vs {} entries ({:?})",
                p.len(),
                p.kind,
                q.len(),
                q.kind
            )));
        }
        if self.normalize {
            Ok(self.raw(&normalized(&p.values).0, &normalized(&q.values).0))
        } else {
            Ok(self.raw(&p.values, &q.values))
        }
    }

    /// Gradient of `D(ι_τ(s(w)) ‖ q)` with respect to `w`.
    pub fn grad(&self, w: &[f64], q: &SpectrumVector, tau: f64) -> Result<ParamVector> {
        self.value_and_grad(w, q, tau).map(|(_, g)| g)
    }

    /// `D(ι_τ(s(w)) ‖ q)` and its gradient, sharing one transform of `w`.
    pub fn value_and_grad(
        &self,
        w: &[f64],
        q: &SpectrumVector,
        tau: f64,
    ) -> Result<(f64, ParamVector)> {
        check_tau(tau)?;
        if q.kind.tau() != tau {
            return Err(Error::invalid(format!(
                "teacher spectrum {:?} does not match tau = {tau}",
                q.kind
            )));
        }
        let d = w.len();
        let m = truncated_len(d.max(1), tau);
        if q.len() != m {
            return Err(Error::invalid(format!(
                "teacher spectrum has {} entries, expected {m}",
                q.len()
            )));
        }
        let z = dft(w)?.0;
        let p: Vec<f64> = z[..m].iter().map(|c| c.norm()).collect();
        let value = if self.normalize {
            self.raw(&normalized(&p).0, &normalized(&q.values).0)
        } else {
            self.raw(&p, &q.values)
        };

        // Sensitivity of the divergence to each retained magnitude.
        let sens: Vec<f64> = if self.normalize {
            let (pn, total) = normalized(&p);
            let (qn, _) = normalized(&q.values);
            if total <= 0.0 {
                vec![0.0; m]
            } else {
                let h: Vec<f64> = pn
                    .iter()
                    .zip(&qn)
                    .map(|(&a, &b)| a.max(self.eps).ln() + 1.0 - b.max(self.eps).ln())
                    .collect();
                let mean: f64 = pn.iter().zip(&h).map(|(a, b)| a * b).sum();
                h.iter().map(|hk| (hk - mean) / total).collect()
            }
        } else {
            p.iter()
                .zip(&q.values)
                .map(|(&a, &b)| a.max(self.eps).ln() + 1.0 - b.max(self.eps).ln())
                .collect()
        };

        let mut v = vec![Complex64::new(0.0, 0.0); d];
        for k in 0..m {
            let mag = p[k];
            if mag >= self.eps {
                v[k] = z[k].conj() * (sens[k] / mag);
            }
        }
        let out = fft::plan_for(d).forward(&v);
        Ok((value, ParamVector(out.iter().map(|c| c.re).collect())))
    }
}

/// `D(p‖q)` on raw magnitudes.
pub fn divergence(p: &SpectrumVector, q: &SpectrumVector, eps: f64) -> Result<f64> {
    SpectralDivergence::new(eps, false)?.value(p, q)
}

/// Analytic gradient of `D(ι_τ(s(w)) ‖ q)` on raw magnitudes.
pub fn divergence_grad(w: &[f64], q: &SpectrumVector, tau: f64, eps: f64) -> Result<ParamVector> {
    SpectralDivergence::new(eps, false)?.grad(w, q, tau)
}
