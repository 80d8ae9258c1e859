//! Cross-entropy plus spectral distillation terms.
//!
//! The personalized loss pulls the full spectrum of a personalized model
//! toward its client's freshly trained generic model; the generic loss pulls
//! the truncated (low-index) spectrum of the generic model toward the
//! client's previous personalized model. Teacher spectra are computed once per
//! round by the caller and passed in frozen.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ce_loss_and_grad, LabeledBatch, MlpSpec};
use crate::spectrum;
use crate::spectrum::{ParamVector, SpectralDivergence, SpectrumKind, SpectrumVector, DEFAULT_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillCoefficients {
    pub lambda_p: f64,
    pub lambda_g: f64,
    pub tau: f64,
    pub eps: f64,
    #[serde(default)]
    pub normalize: bool,
}

impl Default for DistillCoefficients {
    fn default() -> Self {
        DistillCoefficients {
            lambda_p: 1.0,
            lambda_g: 0.1,
            tau: 0.2,
            eps: DEFAULT_EPS,
            normalize: false,
        }
    }
}

impl DistillCoefficients {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_p >= 0.0) || !self.lambda_p.is_finite() {
            return Err(Error::invalid("lambda_p must be a finite value >= 0"));
        }
        if !(self.lambda_g >= 0.0) || !self.lambda_g.is_finite() {
            return Err(Error::invalid("lambda_g must be a finite value >= 0"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid("tau must lie in (0, 1]"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps must be positive"));
        }
        Ok(())
    }

    fn divergence(&self) -> SpectralDivergence {
        SpectralDivergence {
            eps: self.eps,
            normalize: self.normalize,
        }
    }
}

/// Loss value split into its two parts, plus the total gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossParts {
    pub ce: f64,
    /// Regularizer value before multiplying by its coefficient.
    pub reg: f64,
    pub total: f64,
    pub grad: ParamVector,
}

fn add_scaled(grad: &mut ParamVector, scale: f64, extra: &ParamVector) {
    for (g, e) in grad.as_mut_slice().iter_mut().zip(extra.as_slice()) {
        *g += scale * e;
    }
}

fn with_spectral_term(
    w: &ParamVector,
    spec: &MlpSpec,
    batch: &LabeledBatch,
    teacher: &SpectrumVector,
    lambda: f64,
    tau: f64,
    coeffs: &DistillCoefficients,
) -> Result<LossParts> {
    let (ce, mut grad) = ce_loss_and_grad(w, spec, batch)?;
    // A zero coefficient skips the term entirely so the result is bit-identical
    // to plain cross-entropy.
    if lambda == 0.0 {
        return Ok(LossParts {
            ce,
            reg: 0.0,
            total: ce,
            grad,
        });
    }
    let (reg, reg_grad) = coeffs
        .divergence()
        .value_and_grad(w.as_slice(), teacher, tau)?;
    add_scaled(&mut grad, lambda, &reg_grad);
    Ok(LossParts {
        ce,
        reg,
        total: ce + lambda * reg,
        grad,
    })
}

/// `CE(w_p) + λ_p · D(s(w_p) ‖ s(w_G,i))` with a full teacher spectrum.
pub fn pm_loss_and_grad(
    w_p: &ParamVector,
    teacher_spectrum: &SpectrumVector,
    spec: &MlpSpec,
    batch: &LabeledBatch,
    coeffs: &DistillCoefficients,
) -> Result<LossParts> {
    if teacher_spectrum.kind() != SpectrumKind::Full {
        return Err(Error::invalid(
            "personalized-model teacher must be a full spectrum",
        ));
    }
    with_spectral_term(
        w_p,
        spec,
        batch,
        teacher_spectrum,
        coeffs.lambda_p,
        1.0,
        coeffs,
    )
}

/// `CE(w_G) + λ_g · D(ŝ(w_G) ‖ ŝ(w_p))` with a spectrum truncated at `coeffs.tau`.
pub fn gm_loss_and_grad(
    w_g: &ParamVector,
    teacher_trunc_spectrum: &SpectrumVector,
    spec: &MlpSpec,
    batch: &LabeledBatch,
    coeffs: &DistillCoefficients,
) -> Result<LossParts> {
    match teacher_trunc_spectrum.kind() {
        SpectrumKind::Truncated(t) if t == coeffs.tau => {}
        other => {
            return Err(Error::invalid(format!(
                "generic-model teacher must be truncated at tau = {}, got {other:?}",
                coeffs.tau
            )))
        }
    }
    with_spectral_term(
        w_g,
        spec,
        batch,
        teacher_trunc_spectrum,
        coeffs.lambda_g,
        coeffs.tau,
        coeffs,
    )
}

/// Teacher for the personalized update: the full spectrum of `w`.
pub fn pm_teacher(w: &ParamVector) -> Result<SpectrumVector> {
    spectrum::spectrum(w.as_slice())
}

/// Teacher for the generic update: the truncated spectrum of `w`.
pub fn gm_teacher(w: &ParamVector, tau: f64) -> Result<SpectrumVector> {
    spectrum::truncate(&spectrum::spectrum(w.as_slice())?, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn setup() -> (MlpSpec, ParamVector, ParamVector, LabeledBatch) {
        let spec = MlpSpec::new(vec![3, 4, 3], 7).unwrap();
        let a = init_model(&spec).unwrap();
        let b = init_model(&MlpSpec::new(vec![3, 4, 3], 8).unwrap()).unwrap();
        let batch = LabeledBatch::new(vec![0.5, -1.0, 2.0, 1.5, 0.2, -0.3], 3, vec![2, 0]).unwrap();
        (spec, a, b, batch)
    }

    #[test]
    fn zero_lambda_is_plain_ce() {
        let (spec, a, b, batch) = setup();
        let coeffs = DistillCoefficients {
            lambda_p: 0.0,
            lambda_g: 0.0,
            ..Default::default()
        };
        let (ce, grad) = ce_loss_and_grad(&a, &spec, &batch).unwrap();
        let pm = pm_loss_and_grad(&a, &pm_teacher(&b).unwrap(), &spec, &batch, &coeffs).unwrap();
        assert_eq!(pm.total.to_bits(), ce.to_bits());
        assert_eq!(pm.grad, grad);
        let gm = gm_loss_and_grad(
            &a,
            &gm_teacher(&b, coeffs.tau).unwrap(),
            &spec,
            &batch,
            &coeffs,
        )
        .unwrap();
        assert_eq!(gm.total.to_bits(), ce.to_bits());
        assert_eq!(gm.grad, grad);
    }

    #[test]
    fn self_teacher_has_zero_regularizer() {
        let (spec, a, _, batch) = setup();
        let coeffs = DistillCoefficients::default();
        let pm = pm_loss_and_grad(&a, &pm_teacher(&a).unwrap(), &spec, &batch, &coeffs).unwrap();
        assert_eq!(pm.reg, 0.0);
        assert_eq!(pm.total, pm.ce);
    }

    #[test]
    fn full_truncation_matches_pm_regularizer() {
        let (spec, a, b, batch) = setup();
        let coeffs = DistillCoefficients {
            lambda_p: 0.3,
            lambda_g: 0.3,
            tau: 1.0,
            ..Default::default()
        };
        let pm = pm_loss_and_grad(&a, &pm_teacher(&b).unwrap(), &spec, &batch, &coeffs).unwrap();
        let gm =
            gm_loss_and_grad(&a, &gm_teacher(&b, 1.0).unwrap(), &spec, &batch, &coeffs).unwrap();
        assert!((pm.reg - gm.reg).abs() < 1e-12);
        assert_eq!(pm.grad, gm.grad);
    }

    #[test]
    fn teacher_kind_is_enforced() {
        let (spec, a, b, batch) = setup();
        let coeffs = DistillCoefficients::default();
        let trunc = gm_teacher(&b, coeffs.tau).unwrap();
        let full = pm_teacher(&b).unwrap();
        assert!(pm_loss_and_grad(&a, &trunc, &spec, &batch, &coeffs).is_err());
        assert!(gm_loss_and_grad(&a, &full, &spec, &batch, &coeffs).is_err());
        let other_tau = gm_teacher(&b, 0.5).unwrap();
        assert!(gm_loss_and_grad(&a, &other_tau, &spec, &batch, &coeffs).is_err());
    }

    #[test]
    fn coefficient_validation() {
        assert!(DistillCoefficients::default().validate().is_ok());
        let bad = DistillCoefficients {
            tau: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DistillCoefficients {
            lambda_p: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
