use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::StateInit;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior<F> {
    pub mean: F,
    pub var: F,
}

/// IG(shape, scale) with mean `scale / (shape − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGammaPrior<F> {
    pub shape: F,
    pub scale: F,
}

impl<F: Scalar> NormalPrior<F> {
    pub fn new(mean: F, var: F) -> Self {
        Self { mean, var }
    }
}

impl<F: Scalar> InvGammaPrior<F> {
    pub fn new(shape: F, scale: F) -> Self {
        Self { shape, scale }
    }
}

/// Independent priors for every static parameter and for `κ₀`.
///
/// The `λ₁` prior is truncated to `[−1, 1]`. Defaults: N(0, 10) for
/// locations, IG(2.001, 0.001) for variances, `κ₀ ~ N(0, 10)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec<F> {
    pub alpha: NormalPrior<F>,
    pub beta: NormalPrior<F>,
    pub theta: NormalPrior<F>,
    pub lambda1: NormalPrior<F>,
    pub lambda2: NormalPrior<F>,
    pub gamma0: NormalPrior<F>,
    pub sigma2_eps: InvGammaPrior<F>,
    pub sigma2_omega: InvGammaPrior<F>,
    pub sigma2_gamma: InvGammaPrior<F>,
    pub kappa0: NormalPrior<F>,
}

impl<F: Scalar> Default for PriorSpec<F> {
    fn default() -> Self {
        let loc = NormalPrior::new(F::zero(), F::lit(10.0));
        let var = InvGammaPrior::new(F::lit(2.001), F::lit(0.001));
        Self {
            alpha: loc,
            beta: loc,
            theta: loc,
            lambda1: loc,
            lambda2: loc,
            gamma0: loc,
            sigma2_eps: var,
            sigma2_omega: var,
            sigma2_gamma: var,
            kappa0: loc,
        }
    }
}

impl<F: Scalar> PriorSpec<F> {
    pub fn validate(&self) -> Result<()> {
        let normals = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("theta", self.theta),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("gamma0", self.gamma0),
            ("kappa0", self.kappa0),
        ];
        for (name, p) in normals {
            if !p.mean.is_finite() || !(p.var > F::zero()) || !p.var.is_finite() {
                return Err(Error::invalid(format!("prior for {name} needs a finite mean and positive variance")));
            }
        }
        let igs = [
            ("sigma2_eps", self.sigma2_eps),
            ("sigma2_omega", self.sigma2_omega),
            ("sigma2_gamma", self.sigma2_gamma),
        ];
        for (name, p) in igs {
            if !(p.shape > F::zero() && p.scale > F::zero()) || !p.shape.is_finite() || !p.scale.is_finite() {
                return Err(Error::invalid(format!("prior for {name} needs positive shape and scale")));
            }
        }
        Ok(())
    }

    /// Kalman initial state matching the `κ₀` prior.
    pub fn state_init(&self) -> StateInit<F> {
        StateInit { m0: self.kappa0.mean, c0: self.kappa0.var }
    }
}

/// Which form of the full conditionals to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionalForm {
    /// Per-age variance shape `ã + T/2`; `λ₂` kept in the volatility
    /// residuals of the `σ²_γ`, `λ₁` and `γ₀` updates.
    #[default]
    Corrected,
    /// Per-age shape `ã + pT/2`, `λ₂` dropped from
    /// the `σ²_γ`, `λ₁` and `γ₀` updates.
    Uncorrected,
}
