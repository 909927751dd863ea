//! Conjugate full conditionals for the static parameters.
//!
//! Every update is exposed twice: as a [`FullConditional`] describing the
//! distribution, and through the samplers that draw from it in sweep order.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::prior::{ConditionalForm, InvGammaPrior, NormalPrior, PriorSpec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ObsVariance, StaticParams};
use crate::scalar::{draw_inverse_gamma, draw_normal, ln_two_pi, Scalar};

/// A closed-form full conditional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FullConditional<F> {
    Normal { mean: F, var: F },
    /// Normal restricted to `[lower, upper]`; `mean` and `var` are those of
    /// the untruncated density.
    TruncatedNormal { mean: F, var: F, lower: F, upper: F },
    InverseGamma { shape: F, scale: F },
}

impl<F: Scalar> FullConditional<F> {
    /// Normalized log density.
    pub fn log_density(&self, x: F) -> F {
        match *self {
            Self::Normal { mean, var } => {
                let d = x - mean;
                -F::lit(0.5) * (ln_two_pi::<F>() + var.ln() + d * d / var)
            }
            Self::TruncatedNormal { mean, var, lower, upper } => {
                if x < lower || x > upper {
                    return F::neg_infinity();
                }
                let d = x - mean;
                let base = -F::lit(0.5) * (ln_two_pi::<F>() + var.ln() + d * d / var);
                base - F::lit(truncated_mass(mean, var, lower, upper).ln())
            }
            Self::InverseGamma { shape, scale } => {
                if x <= F::zero() {
                    return F::neg_infinity();
                }
                let lg = F::lit(statrs::function::gamma::ln_gamma(shape.to_f64_lossy()));
                shape * scale.ln() - lg - (shape + F::one()) * x.ln() - scale / x
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        match *self {
            Self::Normal { mean, var } => draw_normal(rng, mean, var),
            Self::TruncatedNormal { mean, var, lower, upper } => {
                let u: f64 = F::open_unit(rng).to_f64_lossy();
                F::lit(truncated_normal_quantile(
                    mean.to_f64_lossy(),
                    var.to_f64_lossy(),
                    lower.to_f64_lossy(),
                    upper.to_f64_lossy(),
                    u,
                ))
            }
            Self::InverseGamma { shape, scale } => draw_inverse_gamma(rng, shape, scale),
        }
    }

    pub fn mean(&self) -> Option<F> {
        match *self {
            Self::Normal { mean, .. } => Some(mean),
            Self::InverseGamma { shape, scale } if shape > F::one() => Some(scale / (shape - F::one())),
            _ => None,
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn truncated_mass<F: Scalar>(mean: F, var: F, lower: F, upper: F) -> f64 {
    let sd = var.to_f64_lossy().sqrt();
    let m = mean.to_f64_lossy();
    let za = (lower.to_f64_lossy() - m) / sd;
    let zb = (upper.to_f64_lossy() - m) / sd;
    let n = std_normal();
    // Work in the lower tail, where the CDF keeps its relative precision.
    if za > 0.0 {
        n.cdf(-za) - n.cdf(-zb)
    } else {
        n.cdf(zb) - n.cdf(za)
    }
}

/// Inverse CDF of N(mean, var) truncated to `[lower, upper]` at `u ∈ (0, 1)`.
pub fn truncated_normal_quantile(mean: f64, var: f64, lower: f64, upper: f64, u: f64) -> f64 {
    if var <= 0.0 {
        return mean.clamp(lower, upper);
    }
    let sd = var.sqrt();
    let n = std_normal();
    let za = (lower - mean) / sd;
    let zb = (upper - mean) / sd;
    let z = if za > 0.0 {
        // Reflect so both bounds sit in the lower tail.
        let (pa, pb) = (n.cdf(-zb), n.cdf(-za));
        if pb - pa <= 0.0 {
            za
        } else {
            -n.inverse_cdf(pb - u * (pb - pa))
        }
    } else {
        let (pa, pb) = (n.cdf(za), n.cdf(zb));
        if pb - pa <= 0.0 {
            zb
        } else {
            n.inverse_cdf(pa + u * (pb - pa))
        }
    };
    (mean + sd * z).clamp(lower, upper)
}

/// Normal-normal update with prior `prior`, data precision `prec` and
/// precision-weighted data sum `wsum`.
fn normal_update<F: Scalar>(prior: NormalPrior<F>, prec: F, wsum: F) -> (F, F) {
    let post_prec = F::one() / prior.var + prec;
    let mean = (prior.mean / prior.var + wsum) / post_prec;
    (mean, F::one() / post_prec)
}

fn ig_update<F: Scalar>(prior: InvGammaPrior<F>, count: F, ssr: F) -> Result<FullConditional<F>> {
    let scale = prior.scale + F::lit(0.5) * ssr;
    if !(scale > F::zero()) || !scale.is_finite() {
        return Err(Error::invalid(format!("inverse-gamma scale {scale} is not positive")));
    }
    Ok(FullConditional::InverseGamma { shape: prior.shape + F::lit(0.5) * count, scale })
}

fn check_dims<F: Scalar>(y: &Matrix<F>, kappa: &[F], params: &StaticParams<F>) -> Result<()> {
    if kappa.len() != y.cols() + 1 {
        return Err(Error::invalid(format!(
            "kappa has length {}, expected T + 1 = {}",
            kappa.len(),
            y.cols() + 1
        )));
    }
    if params.p() != y.rows() {
        return Err(Error::invalid("parameter and panel age counts differ"));
    }
    Ok(())
}

/// `α_x | ·`: Normal with data `y_{x,t} − β_x κ_t`.
pub fn alpha_conditional<F: Scalar>(
    y: &Matrix<F>,
    kappa: &[F],
    params: &StaticParams<F>,
    x: usize,
    prior: NormalPrior<F>,
) -> FullConditional<F> {
    let s = params.sigma2_eps.at(x);
    let t_len = y.cols();
    let sum: F = (0..t_len).map(|t| y[(x, t)] - params.beta[x] * kappa[t + 1]).sum();
    let (mean, var) = normal_update(prior, F::from_usize_lossy(t_len) / s, sum / s);
    FullConditional::Normal { mean, var }
}

/// `β_x | ·`: Normal regression of `y_{x,t} − α_x` on `κ_t`.
pub fn beta_conditional<F: Scalar>(
    y: &Matrix<F>,
    kappa: &[F],
    params: &StaticParams<F>,
    x: usize,
    prior: NormalPrior<F>,
) -> FullConditional<F> {
    let s = params.sigma2_eps.at(x);
    let t_len = y.cols();
    let mut sxy = F::zero();
    let mut sxx = F::zero();
    for t in 0..t_len {
        let k = kappa[t + 1];
        sxy += (y[(x, t)] - params.alpha[x]) * k;
        sxx += k * k;
    }
    let (mean, var) = normal_update(prior, sxx / s, sxy / s);
    FullConditional::Normal { mean, var }
}

/// `θ | ·` with increment variances `v_t` (constant `σ²_ω` or `e^{γ_t}`).
pub fn theta_conditional<F: Scalar>(
    kappa: &[F],
    increment_var: &dyn Fn(usize) -> F,
    prior: NormalPrior<F>,
) -> FullConditional<F> {
    let mut prec = F::zero();
    let mut wsum = F::zero();
    for t in 1..kappa.len() {
        let v = increment_var(t);
        prec += F::one() / v;
        wsum += (kappa[t] - kappa[t - 1]) / v;
    }
    let (mean, var) = normal_update(prior, prec, wsum);
    FullConditional::Normal { mean, var }
}

/// `σ²_{ε,x} | ·` for one age, or the pooled `σ²_ε | ·` when `x` is `None`.
pub fn obs_var_conditional<F: Scalar>(
    y: &Matrix<F>,
    kappa: &[F],
    params: &StaticParams<F>,
    x: Option<usize>,
    prior: InvGammaPrior<F>,
    form: ConditionalForm,
) -> Result<FullConditional<F>> {
    let (p, t_len) = (y.rows(), y.cols());
    let ssr_row = |x: usize| -> F {
        (0..t_len)
            .map(|t| {
                let e = y[(x, t)] - params.alpha[x] - params.beta[x] * kappa[t + 1];
                e * e
            })
            .sum()
    };
    match x {
        Some(x) => {
            let count = match form {
                ConditionalForm::Corrected => t_len,
                ConditionalForm::Uncorrected => p * t_len,
            };
            ig_update(prior, F::from_usize_lossy(count), ssr_row(x))
        }
        None => ig_update(prior, F::from_usize_lossy(p * t_len), (0..p).map(ssr_row).sum()),
    }
}

/// `σ²_ω | ·` with residuals `κ_t − κ_{t−1} − θ`.
pub fn state_var_conditional<F: Scalar>(
    kappa: &[F],
    theta: F,
    prior: InvGammaPrior<F>,
) -> Result<FullConditional<F>> {
    let ssr: F = kappa.windows(2).map(|w| (w[1] - w[0] - theta) * (w[1] - w[0] - theta)).sum();
    ig_update(prior, F::from_usize_lossy(kappa.len() - 1), ssr)
}

/// Volatility parameters needed by the `σ²_γ`, `λ₁`, `λ₂`, `γ₀` updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolState<'a, F> {
    pub gamma0: F,
    /// `γ_{1:T}`.
    pub gamma: &'a [F],
    pub lambda1: F,
    pub lambda2: F,
    pub sigma2_gamma: F,
}

impl<F: Scalar> VolState<'_, F> {
    fn prev(&self, t: usize) -> F {
        if t == 0 {
            self.gamma0
        } else {
            self.gamma[t - 1]
        }
    }

    fn offset(&self, form: ConditionalForm) -> F {
        match form {
            ConditionalForm::Corrected => self.lambda2,
            ConditionalForm::Uncorrected => F::zero(),
        }
    }
}

/// `σ²_γ | ·` with residuals `γ_t − λ₁γ_{t−1} − λ₂`.
pub fn sigma2_gamma_conditional<F: Scalar>(
    vol: &VolState<'_, F>,
    prior: InvGammaPrior<F>,
    form: ConditionalForm,
) -> Result<FullConditional<F>> {
    let off = vol.offset(form);
    let ssr: F = (0..vol.gamma.len())
        .map(|t| {
            let e = vol.gamma[t] - vol.lambda1 * vol.prev(t) - off;
            e * e
        })
        .sum();
    ig_update(prior, F::from_usize_lossy(vol.gamma.len()), ssr)
}

/// `λ₁ | ·`: regression of `γ_t − λ₂` on `γ_{t−1}`, truncated to `[−1, 1]`.
pub fn lambda1_conditional<F: Scalar>(
    vol: &VolState<'_, F>,
    prior: NormalPrior<F>,
    form: ConditionalForm,
) -> FullConditional<F> {
    let off = vol.offset(form);
    let mut sxy = F::zero();
    let mut sxx = F::zero();
    for t in 0..vol.gamma.len() {
        let g = vol.prev(t);
        sxy += g * (vol.gamma[t] - off);
        sxx += g * g;
    }
    let (mean, var) = normal_update(prior, sxx / vol.sigma2_gamma, sxy / vol.sigma2_gamma);
    FullConditional::TruncatedNormal { mean, var, lower: -F::one(), upper: F::one() }
}

/// `λ₂ | ·`: mean of `γ_t − λ₁γ_{t−1}`.
pub fn lambda2_conditional<F: Scalar>(vol: &VolState<'_, F>, prior: NormalPrior<F>) -> FullConditional<F> {
    let sum: F = (0..vol.gamma.len()).map(|t| vol.gamma[t] - vol.lambda1 * vol.prev(t)).sum();
    let n = F::from_usize_lossy(vol.gamma.len());
    let (mean, var) = normal_update(prior, n / vol.sigma2_gamma, sum / vol.sigma2_gamma);
    FullConditional::Normal { mean, var }
}

/// `γ₀ | ·`: one observation `γ₁ − λ₂ = λ₁γ₀ + η₁`.
pub fn gamma0_conditional<F: Scalar>(
    vol: &VolState<'_, F>,
    prior: NormalPrior<F>,
    form: ConditionalForm,
) -> FullConditional<F> {
    let l = vol.lambda1;
    let target = vol.gamma[0] - vol.offset(form);
    let (mean, var) = normal_update(prior, l * l / vol.sigma2_gamma, l * target / vol.sigma2_gamma);
    FullConditional::Normal { mean, var }
}

/// One Gibbs pass over `(α_{x2:xp}, β_{x2:xp}, θ, σ²_ε, σ²_ω)` given κ.
///
/// The first age's α and β are held fixed.
pub fn sample_static_linear<F: Scalar, R: Rng + ?Sized>(
    y: &Matrix<F>,
    kappa: &[F],
    current: &StaticParams<F>,
    priors: &PriorSpec<F>,
    form: ConditionalForm,
    rng: &mut R,
) -> Result<StaticParams<F>> {
    check_dims(y, kappa, current)?;
    let mut psi = current.clone();
    sample_observation_block(y, kappa, &mut psi, priors, rng);
    let s2w = psi
        .sigma2_omega
        .ok_or_else(|| Error::invalid("linear sampler needs sigma2_omega"))?;
    psi.theta = theta_conditional(kappa, &|_| s2w, priors.theta).sample(rng);
    sample_obs_variances(y, kappa, &mut psi, priors, form, rng)?;
    psi.sigma2_omega = Some(state_var_conditional(kappa, psi.theta, priors.sigma2_omega)?.sample(rng));
    Ok(psi)
}

/// One Gibbs pass over `(α_{x2:xp}, β_{x2:xp}, θ, σ²_ε, σ²_γ, λ₁, λ₂, γ₀)`
/// given κ and `γ_{1:T}`.
pub fn sample_static_sv<F: Scalar, R: Rng + ?Sized>(
    y: &Matrix<F>,
    kappa: &[F],
    gamma: &[F],
    current: &StaticParams<F>,
    priors: &PriorSpec<F>,
    form: ConditionalForm,
    rng: &mut R,
) -> Result<StaticParams<F>> {
    check_dims(y, kappa, current)?;
    if gamma.len() != y.cols() {
        return Err(Error::invalid(format!("gamma has length {}, expected T = {}", gamma.len(), y.cols())));
    }
    let need = |v: Option<F>, name: &str| v.ok_or_else(|| Error::invalid(format!("volatility sampler needs {name}")));
    let mut psi = current.clone();
    sample_observation_block(y, kappa, &mut psi, priors, rng);
    psi.theta = theta_conditional(kappa, &|t| gamma[t - 1].exp(), priors.theta).sample(rng);
    sample_obs_variances(y, kappa, &mut psi, priors, form, rng)?;

    let mut vol = VolState {
        gamma0: need(psi.gamma0, "gamma0")?,
        gamma,
        lambda1: need(psi.lambda1, "lambda1")?,
        lambda2: need(psi.lambda2, "lambda2")?,
        sigma2_gamma: need(psi.sigma2_gamma, "sigma2_gamma")?,
    };
    vol.sigma2_gamma = sigma2_gamma_conditional(&vol, priors.sigma2_gamma, form)?.sample(rng);
    vol.lambda1 = lambda1_conditional(&vol, priors.lambda1, form).sample(rng);
    vol.lambda2 = lambda2_conditional(&vol, priors.lambda2).sample(rng);
    vol.gamma0 = gamma0_conditional(&vol, priors.gamma0, form).sample(rng);
    psi.sigma2_gamma = Some(vol.sigma2_gamma);
    psi.lambda1 = Some(vol.lambda1);
    psi.lambda2 = Some(vol.lambda2);
    psi.gamma0 = Some(vol.gamma0);
    Ok(psi)
}

fn sample_observation_block<F: Scalar, R: Rng + ?Sized>(
    y: &Matrix<F>,
    kappa: &[F],
    psi: &mut StaticParams<F>,
    priors: &PriorSpec<F>,
    rng: &mut R,
) {
    for x in 1..psi.p() {
        psi.alpha[x] = alpha_conditional(y, kappa, psi, x, priors.alpha).sample(rng);
        psi.beta[x] = beta_conditional(y, kappa, psi, x, priors.beta).sample(rng);
    }
}

fn sample_obs_variances<F: Scalar, R: Rng + ?Sized>(
    y: &Matrix<F>,
    kappa: &[F],
    psi: &mut StaticParams<F>,
    priors: &PriorSpec<F>,
    form: ConditionalForm,
    rng: &mut R,
) -> Result<()> {
    psi.sigma2_eps = match &psi.sigma2_eps {
        ObsVariance::Pooled(_) => {
            ObsVariance::Pooled(obs_var_conditional(y, kappa, psi, None, priors.sigma2_eps, form)?.sample(rng))
        }
        ObsVariance::PerAge(v) => {
            let mut out = Vec::with_capacity(v.len());
            for x in 0..v.len() {
                out.push(obs_var_conditional(y, kappa, psi, Some(x), priors.sigma2_eps, form)?.sample(rng));
            }
            ObsVariance::PerAge(out)
        }
    };
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (Matrix<f64>, Vec<f64>, StaticParams<f64>) {
        let y = Matrix::from_rows(&[vec![-3.0, -3.2], vec![-5.0, -5.5], vec![-6.1, -6.0]]);
        let kappa = vec![0.4, 0.1, -0.3];
        let params = StaticParams::lc_h(vec![-3.1, -5.2, -6.0], vec![0.2, 0.5, 0.3], -0.2, vec![0.02, 0.03, 0.05], 0.1);
        (y, kappa, params)
    }

    #[test]
    fn flat_alpha_prior_gives_residual_mean() {
        let (y, kappa, params) = toy();
        let prior = NormalPrior::new(0.0, 1e12);
        let FullConditional::Normal { mean, .. } = alpha_conditional(&y, &kappa, &params, 1, prior) else {
            panic!()
        };
        let direct = ((y[(1, 0)] - 0.5 * kappa[1]) + (y[(1, 1)] - 0.5 * kappa[2])) / 2.0;
        assert!(((mean - direct) / direct).abs() < 1e-4);
    }

    #[test]
    fn drift_line_leaves_prior_scale() {
        let kappa = [1.0f64, 0.8, 0.6, 0.4];
        let prior = InvGammaPrior::new(2.001, 0.001);
        let c = state_var_conditional(&kappa, -0.2, prior).unwrap();
        let FullConditional::InverseGamma { shape, scale } = c else { panic!() };
        assert!((scale - 0.001).abs() < 1e-15);
        assert!((shape - 3.501).abs() < 1e-12);
    }

    #[test]
    fn constant_gamma_collapses_to_linear_theta() {
        let kappa = [0.0, -0.3, -0.5, -0.6];
        let g: f64 = -1.7;
        let prior = NormalPrior::new(0.0, 10.0);
        let sv = theta_conditional(&kappa, &|_| g.exp(), prior);
        let s2w = g.exp();
        let t = 3.0;
        let mean = (10.0 * (kappa[3] - kappa[0]) + 0.0 * s2w) / (10.0 * t + s2w);
        let var = 10.0 * s2w / (10.0 * t + s2w);
        let FullConditional::Normal { mean: m, var: v } = sv else { panic!() };
        assert!((m - mean).abs() < 1e-14 && (v - var).abs() < 1e-14);
    }

    #[test]
    fn truncated_draws_stay_in_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (mean, var) in [(0.99, 0.001), (5.0, 0.01), (-40.0, 1.0), (0.0, 100.0)] {
            let c = FullConditional::TruncatedNormal { mean, var, lower: -1.0, upper: 1.0 };
            for _ in 0..2000 {
                let x = c.sample(&mut rng);
                assert!((-1.0..=1.0).contains(&x));
            }
        }
        assert_eq!(truncated_normal_quantile(50.0, 1.0, -1.0, 1.0, 0.3), 1.0);
    }

    #[test]
    fn uncorrected_form_changes_only_what_it_should() {
        let (y, kappa, params) = toy();
        let prior = InvGammaPrior::new(2.0, 1.0);
        let a = obs_var_conditional(&y, &kappa, &params, Some(0), prior, ConditionalForm::Corrected).unwrap();
        let b = obs_var_conditional(&y, &kappa, &params, Some(0), prior, ConditionalForm::Uncorrected).unwrap();
        let (FullConditional::InverseGamma { shape: sa, .. }, FullConditional::InverseGamma { shape: sb, .. }) = (a, b)
        else {
            panic!()
        };
        assert_eq!(sa, 3.0);
        assert_eq!(sb, 5.0);
    }

    #[test]
    fn constrained_coordinates_untouched() {
        let (y, kappa, params) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = sample_static_linear(&y, &kappa, &params, &PriorSpec::default(), ConditionalForm::Corrected, &mut rng)
            .unwrap();
        assert_eq!(out.alpha[0], params.alpha[0]);
        assert_eq!(out.beta[0], params.beta[0]);
        assert!(out.sigma2_omega.unwrap() > 0.0);
    }
}
