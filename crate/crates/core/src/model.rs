//! Model kinds, static parameters, identification constraints and forward
//! simulation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{standard_groups, AgeGroup, MortalityPanel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{draw_normal, Scalar};

/// The model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "LC")]
    Lc,
    #[serde(rename = "LC_H")]
    LcH,
    #[serde(rename = "LC2_H")]
    Lc2H,
    #[serde(rename = "LC3_H2")]
    Lc3H2,
    #[serde(rename = "LCSV")]
    Lcsv,
    #[serde(rename = "LCSV_H")]
    LcsvH,
    #[serde(rename = "LCSV_C")]
    LcsvC,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Lc,
        ModelKind::LcH,
        ModelKind::Lc2H,
        ModelKind::Lc3H2,
        ModelKind::Lcsv,
        ModelKind::LcsvH,
        ModelKind::LcsvC,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Lc => "LC",
            ModelKind::LcH => "LC_H",
            ModelKind::Lc2H => "LC2_H",
            ModelKind::Lc3H2 => "LC3_H2",
            ModelKind::Lcsv => "LCSV",
            ModelKind::LcsvH => "LCSV_H",
            ModelKind::LcsvC => "LCSV_C",
        }
    }

    /// Whether the library can estimate this model (all kinds can be simulated).
    pub fn supports_estimation(self) -> bool {
        matches!(self, ModelKind::Lc | ModelKind::LcH | ModelKind::Lcsv | ModelKind::LcsvH)
    }

    /// Linear-Gaussian single-factor models.
    pub fn is_linear(self) -> bool {
        matches!(self, ModelKind::Lc | ModelKind::LcH)
    }

    /// Log-volatility on the period effect.
    pub fn is_sv(self) -> bool {
        matches!(self, ModelKind::Lcsv | ModelKind::LcsvH | ModelKind::LcsvC)
    }

    /// Age-specific observation variances.
    pub fn is_heteroscedastic(self) -> bool {
        matches!(self, ModelKind::LcH | ModelKind::Lc2H | ModelKind::Lc3H2 | ModelKind::LcsvH)
    }

    pub fn has_cohort(self) -> bool {
        matches!(self, ModelKind::Lc2H | ModelKind::Lc3H2 | ModelKind::LcsvC)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    /// Accepts the canonical tags case-insensitively, with `-` or `_`.
    fn from_str(s: &str) -> Result<Self> {
        let norm: String =
            s.trim().chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_uppercase();
        ModelKind::ALL
            .into_iter()
            .find(|k| k.tag().replace('_', "") == norm)
            .ok_or_else(|| Error::invalid(format!("unknown model kind `{s}`")))
    }
}

/// Observation variance: one pooled value or one per age group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObsVariance<F> {
    Pooled(F),
    PerAge(Vec<F>),
}

impl<F: Scalar> ObsVariance<F> {
    /// Variance for age index `x`.
    pub fn at(&self, x: usize) -> F {
        match self {
            ObsVariance::Pooled(v) => *v,
            ObsVariance::PerAge(v) => v[x],
        }
    }

    /// Per-age vector of length `p`.
    pub fn to_vec(&self, p: usize) -> Vec<F> {
        match self {
            ObsVariance::Pooled(v) => vec![*v; p],
            ObsVariance::PerAge(v) => v.clone(),
        }
    }

    pub fn is_pooled(&self) -> bool {
        matches!(self, ObsVariance::Pooled(_))
    }

    pub fn values(&self) -> &[F] {
        match self {
            ObsVariance::Pooled(v) => std::slice::from_ref(v),
            ObsVariance::PerAge(v) => v,
        }
    }
}

/// Static parameter vector ψ. Fields not used by a kind stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticParams<F> {
    pub alpha: Vec<F>,
    pub beta: Vec<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<Vec<F>>,
    pub theta: F,
    pub sigma2_eps: ObsVariance<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_omega: Option<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_gamma: Option<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vartheta: Option<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_omega_zeta: Option<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cir_a: Option<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cir_b: Option<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cir_sigma: Option<F>,
}

impl<F: Scalar> StaticParams<F> {
    fn base(alpha: Vec<F>, beta: Vec<F>, theta: F, sigma2_eps: ObsVariance<F>) -> Self {
        Self {
            alpha,
            beta,
            beta2: None,
            theta,
            sigma2_eps,
            sigma2_omega: None,
            lambda1: None,
            lambda2: None,
            sigma2_gamma: None,
            gamma0: None,
            vartheta: None,
            sigma2_omega_zeta: None,
            cir_a: None,
            cir_b: None,
            cir_sigma: None,
        }
    }

    /// Lee-Carter with pooled observation variance.
    pub fn lc(alpha: Vec<F>, beta: Vec<F>, theta: F, sigma2_eps: F, sigma2_omega: F) -> Self {
        let mut p = Self::base(alpha, beta, theta, ObsVariance::Pooled(sigma2_eps));
        p.sigma2_omega = Some(sigma2_omega);
        p
    }

    /// Lee-Carter with age-specific observation variances.
    pub fn lc_h(alpha: Vec<F>, beta: Vec<F>, theta: F, sigma2_eps: Vec<F>, sigma2_omega: F) -> Self {
        let mut p = Self::base(alpha, beta, theta, ObsVariance::PerAge(sigma2_eps));
        p.sigma2_omega = Some(sigma2_omega);
        p
    }

    /// Stochastic-volatility Lee-Carter; pass a per-age variance for LCSV-H.
    #[allow(clippy::too_many_arguments)]
    pub fn lcsv(
        alpha: Vec<F>,
        beta: Vec<F>,
        theta: F,
        sigma2_eps: ObsVariance<F>,
        lambda1: F,
        lambda2: F,
        sigma2_gamma: F,
        gamma0: F,
    ) -> Self {
        let mut p = Self::base(alpha, beta, theta, sigma2_eps);
        p.lambda1 = Some(lambda1);
        p.lambda2 = Some(lambda2);
        p.sigma2_gamma = Some(sigma2_gamma);
        p.gamma0 = Some(gamma0);
        p
    }

    /// Number of age groups.
    pub fn p(&self) -> usize {
        self.alpha.len()
    }

    /// Observation variances as a length-p vector.
    pub fn obs_variances(&self) -> Vec<F> {
        self.sigma2_eps.to_vec(self.p())
    }

    /// Fitted mean `α + βκ` for one period.
    pub fn fitted(&self, kappa: F) -> Vec<F> {
        self.alpha.iter().zip(&self.beta).map(|(&a, &b)| a + b * kappa).collect()
    }

    /// Checks that every field needed by `kind` is present, finite and in
    /// range. Variances must be strictly positive.
    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        self.check(kind, false)
    }

    /// As [`validate`](Self::validate) but admits zero variances, which
    /// simulation accepts for noise-free draws.
    pub fn validate_for_simulation(&self, kind: ModelKind) -> Result<()> {
        self.check(kind, true)
    }

    fn check(&self, kind: ModelKind, allow_zero: bool) -> Result<()> {
        let p = self.p();
        if p == 0 {
            return Err(Error::invalid("alpha is empty"));
        }
        if self.beta.len() != p {
            return Err(Error::invalid(format!("beta has length {}, expected {p}", self.beta.len())));
        }
        let finite = |name: &str, v: F| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} is not finite")))
            }
        };
        let variance = |name: &str, v: F| {
            finite(name, v)?;
            if v > F::zero() || (allow_zero && v == F::zero()) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        let need = |name: &str, v: Option<F>| {
            v.ok_or_else(|| Error::invalid(format!("{kind} requires `{name}`")))
        };
        for (&a, &b) in self.alpha.iter().zip(&self.beta) {
            finite("alpha", a)?;
            finite("beta", b)?;
        }
        finite("theta", self.theta)?;
        match (&self.sigma2_eps, kind.is_heteroscedastic()) {
            (ObsVariance::PerAge(v), true) if v.len() != p => {
                return Err(Error::invalid(format!(
                    "sigma2_eps has length {}, expected {p}",
                    v.len()
                )))
            }
            (ObsVariance::PerAge(_), true) | (ObsVariance::Pooled(_), false) => {}
            (ObsVariance::Pooled(_), true) => {
                return Err(Error::invalid(format!("{kind} requires a per-age sigma2_eps vector")))
            }
            (ObsVariance::PerAge(_), false) => {
                return Err(Error::invalid(format!("{kind} requires a scalar sigma2_eps")))
            }
        }
        for &v in self.sigma2_eps.values() {
            variance("sigma2_eps", v)?;
        }
        if kind.is_sv() {
            let l1 = need("lambda1", self.lambda1)?;
            finite("lambda1", l1)?;
            finite("lambda2", need("lambda2", self.lambda2)?)?;
            variance("sigma2_gamma", need("sigma2_gamma", self.sigma2_gamma)?)?;
            finite("gamma0", need("gamma0", self.gamma0)?)?;
            if l1.abs() > F::one() {
                return Err(Error::invalid(format!("|lambda1| must not exceed 1, got {l1}")));
            }
        } else {
            variance("sigma2_omega", need("sigma2_omega", self.sigma2_omega)?)?;
        }
        if kind.has_cohort() {
            let b2 = self
                .beta2
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("{kind} requires `beta2`")))?;
            if b2.len() != p {
                return Err(Error::invalid(format!("beta2 has length {}, expected {p}", b2.len())));
            }
            let vt = need("vartheta", self.vartheta)?;
            if !(vt.abs() < F::one()) {
                return Err(Error::invalid(format!("|vartheta| must be below 1, got {vt}")));
            }
            variance("sigma2_omega_zeta", need("sigma2_omega_zeta", self.sigma2_omega_zeta)?)?;
        }
        if kind == ModelKind::Lc3H2 {
            let a = need("cir_a", self.cir_a)?;
            let b = need("cir_b", self.cir_b)?;
            let s = need("cir_sigma", self.cir_sigma)?;
            for (name, v) in [("cir_a", a), ("cir_b", b), ("cir_sigma", s)] {
                finite(name, v)?;
                if !(v > F::zero()) {
                    return Err(Error::invalid(format!("{name} must be positive")));
                }
            }
            if F::lit(2.0) * a * b < s * s {
                return Err(Error::invalid("CIR parameters violate 2ab >= sigma^2"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Fixed values of α and β at the first age group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec<F> {
    pub alpha_x1: F,
    pub beta_x1: F,
}

impl<F: Scalar> ConstraintSpec<F> {
    pub fn new(alpha_x1: F, beta_x1: F) -> Result<Self> {
        if beta_x1 == F::zero() || !beta_x1.is_finite() || !alpha_x1.is_finite() {
            return Err(Error::invalid("beta_x1 must be finite and non-zero"));
        }
        Ok(Self { alpha_x1, beta_x1 })
    }

    /// Overwrites the first-age coordinates of `params`.
    pub fn apply(&self, params: &mut StaticParams<F>) {
        params.alpha[0] = self.alpha_x1;
        params.beta[0] = self.beta_x1;
    }

    pub fn is_satisfied(&self, params: &StaticParams<F>, tol: F) -> bool {
        (params.alpha[0] - self.alpha_x1).abs() <= tol && (params.beta[0] - self.beta_x1).abs() <= tol
    }

    /// The unique `(c, d)` carrying a set satisfying `self` to one satisfying
    /// `target`: `α₁ + β₁c = α₁'` and `β₁/d = β₁'`.
    pub fn transform_between(&self, target: &ConstraintSpec<F>) -> (F, F) {
        ((target.alpha_x1 - self.alpha_x1) / self.beta_x1, self.beta_x1 / target.beta_x1)
    }
}

/// α at the first group fixed to its time average, β there fixed to 0.2.
pub fn default_constraints<F: Scalar>(panel: &MortalityPanel<F>) -> ConstraintSpec<F> {
    let row = panel.log_rates().row(0);
    let mean = row.iter().copied().sum::<F>() / F::from_usize_lossy(row.len());
    ConstraintSpec { alpha_x1: mean, beta_x1: F::lit(0.2) }
}

/// Applies the invariance map `α + βc`, `β/d`, `(κ − c)d`, `θd`, `σ²_ω d²`.
///
/// For volatility models the log-variance path shifts by `ln d²`, so `γ₀` and
/// `λ₂` are moved accordingly.
pub fn lc_transform<F: Scalar>(
    params: &StaticParams<F>,
    kappa: &[F],
    c: F,
    d: F,
) -> Result<(StaticParams<F>, Vec<F>)> {
    if d == F::zero() || !d.is_finite() || !c.is_finite() {
        return Err(Error::invalid("lc_transform requires finite c and non-zero d"));
    }
    let mut out = params.clone();
    for (a, &b) in out.alpha.iter_mut().zip(&params.beta) {
        *a += b * c;
    }
    for b in out.beta.iter_mut() {
        *b /= d;
    }
    out.theta = params.theta * d;
    out.sigma2_omega = params.sigma2_omega.map(|s| s * d * d);
    let shift = (d * d).ln();
    if let Some(g0) = params.gamma0 {
        out.gamma0 = Some(g0 + shift);
    }
    if let (Some(l1), Some(l2)) = (params.lambda1, params.lambda2) {
        out.lambda2 = Some(l2 + (F::one() - l1) * shift);
    }
    let kappa = kappa.iter().map(|&k| (k - c) * d).collect();
    Ok((out, kappa))
}

/// Simulated latent states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPaths<F> {
    /// κ₀..κ_T.
    pub kappa: Vec<F>,
    /// γ₁..γ_T for volatility models.
    pub gamma: Option<Vec<F>>,
    /// Cohort states, p × (T+1), column 0 is the start.
    pub zeta: Option<Matrix<F>>,
    /// CIR observation-volatility path γ^y₁..γ^y_T.
    pub gamma_y: Option<Vec<F>>,
}

/// What to do when the discretised CIR path reaches zero or below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CirGuard {
    /// Replace `γ` by `|γ| + 1e-8`.
    #[default]
    Reflect,
    /// Fail with the offending time index.
    Error,
}

/// Age groups used for simulated panels: the first `p` standard groups, or
/// five-year groups from zero when `p > 21`.
pub fn simulation_groups(p: usize) -> Vec<AgeGroup> {
    let std = standard_groups();
    if p <= std.len() {
        std[..p].to_vec()
    } else {
        (0..p as u32).map(|i| AgeGroup::new(5 * i, 5)).collect()
    }
}

/// Forward draw of latent paths and observations, seeded.
pub fn simulate<F: Scalar>(
    kind: ModelKind,
    params: &StaticParams<F>,
    p: usize,
    t: usize,
    kappa0: F,
    seed: u64,
) -> Result<(MortalityPanel<F>, LatentPaths<F>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with(kind, params, p, t, kappa0, CirGuard::default(), &mut rng)
}

/// [`simulate`] with an explicit RNG and CIR guard. Years are numbered 1..=T.
pub fn simulate_with<F: Scalar, R: Rng + ?Sized>(
    kind: ModelKind,
    params: &StaticParams<F>,
    p: usize,
    t: usize,
    kappa0: F,
    cir_guard: CirGuard,
    rng: &mut R,
) -> Result<(MortalityPanel<F>, LatentPaths<F>)> {
    params.validate_for_simulation(kind)?;
    if params.p() != p {
        return Err(Error::invalid(format!("params have {} ages, expected {p}", params.p())));
    }
    if t == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }

    let mut kappa = Vec::with_capacity(t + 1);
    kappa.push(kappa0);
    let mut gamma = kind.is_sv().then(|| Vec::with_capacity(t));
    let mut zeta = kind.has_cohort().then(|| Matrix::<F>::zeros(p, t + 1));
    let mut gamma_y = (kind == ModelKind::Lc3H2).then(|| Vec::with_capacity(t));
    let mut g_prev = params.gamma0.unwrap_or_else(F::zero);
    let mut gy_prev = params.cir_b.unwrap_or_else(F::one);
    let obs_var = params.obs_variances();
    let mut y = Matrix::<F>::zeros(p, t);

    for s in 1..=t {
        let state_var = if let Some(g) = gamma.as_mut() {
            let l1 = params.lambda1.unwrap();
            let l2 = params.lambda2.unwrap();
            let gt = draw_normal(rng, l1 * g_prev + l2, params.sigma2_gamma.unwrap());
            g.push(gt);
            g_prev = gt;
            gt.exp()
        } else {
            params.sigma2_omega.unwrap()
        };
        let k = draw_normal(rng, kappa[s - 1] + params.theta, state_var);
        kappa.push(k);

        if let Some(z) = zeta.as_mut() {
            for i in (1..p).rev() {
                z[(i, s)] = z[(i - 1, s - 1)];
            }
            let vt = params.vartheta.unwrap();
            z[(0, s)] = draw_normal(rng, vt * z[(0, s - 1)], params.sigma2_omega_zeta.unwrap());
        }

        let scale = if let Some(gy) = gamma_y.as_mut() {
            let (a, b, sig) = (params.cir_a.unwrap(), params.cir_b.unwrap(), params.cir_sigma.unwrap());
            let mut next = a * (b - gy_prev) + gy_prev + sig * gy_prev.sqrt() * F::standard_normal(rng);
            if !(next > F::zero()) {
                match cir_guard {
                    CirGuard::Reflect => next = next.abs() + F::lit(1e-8),
                    CirGuard::Error => return Err(Error::CirNonPositive { t: s }),
                }
            }
            gy.push(next);
            gy_prev = next;
            next
        } else {
            F::one()
        };

        for x in 0..p {
            let mut mean = params.alpha[x] + params.beta[x] * k;
            if let (Some(z), Some(b2)) = (zeta.as_ref(), params.beta2.as_ref()) {
                mean += b2[x] * z[(x, s)];
            }
            y[(x, s - 1)] = draw_normal(rng, mean, scale * obs_var[x]);
        }
    }

    let panel = MortalityPanel::from_log_rates(simulation_groups(p), 1, y)?;
    Ok((panel, LatentPaths { kappa, gamma, zeta, gamma_y }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lc_params(p: usize) -> StaticParams<f64> {
        let alpha = (0..p).map(|x| -7.0 + 0.3 * x as f64).collect();
        let beta = vec![0.1; p];
        StaticParams::lc(alpha, beta, -0.1, 0.02, 0.1)
    }

    #[test]
    fn kind_tags_round_trip() {
        for k in ModelKind::ALL {
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.tag()));
            assert_eq!(serde_json::from_str::<ModelKind>(&json).unwrap(), k);
            assert_eq!(k.tag().parse::<ModelKind>().unwrap(), k);
        }
        assert_eq!("lc-h".parse::<ModelKind>().unwrap(), ModelKind::LcH);
        assert_eq!("lcsv_h".parse::<ModelKind>().unwrap(), ModelKind::LcsvH);
        assert!("lcx".parse::<ModelKind>().is_err());
        let est: Vec<_> = ModelKind::ALL.into_iter().filter(|k| k.supports_estimation()).collect();
        assert_eq!(est, vec![ModelKind::Lc, ModelKind::LcH, ModelKind::Lcsv, ModelKind::LcsvH]);
    }

    #[test]
    fn params_json_uses_field_names() {
        let p = StaticParams::lc_h(vec![1.0, 2.0], vec![0.2, 0.3], -0.1, vec![0.1, 0.2], 0.5);
        let json = p.to_json().unwrap();
        assert!(json.contains("\"sigma2_eps\""));
        assert!(!json.contains("lambda1"));
        assert_eq!(StaticParams::from_json(&json).unwrap(), p);
        let pooled: StaticParams<f64> = serde_json::from_str(
            r#"{"alpha":[0],"beta":[1],"theta":0,"sigma2_eps":0.5,"sigma2_omega":1}"#,
        )
        .unwrap();
        assert_eq!(pooled.sigma2_eps, ObsVariance::Pooled(0.5));
        pooled.validate(ModelKind::Lc).unwrap();
        assert!(pooled.validate(ModelKind::LcH).is_err());
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut p = lc_params(3);
        p.sigma2_omega = Some(0.0);
        assert!(p.validate(ModelKind::Lc).is_err());
        p.validate_for_simulation(ModelKind::Lc).unwrap();
        let mut sv = StaticParams::lcsv(
            vec![0.0; 2],
            vec![1.0; 2],
            0.0,
            ObsVariance::Pooled(0.1),
            1.5,
            0.0,
            0.1,
            0.0,
        );
        assert!(sv.validate(ModelKind::Lcsv).is_err());
        sv.lambda1 = Some(0.9);
        sv.validate(ModelKind::Lcsv).unwrap();
        let mut cir = lc_params(2);
        cir.sigma2_eps = ObsVariance::PerAge(vec![0.1, 0.1]);
        cir.beta2 = Some(vec![0.1, 0.1]);
        cir.vartheta = Some(0.5);
        cir.sigma2_omega_zeta = Some(0.01);
        cir.cir_a = Some(0.1);
        cir.cir_b = Some(1.0);
        cir.cir_sigma = Some(1.0);
        assert!(cir.validate(ModelKind::Lc3H2).is_err());
        cir.cir_sigma = Some(0.4);
        cir.validate(ModelKind::Lc3H2).unwrap();
    }

    #[test]
    fn default_constraints_examples() {
        let groups = simulation_groups(1);
        let y = Matrix::from_rows(&[vec![-4.0, -4.0, -4.0]]);
        let panel = MortalityPanel::from_log_rates(groups.clone(), 1, y).unwrap();
        let c = default_constraints(&panel);
        assert_eq!(c.alpha_x1, -4.0);
        assert_eq!(c.beta_x1, 0.2);
        let y = Matrix::from_rows(&[vec![-3.0, -5.0]]);
        let panel = MortalityPanel::from_log_rates(groups, 1, y).unwrap();
        assert_eq!(default_constraints(&panel).alpha_x1, -4.0);
    }

    #[test]
    fn transform_examples() {
        let p = StaticParams::lc(vec![0.0, 0.0], vec![1.0, 1.0], 0.5, 0.1, 0.2);
        let kappa = vec![1.0, 2.0, 3.0];
        let (same, k) = lc_transform(&p, &kappa, 0.0, 1.0).unwrap();
        assert_eq!(same, p);
        assert_eq!(k, kappa);
        let (q, k) = lc_transform(&p, &kappa, 2.0, 4.0).unwrap();
        assert_eq!(q.alpha, vec![2.0, 2.0]);
        assert_eq!(q.beta, vec![0.25, 0.25]);
        assert_eq!(k, vec![-4.0, 0.0, 4.0]);
        assert_eq!(q.theta, 2.0);
        assert_eq!(q.sigma2_omega, Some(3.2));
        assert!(lc_transform(&p, &kappa, 0.0, 0.0).is_err());
    }

    #[test]
    fn noise_free_lc_is_deterministic_line() {
        let mut p = lc_params(4);
        p.sigma2_eps = ObsVariance::Pooled(0.0);
        p.sigma2_omega = Some(0.0);
        let (panel, paths) = simulate(ModelKind::Lc, &p, 4, 6, 1.5, 9).unwrap();
        for t in 1..=6 {
            let k = 1.5 + t as f64 * -0.1;
            assert!((paths.kappa[t] - k).abs() < 1e-12);
            for x in 0..4 {
                let expect = p.alpha[x] + p.beta[x] * k;
                assert!((panel.log_rates()[(x, t - 1)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_sv_has_constant_increment_variance() {
        let p = StaticParams::lcsv(
            vec![0.0; 2],
            vec![1.0; 2],
            0.0,
            ObsVariance::Pooled(0.01),
            0.0,
            -1.0,
            0.0,
            3.0,
        );
        let (_, paths) = simulate(ModelKind::Lcsv, &p, 2, 20, 0.0, 4).unwrap();
        assert!(paths.gamma.unwrap().iter().all(|&g| g == -1.0));
    }

    #[test]
    fn simulated_increment_variance_matches() {
        let p = lc_params(10);
        let t = 150;
        let (_, paths) = simulate(ModelKind::Lc, &p, 10, t, 0.0, 2024).unwrap();
        let d: Vec<f64> = paths.kappa.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = d.iter().sum::<f64>() / t as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
        // sd of a Gaussian sample variance: σ²·sqrt(2/(n−1))
        let se = 0.1 * (2.0 / (t - 1) as f64).sqrt();
        assert!((var - 0.1).abs() < 3.0 * se, "var {var}");
    }

    fn cohort_params(p: usize) -> StaticParams<f64> {
        let mut c = lc_params(p);
        c.sigma2_eps = ObsVariance::PerAge(vec![0.01; p]);
        c.beta2 = Some(vec![0.05; p]);
        c.vartheta = Some(0.7);
        c.sigma2_omega_zeta = Some(0.2);
        c
    }

    #[test]
    fn cir_guard_reflects_or_errors() {
        let mut c = cohort_params(3);
        c.cir_a = Some(0.9);
        c.cir_b = Some(0.05);
        c.cir_sigma = Some(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, paths) =
            simulate_with(ModelKind::Lc3H2, &c, 3, 200, 0.0, CirGuard::Reflect, &mut rng).unwrap();
        assert!(paths.gamma_y.unwrap().iter().all(|&g| g > 0.0));
        let mut hit = false;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if let Err(Error::CirNonPositive { t }) =
                simulate_with(ModelKind::Lc3H2, &c, 3, 200, 0.0, CirGuard::Error, &mut rng)
            {
                assert!((1..=200).contains(&t));
                hit = true;
                break;
            }
        }
        assert!(hit, "the coarse Euler step should cross zero for some seed");
    }

    proptest! {
        #[test]
        fn cohort_diagonal_identity(seed in 0u64..1000, p in 2usize..8, t in 1usize..30) {
            let c = cohort_params(p);
            let (_, paths) = simulate(ModelKind::Lc2H, &c, p, t, 0.0, seed).unwrap();
            let z = paths.zeta.unwrap();
            for s in 1..=t {
                for i in 1..p {
                    prop_assert_eq!(z[(i, s)], z[(i - 1, s - 1)]);
                }
            }
        }

        #[test]
        fn constrained_sets_admit_only_identity(a in -10.0f64..0.0, b in 0.05f64..1.0) {
            let spec = ConstraintSpec::new(a, b).unwrap();
            let (c, d) = spec.transform_between(&spec);
            prop_assert_eq!(c, 0.0);
            prop_assert_eq!(d, 1.0);
        }

        #[test]
        fn simulation_is_seed_deterministic(seed in 0u64..500) {
            let c = cohort_params(4);
            let a = simulate(ModelKind::Lc2H, &c, 4, 10, 0.0, seed).unwrap();
            let b = simulate(ModelKind::Lc2H, &c, 4, 10, 0.0, seed).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
