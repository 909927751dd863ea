//! Exact filtering, smoothing and backward sampling for the linear-Gaussian
//! period-effect models.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MortalityPanel;
use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::model::StaticParams;
use crate::scalar::{draw_normal, ln_two_pi, Scalar};

/// Jitter added to the diagonal of `Q_t` when its factorisation fails.
pub const Q_JITTER: f64 = 1e-10;

/// Prior `κ₀ ~ N(m₀, C₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateInit<F> {
    pub m0: F,
    pub c0: F,
}

impl<F: Scalar> StateInit<F> {
    pub fn new(m0: F, c0: F) -> Result<Self> {
        if !(c0 > F::zero()) || !m0.is_finite() || !c0.is_finite() {
            return Err(Error::invalid("state init needs finite m0 and C0 > 0"));
        }
        Ok(Self { m0, c0 })
    }
}

impl<F: Scalar> Default for StateInit<F> {
    fn default() -> Self {
        Self { m0: F::zero(), c0: F::lit(10.0) }
    }
}

/// Variance of the period-effect increment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateVariance<'a, F> {
    Constant(F),
    /// `exp{γ_t}` for t = 1..T.
    Path(&'a [F]),
}

impl<F: Scalar> StateVariance<'_, F> {
    /// Variance for period `t` (1-based).
    #[inline]
    pub fn at(&self, t: usize) -> F {
        match self {
            StateVariance::Constant(v) => *v,
            StateVariance::Path(p) => p[t - 1],
        }
    }

    fn check(&self, periods: usize) -> Result<()> {
        match self {
            StateVariance::Constant(v) if !(*v >= F::zero()) || !v.is_finite() => {
                Err(Error::invalid("state variance must be finite and non-negative"))
            }
            StateVariance::Path(p) if p.len() != periods => Err(Error::invalid(format!(
                "state-variance path has length {}, expected {periods}",
                p.len()
            ))),
            StateVariance::Path(p) if p.iter().any(|v| !(*v >= F::zero()) || !v.is_finite()) => {
                Err(Error::invalid("state-variance path has a negative or non-finite entry"))
            }
            _ => Ok(()),
        }
    }
}

/// `exp{γ_t}` for each entry of a log-volatility path.
pub fn volatility_variances<F: Scalar>(gamma: &[F]) -> Vec<F> {
    gamma.iter().map(|g| g.exp()).collect()
}

/// Scalar filtering moments; vectors are indexed by `t − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMoments<F> {
    pub m0: F,
    pub c0: F,
    pub a: Vec<F>,
    pub r: Vec<F>,
    pub m: Vec<F>,
    pub c: Vec<F>,
    pub loglik_increments: Vec<F>,
    pub loglik: F,
}

impl<F: Scalar> StateMoments<F> {
    fn with_capacity(init: StateInit<F>, t: usize) -> Self {
        Self {
            m0: init.m0,
            c0: init.c0,
            a: Vec::with_capacity(t),
            r: Vec::with_capacity(t),
            m: Vec::with_capacity(t),
            c: Vec::with_capacity(t),
            loglik_increments: Vec::with_capacity(t),
            loglik: F::zero(),
        }
    }

    pub fn periods(&self) -> usize {
        self.a.len()
    }

    /// Filtered mean at `t ∈ 0..=T`.
    pub fn mean(&self, t: usize) -> F {
        if t == 0 {
            self.m0
        } else {
            self.m[t - 1]
        }
    }

    /// Filtered variance at `t ∈ 0..=T`.
    pub fn var(&self, t: usize) -> F {
        if t == 0 {
            self.c0
        } else {
            self.c[t - 1]
        }
    }

    /// CSV `t,a,R,m,C,loglik_increment`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "a", "R", "m", "C", "loglik_increment"])?;
        for t in 0..self.periods() {
            w.write_record([
                (t + 1).to_string(),
                self.a[t].to_string(),
                self.r[t].to_string(),
                self.m[t].to_string(),
                self.c[t].to_string(),
                self.loglik_increments[t].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Full filter output including the observation-level quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput<F> {
    pub moments: StateMoments<F>,
    /// Predicted observation means `f_t`.
    pub f: Vec<Vec<F>>,
    /// Predicted observation covariances `Q_t`.
    pub q: Vec<Matrix<F>>,
    /// Innovations `v_t = y_t − f_t`.
    pub v: Vec<Vec<F>>,
}

impl<F: Scalar> FilterOutput<F> {
    pub fn loglik(&self) -> F {
        self.moments.loglik
    }

    pub fn periods(&self) -> usize {
        self.moments.periods()
    }
}

fn check_inputs<F: Scalar>(
    y: &Matrix<F>,
    params: &StaticParams<F>,
    init: &StateInit<F>,
    var: &StateVariance<'_, F>,
) -> Result<Vec<F>> {
    let p = params.p();
    if y.rows() != p || params.beta.len() != p {
        return Err(Error::invalid(format!(
            "panel has {} ages but params have {p}",
            y.rows()
        )));
    }
    if y.cols() == 0 {
        return Err(Error::invalid("panel has no periods"));
    }
    if !(init.c0 > F::zero()) {
        return Err(Error::invalid("C0 must be positive"));
    }
    var.check(y.cols())?;
    let obs = params.obs_variances();
    if obs.len() != p || obs.iter().any(|v| !(*v >= F::zero())) {
        return Err(Error::invalid("observation variances must be non-negative, one per age"));
    }
    Ok(obs)
}

/// Factorises `Q`, retrying once with diagonal jitter.
pub(crate) fn factor_q<F: Scalar>(q: &Matrix<F>, t: usize) -> Result<Cholesky<F>> {
    Cholesky::with_jitter(q, F::lit(Q_JITTER)).ok_or(Error::SingularCovariance { t })
}

/// Kalman filter over a panel.
pub fn kalman_filter<F: Scalar>(
    panel: &MortalityPanel<F>,
    params: &StaticParams<F>,
    init: StateInit<F>,
    var: StateVariance<'_, F>,
) -> Result<FilterOutput<F>> {
    kalman_filter_y(panel.log_rates(), params, init, var)
}

/// Kalman filter over a raw p × T matrix of observations.
pub fn kalman_filter_y<F: Scalar>(
    y: &Matrix<F>,
    params: &StaticParams<F>,
    init: StateInit<F>,
    var: StateVariance<'_, F>,
) -> Result<FilterOutput<F>> {
    let obs = check_inputs(y, params, &init, &var)?;
    let (p, periods) = (y.rows(), y.cols());
    let beta = &params.beta;
    let half = F::lit(0.5);
    let const_term = F::from_usize_lossy(p) * ln_two_pi::<F>();
    let mut mom = StateMoments::with_capacity(init, periods);
    let mut out_f = Vec::with_capacity(periods);
    let mut out_q = Vec::with_capacity(periods);
    let mut out_v = Vec::with_capacity(periods);
    let (mut m, mut c) = (init.m0, init.c0);
    for t in 1..=periods {
        let a = m + params.theta;
        let r = c + var.at(t);
        let f: Vec<F> = (0..p).map(|x| params.alpha[x] + beta[x] * a).collect();
        let v: Vec<F> = (0..p).map(|x| y[(x, t - 1)] - f[x]).collect();
        let mut q = Matrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                q[(i, j)] = beta[i] * beta[j] * r;
            }
            q[(i, i)] += obs[i];
        }
        q.symmetrize();
        let chol = factor_q(&q, t)?;
        let qinv_v = chol.solve(&v);
        let qinv_b = chol.solve(beta);
        m = a + r * dot(beta, &qinv_v);
        c = r - r * r * dot(beta, &qinv_b);
        let inc = -half * (const_term + chol.log_det() + dot(&v, &qinv_v));
        if !inc.is_finite() {
            return Err(Error::NonFiniteLikelihood);
        }
        mom.a.push(a);
        mom.r.push(r);
        mom.m.push(m);
        mom.c.push(c);
        mom.loglik_increments.push(inc);
        mom.loglik += inc;
        out_f.push(f);
        out_q.push(q);
        out_v.push(v);
    }
    Ok(FilterOutput { moments: mom, f: out_f, q: out_q, v: out_v })
}

/// Filtering moments via the Sherman-Morrison identities for diagonal `Σ`.
///
/// With `D = Σ⁻¹` and `s = βᵀDβ`:
/// `βᵀQ⁻¹v = βᵀDv / (1 + Rs)`, `ln|Q| = Σ ln σ²_x + ln(1 + Rs)`,
/// `vᵀQ⁻¹v = vᵀDv − R(βᵀDv)² / (1 + Rs)`, `C = R / (1 + Rs)`.
/// Costs O(p) per period; falls back to the dense filter when some
/// observation variance is zero.
pub fn filter_moments<F: Scalar>(
    y: &Matrix<F>,
    params: &StaticParams<F>,
    init: StateInit<F>,
    var: StateVariance<'_, F>,
) -> Result<StateMoments<F>> {
    let obs = check_inputs(y, params, &init, &var)?;
    if obs.iter().any(|v| !(*v > F::zero())) {
        return Ok(kalman_filter_y(y, params, init, var)?.moments);
    }
    let (p, periods) = (y.rows(), y.cols());
    let beta = &params.beta;
    let prec: Vec<F> = obs.iter().map(|v| F::one() / *v).collect();
    let s: F = (0..p).map(|x| beta[x] * beta[x] * prec[x]).sum();
    let log_det_sigma: F = obs.iter().map(|v| v.ln()).sum();
    let half = F::lit(0.5);
    let const_term = F::from_usize_lossy(p) * ln_two_pi::<F>();
    let mut mom = StateMoments::with_capacity(init, periods);
    let (mut m, mut c) = (init.m0, init.c0);
    for t in 1..=periods {
        let a = m + params.theta;
        let r = c + var.at(t);
        let (mut bdv, mut vdv) = (F::zero(), F::zero());
        for x in 0..p {
            let v = y[(x, t - 1)] - params.alpha[x] - beta[x] * a;
            let dv = v * prec[x];
            bdv += beta[x] * dv;
            vdv += v * dv;
        }
        let denom = F::one() + r * s;
        m = a + r * bdv / denom;
        c = r / denom;
        let quad = vdv - r * bdv * bdv / denom;
        let inc = -half * (const_term + log_det_sigma + denom.ln() + quad);
        if !inc.is_finite() {
            return Err(Error::NonFiniteLikelihood);
        }
        mom.a.push(a);
        mom.r.push(r);
        mom.m.push(m);
        mom.c.push(c);
        mom.loglik_increments.push(inc);
        mom.loglik += inc;
    }
    Ok(mom)
}

/// Smoothed means and variances of `κ_t` for `t = 0..=T`.
pub fn smoother_moments<F: Scalar>(mom: &StateMoments<F>) -> Result<(Vec<F>, Vec<F>)> {
    let n = mom.periods();
    let mut mean = vec![F::zero(); n + 1];
    let mut var = vec![F::zero(); n + 1];
    mean[n] = mom.mean(n);
    var[n] = mom.var(n);
    for t in (0..n).rev() {
        let r_next = mom.r[t];
        if r_next == F::zero() {
            return Err(Error::ZeroStateVariance { t: t + 1 });
        }
        let g = mom.var(t) / r_next;
        mean[t] = mom.mean(t) + g * (mean[t + 1] - mom.a[t]);
        var[t] = mom.var(t) + g * g * (var[t + 1] - r_next);
    }
    Ok((mean, var))
}

/// One joint draw of `κ_{0:T}` given the filtering moments.
pub fn ffbs_sample<F: Scalar, R: Rng + ?Sized>(mom: &StateMoments<F>, rng: &mut R) -> Result<Vec<F>> {
    let n = mom.periods();
    let mut kappa = vec![F::zero(); n + 1];
    kappa[n] = draw_normal(rng, mom.mean(n), mom.var(n).max(F::zero()));
    for t in (0..n).rev() {
        let r_next = mom.r[t];
        if r_next == F::zero() {
            return Err(Error::ZeroStateVariance { t: t + 1 });
        }
        let ct = mom.var(t);
        let g = ct / r_next;
        let h = mom.mean(t) + g * (kappa[t + 1] - mom.a[t]);
        let hv = (ct - g * ct).max(F::zero());
        kappa[t] = draw_normal(rng, h, hv);
    }
    Ok(kappa)
}

/// Linear-Gaussian model with a vector state:
/// `y_t = α + Z s_t + ε`, `ε ~ N(0, H)`; `s_t = G s_{t−1} + d + η`, `η ~ N(0, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStateSpace<F> {
    pub alpha: Vec<F>,
    pub z: Matrix<F>,
    pub obs_cov: Matrix<F>,
    pub transition: Matrix<F>,
    pub drift: Vec<F>,
    pub state_cov: Matrix<F>,
}

impl<F: Scalar> VectorStateSpace<F> {
    /// Period plus cohort form: state `(κ, ζ^{x₁}, …, ζ^{x_p})`.
    pub fn cohort(params: &StaticParams<F>) -> Result<Self> {
        let p = params.p();
        let beta2 = params
            .beta2
            .as_ref()
            .ok_or_else(|| Error::invalid("cohort state space needs beta2"))?;
        let vartheta =
            params.vartheta.ok_or_else(|| Error::invalid("cohort state space needs vartheta"))?;
        let s2z = params
            .sigma2_omega_zeta
            .ok_or_else(|| Error::invalid("cohort state space needs sigma2_omega_zeta"))?;
        let s2w =
            params.sigma2_omega.ok_or_else(|| Error::invalid("cohort state space needs sigma2_omega"))?;
        let k = p + 1;
        let mut z = Matrix::zeros(p, k);
        for x in 0..p {
            z[(x, 0)] = params.beta[x];
            z[(x, x + 1)] = beta2[x];
        }
        let mut g = Matrix::zeros(k, k);
        g[(0, 0)] = F::one();
        g[(1, 1)] = vartheta;
        for j in 2..k {
            g[(j, j - 1)] = F::one();
        }
        let mut drift = vec![F::zero(); k];
        drift[0] = params.theta;
        let mut w = Matrix::zeros(k, k);
        w[(0, 0)] = s2w;
        w[(1, 1)] = s2z;
        Ok(Self {
            alpha: params.alpha.clone(),
            z,
            obs_cov: Matrix::diagonal(&params.obs_variances()),
            transition: g,
            drift,
            state_cov: w,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.transition.rows()
    }
}

/// Output of [`vector_kalman_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFilterOutput<F> {
    pub m: Vec<Vec<F>>,
    pub c: Vec<Matrix<F>>,
    pub loglik: F,
}

/// Kalman filter with a vector state.
pub fn vector_kalman_filter<F: Scalar>(
    y: &Matrix<F>,
    model: &VectorStateSpace<F>,
    m0: &[F],
    c0: &Matrix<F>,
) -> Result<VectorFilterOutput<F>> {
    let (p, k) = (y.rows(), model.state_dim());
    if model.z.rows() != p || model.z.cols() != k || m0.len() != k || c0.rows() != k {
        return Err(Error::invalid("vector state space dimensions are inconsistent"));
    }
    let half = F::lit(0.5);
    let const_term = F::from_usize_lossy(p) * ln_two_pi::<F>();
    let g = &model.transition;
    let gt = g.transpose();
    let zt = model.z.transpose();
    let mut m = m0.to_vec();
    let mut c = c0.clone();
    let mut out = VectorFilterOutput { m: Vec::new(), c: Vec::new(), loglik: F::zero() };
    for t in 1..=y.cols() {
        let a: Vec<F> = g.matvec(&m).iter().zip(&model.drift).map(|(x, d)| *x + *d).collect();
        let mut r = g.matmul(&c).matmul(&gt);
        for i in 0..k {
            for j in 0..k {
                r[(i, j)] += model.state_cov[(i, j)];
            }
        }
        r.symmetrize();
        let za = model.z.matvec(&a);
        let v: Vec<F> = (0..p).map(|x| y[(x, t - 1)] - model.alpha[x] - za[x]).collect();
        let rzt = r.matmul(&zt);
        let mut q = model.z.matmul(&rzt);
        for i in 0..p {
            for j in 0..p {
                q[(i, j)] += model.obs_cov[(i, j)];
            }
        }
        q.symmetrize();
        let chol = factor_q(&q, t)?;
        let qinv_v = chol.solve(&v);
        // gain rows: (R Zᵀ Q⁻¹)
        let mut gain = Matrix::zeros(k, p);
        let qinv = chol.inverse();
        for i in 0..k {
            for j in 0..p {
                let mut s = F::zero();
                for l in 0..p {
                    s += rzt[(i, l)] * qinv[(l, j)];
                }
                gain[(i, j)] = s;
            }
        }
        let step = rzt.matvec(&qinv_v);
        m = a.iter().zip(&step).map(|(x, d)| *x + *d).collect();
        let reduce = gain.matmul(&rzt.transpose());
        c = r;
        for i in 0..k {
            for j in 0..k {
                c[(i, j)] -= reduce[(i, j)];
            }
        }
        c.symmetrize();
        out.loglik += -half * (const_term + chol.log_det() + dot(&v, &qinv_v));
        out.m.push(m.clone());
        out.c.push(c.clone());
    }
    if !out.loglik.is_finite() {
        return Err(Error::NonFiniteLikelihood);
    }
    Ok(out)
}
