//! Closed-form score and information recursions for the Lee-Carter marginal
//! likelihood, Newton-type maximisation, and the SVD two-stage baseline.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::MortalityPanel;
use crate::error::{Error, Result};
use crate::kalman::{factor_q, filter_moments, StateInit, StateVariance};
use crate::linalg::{dot, solve_general, svd, Matrix};
use crate::model::{ConstraintSpec, ObsVariance, StaticParams};
use crate::scalar::{ln_two_pi, Scalar};

/// Position of each free coordinate in ψ.
///
/// Order: `α_{x2:xp}`, `β_{x2:xp}`, the observation variances (p of them,
/// or one when pooled), `θ`, `σ²_ω`. With per-age variances `n = 3p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub p: usize,
    pub pooled: bool,
}

/// What a coordinate of ψ moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coord {
    Alpha(usize),
    Beta(usize),
    ObsVar(Option<usize>),
    Theta,
    StateVar,
}

impl ParamLayout {
    pub fn for_params<F: Scalar>(params: &StaticParams<F>) -> Self {
        Self { p: params.p(), pooled: params.sigma2_eps.is_pooled() }
    }

    fn n_var(&self) -> usize {
        if self.pooled {
            1
        } else {
            self.p
        }
    }

    pub fn n(&self) -> usize {
        2 * (self.p - 1) + self.n_var() + 2
    }

    pub fn coord(&self, i: usize) -> Coord {
        let k = self.p - 1;
        if i < k {
            Coord::Alpha(i + 1)
        } else if i < 2 * k {
            Coord::Beta(i - k + 1)
        } else if i < 2 * k + self.n_var() {
            if self.pooled {
                Coord::ObsVar(None)
            } else {
                Coord::ObsVar(Some(i - 2 * k))
            }
        } else if i == 2 * k + self.n_var() {
            Coord::Theta
        } else {
            Coord::StateVar
        }
    }

    pub fn is_variance(&self, i: usize) -> bool {
        matches!(self.coord(i), Coord::ObsVar(_) | Coord::StateVar)
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.n())
            .map(|i| match self.coord(i) {
                Coord::Alpha(x) => format!("alpha[{x}]"),
                Coord::Beta(x) => format!("beta[{x}]"),
                Coord::ObsVar(None) => "sigma2_eps".to_string(),
                Coord::ObsVar(Some(x)) => format!("sigma2_eps[{x}]"),
                Coord::Theta => "theta".to_string(),
                Coord::StateVar => "sigma2_omega".to_string(),
            })
            .collect()
    }

    pub fn to_vector<F: Scalar>(&self, params: &StaticParams<F>) -> Vec<F> {
        (0..self.n())
            .map(|i| match self.coord(i) {
                Coord::Alpha(x) => params.alpha[x],
                Coord::Beta(x) => params.beta[x],
                Coord::ObsVar(x) => params.sigma2_eps.at(x.unwrap_or(0)),
                Coord::Theta => params.theta,
                Coord::StateVar => params.sigma2_omega.unwrap_or_else(F::zero),
            })
            .collect()
    }

    /// Writes ψ into a copy of `template`; the first-age α and β are kept.
    pub fn from_vector<F: Scalar>(&self, psi: &[F], template: &StaticParams<F>) -> StaticParams<F> {
        let mut out = template.clone();
        for (i, &v) in psi.iter().enumerate() {
            match self.coord(i) {
                Coord::Alpha(x) => out.alpha[x] = v,
                Coord::Beta(x) => out.beta[x] = v,
                Coord::ObsVar(None) => out.sigma2_eps = ObsVariance::Pooled(v),
                Coord::ObsVar(Some(x)) => {
                    if let ObsVariance::PerAge(s) = &mut out.sigma2_eps {
                        s[x] = v;
                    }
                }
                Coord::Theta => out.theta = v,
                Coord::StateVar => out.sigma2_omega = Some(v),
            }
        }
        out
    }
}

/// Per-period sensitivities `∂·/∂ψ_i`, each of length n (`dv` is n × p).
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeState<F> {
    pub da: Vec<F>,
    pub dr: Vec<F>,
    pub dm: Vec<F>,
    pub dc: Vec<F>,
    pub dv: Matrix<F>,
}

/// Score, expected information and the derivative recursions.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientOutput<F> {
    pub layout: ParamLayout,
    pub loglik: F,
    pub score: Vec<F>,
    pub info: Matrix<F>,
    pub states: Vec<DerivativeState<F>>,
}

impl<F: Scalar> GradientOutput<F> {
    pub fn score_norm(&self) -> F {
        self.score.iter().fold(F::zero(), |acc, s| acc.max(s.abs()))
    }
}

/// Score and information of the marginal log-likelihood with respect to ψ.
///
/// `∂ℓ/∂ψ_i = −½ Σ_t { tr[Q⁻¹∂Q_i (I − Q⁻¹v vᵀ)] + 2 ∂v_iᵀ Q⁻¹ v }` and
/// `I_ij = ½ Σ_t tr(Q⁻¹∂Q_i Q⁻¹∂Q_j) + Σ_t ∂v_iᵀ Q⁻¹ ∂v_j`.
///
/// `∂Q_i` is never formed: with `g_i = R ∂β_i + ½∂R_i β` and diagonal
/// `∂Σ_i = diag(δ_i)`, `∂Q_i = g_i βᵀ + β g_iᵀ + diag(δ_i)`, and every trace
/// reduces to bilinear forms in `P = Q⁻¹`.
pub fn score_and_info<F: Scalar>(
    panel: &MortalityPanel<F>,
    params: &StaticParams<F>,
    init: StateInit<F>,
) -> Result<GradientOutput<F>> {
    score_and_info_y(panel.log_rates(), params, init)
}

pub fn score_and_info_y<F: Scalar>(
    y: &Matrix<F>,
    params: &StaticParams<F>,
    init: StateInit<F>,
) -> Result<GradientOutput<F>> {
    let p = params.p();
    if y.rows() != p {
        return Err(Error::invalid(format!("panel has {} ages but params have {p}", y.rows())));
    }
    if p < 2 {
        return Err(Error::invalid("score recursions need at least two age groups"));
    }
    let s2w = params
        .sigma2_omega
        .ok_or_else(|| Error::invalid("score recursions need sigma2_omega"))?;
    let obs = params.obs_variances();
    if obs.len() != p {
        return Err(Error::invalid("sigma2_eps has the wrong length"));
    }
    let layout = ParamLayout::for_params(params);
    let n = layout.n();
    let coords: Vec<Coord> = (0..n).map(|i| layout.coord(i)).collect();
    let beta = &params.beta;
    let half = F::lit(0.5);
    let two = F::lit(2.0);
    let const_term = F::from_usize_lossy(p) * ln_two_pi::<F>();

    let mut score = vec![F::zero(); n];
    let mut info = Matrix::zeros(n, n);
    let mut states = Vec::with_capacity(y.cols());
    let (mut m, mut c) = (init.m0, init.c0);
    let mut dm = vec![F::zero(); n];
    let mut dc = vec![F::zero(); n];
    let mut loglik = F::zero();

    let mut g = Matrix::zeros(n, p);
    let mut pg = Matrix::zeros(n, p);
    let mut pdv = Matrix::zeros(n, p);
    let mut hmat = Matrix::zeros(n, p);

    for t in 1..=y.cols() {
        let a = m + params.theta;
        let r = c + s2w;
        let v: Vec<F> = (0..p).map(|x| y[(x, t - 1)] - params.alpha[x] - beta[x] * a).collect();
        let mut q = Matrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                q[(i, j)] = beta[i] * beta[j] * r;
            }
            q[(i, i)] += obs[i];
        }
        q.symmetrize();
        let chol = factor_q(&q, t)?;
        let pm = chol.inverse();
        let w = pm.matvec(&v);
        let pb = pm.matvec(beta);
        let s = dot(beta, &pb);
        let bw = dot(beta, &w);
        loglik += -half * (const_term + chol.log_det() + dot(&v, &w));

        let mut da = vec![F::zero(); n];
        let mut dr = vec![F::zero(); n];
        let mut dv = Matrix::zeros(n, p);
        for i in 0..n {
            da[i] = dm[i] + if coords[i] == Coord::Theta { F::one() } else { F::zero() };
            dr[i] = dc[i] + if coords[i] == Coord::StateVar { F::one() } else { F::zero() };
            for x in 0..p {
                dv[(i, x)] = -beta[x] * da[i];
                g[(i, x)] = half * dr[i] * beta[x];
            }
            match coords[i] {
                Coord::Alpha(x) => dv[(i, x)] -= F::one(),
                Coord::Beta(x) => {
                    dv[(i, x)] -= a;
                    g[(i, x)] += r;
                }
                _ => {}
            }
        }

        // Row products with P.
        for i in 0..n {
            let gi = g.row(i).to_vec();
            let pgi = pm.matvec(&gi);
            pg.row_mut(i).copy_from_slice(&pgi);
            let pdvi = pm.matvec(dv.row(i));
            pdv.row_mut(i).copy_from_slice(&pdvi);
            // h_i = P diag(δ_i) P β
            let hi: Vec<F> = match coords[i] {
                Coord::ObsVar(Some(x)) => (0..p).map(|k| pm[(k, x)] * pb[x]).collect(),
                Coord::ObsVar(None) => pm.matvec(&pb),
                _ => vec![F::zero(); p],
            };
            hmat.row_mut(i).copy_from_slice(&hi);
        }

        let delta_dot = |i: usize, f: &dyn Fn(usize) -> F| -> F {
            match coords[i] {
                Coord::ObsVar(Some(x)) => f(x),
                Coord::ObsVar(None) => (0..p).map(f).sum(),
                _ => F::zero(),
            }
        };

        let mut next_dm = vec![F::zero(); n];
        let mut next_dc = vec![F::zero(); n];
        for i in 0..n {
            let gi = g.row(i);
            let b_pg = dot(beta, pg.row(i));
            let gw = dot(gi, &w);
            // tr(P ∂Q_i) and wᵀ ∂Q_i w
            let tr_pdq = two * b_pg + delta_dot(i, &|x| pm[(x, x)]);
            let w_dq_w = two * gw * bw + delta_dot(i, &|x| w[x] * w[x]);
            let dvw = dot(dv.row(i), &w);
            score[i] += -half * (tr_pdq - w_dq_w) - dvw;

            // βᵀ P ∂Q_i w and βᵀ P ∂Q_i P β
            let pb_g = dot(&pb, gi);
            let pb_dq_w = pb_g * bw + s * gw + delta_dot(i, &|x| pb[x] * w[x]);
            let pb_dq_pb = two * pb_g * s + delta_dot(i, &|x| pb[x] * pb[x]);
            let dbeta_w = match coords[i] {
                Coord::Beta(x) => w[x],
                _ => F::zero(),
            };
            let dbeta_pb = match coords[i] {
                Coord::Beta(x) => pb[x],
                _ => F::zero(),
            };
            next_dm[i] =
                da[i] + dr[i] * bw + r * dbeta_w - r * pb_dq_w + r * dot(&pb, dv.row(i));
            next_dc[i] = dr[i] - two * dr[i] * r * s - two * r * r * dbeta_pb + r * r * pb_dq_pb;
        }

        for i in 0..n {
            for j in i..n {
                let gpg = dot(g.row(i), pg.row(j));
                let bpgi = dot(beta, pg.row(i));
                let bpgj = dot(beta, pg.row(j));
                let mut tr = two * bpgi * bpgj + two * s * gpg;
                tr += two * dot(g.row(i), hmat.row(j)) + two * dot(g.row(j), hmat.row(i));
                tr += match (coords[i], coords[j]) {
                    (Coord::ObsVar(xi), Coord::ObsVar(xj)) => match (xi, xj) {
                        (Some(a1), Some(b1)) => pm[(a1, b1)] * pm[(a1, b1)],
                        _ => {
                            let mut acc = F::zero();
                            for k in 0..p {
                                for l in 0..p {
                                    acc += pm[(k, l)] * pm[(k, l)];
                                }
                            }
                            acc
                        }
                    },
                    _ => F::zero(),
                };
                let val = half * tr + dot(dv.row(i), pdv.row(j));
                info[(i, j)] += val;
                if i != j {
                    info[(j, i)] += val;
                }
            }
        }

        states.push(DerivativeState { da, dr, dm: next_dm.clone(), dc: next_dc.clone(), dv });
        m = a + r * bw;
        c = r - r * r * s;
        dm = next_dm;
        dc = next_dc;
    }
    if !loglik.is_finite() {
        return Err(Error::NonFiniteLikelihood);
    }
    Ok(GradientOutput { layout, loglik, score, info, states })
}

/// Stopping rule for [`fit_mle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule<F> {
    /// Threshold on `‖score‖_∞`.
    pub grad_tol: F,
    pub max_iter: usize,
    /// Smallest step fraction tried by the line search.
    pub min_step: F,
}

impl<F: Scalar> Default for StoppingRule<F> {
    fn default() -> Self {
        Self { grad_tol: F::lit(1e-4), max_iter: 200, min_step: F::lit(1e-8) }
    }
}

impl<F: Scalar> StoppingRule<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > F::zero()) || self.max_iter == 0 || !(self.min_step > F::zero()) {
            return Err(Error::invalid("stopping rule needs grad_tol > 0, max_iter >= 1, min_step > 0"));
        }
        Ok(())
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow<F> {
    pub iter: usize,
    pub loglik: F,
    pub grad_norm: F,
}

/// Result of [`fit_mle`].
#[derive(Debug, Clone, PartialEq)]
pub struct MleFit<F> {
    pub params: StaticParams<F>,
    pub gradient: GradientOutput<F>,
    /// Row 0 is the starting point.
    pub trace: Vec<TraceRow<F>>,
    pub iterations: usize,
    pub converged: bool,
}

impl<F: Scalar> MleFit<F> {
    /// CSV `iter,loglik,grad_norm`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "loglik", "grad_norm"])?;
        for row in &self.trace {
            w.write_record([row.iter.to_string(), row.loglik.to_string(), row.grad_norm.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Largest change of any log-variance in one iteration.
const MAX_LOG_STEP: f64 = 2.0;

fn loglik_at<F: Scalar>(y: &Matrix<F>, params: &StaticParams<F>, init: StateInit<F>) -> Option<F> {
    let s2w = params.sigma2_omega?;
    filter_moments(y, params, init, StateVariance::Constant(s2w)).ok().map(|m| m.loglik)
}

/// Scoring iterations `ψ ← ψ + I⁻¹ s` with step halving.
///
/// Variances are updated on the log scale: the score is multiplied by `σ²`
/// and the information by `σ²_i σ²_j`. The first-age α and β are held at
/// their values in `init_params`.
pub fn fit_mle<F: Scalar>(
    panel: &MortalityPanel<F>,
    init_params: &StaticParams<F>,
    init: StateInit<F>,
    stopping: StoppingRule<F>,
) -> Result<MleFit<F>> {
    stopping.validate()?;
    let y = panel.log_rates();
    let kind = if init_params.sigma2_eps.is_pooled() {
        crate::model::ModelKind::Lc
    } else {
        crate::model::ModelKind::LcH
    };
    init_params.validate(kind)?;
    let layout = ParamLayout::for_params(init_params);
    let n = layout.n();
    let mut params = init_params.clone();
    let mut grad = score_and_info_y(y, &params, init)?;
    let mut trace = vec![TraceRow { iter: 0, loglik: grad.loglik, grad_norm: grad.score_norm() }];
    let mut iter = 0;
    while grad.score_norm() >= stopping.grad_tol && iter < stopping.max_iter {
        iter += 1;
        let psi = layout.to_vector(&params);
        let jac: Vec<F> =
            (0..n).map(|i| if layout.is_variance(i) { psi[i] } else { F::one() }).collect();
        let s_work: Vec<F> = (0..n).map(|i| grad.score[i] * jac[i]).collect();
        let mut i_work = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                i_work[(i, j)] = grad.info[(i, j)] * jac[i] * jac[j];
            }
        }
        let mut step = solve_general(&i_work, &s_work)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(Error::SingularInformation)?;
        let max_log = (0..n)
            .filter(|&i| layout.is_variance(i))
            .fold(F::zero(), |acc, i| acc.max(step[i].abs()));
        if max_log > F::lit(MAX_LOG_STEP) {
            let shrink = F::lit(MAX_LOG_STEP) / max_log;
            step.iter_mut().for_each(|s| *s *= shrink);
        }
        let mut lambda = F::one();
        let accepted = loop {
            let trial: Vec<F> = (0..n)
                .map(|i| {
                    if layout.is_variance(i) {
                        psi[i] * (lambda * step[i]).exp()
                    } else {
                        psi[i] + lambda * step[i]
                    }
                })
                .collect();
            let cand = layout.from_vector(&trial, &params);
            if let Some(ll) = loglik_at(y, &cand, init) {
                if ll.is_finite() && ll >= grad.loglik {
                    break Some(cand);
                }
            }
            lambda *= F::lit(0.5);
            if lambda < stopping.min_step {
                break None;
            }
        };
        params = accepted.ok_or(Error::LineSearchFailed { iter })?;
        grad = score_and_info_y(y, &params, init)?;
        trace.push(TraceRow { iter, loglik: grad.loglik, grad_norm: grad.score_norm() });
    }
    let converged = grad.score_norm() < stopping.grad_tol;
    Ok(MleFit { params, gradient: grad, trace, iterations: iter, converged })
}

/// Output of [`svd_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFit<F> {
    pub alpha: Vec<F>,
    /// `β̂^(i)`, each summing to one.
    pub beta: Vec<Vec<F>>,
    /// `κ̂^(i)`, each of length T.
    pub kappa: Vec<Vec<F>>,
    /// De-trended matrix minus the rank-k reconstruction.
    pub residuals: Matrix<F>,
}

/// Two-stage baseline: row means, then a rank-k SVD of the de-trended panel
/// with `β̂^(i) = u_i / Σu_i` and `κ̂^(i) = ρ_i v_i Σu_i`.
pub fn svd_fit<F: Scalar>(panel: &MortalityPanel<F>, k: usize) -> Result<SvdFit<F>> {
    svd_fit_y(panel.log_rates(), k)
}

pub fn svd_fit_y<F: Scalar>(y: &Matrix<F>, k: usize) -> Result<SvdFit<F>> {
    let (p, t) = (y.rows(), y.cols());
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let tf = F::from_usize_lossy(t);
    let alpha: Vec<F> = (0..p).map(|x| y.row(x).iter().copied().sum::<F>() / tf).collect();
    let mut z = Matrix::zeros(p, t);
    for x in 0..p {
        for s in 0..t {
            z[(x, s)] = y[(x, s)] - alpha[x];
        }
    }
    let dec = svd(&z);
    let rank = dec.rank(p, t);
    if k > rank {
        return Err(Error::RankDeficient { k, rank });
    }
    let mut residuals = z;
    let mut betas = Vec::with_capacity(k);
    let mut kappas = Vec::with_capacity(k);
    for i in 0..k {
        let u = &dec.u[i];
        let su: F = u.iter().copied().sum();
        let scale = u.iter().fold(F::zero(), |acc, v| acc.max(v.abs()));
        if su.abs() <= F::lit(1e-10) * scale {
            return Err(Error::invalid(format!(
                "singular vector {} sums to zero; the unit-sum scaling is undefined",
                i + 1
            )));
        }
        let b: Vec<F> = u.iter().map(|&v| v / su).collect();
        let kap: Vec<F> = dec.v[i].iter().map(|&v| dec.singular_values[i] * v * su).collect();
        for x in 0..p {
            for s in 0..t {
                residuals[(x, s)] -= b[x] * kap[s];
            }
        }
        betas.push(b);
        kappas.push(kap);
    }
    Ok(SvdFit { alpha, beta: betas, kappa: kappas, residuals })
}

/// Random walk with drift by moments: mean and sample variance (n − 1
/// denominator) of the increments.
pub fn rw_drift_fit<F: Scalar>(kappa: &[F]) -> Result<(F, F)> {
    if kappa.len() < 3 {
        return Err(Error::invalid("rw_drift_fit needs at least three values"));
    }
    let d: Vec<F> = kappa.windows(2).map(|w| w[1] - w[0]).collect();
    let n = F::from_usize_lossy(d.len());
    let theta = d.iter().copied().sum::<F>() / n;
    let var = d.iter().map(|&x| (x - theta) * (x - theta)).sum::<F>() / (n - F::one());
    Ok((theta, var))
}

/// Data-driven starting point for [`fit_mle`].
///
/// α from row means with the first entry set by `constraints`, β fixed at
/// `β_{x1}` for every age, κ from the first SVD factor rescaled to that β,
/// θ and σ²_ω from [`rw_drift_fit`], observation variances from the SVD
/// residuals (per age, or pooled).
pub fn default_mle_init<F: Scalar>(
    panel: &MortalityPanel<F>,
    constraints: &ConstraintSpec<F>,
    pooled: bool,
) -> Result<StaticParams<F>> {
    let fit = svd_fit(panel, 1)?;
    let p = panel.p();
    let b0 = constraints.beta_x1;
    let scale = b0 * F::from_usize_lossy(p);
    let kappa: Vec<F> = fit.kappa[0].iter().map(|&k| k / scale).collect();
    let (theta, s2w) = if kappa.len() >= 3 {
        rw_drift_fit(&kappa)?
    } else {
        (F::zero(), F::one())
    };
    let floor = F::lit(1e-8);
    let t = F::from_usize_lossy(panel.periods());
    let row_var: Vec<F> = (0..p)
        .map(|x| {
            let r = fit.residuals.row(x);
            (r.iter().map(|&e| e * e).sum::<F>() / t).max(floor)
        })
        .collect();
    let mut alpha = fit.alpha.clone();
    alpha[0] = constraints.alpha_x1;
    let beta = vec![b0; p];
    let s2w = s2w.max(floor);
    let params = if pooled {
        let pooled_var = row_var.iter().copied().sum::<F>() / F::from_usize_lossy(p);
        StaticParams::lc(alpha, beta, theta, pooled_var, s2w)
    } else {
        StaticParams::lc_h(alpha, beta, theta, row_var, s2w)
    };
    Ok(params)
}
