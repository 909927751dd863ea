//! Conditional DIC and posterior summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bayes::{flatten_params, param_columns, unflatten_params, ChainOutput};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::StaticParams;
use crate::scalar::{ln_two_pi, Scalar};

/// Gaussian log-likelihood of the panel given `κ_{1:T}`:
/// `Σ_x Σ_t log N(y_{x,t}; α_x + β_x κ_t, σ²_{ε,x})`.
pub fn conditional_loglik<F: Scalar>(params: &StaticParams<F>, kappa: &[F], y: &Matrix<F>) -> Result<F> {
    let (p, t_len) = (y.rows(), y.cols());
    if params.p() != p || kappa.len() != t_len {
        return Err(Error::invalid(format!(
            "conditional likelihood needs {p} ages and {t_len} kappa values, got {} and {}",
            params.p(),
            kappa.len()
        )));
    }
    let half = F::lit(0.5);
    let mut total = F::zero();
    for x in 0..p {
        let s2 = params.sigma2_eps.at(x);
        if !(s2 > F::zero()) {
            return Err(Error::invalid(format!("observation variance {s2} is not positive")));
        }
        let norm = -half * (ln_two_pi::<F>() + s2.ln());
        for t in 0..t_len {
            let e = y[(x, t)] - params.alpha[x] - params.beta[x] * kappa[t];
            total += norm - half * e * e / s2;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicResult<F> {
    pub dic: F,
    pub p_d: F,
    pub d_bar: F,
    pub d_at_mean: F,
}

impl<F: Scalar> DicResult<F> {
    /// `D̄` and `D(Ψ̄)` to the full record.
    pub fn from_deviances(d_bar: F, d_at_mean: F) -> Self {
        let p_d = d_bar - d_at_mean;
        Self { dic: d_bar + p_d, p_d, d_bar, d_at_mean }
    }
}

/// Coordinate-wise posterior means of ψ (variances on their own scale) and
/// of `κ_{0:T}` over the retained sweeps.
pub fn posterior_mean<F: Scalar>(chain: &ChainOutput<F>) -> Result<(StaticParams<F>, Vec<F>)> {
    let range = chain.check_retained()?;
    let kind = chain.meta.model;
    let p = chain.draws[0].p();
    let n = F::from_usize_lossy(range.len());
    let mut psi = vec![F::zero(); param_columns(kind, p).len()];
    let mut kappa = vec![F::zero(); chain.kappa_draws[0].len()];
    for i in range {
        for (acc, v) in psi.iter_mut().zip(flatten_params(kind, &chain.draws[i])) {
            *acc += v;
        }
        for (acc, &v) in kappa.iter_mut().zip(&chain.kappa_draws[i]) {
            *acc += v;
        }
    }
    psi.iter_mut().for_each(|v| *v /= n);
    kappa.iter_mut().for_each(|v| *v /= n);
    Ok((unflatten_params(kind, p, &psi)?, kappa))
}

/// Conditional DIC over the retained sweeps: `D = −2 ℓ(ψ, κ)`,
/// `DIC = 2D̄ − D(Ψ̄)`. Volatility paths do not enter.
pub fn dic<F: Scalar>(chain: &ChainOutput<F>, y: &Matrix<F>) -> Result<DicResult<F>> {
    let range = chain.check_retained()?;
    let n = F::from_usize_lossy(range.len());
    let two = F::lit(2.0);
    let mut d_sum = F::zero();
    for i in range {
        d_sum += -two * conditional_loglik(&chain.draws[i], &chain.kappa_draws[i][1..], y)?;
    }
    let (psi, kappa) = posterior_mean(chain)?;
    let d_at_mean = -two * conditional_loglik(&psi, &kappa[1..], y)?;
    Ok(DicResult::from_deviances(d_sum / n, d_at_mean))
}

/// Type-7 quantile of sorted data: linear interpolation between order
/// statistics at position `(n − 1) q`.
pub fn quantile_sorted<F: Scalar>(sorted: &[F], q: f64) -> F {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = F::lit(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Mean, standard deviation and type-7 quantiles of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary<F> {
    pub name: String,
    pub mean: F,
    pub sd: F,
    pub q025: F,
    pub q500: F,
    pub q975: F,
}

impl<F: Scalar> Summary<F> {
    pub fn of(name: impl Into<String>, values: &[F]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyChain);
        }
        let n = F::from_usize_lossy(values.len());
        let mean = values.iter().copied().sum::<F>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / (n - F::one())).sqrt()
        } else {
            F::zero()
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
        Ok(Self {
            name: name.into(),
            mean,
            sd,
            q025: quantile_sorted(&sorted, 0.025),
            q500: quantile_sorted(&sorted, 0.5),
            q975: quantile_sorted(&sorted, 0.975),
        })
    }
}

/// Per-parameter summaries over the retained sweeps.
pub fn summarize<F: Scalar>(chain: &ChainOutput<F>) -> Result<Vec<Summary<F>>> {
    let range = chain.check_retained()?;
    let kind = chain.meta.model;
    let names = param_columns(kind, chain.draws[0].p());
    let rows: Vec<Vec<F>> = range.map(|i| flatten_params(kind, &chain.draws[i])).collect();
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<F> = rows.iter().map(|r| r[j]).collect();
            Summary::of(name.clone(), &col)
        })
        .collect()
}

/// CSV `parameter,mean,sd,q025,q500,q975`.
pub fn write_summary_csv<F: Scalar, W: Write>(rows: &[Summary<F>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "mean", "sd", "q025", "q500", "q975"])?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.q025.to_string(),
            r.q500.to_string(),
            r.q975.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
