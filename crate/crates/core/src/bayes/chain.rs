use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prior::{ConditionalForm, PriorSpec};
use crate::error::{Error, Result};
use crate::model::{ConstraintSpec, ModelKind, ObsVariance, StaticParams};
use crate::scalar::Scalar;

/// Run settings and bookkeeping stored next to the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta<F> {
    pub model: ModelKind,
    pub seed: u64,
    /// Total sweeps M, burn-in included.
    pub sweeps: usize,
    pub burn_in: usize,
    pub particles: Option<usize>,
    pub n_pimh: Option<usize>,
    pub pimh_accepted: u64,
    pub pimh_proposed: u64,
    pub form: ConditionalForm,
    pub priors: PriorSpec<F>,
    pub constraints: ConstraintSpec<F>,
    pub age_groups: Vec<String>,
    pub first_year: i32,
    pub last_year: i32,
}

impl<F> ChainMeta<F> {
    pub fn pimh_acceptance_rate(&self) -> Option<f64> {
        (self.pimh_proposed > 0).then(|| self.pimh_accepted as f64 / self.pimh_proposed as f64)
    }
}

/// Every sweep of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput<F> {
    pub meta: ChainMeta<F>,
    pub draws: Vec<StaticParams<F>>,
    /// `κ_{0:T}` per sweep.
    pub kappa_draws: Vec<Vec<F>>,
    /// `γ_{1:T}` per sweep, volatility models only.
    pub gamma_draws: Option<Vec<Vec<F>>>,
}

/// Column names of `params.csv` after the leading `sweep` column.
pub fn param_columns(kind: ModelKind, p: usize) -> Vec<String> {
    let mut cols = Vec::new();
    cols.extend((0..p).map(|x| format!("alpha[{x}]")));
    cols.extend((0..p).map(|x| format!("beta[{x}]")));
    cols.push("theta".into());
    if kind.is_heteroscedastic() {
        cols.extend((0..p).map(|x| format!("sigma2_eps[{x}]")));
    } else {
        cols.push("sigma2_eps".into());
    }
    if kind.is_sv() {
        cols.extend(["sigma2_gamma", "lambda1", "lambda2", "gamma0"].map(String::from));
    } else {
        cols.push("sigma2_omega".into());
    }
    cols
}

/// Values in [`param_columns`] order.
pub fn flatten_params<F: Scalar>(kind: ModelKind, params: &StaticParams<F>) -> Vec<F> {
    let mut out = Vec::new();
    out.extend_from_slice(&params.alpha);
    out.extend_from_slice(&params.beta);
    out.push(params.theta);
    out.extend(params.sigma2_eps.values().iter().copied());
    if kind.is_sv() {
        for v in [params.sigma2_gamma, params.lambda1, params.lambda2, params.gamma0] {
            out.push(v.unwrap_or_else(F::nan));
        }
    } else {
        out.push(params.sigma2_omega.unwrap_or_else(F::nan));
    }
    out
}

/// Inverse of [`flatten_params`].
pub fn unflatten_params<F: Scalar>(kind: ModelKind, p: usize, v: &[F]) -> Result<StaticParams<F>> {
    let expected = param_columns(kind, p).len();
    if v.len() != expected {
        return Err(Error::invalid(format!("expected {expected} parameter values, got {}", v.len())));
    }
    let alpha = v[..p].to_vec();
    let beta = v[p..2 * p].to_vec();
    let theta = v[2 * p];
    let mut k = 2 * p + 1;
    let eps = if kind.is_heteroscedastic() {
        k += p;
        ObsVariance::PerAge(v[k - p..k].to_vec())
    } else {
        k += 1;
        ObsVariance::Pooled(v[k - 1])
    };
    Ok(if kind.is_sv() {
        StaticParams::lcsv(alpha, beta, theta, eps, v[k + 1], v[k + 2], v[k], v[k + 3])
    } else {
        match eps {
            ObsVariance::Pooled(s) => StaticParams::lc(alpha, beta, theta, s, v[k]),
            ObsVariance::PerAge(s) => StaticParams::lc_h(alpha, beta, theta, s, v[k]),
        }
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn rows_csv<F: Scalar>(header: &[String], rows: &[Vec<F>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["sweep".to_string()];
    head.extend_from_slice(header);
    w.write_record(&head)?;
    for (i, row) in rows.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

fn read_rows<F: Scalar>(path: &Path) -> Result<(Vec<String>, Vec<Vec<F>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().skip(1).map(String::from).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>().map(F::lit).map_err(|_| Error::MalformedRow {
                    line: i as u64 + 2,
                    message: format!("{}: not a number: {s}", path.display()),
                })
            })
            .collect::<Result<Vec<F>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

impl<F: Scalar> ChainOutput<F> {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn periods(&self) -> usize {
        self.kappa_draws.first().map_or(0, |k| k.len().saturating_sub(1))
    }

    /// Index range of post-burn-in sweeps.
    pub fn retained_range(&self) -> std::ops::Range<usize> {
        self.meta.burn_in.min(self.len())..self.len()
    }

    /// Post-burn-in draws, or [`Error::EmptyChain`] if there are none.
    pub fn check_retained(&self) -> Result<std::ops::Range<usize>> {
        let r = self.retained_range();
        if r.is_empty() {
            return Err(Error::EmptyChain);
        }
        Ok(r)
    }

    /// Writes `params.csv`, `kappa.csv`, `gamma.csv` (volatility models) and
    /// `meta.json` into `dir`, each through a temporary file.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let kind = self.meta.model;
        let p = self.meta.age_groups.len();
        let rows: Vec<Vec<F>> = self.draws.iter().map(|d| flatten_params(kind, d)).collect();
        write_atomic(&dir.join("params.csv"), &rows_csv(&param_columns(kind, p), &rows)?)?;
        let t1 = self.periods() + 1;
        let kcols: Vec<String> = (0..t1).map(|t| format!("kappa[{t}]")).collect();
        write_atomic(&dir.join("kappa.csv"), &rows_csv(&kcols, &self.kappa_draws)?)?;
        let mut files = vec!["params.csv".to_string(), "kappa.csv".to_string()];
        if let Some(g) = &self.gamma_draws {
            let gcols: Vec<String> = (1..t1).map(|t| format!("gamma[{t}]")).collect();
            write_atomic(&dir.join("gamma.csv"), &rows_csv(&gcols, g)?)?;
            files.push("gamma.csv".into());
        }
        let meta = serde_json::to_vec_pretty(&self.meta)?;
        write_atomic(&dir.join("meta.json"), &meta)?;
        files.push("meta.json".into());
        Ok(files)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta: ChainMeta<F> = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
        let kind = meta.model;
        let p = meta.age_groups.len();
        let (_, rows) = read_rows::<F>(&dir.join("params.csv"))?;
        let draws = rows
            .iter()
            .map(|r| unflatten_params(kind, p, r))
            .collect::<Result<Vec<_>>>()?;
        let (_, kappa_draws) = read_rows::<F>(&dir.join("kappa.csv"))?;
        let gamma_draws = if kind.is_sv() {
            Some(read_rows::<F>(&dir.join("gamma.csv"))?.1)
        } else {
            None
        };
        if kappa_draws.len() != draws.len() || gamma_draws.as_ref().is_some_and(|g| g.len() != draws.len()) {
            return Err(Error::invalid(format!("{}: chain files have different lengths", dir.display())));
        }
        Ok(Self { meta, draws, kappa_draws, gamma_draws })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_round_trip() {
        let lch = StaticParams::lc_h(vec![1.0, 2.0], vec![0.2, 0.8], -0.1, vec![0.1, 0.2], 0.3);
        let v = flatten_params(ModelKind::LcH, &lch);
        assert_eq!(v.len(), param_columns(ModelKind::LcH, 2).len());
        assert_eq!(unflatten_params(ModelKind::LcH, 2, &v).unwrap(), lch);
        let sv = StaticParams::lcsv(vec![1.0], vec![0.2], -0.1, ObsVariance::Pooled(0.02), 0.9, -0.1, 0.05, -2.0);
        let v = flatten_params(ModelKind::Lcsv, &sv);
        assert_eq!(unflatten_params(ModelKind::Lcsv, 1, &v).unwrap(), sv);
        let lc = StaticParams::lc(vec![1.0], vec![0.2], -0.1, 0.02, 0.4);
        assert_eq!(unflatten_params(ModelKind::Lc, 1, &flatten_params(ModelKind::Lc, &lc)).unwrap(), lc);
    }
}
