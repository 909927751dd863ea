#![allow(dead_code)]

use mortss::bayes::{ChainMeta, ChainOutput, ConditionalForm, PriorSpec};
use mortss::model::{ConstraintSpec, ModelKind, StaticParams};

/// Chain with no burn-in built from explicit draws.
pub fn chain_from(
    kind: ModelKind,
    draws: Vec<StaticParams<f64>>,
    kappa: Vec<Vec<f64>>,
    gamma: Option<Vec<Vec<f64>>>,
) -> ChainOutput<f64> {
    let p = draws[0].p();
    let t_len = kappa[0].len() - 1;
    ChainOutput {
        meta: ChainMeta {
            model: kind,
            seed: 0,
            sweeps: draws.len(),
            burn_in: 0,
            particles: None,
            n_pimh: None,
            pimh_accepted: 0,
            pimh_proposed: 0,
            form: ConditionalForm::Corrected,
            priors: PriorSpec::default(),
            constraints: ConstraintSpec { alpha_x1: draws[0].alpha[0], beta_x1: draws[0].beta[0] },
            age_groups: (0..p).map(|x| format!("g{x}")).collect(),
            first_year: 1,
            last_year: t_len as i32,
        },
        draws,
        kappa_draws: kappa,
        gamma_draws: gamma,
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}
