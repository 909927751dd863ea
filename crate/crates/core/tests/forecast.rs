mod common;

use common::{chain_from, ks_statistic, mean, var};
use mortss::forecast::{forecast_linear, forecast_sv, ForecastConfig, JumpoffMode};
use mortss::model::{ModelKind, ObsVariance, StaticParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_lc_chain(n: usize, seed: u64) -> mortss::bayes::ChainOutput<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::new();
    let mut kappa = Vec::new();
    for _ in 0..n {
        let alpha = vec![-5.0 + rng.random_range(-0.1..0.1), -3.0 + rng.random_range(-0.1..0.1)];
        let beta = vec![0.2, 0.8 + rng.random_range(-0.05..0.05)];
        let theta = -0.1 + rng.random_range(-0.03..0.03);
        draws.push(StaticParams::lc(alpha, beta, theta, 0.02, 0.1));
        kappa.push(vec![0.0, rng.random_range(-1.0..1.0)]);
    }
    chain_from(ModelKind::Lc, draws, kappa, None)
}

fn config(horizon: usize, seed: u64) -> ForecastConfig {
    let mut c = ForecastConfig::new(seed);
    c.horizon = horizon;
    c
}

#[test]
fn forecast_mean_matches_total_expectation() {
    let chain = random_lc_chain(4000, 1);
    let fan = forecast_linear(&chain, None, &config(5, 2)).unwrap();
    for k in 1..=5 {
        for x in 0..2 {
            let diffs: Vec<f64> = chain
                .draws
                .iter()
                .zip(&chain.kappa_draws)
                .zip(&fan.samples)
                .map(|((d, kap), path)| {
                    path[k - 1][x] - (d.alpha[x] + d.beta[x] * (kap[1] + k as f64 * d.theta))
                })
                .collect();
            let se = (var(&diffs) / diffs.len() as f64).sqrt();
            assert!(mean(&diffs).abs() < 4.0 * se, "k={k} x={x}");
        }
    }
}

#[test]
fn frozen_zero_variance_volatility_matches_linear_in_distribution() {
    let n = 4000;
    let sv_draw = StaticParams::lcsv(vec![-4.0], vec![1.0], -0.1, ObsVariance::Pooled(0.02), 0.0, 0.1f64.ln(), 0.0, -1.0);
    let lc_draw = StaticParams::lc(vec![-4.0], vec![1.0], -0.1, 0.02, 0.1);
    let sv = chain_from(ModelKind::Lcsv, vec![sv_draw; n], vec![vec![0.0, 0.5]; n], Some(vec![vec![-3.0]; n]));
    let lc = chain_from(ModelKind::Lc, vec![lc_draw; n], vec![vec![0.0, 0.5]; n], None);
    let a = forecast_sv(&sv, None, &config(1, 10)).unwrap();
    let b = forecast_linear(&lc, None, &config(1, 11)).unwrap();
    let d = ks_statistic(&a.column(1, 0), &b.column(1, 0));
    let crit = (-(0.001f64 / 2.0).ln() / 2.0).sqrt() * (2.0 / n as f64).sqrt();
    assert!(d < crit, "KS statistic {d} >= {crit}");
    assert!(forecast_sv(&lc, None, &config(1, 1)).is_err());
    assert!(forecast_linear(&sv, None, &config(1, 1)).is_err());
}

#[test]
fn kappa_variance_grows_with_horizon_under_rising_volatility() {
    let n = 4000;
    let d = StaticParams::lcsv(vec![-4.0], vec![1.0], 0.0, ObsVariance::Pooled(0.01), 0.5, 0.0, 0.05, -1.0);
    let chain = chain_from(ModelKind::Lcsv, vec![d; n], vec![vec![0.0, 0.0]; n], Some(vec![vec![-2.0]; n]));
    let fan = forecast_sv(&chain, None, &config(10, 3)).unwrap();
    let mut prev = 0.0;
    for k in 0..10 {
        let col: Vec<f64> = fan.kappa_samples.iter().map(|p| p[k]).collect();
        let v = var(&col);
        assert!(v >= prev, "k={}", k + 1);
        prev = v;
    }
}

#[test]
fn homoscedastic_band_widens() {
    let chain = random_lc_chain(20_000, 4);
    let fan = forecast_linear(&chain, None, &config(30, 5)).unwrap();
    let rows = fan.summary(&["0".into(), "1".into()]).unwrap();
    for x in 0..2 {
        let widths: Vec<f64> = rows.iter().skip(x).step_by(2).map(|r| r.q975 - r.q025).collect();
        assert!(widths.windows(2).all(|w| w[1] >= w[0]));
        let first = &rows[x];
        assert!(first.q025 < first.mean && first.mean < first.q975);
    }
}

#[test]
fn actual_jumpoff_is_exact_and_deterministic() {
    let chain = random_lc_chain(200, 6);
    let obs = [-4.9, -3.2];
    let mut cfg = config(3, 7);
    cfg.jumpoff = JumpoffMode::Actual;
    let fan = forecast_linear(&chain, Some(&obs), &cfg).unwrap();
    for x in 0..2 {
        let avg = fan.start.iter().map(|s| s[x]).sum::<f64>() / fan.start.len() as f64;
        assert!((avg - obs[x]).abs() < 1e-12);
    }
    assert_eq!(fan, forecast_linear(&chain, Some(&obs), &cfg).unwrap());
    let mut strided = cfg;
    strided.stride = 7;
    assert_eq!(forecast_linear(&chain, Some(&obs), &strided).unwrap().draws(), 29);
}
