//! Posterior-predictive forecasts of log death rates.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::ChainOutput;
use crate::diagnostics::Summary;
use crate::error::{Error, Result};
use crate::scalar::{draw_normal, Scalar};

/// Starting level of the forecast.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpoffMode {
    /// Continue from the fitted `α + βκ_T`.
    #[default]
    Fitted,
    /// Shift every path so that it starts from the observed `y_T`.
    Actual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub horizon: usize,
    #[serde(default)]
    pub jumpoff: JumpoffMode,
    /// Use every `stride`-th retained sweep.
    #[serde(default = "one")]
    pub stride: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl ForecastConfig {
    pub fn new(seed: u64) -> Self {
        Self { horizon: 30, jumpoff: JumpoffMode::Fitted, stride: 1, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.stride == 0 {
            return Err(Error::invalid("forecast horizon and stride must be at least 1"));
        }
        Ok(())
    }
}

/// Sampled paths: `samples[ℓ][k]` is `y_{T+k+1}` for retained draw ℓ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastFan<F> {
    pub horizon: usize,
    pub jumpoff: JumpoffMode,
    /// Sweep index (0-based) behind each path.
    pub draw_indices: Vec<usize>,
    pub samples: Vec<Vec<Vec<F>>>,
    pub kappa_samples: Vec<Vec<F>>,
    pub gamma_samples: Option<Vec<Vec<F>>>,
    /// Jump-off level per draw: fitted `α + βκ_T` plus any shift.
    pub start: Vec<Vec<F>>,
}

/// One fan row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanRow<F> {
    pub horizon: usize,
    pub age_group: String,
    pub mean: F,
    pub q025: F,
    pub q500: F,
    pub q975: F,
}

/// Draws K-step paths from every retained sweep.
///
/// Linear kinds: `κ_{T+k} ~ N(κ_{T+k−1} + θ, σ²_ω)`. Volatility kinds first
/// draw `γ_{T+k} ~ N(λ₁γ_{T+k−1} + λ₂, σ²_γ)` and use `e^{γ_{T+k}}`. Then
/// `y_{T+k} ~ N(α + βκ_{T+k}, Σ)`. Draw ℓ uses its own generator stream, so
/// results do not depend on evaluation order.
pub fn forecast<F: Scalar>(
    chain: &ChainOutput<F>,
    observed_last: Option<&[F]>,
    config: &ForecastConfig,
) -> Result<ForecastFan<F>> {
    config.validate()?;
    let range = chain.check_retained()?;
    let kind = chain.meta.model;
    if !kind.supports_estimation() {
        return Err(Error::invalid(format!("cannot forecast {}", kind.tag())));
    }
    if config.jumpoff == JumpoffMode::Actual && observed_last.is_none() {
        return Err(Error::invalid("jump-off from actual rates needs the observed final year"));
    }
    let k_max = config.horizon;
    let t_len = chain.periods();
    let draw_indices: Vec<usize> = range.step_by(config.stride).collect();
    let mut samples = Vec::with_capacity(draw_indices.len());
    let mut kappa_samples = Vec::with_capacity(draw_indices.len());
    let mut gamma_samples = kind.is_sv().then(Vec::new);
    let mut start = Vec::with_capacity(draw_indices.len());
    for &i in &draw_indices {
        let psi = &chain.draws[i];
        let p = psi.p();
        if let Some(obs) = observed_last {
            if obs.len() != p {
                return Err(Error::invalid("observed final year has the wrong number of ages"));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        let kappa_t = chain.kappa_draws[i][t_len];
        let fitted = psi.fitted(kappa_t);
        let shift: Vec<F> = match (config.jumpoff, observed_last) {
            (JumpoffMode::Actual, Some(obs)) => obs.iter().zip(&fitted).map(|(&o, &f)| o - f).collect(),
            _ => vec![F::zero(); p],
        };
        start.push(fitted.iter().zip(&shift).map(|(&f, &s)| f + s).collect());
        let obs_var = psi.obs_variances();
        let mut kappa = kappa_t;
        let mut gamma = match (&chain.gamma_draws, kind.is_sv()) {
            (Some(g), true) => g[i].last().copied().or(psi.gamma0).unwrap_or_else(F::zero),
            _ => F::zero(),
        };
        let mut ys = Vec::with_capacity(k_max);
        let mut ks = Vec::with_capacity(k_max);
        let mut gs = Vec::with_capacity(k_max);
        for _ in 0..k_max {
            let var = if kind.is_sv() {
                let (l1, l2, s2g) = sv_params(psi)?;
                gamma = draw_normal(&mut rng, l1 * gamma + l2, s2g);
                gs.push(gamma);
                gamma.exp()
            } else {
                psi.sigma2_omega.ok_or_else(|| Error::invalid("linear draw lacks sigma2_omega"))?
            };
            kappa = draw_normal(&mut rng, kappa + psi.theta, var);
            ks.push(kappa);
            let y: Vec<F> = (0..p)
                .map(|x| draw_normal(&mut rng, psi.alpha[x] + psi.beta[x] * kappa, obs_var[x]) + shift[x])
                .collect();
            ys.push(y);
        }
        samples.push(ys);
        kappa_samples.push(ks);
        if let Some(g) = gamma_samples.as_mut() {
            g.push(gs);
        }
    }
    Ok(ForecastFan {
        horizon: k_max,
        jumpoff: config.jumpoff,
        draw_indices,
        samples,
        kappa_samples,
        gamma_samples,
        start,
    })
}

/// [`forecast`] restricted to LC and LC-H chains.
pub fn forecast_linear<F: Scalar>(
    chain: &ChainOutput<F>,
    observed_last: Option<&[F]>,
    config: &ForecastConfig,
) -> Result<ForecastFan<F>> {
    if !chain.meta.model.is_linear() {
        return Err(Error::invalid(format!("{} is not a linear model", chain.meta.model.tag())));
    }
    forecast(chain, observed_last, config)
}

/// [`forecast`] restricted to LCSV and LCSV-H chains.
pub fn forecast_sv<F: Scalar>(
    chain: &ChainOutput<F>,
    observed_last: Option<&[F]>,
    config: &ForecastConfig,
) -> Result<ForecastFan<F>> {
    if !chain.meta.model.is_sv() {
        return Err(Error::invalid(format!("{} is not a volatility model", chain.meta.model.tag())));
    }
    forecast(chain, observed_last, config)
}

fn sv_params<F: Scalar>(psi: &crate::model::StaticParams<F>) -> Result<(F, F, F)> {
    match (psi.lambda1, psi.lambda2, psi.sigma2_gamma) {
        (Some(a), Some(b), Some(c)) => Ok((a, b, c)),
        _ => Err(Error::invalid("volatility draw lacks lambda1, lambda2 or sigma2_gamma")),
    }
}

impl<F: Scalar> ForecastFan<F> {
    pub fn draws(&self) -> usize {
        self.samples.len()
    }

    /// Samples of `y_{T+h}` for one age, `h` 1-based.
    pub fn column(&self, h: usize, x: usize) -> Vec<F> {
        self.samples.iter().map(|d| d[h - 1][x]).collect()
    }

    /// Mean and equal-tailed quantiles per (horizon, age).
    pub fn summary(&self, labels: &[String]) -> Result<Vec<FanRow<F>>> {
        let mut out = Vec::new();
        for h in 1..=self.horizon {
            for (x, label) in labels.iter().enumerate() {
                let s = Summary::of(label.clone(), &self.column(h, x))?;
                out.push(FanRow {
                    horizon: h,
                    age_group: label.clone(),
                    mean: s.mean,
                    q025: s.q025,
                    q500: s.q500,
                    q975: s.q975,
                });
            }
        }
        Ok(out)
    }

    /// CSV `horizon,age_group,mean,q025,q500,q975`.
    pub fn write_fan_csv<W: Write>(&self, labels: &[String], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.summary(labels)? {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Raw samples, CSV `draw,horizon,age_group,y`.
    pub fn write_samples_csv<W: Write>(&self, labels: &[String], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["draw", "horizon", "age_group", "y"])?;
        for (d, path) in self.draw_indices.iter().zip(&self.samples) {
            for (h, y) in path.iter().enumerate() {
                for (label, v) in labels.iter().zip(y) {
                    w.write_record([(d + 1).to_string(), (h + 1).to_string(), label.clone(), v.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Per-draw paths as `[draw][horizon][age]`, for life tables.
    pub fn log_rate_paths(&self) -> &[Vec<Vec<F>>] {
        &self.samples
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{ChainMeta, ConditionalForm, PriorSpec};
    use crate::model::{ConstraintSpec, ModelKind, ObsVariance, StaticParams};

    fn chain(kind: ModelKind, draws: Vec<StaticParams<f64>>, kappa: Vec<Vec<f64>>, gamma: Option<Vec<Vec<f64>>>) -> ChainOutput<f64> {
        let p = draws[0].p();
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
                constraints: ConstraintSpec { alpha_x1: 0.0, beta_x1: 1.0 },
                age_groups: (0..p).map(|x| format!("g{x}")).collect(),
                first_year: 1,
                last_year: 2,
            },
            draws,
            kappa_draws: kappa,
            gamma_draws: gamma,
        }
    }

    #[test]
    fn noise_free_propagation() {
        let d = StaticParams::lc(vec![-3.0, -5.0], vec![0.4, 0.6], -0.5, 0.0, 0.0);
        let c = chain(ModelKind::Lc, vec![d; 3], vec![vec![0.0, 1.0, 2.0]; 3], None);
        let fan = forecast(&c, None, &ForecastConfig::new(1)).unwrap();
        assert_eq!(fan.horizon, 30);
        assert_eq!(fan.draws(), 3);
        for path in &fan.samples {
            for (k, y) in path.iter().enumerate() {
                let kap = 2.0 - 0.5 * (k + 1) as f64;
                assert!((y[0] - (-3.0 + 0.4 * kap)).abs() < 1e-12);
                assert!((y[1] - (-5.0 + 0.6 * kap)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn actual_jumpoff_starts_at_observed() {
        let d = StaticParams::lc(vec![-3.0, -5.0], vec![0.4, 0.6], -0.5, 0.01, 0.1);
        let c = chain(ModelKind::Lc, vec![d.clone(), d], vec![vec![0.0, 1.0], vec![0.0, 1.5]], None);
        let obs = [-2.0, -4.0];
        let mut cfg = ForecastConfig::new(3);
        cfg.jumpoff = JumpoffMode::Actual;
        let fan = forecast(&c, Some(&obs), &cfg).unwrap();
        for s in &fan.start {
            assert_eq!(s, &obs.to_vec());
        }
        cfg.jumpoff = JumpoffMode::Actual;
        assert!(forecast(&c, None, &cfg).is_err());
    }

    #[test]
    fn frozen_volatility() {
        let d = StaticParams::lcsv(vec![0.0], vec![1.0], 0.0, ObsVariance::Pooled(0.0), 1.0, 0.0, 0.0, 0.3);
        let c = chain(ModelKind::Lcsv, vec![d], vec![vec![0.0, 0.0]], Some(vec![vec![-1.2]]));
        let fan = forecast(&c, None, &ForecastConfig::new(2)).unwrap();
        assert!(fan.gamma_samples.unwrap()[0].iter().all(|&g| g == -1.2));
    }

    #[test]
    fn fan_csv_and_determinism() {
        let d = StaticParams::lc(vec![-3.0], vec![1.0], -0.1, 0.01, 0.1);
        let c = chain(ModelKind::Lc, vec![d; 20], vec![vec![0.0, 0.5]; 20], None);
        let mut cfg = ForecastConfig::new(9);
        cfg.horizon = 2;
        let a = forecast(&c, None, &cfg).unwrap();
        assert_eq!(a, forecast(&c, None, &cfg).unwrap());
        let mut buf = Vec::new();
        a.write_fan_csv(&["0".to_string()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("horizon,age_group,mean,q025,q500,q975\n1,0,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn empty_chain_is_an_error() {
        let d = StaticParams::lc(vec![-3.0], vec![1.0], -0.1, 0.01, 0.1);
        let mut c = chain(ModelKind::Lc, vec![d], vec![vec![0.0, 0.5]], None);
        c.meta.burn_in = 1;
        assert!(matches!(forecast(&c, None, &ForecastConfig::new(1)), Err(Error::EmptyChain)));
    }
}
