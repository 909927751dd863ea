//! Bootstrap particle filter with ESS-triggered resampling.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{draw_normal, normal_log_pdf, Scalar};

/// Unnormalized log-weights below this are treated as a collapse.
pub const COLLAPSE_LOG_WEIGHT: f64 = -700.0;

/// Model-specific pieces of a bootstrap filter over a scalar state.
///
/// Times are 1-based.
pub trait SmcHooks<F: Scalar> {
    /// Draws the state at `t = 1`.
    fn init_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> F;
    /// Draws the state at `t` given the state at `t − 1`.
    fn transition_sample<R: Rng + ?Sized>(&self, t: usize, prev: F, rng: &mut R) -> F;
    /// Log density of the observation at `t` given the state at `t`.
    fn log_likelihood(&self, t: usize, state: F) -> F;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleScheme {
    #[default]
    Multinomial,
    Systematic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    pub particles: usize,
    /// Resample when ESS falls below this fraction of the particle count.
    pub resample_frac: f64,
    #[serde(default)]
    pub scheme: ResampleScheme,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self { particles: 1000, resample_frac: 0.8, scheme: ResampleScheme::Multinomial }
    }
}

impl SmcConfig {
    pub fn with_particles(particles: usize) -> Self {
        Self { particles, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::invalid("at least two particles are required"));
        }
        if !(self.resample_frac > 0.0 && self.resample_frac <= 1.0) {
            return Err(Error::invalid("resample_frac must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Weighted particle approximation after the final step.
///
/// Particle trajectories are kept as per-step states plus parent indices, so
/// a path costs O(T) to recover.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem<F> {
    /// `states[t − 1][i]`: state of slot i at time t.
    states: Vec<Vec<F>>,
    /// `parents[t − 1][i]`: slot at time t − 1 that slot i descends from.
    parents: Vec<Vec<usize>>,
    pub weights: Vec<F>,
    pub log_marginal: F,
    pub ess_history: Vec<F>,
    pub resample_events: Vec<usize>,
}

impl<F: Scalar> ParticleSystem<F> {
    pub fn particles(&self) -> usize {
        self.weights.len()
    }

    pub fn periods(&self) -> usize {
        self.states.len()
    }

    /// Trajectory `x_{1:T}` ending in slot `i`.
    pub fn path(&self, i: usize) -> Vec<F> {
        let t_len = self.periods();
        let mut out = vec![F::zero(); t_len];
        let mut slot = i;
        for t in (0..t_len).rev() {
            out[t] = self.states[t][slot];
            slot = self.parents[t][slot];
        }
        out
    }

    pub fn paths(&self) -> Vec<Vec<F>> {
        (0..self.particles()).map(|i| self.path(i)).collect()
    }

    /// CSV `t,ess,resampled`.
    pub fn write_ess_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "ess", "resampled"])?;
        for (k, ess) in self.ess_history.iter().enumerate() {
            let t = k + 1;
            let fired = self.resample_events.contains(&t);
            w.write_record([t.to_string(), ess.to_string(), (fired as u8).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `1 / Σ w²` for normalized weights.
pub fn ess<F: Scalar>(weights: &[F]) -> F {
    let s: F = weights.iter().map(|&w| w * w).sum();
    F::one() / s
}

fn to_f64_weights<F: Scalar>(weights: &[F]) -> Vec<f64> {
    weights.iter().map(|w| w.to_f64_lossy().max(0.0)).collect()
}

/// N i.i.d. categorical draws with probabilities `weights`.
pub fn multinomial_resample<F: Scalar, R: Rng + ?Sized>(weights: &[F], rng: &mut R) -> Vec<usize> {
    let dist = WeightedIndex::new(to_f64_weights(weights)).expect("weights must be normalized");
    (0..weights.len()).map(|_| dist.sample(rng)).collect()
}

/// One uniform offset, N evenly spaced points through the cumulative weights.
pub fn systematic_resample<F: Scalar, R: Rng + ?Sized>(weights: &[F], rng: &mut R) -> Vec<usize> {
    let w = to_f64_weights(weights);
    let n = w.len();
    let total: f64 = w.iter().sum();
    let u0: f64 = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = w[0] / total;
    let mut j = 0;
    for k in 0..n {
        let u = u0 + k as f64 / n as f64;
        while u > cum && j + 1 < n {
            j += 1;
            cum += w[j] / total;
        }
        out.push(j);
    }
    out
}

fn log_sum_exp<F: Scalar>(xs: &[F]) -> F {
    let mx = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + xs.iter().map(|&x| (x - mx).exp()).sum::<F>().ln()
}

/// Runs the bootstrap filter over `t_len` observations.
///
/// With normalized weights `w_{t−1}` carried from the previous step (uniform
/// after a resample), the marginal likelihood increment is
/// `p̂(z_t | z_{1:t−1}) = Σ_i w_{t−1}^{(i)} g_t(z_t | x_t^{(i)})`, and
/// `log_marginal = Σ_t ln p̂(z_t | z_{1:t−1})`.
pub fn bootstrap_filter<F, H, R>(
    hooks: &H,
    t_len: usize,
    config: &SmcConfig,
    rng: &mut R,
) -> Result<ParticleSystem<F>>
where
    F: Scalar,
    H: SmcHooks<F>,
    R: Rng + ?Sized,
{
    config.validate()?;
    if t_len == 0 {
        return Err(Error::invalid("bootstrap filter needs at least one observation"));
    }
    let n = config.particles;
    let nf = F::from_usize_lossy(n);
    let threshold = F::lit(config.resample_frac) * nf;
    let collapse = F::lit(COLLAPSE_LOG_WEIGHT);

    let mut states: Vec<Vec<F>> = Vec::with_capacity(t_len);
    let mut parents: Vec<Vec<usize>> = Vec::with_capacity(t_len);
    let mut log_w = vec![-nf.ln(); n];
    let mut weights = vec![F::one() / nf; n];
    let mut log_marginal = F::zero();
    let mut ess_history = Vec::with_capacity(t_len);
    let mut resample_events = Vec::new();
    let mut unnorm = vec![F::zero(); n];

    for t in 1..=t_len {
        let mut x = Vec::with_capacity(n);
        if t == 1 {
            for _ in 0..n {
                x.push(hooks.init_sample(rng));
            }
        } else {
            let prev = &states[t - 2];
            for &xp in prev.iter() {
                x.push(hooks.transition_sample(t, xp, rng));
            }
        }
        for i in 0..n {
            unnorm[i] = log_w[i] + hooks.log_likelihood(t, x[i]);
        }
        let mx = unnorm.iter().copied().fold(F::neg_infinity(), F::max);
        if !(mx >= collapse) {
            return Err(Error::ParticleCollapse { t });
        }
        let lse = log_sum_exp(&unnorm);
        log_marginal += lse;
        for i in 0..n {
            log_w[i] = unnorm[i] - lse;
            weights[i] = log_w[i].exp();
        }
        let e = ess(&weights);
        ess_history.push(e);
        let mut par: Vec<usize> = (0..n).collect();
        if e < threshold {
            let idx = match config.scheme {
                ResampleScheme::Multinomial => multinomial_resample(&weights, rng),
                ResampleScheme::Systematic => systematic_resample(&weights, rng),
            };
            x = idx.iter().map(|&k| x[k]).collect();
            par = idx;
            log_w.iter_mut().for_each(|l| *l = -nf.ln());
            weights.iter_mut().for_each(|w| *w = F::one() / nf);
            resample_events.push(t);
        }
        states.push(x);
        parents.push(par);
    }
    if !log_marginal.is_finite() {
        return Err(Error::NonFiniteLikelihood);
    }
    Ok(ParticleSystem { states, parents, weights, log_marginal, ess_history, resample_events })
}

/// Draws one trajectory with probability equal to its terminal weight.
pub fn sample_path<F: Scalar, R: Rng + ?Sized>(system: &ParticleSystem<F>, rng: &mut R) -> Vec<F> {
    let dist = WeightedIndex::new(to_f64_weights(&system.weights)).expect("weights must be normalized");
    system.path(dist.sample(rng))
}

/// Log-volatility hooks: `γ_t = λ₁γ_{t−1} + λ₂ + η_t` observed through the
/// period-effect increments `κ_t − κ_{t−1} − θ ~ N(0, e^{γ_t})`.
#[derive(Debug, Clone, Copy)]
pub struct LcsvHooks<'a, F> {
    /// `κ_{0:T}`.
    pub kappa: &'a [F],
    pub theta: F,
    pub lambda1: F,
    pub lambda2: F,
    pub sigma2_gamma: F,
    pub gamma0: F,
}

impl<'a, F: Scalar> LcsvHooks<'a, F> {
    pub fn periods(&self) -> usize {
        self.kappa.len().saturating_sub(1)
    }
}

impl<F: Scalar> SmcHooks<F> for LcsvHooks<'_, F> {
    fn init_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        draw_normal(rng, self.lambda1 * self.gamma0 + self.lambda2, self.sigma2_gamma)
    }

    fn transition_sample<R: Rng + ?Sized>(&self, _t: usize, prev: F, rng: &mut R) -> F {
        draw_normal(rng, self.lambda1 * prev + self.lambda2, self.sigma2_gamma)
    }

    fn log_likelihood(&self, t: usize, state: F) -> F {
        normal_log_pdf(self.kappa[t], self.kappa[t - 1] + self.theta, state.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Flat;

    impl SmcHooks<f64> for Flat {
        fn init_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
            f64::standard_normal(rng)
        }
        fn transition_sample<R: Rng + ?Sized>(&self, _t: usize, prev: f64, rng: &mut R) -> f64 {
            prev + f64::standard_normal(rng)
        }
        fn log_likelihood(&self, _t: usize, _state: f64) -> f64 {
            -1.25
        }
    }

    #[test]
    fn ess_examples() {
        assert!((ess(&[0.01f64; 100]) - 100.0).abs() < 1e-9);
        assert_eq!(ess(&[0.0f64, 1.0, 0.0]), 1.0);
        assert_eq!(ess(&[0.5f64, 0.5, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn degenerate_resampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(multinomial_resample(&[0.0f64, 0.0, 1.0, 0.0], &mut rng).iter().all(|&i| i == 2));
        assert!(multinomial_resample(&[1.0f64, 0.0], &mut rng).iter().all(|&i| i == 0));
        assert!(systematic_resample(&[0.0f64, 1.0, 0.0], &mut rng).iter().all(|&i| i == 1));
        assert_eq!(systematic_resample(&[0.25f64; 4], &mut rng), vec![0, 1, 2, 3]);
    }

    #[test]
    fn flat_likelihood_never_resamples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sys = bootstrap_filter(&Flat, 7, &SmcConfig::with_particles(50), &mut rng).unwrap();
        assert!(sys.resample_events.is_empty());
        assert!((sys.log_marginal - 7.0 * -1.25).abs() < 1e-12);
        assert!(sys.weights.iter().all(|&w| (w - 0.02).abs() < 1e-15));
        assert_eq!(sys.paths().len(), 50);
        assert_eq!(sys.path(3).len(), 7);
    }

    #[test]
    fn degenerate_volatility_matches_random_walk() {
        let kappa = [0.0f64, -0.3, -0.1, -0.9, -1.0, -1.6];
        let hooks = LcsvHooks {
            kappa: &kappa,
            theta: -0.2,
            lambda1: 0.0,
            lambda2: -1.5,
            sigma2_gamma: 0.0,
            gamma0: 0.7,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sys = bootstrap_filter(&hooks, 5, &SmcConfig::with_particles(20), &mut rng).unwrap();
        let exact: f64 = (1..=5).map(|t| normal_log_pdf(kappa[t], kappa[t - 1] - 0.2, (-1.5f64).exp())).sum();
        assert!((sys.log_marginal - exact).abs() < 1e-8);
        assert!(sys.path(0).iter().all(|&g| g == -1.5));
    }

    #[test]
    fn collapse_is_reported() {
        let kappa = [0.0f64, 1e6];
        let hooks = LcsvHooks {
            kappa: &kappa,
            theta: 0.0,
            lambda1: 0.0,
            lambda2: -5.0,
            sigma2_gamma: 0.0,
            gamma0: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = bootstrap_filter(&hooks, 1, &SmcConfig::with_particles(8), &mut rng).unwrap_err();
        assert!(matches!(err, Error::ParticleCollapse { t: 1 }));
    }

    #[test]
    fn one_hot_terminal_weight_selects_that_path() {
        let sys = ParticleSystem {
            states: vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
            parents: vec![vec![0, 1, 2], vec![2, 2, 0]],
            weights: vec![0.0, 1.0, 0.0],
            log_marginal: 0.0,
            ess_history: vec![3.0, 1.0],
            resample_events: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            assert_eq!(sample_path(&sys, &mut rng), vec![3.0, 5.0]);
        }
        let mut buf = Vec::new();
        sys.write_ess_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,ess,resampled\n1,3,0\n2,1,0\n");
    }

    #[test]
    fn invalid_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(bootstrap_filter(&Flat, 3, &SmcConfig::with_particles(1), &mut rng).is_err());
        let cfg = SmcConfig { resample_frac: 0.0, ..SmcConfig::default() };
        assert!(bootstrap_filter(&Flat, 3, &cfg, &mut rng).is_err());
    }
}
