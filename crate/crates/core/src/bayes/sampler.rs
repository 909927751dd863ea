use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::{ChainMeta, ChainOutput};
use super::conditional::{sample_static_linear, sample_static_sv};
use super::prior::{ConditionalForm, PriorSpec};
use crate::data::MortalityPanel;
use crate::error::{Error, Result};
use crate::gradient::default_mle_init;
use crate::kalman::{ffbs_sample, filter_moments, volatility_variances, StateVariance};
use crate::model::{ConstraintSpec, ModelKind, ObsVariance, StaticParams};
use crate::scalar::Scalar;
use crate::smc::{bootstrap_filter, sample_path, LcsvHooks, SmcConfig};

/// Settings shared by both samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    /// Total sweeps M, burn-in included.
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default)]
    pub form: ConditionalForm,
    /// Particle filter used by the volatility sampler.
    #[serde(default)]
    pub smc: SmcConfig,
    /// PIMH rounds per sweep.
    #[serde(default = "default_n_pimh")]
    pub n_pimh: usize,
}

fn default_n_pimh() -> usize {
    1
}

impl GibbsConfig {
    pub fn new(sweeps: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            sweeps,
            burn_in,
            seed,
            form: ConditionalForm::Corrected,
            smc: SmcConfig::default(),
            n_pimh: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 {
            return Err(Error::invalid("at least one sweep is required"));
        }
        if self.burn_in >= self.sweeps {
            return Err(Error::invalid("burn-in must be smaller than the number of sweeps"));
        }
        if self.n_pimh == 0 {
            return Err(Error::invalid("n_pimh must be at least 1"));
        }
        self.smc.validate()
    }
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self::new(15000, 5000, 0)
    }
}

/// Generator for one sweep: the chain seed picks the key, the 1-based sweep
/// index picks the stream. A chain can therefore be stopped and continued
/// without changing any draw.
pub fn sweep_rng(seed: u64, sweep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sweep as u64);
    rng
}

/// Default starting point for a sampler.
///
/// Linear kinds use the MLE starting values; volatility kinds add
/// `γ₀ = ln σ²_ω`, `λ₁ = 0.9`, `λ₂ = 0.1 γ₀` (mean level `γ₀`) and
/// `σ²_γ = 0.1`.
pub fn default_initial_params<F: Scalar>(
    panel: &MortalityPanel<F>,
    kind: ModelKind,
    constraints: &ConstraintSpec<F>,
) -> Result<StaticParams<F>> {
    if !kind.supports_estimation() {
        return Err(Error::invalid(format!("{kind} can be simulated but not estimated")));
    }
    let pooled = !kind.is_heteroscedastic();
    let base = default_mle_init(panel, constraints, pooled)?;
    if !kind.is_sv() {
        return Ok(base);
    }
    let g0 = base.sigma2_omega.unwrap_or_else(F::one).ln();
    let l1 = F::lit(0.9);
    let mut out = StaticParams::lcsv(
        base.alpha,
        base.beta,
        base.theta,
        base.sigma2_eps,
        l1,
        (F::one() - l1) * g0,
        F::lit(0.1),
        g0,
    );
    out.sigma2_omega = None;
    Ok(out)
}

/// Current values carried from one sweep to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<F> {
    pub params: StaticParams<F>,
    /// `γ_{1:T}`, volatility models only.
    pub gamma: Option<Vec<F>>,
}

impl<F: Scalar> ChainState<F> {
    /// Starting state; volatility paths start flat at `γ₀`.
    pub fn initial(kind: ModelKind, params: StaticParams<F>, periods: usize) -> Self {
        let gamma = kind.is_sv().then(|| vec![params.gamma0.unwrap_or_else(F::zero); periods]);
        Self { params, gamma }
    }

    /// State after the last stored sweep of `chain`.
    pub fn from_chain(chain: &ChainOutput<F>) -> Option<Self> {
        let params = chain.draws.last()?.clone();
        let gamma = chain.gamma_draws.as_ref().and_then(|g| g.last().cloned());
        Some(Self { params, gamma })
    }
}

/// Result of a PIMH update: the retained path and its estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PimhState<F> {
    pub gamma: Vec<F>,
    pub log_marginal: F,
}

/// Independent Metropolis-Hastings test on marginal-likelihood estimates:
/// accept with probability `min(1, p̂′ / p̂)`.
pub fn pimh_accept<F: Scalar, R: Rng + ?Sized>(log_current: F, log_proposed: F, rng: &mut R) -> bool {
    let u = F::open_unit(rng);
    u.ln() < log_proposed - log_current
}

/// Iteration `j = 0`: one filter run and one path draw.
pub fn pimh_init<F: Scalar, R: Rng + ?Sized>(
    hooks: &LcsvHooks<'_, F>,
    smc: &SmcConfig,
    rng: &mut R,
) -> Result<PimhState<F>> {
    let sys = bootstrap_filter(hooks, hooks.periods(), smc, rng)?;
    Ok(PimhState { gamma: sample_path(&sys, rng), log_marginal: sys.log_marginal })
}

/// `n_pimh` accept/reject rounds, each proposing a fresh filter run and path.
///
/// Returns the final state and the number of accepted proposals.
pub fn pimh_update<F: Scalar, R: Rng + ?Sized>(
    current: PimhState<F>,
    hooks: &LcsvHooks<'_, F>,
    smc: &SmcConfig,
    n_pimh: usize,
    rng: &mut R,
) -> Result<(PimhState<F>, usize)> {
    if n_pimh == 0 {
        return Err(Error::invalid("n_pimh must be at least 1"));
    }
    let mut state = current;
    let mut accepted = 0;
    for _ in 0..n_pimh {
        let prop = pimh_init(hooks, smc, rng)?;
        if pimh_accept(state.log_marginal, prop.log_marginal, rng) {
            state = prop;
            accepted += 1;
        }
    }
    Ok((state, accepted))
}

fn volatility_hooks<'a, F: Scalar>(kappa: &'a [F], params: &StaticParams<F>) -> Result<LcsvHooks<'a, F>> {
    let need = |v: Option<F>, n: &str| v.ok_or_else(|| Error::invalid(format!("volatility model needs {n}")));
    Ok(LcsvHooks {
        kappa,
        theta: params.theta,
        lambda1: need(params.lambda1, "lambda1")?,
        lambda2: need(params.lambda2, "lambda2")?,
        sigma2_gamma: need(params.sigma2_gamma, "sigma2_gamma")?,
        gamma0: need(params.gamma0, "gamma0")?,
    })
}

/// Everything drawn in one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepDraw<F> {
    pub params: StaticParams<F>,
    pub kappa: Vec<F>,
    pub gamma: Option<Vec<F>>,
    pub pimh_accepted: usize,
}

/// One Gibbs sweep: κ by FFBS, then `γ` by PIMH for volatility models,
/// then the static parameters.
pub fn sweep<F: Scalar, R: Rng + ?Sized>(
    panel: &MortalityPanel<F>,
    kind: ModelKind,
    priors: &PriorSpec<F>,
    config: &GibbsConfig,
    state: &ChainState<F>,
    rng: &mut R,
) -> Result<SweepDraw<F>> {
    let y = panel.log_rates();
    let init = priors.state_init();
    if kind.is_sv() {
        let gamma = state
            .gamma
            .as_ref()
            .ok_or_else(|| Error::invalid("volatility chain state lacks a gamma path"))?;
        let vars = volatility_variances(gamma);
        let mom = filter_moments(y, &state.params, init, StateVariance::Path(&vars))?;
        let kappa = ffbs_sample(&mom, rng)?;
        let hooks = volatility_hooks(&kappa, &state.params)?;
        let start = pimh_init(&hooks, &config.smc, rng)?;
        let (pimh, accepted) = pimh_update(start, &hooks, &config.smc, config.n_pimh, rng)?;
        let params = sample_static_sv(y, &kappa, &pimh.gamma, &state.params, priors, config.form, rng)?;
        Ok(SweepDraw { params, kappa, gamma: Some(pimh.gamma), pimh_accepted: accepted })
    } else {
        let s2w = state
            .params
            .sigma2_omega
            .ok_or_else(|| Error::invalid("linear model needs sigma2_omega"))?;
        let mom = filter_moments(y, &state.params, init, StateVariance::Constant(s2w))?;
        let kappa = ffbs_sample(&mom, rng)?;
        let params = sample_static_linear(y, &kappa, &state.params, priors, config.form, rng)?;
        Ok(SweepDraw { params, kappa, gamma: None, pimh_accepted: 0 })
    }
}

fn check_kind(kind: ModelKind, sv: bool) -> Result<()> {
    let ok = kind.supports_estimation() && kind.is_sv() == sv;
    if !ok {
        let expect = if sv { "LCSV or LCSV_H" } else { "LC or LC_H" };
        return Err(Error::invalid(format!("{kind} is not supported here; expected {expect}")));
    }
    Ok(())
}

fn empty_chain<F: Scalar>(
    panel: &MortalityPanel<F>,
    kind: ModelKind,
    priors: &PriorSpec<F>,
    constraints: &ConstraintSpec<F>,
    config: &GibbsConfig,
) -> ChainOutput<F> {
    let years = panel.years();
    let meta = ChainMeta {
        model: kind,
        seed: config.seed,
        sweeps: 0,
        burn_in: config.burn_in,
        particles: kind.is_sv().then_some(config.smc.particles),
        n_pimh: kind.is_sv().then_some(config.n_pimh),
        pimh_accepted: 0,
        pimh_proposed: 0,
        form: config.form,
        priors: *priors,
        constraints: *constraints,
        age_groups: panel.groups().iter().map(|g| g.label.clone()).collect(),
        first_year: years[0],
        last_year: *years.last().expect("panel has years"),
    };
    ChainOutput { meta, draws: Vec::new(), kappa_draws: Vec::new(), gamma_draws: kind.is_sv().then(Vec::new) }
}

/// Runs sweeps `chain.len() + 1 ..= target` and appends them.
///
/// `chain.meta` supplies the seed, priors and sampler settings; results are
/// identical to a single uninterrupted run.
pub fn extend_chain<F: Scalar>(
    panel: &MortalityPanel<F>,
    chain: &mut ChainOutput<F>,
    config: &GibbsConfig,
    start: Option<ChainState<F>>,
    target: usize,
    mut on_sweep: impl FnMut(usize, &ChainOutput<F>) -> Result<()>,
) -> Result<()> {
    let kind = chain.meta.model;
    let priors = chain.meta.priors;
    let mut state = match ChainState::from_chain(chain).or(start) {
        Some(s) => s,
        None => return Err(Error::invalid("no starting state for the chain")),
    };
    for s in chain.len() + 1..=target {
        let mut rng = sweep_rng(config.seed, s);
        let draw = sweep(panel, kind, &priors, config, &state, &mut rng)
            .map_err(|e| Error::Sweep { sweep: s, source: Box::new(e) })?;
        if kind.is_sv() {
            chain.meta.pimh_accepted += draw.pimh_accepted as u64;
            chain.meta.pimh_proposed += config.n_pimh as u64;
        }
        state = ChainState { params: draw.params.clone(), gamma: draw.gamma.clone() };
        chain.draws.push(draw.params);
        chain.kappa_draws.push(draw.kappa);
        if let (Some(g), Some(all)) = (draw.gamma, chain.gamma_draws.as_mut()) {
            all.push(g);
        }
        chain.meta.sweeps = chain.len();
        on_sweep(s, chain)?;
    }
    Ok(())
}

/// An empty chain and its starting state, for callers that drive
/// [`extend_chain`] themselves.
pub fn start_chain<F: Scalar>(
    panel: &MortalityPanel<F>,
    kind: ModelKind,
    priors: &PriorSpec<F>,
    constraints: &ConstraintSpec<F>,
    config: &GibbsConfig,
    init: Option<StaticParams<F>>,
) -> Result<(ChainOutput<F>, ChainState<F>)> {
    if !kind.supports_estimation() {
        return Err(Error::invalid(format!("{kind} can be simulated but not estimated")));
    }
    config.validate()?;
    priors.validate()?;
    let mut params = match init {
        Some(p) => p,
        None => default_initial_params(panel, kind, constraints)?,
    };
    constraints.apply(&mut params);
    params.validate(kind)?;
    if params.p() != panel.p() {
        return Err(Error::invalid("initial parameters do not match the panel"));
    }
    let state = ChainState::initial(kind, params, panel.periods());
    Ok((empty_chain(panel, kind, priors, constraints, config), state))
}

fn run_chain<F: Scalar>(
    panel: &MortalityPanel<F>,
    kind: ModelKind,
    priors: &PriorSpec<F>,
    constraints: &ConstraintSpec<F>,
    config: &GibbsConfig,
    init: Option<StaticParams<F>>,
) -> Result<ChainOutput<F>> {
    let (mut chain, state) = start_chain(panel, kind, priors, constraints, config, init)?;
    extend_chain(panel, &mut chain, config, Some(state), config.sweeps, |_, _| Ok(()))?;
    Ok(chain)
}

/// Gibbs sampler with FFBS for LC and LC-H.
pub fn gibbs_linear<F: Scalar>(
    panel: &MortalityPanel<F>,
    kind: ModelKind,
    priors: &PriorSpec<F>,
    constraints: &ConstraintSpec<F>,
    config: &GibbsConfig,
    init: Option<StaticParams<F>>,
) -> Result<ChainOutput<F>> {
    check_kind(kind, false)?;
    run_chain(panel, kind, priors, constraints, config, init)
}

/// PIMH-within-Gibbs for LCSV and LCSV-H.
pub fn gibbs_lcsv<F: Scalar>(
    panel: &MortalityPanel<F>,
    kind: ModelKind,
    priors: &PriorSpec<F>,
    constraints: &ConstraintSpec<F>,
    config: &GibbsConfig,
    init: Option<StaticParams<F>>,
) -> Result<ChainOutput<F>> {
    check_kind(kind, true)?;
    run_chain(panel, kind, priors, constraints, config, init)
}

/// Pooled or per-age variance matching `kind`, for building start values.
pub fn obs_variance_for<F: Scalar>(kind: ModelKind, p: usize, value: F) -> ObsVariance<F> {
    if kind.is_heteroscedastic() {
        ObsVariance::PerAge(vec![value; p])
    } else {
        ObsVariance::Pooled(value)
    }
}
