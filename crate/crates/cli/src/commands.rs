//! Subcommand pipelines.

use std::path::{Path, PathBuf};

use mortss::bayes::{
    extend_chain, start_chain, ChainOutput, GibbsConfig, PriorSpec,
};
use mortss::diagnostics::{dic, summarize, write_summary_csv};
use mortss::forecast::{forecast, ForecastConfig, ForecastFan, JumpoffMode};
use mortss::gradient::{default_mle_init, fit_mle, rw_drift_fit, svd_fit, StoppingRule};
use mortss::kalman::StateInit;
use mortss::lifetable::{build_default_table, life_expectancy_samples};
use mortss::model::{default_constraints, simulate, simulation_groups, ModelKind, ObsVariance, StaticParams};
use mortss::{load_panel_with, AgeGroup, Panel};
use serde::Serialize;

use crate::config::{infer_groups, thread_cap, RunConfig};
use crate::error::{CliError, CliResult};
use crate::rundir::{Prepared, RunDir};

pub const DEFAULT_CHECKPOINT: usize = 1000;

/// Opens the run directory, or returns `None` when a resumed run is
/// already complete.
fn open(cfg: &RunConfig, command: &str, resume: bool) -> CliResult<Option<RunDir>> {
    match RunDir::prepare(cfg.out_dir()?, command, cfg, resume)? {
        Prepared::Fresh(dir) => Ok(Some(dir)),
        Prepared::Complete => {
            eprintln!("{}: already complete", cfg.out_dir()?.display());
            Ok(None)
        }
    }
}

fn load_data(cfg: &RunConfig) -> CliResult<Panel> {
    let path = cfg.data.as_deref().ok_or_else(|| CliError::Config("--data is required".into()))?;
    let groups = match cfg.grouping()? {
        Some(g) => g,
        None => infer_groups(path)?,
    };
    Ok(load_panel_with(path, &groups, cfg.year_range()?, cfg.zero_policy())?)
}

fn state_init(cfg: &RunConfig) -> CliResult<StateInit<f64>> {
    let d = StateInit::default();
    Ok(StateInit::new(cfg.m0.unwrap_or(d.m0), cfg.c0.unwrap_or(d.c0))?)
}

/// Parameters used by `simulate` when no file is given, on the scale of
/// the Danish male fit.
pub fn default_sim_params(kind: ModelKind, p: usize) -> CliResult<StaticParams<f64>> {
    let alpha: Vec<f64> = (0..p).map(|x| if p > 1 { -8.0 + 7.0 * x as f64 / (p - 1) as f64 } else { -4.0 }).collect();
    let beta = vec![1.0 / p as f64; p];
    let (theta, s2e, s2w) = (-0.1, 0.02, 0.1);
    Ok(match kind {
        ModelKind::Lc => StaticParams::lc(alpha, beta, theta, s2e, s2w),
        ModelKind::LcH => StaticParams::lc_h(alpha, beta, theta, vec![s2e; p], s2w),
        ModelKind::Lcsv | ModelKind::LcsvH => {
            let var = if kind == ModelKind::Lcsv { ObsVariance::Pooled(s2e) } else { ObsVariance::PerAge(vec![s2e; p]) };
            let g0 = s2w.ln();
            StaticParams::lcsv(alpha, beta, theta, var, 0.9, 0.1 * g0, 0.1, g0)
        }
        _ => return Err(CliError::Config(format!("{kind} needs --params"))),
    })
}

pub fn simulate_cmd(cfg: &RunConfig, resume: bool) -> CliResult<()> {
    let kind = cfg.model_kind()?;
    let seed = cfg.require_seed()?;
    let Some(mut dir) = open(cfg, "simulate", resume)? else { return Ok(()) };
    let params = match &cfg.params {
        Some(path) => StaticParams::from_json(&std::fs::read_to_string(path)?)?,
        None => default_sim_params(kind, cfg.age_groups.unwrap_or(10))?,
    };
    let p = params.p();
    if let Some(n) = cfg.age_groups {
        if n != p {
            return Err(CliError::Config(format!("--age-groups {n} disagrees with {p} ages in the parameters")));
        }
    }
    let (panel, latent) = simulate(kind, &params, p, cfg.periods.unwrap_or(150), cfg.kappa0.unwrap_or(0.0), seed)?;
    debug_assert_eq!(panel.groups(), simulation_groups(p).as_slice());
    dir.write_with("panel.csv", |w| panel.write_csv(w))?;
    dir.write_bytes("panel.json", panel.to_json()?.as_bytes())?;
    dir.write_bytes("params.json", params.to_json()?.as_bytes())?;
    dir.write_json("latent.json", &latent)?;
    dir.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct DriftFit {
    component: usize,
    theta: f64,
    sigma2_omega: f64,
}

pub fn svd_cmd(cfg: &RunConfig, resume: bool) -> CliResult<()> {
    let panel = load_data(cfg)?;
    let k = cfg.rank.unwrap_or(1);
    let Some(mut dir) = open(cfg, "svd-fit", resume)? else { return Ok(()) };
    let fit = svd_fit(&panel, k)?;
    dir.write_with("svd_age.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        let mut header = vec!["age_group".to_string(), "alpha".to_string()];
        header.extend((1..=k).map(|i| format!("beta_{i}")));
        w.write_record(&header)?;
        for (x, g) in panel.groups().iter().enumerate() {
            let mut rec = vec![g.label.clone(), fit.alpha[x].to_string()];
            rec.extend(fit.beta.iter().map(|b| b[x].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })?;
    dir.write_with("svd_kappa.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        let mut header = vec!["year".to_string()];
        header.extend((1..=k).map(|i| format!("kappa_{i}")));
        w.write_record(&header)?;
        for (t, year) in panel.years().iter().enumerate() {
            let mut rec = vec![year.to_string()];
            rec.extend(fit.kappa.iter().map(|kap| kap[t].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })?;
    let drift = fit
        .kappa
        .iter()
        .enumerate()
        .map(|(i, kap)| rw_drift_fit(kap).map(|(theta, sigma2_omega)| DriftFit { component: i + 1, theta, sigma2_omega }))
        .collect::<mortss::Result<Vec<_>>>()?;
    dir.write_json("drift.json", &drift)?;
    dir.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct MleSummary {
    model: ModelKind,
    loglik: f64,
    converged: bool,
    iterations: usize,
    score_norm: f64,
    parameters: Vec<String>,
}

pub fn mle_cmd(cfg: &RunConfig, resume: bool) -> CliResult<()> {
    let kind = cfg.model_kind()?;
    if !kind.is_linear() {
        return Err(CliError::Config(format!("fit-mle supports LC and LC_H, not {kind}")));
    }
    let panel = load_data(cfg)?;
    let d = StoppingRule::default();
    let stopping = StoppingRule {
        grad_tol: cfg.grad_tol.unwrap_or(d.grad_tol),
        max_iter: cfg.max_iter.unwrap_or(d.max_iter),
        min_step: cfg.min_step.unwrap_or(d.min_step),
    };
    stopping.validate()?;
    let init = state_init(cfg)?;
    let Some(mut dir) = open(cfg, "fit-mle", resume)? else { return Ok(()) };
    let start = default_mle_init(&panel, &default_constraints(&panel), kind == ModelKind::Lc)?;
    let fit = fit_mle(&panel, &start, init, stopping)?;
    dir.write_with("trace.csv", |w| fit.write_trace_csv(w))?;
    dir.write_bytes("params.json", fit.params.to_json()?.as_bytes())?;
    dir.write_json(
        "mle.json",
        &MleSummary {
            model: kind,
            loglik: fit.gradient.loglik,
            converged: fit.converged,
            iterations: fit.iterations,
            score_norm: fit.gradient.score_norm(),
            parameters: fit.gradient.layout.names(),
        },
    )?;
    dir.finish()?;
    Ok(())
}

fn gibbs_config(cfg: &RunConfig, sv: bool) -> CliResult<GibbsConfig> {
    let mut g = GibbsConfig::new(cfg.iters.unwrap_or(15000), cfg.burnin.unwrap_or(5000), cfg.require_seed()?);
    if let Some(f) = cfg.form {
        g.form = f;
    }
    if sv {
        if let Some(n) = cfg.particles {
            g.smc.particles = n;
        }
        if let Some(f) = cfg.resample_frac {
            g.smc.resample_frac = f;
        }
        if let Some(n) = cfg.n_pimh {
            g.n_pimh = n;
        }
    }
    g.validate()?;
    Ok(g)
}

fn chain_dir_name(chains: usize, i: usize) -> String {
    if chains == 1 {
        "chain".to_string()
    } else {
        format!("chain_{}", i + 1)
    }
}

/// Runs or continues one chain, checkpointing into `dir`.
fn run_one_chain(
    panel: &Panel,
    kind: ModelKind,
    priors: &PriorSpec<f64>,
    config: &GibbsConfig,
    dir: &Path,
    checkpoint: usize,
    resume: bool,
) -> CliResult<Vec<String>> {
    let existing = if resume && dir.join("meta.json").exists() {
        let chain = ChainOutput::<f64>::read_dir(dir)?;
        let m = &chain.meta;
        if m.model != kind || m.seed != config.seed || m.burn_in != config.burn_in {
            return Err(CliError::Config(format!("{} holds a different chain", dir.display())));
        }
        Some(chain)
    } else {
        None
    };
    let (mut chain, start) = match existing {
        Some(c) => (c, None),
        None => {
            let (c, s) = start_chain(panel, kind, priors, &default_constraints(panel), config, None)?;
            (c, Some(s))
        }
    };
    extend_chain(panel, &mut chain, config, start, config.sweeps, |s, ch| {
        if checkpoint > 0 && s % checkpoint == 0 && s < config.sweeps {
            ch.write_dir(dir)?;
        }
        Ok(())
    })?;
    Ok(chain.write_dir(dir)?)
}

pub fn gibbs_cmd(cfg: &RunConfig, resume: bool, sv: bool) -> CliResult<()> {
    let command = if sv { "fit-pmcmc" } else { "fit-gibbs" };
    let kind = cfg.model_kind()?;
    if !kind.supports_estimation() || kind.is_sv() != sv {
        let expect = if sv { "LCSV or LCSV_H" } else { "LC or LC_H" };
        return Err(CliError::Config(format!("{command} expects {expect}, got {kind}")));
    }
    let config = gibbs_config(cfg, sv)?;
    let priors = cfg.priors.unwrap_or_default();
    priors.validate()?;
    let chains = cfg.chains.unwrap_or(1);
    if chains == 0 {
        return Err(CliError::Config("--chains must be at least 1".into()));
    }
    let threads = thread_cap()?.min(chains);
    let checkpoint = cfg.checkpoint_every.unwrap_or(DEFAULT_CHECKPOINT);
    let panel = load_data(cfg)?;
    let Some(mut dir) = open(cfg, command, resume)? else { return Ok(()) };
    dir.write_bytes("panel.json", panel.to_json()?.as_bytes())?;
    let root = dir.path().to_path_buf();

    let mut results: Vec<Option<CliResult<Vec<String>>>> = (0..chains).map(|_| None).collect();
    for batch in (0..chains).collect::<Vec<_>>().chunks(threads) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&i| {
                    let mut c = config;
                    c.seed = config.seed.wrapping_add(i as u64);
                    let sub = root.join(chain_dir_name(chains, i));
                    let (panel, priors) = (&panel, &priors);
                    (i, scope.spawn(move || run_one_chain(panel, kind, priors, &c, &sub, checkpoint, resume)))
                })
                .collect();
            for (i, h) in handles {
                results[i] = Some(h.join().expect("chain thread panicked"));
            }
        });
    }
    for (i, r) in results.into_iter().enumerate() {
        let name = chain_dir_name(chains, i);
        for f in r.expect("every chain ran")? {
            dir.record(&format!("{name}/{f}"));
        }
        let chain = ChainOutput::<f64>::read_dir(&root.join(&name))?;
        let summary = summarize(&chain)?;
        let file = if chains == 1 { "summary.csv".to_string() } else { format!("summary_{}.csv", i + 1) };
        dir.write_with(&file, |w| write_summary_csv(&summary, w))?;
    }
    dir.finish()?;
    Ok(())
}

/// A chain directory and the panel it was fitted to.
fn load_chain(cfg: &RunConfig) -> CliResult<(ChainOutput<f64>, Panel, PathBuf)> {
    let path = cfg.chain.as_deref().ok_or_else(|| CliError::Config("--chain is required".into()))?;
    let (chain_dir, run_dir) = if path.join("meta.json").exists() {
        (path.to_path_buf(), path.parent().map(Path::to_path_buf).unwrap_or_default())
    } else if path.join("chain").join("meta.json").exists() {
        (path.join("chain"), path.to_path_buf())
    } else {
        return Err(CliError::Config(format!("no chain found at {}", path.display())));
    };
    let chain = ChainOutput::<f64>::read_dir(&chain_dir)?;
    let panel = if cfg.data.is_some() {
        let mut c = cfg.clone();
        c.first_year = c.first_year.or(Some(chain.meta.first_year));
        c.last_year = c.last_year.or(Some(chain.meta.last_year));
        load_data(&c)?
    } else {
        let file = run_dir.join("panel.json");
        Panel::from_json(&std::fs::read_to_string(&file).map_err(|e| {
            CliError::Config(format!("cannot read {} ({e}); pass --data", file.display()))
        })?)?
    };
    let labels: Vec<&str> = panel.groups().iter().map(|g| g.label.as_str()).collect();
    if labels != chain.meta.age_groups.iter().map(String::as_str).collect::<Vec<_>>()
        || panel.periods() != chain.periods()
    {
        return Err(CliError::Config("the data do not match the chain's age groups and years".into()));
    }
    Ok((chain, panel, chain_dir))
}

fn run_forecast(cfg: &RunConfig, chain: &ChainOutput<f64>, panel: &Panel) -> CliResult<ForecastFan<f64>> {
    let mut fc = ForecastConfig::new(cfg.require_seed()?);
    fc.horizon = cfg.horizon.unwrap_or(fc.horizon);
    fc.stride = cfg.stride.unwrap_or(fc.stride);
    fc.jumpoff = cfg.jumpoff.unwrap_or_default();
    let last = panel.observation(panel.periods() - 1);
    Ok(forecast(chain, Some(&last), &fc)?)
}

#[derive(Serialize)]
struct ForecastMeta {
    model: ModelKind,
    chain: String,
    horizon: usize,
    jumpoff: JumpoffMode,
    draws: usize,
    first_forecast_year: i32,
}

pub fn forecast_cmd(cfg: &RunConfig, resume: bool) -> CliResult<()> {
    let (chain, panel, chain_dir) = load_chain(cfg)?;
    cfg.require_seed()?;
    let Some(mut dir) = open(cfg, "forecast", resume)? else { return Ok(()) };
    let fan = run_forecast(cfg, &chain, &panel)?;
    let labels: Vec<String> = panel.groups().iter().map(|g| g.label.clone()).collect();
    dir.write_with("fan.csv", |w| fan.write_fan_csv(&labels, w))?;
    if cfg.dump_samples.unwrap_or(false) {
        dir.write_with("samples.csv", |w| fan.write_samples_csv(&labels, w))?;
    }
    dir.write_json(
        "forecast.json",
        &ForecastMeta {
            model: chain.meta.model,
            chain: chain_dir.display().to_string(),
            horizon: fan.horizon,
            jumpoff: fan.jumpoff,
            draws: fan.draws(),
            first_forecast_year: chain.meta.last_year + 1,
        },
    )?;
    dir.finish()?;
    Ok(())
}

pub fn lifetable_cmd(cfg: &RunConfig, resume: bool) -> CliResult<()> {
    if cfg.chain.is_some() {
        let (chain, panel, _) = load_chain(cfg)?;
        cfg.require_seed()?;
        let ages = cfg.ages.clone().unwrap_or_else(|| vec![0, 65]);
        let Some(mut dir) = open(cfg, "lifetable", resume)? else { return Ok(()) };
        let fan = run_forecast(cfg, &chain, &panel)?;
        let e = life_expectancy_samples(fan.log_rate_paths(), panel.groups(), &ages)?;
        dir.write_with("expectancy.csv", |w| e.write_csv(w))?;
        dir.finish()?;
        return Ok(());
    }
    let panel = load_data(cfg)?;
    let year = cfg.year.unwrap_or_else(|| *panel.years().last().expect("non-empty panel"));
    let t = panel
        .years()
        .iter()
        .position(|&y| y == year)
        .ok_or_else(|| CliError::Config(format!("year {year} is not in the data")))?;
    let Some(mut dir) = open(cfg, "lifetable", resume)? else { return Ok(()) };
    let rates: Vec<f64> = panel.observation(t).iter().map(|y| y.exp()).collect();
    let groups: &[AgeGroup] = panel.groups();
    let table = build_default_table(&rates, groups)?;
    dir.write_with("lifetable.csv", |w| table.write_csv(w))?;
    dir.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct DicRecord {
    model: ModelKind,
    dic: f64,
    p_d: f64,
    d_bar: f64,
}

pub fn dic_cmd(cfg: &RunConfig, resume: bool) -> CliResult<()> {
    let (chain, panel, _) = load_chain(cfg)?;
    let r = dic(&chain, panel.log_rates())?;
    let record = DicRecord { model: chain.meta.model, dic: r.dic, p_d: r.p_d, d_bar: r.d_bar };
    let line = serde_json::to_string(&record).map_err(mortss::Error::from)?;
    if cfg.out.is_some() {
        if let Some(mut dir) = open(cfg, "dic", resume)? {
            dir.write_json("dic.json", &r)?;
            let summary = summarize(&chain)?;
            dir.write_with("summary.csv", |w| write_summary_csv(&summary, w))?;
            dir.finish()?;
        }
    }
    println!("{line}");
    Ok(())
}
