//! Run configuration: a JSON file overlaid with command-line flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use mortss::bayes::{ConditionalForm, PriorSpec};
use mortss::forecast::JumpoffMode;
use mortss::{AgeGroup, ModelKind, ZeroPolicy};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Every setting a subcommand may read. Unset fields fall back to the
/// defaults of the subcommand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// `standard`, or `start:width` pairs separated by commas.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_year: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_year: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub priors: Option<PriorSpec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub form: Option<ConditionalForm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burnin: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_pimh: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample_frac: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chains: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jumpoff: Option<JumpoffMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dump_samples: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ages: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub age_groups: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub periods: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Flags shared by every subcommand. Names match the JSON keys.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Flags {
    /// JSON configuration file; flags override its entries.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Continue an interrupted run; a finished run is left untouched.
    #[arg(long)]
    #[serde(skip)]
    pub resume: bool,

    /// Model kind: lc, lc_h, lcsv, lcsv_h (simulation also accepts lc2_h, lc3_h2, lcsv_c).
    #[arg(long)]
    pub model: Option<String>,
    /// Input CSV with header `year,age_start,age_width,rate[,deaths,exposure]`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `standard` or `start:width,...`; inferred from the file when omitted.
    #[arg(long)]
    pub groups: Option<String>,
    #[arg(long)]
    pub first_year: Option<i32>,
    #[arg(long)]
    pub last_year: Option<i32>,
    /// Replace zero death counts by this amount.
    #[arg(long)]
    pub zero_epsilon: Option<f64>,
    /// `corrected` or `uncorrected`.
    #[arg(long)]
    pub form: Option<String>,
    /// Total MCMC sweeps, burn-in included.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub n_pimh: Option<usize>,
    #[arg(long)]
    pub resample_frac: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Independent chains, run in parallel up to MORTSS_THREADS.
    #[arg(long)]
    pub chains: Option<usize>,
    /// Save the chain every this many sweeps (0 disables).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub min_step: Option<f64>,
    /// Prior mean of κ₀.
    #[arg(long)]
    pub m0: Option<f64>,
    /// Prior variance of κ₀.
    #[arg(long)]
    pub c0: Option<f64>,
    /// SVD rank.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// `fitted` or `actual`.
    #[arg(long)]
    pub jumpoff: Option<String>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Chain directory, or a run directory containing `chain/`.
    #[arg(long)]
    pub chain: Option<PathBuf>,
    /// Also write every forecast sample.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub dump_samples: bool,
    /// Ages for life expectancy, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ages: Option<Vec<u32>>,
    /// Calendar year for an observed life table.
    #[arg(long)]
    pub year: Option<i32>,
    /// Parameter JSON for simulation.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Number of age groups to simulate.
    #[arg(long)]
    pub age_groups: Option<usize>,
    /// Number of years to simulate.
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub kappa0: Option<f64>,
    /// Output run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Flags {
    /// Reads the config file, if any, and overlays the flags.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut base = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => Value::Object(Map::new()),
        };
        let Value::Object(map) = &mut base else {
            return Err(CliError::Config("configuration must be a JSON object".into()));
        };
        let Value::Object(flags) = serde_json::to_value(self).map_err(|e| CliError::Config(e.to_string()))? else {
            unreachable!("flags serialize to an object");
        };
        for (k, v) in flags {
            if !v.is_null() {
                map.insert(k, v);
            }
        }
        serde_json::from_value(base).map_err(|e| CliError::Config(format!("configuration: {e}")))
    }
}

impl RunConfig {
    pub fn model_kind(&self) -> CliResult<ModelKind> {
        let name = self.model.as_deref().ok_or_else(|| CliError::Config("--model is required".into()))?;
        Ok(name.parse()?)
    }

    pub fn require_seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| CliError::Config("--seed is required".into()))
    }

    pub fn out_dir(&self) -> CliResult<&Path> {
        self.out.as_deref().ok_or_else(|| CliError::Config("--out is required".into()))
    }

    pub fn year_range(&self) -> CliResult<Option<(i32, i32)>> {
        match (self.first_year, self.last_year) {
            (None, None) => Ok(None),
            (Some(a), Some(b)) => Ok(Some((a, b))),
            _ => Err(CliError::Config("--first-year and --last-year must be given together".into())),
        }
    }

    pub fn zero_policy(&self) -> ZeroPolicy {
        self.zero_epsilon.map_or(ZeroPolicy::Error, ZeroPolicy::Epsilon)
    }

    /// Explicit grouping, or `None` to infer it from the data file.
    pub fn grouping(&self) -> CliResult<Option<Vec<AgeGroup>>> {
        match self.groups.as_deref() {
            None => Ok(None),
            Some(s) if s.eq_ignore_ascii_case("standard") => Ok(Some(mortss::standard_groups())),
            Some(s) => s
                .split(',')
                .map(|pair| {
                    let (a, w) = pair
                        .trim()
                        .split_once(':')
                        .ok_or_else(|| CliError::Config(format!("bad age group `{pair}`, expected start:width")))?;
                    let parse = |v: &str| {
                        v.trim().parse::<u32>().map_err(|_| CliError::Config(format!("bad age group `{pair}`")))
                    };
                    Ok(AgeGroup::new(parse(a)?, parse(w)?))
                })
                .collect::<CliResult<Vec<_>>>()
                .map(Some),
        }
    }
}

/// Distinct `(age_start, age_width)` pairs of an ingest file, ascending.
pub fn infer_groups(path: &Path) -> CliResult<Vec<AgeGroup>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(mortss::Error::from)?;
    let headers = rdr.headers().map_err(mortss::Error::from)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::from(mortss::Error::MalformedRow { line: 1, message: format!("missing column `{name}`") }))
    };
    let (cs, cw) = (col("age_start")?, col("age_width")?);
    let mut set = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(mortss::Error::from)?;
        let bad = || mortss::Error::MalformedRow { line: i as u64 + 2, message: "bad age group".into() };
        let s: u32 = rec.get(cs).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let w: u32 = rec.get(cw).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        set.insert((s, w));
    }
    Ok(set.into_iter().map(|(s, w)| AgeGroup::new(s, w)).collect())
}

/// Worker threads: `MORTSS_THREADS` if set, else the available cores.
pub fn thread_cap() -> CliResult<usize> {
    match std::env::var("MORTSS_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!("MORTSS_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"model":"lc","iters":100,"burnin":10,"jumpoff":"actual"}"#).unwrap();
        let flags = Flags { config: Some(path), iters: Some(50), form: Some("uncorrected".into()), ..Default::default() };
        let cfg = flags.resolve().unwrap();
        assert_eq!(cfg.iters, Some(50));
        assert_eq!(cfg.burnin, Some(10));
        assert_eq!(cfg.form, Some(ConditionalForm::Uncorrected));
        assert_eq!(cfg.jumpoff, Some(JumpoffMode::Actual));
        assert_eq!(cfg.model_kind().unwrap(), ModelKind::Lc);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"modle":"lc"}"#).unwrap();
        assert!(Flags { config: Some(path), ..Default::default() }.resolve().is_err());
        assert!(Flags { form: Some("both".into()), ..Default::default() }.resolve().is_err());
    }

    #[test]
    fn grouping_strings() {
        let cfg = RunConfig { groups: Some("0:1, 1:4,5:5".into()), ..Default::default() };
        let g = cfg.grouping().unwrap().unwrap();
        assert_eq!(g.iter().map(|g| g.label.as_str()).collect::<Vec<_>>(), ["0", "1-4", "5-9"]);
        let std = RunConfig { groups: Some("standard".into()), ..Default::default() };
        assert_eq!(std.grouping().unwrap().unwrap().len(), 21);
        assert!(RunConfig { groups: Some("0-4".into()), ..Default::default() }.grouping().is_err());
    }
}
