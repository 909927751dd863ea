//! Mortality input: age groups, CSV ingest, crude and log death rates.
//!
//! The ingest format is a long CSV with header
//! `year,age_start,age_width,rate[,deaths,exposure]`, one row per
//! (year, age group), rows in any order. A requested group that has no row
//! of its own is aggregated from single-year rows when those carry counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Contiguous age band `[start, start + width)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgeGroup {
    pub label: String,
    pub start: u32,
    pub width: u32,
}

impl AgeGroup {
    pub fn new(start: u32, width: u32) -> Self {
        let label = if width == 1 {
            start.to_string()
        } else {
            format!("{}-{}", start, start + width - 1)
        };
        Self { label, start, width }
    }

    /// First age past the group.
    pub fn end(&self) -> u32 {
        self.start + self.width
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

/// The 21 abridged groups 0, 1-4, 5-9, ..., 95-99. Ages 100+ are excluded.
pub fn standard_groups() -> Vec<AgeGroup> {
    let mut groups = vec![AgeGroup::new(0, 1), AgeGroup::new(1, 4)];
    groups.extend((1..20).map(|i| AgeGroup::new(5 * i, 5)));
    groups
}

/// Checks widths are positive and groups are contiguous in ascending order.
pub fn validate_grouping(groups: &[AgeGroup]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::invalid("grouping is empty"));
    }
    for g in groups {
        if g.width == 0 {
            return Err(Error::invalid(format!("group {} has zero width", g.label)));
        }
    }
    for pair in groups.windows(2) {
        if pair[1].start != pair[0].end() {
            return Err(Error::invalid(format!(
                "groups {} and {} are not contiguous",
                pair[0].label, pair[1].label
            )));
        }
    }
    Ok(())
}

/// Rectangular panel of log crude death rates, ages × years.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityPanel<F> {
    groups: Vec<AgeGroup>,
    years: Vec<i32>,
    y: Matrix<F>,
    deaths: Option<Matrix<F>>,
    exposures: Option<Matrix<F>>,
}

impl<F: Scalar> MortalityPanel<F> {
    pub fn new(
        groups: Vec<AgeGroup>,
        years: Vec<i32>,
        y: Matrix<F>,
        deaths: Option<Matrix<F>>,
        exposures: Option<Matrix<F>>,
    ) -> Result<Self> {
        validate_grouping(&groups)?;
        if years.is_empty() {
            return Err(Error::invalid("panel has no years"));
        }
        for pair in years.windows(2) {
            if pair[1] != pair[0] + 1 {
                return Err(Error::NonContiguousYears {
                    start: years[0],
                    end: *years.last().unwrap(),
                    missing: pair[0] + 1,
                });
            }
        }
        let (p, t) = (groups.len(), years.len());
        if y.rows() != p || y.cols() != t {
            return Err(Error::invalid(format!(
                "log-rate matrix is {}x{}, expected {p}x{t}",
                y.rows(),
                y.cols()
            )));
        }
        for i in 0..p {
            for j in 0..t {
                if !y[(i, j)].is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite log rate for group {}, year {}",
                        groups[i], years[j]
                    )));
                }
            }
        }
        if deaths.is_some() != exposures.is_some() {
            return Err(Error::invalid("deaths and exposures must be given together"));
        }
        if let (Some(d), Some(e)) = (&deaths, &exposures) {
            if d.rows() != p || d.cols() != t || e.rows() != p || e.cols() != t {
                return Err(Error::invalid("count matrices do not match the panel shape"));
            }
            for i in 0..p {
                for j in 0..t {
                    if d[(i, j)] < F::zero() {
                        return Err(Error::invalid(format!(
                            "negative deaths for group {}, year {}",
                            groups[i], years[j]
                        )));
                    }
                    if !(e[(i, j)] > F::zero()) {
                        return Err(Error::NonPositiveExposure { row: i, col: j });
                    }
                }
            }
        }
        Ok(Self { groups, years, y, deaths, exposures })
    }

    /// Panel without counts, years starting at `first_year`.
    pub fn from_log_rates(groups: Vec<AgeGroup>, first_year: i32, y: Matrix<F>) -> Result<Self> {
        let years = (0..y.cols() as i32).map(|k| first_year + k).collect();
        Self::new(groups, years, y, None, None)
    }

    /// Number of age groups.
    pub fn p(&self) -> usize {
        self.groups.len()
    }

    /// Number of years.
    pub fn periods(&self) -> usize {
        self.years.len()
    }

    pub fn groups(&self) -> &[AgeGroup] {
        &self.groups
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn log_rates(&self) -> &Matrix<F> {
        &self.y
    }

    pub fn deaths(&self) -> Option<&Matrix<F>> {
        self.deaths.as_ref()
    }

    pub fn exposures(&self) -> Option<&Matrix<F>> {
        self.exposures.as_ref()
    }

    /// Observation vector `y_t` for the zero-based period index `t`.
    pub fn observation(&self, t: usize) -> Vec<F> {
        self.y.column(t)
    }

    /// All observation vectors, one per period.
    pub fn observations(&self) -> Vec<Vec<F>> {
        (0..self.periods()).map(|t| self.observation(t)).collect()
    }

    /// Sub-panel for years `start..=end`.
    pub fn restrict_years(&self, start: i32, end: i32) -> Result<Self> {
        let cols: Vec<usize> =
            (0..self.periods()).filter(|&j| (start..=end).contains(&self.years[j])).collect();
        if cols.is_empty() {
            return Err(Error::invalid(format!("no years inside {start}..={end}")));
        }
        let pick = |m: &Matrix<F>| {
            let mut out = Matrix::zeros(m.rows(), cols.len());
            for i in 0..m.rows() {
                for (k, &j) in cols.iter().enumerate() {
                    out[(i, k)] = m[(i, j)];
                }
            }
            out
        };
        Self::new(
            self.groups.clone(),
            cols.iter().map(|&j| self.years[j]).collect(),
            pick(&self.y),
            self.deaths.as_ref().map(pick),
            self.exposures.as_ref().map(pick),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PanelJson::from_panel(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PanelJson<F> = serde_json::from_str(text)?;
        raw.into_panel()
    }

    /// Writes the panel in the ingest CSV schema (rates, not log rates).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let counts = self.deaths.is_some();
        if counts {
            w.write_record(["year", "age_start", "age_width", "rate", "deaths", "exposure"])?;
        } else {
            w.write_record(["year", "age_start", "age_width", "rate"])?;
        }
        for (j, year) in self.years.iter().enumerate() {
            for (i, g) in self.groups.iter().enumerate() {
                let mut rec = vec![
                    year.to_string(),
                    g.start.to_string(),
                    g.width.to_string(),
                    self.y[(i, j)].exp().to_string(),
                ];
                if let (Some(d), Some(e)) = (&self.deaths, &self.exposures) {
                    rec.push(d[(i, j)].to_string());
                    rec.push(e[(i, j)].to_string());
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct PanelJson<F> {
    groups: Vec<AgeGroup>,
    years: Vec<i32>,
    log_rates: Vec<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    deaths: Option<Vec<F>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exposures: Option<Vec<F>>,
}

impl<F: Scalar> PanelJson<F> {
    fn from_panel(p: &MortalityPanel<F>) -> Self {
        Self {
            groups: p.groups.clone(),
            years: p.years.clone(),
            log_rates: p.y.as_slice().to_vec(),
            deaths: p.deaths.as_ref().map(|m| m.as_slice().to_vec()),
            exposures: p.exposures.as_ref().map(|m| m.as_slice().to_vec()),
        }
    }

    fn into_panel(self) -> Result<MortalityPanel<F>> {
        let (p, t) = (self.groups.len(), self.years.len());
        let shape = |v: Vec<F>, what: &str| {
            if v.len() != p * t {
                Err(Error::invalid(format!("{what} has {} entries, expected {}", v.len(), p * t)))
            } else {
                Ok(Matrix::from_row_major(p, t, v))
            }
        };
        let y = shape(self.log_rates, "log_rates")?;
        let deaths = self.deaths.map(|d| shape(d, "deaths")).transpose()?;
        let exposures = self.exposures.map(|e| shape(e, "exposures")).transpose()?;
        MortalityPanel::new(self.groups, self.years, y, deaths, exposures)
    }
}

/// Treatment of cells with zero recorded deaths.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPolicy {
    #[default]
    Error,
    /// Use `(D + ε) / E` for zero-death cells.
    Epsilon(f64),
}

/// Crude death rates `D / E`, cell by cell.
pub fn crude_rates<F: Scalar>(
    deaths: &Matrix<F>,
    exposures: &Matrix<F>,
    policy: ZeroPolicy,
) -> Result<Matrix<F>> {
    if deaths.rows() != exposures.rows() || deaths.cols() != exposures.cols() {
        return Err(Error::invalid("deaths and exposures differ in shape"));
    }
    let mut out = Matrix::zeros(deaths.rows(), deaths.cols());
    for i in 0..deaths.rows() {
        for j in 0..deaths.cols() {
            out[(i, j)] = crude_rate(deaths[(i, j)], exposures[(i, j)], policy, i, j)?;
        }
    }
    Ok(out)
}

fn crude_rate<F: Scalar>(d: F, e: F, policy: ZeroPolicy, row: usize, col: usize) -> Result<F> {
    if !(e > F::zero()) {
        return Err(Error::NonPositiveExposure { row, col });
    }
    if d < F::zero() {
        return Err(Error::invalid(format!("negative deaths at row {row}, column {col}")));
    }
    if d == F::zero() {
        return match policy {
            ZeroPolicy::Error => Err(Error::ZeroDeaths { row, col }),
            ZeroPolicy::Epsilon(eps) => Ok((d + F::lit(eps)) / e),
        };
    }
    Ok(d / e)
}

/// Elementwise natural log of strictly positive rates.
pub fn log_rates<F: Scalar>(rates: &Matrix<F>) -> Result<Matrix<F>> {
    let mut out = Matrix::zeros(rates.rows(), rates.cols());
    for i in 0..rates.rows() {
        for j in 0..rates.cols() {
            let r = rates[(i, j)];
            if !(r > F::zero()) {
                return Err(Error::NonPositiveRate { row: i, col: j, value: r.to_f64_lossy() });
            }
            out[(i, j)] = r.ln();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct RawCell {
    line: u64,
    rate: Option<f64>,
    deaths: Option<f64>,
    exposure: Option<f64>,
}

/// Loads a panel for `grouping` over the inclusive `year_range` (all years in
/// the file when `None`). Zero-death cells are an error.
pub fn load_panel<F: Scalar>(
    path: impl AsRef<Path>,
    grouping: &[AgeGroup],
    year_range: Option<(i32, i32)>,
) -> Result<MortalityPanel<F>> {
    load_panel_with(path, grouping, year_range, ZeroPolicy::Error)
}

pub fn load_panel_with<F: Scalar>(
    path: impl AsRef<Path>,
    grouping: &[AgeGroup],
    year_range: Option<(i32, i32)>,
    zero_policy: ZeroPolicy,
) -> Result<MortalityPanel<F>> {
    let file = std::fs::File::open(path)?;
    read_panel(file, grouping, year_range, zero_policy)
}

/// Same as [`load_panel_with`] over any reader.
pub fn read_panel<F: Scalar, R: Read>(
    input: R,
    grouping: &[AgeGroup],
    year_range: Option<(i32, i32)>,
    zero_policy: ZeroPolicy,
) -> Result<MortalityPanel<F>> {
    validate_grouping(grouping)?;
    if let Some((a, b)) = year_range {
        if a > b {
            return Err(Error::invalid(format!("empty year range {a}..={b}")));
        }
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(c_year), Some(c_start), Some(c_width), Some(c_rate)) =
        (col("year"), col("age_start"), col("age_width"), col("rate"))
    else {
        return Err(Error::MalformedRow {
            line: 1,
            message: "header must start with year,age_start,age_width,rate".into(),
        });
    };
    let c_deaths = col("deaths");
    let c_exposure = col("exposure");

    let mut cells: BTreeMap<(i32, u32, u32), RawCell> = BTreeMap::new();
    let mut file_years = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::MalformedRow { line, message };
        let field = |c: usize, name: &str| {
            rec.get(c).ok_or_else(|| bad(format!("missing field `{name}`")))
        };
        let year: i32 = field(c_year, "year")?
            .parse()
            .map_err(|e| bad(format!("year: {e}")))?;
        let start: u32 = field(c_start, "age_start")?
            .parse()
            .map_err(|e| bad(format!("age_start: {e}")))?;
        let width: u32 = field(c_width, "age_width")?
            .parse()
            .map_err(|e| bad(format!("age_width: {e}")))?;
        if width == 0 {
            return Err(bad("age_width must be at least 1".into()));
        }
        let opt_num = |c: Option<usize>, name: &str| -> Result<Option<f64>> {
            match c.and_then(|c| rec.get(c)) {
                None | Some("") => Ok(None),
                Some(s) => {
                    let v: f64 = s.parse().map_err(|e| bad(format!("{name}: {e}")))?;
                    if !v.is_finite() {
                        return Err(bad(format!("{name} is not finite")));
                    }
                    Ok(Some(v))
                }
            }
        };
        let cell = RawCell {
            line,
            rate: opt_num(Some(c_rate), "rate")?,
            deaths: opt_num(c_deaths, "deaths")?,
            exposure: opt_num(c_exposure, "exposure")?,
        };
        if cell.rate.is_none() && (cell.deaths.is_none() || cell.exposure.is_none()) {
            return Err(bad("row has neither a rate nor deaths and exposure".into()));
        }
        if let Some(prev) = cells.insert((year, start, width), cell) {
            let _ = prev;
            return Err(Error::DuplicateCell {
                group: AgeGroup::new(start, width).label,
                year,
                line,
            });
        }
        file_years.insert(year);
    }

    let (first, last) = match year_range {
        Some(r) => r,
        None => match (file_years.first(), file_years.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::invalid("input file has no data rows")),
        },
    };
    for year in first..=last {
        if !file_years.contains(&year) {
            return Err(Error::NonContiguousYears { start: first, end: last, missing: year });
        }
    }

    let years: Vec<i32> = (first..=last).collect();
    let (p, t) = (grouping.len(), years.len());
    let mut y = Matrix::<F>::zeros(p, t);
    let mut deaths = Matrix::<F>::zeros(p, t);
    let mut exposures = Matrix::<F>::zeros(p, t);
    let mut all_counts = true;
    for (j, &year) in years.iter().enumerate() {
        for (i, g) in grouping.iter().enumerate() {
            let (rate, counts) = resolve_cell(&cells, year, g, zero_policy, i, j)?;
            if !(rate > 0.0) {
                return Err(Error::NonPositiveRate { row: i, col: j, value: rate });
            }
            y[(i, j)] = F::lit(rate.ln());
            match counts {
                Some((d, e)) => {
                    deaths[(i, j)] = F::lit(d);
                    exposures[(i, j)] = F::lit(e);
                }
                None => all_counts = false,
            }
        }
    }
    let (deaths, exposures) = if all_counts { (Some(deaths), Some(exposures)) } else { (None, None) };
    MortalityPanel::new(grouping.to_vec(), years, y, deaths, exposures)
}

type CellValue = (f64, Option<(f64, f64)>);

fn resolve_cell(
    cells: &BTreeMap<(i32, u32, u32), RawCell>,
    year: i32,
    group: &AgeGroup,
    policy: ZeroPolicy,
    row: usize,
    col: usize,
) -> Result<CellValue> {
    if let Some(cell) = cells.get(&(year, group.start, group.width)) {
        let counts = cell.deaths.zip(cell.exposure);
        if let Some((_, e)) = counts {
            if !(e > 0.0) {
                return Err(Error::NonPositiveExposure { row, col });
            }
        }
        let rate = match (cell.rate, counts) {
            (Some(r), _) => r,
            (None, Some((d, e))) => crude_rate(d, e, policy, row, col)?,
            (None, None) => {
                return Err(Error::MalformedRow { line: cell.line, message: "no rate".into() })
            }
        };
        return Ok((rate, counts));
    }
    // Aggregate single-year rows carrying counts.
    let missing = || Error::MissingCell { group: group.label.clone(), year };
    if group.width == 1 {
        return Err(missing());
    }
    let (mut d_sum, mut e_sum) = (0.0, 0.0);
    for age in group.start..group.end() {
        let cell = cells.get(&(year, age, 1)).ok_or_else(missing)?;
        let (d, e) = cell.deaths.zip(cell.exposure).ok_or_else(missing)?;
        d_sum += d;
        e_sum += e;
    }
    if !(e_sum > 0.0) {
        return Err(Error::NonPositiveExposure { row, col });
    }
    let rate = crude_rate(d_sum, e_sum, policy, row, col)?;
    Ok((rate, Some((d_sum, e_sum))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn groups3() -> Vec<AgeGroup> {
        vec![AgeGroup::new(0, 1), AgeGroup::new(1, 4), AgeGroup::new(5, 5)]
    }

    const SMALL: &str = "year,age_start,age_width,rate\n\
        1900,0,1,0.2\n1900,1,4,0.02\n1900,5,5,0.005\n\
        1901,5,5,0.004\n1901,0,1,0.18\n1901,1,4,0.019\n1901,100,1,0.5\n";

    #[test]
    fn standard_grouping_matches_abridged_table() {
        let g = standard_groups();
        assert_eq!(g.len(), 21);
        assert_eq!((g[0].start, g[0].width), (0, 1));
        assert_eq!((g[1].start, g[1].width), (1, 4));
        assert_eq!((g[2].start, g[2].width), (5, 5));
        assert_eq!(g[20].label, "95-99");
        assert_eq!(g.iter().map(|g| g.width).sum::<u32>(), 100);
        validate_grouping(&g).unwrap();
    }

    #[test]
    fn loads_small_panel() {
        let panel: MortalityPanel<f64> =
            read_panel(SMALL.as_bytes(), &groups3(), None, ZeroPolicy::Error).unwrap();
        assert_eq!(panel.p(), 3);
        assert_eq!(panel.periods(), 2);
        assert_eq!(panel.years(), &[1900, 1901]);
        assert!((panel.log_rates()[(2, 1)] - 0.004f64.ln()).abs() < 1e-15);
        assert!(panel.deaths().is_none());
    }

    #[test]
    fn missing_cell_is_named() {
        let text = SMALL.replace("1900,5,5,0.005\n", "");
        let err = read_panel::<f64, _>(text.as_bytes(), &groups3(), None, ZeroPolicy::Error)
            .unwrap_err();
        match err {
            Error::MissingCell { group, year } => {
                assert_eq!(group, "5-9");
                assert_eq!(year, 1900);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = SMALL.replace("1901,0,1,0.18", "1901,zero,1,0.18");
        let err = read_panel::<f64, _>(text.as_bytes(), &groups3(), None, ZeroPolicy::Error)
            .unwrap_err();
        match err {
            Error::MalformedRow { line, .. } => assert_eq!(line, 6),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn gap_year_is_non_contiguous() {
        let text = format!("{SMALL}1903,0,1,0.1\n1903,1,4,0.01\n1903,5,5,0.003\n");
        let err = read_panel::<f64, _>(text.as_bytes(), &groups3(), None, ZeroPolicy::Error)
            .unwrap_err();
        assert!(matches!(err, Error::NonContiguousYears { missing: 1902, .. }));
    }

    #[test]
    fn year_range_drops_rows() {
        let panel: MortalityPanel<f64> =
            read_panel(SMALL.as_bytes(), &groups3(), Some((1901, 1901)), ZeroPolicy::Error)
                .unwrap();
        assert_eq!(panel.years(), &[1901]);
    }

    #[test]
    fn aggregates_single_year_counts() {
        let mut text = String::from("year,age_start,age_width,rate,deaths,exposure\n");
        for age in 0..5u32 {
            text.push_str(&format!("2000,{age},1,,{},{}\n", age + 1, 100 * (age + 1)));
        }
        let groups = vec![AgeGroup::new(0, 1), AgeGroup::new(1, 4)];
        let panel: MortalityPanel<f64> =
            read_panel(text.as_bytes(), &groups, None, ZeroPolicy::Error).unwrap();
        // group 1-4: deaths 2+3+4+5 = 14, exposure 200+300+400+500 = 1400
        assert!((panel.log_rates()[(1, 0)] - 0.01f64.ln()).abs() < 1e-15);
        assert_eq!(panel.deaths().unwrap()[(1, 0)], 14.0);
        assert_eq!(panel.exposures().unwrap()[(0, 0)], 100.0);
    }

    #[test]
    fn crude_rate_examples() {
        let d = Matrix::<f64>::from_rows(&[vec![100.0, 0.0]]);
        let e = Matrix::from_rows(&[vec![10_000.0, 500.0]]);
        let err = crude_rates(&d, &e, ZeroPolicy::Error).unwrap_err();
        assert!(matches!(err, Error::ZeroDeaths { row: 0, col: 1 }));
        let m = crude_rates(&d, &e, ZeroPolicy::Epsilon(0.5)).unwrap();
        assert!((m[(0, 0)] - 0.01).abs() < 1e-15);
        assert!((m[(0, 1)] - 0.001).abs() < 1e-15);
        let bad_e = Matrix::from_rows(&[vec![10_000.0, 0.0]]);
        assert!(matches!(
            crude_rates(&d, &bad_e, ZeroPolicy::Epsilon(0.5)),
            Err(Error::NonPositiveExposure { row: 0, col: 1 })
        ));
    }

    #[test]
    fn log_rate_examples() {
        let r = Matrix::from_rows(&[vec![0.01, 1.0, (-3.2f64).exp()]]);
        let l = log_rates(&r).unwrap();
        assert!((l[(0, 0)] + 4.605_170_185_988_091).abs() < 1e-12);
        assert_eq!(l[(0, 1)], 0.0);
        assert!((l[(0, 2)] + 3.2).abs() < 1e-15);
        assert!(log_rates(&Matrix::from_rows(&[vec![0.0]])).is_err());
    }

    #[test]
    fn json_round_trip_is_stable() {
        let panel: MortalityPanel<f64> =
            read_panel(SMALL.as_bytes(), &groups3(), None, ZeroPolicy::Error).unwrap();
        let a = panel.to_json().unwrap();
        let back = MortalityPanel::<f64>::from_json(&a).unwrap();
        assert_eq!(back, panel);
        let again: MortalityPanel<f64> =
            read_panel(SMALL.as_bytes(), &groups3(), None, ZeroPolicy::Error).unwrap();
        assert_eq!(again.to_json().unwrap(), a);
    }

    proptest! {
        #[test]
        fn log_of_exp_round_trips(vals in proptest::collection::vec(-30.0f64..5.0, 1..40)) {
            let n = vals.len();
            let y = Matrix::from_row_major(1, n, vals.clone());
            let mut r = y.clone();
            for j in 0..n { r[(0, j)] = y[(0, j)].exp(); }
            let back = log_rates(&r).unwrap();
            for j in 0..n {
                prop_assert!((back[(0, j)] - vals[j]).abs() <= 1e-14 * vals[j].abs().max(1.0));
            }
        }
    }
}
