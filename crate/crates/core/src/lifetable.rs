//! Abridged period life tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::AgeGroup;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_RADIX: f64 = 100_000.0;
pub const DEFAULT_A_FRAC: f64 = 0.5;

/// `q = n m / (1 + n (1 − a) m)`, clamped to `[0, 1]`.
pub fn death_probability<F: Scalar>(m: F, n: F, a: F) -> Result<F> {
    if m < F::zero() || m.is_nan() {
        return Err(Error::NegativeRate(m.to_f64_lossy()));
    }
    if m.is_infinite() {
        return Ok(F::one());
    }
    let q = n * m / (F::one() + n * (F::one() - a) * m);
    Ok(q.max(F::zero()).min(F::one()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifeTableRow<F> {
    pub age_start: u32,
    pub n: u32,
    pub q: F,
    pub l: F,
    pub d: F,
    #[serde(rename = "L")]
    pub big_l: F,
    #[serde(rename = "T")]
    pub big_t: F,
    pub e: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifeTable<F> {
    pub rows: Vec<LifeTableRow<F>>,
    pub a_frac: F,
    pub radix: F,
}

/// Builds the table from one year's death rates.
///
/// Every group, the last included, is closed: `l_{x+n} = l_x (1 − q_x)`,
/// `L_x = n (l_{x+n} + a d_x)`, `T_x = Σ_{y ≥ x} L_y`, `e_x = T_x / l_x`.
pub fn build_table<F: Scalar>(rates: &[F], groups: &[AgeGroup], a: F, radix: F) -> Result<LifeTable<F>> {
    if rates.len() != groups.len() {
        return Err(Error::invalid(format!(
            "{} rates for {} age groups",
            rates.len(),
            groups.len()
        )));
    }
    if !(a >= F::zero() && a <= F::one()) || !(radix > F::zero()) {
        return Err(Error::invalid("life table needs 0 <= a <= 1 and a positive radix"));
    }
    let mut rows = Vec::with_capacity(groups.len());
    let mut l = radix;
    for (g, &m) in groups.iter().zip(rates) {
        let n = F::from_usize_lossy(g.width as usize);
        let q = death_probability(m, n, a)?;
        let next = l * (F::one() - q);
        let d = l - next;
        let big_l = n * (next + a * d);
        rows.push(LifeTableRow { age_start: g.start, n: g.width, q, l, d, big_l, big_t: F::zero(), e: F::zero() });
        l = next;
    }
    let mut acc = F::zero();
    for row in rows.iter_mut().rev() {
        acc += row.big_l;
        row.big_t = acc;
        row.e = if row.l > F::zero() { acc / row.l } else { F::zero() };
    }
    Ok(LifeTable { rows, a_frac: a, radix })
}

/// [`build_table`] with `a = 0.5` and radix 100 000.
pub fn build_default_table<F: Scalar>(rates: &[F], groups: &[AgeGroup]) -> Result<LifeTable<F>> {
    build_table(rates, groups, F::lit(DEFAULT_A_FRAC), F::lit(DEFAULT_RADIX))
}

impl<F: Scalar> LifeTable<F> {
    /// Life expectancy at the start of the group beginning at `age`.
    pub fn expectancy_at(&self, age: u32) -> Result<F> {
        self.rows
            .iter()
            .find(|r| r.age_start == age)
            .map(|r| r.e)
            .ok_or(Error::UnknownAge(age))
    }

    /// CSV `age_start,n,q,l,d,L,T,e`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Life expectancy samples `e[draw][horizon][age]` from log-rate samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectancyFan<F> {
    pub ages: Vec<u32>,
    pub values: Vec<Vec<Vec<F>>>,
}

/// One table per (draw, horizon) from `exp(y)`; `log_rates[draw][horizon]`
/// is a length-p vector.
pub fn life_expectancy_samples<F: Scalar>(
    log_rates: &[Vec<Vec<F>>],
    groups: &[AgeGroup],
    ages: &[u32],
) -> Result<ExpectancyFan<F>> {
    for &age in ages {
        if !groups.iter().any(|g| g.start == age) {
            return Err(Error::UnknownAge(age));
        }
    }
    let values = log_rates
        .iter()
        .map(|per_h| {
            per_h
                .iter()
                .map(|y| {
                    let m: Vec<F> = y.iter().map(|v| v.exp()).collect();
                    let table = build_default_table(&m, groups)?;
                    ages.iter().map(|&a| table.expectancy_at(a)).collect::<Result<Vec<F>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpectancyFan { ages: ages.to_vec(), values })
}

impl<F: Scalar> ExpectancyFan<F> {
    pub fn horizons(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// CSV `horizon,age,mean,q025,q500,q975`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["horizon", "age", "mean", "q025", "q500", "q975"])?;
        for h in 0..self.horizons() {
            for (j, age) in self.ages.iter().enumerate() {
                let col: Vec<F> = self.values.iter().map(|d| d[h][j]).collect();
                let s = crate::diagnostics::Summary::of("e", &col)?;
                w.write_record([
                    (h + 1).to_string(),
                    age.to_string(),
                    s.mean.to_string(),
                    s.q025.to_string(),
                    s.q500.to_string(),
                    s.q975.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::standard_groups;
    use proptest::prelude::*;

    #[test]
    fn death_probability_examples() {
        assert_eq!(death_probability(0.0, 5.0, 0.5).unwrap(), 0.0);
        assert!((death_probability(0.01f64, 5.0, 0.5).unwrap() - 0.05 / 1.025).abs() < 1e-15);
        assert_eq!(death_probability(1e300, 5.0, 0.5).unwrap(), 1.0);
        assert_eq!(death_probability(f64::INFINITY, 5.0, 0.5).unwrap(), 1.0);
        assert!(death_probability(-0.1, 5.0, 0.5).is_err());
    }

    #[test]
    fn immortal_population_lives_to_hundred() {
        let t = build_default_table(&[0.0; 21], &standard_groups()).unwrap();
        assert_eq!(t.rows[0].e, 100.0);
        assert_eq!(t.rows[0].l, 100_000.0);
        assert_eq!(t.expectancy_at(65).unwrap(), 35.0);
        assert!(matches!(t.expectancy_at(66), Err(Error::UnknownAge(66))));
    }

    #[test]
    fn certain_death_in_first_group() {
        let mut m = vec![0.01; 21];
        m[0] = f64::INFINITY;
        let t = build_default_table(&m, &standard_groups()).unwrap();
        assert_eq!(t.rows[0].e, 0.5);
    }

    #[test]
    fn csv_layout() {
        let groups = vec![AgeGroup::new(0, 1), AgeGroup::new(1, 4)];
        let t = build_default_table(&[0.0, 0.0], &groups).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "age_start,n,q,l,d,L,T,e");
        assert_eq!(s.lines().nth(1).unwrap(), "0,1,0.0,100000.0,0.0,100000.0,500000.0,5.0");
    }

    proptest! {
        #[test]
        fn survivorship_and_locality(rates in proptest::collection::vec(0.0f64..0.39, 21), bump in 0.0f64..0.009) {
            let groups = standard_groups();
            let t = build_default_table(&rates, &groups).unwrap();
            for w in t.rows.windows(2) {
                prop_assert!(w[1].l <= w[0].l);
                prop_assert!(w[1].l > 0.0);
            }
            for r in &t.rows {
                prop_assert!((0.0..=1.0).contains(&r.q));
            }
            let mut perturbed = rates.clone();
            for m in perturbed.iter_mut().take(18) {
                *m += bump;
            }
            let t2 = build_default_table(&perturbed, &groups).unwrap();
            let e85 = t.expectancy_at(85).unwrap();
            prop_assert!((t2.expectancy_at(85).unwrap() - e85).abs() <= 1e-12 * e85);
        }
    }
}
