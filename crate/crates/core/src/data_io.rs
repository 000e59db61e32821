//! HMD-style population/deaths tables: CSV parsing, subsetting, block
//! aggregation, rounding, and conversion to a binomial model dataset.
//!
//! The CSV contract is one row per (age group, period group) cell with the
//! header `age_start,age_width,period_start,period_width,population,deaths`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::dataset::ApcDataset;
use crate::error::{ApcError, Result};
use crate::family::{expit, FamilyKind};
use crate::grid::TemporalGrid;

pub const COLUMNS: [&str; 6] = ["age_start", "age_width", "period_start", "period_width", "population", "deaths"];

/// Geometric comparisons tolerate this much floating-point slack (years).
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub age_start: f64,
    pub age_width: f64,
    pub period_start: f64,
    pub period_width: f64,
    pub population: f64,
    pub deaths: f64,
}

impl RateRow {
    fn age_end(&self) -> f64 {
        self.age_start + self.age_width
    }

    fn period_end(&self) -> f64 {
        self.period_start + self.period_width
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

fn key(v: f64) -> i64 {
    (v * 1e6).round() as i64
}

impl RateTable {
    pub fn new(rows: Vec<RateRow>) -> Result<Self> {
        let t = Self { rows };
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn total_deaths(&self) -> f64 {
        self.rows.iter().map(|r| r.deaths).sum()
    }

    pub fn total_population(&self) -> f64 {
        self.rows.iter().map(|r| r.population).sum()
    }

    /// Row-level checks. Reported row numbers are 1-based data rows.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<(i64, i64), usize> = HashMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            let row = i + 1;
            let fields = [r.age_start, r.age_width, r.period_start, r.period_width, r.population, r.deaths];
            if let Some(k) = fields.iter().position(|v| !v.is_finite()) {
                return Err(ApcError::Parse { row, message: format!("{} is not a finite number", COLUMNS[k]) });
            }
            if r.age_width <= 0.0 || r.period_width <= 0.0 {
                return Err(ApcError::Parse { row, message: "group widths must be positive".into() });
            }
            if r.population < 0.0 || r.deaths < 0.0 {
                return Err(ApcError::Parse { row, message: "counts must be non-negative".into() });
            }
            if r.deaths > r.population {
                return Err(ApcError::Parse {
                    row,
                    message: format!("deaths {} exceed population {}", r.deaths, r.population),
                });
            }
            if let Some(first) = seen.insert((key(r.age_start), key(r.period_start)), row) {
                return Err(ApcError::Parse {
                    row,
                    message: format!("duplicate cell (age {}, period {}), first seen at row {first}", r.age_start, r.period_start),
                });
            }
        }
        Ok(())
    }

    /// Keeps cells inside `[age_lo, age_hi) × [period_lo, period_hi)`.
    /// Each bound must fall on a cell boundary (or outside the table).
    pub fn subset(&self, age: (f64, f64), period: (f64, f64)) -> Result<RateTable> {
        for (i, r) in self.rows.iter().enumerate() {
            for (bound, lo, hi, what) in [
                (age.0, r.age_start, r.age_end(), "age"),
                (age.1, r.age_start, r.age_end(), "age"),
                (period.0, r.period_start, r.period_end(), "period"),
                (period.1, r.period_start, r.period_end(), "period"),
            ] {
                if bound > lo + EPS && bound < hi - EPS {
                    return Err(ApcError::Parse {
                        row: i + 1,
                        message: format!("{what} bound {bound} splits the group [{lo}, {hi})"),
                    });
                }
            }
        }
        let rows = self
            .rows
            .iter()
            .filter(|r| {
                r.age_start >= age.0 - EPS
                    && r.age_end() <= age.1 + EPS
                    && r.period_start >= period.0 - EPS
                    && r.period_end() <= period.1 + EPS
            })
            .copied()
            .collect();
        Ok(RateTable { rows })
    }

    /// Pools blocks of `age_factor` × `period_factor` consecutive groups.
    /// Output rows are ordered by age group, then period group.
    pub fn aggregate(&self, age_factor: usize, period_factor: usize) -> Result<RateTable> {
        if age_factor == 0 || period_factor == 0 {
            return Err(ApcError::Config("aggregation factors must be positive".into()));
        }
        let geo = Geometry::of(self)?;
        if geo.ages.len() % age_factor != 0 {
            return Err(ApcError::Config(format!(
                "{} age groups cannot be pooled in blocks of {age_factor}",
                geo.ages.len()
            )));
        }
        if geo.periods.len() % period_factor != 0 {
            return Err(ApcError::Config(format!(
                "{} period groups cannot be pooled in blocks of {period_factor}",
                geo.periods.len()
            )));
        }
        let n_age = geo.ages.len() / age_factor;
        let n_period = geo.periods.len() / period_factor;
        let mut sums = vec![(0.0, 0.0); n_age * n_period];
        for r in &self.rows {
            let (ai, pi) = geo.position(r);
            let slot = &mut sums[(ai / age_factor) * n_period + pi / period_factor];
            slot.0 += r.population;
            slot.1 += r.deaths;
        }
        let mut rows = Vec::with_capacity(sums.len());
        for a in 0..n_age {
            for p in 0..n_period {
                let (population, deaths) = sums[a * n_period + p];
                rows.push(RateRow {
                    age_start: geo.ages[a * age_factor],
                    age_width: geo.age_width * age_factor as f64,
                    period_start: geo.periods[p * period_factor],
                    period_width: geo.period_width * period_factor as f64,
                    population,
                    deaths,
                });
            }
        }
        Ok(RateTable { rows })
    }

    /// Rounds counts half away from zero, then clamps deaths to population.
    pub fn round_counts(&self) -> RateTable {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let population = r.population.round();
                RateRow { population, deaths: r.deaths.round().min(population), ..*r }
            })
            .collect();
        RateTable { rows }
    }

    /// Binomial dataset over the inferred grid: deaths out of population.
    pub fn to_model_dataset(&self) -> Result<ApcDataset> {
        let geo = Geometry::of(self)?;
        let ratio_f = geo.age_width / geo.period_width;
        let ratio = ratio_f.round();
        if ratio < 1.0 || (ratio_f - ratio).abs() > 1e-9 * ratio_f.max(1.0) {
            return Err(ApcError::Geometry(format!(
                "age width {} is not an integer multiple of period width {}",
                geo.age_width, geo.period_width
            )));
        }
        let grid = TemporalGrid::new(
            geo.ages.len(),
            geo.periods.len(),
            ratio as usize,
            geo.ages[0],
            geo.age_width,
            geo.periods[0],
            geo.period_width,
        )?;
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by_key(|&i| geo.position(&self.rows[i]));
        let mut cells = Vec::with_capacity(order.len());
        let mut response = Vec::with_capacity(order.len());
        let mut size = Vec::with_capacity(order.len());
        for i in order {
            let r = &self.rows[i];
            let (a, p) = geo.position(r);
            cells.push(grid.cell(a + 1, p + 1)?);
            response.push(r.deaths);
            size.push(r.population);
        }
        ApcDataset::new(grid, FamilyKind::Binomial, cells, response, size)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        if self.rows.is_empty() {
            out.write_record(COLUMNS)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| ApcError::Config(e.to_string()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Reads the normalized CSV from any reader.
pub fn read_rate_csv<R: Read>(reader: R) -> Result<RateTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let missing: Vec<&str> = COLUMNS.iter().copied().filter(|c| !headers.iter().any(|h| h == *c)).collect();
    if !missing.is_empty() {
        return Err(ApcError::Parse { row: 0, message: format!("missing columns: {}", missing.join(", ")) });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<RateRow>().enumerate() {
        let row = rec.map_err(|e| ApcError::Parse { row: i + 1, message: e.to_string() })?;
        rows.push(row);
    }
    RateTable::new(rows)
}

pub fn parse_rate_csv(path: &Path) -> Result<RateTable> {
    read_rate_csv(std::fs::File::open(path)?)
}

/// Free-function form of [`RateTable::subset`].
pub fn subset(table: &RateTable, age: (f64, f64), period: (f64, f64)) -> Result<RateTable> {
    table.subset(age, period)
}

/// Free-function form of [`RateTable::aggregate`].
pub fn aggregate_table(table: &RateTable, age_factor: usize, period_factor: usize) -> Result<RateTable> {
    table.aggregate(age_factor, period_factor)
}

pub fn round_counts(table: &RateTable) -> RateTable {
    table.round_counts()
}

pub fn to_model_dataset(table: &RateTable) -> Result<ApcDataset> {
    table.to_model_dataset()
}

/// Rectangular layout of a table: sorted distinct group starts and the
/// (constant) widths.
struct Geometry {
    ages: Vec<f64>,
    periods: Vec<f64>,
    age_width: f64,
    period_width: f64,
    age_pos: HashMap<i64, usize>,
    period_pos: HashMap<i64, usize>,
}

impl Geometry {
    fn of(table: &RateTable) -> Result<Self> {
        let first = table.rows.first().ok_or_else(|| ApcError::Geometry("table is empty".into()))?;
        let (age_width, period_width) = (first.age_width, first.period_width);
        let bad_age: Vec<usize> = rows_where(table, |r| (r.age_width - age_width).abs() > EPS);
        if !bad_age.is_empty() {
            return Err(ApcError::Geometry(format!("age width differs from {age_width} at rows {}", list(&bad_age))));
        }
        let bad_period: Vec<usize> = rows_where(table, |r| (r.period_width - period_width).abs() > EPS);
        if !bad_period.is_empty() {
            return Err(ApcError::Geometry(format!(
                "period width differs from {period_width} at rows {}",
                list(&bad_period)
            )));
        }
        let ages = progression(table.rows.iter().map(|r| r.age_start), age_width, "age")?;
        let periods = progression(table.rows.iter().map(|r| r.period_start), period_width, "period")?;
        let expected = ages.len() * periods.len();
        let distinct: HashSet<(i64, i64)> = table.rows.iter().map(|r| (key(r.age_start), key(r.period_start))).collect();
        if distinct.len() != table.rows.len() {
            return Err(ApcError::Geometry("duplicate cells".into()));
        }
        if table.rows.len() != expected {
            return Err(ApcError::Geometry(format!(
                "{} rows do not fill the {} × {} grid",
                table.rows.len(),
                ages.len(),
                periods.len()
            )));
        }
        let age_pos = ages.iter().enumerate().map(|(i, &v)| (key(v), i)).collect();
        let period_pos = periods.iter().enumerate().map(|(i, &v)| (key(v), i)).collect();
        Ok(Self { ages, periods, age_width, period_width, age_pos, period_pos })
    }

    fn position(&self, r: &RateRow) -> (usize, usize) {
        (self.age_pos[&key(r.age_start)], self.period_pos[&key(r.period_start)])
    }
}

fn rows_where(table: &RateTable, pred: impl Fn(&RateRow) -> bool) -> Vec<usize> {
    table.rows.iter().enumerate().filter(|(_, r)| pred(r)).map(|(i, _)| i + 1).collect()
}

fn list(rows: &[usize]) -> String {
    let shown: Vec<String> = rows.iter().take(10).map(|r| r.to_string()).collect();
    if rows.len() > 10 {
        format!("{} (+{} more)", shown.join(", "), rows.len() - 10)
    } else {
        shown.join(", ")
    }
}

/// Distinct starts, checked to be contiguous with step `width`.
fn progression(values: impl Iterator<Item = f64>, width: f64, what: &str) -> Result<Vec<f64>> {
    let keys: BTreeSet<i64> = values.map(key).collect();
    let starts: Vec<f64> = keys.into_iter().map(|k| k as f64 / 1e6).collect();
    for pair in starts.windows(2) {
        if ((pair[1] - pair[0]) - width).abs() > 1e-6 {
            return Err(ApcError::Geometry(format!(
                "{what} groups starting at {} and {} are not contiguous with width {width}",
                pair[0], pair[1]
            )));
        }
    }
    Ok(starts)
}

/// Single-year mortality table generated from known smooth log-odds
/// components, standing in for national data that cannot be bundled.
/// Counts carry fractional parts, as published life-table inputs often do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMortality {
    pub first_age: usize,
    pub n_ages: usize,
    pub first_year: usize,
    pub n_years: usize,
    pub seed: u64,
}

impl Default for SyntheticMortality {
    fn default() -> Self {
        Self { first_age: 0, n_ages: 100, first_year: 1926, n_years: 90, seed: 1926 }
    }
}

impl SyntheticMortality {
    pub fn age_log_odds(age: f64) -> f64 {
        -8.6 + 0.075 * age + 4.6 * (-age / 1.5).exp()
    }

    pub fn period_log_odds(year: f64) -> f64 {
        -0.012 * (year - 1970.0) + 0.3 * (-((year - 1942.0) / 3.0).powi(2)).exp() + 0.08 * ((year - 1926.0) / 9.0).sin()
    }

    pub fn cohort_log_odds(birth_year: f64) -> f64 {
        -0.35 * ((birth_year - 1930.0) / 20.0).tanh()
    }

    /// Death probability in the single-year cell starting at (age, year).
    pub fn probability(age: f64, year: f64) -> f64 {
        let (a, p) = (age + 0.5, year + 0.5);
        expit(Self::age_log_odds(a) + Self::period_log_odds(p) + Self::cohort_log_odds(p - a))
    }

    fn population(age: f64, year: f64) -> f64 {
        let base = 800_000.0 * (-0.0002 * age.powf(1.9)).exp() + 15_000.0;
        base * (1.0 + 0.004 * (year - 1926.0))
    }

    pub fn generate(&self) -> Result<RateTable> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut rows = Vec::with_capacity(self.n_ages * self.n_years);
        for a in 0..self.n_ages {
            for y in 0..self.n_years {
                let age = (self.first_age + a) as f64;
                let year = (self.first_year + y) as f64;
                let population = Self::population(age, year) + rng.random::<f64>();
                let q = Self::probability(age, year);
                let draw = Binomial::new(population.floor() as u64, q)
                    .map_err(|e| ApcError::Numerical(e.to_string()))?
                    .sample(&mut rng) as f64;
                let deaths = (draw + rng.random::<f64>() - 0.5).clamp(0.0, population);
                rows.push(RateRow { age_start: age, age_width: 1.0, period_start: year, period_width: 1.0, population, deaths });
            }
        }
        RateTable::new(rows)
    }
}
