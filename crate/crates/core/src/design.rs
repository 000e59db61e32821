//! Assembly of the estimable APC model matrix
//! `[1 : slope₁ : slope₂ : A_C : P_C : C_C]`.
//!
//! Each temporal dimension contributes a curvature block (factor dummies or
//! a cubic regression spline) made orthogonal to `[1 : own covariate]` over
//! the observed rows. Two of the three temporal slopes are kept; which one
//! is dropped changes only the slope columns.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{default_knot_count, default_knots, unique_sorted, CrsBasis, CyclicCrsBasis, KnotSet};
use crate::error::{ApcError, Result};
use crate::grid::{CellIndex, TemporalGrid};
use crate::linalg::Qr;
use crate::reparam::{linear_constraint, null_space};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Age,
    Period,
    Cohort,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Age, Dimension::Period, Dimension::Cohort];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Age => "age",
            Dimension::Period => "period",
            Dimension::Cohort => "cohort",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Dimension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Dimension {
    type Err = ApcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "age" => Ok(Dimension::Age),
            "period" => Ok(Dimension::Period),
            "cohort" => Ok(Dimension::Cohort),
            other => Err(ApcError::Config(format!("unknown dimension '{other}'"))),
        }
    }
}

/// Which temporal slope is left out of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[derive(Default)]
pub enum SlopeDrop {
    Age,
    Period,
    #[default]
    Cohort,
}


impl SlopeDrop {
    pub fn dimension(self) -> Dimension {
        match self {
            SlopeDrop::Age => Dimension::Age,
            SlopeDrop::Period => Dimension::Period,
            SlopeDrop::Cohort => Dimension::Cohort,
        }
    }

    pub fn retained(self) -> [Dimension; 2] {
        match self {
            SlopeDrop::Age => [Dimension::Period, Dimension::Cohort],
            SlopeDrop::Period => [Dimension::Age, Dimension::Cohort],
            SlopeDrop::Cohort => [Dimension::Age, Dimension::Period],
        }
    }
}

impl std::str::FromStr for SlopeDrop {
    type Err = ApcError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.parse::<Dimension>()? {
            Dimension::Age => SlopeDrop::Age,
            Dimension::Period => SlopeDrop::Period,
            Dimension::Cohort => SlopeDrop::Cohort,
        })
    }
}

/// FA: factor curvatures; RSS: unpenalized splines; PSS: penalized splines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "FA", alias = "fa")]
    Fa,
    #[serde(rename = "RSS", alias = "rss")]
    Rss,
    #[serde(rename = "PSS", alias = "pss")]
    Pss,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Fa => "FA",
            ModelKind::Rss => "RSS",
            ModelKind::Pss => "PSS",
        }
    }

    pub fn is_spline(self) -> bool {
        !matches!(self, ModelKind::Fa)
    }

    pub fn is_penalized(self) -> bool {
        matches!(self, ModelKind::Pss)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ApcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fa" => Ok(ModelKind::Fa),
            "rss" => Ok(ModelKind::Rss),
            "pss" => Ok(ModelKind::Pss),
            other => Err(ApcError::Config(format!("unknown model kind '{other}' (expected fa, rss or pss)"))),
        }
    }
}

/// Knot counts per dimension; `None` falls back to a quarter of the
/// distinct covariate values (at least 3).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnotCounts {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<usize>,
}

impl KnotCounts {
    pub fn new(age: usize, period: usize, cohort: usize) -> Self {
        Self { age: Some(age), period: Some(period), cohort: Some(cohort) }
    }

    pub fn get(&self, d: Dimension) -> Option<usize> {
        match d {
            Dimension::Age => self.age,
            Dimension::Period => self.period,
            Dimension::Cohort => self.cohort,
        }
    }
}

/// Model specification for [`build_design`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub drop: SlopeDrop,
    #[serde(default)]
    pub knots: KnotCounts,
    #[serde(default)]
    pub augment_periodic: bool,
}

impl DesignSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self { kind, drop: SlopeDrop::Cohort, knots: KnotCounts::default(), augment_periodic: false }
    }

    pub fn with_drop(mut self, drop: SlopeDrop) -> Self {
        self.drop = drop;
        self
    }

    pub fn with_knots(mut self, knots: KnotCounts) -> Self {
        self.knots = knots;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TermBasis {
    Factor,
    Spline {
        knots: KnotSet,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cyclic: Option<KnotSet>,
    },
}

/// One orthogonalized curvature block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureTerm {
    pub dimension: Dimension,
    pub basis: TermBasis,
    /// Midpoints of the dimension's levels (1-based level `l` is entry `l − 1`).
    pub level_values: Vec<f64>,
    /// The block evaluated at every level (levels × columns).
    pub levels: DMatrix<f64>,
    /// Roughness penalty in the block's coefficients, rescaled to the design.
    pub penalty: DMatrix<f64>,
    /// Multiplier applied to the exact roughness penalty.
    pub penalty_scale: f64,
    pub columns: Range<usize>,
}

impl CurvatureTerm {
    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    /// Fitted curvature function at each level.
    pub fn evaluate(&self, beta: &DVector<f64>) -> Vec<f64> {
        let b = beta.rows(self.columns.start, self.ncols());
        (&self.levels * b).iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeTerm {
    pub dimension: Dimension,
    pub centre: f64,
    pub half_range: f64,
    pub column: usize,
}

impl SlopeTerm {
    pub fn value(&self, x: f64) -> f64 {
        (x - self.centre) / self.half_range
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApcDesign {
    pub x: DMatrix<f64>,
    pub rows: Vec<CellIndex>,
    pub grid: TemporalGrid,
    pub spec: DesignSpec,
    pub slopes: Vec<SlopeTerm>,
    pub terms: Vec<CurvatureTerm>,
}

/// Penalty attached to a column range of the design.
#[derive(Debug, Clone)]
pub struct BlockPenalty<'a> {
    pub dimension: Dimension,
    pub columns: Range<usize>,
    pub matrix: &'a DMatrix<f64>,
}

impl ApcDesign {
    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn drop(&self) -> SlopeDrop {
        self.spec.drop
    }

    pub fn term(&self, d: Dimension) -> &CurvatureTerm {
        &self.terms[d.index()]
    }

    /// Active penalties: one per temporal dimension for PSS, none otherwise.
    pub fn penalties(&self) -> Vec<BlockPenalty<'_>> {
        if !self.spec.kind.is_penalized() {
            return Vec::new();
        }
        self.terms
            .iter()
            .filter(|t| t.ncols() > 0)
            .map(|t| BlockPenalty { dimension: t.dimension, columns: t.columns.clone(), matrix: &t.penalty })
            .collect()
    }

    pub fn n_penalties(&self) -> usize {
        self.penalties().len()
    }

    /// Columns outside every active penalty.
    pub fn n_unpenalized(&self) -> usize {
        self.ncols() - self.penalties().iter().map(|p| p.columns.len()).sum::<usize>()
    }

    pub fn linear_predictor(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.x * beta
    }

    pub fn level_of(&self, cell: &CellIndex, d: Dimension) -> usize {
        match d {
            Dimension::Age => cell.a,
            Dimension::Period => cell.p,
            Dimension::Cohort => cell.c,
        }
    }

    /// Columns for intercept and retained slopes.
    pub fn parametric_columns(&self) -> Range<usize> {
        0..3
    }

    /// Adds periodic (cyclic cubic spline) columns of the given period to the
    /// period and cohort blocks and rebuilds the design.
    pub fn augment_with_periodic(&self, period: f64) -> Result<ApcDesign> {
        if !self.spec.kind.is_spline() {
            return Err(ApcError::Config("periodic augmentation needs a spline model".into()));
        }
        let expected = self.grid.ratio as f64 * self.grid.period_width;
        if (period - expected).abs() > 1e-9 * expected {
            return Err(ApcError::Config(format!(
                "periodic augmentation period {period} differs from M × period width = {expected}"
            )));
        }
        let mut spec = self.spec;
        spec.augment_periodic = true;
        build_design_for_cells(&self.grid, &self.rows, spec)
    }
}

/// Design over every cell of the grid (age-major order).
pub fn build_design(grid: &TemporalGrid, spec: DesignSpec) -> Result<ApcDesign> {
    build_design_for_cells(grid, &grid.cells(), spec)
}

/// Design over an explicit list of observed cells; cells may repeat.
pub fn build_design_for_cells(grid: &TemporalGrid, rows: &[CellIndex], spec: DesignSpec) -> Result<ApcDesign> {
    if rows.is_empty() {
        return Err(ApcError::Config("no observed cells".into()));
    }
    for cell in rows {
        let c = grid.cohort_of(cell.a, cell.p)?;
        if c != cell.c {
            return Err(ApcError::Domain(format!("cell ({}, {}) has cohort {} but expected {c}", cell.a, cell.p, cell.c)));
        }
    }
    if spec.augment_periodic && grid.ratio < 2 {
        return Err(ApcError::Config("periodic augmentation needs unequal intervals (M ≥ 2)".into()));
    }
    if spec.augment_periodic && !spec.kind.is_spline() {
        return Err(ApcError::Config("periodic augmentation needs a spline model".into()));
    }
    let n = rows.len();
    let level_values = |d: Dimension| -> &Vec<f64> {
        match d {
            Dimension::Age => &grid.age_midpoints,
            Dimension::Period => &grid.period_midpoints,
            Dimension::Cohort => &grid.cohort_midpoints,
        }
    };
    let level_of = |cell: &CellIndex, d: Dimension| match d {
        Dimension::Age => cell.a,
        Dimension::Period => cell.p,
        Dimension::Cohort => cell.c,
    };

    let mut built = Vec::with_capacity(3);
    for d in Dimension::ALL {
        let values = level_values(d);
        let row_levels: Vec<usize> = rows.iter().map(|c| level_of(c, d) - 1).collect();
        let row_x: Vec<f64> = row_levels.iter().map(|&l| values[l]).collect();
        if unique_sorted(&row_x).len() < 3 {
            return Err(ApcError::Config(format!("{d} has fewer than 3 distinct observed values")));
        }
        let period = grid.ratio as f64 * grid.period_width;
        let augment = spec.augment_periodic && d != Dimension::Age;
        built.push(curvature_block(d, spec, values, &row_levels, &row_x, augment.then_some(period), grid.period_width)?);
    }

    let q_total: usize = built.iter().map(|b| b.levels.ncols()).sum();
    let p = 3 + q_total;
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }
    let mut slopes = Vec::with_capacity(2);
    for (k, d) in spec.drop.retained().into_iter().enumerate() {
        let values = level_values(d);
        let observed: Vec<f64> = rows.iter().map(|c| values[level_of(c, d) - 1]).collect();
        let (lo, hi) = observed.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let slope = SlopeTerm { dimension: d, centre: 0.5 * (lo + hi), half_range: 0.5 * (hi - lo), column: 1 + k };
        for (i, v) in observed.iter().enumerate() {
            x[(i, 1 + k)] = slope.value(*v);
        }
        slopes.push(slope);
    }
    let mut terms = Vec::with_capacity(3);
    let mut start = 3;
    for (d, b) in Dimension::ALL.into_iter().zip(built) {
        let q = b.levels.ncols();
        for (i, cell) in rows.iter().enumerate() {
            let l = level_of(cell, d) - 1;
            for j in 0..q {
                x[(i, start + j)] = b.levels[(l, j)];
            }
        }
        terms.push(CurvatureTerm {
            dimension: d,
            basis: b.basis,
            level_values: level_values(d).clone(),
            levels: b.levels,
            penalty: b.penalty,
            penalty_scale: b.penalty_scale,
            columns: start..start + q,
        });
        start += q;
    }
    Ok(ApcDesign { x, rows: rows.to_vec(), grid: grid.clone(), spec, slopes, terms })
}

struct BuiltBlock {
    basis: TermBasis,
    levels: DMatrix<f64>,
    penalty: DMatrix<f64>,
    penalty_scale: f64,
}

fn curvature_block(
    d: Dimension,
    spec: DesignSpec,
    level_values: &[f64],
    row_levels: &[usize],
    row_x: &[f64],
    periodic: Option<f64>,
    step: f64,
) -> Result<BuiltBlock> {
    let n_levels = level_values.len();
    let (raw_levels, raw_penalty, basis) = match spec.kind {
        ModelKind::Fa => (DMatrix::identity(n_levels, n_levels), DMatrix::zeros(n_levels, n_levels), TermBasis::Factor),
        ModelKind::Rss | ModelKind::Pss => {
            let n_unique = unique_sorted(row_x).len();
            let count = spec.knots.get(d).unwrap_or_else(|| default_knot_count(n_unique));
            let knots = default_knots(row_x, count)?;
            let crs = CrsBasis::new(&knots)?;
            let mut levels = crs.design(level_values);
            let mut penalty = crs.penalty().clone();
            let mut cyclic_knots = None;
            if let Some(period) = periodic {
                let segments = (period / step).round().max(3.0) as usize;
                let start = row_x.iter().cloned().fold(f64::INFINITY, f64::min);
                let ck = KnotSet::cyclic_uniform(start, period, segments)?;
                let cyc = CyclicCrsBasis::new(&ck, period)?;
                levels = hcat(&levels, &cyc.design(level_values));
                penalty = block_diag(&penalty, cyc.penalty());
                cyclic_knots = Some(ck);
            }
            (levels, penalty, TermBasis::Spline { knots, cyclic: cyclic_knots })
        }
    };
    let raw_rows = gather_rows(&raw_levels, row_levels);
    let constraint = linear_constraint(&raw_rows, row_x)?;
    let t = null_space(&constraint)?;
    let mut z = t.z;
    // drop directions that vanish on the observed rows (e.g. constants
    // shared by the standard and cyclic parts of an augmented block)
    let reduced = &raw_rows * &z;
    let qr = Qr::new(reduced, 1e-7);
    if !qr.dropped().is_empty() {
        let kept: Vec<usize> = qr.kept().to_vec();
        z = z.select_columns(kept.iter());
    }
    let levels = &raw_levels * &z;
    let mut penalty = z.transpose() * &raw_penalty * &z;
    penalty = (&penalty + penalty.transpose()) * 0.5;
    let rows_design = gather_rows(&levels, row_levels);
    let penalty_scale = if penalty.amax() > 0.0 {
        // scale so the penalty is commensurate with XᵀX of the block
        let row_norm = (0..rows_design.nrows())
            .map(|i| rows_design.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let col_norm = (0..penalty.ncols())
            .map(|j| penalty.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        row_norm * row_norm / col_norm
    } else {
        1.0
    };
    penalty *= penalty_scale;
    Ok(BuiltBlock { basis, levels, penalty, penalty_scale })
}

/// Factor curvature block: one-hot level indicators made orthogonal to
/// `[1 : covariate]` over the rows. Carries a zero penalty.
pub fn factor_curvature_block(
    row_levels: &[usize],
    n_levels: usize,
    covariate: &[f64],
) -> Result<crate::basis::BasisBlock> {
    if n_levels < 3 {
        return Err(ApcError::Config(format!("factor needs at least 3 levels, got {n_levels}")));
    }
    if row_levels.len() != covariate.len() {
        return Err(ApcError::Dimension("levels and covariate lengths differ".into()));
    }
    let mut design = DMatrix::zeros(row_levels.len(), n_levels);
    for (i, &l) in row_levels.iter().enumerate() {
        if l >= n_levels {
            return Err(ApcError::Domain(format!("level {l} outside 0..{n_levels}")));
        }
        design[(i, l)] = 1.0;
    }
    let block = crate::basis::BasisBlock {
        design,
        penalty: DMatrix::zeros(n_levels, n_levels),
        knots: None,
        transform: None,
    };
    crate::reparam::orthogonalize_to_linear(&block, covariate)
}

fn gather_rows(levels: &DMatrix<f64>, row_levels: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(row_levels.len(), levels.ncols(), |i, j| levels[(row_levels[i], j)])
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{numerical_rank, projection_residual};
    use crate::reparam::standardize;

    fn sim_grid() -> TemporalGrid {
        TemporalGrid::new(60, 20, 1, 0.0, 1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn pss_block_sizes_follow_quarter_rule() {
        let d = build_design(&sim_grid(), DesignSpec::new(ModelKind::Pss)).unwrap();
        assert_eq!(d.term(Dimension::Age).ncols(), 13);
        assert_eq!(d.term(Dimension::Period).ncols(), 3);
        assert_eq!(d.term(Dimension::Cohort).ncols(), 18);
        assert_eq!(d.ncols(), 3 + 13 + 3 + 18);
        assert_eq!(d.n_penalties(), 3);
        assert_eq!(d.n_unpenalized(), 3);
    }

    #[test]
    fn factor_design_rank() {
        let g = TemporalGrid::with_ratio(8, 8, 1).unwrap();
        let d = build_design(&g, DesignSpec::new(ModelKind::Fa)).unwrap();
        assert_eq!(d.ncols(), 28);
        assert_eq!(numerical_rank(&d.x, 1e-9), 28);
        assert!(d.penalties().is_empty());
    }

    #[test]
    fn full_rank_for_equal_and_standard_unequal() {
        for (grid, kinds) in [
            (TemporalGrid::with_ratio(10, 8, 1).unwrap(), vec![ModelKind::Fa, ModelKind::Rss, ModelKind::Pss]),
            (TemporalGrid::with_ratio(12, 20, 5).unwrap(), vec![ModelKind::Rss, ModelKind::Pss]),
        ] {
            for kind in kinds {
                let d = build_design(&grid, DesignSpec::new(kind)).unwrap();
                assert_eq!(numerical_rank(&d.x, 1e-9), d.ncols(), "{kind} M={}", grid.ratio);
            }
        }
    }

    #[test]
    fn unequal_factor_design_loses_periodic_directions() {
        let g = TemporalGrid::with_ratio(8, 10, 5).unwrap();
        let d = build_design(&g, DesignSpec::new(ModelKind::Fa)).unwrap();
        // M − 1 periodic functions shift freely between period and cohort
        assert_eq!(numerical_rank(&d.x, 1e-9), d.ncols() - 4);
    }

    #[test]
    fn blocks_orthogonal_to_own_line() {
        let g = TemporalGrid::with_ratio(12, 20, 5).unwrap();
        for spec in [
            DesignSpec::new(ModelKind::Fa),
            DesignSpec::new(ModelKind::Pss),
            DesignSpec { augment_periodic: true, ..DesignSpec::new(ModelKind::Rss) },
        ] {
            let d = build_design(&g, spec).unwrap();
            for t in &d.terms {
                let xs: Vec<f64> = d.rows.iter().map(|c| t.level_values[d.level_of(c, t.dimension) - 1]).collect();
                let block = d.x.columns(t.columns.start, t.ncols());
                let ones = DVector::from_element(xs.len(), 1.0);
                let xv = DVector::from_vec(standardize(&xs));
                assert!((ones.transpose() * block).amax() < 1e-10 * xs.len() as f64);
                assert!((xv.transpose() * block).amax() < 1e-10 * xs.len() as f64);
            }
        }
    }

    #[test]
    fn curvature_blocks_do_not_depend_on_drop() {
        let g = TemporalGrid::with_ratio(12, 20, 5).unwrap();
        let base = build_design(&g, DesignSpec::new(ModelKind::Pss)).unwrap();
        for drop in [SlopeDrop::Age, SlopeDrop::Period] {
            let other = build_design(&g, DesignSpec::new(ModelKind::Pss).with_drop(drop)).unwrap();
            let a = base.x.columns(3, base.ncols() - 3);
            let b = other.x.columns(3, other.ncols() - 3);
            assert_eq!((a - b).amax(), 0.0);
            assert!((base.x.column(2) - other.x.column(2)).amax() > 0.1);
        }
    }

    #[test]
    fn structural_link_lives_in_parametric_columns() {
        let g = TemporalGrid::with_ratio(12, 20, 5).unwrap();
        let d = build_design(&g, DesignSpec::new(ModelKind::Pss)).unwrap();
        let cells = g.cells();
        // M·a − p + c ≡ const on the index scale, so each linear trend is in span(X)
        for target in [0usize, 1, 2] {
            let y = DVector::from_fn(cells.len(), |i, _| {
                let c = &cells[i];
                match target {
                    0 => (g.ratio * c.a) as f64,
                    1 => -(c.p as f64),
                    _ => c.c as f64,
                }
            });
            assert!(projection_residual(&d.x, &y).amax() < 1e-8);
        }
    }

    #[test]
    fn periodic_augmentation() {
        let g = TemporalGrid::with_ratio(12, 20, 5).unwrap();
        let plain = build_design(&g, DesignSpec::new(ModelKind::Rss)).unwrap();
        let aug = plain.augment_with_periodic(5.0).unwrap();
        assert!(aug.term(Dimension::Period).ncols() > plain.term(Dimension::Period).ncols());
        assert!(aug.term(Dimension::Cohort).ncols() > plain.term(Dimension::Cohort).ncols());
        assert_eq!(aug.term(Dimension::Age).ncols(), plain.term(Dimension::Age).ncols());
        // each block on its own is full rank after repair
        for t in &aug.terms {
            let block = aug.x.columns(t.columns.start, t.ncols()).into_owned();
            assert_eq!(numerical_rank(&block, 1e-9), t.ncols());
        }
        let fa = build_design(&g, DesignSpec::new(ModelKind::Fa)).unwrap();
        assert!(fa.augment_with_periodic(5.0).is_err());
        assert!(plain.augment_with_periodic(4.0).is_err());
    }

    #[test]
    fn cyclic_part_is_periodic_before_orthogonalization() {
        let ck = KnotSet::cyclic_uniform(0.5, 5.0, 5).unwrap();
        let cyc = CyclicCrsBasis::new(&ck, 5.0).unwrap();
        let p: Vec<f64> = (0..20).map(|i| i as f64 + 0.5).collect();
        let m = cyc.design(&p);
        for i in 0..15 {
            assert!((m.row(i) - m.row(i + 5)).amax() < 1e-12);
        }
    }

    #[test]
    fn factor_block_examples() {
        let levels = vec![0, 1, 2, 0, 1, 2];
        let cov = vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let b = factor_curvature_block(&levels, 3, &cov).unwrap();
        assert_eq!(b.ncols(), 1);
        assert!(b.design.column(0).sum().abs() < 1e-12);
        let xv = DVector::from_column_slice(&cov);
        assert!(xv.dot(&b.design.column(0)).abs() < 1e-12);
        assert!(factor_curvature_block(&[0, 1], 2, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn too_few_distinct_values() {
        let g = TemporalGrid::with_ratio(2, 5, 1).unwrap();
        assert!(matches!(build_design(&g, DesignSpec::new(ModelKind::Pss)), Err(ApcError::Config(_))));
    }

    #[test]
    fn spec_json_round_trip() {
        let json = r#"{"kind":"PSS","drop":"period","knots":{"age":10,"period":10,"cohort":20},"augment_periodic":false}"#;
        let spec: DesignSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.kind, ModelKind::Pss);
        assert_eq!(spec.drop, SlopeDrop::Period);
        assert_eq!(spec.knots, KnotCounts::new(10, 10, 20));
        let spec: DesignSpec = serde_json::from_str(r#"{"kind":"fa"}"#).unwrap();
        assert_eq!(spec.drop, SlopeDrop::Cohort);
    }
}
