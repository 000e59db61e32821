//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Built with `harness = false` so the lines always reach stdout.
//!
//! The simulation criteria run the full 100-replicate studies; expect a few
//! minutes on one core.

use std::sync::Arc;
use std::time::Instant;

use apc_core::basis::{CrsBasis, KnotKind, KnotSet};
use apc_core::data_io::SyntheticMortality;
use apc_core::design::{build_design, DesignSpec, Dimension, KnotCounts, ModelKind, SlopeDrop};
use apc_core::effects::{
    curvature_curves, curve_at, design_effects, detrend_values, mean_squared_distance, penalty_inequality_check,
};
use apc_core::family::{Family, FamilyKind};
use apc_core::grid::TemporalGrid;
use apc_core::pirls::{FitControl, PenalizedProblem, PenaltyBlock};
use apc_core::reparam::standardize;
use apc_core::sim::{aggregate_replicate, generate_replicate, run_study, Profile, SimConfig, StudyReport};
use apc_core::smoothing::{fit_apc_with_lambdas, fit_dataset, GcvControl};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 2024;
const REPLICATES: usize = 100;

struct Tally {
    failed: Vec<String>,
    total: usize,
}

impl Tally {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        self.total += 1;
        println!("[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id.to_string());
        }
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Linear-interpolation quantile (the usual "type 7" definition).
fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    d / max_abs(a).max(1e-300)
}

fn study(profile: Profile) -> StudyReport {
    let cfg = SimConfig::profile(profile, FamilyKind::Binomial, SEED).with_replicates(REPLICATES);
    let t = Instant::now();
    let report = run_study(&cfg, None).expect("study runs");
    println!("       ({profile}: {REPLICATES} replicates in {:.1} s)", t.elapsed().as_secs_f64());
    for m in &report.models {
        if m.failed > 0 {
            println!("       ({profile}: {} {} replicates excluded as non-converged)", m.failed, m.kind);
        }
    }
    report
}

// ---- criterion 7 -----------------------------------------------------------

/// Cohort indices as printed, oldest age first.
const TABLE_1: [[usize; 8]; 8] = [
    [1, 2, 3, 4, 5, 6, 7, 8],
    [2, 3, 4, 5, 6, 7, 8, 9],
    [3, 4, 5, 6, 7, 8, 9, 10],
    [4, 5, 6, 7, 8, 9, 10, 11],
    [5, 6, 7, 8, 9, 10, 11, 12],
    [6, 7, 8, 9, 10, 11, 12, 13],
    [7, 8, 9, 10, 11, 12, 13, 12],
    [8, 9, 10, 11, 12, 13, 14, 15],
];

const TABLE_2: [[usize; 10]; 8] = [
    [1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
    [6, 7, 8, 9, 10, 11, 12, 13, 14, 15],
    [11, 12, 13, 14, 15, 16, 17, 18, 19, 20],
    [16, 17, 18, 19, 20, 21, 22, 23, 24, 25],
    [21, 22, 23, 24, 25, 26, 27, 28, 29, 30],
    [26, 27, 28, 29, 30, 31, 32, 33, 34, 35],
    [31, 32, 33, 34, 35, 36, 37, 38, 39, 40],
    [36, 37, 38, 39, 40, 41, 42, 43, 44, 45],
];

fn grid_fidelity(t: &mut Tally) {
    let g1 = TemporalGrid::with_ratio(8, 8, 1).unwrap().cohort_table();
    let mut mismatches = Vec::new();
    for (r, row) in TABLE_1.iter().enumerate() {
        for (c, &printed) in row.iter().enumerate() {
            let a = 8 - r;
            let p = c + 1;
            let formula = (8 - a) + p;
            assert_eq!(g1[r][c], formula);
            if printed != formula {
                mismatches.push((a, p, printed, formula));
            }
        }
    }
    t.check(
        "7a table 1 (M=1)",
        mismatches == vec![(2, 8, 12, 14)],
        format!("64 cells regenerated; mismatches with the printed table {mismatches:?} (known typo at age 2, period 8)"),
    );
    let g2 = TemporalGrid::with_ratio(8, 10, 5).unwrap().cohort_table();
    let mut bad = 0;
    for (r, row) in TABLE_2.iter().enumerate() {
        for (c, &printed) in row.iter().enumerate() {
            let formula = 5 * (8 - (8 - r)) + c + 1;
            bad += usize::from(g2[r][c] != formula || printed != formula);
        }
    }
    t.check("7b table 2 (M=5)", bad == 0, format!("80 cells regenerated, {bad} mismatches"));
}

// ---- criterion 4 -----------------------------------------------------------

fn penalty_inequality(t: &mut Tally) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let ratio = 5.0;
    let (mut worst_cross, mut worst_gap) = (0.0f64, f64::INFINITY);
    let start = Instant::now();
    for _ in 0..50 {
        let n_knots = rng.random_range(3..=12);
        let origin: f64 = rng.random_range(-20.0..20.0);
        let knots = KnotSet::new((0..n_knots).map(|i| origin + ratio * i as f64).collect(), KnotKind::Standard).unwrap();
        let values: Vec<f64> = (0..n_knots).map(|_| rng.random_range(-3.0..3.0)).collect();
        let alpha: f64 = rng.random_range(-2.0..2.0);
        let beta: f64 = rng.random_range(-2.0..2.0);
        let w = 2.0 * std::f64::consts::PI / ratio;
        let r = penalty_inequality_check(&knots, &values, ratio, |x| -w * w * (alpha * (w * x).sin() + beta * (w * x).cos()))
            .unwrap();
        worst_cross = worst_cross.max(r.cross.abs() / r.lhs);
        worst_gap = worst_gap.min(r.lhs - r.rhs);
    }
    t.check(
        "4 penalty inequality",
        worst_cross < 1e-6 && worst_gap >= -1e-10,
        format!(
            "50 random splines: max |cross|/lhs = {worst_cross:.2e} (< 1e-6), min lhs − rhs = {worst_gap:.3e} (≥ −1e-10), {:.2} s",
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---- criterion 6 -----------------------------------------------------------

fn engine_oracles(t: &mut Tally) {
    // λ = 0 Gaussian fit against the normal equations
    let n = 80;
    let x = DMatrix::from_fn(n, 7, |i, j| if j == 0 { 1.0 } else { ((i + 1) as f64 * (0.37 * j as f64 + 0.11)).sin() });
    let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.2).cos() + 0.01 * i as f64).collect();
    let block = PenaltyBlock { columns: 3..7, matrix: DMatrix::identity(4, 4) };
    let prob = PenalizedProblem::new(x.clone(), vec![block], 1e-7).unwrap();
    let fit = prob.fit(&y, &Family::gaussian(), &[0.0], &FitControl::default()).unwrap();
    let ols = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * DVector::from_column_slice(&y)));
    let err = (&fit.beta - &ols).amax();
    t.check("6a Gaussian λ=0 vs least squares", err < 1e-10, format!("max coefficient difference {err:.2e} (< 1e-10)"));

    // analytic gradient vs central differences on a 30-column design
    let g = TemporalGrid::with_ratio(12, 10, 1).unwrap();
    let design = Arc::new(build_design(&g, DesignSpec::new(ModelKind::Pss).with_knots(KnotCounts::new(10, 9, 14))).unwrap());
    let q = design.ncols();
    let y: Vec<f64> = design.rows.iter().map(|c| ((c.a * 7 + c.p * 3) % 11) as f64).collect();
    let fam = Family::binomial(vec![12.0; y.len()]);
    let lambdas = [0.5, 2.0, 0.05];
    let prob = PenalizedProblem::from_design(&design, 1e-7).unwrap();
    let res = prob.fit(&y, &fam, &lambdas, &FitControl { tol: 1e-12, ..FitControl::default() }).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for point in [res.beta.clone(), res.beta.map(|b| b * 0.9 + 0.05)] {
        let grad = prob.gradient(&point, &y, &fam, &lambdas);
        // at the optimum the total gradient vanishes, so compare against the
        // size of its (balancing) deviance and penalty parts
        let zero = prob.gradient(&point, &y, &fam, &[0.0; 3]);
        let scale = grad.amax().max(zero.amax());
        for j in 0..q {
            let mut bp = point.clone();
            bp[j] += h;
            let mut bm = point.clone();
            bm[j] -= h;
            let fd = (prob.penalized_deviance(&bp, &y, &fam, &lambdas) - prob.penalized_deviance(&bm, &y, &fam, &lambdas))
                / (2.0 * h);
            worst = worst.max((fd - grad[j]).abs() / scale);
        }
    }
    t.check(
        "6b gradient vs central differences",
        q == 30 && worst < 1e-5,
        format!("{q} columns, at the optimum and off it: max relative difference {worst:.2e} (< 1e-5)"),
    );

    // CRS penalty against a quadrature oracle built from function values only
    let mut worst = 0.0f64;
    for knots in [vec![0.0, 1.0, 2.0], vec![0.5, 3.0, 4.0, 9.5, 12.0, 20.0], (0..15).map(|i| i as f64 * 4.0 + 0.5).collect()] {
        let ks = KnotSet::new(knots.clone(), KnotKind::Standard).unwrap();
        let basis = CrsBasis::new(&ks).unwrap();
        let k = knots.len();
        let oracle = DMatrix::from_fn(k, k, |i, j| {
            let d2 = |x: f64, m: usize| {
                let e = (knots[knots.len() - 1] - knots[0]) * 1e-3;
                (basis.row(x + e)[m] - 2.0 * basis.row(x)[m] + basis.row(x - e)[m]) / (e * e)
            };
            // the product of two piecewise-linear second derivatives is
            // quadratic per interval: three Gauss points are exact
            let nodes = [-(0.6f64.sqrt()), 0.0, 0.6f64.sqrt()];
            let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
            knots
                .windows(2)
                .map(|w| {
                    let half = 0.5 * (w[1] - w[0]);
                    let mid = 0.5 * (w[1] + w[0]);
                    nodes.iter().zip(&weights).map(|(t, wt)| half * wt * d2(mid + half * t, i) * d2(mid + half * t, j)).sum::<f64>()
                })
                .sum()
        });
        worst = worst.max((basis.penalty() - &oracle).amax() / basis.penalty().amax());
    }
    t.check("6c CRS penalty vs quadrature", worst < 1e-8, format!("max relative difference {worst:.2e} (< 1e-8)"));
}

// ---- criterion 5 -----------------------------------------------------------

fn identifiability(t: &mut Tally) {
    let mut worst_gauss = 0.0f64;
    let mut worst_binom = 0.0f64;
    for (profile, kind) in [(Profile::Equal, ModelKind::Pss), (Profile::Unequal, ModelKind::Pss), (Profile::Equal, ModelKind::Fa)] {
        for family in [FamilyKind::Gaussian, FamilyKind::Binomial] {
            let cfg = SimConfig::profile(profile, family, SEED);
            let data = aggregate_replicate(&generate_replicate(&cfg, 1).unwrap(), cfg.ratio).unwrap();
            let lambdas: Option<Vec<f64>> = (family == FamilyKind::Binomial && kind.is_penalized()).then(|| vec![1.0, 10.0, 1.0]);
            let curves: Vec<Vec<Vec<f64>>> = [SlopeDrop::Cohort, SlopeDrop::Period]
                .into_iter()
                .map(|drop| {
                    let spec = DesignSpec::new(kind).with_drop(drop);
                    let design = Arc::new(apc_core::design::build_design_for_cells(&data.grid, &data.cells, spec).unwrap());
                    let m = fit_apc_with_lambdas(&design, &data.response, &data.family(), lambdas.as_deref(), &GcvControl::default())
                        .unwrap();
                    design_effects(&design, &m.beta).unwrap().into_iter().map(|e| e.curvature).collect()
                })
                .collect();
            for d in 0..3 {
                let r = rel_diff(&curves[0][d], &curves[1][d]);
                match family {
                    FamilyKind::Gaussian => worst_gauss = worst_gauss.max(r),
                    _ => worst_binom = worst_binom.max(r),
                }
            }
        }
    }
    t.check(
        "5a slope-drop invariance",
        worst_gauss < 1e-8 && worst_binom < 1e-6,
        format!("max relative curvature difference: Gaussian (GCV) {worst_gauss:.2e} (< 1e-8), binomial (fixed λ) {worst_binom:.2e} (< 1e-6)"),
    );

    let mut worst = 0.0f64;
    for (ratio, kind, augment) in [
        (1, ModelKind::Fa, false),
        (1, ModelKind::Pss, false),
        (5, ModelKind::Fa, false),
        (5, ModelKind::Rss, false),
        (5, ModelKind::Pss, true),
    ] {
        let g = TemporalGrid::new(60 / ratio, 20, ratio, 0.0, ratio as f64, 0.0, 1.0).unwrap();
        let spec = DesignSpec { augment_periodic: augment, ..DesignSpec::new(kind) };
        let design = build_design(&g, spec).unwrap();
        for d in Dimension::ALL {
            let term = design.term(d);
            let xs: Vec<f64> = design
                .rows
                .iter()
                .map(|c| term.level_values[design.level_of(c, d) - 1])
                .collect();
            let z = standardize(&xs);
            let block = design.x.columns(term.columns.start, term.ncols());
            for j in 0..term.ncols() {
                let col = block.column(j);
                let ones: f64 = col.iter().sum();
                let lin: f64 = col.iter().zip(&z).map(|(a, b)| a * b).sum();
                worst = worst.max(ones.abs()).max(lin.abs());
            }
        }
    }
    t.check("5b orthogonalization", worst < 1e-10, format!("max |[1 : x]ᵀ block| = {worst:.2e} over 15 blocks (< 1e-10)"));

    let g = TemporalGrid::with_ratio(60, 20, 1).unwrap();
    let design = Arc::new(build_design(&g, DesignSpec::new(ModelKind::Pss)).unwrap());
    let cfg = SimConfig::profile(Profile::Equal, FamilyKind::Binomial, SEED);
    let data = generate_replicate(&cfg, 1).unwrap();
    let m = fit_apc_with_lambdas(&design, &data.response, &data.family(), Some(&[1e12; 3]), &GcvControl::default()).unwrap();
    let mut worst = 0.0f64;
    for c in curvature_curves(&m) {
        for w in c.value.windows(3) {
            worst = worst.max((w[0] - 2.0 * w[1] + w[2]).abs());
        }
    }
    t.check("5c λ→1e12 gives affine blocks", worst < 1e-6, format!("max second difference {worst:.2e} (< 1e-6)"));
}

// ---- criterion 9 -----------------------------------------------------------

fn determinism(t: &mut Tally) {
    let mut mismatched = Vec::new();
    for profile in Profile::ALL {
        let cfg = SimConfig::profile(profile, FamilyKind::Binomial, SEED).with_replicates(4);
        let mut outputs = Vec::new();
        for workers in [Some(1), Some(3), Some(1)] {
            let dir = tempfile::tempdir().unwrap();
            let report = run_study(&cfg, workers).unwrap();
            let files = report.write_csvs(dir.path()).unwrap();
            let bytes: Vec<(String, Vec<u8>)> =
                files.iter().map(|f| (f.clone(), std::fs::read(dir.path().join(f)).unwrap())).collect();
            outputs.push(bytes);
        }
        if outputs[0] != outputs[1] || outputs[0] != outputs[2] {
            mismatched.push(profile.name());
        }
    }
    t.check(
        "9 determinism",
        mismatched.is_empty(),
        format!("4 profiles × (1, 3, 1 workers), 4 replicates each: byte-identical CSVs; mismatches {mismatched:?}"),
    );
}

// ---- criterion 8 -----------------------------------------------------------

fn application(t: &mut Tally) {
    let start = Instant::now();
    let table = SyntheticMortality::default().generate().unwrap().round_counts();
    let sets = [table.clone(), table.aggregate(5, 1).unwrap(), table.aggregate(5, 5).unwrap()];
    let spec = DesignSpec::new(ModelKind::Pss).with_knots(KnotCounts::new(10, 10, 20));
    let mut period = Vec::new();
    for s in &sets {
        let data = s.to_model_dataset().unwrap();
        let m = fit_dataset(&data, spec, &GcvControl::default()).unwrap();
        assert!(m.converged);
        period.push(curvature_curves(&m).swap_remove(Dimension::Period.index()));
    }
    // 5×5 period midpoints are also single-year midpoints
    let common = period[2].x.clone();
    let on_common: Vec<Vec<f64>> = period
        .iter()
        .map(|c| detrend_values(&common, &curve_at(&c.x, &c.value, &common).unwrap()).unwrap())
        .collect();
    let d51 = mean_squared_distance(&on_common[1], &on_common[0]).unwrap();
    let d55 = mean_squared_distance(&on_common[2], &on_common[0]).unwrap();
    t.check(
        "8 application 5×1 tracks 1×1",
        d51 <= d55,
        format!(
            "period curvature MSD to 1×1 on {} common periods: 5×1 {d51:.3e} ≤ 5×5 {d55:.3e} ({:.1} s)",
            common.len(),
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---- criteria 1–3 ----------------------------------------------------------

fn simulation_studies(t: &mut Tally) {
    let equal = study(Profile::Equal);
    let mut worst = [0.0f64; 3];
    for (k, kind) in [ModelKind::Fa, ModelKind::Rss, ModelKind::Pss].into_iter().enumerate() {
        let m = equal.model(kind).unwrap();
        worst[k] = Dimension::ALL.iter().map(|&d| max_abs(&m.summary(d).bias)).fold(0.0, f64::max);
    }
    t.check(
        "1a equal: curvature bias",
        worst.iter().all(|&b| b <= 0.05),
        format!("max |pointwise bias| FA {:.4}, RSS {:.4}, PSS {:.4} (≤ 0.05)", worst[0], worst[1], worst[2]),
    );
    let fa = equal.model(ModelKind::Fa).unwrap();
    let pss = equal.model(ModelKind::Pss).unwrap();
    let ratios: Vec<f64> =
        Dimension::ALL.iter().map(|&d| median(&pss.summary(d).mse) / median(&fa.summary(d).mse)).collect();
    t.check(
        "1b equal: PSS MSE vs FA",
        ratios.iter().all(|&r| r <= 1.5),
        format!(
            "median pointwise MSE ratio PSS/FA: age {:.3}, period {:.3}, cohort {:.3} (≤ 1.5)",
            ratios[0], ratios[1], ratios[2]
        ),
    );

    // noise floor: 99th percentile of PSS period amplitudes on equal data
    let floor = quantile(&pss.period_amplitudes(), 0.99);
    println!("       (noise floor: 99th percentile of equal-interval PSS period amplitudes = {floor:.5})");

    let unequal = study(Profile::Unequal);
    let amp = |r: &StudyReport, k: ModelKind| median(&r.model(k).unwrap().period_amplitudes());
    let (fa_u, rss_u, pss_u) = (amp(&unequal, ModelKind::Fa), amp(&unequal, ModelKind::Rss), amp(&unequal, ModelKind::Pss));
    t.check(
        "2a unequal: FA vs PSS amplitude",
        fa_u >= 5.0 * pss_u && fa_u > floor && pss_u <= floor,
        format!("median period amplitude FA {fa_u:.5} vs PSS {pss_u:.5} (ratio {:.1} ≥ 5); floor {floor:.5}: FA above, PSS below", fa_u / pss_u),
    );
    let ratio = rss_u.max(pss_u) / rss_u.min(pss_u);
    t.check(
        "2b unequal: RSS and PSS amplitude within 2×",
        ratio <= 2.0,
        format!("median period amplitude RSS {rss_u:.5}, PSS {pss_u:.5}: ratio {ratio:.2} (≤ 2)"),
    );

    let dense = study(Profile::UnequalDense);
    let (rss_d, pss_d) = (amp(&dense, ModelKind::Rss), amp(&dense, ModelKind::Pss));
    t.check(
        "3a dense knots: RSS above floor, PSS below",
        rss_d > floor && pss_d <= floor,
        format!("median period amplitude RSS {rss_d:.5}, PSS {pss_d:.5}; floor {floor:.5}"),
    );

    let periodic = study(Profile::UnequalPeriodic);
    let (rss_p, pss_p) = (amp(&periodic, ModelKind::Rss), amp(&periodic, ModelKind::Pss));
    t.check(
        "3b periodic augmentation: RSS above floor, PSS below",
        rss_p > floor && pss_p <= floor,
        format!("median period amplitude RSS {rss_p:.5}, PSS {pss_p:.5}; floor {floor:.5}"),
    );
    let pooled = |r: &StudyReport, k: ModelKind| {
        let m = r.model(k).unwrap();
        let all: Vec<f64> = Dimension::ALL.iter().flat_map(|&d| m.summary(d).mse.clone()).collect();
        all.iter().sum::<f64>() / all.len() as f64
    };
    let (mse_rss, mse_pss) = (pooled(&periodic, ModelKind::Rss), pooled(&periodic, ModelKind::Pss));
    t.check(
        "3c periodic augmentation: PSS MSE ≤ RSS MSE",
        mse_pss <= mse_rss,
        format!("mean pointwise curvature MSE over all dimensions: PSS {mse_pss:.3e}, RSS {mse_rss:.3e}"),
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test -- --list` and similar harness probes
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let start = Instant::now();
    let mut t = Tally { failed: Vec::new(), total: 0 };
    grid_fidelity(&mut t);
    penalty_inequality(&mut t);
    engine_oracles(&mut t);
    identifiability(&mut t);
    determinism(&mut t);
    application(&mut t);
    simulation_studies(&mut t);
    println!(
        "acceptance: {} of {} checks passed in {:.0} s",
        t.total - t.failed.len(),
        t.total,
        start.elapsed().as_secs_f64()
    );
    if !t.failed.is_empty() {
        println!("failed: {}", t.failed.join(", "));
        std::process::exit(1);
    }
}
