//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero when
//! any criterion fails. Every tolerance is pinned below.

use mixcorr::estimator::{fit_two_step, FitConfig};
use mixcorr::model::{CorrelationParams, MixedDataset, ParamVector, ThresholdSet};
use mixcorr::moments::{
    build_system, eval_moments, eval_u, Equation, EquationSystem, ObservedMoments, SystemMode,
};
use mixcorr::normal::{
    binorm_cdf_legendre, binorm_cdf_oracle, binorm_pdf, norm_cdf, norm_pdf, CdfKernel,
    LegendreOrder,
};
use mixcorr::simulation::{generate, ml_pair_oracle, run_study, SimDesign, SimReport};
use mixcorr::{CovarianceVariant, Real};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::process::ExitCode;
use std::time::Instant;

const DESIGN1_N1000: &str = include_str!("../designs/table1_n1000.json");
const DESIGN1_N500: &str = include_str!("../designs/table1_n500.json");
const DESIGN1_N100: &str = include_str!("../designs/table1_n100.json");
const DESIGN2_N1000: &str = include_str!("../designs/table2_n1000.json");

// 1
const DESIGN1_MEAN_TOL: f64 = 0.005;
const DESIGN1_RUNTIME_SECS: f64 = 180.0;
// 2
const CALIBRATION_TOL: f64 = 0.15;
const REJECT_FACTOR: f64 = 2.0;
// 3
const DESIGN2_MEAN_TOL: f64 = 0.01;
const DESIGN2_CALIBRATION_TOL: f64 = 0.20;
const DESIGN2_REPLICATIONS: usize = 500;
// 4
const SLOPE: f64 = -0.5;
const SLOPE_TOL: f64 = 0.15;
const SWEEP_REPLICATIONS: usize = 500;
// 5
const GRADIENT_POINTS: usize = 20;
const FD_STEP: f64 = 1e-5;
const GRADIENT_REL_TOL: f64 = 1e-6;
/// Entries smaller than this are compared absolutely (relative error of a
/// structural zero is meaningless).
const GRADIENT_FLOOR: f64 = 1e-3;
const GRADIENT_RUNTIME_SECS: f64 = 10.0;
// 6
const LEGENDRE_TOL_090: f64 = 1e-3;
const LEGENDRE_TOL_095: f64 = 5e-3;
// 7
const CLOSED_FORM_TOL: f64 = 1e-12;
// 8
const ORACLE_DATASETS: usize = 50;
const ORACLE_N: usize = 500;
const ORACLE_TOL: f64 = 0.03;
// 9
const IDENTITY_TOL: f64 = 1e-12;
const RANK_CUTOFF: f64 = 1e-10;
// normality screen
const SKEW_TOL: f64 = 0.2;
const KURTOSIS_TOL: f64 = 0.5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn design(text: &str) -> SimDesign {
    SimDesign::from_json(text).expect("shipped design parses")
}

fn max_abs_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn calibration(report: &SimReport) -> Vec<f64> {
    (0..report.labels.len())
        .map(|i| report.mcov[i][i] / report.covr[i][i])
        .collect()
}

fn fmt(v: &[f64], digits: usize) -> String {
    v.iter()
        .map(|x| format!("{x:.digits$}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn criterion_1(report: &SimReport) -> Outcome {
    let dev = max_abs_dev(&report.mean, &report.truth);
    let pass = dev <= DESIGN1_MEAN_TOL && report.wall_time_secs < DESIGN1_RUNTIME_SECS;
    Outcome {
        pass,
        detail: format!(
            "MEAN [{}], max |MEAN - truth| = {dev:.4} (tol {DESIGN1_MEAN_TOL}), N={} failures={}, {:.1}s",
            fmt(&report.mean, 4),
            report.replications,
            report.failures,
            report.wall_time_secs
        ),
    }
}

fn criterion_2(default: &SimReport, plain: &SimReport) -> Outcome {
    let d = calibration(default);
    let p = calibration(plain);
    let worst = |r: &[f64]| r.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
    let rejected = |r: &[f64]| {
        r.iter()
            .any(|x| !(1.0 / REJECT_FACTOR..=REJECT_FACTOR).contains(x))
    };
    let pass = worst(&d) <= CALIBRATION_TOL && !rejected(&d);
    Outcome {
        pass,
        detail: format!(
            "MCOV/COVR diag corrected [{}] (max dev {:.3}, tol {CALIBRATION_TOL}); plain [{}] (max dev {:.3}){}",
            fmt(&d, 3),
            worst(&d),
            fmt(&p, 3),
            worst(&p),
            if rejected(&p) { ", plain variant rejected" } else { "" }
        ),
    }
}

fn criterion_3() -> Outcome {
    let mut d = design(DESIGN2_N1000);
    d.replications = DESIGN2_REPLICATIONS;
    let r = run_study(&d).expect("design 2 study runs");
    let dev = max_abs_dev(&r.mean, &r.truth);
    let cal = calibration(&r);
    let worst = cal.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
    Outcome {
        pass: dev <= DESIGN2_MEAN_TOL && worst <= DESIGN2_CALIBRATION_TOL,
        detail: format!(
            "MEAN [{}], max dev {dev:.4} (tol {DESIGN2_MEAN_TOL}); MCOV/COVR max dev {worst:.3} (tol {DESIGN2_CALIBRATION_TOL}); {:.1}s",
            fmt(&r.mean, 4),
            r.wall_time_secs
        ),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn criterion_4() -> Outcome {
    let mut points = Vec::new();
    for text in [DESIGN1_N100, DESIGN1_N500, DESIGN1_N1000] {
        let mut d = design(text);
        d.replications = SWEEP_REPLICATIONS;
        let r = run_study(&d).expect("sweep study runs");
        let med: Vec<f64> = (0..r.truth.len())
            .map(|k| {
                median(
                    r.estimates
                        .iter()
                        .map(|e| (e[k] - r.truth[k]).abs())
                        .collect(),
                )
            })
            .collect();
        points.push((d.n as f64, med));
    }
    let k = points[0].1.len();
    let slopes: Vec<f64> = (0..k)
        .map(|j| {
            let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.1[j].ln()).collect();
            let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
            sxy / sxx
        })
        .collect();
    Outcome {
        pass: slopes.iter().all(|s| (s - SLOPE).abs() <= SLOPE_TOL),
        detail: format!(
            "log-log slopes [{}] (target {SLOPE} ± {SLOPE_TOL})",
            fmt(&slopes, 3)
        ),
    }
}

fn random_theta(rng: &mut ChaCha8Rng, system: &EquationSystem) -> ParamVector<f64> {
    let c = system.layout().c();
    let cuts = system
        .categories()
        .iter()
        .map(|&s| {
            let mut v: Vec<f64> = (0..s - 1).map(|_| rng.random_range(-1.5..1.5)).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            v
        })
        .collect();
    let rho = (0..system.layout().len())
        .map(|_| rng.random_range(-0.9..0.9))
        .collect();
    ParamVector::new(
        ThresholdSet::new(cuts).unwrap(),
        CorrelationParams::new(
            mixcorr::CoefficientLayout::new(c, system.categories().len()),
            rho,
        )
        .unwrap(),
    )
    .unwrap()
}

fn gradient_error(data: &MixedDataset<f64>, system: &EquationSystem, rng: &mut ChaCha8Rng) -> f64 {
    let kernel = CdfKernel::default();
    let mut worst = 0.0_f64;
    for _ in 0..GRADIENT_POINTS {
        let theta = random_theta(rng, system);
        let g = eval_moments(data, &theta, system, kernel).g;
        let flat = theta.to_flat();
        for p in 0..flat.len() {
            let shifted = |h: f64| {
                let mut f = flat.clone();
                f[p] += h;
                eval_moments(data, &theta.with_flat(&f).unwrap(), system, kernel).m
            };
            let fd = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
            for r in 0..fd.len() {
                let err = (g[(r, p)] - fd[r]).abs() / g[(r, p)].abs().max(GRADIENT_FLOOR);
                worst = worst.max(err);
            }
        }
    }
    worst
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut errors = Vec::new();
    for text in [DESIGN1_N1000, DESIGN2_N1000] {
        let mut d = design(text);
        d.n = 500;
        let data = generate::<f64>(&d, 0).unwrap();
        let system = build_system(data.specs(), SystemMode::Max, None).unwrap();
        errors.push(gradient_error(&data, &system, &mut rng));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: errors.iter().all(|&e| e < GRADIENT_REL_TOL) && secs < GRADIENT_RUNTIME_SECS,
        detail: format!(
            "max relative error c=2/d=2 {:.2e}, c=2/d=3 {:.2e} (tol {GRADIENT_REL_TOL:e}, step {FD_STEP:e}), {secs:.2}s",
            errors[0], errors[1]
        ),
    }
}

fn legendre_max_error(rho_max: f64) -> (f64, (f64, f64, f64)) {
    let mut worst = (0.0, (0.0, 0.0, 0.0));
    let steps = (rho_max / 0.05).round() as i32;
    for i in -10..=10 {
        for j in -10..=10 {
            for k in -steps..=steps {
                let (x, y, r) = (0.25 * i as f64, 0.25 * j as f64, 0.05 * k as f64);
                let err = (binorm_cdf_legendre(x, y, r, LegendreOrder::Third).unwrap()
                    - binorm_cdf_oracle(x, y, r).unwrap())
                .abs();
                if err > worst.0 {
                    worst = (err, (x, y, r));
                }
            }
        }
    }
    worst
}

fn criterion_6() -> Outcome {
    let (e90, at90) = legendre_max_error(0.9);
    let (e95, at95) = legendre_max_error(0.95);
    Outcome {
        pass: e90 < LEGENDRE_TOL_090 && e95 < LEGENDRE_TOL_095,
        detail: format!(
            "max |error| {e90:.3e} at {at90:?} for |ρ| ≤ 0.9 (tol {LEGENDRE_TOL_090:e}); {e95:.3e} at {at95:?} for |ρ| ≤ 0.95 (tol {LEGENDRE_TOL_095:e})"
        ),
    }
}

/// Closed forms for two continuous and two binary variables; rows follow the
/// retained equations, columns are `(a, b, R)`.
fn closed_form_gradient(a: f64, b: f64, r: &[f64]) -> DMatrix<f64> {
    let (_, r11, r12, r21, r22, rx) = (r[0], r[1], r[2], r[3], r[4], r[5]);
    let (pa, pb) = (norm_pdf(a), norm_pdf(b));
    let s = (1.0 - rx * rx).sqrt();
    let cb = norm_cdf((b - rx * a) / s);
    let ca = norm_cdf((a - rx * b) / s);
    let f = binorm_pdf(a, b, rx).unwrap();
    let mut g = DMatrix::zeros(12, 8);
    // G11
    g[(0, 0)] = -pa;
    g[(1, 1)] = -pb;
    // Pearson
    g[(2, 2)] = -1.0;
    // polyserial: G21 columns 0-1, G22 columns 3-6
    let rows = [
        (3, r11, 0, pa, a, 3, -1.0),
        (4, r11, 0, pa, a, 3, 1.0),
        (5, r12, 1, pb, b, 4, -1.0),
    ];
    let rows2 = [
        (6, r21, 0, pa, a, 5, -1.0),
        (7, r21, 0, pa, a, 5, 1.0),
        (8, r22, 1, pb, b, 6, -1.0),
    ];
    for (row, rho, col, p, t, rcol, sign) in rows.into_iter().chain(rows2) {
        g[(row, col)] = sign * rho * t * p;
        g[(row, rcol)] = -sign * p;
    }
    // polychoric I11, I12, I21
    g[(9, 0)] = -pa * cb;
    g[(9, 1)] = -pb * ca;
    g[(10, 0)] = -pa * (1.0 - cb);
    g[(10, 1)] = pb * ca;
    g[(11, 0)] = pa * cb;
    g[(11, 1)] = -pb * (1.0 - ca);
    g[(9, 7)] = -f;
    g[(10, 7)] = f;
    g[(11, 7)] = f;
    g
}

fn criterion_7() -> Outcome {
    let specs = SimDesign::from_json(DESIGN1_N1000).unwrap().specs();
    let system = build_system(&specs, SystemMode::Max, None).unwrap();
    use Equation::*;
    let expected = vec![
        Threshold {
            var: 0,
            category: 1,
        },
        Threshold {
            var: 1,
            category: 1,
        },
        Pearson {
            coef: 0,
            first: 0,
            second: 1,
        },
        Polyserial {
            coef: 1,
            cont: 0,
            ord: 0,
            category: 1,
        },
        Polyserial {
            coef: 1,
            cont: 0,
            ord: 0,
            category: 2,
        },
        Polyserial {
            coef: 2,
            cont: 0,
            ord: 1,
            category: 1,
        },
        Polyserial {
            coef: 3,
            cont: 1,
            ord: 0,
            category: 1,
        },
        Polyserial {
            coef: 3,
            cont: 1,
            ord: 0,
            category: 2,
        },
        Polyserial {
            coef: 4,
            cont: 1,
            ord: 1,
            category: 1,
        },
        Polychoric {
            coef: 5,
            first: 0,
            second: 1,
            k: 1,
            l: 1,
        },
        Polychoric {
            coef: 5,
            first: 0,
            second: 1,
            k: 1,
            l: 2,
        },
        Polychoric {
            coef: 5,
            first: 0,
            second: 1,
            k: 2,
            l: 1,
        },
    ];
    let structure = system.equations() == expected.as_slice()
        && system.threshold_part().len() == 2
        && system.correlation_part().len() == 10;
    let drops: Vec<usize> = system
        .blocks()
        .iter()
        .map(|b| b.equations.len() - b.retained_count())
        .collect();
    let drop_pattern = drops == vec![1, 1, 0, 0, 1, 0, 1, 1];

    let mut worst = 0.0_f64;
    for (a, b, r) in [
        (0.0, 0.0, vec![0.5; 6]),
        (0.3, -0.4, vec![0.3, 0.4, -0.5, 0.6, 0.7, -0.8]),
    ] {
        let layout = mixcorr::CoefficientLayout::new(2, 2);
        let theta = ParamVector::new(
            ThresholdSet::new(vec![vec![a], vec![b]]).unwrap(),
            CorrelationParams::new(layout, r.clone()).unwrap(),
        )
        .unwrap();
        let g = system.gradient(&theta, CdfKernel::Exact);
        worst = worst.max((g - closed_form_gradient(a, b, &r)).abs().max());
    }
    Outcome {
        pass: structure && drop_pattern && worst <= CLOSED_FORM_TOL,
        detail: format!(
            "12 equations in displayed order: {structure}; drops per block {drops:?}; max |G - closed form| = {worst:.1e} (tol {CLOSED_FORM_TOL:e})"
        ),
    }
}

/// Largest |IGMM - ML| over the datasets and the number of fits that did not
/// converge.
fn oracle_gap(cuts: &[Vec<f64>]) -> (f64, usize) {
    let rhos = [-0.8, -0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8];
    let mut worst = 0.0_f64;
    let mut failed = 0;
    for i in 0..ORACLE_DATASETS {
        let rho = rhos[i % rhos.len()];
        let d = SimDesign {
            name: String::new(),
            continuous: 0,
            thresholds: vec![
                cuts[i % cuts.len()].clone(),
                cuts[(i + 1) % cuts.len()].clone(),
            ],
            correlation: vec![vec![1.0, rho], vec![rho, 1.0]],
            n: ORACLE_N,
            replications: 1,
            seed: 8,
            fit: FitConfig::default(),
            threads: None,
            standardize: false,
        };
        let data = generate::<f64>(&d, i as u64).unwrap();
        let system = build_system(data.specs(), SystemMode::Max, None).unwrap();
        match fit_two_step(&data, &system, &FitConfig::default()) {
            Ok(fit) if fit.diagnostics.converged => {
                let ml = ml_pair_oracle(&data, 0).unwrap();
                worst = worst.max((fit.correlations.get(0) - ml).abs());
            }
            _ => failed += 1,
        }
    }
    (worst, failed)
}

fn criterion_8() -> Outcome {
    // Binary and ternary margins of the simulation designs.
    let (worst, failed) = oracle_gap(&[
        vec![0.0],
        vec![-0.431, 0.431],
        vec![-0.431, 0.431],
        vec![0.0],
    ]);
    Outcome {
        pass: failed == 0 && worst <= ORACLE_TOL,
        detail: format!(
            "{ORACLE_DATASETS} datasets (n={ORACLE_N}, 2x2/2x3/3x3 tables): max |IGMM - ML| = {worst:.4} (tol {ORACLE_TOL}), {failed} fits failed"
        ),
    }
}

/// Not gated: skewed 3x4 margins at |rho| = 0.8 leave joint cells empty, and
/// the weight estimated at the current iterate then drives rho to the bound.
fn sparse_tables() -> String {
    let (worst, failed) = oracle_gap(&[
        vec![-0.5, 0.6],
        vec![-1.0, 0.0, 0.8],
        vec![0.2],
        vec![-0.3, 0.3],
    ]);
    format!("sparse 3x4 tables: max |IGMM - ML| = {worst:.4}, {failed} fits failed")
}

fn rank(m: &DMatrix<f64>) -> usize {
    let (vals, _) = f64::sym_eigen(&((m + m.transpose()) * 0.5));
    let max = vals.iter().copied().fold(0.0, f64::max);
    vals.iter().filter(|&&v| v > RANK_CUTOFF * max).count()
}

/// Largest violation of the block identities that justify each removal:
/// threshold and polychoric blocks sum to zero, a polyserial block sums to
/// its continuous variable.
fn identity_violation(
    data: &MixedDataset<f64>,
    system: &EquationSystem,
    theta: &ParamVector<f64>,
) -> f64 {
    let full = system.unpruned();
    let kernel = CdfKernel::default();
    let mut worst = 0.0_f64;
    for row in 0..data.n() {
        let y: Vec<f64> = (0..data.c()).map(|j| data.continuous(j)[row]).collect();
        let x: Vec<usize> = (0..data.d()).map(|j| data.ordinal(j)[row]).collect();
        let u = eval_u(&y, &x, theta, &full, kernel);
        let mut pos = 0;
        for block in full.blocks() {
            let len = block.equations.len();
            let sum: f64 = u.rows(pos, len).iter().sum();
            let target = match block.equations[0] {
                Equation::Polyserial { cont, .. } => y[cont],
                _ => 0.0,
            };
            if !matches!(block.equations[0], Equation::Pearson { .. }) {
                worst = worst.max((sum - target).abs());
            }
            pos += len;
        }
    }
    worst
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut identity = 0.0_f64;
    let mut lines = Vec::new();
    let mut pass = true;
    for (label, text) in [("c=2/d=2", DESIGN1_N1000), ("c=2/d=3", DESIGN2_N1000)] {
        let mut d = design(text);
        d.n = 400;
        let data = generate::<f64>(&d, 3).unwrap();
        let system = build_system(data.specs(), SystemMode::Max, None).unwrap();
        for _ in 0..3 {
            let theta = random_theta(&mut rng, &system);
            identity = identity.max(identity_violation(&data, &system, &theta));
        }
        let theta = random_theta(&mut rng, &system);
        for (part, sys) in [("g", system.correlation_part()), ("h+g", system.clone())] {
            let full = sys.unpruned();
            let omega = |s: &EquationSystem| {
                ObservedMoments::new(&data, s).omega(&s.expected(&theta, CdfKernel::default()))
            };
            let (q_full, q) = (full.len(), sys.len());
            let (r_full, r) = (rank(&omega(&full)), rank(&omega(&sys)));
            let removed = q_full - q;
            let deficiency = q_full - r_full;
            // Removal must only take out dependent equations, and all of them.
            pass &= r_full == r && deficiency == removed;
            lines.push(format!(
                "{label} {part}: removed {removed}, unpruned deficiency {deficiency}, pruned deficiency {}",
                q - r
            ));
        }
    }
    pass &= identity <= IDENTITY_TOL;
    Outcome {
        pass,
        detail: format!(
            "max identity violation {identity:.1e} (tol {IDENTITY_TOL:e}); {}",
            lines.join("; ")
        ),
    }
}

fn moments(z: &[f64]) -> (f64, f64) {
    let n = z.len() as f64;
    let m = z.iter().sum::<f64>() / n;
    let m2 = z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = z.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    let m4 = z.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

fn normality(report: &SimReport) -> Outcome {
    let k = report.truth.len();
    let mut skews = Vec::new();
    let mut kurts = Vec::new();
    for j in 0..k {
        let z: Vec<f64> = report
            .estimates
            .iter()
            .zip(&report.standard_errors)
            .map(|(e, s)| (e[j] - report.truth[j]) / s[j])
            .collect();
        let (s, ku) = moments(&z);
        skews.push(s);
        kurts.push(ku);
    }
    Outcome {
        pass: skews.iter().all(|s| s.abs() < SKEW_TOL)
            && kurts.iter().all(|k| k.abs() < KURTOSIS_TOL),
        detail: format!(
            "skew [{}] (tol {SKEW_TOL}), excess kurtosis [{}] (tol {KURTOSIS_TOL})",
            fmt(&skews, 3),
            fmt(&kurts, 3)
        ),
    }
}

fn main() -> ExitCode {
    let design1 = design(DESIGN1_N1000);
    let default = run_study(&design1).expect("design 1 study runs");
    let mut plain_design = design1.clone();
    plain_design.fit.covariance = CovarianceVariant::Plain;
    let plain = run_study(&plain_design).expect("design 1 study runs");

    let results: Vec<(&str, Outcome)> = vec![
        ("criterion 1: design-1 means", criterion_1(&default)),
        (
            "criterion 2: variance calibration",
            criterion_2(&default, &plain),
        ),
        ("criterion 3: design-2 means and calibration", criterion_3()),
        ("criterion 4: consistency slope", criterion_4()),
        ("criterion 5: gradient correctness", criterion_5()),
        ("criterion 6: Legendre accuracy", criterion_6()),
        ("criterion 7: four-variable system", criterion_7()),
        ("criterion 8: ML oracle cross-check", criterion_8()),
        ("criterion 9: redundancy identities", criterion_9()),
        ("screen: normality (n=1000)", normality(&default)),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{name}: {tag} - {}", outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    println!("info: {}", sparse_tables());
    if failed == 0 {
        println!("acceptance: all {} checks passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of {} checks failed", results.len());
        ExitCode::FAILURE
    }
}
