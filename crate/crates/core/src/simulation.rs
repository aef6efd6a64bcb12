//! Monte Carlo replication of a latent-normal design.

use crate::error::{Error, Result};
use crate::estimator::{estimate_thresholds, fit, FitConfig};
use crate::model::{CoefficientKind, CoefficientLayout, MixedDataset, VariableSpec};
use crate::normal::{norm_cdf, CdfKernel, RHO_BOUND};
use crate::scalar::Real;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    #[serde(default)]
    pub name: String,
    /// Number of continuous variables; they come first in `correlation`.
    pub continuous: usize,
    /// Cut points of each ordinal variable.
    pub thresholds: Vec<Vec<f64>>,
    /// Full latent correlation matrix, `(c + d) × (c + d)`.
    pub correlation: Vec<Vec<f64>>,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub fit: FitConfig,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Re-standardize continuous columns in every sample. Off by default:
    /// draws already have unit population variance.
    #[serde(default)]
    pub standardize: bool,
}

impl SimDesign {
    pub fn from_json(text: &str) -> Result<Self> {
        let design: Self = serde_json::from_str(text)?;
        design.validate()?;
        Ok(design)
    }

    pub fn layout(&self) -> CoefficientLayout {
        CoefficientLayout::new(self.continuous, self.thresholds.len())
    }

    pub fn specs(&self) -> Vec<VariableSpec> {
        let mut specs: Vec<_> = (1..=self.continuous)
            .map(|i| VariableSpec::continuous(format!("Y{i}")))
            .collect();
        specs.extend(
            self.thresholds
                .iter()
                .enumerate()
                .map(|(i, a)| VariableSpec::ordinal(format!("X{}", i + 1), a.len() + 1)),
        );
        specs
    }

    fn matrix(&self) -> DMatrix<f64> {
        let m = self.correlation.len();
        DMatrix::from_fn(m, m, |i, j| self.correlation[i][j])
    }

    /// True coefficients in layout order.
    pub fn truth(&self) -> Vec<f64> {
        self.layout()
            .iter()
            .map(|k| self.correlation[k.row][k.col])
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDesign(msg));
        let m = self.continuous + self.thresholds.len();
        if m < 2 {
            return bad("at least two variables are required".into());
        }
        if self.correlation.len() != m || self.correlation.iter().any(|r| r.len() != m) {
            return bad(format!("correlation matrix must be {m}x{m}"));
        }
        for i in 0..m {
            if self.correlation[i][i] != 1.0 {
                return bad(format!("diagonal entry {} is not 1", i + 1));
            }
            for j in 0..i {
                let v = self.correlation[i][j];
                if v != self.correlation[j][i] {
                    return bad(format!("matrix is not symmetric at ({}, {})", i + 1, j + 1));
                }
                if !(v.abs() <= RHO_BOUND) {
                    return bad(format!("|ρ| at ({}, {}) exceeds {RHO_BOUND}", i + 1, j + 1));
                }
            }
        }
        for (i, a) in self.thresholds.iter().enumerate() {
            if a.is_empty()
                || a.iter().any(|v| !v.is_finite())
                || a.windows(2).any(|w| w[0] >= w[1])
            {
                return Err(Error::ThresholdOrder { variable: i });
            }
        }
        if self.n < 2 {
            return Err(Error::TooFewRows(self.n));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        self.fit.validate()?;
        f64::cholesky_lower(&self.matrix()).ok_or(Error::NotPositiveDefinite)?;
        Ok(())
    }
}

/// Sample `replication` of the design: `n` draws from `N(0, R)`, ordinal
/// columns cut at the design thresholds. The stream depends only on
/// `(seed, replication)`.
pub fn generate<T: Real>(design: &SimDesign, replication: u64) -> Result<MixedDataset<T>> {
    let l = f64::cholesky_lower(&design.matrix()).ok_or(Error::NotPositiveDefinite)?;
    let m = l.nrows();
    let c = design.continuous;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    rng.set_stream(replication);
    let mut continuous = vec![Vec::with_capacity(design.n); c];
    let mut ordinal = vec![Vec::with_capacity(design.n); m - c];
    let mut z = vec![0.0; m];
    for _ in 0..design.n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for i in 0..m {
            let v: f64 = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
            if i < c {
                continuous[i].push(T::lit(v));
            } else {
                let cuts = &design.thresholds[i - c];
                ordinal[i - c].push(1 + cuts.iter().filter(|&&a| a < v).count());
            }
        }
    }
    let specs = design.specs();
    if design.standardize {
        MixedDataset::from_columns(specs, continuous, ordinal)
    } else {
        MixedDataset::from_standard_columns(specs, continuous, ordinal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub name: String,
    pub n: usize,
    pub replications: usize,
    pub succeeded: usize,
    pub failures: usize,
    pub labels: Vec<String>,
    pub truth: Vec<f64>,
    /// Mean of `R̂` over successful replications.
    pub mean: Vec<f64>,
    /// Sample covariance (divisor `N - 1`) of the `R̂` series.
    pub covr: Vec<Vec<f64>>,
    /// Mean of the estimated `Var(R̂)` series.
    pub mcov: Vec<Vec<f64>>,
    /// `R̂` of every successful replication, in replication order.
    pub estimates: Vec<Vec<f64>>,
    /// Standard errors matching `estimates`.
    pub standard_errors: Vec<Vec<f64>>,
    pub wall_time_secs: f64,
    pub config: FitConfig,
}

struct Replicate {
    estimates: Vec<f64>,
    var: DMatrix<f64>,
}

fn replicate(design: &SimDesign, r: u64) -> Option<Replicate> {
    let data = generate::<f64>(design, r).ok()?;
    let fit = fit(&data, &design.fit).ok()?;
    fit.diagnostics.converged.then(|| Replicate {
        estimates: fit.estimates(),
        var: fit.var_r,
    })
}

pub fn run_study(design: &SimDesign) -> Result<SimReport> {
    design.validate()?;
    if design.replications < 2 {
        return Err(Error::InvalidDesign(
            "at least two replications are required".into(),
        ));
    }
    let start = Instant::now();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = design.threads {
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let results: Vec<Option<Replicate>> = pool.install(|| {
        (0..design.replications as u64)
            .into_par_iter()
            .map(|r| replicate(design, r))
            .collect()
    });

    let ok: Vec<Replicate> = results.into_iter().flatten().collect();
    if ok.len() < 2 {
        return Err(Error::AllReplicationsFailed(design.replications));
    }
    let k = design.layout().len();
    let count = ok.len() as f64;
    let mut mean = vec![0.0; k];
    for r in &ok {
        for (m, v) in mean.iter_mut().zip(&r.estimates) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut covr = vec![vec![0.0; k]; k];
    let mut mcov = vec![vec![0.0; k]; k];
    for r in &ok {
        for i in 0..k {
            for j in 0..k {
                covr[i][j] += (r.estimates[i] - mean[i]) * (r.estimates[j] - mean[j]);
                mcov[i][j] += r.var[(i, j)];
            }
        }
    }
    for i in 0..k {
        for j in 0..k {
            covr[i][j] /= count - 1.0;
            mcov[i][j] /= count;
        }
    }

    let names: Vec<String> = design.specs().into_iter().map(|s| s.name).collect();
    let layout = design.layout();
    Ok(SimReport {
        name: design.name.clone(),
        n: design.n,
        replications: design.replications,
        succeeded: ok.len(),
        failures: design.replications - ok.len(),
        labels: (0..k).map(|i| layout.label(i, &names)).collect(),
        truth: design.truth(),
        mean,
        covr,
        mcov,
        standard_errors: ok
            .iter()
            .map(|r| (0..k).map(|i| r.var[(i, i)].max(0.0).sqrt()).collect())
            .collect(),
        estimates: ok.into_iter().map(|r| r.estimates).collect(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        config: design.fit.clone(),
    })
}

fn fixed(v: f64, scale: f64) -> String {
    let i = (v * scale).round() as i64;
    if i < 0 {
        format!("-{:04}", -i)
    } else {
        format!("{i:04}")
    }
}

/// Fixed-width table: MEAN in units of 1e-4, COVR and MCOV (lower
/// triangles) in the power of ten that leaves four significant digits.
pub fn render_table(report: &SimReport) -> String {
    let width = report
        .labels
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max(6)
        + 1;
    let largest = report
        .covr
        .iter()
        .chain(&report.mcov)
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let exp = if largest > 0.0 {
        3 - largest.log10().floor() as i32
    } else {
        0
    };
    let scale = 10f64.powi(exp);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}  n={}  N={}  failures={}  time={:.2}s",
        if report.name.is_empty() {
            "study"
        } else {
            &report.name
        },
        report.n,
        report.replications,
        report.failures,
        report.wall_time_secs
    );
    let _ = writeln!(out, "MEAN x1e-4, COVR MCOV x1e-{exp}");
    let row = |out: &mut String, head: &str, cells: &[String]| {
        let _ = write!(out, "{head:<6}");
        for c in cells {
            let _ = write!(out, "{c:>width$}");
        }
        out.push('\n');
    };
    row(&mut out, "", &report.labels);
    row(
        &mut out,
        "TRUE",
        &report
            .truth
            .iter()
            .map(|&v| fixed(v, 1e4))
            .collect::<Vec<_>>(),
    );
    row(
        &mut out,
        "MEAN",
        &report
            .mean
            .iter()
            .map(|&v| fixed(v, 1e4))
            .collect::<Vec<_>>(),
    );
    for (head, m) in [("COVR", &report.covr), ("MCOV", &report.mcov)] {
        for (i, line) in m.iter().enumerate() {
            let cells: Vec<String> = line[..=i].iter().map(|&v| fixed(v, scale)).collect();
            row(&mut out, if i == 0 { head } else { "" }, &cells);
        }
    }
    out
}

/// Pairwise two-step maximum likelihood for one polychoric or polyserial
/// coefficient, thresholds fixed at their closed-form estimates. Intended as
/// an independent cross-check of the moment estimator.
pub fn ml_pair_oracle(data: &MixedDataset<f64>, pair: usize) -> Result<f64> {
    let c = data.c();
    let layout = CoefficientLayout::new(c, data.d());
    if pair >= layout.len() {
        return Err(Error::UnknownPair(format!("coefficient index {pair}")));
    }
    let coef = layout.get(pair);
    let a = estimate_thresholds(data)?;
    let loglik: Box<dyn Fn(f64) -> f64> = match coef.kind {
        CoefficientKind::Pearson => {
            return Err(Error::UnknownPair(
                "the oracle covers polychoric and polyserial pairs".into(),
            ))
        }
        CoefficientKind::Polychoric => {
            let (i, j) = (coef.col - c, coef.row - c);
            let (si, sj) = (a.categories(i), a.categories(j));
            let mut counts = vec![vec![0.0; sj]; si];
            for (&x, &y) in data.ordinal(i).iter().zip(data.ordinal(j)) {
                counts[x - 1][y - 1] += 1.0;
            }
            let a = a.clone();
            Box::new(move |rho| {
                let f = |k: usize, l: usize| CdfKernel::Exact.cdf(a.cut(i, k), a.cut(j, l), rho);
                let mut ll = 0.0;
                for k in 1..=si {
                    for l in 1..=sj {
                        if counts[k - 1][l - 1] > 0.0 {
                            let p = f(k, l) - f(k, l - 1) - f(k - 1, l) + f(k - 1, l - 1);
                            ll += counts[k - 1][l - 1] * p.max(1e-300).ln();
                        }
                    }
                }
                ll
            })
        }
        CoefficientKind::Polyserial => {
            let (y, x) = (coef.col, coef.row - c);
            let ys = data.continuous(y).to_vec();
            let xs = data.ordinal(x).to_vec();
            let a = a.clone();
            Box::new(move |rho| {
                let s = (1.0 - rho * rho).sqrt();
                ys.iter()
                    .zip(&xs)
                    .map(|(&v, &k)| {
                        let hi = norm_cdf((a.cut(x, k) - rho * v) / s);
                        let lo = norm_cdf((a.cut(x, k - 1) - rho * v) / s);
                        (hi - lo).max(1e-300).ln()
                    })
                    .sum()
            })
        }
    };

    // Coarse grid, then golden-section refinement around the best node.
    let step = 0.01;
    let nodes = (2.0 * RHO_BOUND / step).ceil() as i64;
    let grid = (0..=nodes).map(|i| (-RHO_BOUND + i as f64 * step).min(RHO_BOUND));
    let best = grid
        .map(|r| (r, loglik(r)))
        .fold(
            (0.0, f64::NEG_INFINITY),
            |b, (r, v)| if v > b.1 { (r, v) } else { b },
        );
    let (mut lo, mut hi) = (
        (best.0 - step).max(-RHO_BOUND),
        (best.0 + step).min(RHO_BOUND),
    );
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (loglik(x1), loglik(x2));
    while hi - lo > 1e-10 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = loglik(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = loglik(x1);
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design() -> SimDesign {
        SimDesign {
            name: "t".into(),
            continuous: 1,
            thresholds: vec![vec![0.0], vec![-0.5, 0.5]],
            correlation: vec![
                vec![1.0, 0.3, 0.2],
                vec![0.3, 1.0, 0.4],
                vec![0.2, 0.4, 1.0],
            ],
            n: 200,
            replications: 3,
            seed: 7,
            fit: FitConfig::default(),
            threads: Some(1),
            standardize: false,
        }
    }

    #[test]
    fn validation_rejects_bad_designs() {
        let mut d = design();
        d.correlation[0][1] = 0.31;
        assert!(matches!(d.validate(), Err(Error::InvalidDesign(_))));
        let mut d = design();
        d.correlation = vec![
            vec![1.0, 0.9, 0.9],
            vec![0.9, 1.0, -0.9],
            vec![0.9, -0.9, 1.0],
        ];
        assert_eq!(d.validate(), Err(Error::NotPositiveDefinite));
        let mut d = design();
        d.thresholds[1] = vec![0.5, 0.5];
        assert!(matches!(
            d.validate(),
            Err(Error::ThresholdOrder { variable: 1 })
        ));
    }

    #[test]
    fn generation_is_reproducible_per_stream() {
        let d = design();
        let a = generate::<f64>(&d, 1).unwrap();
        let b = generate::<f64>(&d, 1).unwrap();
        let c = generate::<f64>(&d, 2).unwrap();
        assert_eq!(a.continuous(0), b.continuous(0));
        assert_eq!(a.ordinal(1), b.ordinal(1));
        assert_ne!(a.continuous(0), c.continuous(0));
    }

    #[test]
    fn fixed_width_cells() {
        assert_eq!(fixed(0.0656e-3, 1e6), "0066");
        assert_eq!(fixed(-0.328e-4, 1e6), "-0033");
        assert_eq!(fixed(0.2992, 1e4), "2992");
    }

    #[test]
    fn oracle_on_symmetric_tables() {
        let specs = vec![VariableSpec::ordinal("A", 2), VariableSpec::ordinal("B", 2)];
        let table = |counts: [usize; 4]| {
            let mut a = vec![];
            let mut b = vec![];
            for (cell, &n) in counts.iter().enumerate() {
                a.extend(std::iter::repeat_n(cell / 2 + 1, n));
                b.extend(std::iter::repeat_n(cell % 2 + 1, n));
            }
            MixedDataset::from_columns(specs.clone(), vec![], vec![a, b]).unwrap()
        };
        // a flat optimum is only located to about √ε
        assert!(ml_pair_oracle(&table([25, 25, 25, 25]), 0).unwrap().abs() < 1e-6);
        let r = ml_pair_oracle(&table([40, 10, 10, 40]), 0).unwrap();
        assert!((r - (0.3 * std::f64::consts::PI).sin()).abs() < 1e-5);
        assert!(ml_pair_oracle(&table([49, 1, 1, 49]), 0).unwrap() > 0.9);
    }
}
