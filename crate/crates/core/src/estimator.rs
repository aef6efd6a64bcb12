//! One-step and two-step iterative GMM.

use crate::error::{Error, Result};
use crate::model::{CorrelationParams, MixedDataset, ParamVector, ThresholdSet};
use crate::moments::{
    build_system, weight_matrix, Equation, EquationSystem, ObservedMoments, SystemMode,
};
use crate::normal::{norm_quantile, CdfKernel, RHO_BOUND};
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Thresholds and correlations estimated jointly.
    OneStep,
    /// Thresholds from the marginal proportions, then correlations.
    #[default]
    TwoStep,
}

/// Two-step covariance of `R̂`, with `Λ = (G₂₂'WG₂₂)⁻¹` and `Γ = G₂₂'WG₂₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceVariant {
    /// `Λ + ΛΓΣΓ'Λ`, with `Σ = Var(h)`.
    Plain,
    /// `Λ + ΛΓ·Avar(â)·Γ'Λ`, with `Avar(â) = (G₁₁'Σ⁻¹G₁₁)⁻¹`, the usual
    /// correction for plugged-in first-step estimates.
    #[default]
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub method: Method,
    pub max_outer_iter: usize,
    pub outer_tol: f64,
    pub inner_grad_tol: f64,
    pub inner_max_iter: usize,
    pub kernel: CdfKernel,
    pub system: SystemMode,
    pub covariance: CovarianceVariant,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: Method::TwoStep,
            max_outer_iter: 100,
            outer_tol: 1e-8,
            inner_grad_tol: 1e-10,
            inner_max_iter: 500,
            kernel: CdfKernel::default(),
            system: SystemMode::Max,
            covariance: CovarianceVariant::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.into()));
        if !(self.outer_tol > 0.0) || !(self.inner_grad_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_outer_iter == 0 || self.inner_max_iter == 0 {
            return bad("iteration caps must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub outer_iterations: usize,
    pub final_diff: f64,
    pub final_loss: f64,
    /// Condition number of `Ω̂` at every weight update; `None` when singular.
    pub condition_numbers: Vec<Option<f64>>,
    /// Whether any weight update needed the pseudo-inverse.
    pub pseudo_inverse: bool,
    pub weight_rank: usize,
    pub equations: usize,
    pub inner_iterations: Vec<usize>,
    /// Smallest eigenvalue of the assembled `R̂`; pairwise estimates need not
    /// form a positive semi-definite matrix.
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone)]
pub struct EstimationResult<T: Real> {
    pub correlations: CorrelationParams<T>,
    pub thresholds: ThresholdSet<T>,
    /// Coefficient indices that were estimated; entries not listed keep
    /// their starting values.
    pub estimated: Vec<usize>,
    /// Covariance of the estimated coefficients, in `estimated` order.
    pub var_r: DMatrix<T>,
    /// Covariance of all free parameters (one-step only), thresholds first.
    pub var_theta: Option<DMatrix<T>>,
    pub n: usize,
    pub diagnostics: Diagnostics,
}

impl<T: Real> EstimationResult<T> {
    pub fn estimates(&self) -> Vec<T> {
        self.estimated
            .iter()
            .map(|&k| self.correlations.get(k))
            .collect()
    }

    pub fn standard_errors(&self) -> Vec<T> {
        (0..self.var_r.nrows())
            .map(|i| self.var_r[(i, i)].max(T::zero()).sqrt())
            .collect()
    }
}

/// Closed-form thresholds `a_{i,k} = Φ⁻¹(p_{i,1} + … + p_{i,k})`.
pub fn estimate_thresholds<T: Real>(data: &MixedDataset<T>) -> Result<ThresholdSet<T>> {
    let mut cuts = Vec::with_capacity(data.d());
    for i in 0..data.d() {
        let p = data.proportions(i);
        if let Some(k) = p.iter().position(|&v| v <= T::zero()) {
            return Err(Error::EmptyCategory {
                variable: data.names()[data.c() + i].clone(),
                category: k + 1,
            });
        }
        // Counting avoids summing rounded proportions.
        let col = data.ordinal(i);
        let n = T::lit(col.len() as f64);
        let mut below = 0usize;
        let mut v = Vec::with_capacity(p.len() - 1);
        for k in 1..p.len() {
            below += col.iter().filter(|&&x| x == k).count();
            v.push(norm_quantile(T::lit(below as f64) / n)?);
        }
        cuts.push(v);
    }
    ThresholdSet::new(cuts)
}

/// Pearson correlations of the coded data, clamped into the feasible box.
pub fn initial_correlations<T: Real>(data: &MixedDataset<T>) -> Result<CorrelationParams<T>> {
    let (c, d, n) = (data.c(), data.d(), data.n());
    let mut cols: Vec<Vec<T>> = (0..c).map(|i| data.continuous(i).to_vec()).collect();
    cols.extend((0..d).map(|i| data.ordinal(i).iter().map(|&x| T::lit(x as f64)).collect()));
    for col in &mut cols {
        let mean = col.iter().copied().sum::<T>() / T::lit(n as f64);
        let ss = col
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<T>()
            .sqrt();
        for v in col.iter_mut() {
            *v = (*v - mean) / ss;
        }
    }
    let bound = T::lit(RHO_BOUND);
    let m = c + d;
    let r = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            T::one()
        } else {
            let v: T = cols[i].iter().zip(&cols[j]).map(|(&a, &b)| a * b).sum();
            v.max(-bound).min(bound)
        }
    });
    CorrelationParams::from_matrix(c, d, &r)
}

/// Outcome of one inner minimization under a fixed weight matrix.
#[derive(Debug, Clone)]
pub struct InnerResult<T: Real> {
    pub theta: ParamVector<T>,
    pub loss: T,
    pub iterations: usize,
    /// `‖G'Wm‖∞` over the free, non-bound coordinates at the returned point.
    pub grad_norm: T,
    /// Loss after every accepted step, starting with the initial loss.
    pub history: Vec<T>,
}

struct Objective<'a, T: Real> {
    obs: &'a ObservedMoments<T>,
    system: &'a EquationSystem,
    w: &'a DMatrix<T>,
    kernel: CdfKernel,
    template: &'a ParamVector<T>,
    free: &'a [usize],
    base: Vec<T>,
}

impl<T: Real> Objective<'_, T> {
    fn theta(&self, z: &[T]) -> Option<ParamVector<T>> {
        let mut flat = self.base.clone();
        for (&p, &v) in self.free.iter().zip(z) {
            flat[p] = v;
        }
        self.template.with_flat(&flat).ok()
    }

    fn loss(&self, theta: &ParamVector<T>) -> T {
        let m = self.obs.moments(&self.system.expected(theta, self.kernel));
        (m.transpose() * self.w * &m)[(0, 0)]
    }

    /// Loss and `G'Wm` over the free coordinates.
    fn loss_grad(&self, theta: &ParamVector<T>) -> (T, DVector<T>) {
        let m = self.obs.moments(&self.system.expected(theta, self.kernel));
        let wm = self.w * &m;
        let loss = m.dot(&wm);
        let g = self.system.gradient(theta, self.kernel);
        let full = g.transpose() * wm;
        (
            loss,
            DVector::from_iterator(self.free.len(), self.free.iter().map(|&p| full[p])),
        )
    }
}

/// Minimizes `L(θ) = m(θ)'Wm(θ)` over the coordinates in `free` (flat
/// indices) with BFGS, a projected gradient on the correlation box and a
/// backtracking line search that rejects threshold-order violations.
pub fn minimize_loss<T: Real>(
    obs: &ObservedMoments<T>,
    system: &EquationSystem,
    w: &DMatrix<T>,
    theta0: &ParamVector<T>,
    free: &[usize],
    cfg: &FitConfig,
) -> Result<InnerResult<T>> {
    let base = theta0.to_flat();
    let obj = Objective {
        obs,
        system,
        w,
        kernel: cfg.kernel,
        template: theta0,
        free,
        base: base.clone(),
    };
    let k = free.len();
    let t_count = system.threshold_count();
    let bound = T::lit(RHO_BOUND);
    let is_rho: Vec<bool> = free.iter().map(|&p| p >= t_count).collect();
    let tol = T::lit(cfg.inner_grad_tol);

    let mut z: Vec<T> = free.iter().map(|&p| base[p]).collect();
    let mut theta = theta0.clone();
    let (mut f, mut g) = obj.loss_grad(&theta);
    if !f.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let mut history = vec![f];
    let mut h = DMatrix::<T>::identity(k, k);
    let mut fresh = true;

    // Correlations sitting on the box with the gradient pushing outward.
    let blocked = |z: &[T], g: &DVector<T>| -> Vec<bool> {
        (0..k)
            .map(|i| {
                is_rho[i]
                    && ((z[i] >= bound && g[i] < T::zero()) || (z[i] <= -bound && g[i] > T::zero()))
            })
            .collect()
    };
    let projected_norm = |g: &DVector<T>, blocked: &[bool]| {
        (0..k)
            .filter(|&i| !blocked[i])
            .map(|i| g[i].abs())
            .fold(T::zero(), T::max)
    };

    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let blk = blocked(&z, &g);
        grad_norm = projected_norm(&g, &blk);
        if grad_norm <= tol || iterations >= cfg.inner_max_iter {
            break;
        }
        let mut pg = g.clone();
        for i in 0..k {
            if blk[i] {
                pg[i] = T::zero();
            }
        }
        let mut d = -(&h * &pg);
        for i in 0..k {
            if blk[i] {
                d[i] = T::zero();
            }
        }
        if d.dot(&pg) >= T::zero() {
            h.fill_with_identity();
            fresh = true;
            d = -pg.clone();
        }

        let mut step = None;
        let mut alpha = T::one();
        for _ in 0..=60 {
            let trial: Vec<T> = (0..k)
                .map(|i| {
                    let v = z[i] + alpha * d[i];
                    if is_rho[i] {
                        v.max(-bound).min(bound)
                    } else {
                        v
                    }
                })
                .collect();
            if let Some(th) = obj.theta(&trial) {
                let ft = obj.loss(&th);
                let moved: T = (0..k).map(|i| g[i] * (trial[i] - z[i])).sum();
                if ft.is_finite() && ft <= f + T::lit(1e-4) * moved && ft <= f && moved < T::zero()
                {
                    step = Some((trial, th, ft));
                    break;
                }
            }
            alpha *= T::lit(0.5);
        }

        let Some((trial, th, _)) = step else {
            if !fresh {
                h.fill_with_identity();
                fresh = true;
                continue;
            }
            // Stalled at round-off: accept the point if it is essentially
            // stationary, otherwise report the failure.
            if grad_norm <= tol.sqrt() * (T::one() + f.abs()) {
                break;
            }
            return Err(Error::LineSearchFailure);
        };

        let (f_new, g_new) = obj.loss_grad(&th);
        if !f_new.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let s = DVector::from_iterator(k, (0..k).map(|i| trial[i] - z[i]));
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > T::lit(1e-12) * (s.dot(&s) * y.dot(&y)).sqrt() {
            if fresh {
                h *= sy / y.dot(&y);
            }
            let rho = T::one() / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← H - ρ(Hy s' + s y'H) + (ρ² y'Hy + ρ) s s'
            h -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h += &s * s.transpose() * (rho * rho * yhy + rho);
            fresh = false;
        }
        z = trial;
        theta = th;
        f = f_new;
        g = g_new;
        history.push(f);
        iterations += 1;
    }

    Ok(InnerResult {
        theta,
        loss: f,
        iterations,
        grad_norm,
        history,
    })
}

/// Fits with the configured method on the system built from `cfg.system`.
pub fn fit<T: Real>(data: &MixedDataset<T>, cfg: &FitConfig) -> Result<EstimationResult<T>> {
    let mode = if cfg.system == SystemMode::Custom {
        SystemMode::Max
    } else {
        cfg.system
    };
    let system = build_system(data.specs(), mode, None)?;
    fit_with(data, &system, cfg)
}

pub fn fit_with<T: Real>(
    data: &MixedDataset<T>,
    system: &EquationSystem,
    cfg: &FitConfig,
) -> Result<EstimationResult<T>> {
    match cfg.method {
        Method::OneStep => fit_one_step(data, system, cfg),
        Method::TwoStep => fit_two_step(data, system, cfg),
    }
}

fn check_shape<T: Real>(data: &MixedDataset<T>, system: &EquationSystem) -> Result<()> {
    if system.layout().c() != data.c() || system.categories() != data.categories().as_slice() {
        return Err(Error::Dimension(
            "equation system does not match the dataset".into(),
        ));
    }
    Ok(())
}

struct Outer<T: Real> {
    theta: ParamVector<T>,
    w: DMatrix<T>,
    diagnostics: Diagnostics,
}

/// Alternates inner minimization and weight updates until the parameter
/// change drops below `outer_tol`.
fn iterate<T: Real>(
    obs: &ObservedMoments<T>,
    system: &EquationSystem,
    theta0: ParamVector<T>,
    free: &[usize],
    cfg: &FitConfig,
) -> Result<Outer<T>> {
    let mut w = DMatrix::identity(system.len(), system.len());
    let mut theta = theta0;
    let mut diag = Diagnostics {
        equations: system.len(),
        final_diff: f64::INFINITY,
        ..Default::default()
    };
    for _ in 0..cfg.max_outer_iter {
        let inner = minimize_loss(obs, system, &w, &theta, free, cfg)?;
        let diff = theta
            .to_flat()
            .iter()
            .zip(inner.theta.to_flat())
            .map(|(&a, b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt();
        theta = inner.theta;
        let weight = weight_matrix(&obs.omega(&system.expected(&theta, cfg.kernel)))?;
        diag.outer_iterations += 1;
        diag.inner_iterations.push(inner.iterations);
        diag.final_diff = diff.as_f64();
        diag.condition_numbers
            .push(Some(weight.condition.as_f64()).filter(|c| c.is_finite()));
        diag.pseudo_inverse |= weight.pseudo_inverse;
        diag.weight_rank = weight.rank;
        w = weight.matrix;
        if diff < T::lit(cfg.outer_tol) {
            diag.converged = true;
            break;
        }
    }
    let m = obs.moments(&system.expected(&theta, cfg.kernel));
    diag.final_loss = m.dot(&(&w * &m)).as_f64();
    Ok(Outer {
        theta,
        w,
        diagnostics: diag,
    })
}

fn min_eigenvalue<T: Real>(r: &CorrelationParams<T>) -> f64 {
    let (vals, _) = T::sym_eigen(&r.to_matrix());
    vals.iter()
        .map(|v| v.as_f64())
        .fold(f64::INFINITY, f64::min)
}

fn submatrix<T: Real>(m: &DMatrix<T>, rows: &[usize], cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn columns<T: Real>(m: &DMatrix<T>, cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

fn symmetrize<T: Real>(m: DMatrix<T>) -> DMatrix<T> {
    (&m + m.transpose()) * T::lit(0.5)
}

fn starting_point<T: Real>(data: &MixedDataset<T>) -> Result<ParamVector<T>> {
    ParamVector::new(estimate_thresholds(data)?, initial_correlations(data)?)
}

/// Thresholds and correlations move together; `Var(θ̂) = (G'WG)⁻¹/n`.
pub fn fit_one_step<T: Real>(
    data: &MixedDataset<T>,
    system: &EquationSystem,
    cfg: &FitConfig,
) -> Result<EstimationResult<T>> {
    cfg.validate()?;
    check_shape(data, system)?;
    let obs = ObservedMoments::new(data, system);
    let free = system.free_params();
    let mut out = iterate(&obs, system, starting_point(data)?, &free, cfg)?;

    let g = columns(&system.gradient(&out.theta, cfg.kernel), &free);
    let info = g.transpose() * &out.w * &g;
    let inv = T::inverse(&symmetrize(info)).ok_or(Error::SingularMatrix("G'WG"))?;
    let var_theta = symmetrize(inv) / T::lit(data.n() as f64);
    let nt = system.threshold_params().len();
    let idx: Vec<usize> = (nt..free.len()).collect();
    let var_r = submatrix(&var_theta, &idx, &idx);
    out.diagnostics.min_eigenvalue = min_eigenvalue(&out.theta.correlations);
    Ok(EstimationResult {
        correlations: out.theta.correlations,
        thresholds: out.theta.thresholds,
        estimated: system.active_coefficients().to_vec(),
        var_r,
        var_theta: Some(var_theta),
        n: data.n(),
        diagnostics: out.diagnostics,
    })
}

/// Thresholds fixed at their closed form; correlations from the reduced
/// system; covariance per `cfg.covariance`.
pub fn fit_two_step<T: Real>(
    data: &MixedDataset<T>,
    system: &EquationSystem,
    cfg: &FitConfig,
) -> Result<EstimationResult<T>> {
    cfg.validate()?;
    check_shape(data, system)?;
    let gsys = system.correlation_part();
    let obs = ObservedMoments::new(data, &gsys);
    let coef = gsys.coefficient_params();
    let mut out = iterate(&obs, &gsys, starting_point(data)?, &coef, cfg)?;
    let var_r = two_step_covariance(data, system, &out.theta, &out.w, cfg)?;
    out.diagnostics.min_eigenvalue = min_eigenvalue(&out.theta.correlations);
    Ok(EstimationResult {
        correlations: out.theta.correlations,
        thresholds: out.theta.thresholds,
        estimated: system.active_coefficients().to_vec(),
        var_r,
        var_theta: None,
        n: data.n(),
        diagnostics: out.diagnostics,
    })
}

fn two_step_covariance<T: Real>(
    data: &MixedDataset<T>,
    system: &EquationSystem,
    theta: &ParamVector<T>,
    w: &DMatrix<T>,
    cfg: &FitConfig,
) -> Result<DMatrix<T>> {
    let gsys = system.correlation_part();
    let hsys = system.threshold_part();
    let coef = gsys.coefficient_params();
    let thr = system.threshold_params();
    let n = T::lit(data.n() as f64);

    let g = gsys.gradient(theta, cfg.kernel);
    let g22 = columns(&g, &coef);
    let lambda = T::inverse(&symmetrize(g22.transpose() * w * &g22))
        .ok_or(Error::SingularMatrix("G22'WG22"))?;
    if thr.is_empty() {
        return Ok(symmetrize(lambda) / n);
    }
    let g21 = columns(&g, &thr);
    let g11 = columns(&hsys.gradient(theta, cfg.kernel), &thr);
    let g11_inv = T::inverse(&g11).ok_or(Error::SingularMatrix("G11"))?;

    let gamma = g22.transpose() * w * &g21;
    let sigma = sigma_for_fit(data, system, theta, cfg.kernel);
    let middle = match cfg.covariance {
        CovarianceVariant::Plain => sigma,
        CovarianceVariant::Corrected => &g11_inv * sigma * g11_inv.transpose(),
    };
    let v = &lambda + &lambda * &gamma * middle * gamma.transpose() * &lambda;
    Ok(symmetrize(v) / n)
}

/// `Σ = Var(h)` under the model: multinomial within a variable, the
/// bivariate cell probability minus the product of margins across variables.
///
/// Rows and columns follow the retained threshold equations of `system`.
pub fn compute_sigma<T: Real>(
    theta: &ParamVector<T>,
    system: &EquationSystem,
    kernel: CdfKernel,
) -> DMatrix<T> {
    sigma_with(theta, system, kernel, |_, _, _, _| None)
}

/// `compute_sigma`, except that pairs whose polychoric coefficient is not
/// being estimated use the observed joint proportion.
fn sigma_for_fit<T: Real>(
    data: &MixedDataset<T>,
    system: &EquationSystem,
    theta: &ParamVector<T>,
    kernel: CdfKernel,
) -> DMatrix<T> {
    let c = system.layout().c();
    let n = T::lit(data.n() as f64);
    sigma_with(theta, system, kernel, |i, j, k, l| {
        let coef = system.layout().index_of(c + i, c + j)?;
        if system.active_coefficients().contains(&coef) {
            return None;
        }
        let (xi, xj) = (data.ordinal(i), data.ordinal(j));
        let count = xi
            .iter()
            .zip(xj)
            .filter(|&(&a, &b)| a == k && b == l)
            .count();
        Some(T::lit(count as f64) / n)
    })
}

fn sigma_with<T: Real>(
    theta: &ParamVector<T>,
    system: &EquationSystem,
    kernel: CdfKernel,
    joint_override: impl Fn(usize, usize, usize, usize) -> Option<T>,
) -> DMatrix<T> {
    let hsys = system.threshold_part();
    let a = &theta.thresholds;
    let eqs: Vec<(usize, usize)> = hsys
        .equations()
        .iter()
        .map(|e| match *e {
            Equation::Threshold { var, category } => (var, category),
            _ => unreachable!("threshold part holds only threshold equations"),
        })
        .collect();
    let p = |i: usize, k: usize| {
        crate::normal::norm_cdf(a.cut(i, k)) - crate::normal::norm_cdf(a.cut(i, k - 1))
    };
    let c = system.layout().c();
    let q = eqs.len();
    let mut sigma = DMatrix::zeros(q, q);
    for r in 0..q {
        for s in 0..=r {
            let ((i, k), (j, l)) = (eqs[r], eqs[s]);
            let v = if i == j {
                let pk = p(i, k);
                if k == l {
                    pk - pk * pk
                } else {
                    -pk * p(j, l)
                }
            } else {
                let (lo, hi, kl, kh) = if i < j { (i, j, k, l) } else { (j, i, l, k) };
                let joint = joint_override(lo, hi, kl, kh).unwrap_or_else(|| {
                    let coef = system
                        .layout()
                        .index_of(c + hi, c + lo)
                        .expect("every ordinal pair has a coefficient");
                    let rho = theta.correlations.get(coef);
                    let f = |x: usize, y: usize| kernel.cdf(a.cut(lo, x), a.cut(hi, y), rho);
                    f(kl, kh) - f(kl, kh - 1) - f(kl - 1, kh) + f(kl - 1, kh - 1)
                });
                joint - p(i, k) * p(j, l)
            };
            sigma[(r, s)] = v;
            sigma[(s, r)] = v;
        }
    }
    sigma
}
