//! The blocked moment-equation system.
//!
//! Every moment function has the form `u(X; θ) = s(X) - μ(θ)`: an observed
//! statistic of one sample (an indicator, a cross product, or a product of
//! the two) minus its model expectation. The observed part never depends on
//! θ, so it is tabulated once per dataset and only `μ(θ)` and its Jacobian
//! are recomputed while optimizing.

use crate::error::{Error, Result};
use crate::model::{
    CoefficientKind, CoefficientLayout, MixedDataset, ParamVector, VariableKind, VariableSpec,
};
use crate::normal::{norm_cdf, norm_pdf, CdfKernel};
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Which equations each correlation block keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemMode {
    /// All non-redundant equations.
    #[default]
    Max,
    /// One equation per correlation.
    Min,
    /// Max retention restricted to an explicit list of coefficients.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Equation {
    /// `I_k(X_var) - (Φ(a_k) - Φ(a_{k-1}))`
    Threshold { var: usize, category: usize },
    /// `Y_first·Y_second - ρ`
    Pearson {
        coef: usize,
        first: usize,
        second: usize,
    },
    /// `Y_cont·I_k(X_ord) - ρ·ξ_k`
    Polyserial {
        coef: usize,
        cont: usize,
        ord: usize,
        category: usize,
    },
    /// `I_kl(X_first, X_second) - Φ_kl(ρ)`, with `first < second`.
    Polychoric {
        coef: usize,
        first: usize,
        second: usize,
        k: usize,
        l: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Threshold { var: usize },
    Pearson { coef: usize },
    Polyserial { coef: usize },
    Polychoric { coef: usize },
}

/// The complete equation set of one parameter group together with the
/// retention mask left after redundancy removal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquationBlock {
    pub kind: BlockKind,
    pub equations: Vec<Equation>,
    pub retained: Vec<bool>,
}

impl EquationBlock {
    pub fn retained_count(&self) -> usize {
        self.retained.iter().filter(|&&r| r).count()
    }

    pub fn retained_equations(&self) -> impl Iterator<Item = &Equation> {
        self.equations
            .iter()
            .zip(&self.retained)
            .filter_map(|(e, &r)| r.then_some(e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquationSystem {
    categories: Vec<usize>,
    layout: CoefficientLayout,
    mode: SystemMode,
    blocks: Vec<EquationBlock>,
    active_thresholds: Vec<bool>,
    active_coefs: Vec<usize>,
    equations: Vec<Equation>,
}

/// Builds the equation system for the variables in `specs` (continuous
/// variables first).
///
/// `pairs` restricts the correlation blocks to the listed coefficient indices
/// (layout order); thresholds of every ordinal variable that appears in a
/// requested pair are always included.
pub fn build_system(
    specs: &[VariableSpec],
    mode: SystemMode,
    pairs: Option<&[usize]>,
) -> Result<EquationSystem> {
    let c = specs.iter().take_while(|s| s.is_continuous()).count();
    let categories: Vec<usize> = specs[c..]
        .iter()
        .map(|s| match s.kind {
            VariableKind::Ordinal { categories } => Ok(categories),
            VariableKind::Continuous => Err(Error::Dimension(
                "continuous variables must precede ordinal ones".into(),
            )),
        })
        .collect::<Result<_>>()?;
    let d = categories.len();
    let layout = CoefficientLayout::new(c, d);

    let active_coefs: Vec<usize> = match pairs {
        None if mode == SystemMode::Custom => {
            return Err(Error::InvalidConfig(
                "a custom system needs an explicit coefficient list".into(),
            ))
        }
        None => (0..layout.len()).collect(),
        Some(list) => {
            if list.is_empty() {
                return Err(Error::UnknownPair("empty coefficient list".into()));
            }
            if let Some(&bad) = list.iter().find(|&&k| k >= layout.len()) {
                return Err(Error::UnknownPair(format!("coefficient index {bad}")));
            }
            let mut v = list.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        }
    };

    let mut active_thresholds = vec![pairs.is_none(); d];
    for &k in &active_coefs {
        let coef = layout.get(k);
        if coef.kind != CoefficientKind::Pearson {
            active_thresholds[coef.row - c] = true;
        }
        if coef.kind == CoefficientKind::Polychoric {
            active_thresholds[coef.col - c] = true;
        }
    }

    let min = mode == SystemMode::Min;
    let mut blocks = Vec::new();
    for (var, &s) in categories.iter().enumerate() {
        if !active_thresholds[var] {
            continue;
        }
        let equations: Vec<_> = (1..=s)
            .map(|category| Equation::Threshold { var, category })
            .collect();
        let retained = (1..=s).map(|k| k < s).collect();
        blocks.push(EquationBlock {
            kind: BlockKind::Threshold { var },
            equations,
            retained,
        });
    }

    // Lowest-indexed ordinal partner of each continuous variable keeps the
    // full polyserial set.
    let mut full_partner: Vec<Option<usize>> = vec![None; c];
    for &k in &active_coefs {
        let coef = layout.get(k);
        if coef.kind == CoefficientKind::Polyserial {
            let slot = &mut full_partner[coef.col];
            let ord = coef.row - c;
            *slot = Some(slot.map_or(ord, |o: usize| o.min(ord)));
        }
    }

    for &k in &active_coefs {
        let coef = layout.get(k);
        let block = match coef.kind {
            CoefficientKind::Pearson => EquationBlock {
                kind: BlockKind::Pearson { coef: k },
                equations: vec![Equation::Pearson {
                    coef: k,
                    first: coef.col,
                    second: coef.row,
                }],
                retained: vec![true],
            },
            CoefficientKind::Polyserial => {
                let (cont, ord) = (coef.col, coef.row - c);
                let s = categories[ord];
                let full = !min && full_partner[cont] == Some(ord);
                EquationBlock {
                    kind: BlockKind::Polyserial { coef: k },
                    equations: (1..=s)
                        .map(|category| Equation::Polyserial {
                            coef: k,
                            cont,
                            ord,
                            category,
                        })
                        .collect(),
                    retained: (1..=s)
                        .map(|cat| if min { cat == 1 } else { full || cat < s })
                        .collect(),
                }
            }
            CoefficientKind::Polychoric => {
                let (first, second) = (coef.col - c, coef.row - c);
                let (s1, s2) = (categories[first], categories[second]);
                let mut equations = Vec::with_capacity(s1 * s2);
                let mut retained = Vec::with_capacity(s1 * s2);
                for kk in 1..=s1 {
                    for l in 1..=s2 {
                        equations.push(Equation::Polychoric {
                            coef: k,
                            first,
                            second,
                            k: kk,
                            l,
                        });
                        retained.push(if min {
                            kk == 1 && l == 1
                        } else {
                            !(kk == s1 && l == s2)
                        });
                    }
                }
                EquationBlock {
                    kind: BlockKind::Polychoric { coef: k },
                    equations,
                    retained,
                }
            }
        };
        blocks.push(block);
    }

    let system = EquationSystem::from_blocks(
        categories,
        layout,
        mode,
        blocks,
        active_thresholds,
        active_coefs,
    );
    system.check_coverage()?;
    Ok(system)
}

impl EquationSystem {
    fn from_blocks(
        categories: Vec<usize>,
        layout: CoefficientLayout,
        mode: SystemMode,
        blocks: Vec<EquationBlock>,
        active_thresholds: Vec<bool>,
        active_coefs: Vec<usize>,
    ) -> Self {
        let equations = blocks
            .iter()
            .flat_map(|b| b.retained_equations().copied())
            .collect();
        Self {
            categories,
            layout,
            mode,
            blocks,
            active_thresholds,
            active_coefs,
            equations,
        }
    }

    pub fn mode(&self) -> SystemMode {
        self.mode
    }

    pub fn layout(&self) -> &CoefficientLayout {
        &self.layout
    }

    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn blocks(&self) -> &[EquationBlock] {
        &self.blocks
    }

    /// Retained equations in row order.
    pub fn equations(&self) -> &[Equation] {
        &self.equations
    }

    /// Number of retained equations `q`.
    pub fn len(&self) -> usize {
        self.equations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equations.is_empty()
    }

    pub fn active_coefficients(&self) -> &[usize] {
        &self.active_coefs
    }

    pub fn active_thresholds(&self) -> &[bool] {
        &self.active_thresholds
    }

    pub fn threshold_count(&self) -> usize {
        self.categories.iter().map(|s| s - 1).sum()
    }

    /// Length of the full parameter vector `θ = (a, R)`.
    pub fn param_count(&self) -> usize {
        self.threshold_count() + self.layout.len()
    }

    pub fn threshold_offset(&self, var: usize) -> usize {
        self.categories[..var].iter().map(|s| s - 1).sum()
    }

    /// Flat index of `a_{var,k}`, `1 ≤ k ≤ s - 1`.
    fn threshold_param(&self, var: usize, k: usize) -> usize {
        self.threshold_offset(var) + k - 1
    }

    fn coef_param(&self, coef: usize) -> usize {
        self.threshold_count() + coef
    }

    /// Flat indices of the thresholds this system estimates.
    pub fn threshold_params(&self) -> Vec<usize> {
        (0..self.categories.len())
            .filter(|&v| self.active_thresholds[v])
            .flat_map(|v| (1..self.categories[v]).map(move |k| (v, k)))
            .map(|(v, k)| self.threshold_param(v, k))
            .collect()
    }

    /// Flat indices of the correlations this system estimates.
    pub fn coefficient_params(&self) -> Vec<usize> {
        self.active_coefs
            .iter()
            .map(|&k| self.coef_param(k))
            .collect()
    }

    /// Flat indices of every parameter the system identifies.
    pub fn free_params(&self) -> Vec<usize> {
        let mut v = self.threshold_params();
        v.extend(self.coefficient_params());
        v
    }

    /// Human-readable name of flat parameter `p`.
    pub fn param_label(&self, p: usize, names: &[String]) -> String {
        let t = self.threshold_count();
        if p >= t {
            return self.layout.label(p - t, names);
        }
        let c = self.layout.c();
        let mut var = 0;
        while p >= self.threshold_offset(var) + self.categories[var] - 1 {
            var += 1;
        }
        format!("{}|{}", names[c + var], p - self.threshold_offset(var) + 1)
    }

    /// The same blocks with every equation retained.
    pub fn unpruned(&self) -> Self {
        let blocks = self
            .blocks
            .iter()
            .map(|b| EquationBlock {
                retained: vec![true; b.equations.len()],
                ..b.clone()
            })
            .collect();
        Self::from_blocks(
            self.categories.clone(),
            self.layout.clone(),
            self.mode,
            blocks,
            self.active_thresholds.clone(),
            self.active_coefs.clone(),
        )
    }

    fn filtered(&self, keep_threshold_blocks: bool) -> Self {
        let blocks = self
            .blocks
            .iter()
            .filter(|b| matches!(b.kind, BlockKind::Threshold { .. }) == keep_threshold_blocks)
            .cloned()
            .collect();
        Self::from_blocks(
            self.categories.clone(),
            self.layout.clone(),
            self.mode,
            blocks,
            self.active_thresholds.clone(),
            self.active_coefs.clone(),
        )
    }

    /// Only the correlation blocks (`g`).
    pub fn correlation_part(&self) -> Self {
        self.filtered(false)
    }

    /// Only the threshold blocks (`h`).
    pub fn threshold_part(&self) -> Self {
        self.filtered(true)
    }

    /// Flat parameter indices each retained equation depends on.
    pub fn dependencies(&self, eq: &Equation) -> Vec<usize> {
        let cuts = |var: usize, k: usize| {
            let s = self.categories[var];
            [k.checked_sub(1).filter(|&j| j >= 1), (k < s).then_some(k)]
                .into_iter()
                .flatten()
                .map(move |j| (var, j))
        };
        match *eq {
            Equation::Threshold { var, category } => cuts(var, category)
                .map(|(v, j)| self.threshold_param(v, j))
                .collect(),
            Equation::Pearson { coef, .. } => vec![self.coef_param(coef)],
            Equation::Polyserial {
                coef,
                ord,
                category,
                ..
            } => {
                let mut v: Vec<_> = cuts(ord, category)
                    .map(|(v, j)| self.threshold_param(v, j))
                    .collect();
                v.push(self.coef_param(coef));
                v
            }
            Equation::Polychoric {
                coef,
                first,
                second,
                k,
                l,
            } => {
                let mut v: Vec<_> = cuts(first, k)
                    .chain(cuts(second, l))
                    .map(|(v, j)| self.threshold_param(v, j))
                    .collect();
                v.push(self.coef_param(coef));
                v
            }
        }
    }

    fn check_coverage(&self) -> Result<()> {
        let mut covered = vec![false; self.param_count()];
        for eq in &self.equations {
            for p in self.dependencies(eq) {
                covered[p] = true;
            }
        }
        match self.free_params().into_iter().find(|&p| !covered[p]) {
            Some(p) => Err(Error::UncoveredParameter(format!("#{p}"))),
            None => Ok(()),
        }
    }

    /// Observed part `s(X)` of every retained equation for one sample.
    pub fn observed<T: Real>(&self, y: &[T], x: &[usize]) -> DVector<T> {
        DVector::from_iterator(
            self.len(),
            self.equations.iter().map(|eq| observed_one(eq, y, x)),
        )
    }

    /// Model expectations `μ(θ)` of every retained equation.
    pub fn expected<T: Real>(&self, theta: &ParamVector<T>, kernel: CdfKernel) -> DVector<T> {
        let mut cache = CornerCache::new(self, theta, kernel);
        let a = &theta.thresholds;
        let r = &theta.correlations;
        DVector::from_iterator(
            self.len(),
            self.equations.iter().map(|eq| match *eq {
                Equation::Threshold { var, category } => {
                    norm_cdf(a.cut(var, category)) - norm_cdf(a.cut(var, category - 1))
                }
                Equation::Pearson { coef, .. } => r.get(coef),
                Equation::Polyserial {
                    coef,
                    ord,
                    category,
                    ..
                } => {
                    r.get(coef)
                        * (norm_pdf(a.cut(ord, category - 1)) - norm_pdf(a.cut(ord, category)))
                }
                Equation::Polychoric { coef, k, l, .. } => {
                    let f = cache.grid(coef);
                    f[(k, l)] - f[(k, l - 1)] - f[(k - 1, l)] + f[(k - 1, l - 1)]
                }
            }),
        )
    }

    /// `G = ∂m/∂θ = -∂μ/∂θ`, `q × p` over the full parameter vector.
    pub fn gradient<T: Real>(&self, theta: &ParamVector<T>, kernel: CdfKernel) -> DMatrix<T> {
        let a = &theta.thresholds;
        let r = &theta.correlations;
        let mut g = DMatrix::zeros(self.len(), self.param_count());
        for (row, eq) in self.equations.iter().enumerate() {
            match *eq {
                Equation::Threshold { var, category: k } => {
                    let s = self.categories[var];
                    if k < s {
                        g[(row, self.threshold_param(var, k))] = -norm_pdf(a.cut(var, k));
                    }
                    if k > 1 {
                        g[(row, self.threshold_param(var, k - 1))] = norm_pdf(a.cut(var, k - 1));
                    }
                }
                Equation::Pearson { coef, .. } => {
                    g[(row, self.coef_param(coef))] = -T::one();
                }
                Equation::Polyserial {
                    coef,
                    ord,
                    category: k,
                    ..
                } => {
                    let s = self.categories[ord];
                    let rho = r.get(coef);
                    let (lo, hi) = (a.cut(ord, k - 1), a.cut(ord, k));
                    g[(row, self.coef_param(coef))] = -(norm_pdf(lo) - norm_pdf(hi));
                    if k > 1 {
                        g[(row, self.threshold_param(ord, k - 1))] = rho * lo * norm_pdf(lo);
                    }
                    if k < s {
                        g[(row, self.threshold_param(ord, k))] = -rho * hi * norm_pdf(hi);
                    }
                }
                Equation::Polychoric {
                    coef,
                    first,
                    second,
                    k,
                    l,
                } => {
                    let rho = r.get(coef);
                    let (s1, s2) = (self.categories[first], self.categories[second]);
                    let (a0, a1) = (a.cut(first, k - 1), a.cut(first, k));
                    let (b0, b1) = (a.cut(second, l - 1), a.cut(second, l));
                    let dx = |x: T, y: T| kernel.d_dx(x, y, rho);
                    let dy = |x: T, y: T| kernel.d_dx(y, x, rho);
                    let dr = |x: T, y: T| kernel.d_drho(x, y, rho);
                    if k < s1 {
                        g[(row, self.threshold_param(first, k))] = -(dx(a1, b1) - dx(a1, b0));
                    }
                    if k > 1 {
                        g[(row, self.threshold_param(first, k - 1))] = dx(a0, b1) - dx(a0, b0);
                    }
                    if l < s2 {
                        g[(row, self.threshold_param(second, l))] = -(dy(a1, b1) - dy(a0, b1));
                    }
                    if l > 1 {
                        g[(row, self.threshold_param(second, l - 1))] = dy(a1, b0) - dy(a0, b0);
                    }
                    g[(row, self.coef_param(coef))] =
                        -(dr(a1, b1) - dr(a1, b0) - dr(a0, b1) + dr(a0, b0));
                }
            }
        }
        g
    }
}

fn observed_one<T: Real>(eq: &Equation, y: &[T], x: &[usize]) -> T {
    let ind = |b: bool| if b { T::one() } else { T::zero() };
    match *eq {
        Equation::Threshold { var, category } => ind(x[var] == category),
        Equation::Pearson { first, second, .. } => y[first] * y[second],
        Equation::Polyserial {
            cont,
            ord,
            category,
            ..
        } => {
            if x[ord] == category {
                y[cont]
            } else {
                T::zero()
            }
        }
        Equation::Polychoric {
            first,
            second,
            k,
            l,
            ..
        } => ind(x[first] == k && x[second] == l),
    }
}

/// Bivariate CDF on the `(s₁+1)×(s₂+1)` threshold grid of each polychoric
/// pair, evaluated lazily.
struct CornerCache<'a, T> {
    system: &'a EquationSystem,
    theta: &'a ParamVector<T>,
    kernel: CdfKernel,
    grids: Vec<Option<DMatrix<T>>>,
}

impl<'a, T: Real> CornerCache<'a, T> {
    fn new(system: &'a EquationSystem, theta: &'a ParamVector<T>, kernel: CdfKernel) -> Self {
        Self {
            system,
            theta,
            kernel,
            grids: vec![None; system.layout.len()],
        }
    }

    fn grid(&mut self, coef: usize) -> &DMatrix<T> {
        let (system, theta, kernel) = (self.system, self.theta, self.kernel);
        self.grids[coef].get_or_insert_with(|| {
            let k = system.layout.get(coef);
            let c = system.layout.c();
            let (first, second) = (k.col - c, k.row - c);
            let (s1, s2) = (system.categories[first], system.categories[second]);
            let a = &theta.thresholds;
            let rho = theta.correlations.get(coef);
            DMatrix::from_fn(s1 + 1, s2 + 1, |i, j| {
                kernel.cdf(a.cut(first, i), a.cut(second, j), rho)
            })
        })
    }
}

/// The θ-free part of the sample moments: one row of observed statistics
/// per sample.
#[derive(Debug, Clone)]
pub struct ObservedMoments<T: Real> {
    stats: DMatrix<T>,
    mean: DVector<T>,
}

impl<T: Real> ObservedMoments<T> {
    pub fn new(data: &MixedDataset<T>, system: &EquationSystem) -> Self {
        let n = data.n();
        let q = system.len();
        let mut y = vec![T::zero(); data.c()];
        let mut x = vec![0usize; data.d()];
        let mut stats = DMatrix::zeros(n, q);
        for row in 0..n {
            for (j, v) in y.iter_mut().enumerate() {
                *v = data.continuous(j)[row];
            }
            for (j, v) in x.iter_mut().enumerate() {
                *v = data.ordinal(j)[row];
            }
            for (col, eq) in system.equations().iter().enumerate() {
                stats[(row, col)] = observed_one(eq, &y, &x);
            }
        }
        let inv_n = T::one() / T::lit(n as f64);
        let mean = DVector::from_iterator(
            q,
            stats
                .column_iter()
                .map(|c| c.iter().copied().sum::<T>() * inv_n),
        );
        Self { stats, mean }
    }

    pub fn n(&self) -> usize {
        self.stats.nrows()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    /// `m(θ) = E_n[u] = E_n[s] - μ(θ)`.
    pub fn moments(&self, expected: &DVector<T>) -> DVector<T> {
        &self.mean - expected
    }

    /// `Ω̂ = E_n[u u']` with `u = s - μ`.
    pub fn omega(&self, expected: &DVector<T>) -> DMatrix<T> {
        let mut centered = self.stats.clone();
        for mut row in centered.row_iter_mut() {
            for (v, &mu) in row.iter_mut().zip(expected.iter()) {
                *v -= mu;
            }
        }
        let inv_n = T::one() / T::lit(self.n() as f64);
        let mut omega = centered.transpose() * &centered;
        omega *= inv_n;
        omega
    }
}

/// Sample moments, gradient and moment covariance at one parameter value.
#[derive(Debug, Clone)]
pub struct MomentEvaluation<T: Real> {
    pub m: DVector<T>,
    pub g: DMatrix<T>,
    pub omega: DMatrix<T>,
}

/// Moment functions of every retained equation for a single sample.
pub fn eval_u<T: Real>(
    y: &[T],
    x: &[usize],
    theta: &ParamVector<T>,
    system: &EquationSystem,
    kernel: impl Into<CdfKernel>,
) -> DVector<T> {
    system.observed(y, x) - system.expected(theta, kernel.into())
}

pub fn eval_moments<T: Real>(
    data: &MixedDataset<T>,
    theta: &ParamVector<T>,
    system: &EquationSystem,
    kernel: impl Into<CdfKernel>,
) -> MomentEvaluation<T> {
    let kernel = kernel.into();
    let obs = ObservedMoments::new(data, system);
    let mu = system.expected(theta, kernel);
    MomentEvaluation {
        m: obs.moments(&mu),
        g: assemble_gradient(theta, system, kernel),
        omega: obs.omega(&mu),
    }
}

/// Jacobian of the sample moments. It does not depend on the data because
/// the observed statistics are free of θ.
pub fn assemble_gradient<T: Real>(
    theta: &ParamVector<T>,
    system: &EquationSystem,
    kernel: impl Into<CdfKernel>,
) -> DMatrix<T> {
    system.gradient(theta, kernel.into())
}

/// Optimal weight matrix `W = Ω̂⁻¹` and how it was obtained.
#[derive(Debug, Clone)]
pub struct WeightMatrix<T: Real> {
    pub matrix: DMatrix<T>,
    /// `λ_max / λ_min` of the input; infinite when singular.
    pub condition: T,
    pub rank: usize,
    /// True when the eigenvalue-thresholded pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

const MAX_CONDITION: f64 = 1e12;
const EIGEN_CUTOFF: f64 = 1e-10;

pub fn weight_matrix<T: Real>(omega: &DMatrix<T>) -> Result<WeightMatrix<T>> {
    let q = omega.nrows();
    if q == 0 || omega.ncols() != q {
        return Err(Error::Dimension(format!(
            "weight input is {}x{}",
            q,
            omega.ncols()
        )));
    }
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    let sym = (omega + omega.transpose()) * T::lit(0.5);
    let (vals, vecs) = T::sym_eigen(&sym);
    let max = vals.iter().copied().fold(T::neg_infinity(), T::max);
    let min = vals.iter().copied().fold(T::infinity(), T::min);
    let condition = if min > T::zero() {
        max / min
    } else {
        T::infinity()
    };
    let pseudo_inverse = !(condition <= T::lit(MAX_CONDITION));
    let cutoff = if pseudo_inverse {
        max * T::lit(EIGEN_CUTOFF)
    } else {
        T::zero()
    };
    let inv: Vec<T> = vals
        .iter()
        .map(|&l| {
            if l > cutoff && l > T::zero() {
                T::one() / l
            } else {
                T::zero()
            }
        })
        .collect();
    let rank = inv.iter().filter(|&&v| v > T::zero()).count();
    if 2 * rank < q {
        return Err(Error::DegenerateWeight { rank, equations: q });
    }
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= inv[j];
    }
    let w = &scaled * vecs.transpose();
    let matrix = (&w + w.transpose()) * T::lit(0.5);
    Ok(WeightMatrix {
        matrix,
        condition,
        rank,
        pseudo_inverse,
    })
}
