//! Variables, datasets, thresholds and the flattened parameter vector.

use crate::error::{Error, Result};
use crate::normal::RHO_BOUND;
use crate::scalar::Real;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Continuous,
    Ordinal { categories: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
}

impl VariableSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Continuous,
        }
    }

    pub fn ordinal(name: impl Into<String>, categories: usize) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Ordinal { categories },
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, VariableKind::Continuous)
    }
}

/// Number of correlations of interest and of threshold (nuisance) parameters.
pub fn param_count(c: usize, d: usize, categories: &[usize]) -> (usize, usize) {
    let m = c + d;
    let interest = m * m.saturating_sub(1) / 2;
    let nuisance = categories.iter().map(|&s| s.saturating_sub(1)).sum();
    (interest, nuisance)
}

/// A validated sample: `c` standardized continuous columns followed by `d`
/// ordinal columns coded `1..=s`.
#[derive(Debug, Clone)]
pub struct MixedDataset<T> {
    specs: Vec<VariableSpec>,
    continuous: Vec<Vec<T>>,
    ordinal: Vec<Vec<usize>>,
    dropped_rows: usize,
}

impl<T: Real> MixedDataset<T> {
    /// Validates and standardizes a row-major table.
    ///
    /// `None` cells mark missing values; such rows are dropped and counted.
    /// Specs may come in any order; the dataset stores continuous variables
    /// first, each group keeping its relative order.
    pub fn ingest(table: &[Vec<Option<f64>>], specs: &[VariableSpec]) -> Result<Self> {
        validate_specs(specs)?;
        let order: Vec<usize> = (0..specs.len())
            .filter(|&i| specs[i].is_continuous())
            .chain((0..specs.len()).filter(|&i| !specs[i].is_continuous()))
            .collect();
        let c = specs.iter().filter(|s| s.is_continuous()).count();

        let mut continuous: Vec<Vec<T>> = vec![Vec::new(); c];
        let mut ordinal: Vec<Vec<usize>> = vec![Vec::new(); specs.len() - c];
        let mut dropped = 0;
        for (r, row) in table.iter().enumerate() {
            if row.len() != specs.len() {
                return Err(Error::RowLength {
                    row: r + 1,
                    found: row.len(),
                    expected: specs.len(),
                });
            }
            if row.iter().any(Option::is_none) {
                dropped += 1;
                continue;
            }
            for (slot, &src) in order.iter().enumerate() {
                let v = row[src].unwrap_or_default();
                let spec = &specs[src];
                if !v.is_finite() {
                    return Err(Error::NonFiniteCell {
                        variable: spec.name.clone(),
                        row: r + 1,
                    });
                }
                match spec.kind {
                    VariableKind::Continuous => continuous[slot].push(T::lit(v)),
                    VariableKind::Ordinal { categories } => {
                        if v.fract() != 0.0 || v < 1.0 || v > categories as f64 {
                            return Err(Error::CodeOutOfRange {
                                variable: spec.name.clone(),
                                row: r + 1,
                                code: v,
                                categories,
                            });
                        }
                        ordinal[slot - c].push(v as usize);
                    }
                }
            }
        }
        let specs = order.iter().map(|&i| specs[i].clone()).collect();
        let mut ds = Self::from_columns(specs, continuous, ordinal)?;
        ds.dropped_rows = dropped;
        Ok(ds)
    }

    /// Builds a dataset from columns already in canonical order
    /// (continuous specs first). Continuous columns are standardized here.
    pub fn from_columns(
        specs: Vec<VariableSpec>,
        continuous: Vec<Vec<T>>,
        ordinal: Vec<Vec<usize>>,
    ) -> Result<Self> {
        Self::build(specs, continuous, ordinal, true)
    }

    /// Like [`from_columns`](Self::from_columns), but continuous columns are
    /// taken to be on the standard scale already (e.g. draws from a model
    /// with unit variances) and are left untouched.
    pub fn from_standard_columns(
        specs: Vec<VariableSpec>,
        continuous: Vec<Vec<T>>,
        ordinal: Vec<Vec<usize>>,
    ) -> Result<Self> {
        Self::build(specs, continuous, ordinal, false)
    }

    fn build(
        specs: Vec<VariableSpec>,
        mut continuous: Vec<Vec<T>>,
        ordinal: Vec<Vec<usize>>,
        rescale: bool,
    ) -> Result<Self> {
        validate_specs(&specs)?;
        let c = specs.iter().take_while(|s| s.is_continuous()).count();
        if specs[c..].iter().any(VariableSpec::is_continuous) {
            return Err(Error::Dimension(
                "continuous variables must precede ordinal ones".into(),
            ));
        }
        if continuous.len() != c || ordinal.len() != specs.len() - c {
            return Err(Error::Dimension(format!(
                "expected {c} continuous and {} ordinal columns",
                specs.len() - c
            )));
        }
        let n = continuous
            .first()
            .map(Vec::len)
            .or_else(|| ordinal.first().map(Vec::len))
            .unwrap_or(0);
        if continuous.iter().any(|col| col.len() != n) || ordinal.iter().any(|col| col.len() != n) {
            return Err(Error::Dimension("columns differ in length".into()));
        }
        if n < 2 {
            return Err(Error::TooFewRows(n));
        }

        for (col, spec) in continuous.iter_mut().zip(&specs) {
            if col.iter().any(|v| !v.is_finite()) {
                let row = col.iter().position(|v| !v.is_finite()).unwrap_or(0) + 1;
                return Err(Error::NonFiniteCell {
                    variable: spec.name.clone(),
                    row,
                });
            }
            if rescale {
                standardize(col).ok_or_else(|| Error::ZeroVariance(spec.name.clone()))?;
            }
        }
        for (col, spec) in ordinal.iter().zip(&specs[c..]) {
            let s = match spec.kind {
                VariableKind::Ordinal { categories } => categories,
                VariableKind::Continuous => unreachable!(),
            };
            let mut counts = vec![0usize; s];
            for (r, &code) in col.iter().enumerate() {
                if code < 1 || code > s {
                    return Err(Error::CodeOutOfRange {
                        variable: spec.name.clone(),
                        row: r + 1,
                        code: code as f64,
                        categories: s,
                    });
                }
                counts[code - 1] += 1;
            }
            if let Some(k) = counts.iter().position(|&n| n == 0) {
                return Err(Error::EmptyCategory {
                    variable: spec.name.clone(),
                    category: k + 1,
                });
            }
        }
        Ok(Self {
            specs,
            continuous,
            ordinal,
            dropped_rows: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.continuous
            .first()
            .map(Vec::len)
            .or_else(|| self.ordinal.first().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn c(&self) -> usize {
        self.continuous.len()
    }

    pub fn d(&self) -> usize {
        self.ordinal.len()
    }

    pub fn specs(&self) -> &[VariableSpec] {
        &self.specs
    }

    pub fn names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    /// Category counts `sᵢ` of the ordinal variables.
    pub fn categories(&self) -> Vec<usize> {
        self.specs[self.c()..]
            .iter()
            .map(|s| match s.kind {
                VariableKind::Ordinal { categories } => categories,
                VariableKind::Continuous => 0,
            })
            .collect()
    }

    pub fn continuous(&self, i: usize) -> &[T] {
        &self.continuous[i]
    }

    pub fn ordinal(&self, i: usize) -> &[usize] {
        &self.ordinal[i]
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub(crate) fn set_dropped_rows(&mut self, dropped: usize) {
        self.dropped_rows = dropped;
    }

    /// Observed proportion of each category of ordinal variable `i`.
    pub fn proportions(&self, i: usize) -> Vec<T> {
        let s = self.categories()[i];
        let mut counts = vec![0usize; s];
        for &code in &self.ordinal[i] {
            counts[code - 1] += 1;
        }
        let n = T::lit(self.n() as f64);
        counts.into_iter().map(|k| T::lit(k as f64) / n).collect()
    }

    /// A copy whose rows are reordered by `perm` (a permutation of `0..n`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            specs: self.specs.clone(),
            continuous: self
                .continuous
                .iter()
                .map(|col| perm.iter().map(|&r| col[r]).collect())
                .collect(),
            ordinal: self
                .ordinal
                .iter()
                .map(|col| perm.iter().map(|&r| col[r]).collect())
                .collect(),
            dropped_rows: self.dropped_rows,
        }
    }
}

fn validate_specs(specs: &[VariableSpec]) -> Result<()> {
    let mut seen = HashSet::new();
    for s in specs {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::DuplicateName(s.name.clone()));
        }
        if let VariableKind::Ordinal { categories } = s.kind {
            if categories < 2 {
                return Err(Error::TooFewCategories(s.name.clone()));
            }
        }
    }
    if specs.len() < 2 {
        return Err(Error::Dimension(
            "at least two variables are required".into(),
        ));
    }
    Ok(())
}

/// Centers and scales to unit sample sd (divisor n - 1). `None` on zero variance.
fn standardize<T: Real>(col: &mut [T]) -> Option<()> {
    let n = T::lit(col.len() as f64);
    let mean = col.iter().copied().sum::<T>() / n;
    let ss: T = col.iter().map(|&v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - T::one())).sqrt();
    if !(sd > T::zero()) {
        return None;
    }
    for v in col.iter_mut() {
        *v = (*v - mean) / sd;
    }
    Some(())
}

/// Cut points `a_{i,1} < … < a_{i,s-1}` of each ordinal variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet<T> {
    cuts: Vec<Vec<T>>,
}

impl<T: Real> ThresholdSet<T> {
    pub fn new(cuts: Vec<Vec<T>>) -> Result<Self> {
        for (i, v) in cuts.iter().enumerate() {
            let finite = v.iter().all(|a| a.is_finite());
            let increasing = v.windows(2).all(|w| w[0] < w[1]);
            if v.is_empty() || !finite || !increasing {
                return Err(Error::ThresholdOrder { variable: i });
            }
        }
        Ok(Self { cuts })
    }

    pub fn variables(&self) -> usize {
        self.cuts.len()
    }

    pub fn categories(&self, i: usize) -> usize {
        self.cuts[i].len() + 1
    }

    pub fn values(&self, i: usize) -> &[T] {
        &self.cuts[i]
    }

    /// `a_{i,k}` for `k in 0..=s`, with `a_{i,0} = -∞` and `a_{i,s} = +∞`.
    #[inline]
    pub fn cut(&self, i: usize, k: usize) -> T {
        let v = &self.cuts[i];
        if k == 0 {
            T::neg_infinity()
        } else if k > v.len() {
            T::infinity()
        } else {
            v[k - 1]
        }
    }

    pub fn len(&self) -> usize {
        self.cuts.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offset of variable `i` in the flattened threshold vector.
    pub fn offset(&self, i: usize) -> usize {
        self.cuts[..i].iter().map(Vec::len).sum()
    }

    pub fn flat(&self) -> Vec<T> {
        self.cuts.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientKind {
    Pearson,
    Polyserial,
    Polychoric,
}

impl fmt::Display for CoefficientKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoefficientKind::Pearson => "pearson",
            CoefficientKind::Polyserial => "polyserial",
            CoefficientKind::Polychoric => "polychoric",
        })
    }
}

/// One strict-lower-triangle entry `(row, col)`, `row > col`, of the
/// `(c+d)×(c+d)` correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coefficient {
    pub kind: CoefficientKind,
    pub row: usize,
    pub col: usize,
}

/// Ordering of the correlations: the Pearson lower triangle by columns, then
/// the ordinal-by-continuous block by columns, then the polychoric lower
/// triangle by columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoefficientLayout {
    c: usize,
    d: usize,
    coefs: Vec<Coefficient>,
}

impl CoefficientLayout {
    pub fn new(c: usize, d: usize) -> Self {
        let mut coefs = Vec::new();
        for j in 0..c {
            for i in j + 1..c {
                coefs.push(Coefficient {
                    kind: CoefficientKind::Pearson,
                    row: i,
                    col: j,
                });
            }
        }
        for j in 0..c {
            for i in 0..d {
                coefs.push(Coefficient {
                    kind: CoefficientKind::Polyserial,
                    row: c + i,
                    col: j,
                });
            }
        }
        for j in 0..d {
            for i in j + 1..d {
                coefs.push(Coefficient {
                    kind: CoefficientKind::Polychoric,
                    row: c + i,
                    col: c + j,
                });
            }
        }
        Self { c, d, coefs }
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.coefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefs.is_empty()
    }

    pub fn get(&self, k: usize) -> Coefficient {
        self.coefs[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Coefficient> {
        self.coefs.iter()
    }

    /// Index of the coefficient at matrix position `(a, b)` in either order.
    pub fn index_of(&self, a: usize, b: usize) -> Option<usize> {
        let (row, col) = if a > b { (a, b) } else { (b, a) };
        self.coefs.iter().position(|k| k.row == row && k.col == col)
    }

    pub fn label(&self, k: usize, names: &[String]) -> String {
        let coef = self.coefs[k];
        // Continuous partner first, lower-indexed ordinal first.
        format!("{}~{}", names[coef.col], names[coef.row])
    }
}

/// Correlation values in [`CoefficientLayout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationParams<T> {
    layout: CoefficientLayout,
    values: Vec<T>,
}

impl<T: Real> CorrelationParams<T> {
    pub fn new(layout: CoefficientLayout, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Dimension(format!(
                "{} correlations given, layout has {}",
                values.len(),
                layout.len()
            )));
        }
        if let Some(v) = values
            .iter()
            .find(|v| v.is_nan() || v.abs() > T::lit(RHO_BOUND))
        {
            return Err(Error::SingularCorrelation(v.as_f64()));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &CoefficientLayout {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, k: usize) -> T {
        self.values[k]
    }

    fn range(&self, kind: CoefficientKind) -> &[T] {
        let start = self.layout.iter().position(|k| k.kind == kind);
        match start {
            Some(s) => {
                let len = self.layout.iter().filter(|k| k.kind == kind).count();
                &self.values[s..s + len]
            }
            None => &[],
        }
    }

    pub fn rho_yy(&self) -> &[T] {
        self.range(CoefficientKind::Pearson)
    }

    pub fn rho_yx(&self) -> &[T] {
        self.range(CoefficientKind::Polyserial)
    }

    pub fn rho_xx(&self) -> &[T] {
        self.range(CoefficientKind::Polychoric)
    }

    /// Symmetric matrix with unit diagonal.
    pub fn to_matrix(&self) -> DMatrix<T> {
        let m = self.layout.c + self.layout.d;
        let mut r = DMatrix::identity(m, m);
        for (coef, &v) in self.layout.iter().zip(&self.values) {
            r[(coef.row, coef.col)] = v;
            r[(coef.col, coef.row)] = v;
        }
        r
    }

    /// Reads the strict lower triangle of `r`.
    pub fn from_matrix(c: usize, d: usize, r: &DMatrix<T>) -> Result<Self> {
        if r.nrows() != c + d || r.ncols() != c + d {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, expected {}x{}",
                r.nrows(),
                r.ncols(),
                c + d,
                c + d
            )));
        }
        let layout = CoefficientLayout::new(c, d);
        let values = layout.iter().map(|k| r[(k.row, k.col)]).collect();
        Self::new(layout, values)
    }
}

/// `θ = (a, R)`: all thresholds, then all correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    pub thresholds: ThresholdSet<T>,
    pub correlations: CorrelationParams<T>,
}

impl<T: Real> ParamVector<T> {
    pub fn new(thresholds: ThresholdSet<T>, correlations: CorrelationParams<T>) -> Result<Self> {
        if thresholds.variables() != correlations.layout().d() {
            return Err(Error::Dimension(format!(
                "{} threshold vectors for {} ordinal variables",
                thresholds.variables(),
                correlations.layout().d()
            )));
        }
        Ok(Self {
            thresholds,
            correlations,
        })
    }

    pub fn len(&self) -> usize {
        self.thresholds.len() + self.correlations.values().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut v = self.thresholds.flat();
        v.extend_from_slice(self.correlations.values());
        v
    }

    /// Same shape, new values; validates ordering and the correlation box.
    pub fn with_flat(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.len()
            )));
        }
        let mut cuts = Vec::with_capacity(self.thresholds.variables());
        let mut pos = 0;
        for i in 0..self.thresholds.variables() {
            let len = self.thresholds.values(i).len();
            cuts.push(flat[pos..pos + len].to_vec());
            pos += len;
        }
        Ok(Self {
            thresholds: ThresholdSet::new(cuts)?,
            correlations: CorrelationParams::new(
                self.correlations.layout().clone(),
                flat[pos..].to_vec(),
            )?,
        })
    }
}
