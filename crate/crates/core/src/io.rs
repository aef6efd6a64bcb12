//! File formats and the fit/simulate workflows behind the command line.

use crate::error::{Error, Result};
use crate::estimator::{
    fit_with, CovarianceVariant, Diagnostics, EstimationResult, FitConfig, Method,
};
use crate::model::{CoefficientKind, MixedDataset, VariableSpec};
use crate::moments::{build_system, SystemMode};
use crate::normal::{CdfKernel, LegendreOrder};
use crate::simulation::{render_table, run_study, SimDesign, SimReport};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

/// A CSV file as read: header plus numeric cells, `None` where missing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na")
}

/// Reads comma-separated data with a mandatory header row. Empty cells and
/// `NA` are missing values; anything else must parse as a number.
pub fn read_csv(reader: impl Read) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Parse {
            line: 1,
            message: "missing header row".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(line, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                if is_missing(cell) {
                    return Ok(None);
                }
                cell.trim()
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::Parse {
                        line,
                        message: format!(
                            "column '{}': '{}' is not a number",
                            headers[j],
                            cell.trim()
                        ),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(RawTable { headers, rows })
}

pub fn read_csv_file(path: &Path) -> Result<RawTable> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(std::io::BufReader::new(file))
}

/// Writes the table back in the same dialect; missing cells become `NA`.
pub fn write_csv(table: &RawTable, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&table.headers).map_err(io)?;
    for row in &table.rows {
        w.write_record(
            row.iter()
                .map(|c| c.map_or_else(|| "NA".to_string(), |v| v.to_string())),
        )
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrdinalColumn {
    pub name: String,
    /// Declared category count; `None` infers it from the data.
    pub categories: Option<usize>,
}

impl OrdinalColumn {
    /// Parses `name:s` or `name:infer`; a bare name means `infer`.
    pub fn parse(text: &str) -> Result<Self> {
        let (name, count) = match text.rsplit_once(':') {
            Some((n, c)) => (n.trim(), c.trim()),
            None => (text.trim(), "infer"),
        };
        if name.is_empty() {
            return Err(Error::InvalidConfig(format!("bad ordinal column '{text}'")));
        }
        let categories = if count.eq_ignore_ascii_case("infer") {
            None
        } else {
            Some(
                count
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidConfig(format!("bad category count in '{text}'")))?,
            )
        };
        Ok(Self {
            name: name.to_string(),
            categories,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRequest {
    pub data: PathBuf,
    pub continuous: Vec<String>,
    pub ordinal: Vec<OrdinalColumn>,
    pub method: Method,
    pub system: SystemMode,
    /// Variable-name pairs to estimate; all pairs when absent.
    pub pairs: Option<Vec<(String, String)>>,
    pub legendre: LegendreOrder,
    pub covariance: CovarianceVariant,
    /// Cap on weight updates.
    pub max_outer_iter: usize,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

impl FitRequest {
    pub fn new(data: impl Into<PathBuf>) -> Self {
        Self {
            data: data.into(),
            continuous: Vec::new(),
            ordinal: Vec::new(),
            method: Method::TwoStep,
            system: SystemMode::Max,
            pairs: None,
            legendre: LegendreOrder::Third,
            covariance: CovarianceVariant::default(),
            max_outer_iter: FitConfig::default().max_outer_iter,
            out: None,
            format: OutputFormat::Json,
        }
    }

    pub fn config(&self) -> FitConfig {
        FitConfig {
            method: self.method,
            kernel: CdfKernel::Legendre(self.legendre),
            system: self.system,
            covariance: self.covariance,
            max_outer_iter: self.max_outer_iter,
            ..FitConfig::default()
        }
    }
}

/// Parses `"Y1:X2,X1:X2"`.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| match p.split_once(':') {
            Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
                Ok((a.trim().to_string(), b.trim().to_string()))
            }
            _ => Err(Error::UnknownPair(p.trim().to_string())),
        })
        .collect()
}

/// How the observed labels of an ordinal column map to codes `1..=s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recoding {
    pub variable: String,
    /// `labels[k - 1]` is the observed label of code `k`.
    pub labels: Vec<f64>,
}

/// A dataset ready for fitting, with the label mapping of each ordinal column.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: MixedDataset<f64>,
    pub recoding: Vec<Recoding>,
}

fn column(table: &RawTable, name: &str) -> Result<usize> {
    table
        .headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::InvalidConfig(format!("no column named '{name}'")))
}

fn recode(name: &str, values: &[f64], declared: Option<usize>) -> Result<Vec<f64>> {
    if let Some((row, &v)) = values.iter().enumerate().find(|(_, v)| v.fract() != 0.0) {
        return Err(Error::CodeOutOfRange {
            variable: name.to_string(),
            row: row + 1,
            code: v,
            categories: declared.unwrap_or(0),
        });
    }
    let distinct: Vec<f64> = values
        .iter()
        .map(|&v| v as i64)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|v| v as f64)
        .collect();
    let min = distinct.first().copied().unwrap_or(1.0);
    let max = distinct.last().copied().unwrap_or(0.0);
    let natural = |s: usize| -> Result<Vec<f64>> {
        let labels: Vec<f64> = (1..=s).map(|k| k as f64).collect();
        if let Some(k) = labels.iter().position(|l| !distinct.contains(l)) {
            return Err(Error::EmptyCategory {
                variable: name.to_string(),
                category: k + 1,
            });
        }
        Ok(labels)
    };
    match declared {
        // Codes already 1..=s.
        Some(s) if min >= 1.0 && max <= s as f64 => natural(s),
        Some(s) if distinct.len() == s => Ok(distinct),
        Some(s) if distinct.len() < s => Err(Error::EmptyCategory {
            variable: name.to_string(),
            category: distinct.len() + 1,
        }),
        Some(s) => {
            let (row, &code) = values
                .iter()
                .enumerate()
                .find(|(_, &v)| v < 1.0 || v > s as f64)
                .expect("some label lies outside 1..=s");
            Err(Error::CodeOutOfRange {
                variable: name.to_string(),
                row: row + 1,
                code,
                categories: s,
            })
        }
        None if min >= 1.0 => natural(max as usize),
        None => Ok(distinct),
    }
}

/// Selects, validates and codes the requested columns. Rows with a missing
/// value in any selected column are dropped.
pub fn prepare(table: &RawTable, request: &FitRequest) -> Result<Prepared> {
    let names: Vec<&str> = request
        .continuous
        .iter()
        .map(String::as_str)
        .chain(request.ordinal.iter().map(|o| o.name.as_str()))
        .collect();
    if names.is_empty() {
        return Err(Error::InvalidConfig("no columns selected".into()));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = names.iter().find(|n| !seen.insert(**n)) {
        return Err(Error::DuplicateName(dup.to_string()));
    }
    let cols: Vec<usize> = names
        .iter()
        .map(|n| column(table, n))
        .collect::<Result<_>>()?;
    for (i, row) in table.rows.iter().enumerate() {
        if row.len() != table.headers.len() {
            return Err(Error::RowLength {
                row: i + 1,
                found: row.len(),
                expected: table.headers.len(),
            });
        }
    }
    let (lines, complete): (Vec<usize>, Vec<&Vec<Option<f64>>>) = table
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| cols.iter().all(|&j| r[j].is_some()))
        .map(|(i, r)| (i + 2, r))
        .unzip();
    let c = request.continuous.len();
    let mut recoding = Vec::new();
    let mut specs: Vec<VariableSpec> = request
        .continuous
        .iter()
        .map(VariableSpec::continuous)
        .collect();
    let mut coded: Vec<Vec<Option<f64>>> = complete
        .iter()
        .map(|r| cols.iter().map(|&j| r[j]).collect())
        .collect();
    for (o, spec) in request.ordinal.iter().enumerate() {
        let values: Vec<f64> = complete
            .iter()
            .map(|r| r[cols[c + o]].unwrap_or(f64::NAN))
            .collect();
        // Report file lines (header is line 1) rather than positions.
        let labels = recode(&spec.name, &values, spec.categories).map_err(|e| match e {
            Error::CodeOutOfRange {
                variable,
                row,
                code,
                categories,
            } => Error::CodeOutOfRange {
                variable,
                row: lines[row - 1],
                code,
                categories,
            },
            other => other,
        })?;
        for (row, &v) in coded.iter_mut().zip(&values) {
            let code = labels.iter().position(|&l| l == v).map_or(0, |k| k + 1);
            row[c + o] = Some(code as f64);
        }
        specs.push(VariableSpec::ordinal(spec.name.clone(), labels.len()));
        recoding.push(Recoding {
            variable: spec.name.clone(),
            labels,
        });
    }
    let mut dataset = MixedDataset::ingest(&coded, &specs)?;
    dataset.set_dropped_rows(table.rows.len() - complete.len());
    Ok(Prepared { dataset, recoding })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub label: String,
    pub kind: CoefficientKind,
    /// Variable names, `first` preceding `second` in canonical order.
    pub first: String,
    pub second: String,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub variable: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub request: FitRequest,
    pub config: FitConfig,
    pub n: usize,
    pub dropped_rows: usize,
    pub coefficients: Vec<CoefficientReport>,
    /// `Var(R̂)` in `coefficients` order.
    pub covariance: Vec<Vec<f64>>,
    pub thresholds: Vec<ThresholdReport>,
    pub recoding: Vec<Recoding>,
    pub diagnostics: Diagnostics,
}

impl FitReport {
    pub fn converged(&self) -> bool {
        self.diagnostics.converged
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per coefficient (with its covariance row), threshold and
    /// diagnostic value.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut header = vec![
            "section".to_string(),
            "name".into(),
            "kind".into(),
            "estimate".into(),
            "std_error".into(),
        ];
        header.extend(self.coefficients.iter().map(|c| format!("cov:{}", c.label)));
        w.write_record(&header).map_err(io)?;
        let k = self.coefficients.len();
        let pad = |mut v: Vec<String>| {
            v.resize(5 + k, String::new());
            v
        };
        for (i, c) in self.coefficients.iter().enumerate() {
            let mut rec = vec![
                "coefficient".to_string(),
                c.label.clone(),
                c.kind.to_string(),
                c.estimate.to_string(),
                c.std_error.to_string(),
            ];
            rec.extend(self.covariance[i].iter().map(f64::to_string));
            w.write_record(&rec).map_err(io)?;
        }
        for t in &self.thresholds {
            for (k, v) in t.values.iter().enumerate() {
                let rec = vec![
                    "threshold".into(),
                    format!("{}|{}", t.variable, k + 1),
                    String::new(),
                    v.to_string(),
                ];
                w.write_record(pad(rec)).map_err(io)?;
            }
        }
        let d = &self.diagnostics;
        for (name, value) in [
            ("converged", (d.converged as u8).to_string()),
            ("outer_iterations", d.outer_iterations.to_string()),
            ("final_diff", d.final_diff.to_string()),
            ("final_loss", d.final_loss.to_string()),
            ("n", self.n.to_string()),
        ] {
            w.write_record(pad(vec![
                "diagnostic".into(),
                name.into(),
                String::new(),
                value,
            ]))
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

fn pair_indices(dataset: &MixedDataset<f64>, pairs: &[(String, String)]) -> Result<Vec<usize>> {
    let names = dataset.names();
    let layout = crate::model::CoefficientLayout::new(dataset.c(), dataset.d());
    pairs
        .iter()
        .map(|(a, b)| {
            let find = |n: &str| names.iter().position(|m| m == n);
            match (find(a), find(b)) {
                (Some(i), Some(j)) if i != j => layout.index_of(i, j),
                _ => None,
            }
            .ok_or_else(|| Error::UnknownPair(format!("{a}:{b}")))
        })
        .collect()
}

/// Runs a fit on an already-read table.
pub fn fit_table(table: &RawTable, request: &FitRequest) -> Result<FitReport> {
    let prepared = prepare(table, request)?;
    let data = &prepared.dataset;
    let cfg = request.config();
    let system = match &request.pairs {
        None => build_system(data.specs(), request.system, None)?,
        Some(p) => {
            let idx = pair_indices(data, p)?;
            let mode = if request.system == SystemMode::Min {
                SystemMode::Min
            } else {
                SystemMode::Custom
            };
            build_system(data.specs(), mode, Some(&idx))?
        }
    };
    let result = fit_with(data, &system, &cfg)?;
    Ok(report(request, cfg, &prepared, &system, &result))
}

fn report(
    request: &FitRequest,
    config: FitConfig,
    prepared: &Prepared,
    system: &crate::moments::EquationSystem,
    result: &EstimationResult<f64>,
) -> FitReport {
    let data = &prepared.dataset;
    let names = data.names();
    let layout = system.layout();
    let se = result.standard_errors();
    let coefficients = result
        .estimated
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let coef = layout.get(k);
            CoefficientReport {
                label: layout.label(k, &names),
                kind: coef.kind,
                first: names[coef.col].clone(),
                second: names[coef.row].clone(),
                estimate: result.correlations.get(k),
                std_error: se[i],
            }
        })
        .collect();
    let c = data.c();
    let thresholds = (0..data.d())
        .filter(|&i| system.active_thresholds()[i])
        .map(|i| ThresholdReport {
            variable: names[c + i].clone(),
            values: result.thresholds.values(i).to_vec(),
        })
        .collect();
    let k = result.var_r.nrows();
    FitReport {
        schema_version: SCHEMA_VERSION,
        request: request.clone(),
        config,
        n: data.n(),
        dropped_rows: data.dropped_rows(),
        coefficients,
        covariance: (0..k)
            .map(|i| (0..k).map(|j| result.var_r[(i, j)]).collect())
            .collect(),
        thresholds,
        recoding: prepared
            .recoding
            .iter()
            .filter(|r| {
                let i = names.iter().position(|n| *n == r.variable).unwrap_or(0);
                i >= c && system.active_thresholds()[i - c]
            })
            .cloned()
            .collect(),
        diagnostics: result.diagnostics.clone(),
    }
}

/// Reads the data file, fits, and writes the report when an output path is
/// given. The report is returned even when the fit did not converge.
pub fn cmd_fit(request: &FitRequest) -> Result<FitReport> {
    let table = read_csv_file(&request.data)?;
    let report = fit_table(&table, request)?;
    let text = match request.format {
        OutputFormat::Json => report.to_json()?,
        OutputFormat::Csv => report.to_csv()?,
    };
    match &request.out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
        }
        None => print!("{text}"),
    }
    Ok(report)
}

/// Runs a study and writes `<name>.json` and `<name>.txt` into `out`.
pub fn cmd_simulate(
    design: &Path,
    out: &Path,
    threads: Option<usize>,
    seed: Option<u64>,
) -> Result<SimReport> {
    let text = std::fs::read_to_string(design)
        .map_err(|e| Error::Io(format!("{}: {e}", design.display())))?;
    let mut d = SimDesign::from_json(&text)?;
    if threads.is_some() {
        d.threads = threads;
    }
    if let Some(s) = seed {
        d.seed = s;
    }
    if d.name.is_empty() {
        d.name = design
            .file_stem()
            .map_or_else(|| "study".into(), |s| s.to_string_lossy().into_owned());
    }
    let report = run_study(&d)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join(format!("{}.json", d.name)),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(out.join(format!("{}.txt", d.name)), render_table(&report))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_missing_markers_and_reports_lines() {
        let t = read_csv("a,b\n1,NA\n,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(
            t.rows,
            vec![
                vec![Some(1.0), None],
                vec![None, Some(2.0)],
                vec![Some(3.0), Some(4.0)]
            ]
        );
        let err = read_csv("a,b\n1,2\n3,x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn ordinal_column_syntax() {
        assert_eq!(
            OrdinalColumn::parse("x:3").unwrap(),
            OrdinalColumn {
                name: "x".into(),
                categories: Some(3)
            }
        );
        assert_eq!(OrdinalColumn::parse("x:infer").unwrap().categories, None);
        assert_eq!(OrdinalColumn::parse("x").unwrap().categories, None);
        assert!(OrdinalColumn::parse("x:three").is_err());
        assert_eq!(
            parse_pairs("Y1:X2, X1:X2").unwrap(),
            vec![("Y1".into(), "X2".into()), ("X1".into(), "X2".into())]
        );
        assert!(parse_pairs("Y1X2").is_err());
    }

    #[test]
    fn recoding_rules() {
        assert_eq!(
            recode("x", &[1.0, 2.0, 3.0], None).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(
            recode("x", &[10.0, 20.0, 10.0], Some(2)).unwrap(),
            vec![10.0, 20.0]
        );
        assert_eq!(
            recode("x", &[0.0, 1.0, 2.0], None).unwrap(),
            vec![0.0, 1.0, 2.0]
        );
        assert!(matches!(
            recode("x", &[1.0, 3.0], None),
            Err(Error::EmptyCategory { category: 2, .. })
        ));
        assert!(matches!(
            recode("x", &[1.0, 3.0], Some(3)),
            Err(Error::EmptyCategory { category: 2, .. })
        ));
        assert!(matches!(
            recode("x", &[1.5, 2.0], None),
            Err(Error::CodeOutOfRange { .. })
        ));
        assert!(matches!(
            recode("x", &[1.0, 2.0, 7.0], Some(2)),
            Err(Error::CodeOutOfRange { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = RawTable {
            headers: vec!["a".into(), "b".into()],
            rows: vec![vec![Some(0.1 + 0.2), None], vec![Some(-1e-300), Some(3.0)]],
        };
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), t);
    }
}
