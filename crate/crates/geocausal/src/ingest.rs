//! CSV ingestion and export of spatial datasets.
//!
//! Files need a header row. Values are parsed as `f64` with `.` as the
//! decimal separator; empty cells and `NA` count as missing and reject the
//! row. Exported numbers use the shortest representation that parses back
//! to the same bits, so export followed by ingest is lossless.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use geocausal_core::bootstrap::replicate_rng;
use geocausal_core::geo_field::Coordinates;
use geocausal_core::linalg::Matrix;
use geocausal_core::spatial_model::SpatialDataset;
use rand::Rng;

use crate::error::{CliError, CliResult};

/// Which CSV columns hold the coordinates, treatment, outcome and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMapping {
    pub x: String,
    pub y: String,
    pub treatment: String,
    pub outcome: String,
    /// Empty means every other column.
    pub covariates: Vec<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            x: "x".into(),
            y: "y".into(),
            treatment: "treatment".into(),
            outcome: "outcome".into(),
            covariates: Vec::new(),
        }
    }
}

/// How to handle repeated coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DuplicatePolicy {
    /// Reject the file.
    #[default]
    Reject,
    /// Move later copies by a seeded uniform offset in `[-scale, scale]²`.
    Jitter { scale: f64, seed: u64 },
}

/// A parsed dataset plus any columns that were read alongside it.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: SpatialDataset,
    /// Requested extra columns, in request order.
    pub extra: Vec<(String, Vec<f64>)>,
    pub warnings: Vec<String>,
}

fn parse_cell(raw: &str, row: usize, column: &str) -> CliResult<f64> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Err(CliError::Validation(format!(
            "row {row}: missing value in column {column:?}"
        )));
    }
    let v: f64 = t.parse().map_err(|_| {
        CliError::Validation(format!(
            "row {row}: cannot parse {t:?} in column {column:?} as a number"
        ))
    })?;
    if !v.is_finite() {
        return Err(CliError::Validation(format!(
            "row {row}: non-finite value in column {column:?}"
        )));
    }
    Ok(v)
}

/// Reads a dataset from CSV text. `extra` names additional numeric columns
/// to return (for example a true confounder in simulated files); they are
/// excluded from the default covariate list. Row numbers in diagnostics
/// count data rows from 1.
pub fn read_dataset<R: Read>(
    reader: R,
    mapping: &ColumnMapping,
    extra: &[&str],
    duplicates: DuplicatePolicy,
) -> CliResult<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Validation(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    let find = |name: &str| -> CliResult<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Validation(format!(
                "missing column {name:?} (header: {})",
                headers.join(",")
            ))
        })
    };
    let ix = find(&mapping.x)?;
    let iy = find(&mapping.y)?;
    let ia = find(&mapping.treatment)?;
    let io = find(&mapping.outcome)?;
    let extra_idx: Vec<usize> = extra.iter().map(|n| find(n)).collect::<CliResult<_>>()?;
    let reserved = [ix, iy, ia, io];
    let cov_idx: Vec<usize> = if mapping.covariates.is_empty() {
        (0..headers.len())
            .filter(|j| !reserved.contains(j) && !extra_idx.contains(j))
            .collect()
    } else {
        mapping
            .covariates
            .iter()
            .map(|n| find(n))
            .collect::<CliResult<_>>()?
    };
    if cov_idx.is_empty() {
        return Err(CliError::Validation("covariate list is empty".into()));
    }
    if let Some(j) = cov_idx.iter().find(|j| reserved.contains(j)) {
        return Err(CliError::Validation(format!(
            "column {:?} cannot be both a covariate and a coordinate/treatment/outcome",
            headers[*j]
        )));
    }

    let mut pts = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut cov = Vec::new();
    let mut extra_cols: Vec<Vec<f64>> = vec![Vec::new(); extra_idx.len()];
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| CliError::Validation(format!("row {row}: {e}")))?;
        if rec.len() != headers.len() {
            return Err(CliError::Validation(format!(
                "row {row}: {} fields, header has {}",
                rec.len(),
                headers.len()
            )));
        }
        let cell = |j: usize| parse_cell(&rec[j], row, &headers[j]);
        pts.push((cell(ix)?, cell(iy)?));
        let a = cell(ia)?;
        if a != 0.0 && a != 1.0 {
            return Err(CliError::Validation(format!(
                "row {row}: treatment column {:?} has value {} (expected 0 or 1)",
                mapping.treatment,
                rec[ia].trim()
            )));
        }
        treatment.push(a);
        outcome.push(cell(io)?);
        for &j in &cov_idx {
            cov.push(cell(j)?);
        }
        for (col, &j) in extra_cols.iter_mut().zip(&extra_idx) {
            col.push(cell(j)?);
        }
    }
    let n = outcome.len();
    if n == 0 {
        return Err(CliError::Validation("no data rows".into()));
    }

    let mut warnings = Vec::new();
    resolve_duplicates(&mut pts, duplicates, &mut warnings)?;
    let coords = Coordinates::new(pts)?;
    let names: Vec<String> = cov_idx.iter().map(|&j| headers[j].clone()).collect();
    let z = Matrix::from_row_major(n, cov_idx.len(), cov);
    let data = SpatialDataset::new(coords, outcome, treatment, z, names)?;
    let extra = extra
        .iter()
        .map(|s| s.to_string())
        .zip(extra_cols)
        .collect();
    Ok(Ingested {
        data,
        extra,
        warnings,
    })
}

fn resolve_duplicates(
    pts: &mut [(f64, f64)],
    policy: DuplicatePolicy,
    warnings: &mut Vec<String>,
) -> CliResult<()> {
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| {
        pts[a]
            .0
            .total_cmp(&pts[b].0)
            .then(pts[a].1.total_cmp(&pts[b].1))
    });
    let dups: Vec<usize> = order
        .windows(2)
        .filter(|w| pts[w[0]] == pts[w[1]])
        .map(|w| w[0].max(w[1]))
        .collect();
    if dups.is_empty() {
        return Ok(());
    }
    match policy {
        DuplicatePolicy::Reject => Err(CliError::Validation(format!(
            "row {}: duplicate coordinates ({}, {}); use a jitter to separate repeated locations",
            dups[0] + 1,
            pts[dups[0]].0,
            pts[dups[0]].1
        ))),
        DuplicatePolicy::Jitter { scale, seed } => {
            if scale.is_nan() || scale <= 0.0 {
                return Err(CliError::Validation(format!(
                    "jitter scale {scale} must be positive"
                )));
            }
            let mut rng = replicate_rng(seed, 0);
            let mut sorted = dups;
            sorted.sort_unstable();
            sorted.dedup();
            for &i in &sorted {
                pts[i].0 += scale * (2.0 * rng.random::<f64>() - 1.0);
                pts[i].1 += scale * (2.0 * rng.random::<f64>() - 1.0);
            }
            warnings.push(format!(
                "jittered {} duplicated locations by up to {scale}",
                sorted.len()
            ));
            Ok(())
        }
    }
}

pub fn read_dataset_file(
    path: &Path,
    mapping: &ColumnMapping,
    extra: &[&str],
    duplicates: DuplicatePolicy,
) -> CliResult<Ingested> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_dataset(f, mapping, extra, duplicates).map_err(|e| e.context(&path.display().to_string()))
}

/// Writes a dataset using `mapping`'s column names, followed by `extra`
/// columns.
pub fn write_dataset<W: Write>(
    writer: W,
    data: &SpatialDataset,
    mapping: &ColumnMapping,
    extra: &[(&str, &[f64])],
) -> CliResult<()> {
    let n = data.n();
    if let Some((name, _)) = extra.iter().find(|(_, v)| v.len() != n) {
        return Err(CliError::Validation(format!(
            "column {name:?} does not have {n} values"
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        mapping.x.clone(),
        mapping.y.clone(),
        mapping.treatment.clone(),
        mapping.outcome.clone(),
    ];
    header.extend(data.names().iter().cloned());
    header.extend(extra.iter().map(|(s, _)| s.to_string()));
    let err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(&header).map_err(err)?;
    let pts = data.coords().points();
    let mut fields: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..n {
        fields.clear();
        fields.push(pts[i].0.to_string());
        fields.push(pts[i].1.to_string());
        fields.push(format!("{}", data.treatment()[i] as u8));
        fields.push(data.outcome()[i].to_string());
        fields.extend(data.covariates().row(i).iter().map(f64::to_string));
        fields.extend(extra.iter().map(|(_, v)| v[i].to_string()));
        w.write_record(&fields).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn write_dataset_file(
    path: &Path,
    data: &SpatialDataset,
    mapping: &ColumnMapping,
    extra: &[(&str, &[f64])],
) -> CliResult<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_dataset(std::io::BufWriter::new(f), data, mapping, extra)
}
