use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::PropensityFit;
use crate::error::{Error, Result};
use crate::spatial_model::SpatialDataset;

/// ATT balancing weights: 1 for treated units, `e/(1−e)` for controls.
pub fn att_weights(treatment: &[f64], scores: &[f64]) -> Vec<f64> {
    treatment
        .iter()
        .zip(scores)
        .map(|(&a, &e)| if a == 1.0 { 1.0 } else { e / (1.0 - e) })
        .collect()
}

/// Weighted mean and reliability-weighted variance of one group.
fn group_moments(
    values: &[f64],
    a: &[f64],
    weights: Option<&[f64]>,
    group: f64,
) -> Option<(f64, f64)> {
    let mut sw = 0.0;
    let mut sw2 = 0.0;
    let mut swx = 0.0;
    for (i, (&v, &ai)) in values.iter().zip(a).enumerate() {
        if ai != group {
            continue;
        }
        let w = weights.map_or(1.0, |w| w[i]);
        sw += w;
        sw2 += w * w;
        swx += w * v;
    }
    if !(sw > 0.0) {
        return None;
    }
    let mean = swx / sw;
    let ss: f64 = values
        .iter()
        .zip(a)
        .enumerate()
        .filter(|(_, (_, &ai))| ai == group)
        .map(|(i, (&v, _))| weights.map_or(1.0, |w| w[i]) * (v - mean) * (v - mean))
        .sum();
    let denom = sw - sw2 / sw;
    let var = if denom > 0.0 { ss / denom } else { 0.0 };
    Some((mean, var))
}

/// Standardized mean difference `(m_t − m_c) / sqrt((s_t² + s_c²)/2)`, with
/// weighted moments when `weights` is given.
pub fn smd(values: &[f64], treatment: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    let n = values.len();
    if treatment.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::Dimension(format!(
            "smd inputs of unequal length ({n} values)"
        )));
    }
    let (mt, vt) = group_moments(values, treatment, weights, 1.0)
        .ok_or_else(|| Error::EmptyGroup("no treated units with positive weight".into()))?;
    let (mc, vc) = group_moments(values, treatment, weights, 0.0)
        .ok_or_else(|| Error::EmptyGroup("no control units with positive weight".into()))?;
    let pooled = libm::sqrt((vt + vc) / 2.0);
    if !(pooled > 0.0) {
        return Err(Error::DegenerateCovariate(
            "pooled standard deviation is zero".into(),
        ));
    }
    Ok((mt - mc) / pooled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableKind {
    Binary,
    Continuous,
}

impl VariableKind {
    pub fn detect(values: &[f64]) -> Self {
        if values.iter().all(|&v| v == 0.0 || v == 1.0) {
            VariableKind::Binary
        } else {
            VariableKind::Continuous
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VariableKind::Binary => "binary",
            VariableKind::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRow {
    pub variable: String,
    pub kind: VariableKind,
    /// Unweighted SMD on the full data.
    pub unadjusted: f64,
    /// Weighted SMD, one entry per column of the table.
    pub adjusted: Vec<f64>,
}

/// SMDs before and after weighting under one or more propensity models.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceTable {
    /// Label of each adjusted column.
    pub methods: Vec<String>,
    pub rows: Vec<BalanceRow>,
    pub threshold: f64,
}

impl BalanceTable {
    pub fn exceeds(&self, smd: f64) -> bool {
        smd.abs() > self.threshold
    }

    /// `(variable, column)` pairs whose absolute SMD exceeds the threshold;
    /// column `None` is the unadjusted value.
    pub fn flagged(&self) -> Vec<(&str, Option<&str>)> {
        let mut out = Vec::new();
        for row in &self.rows {
            if self.exceeds(row.unadjusted) {
                out.push((row.variable.as_str(), None));
            }
            for (m, v) in self.methods.iter().zip(&row.adjusted) {
                if self.exceeds(*v) {
                    out.push((row.variable.as_str(), Some(m.as_str())));
                }
            }
        }
        out
    }
}

/// Balance of every covariate and each `extra` column (e.g. a recovered or
/// true confounder) under the ATT weights of each labelled propensity fit.
pub fn balance_table(
    data: &SpatialDataset,
    fits: &[(&str, &PropensityFit)],
    extra: &[(&str, &[f64])],
    threshold: f64,
) -> Result<BalanceTable> {
    if !(threshold > 0.0) {
        return Err(Error::ParameterDomain(format!(
            "threshold {threshold} must be positive"
        )));
    }
    let a = data.treatment();
    let weights: Vec<Vec<f64>> = fits
        .iter()
        .map(|(label, ps)| {
            if ps.scores.len() != data.n() {
                Err(Error::Dimension(format!(
                    "fit {label:?} has {} scores",
                    ps.scores.len()
                )))
            } else {
                Ok(att_weights(a, &ps.scores))
            }
        })
        .collect::<Result<_>>()?;

    let mut columns: Vec<(String, Vec<f64>)> = data
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| (name.clone(), data.covariates().column(j)))
        .collect();
    for (name, values) in extra {
        if values.len() != data.n() {
            return Err(Error::Dimension(format!(
                "column {name:?} has {} values",
                values.len()
            )));
        }
        columns.push((String::from(*name), values.to_vec()));
    }

    let mut rows = Vec::with_capacity(columns.len());
    for (variable, values) in columns {
        let unadjusted = smd(&values, a, None)
            .map_err(|e| Error::DegenerateCovariate(format!("{variable}: {e}")))?;
        let adjusted = weights
            .iter()
            .map(|w| smd(&values, a, Some(w)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::DegenerateCovariate(format!("{variable}: {e}")))?;
        rows.push(BalanceRow {
            kind: VariableKind::detect(&values),
            variable,
            unadjusted,
            adjusted,
        });
    }
    Ok(BalanceTable {
        methods: fits.iter().map(|(l, _)| String::from(*l)).collect(),
        rows,
        threshold,
    })
}
