use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use counterfact_core::panel::{build_panel, PanelDataset};

use crate::panel_csv::{column_index, parse_period, parse_value, row_number};
use crate::period::PeriodAxis;
use crate::{io_error, IngestError};

/// Raw covariate values: name → unit → period index → value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CovariateTable {
    pub values: BTreeMap<String, BTreeMap<String, BTreeMap<usize, f64>>>,
}

impl CovariateTable {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn merge(&mut self, other: CovariateTable) {
        for (name, units) in other.values {
            self.values.entry(name).or_default().extend(units);
        }
    }
}

/// Parse `unit_id,period,name,value` rows against the panel's period axis.
pub fn parse_covariates_csv<R: Read>(reader: R, axis: &PeriodAxis) -> Result<CovariateTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let (ui, pi, ni, vi) = (
        column_index(&headers, "unit_id")?,
        column_index(&headers, "period")?,
        column_index(&headers, "name")?,
        column_index(&headers, "value")?,
    );
    let mut table = CovariateTable::default();
    for record in rdr.records() {
        let record = record?;
        let ord = parse_period(&record, pi, axis.granularity)?;
        let value = parse_value(&record, vi, "value")?;
        // periods before the panel start are ignored
        let Ok(index) = usize::try_from(ord - axis.start) else {
            continue;
        };
        let slot = table
            .values
            .entry(record.get(ni).unwrap_or("").to_string())
            .or_default()
            .entry(record.get(ui).unwrap_or("").to_string())
            .or_default();
        if slot.insert(index, value).is_some() {
            return Err(IngestError::DuplicateKey {
                row: row_number(&record),
                unit: record.get(ui).unwrap_or("").to_string(),
                period: axis.label(index),
            });
        }
    }
    Ok(table)
}

pub fn read_covariates_csv(path: &Path, axis: &PeriodAxis) -> Result<CovariateTable, IngestError> {
    let file = std::fs::File::open(path).map_err(io_error(path))?;
    parse_covariates_csv(std::io::BufReader::new(file), axis)
}

pub fn write_covariates_csv<W: Write>(writer: W, table: &CovariateTable, axis: &PeriodAxis) -> Result<(), IngestError> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    wtr.write_record(["unit_id", "period", "name", "value"])?;
    let mut rows = Vec::new();
    for (name, units) in &table.values {
        for (unit, series) in units {
            for (&k, v) in series {
                rows.push((unit.as_str(), k, name.as_str(), *v));
            }
        }
    }
    rows.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    for (unit, k, name, v) in rows {
        wtr.write_record([unit, &axis.label(k), name, &v.to_string()])?;
    }
    wtr.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}

/// Panel with covariates attached, plus any standardization warnings.
#[derive(Debug, Clone)]
pub struct Joined {
    pub panel: PanelDataset,
    pub warnings: Vec<String>,
}

/// Attach every covariate in `table`, z-scored per unit with pre-period moments.
/// A covariate constant over a unit's pre-period becomes all zeros.
pub fn join_covariates(
    panel: &PanelDataset,
    table: &CovariateTable,
    axis: &PeriodAxis,
) -> Result<Joined, IngestError> {
    let (t0, len) = (panel.t0(), panel.len());
    for units in table.values.values() {
        for unit in units.keys() {
            if panel.unit(unit).is_err() {
                return Err(IngestError::UnknownUnit(unit.clone()));
            }
        }
    }
    let mut warnings = Vec::new();
    let mut records = panel.units().to_vec();
    for record in &mut records {
        for (name, units) in &table.values {
            let gap = |k: usize| IngestError::CoverageGap {
                name: name.clone(),
                unit: record.unit_id.clone(),
                period: axis.label(k),
            };
            let series = units.get(&record.unit_id).ok_or_else(|| gap(0))?;
            let raw = (0..len)
                .map(|k| series.get(&k).copied().ok_or_else(|| gap(k)))
                .collect::<Result<Vec<f64>, _>>()?;
            let pre = &raw[..t0];
            let mean = pre.iter().sum::<f64>() / t0 as f64;
            let var = pre.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t0 as f64;
            let z = if var > 0.0 {
                let sd = var.sqrt();
                raw.iter().map(|v| (v - mean) / sd).collect()
            } else {
                let msg = format!("covariate {name} is constant for unit {} before t0; using zeros", record.unit_id);
                log::warn!("{msg}");
                warnings.push(msg);
                vec![0.0; len]
            };
            record.covariates.insert(name.clone(), z);
        }
    }
    Ok(Joined {
        panel: build_panel(records, t0)?,
        warnings,
    })
}
