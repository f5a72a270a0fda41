use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use counterfact_core::panel::{build_panel, PanelDataset, UnitSeries};

use crate::period::{Granularity, PeriodAxis};
use crate::{io_error, IngestError};

/// Unit series read from a panel file, sorted by unit id, on a shared period axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelTable {
    pub axis: PeriodAxis,
    pub units: Vec<(String, Vec<f64>)>,
}

impl PanelTable {
    pub fn len(&self) -> usize {
        self.units.first().map_or(0, |(_, v)| v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn unit_ids(&self) -> impl Iterator<Item = &str> {
        self.units.iter().map(|(id, _)| id.as_str())
    }

    /// Attach treatment flags and the intervention index.
    pub fn into_panel(&self, treated: &[String], t0: usize) -> Result<PanelDataset, IngestError> {
        for id in treated {
            if !self.units.iter().any(|(u, _)| u == id) {
                return Err(IngestError::UnknownUnit(id.clone()));
            }
        }
        let records = self
            .units
            .iter()
            .map(|(id, values)| UnitSeries::new(id.clone(), treated.contains(id), values.clone()))
            .collect();
        Ok(build_panel(records, t0)?)
    }

    pub fn from_panel(panel: &PanelDataset, axis: PeriodAxis) -> Self {
        let mut units: Vec<(String, Vec<f64>)> =
            panel.units().iter().map(|u| (u.unit_id.clone(), u.values.clone())).collect();
        units.sort_by(|a, b| a.0.cmp(&b.0));
        Self { axis, units }
    }
}

pub(crate) fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

pub(crate) fn row_number(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

pub(crate) fn parse_value(record: &csv::StringRecord, idx: usize, column: &str) -> Result<f64, IngestError> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| IngestError::UnparseableValue {
            row: row_number(record),
            column: column.to_string(),
            value: raw.to_string(),
        })
}

pub(crate) fn parse_period(
    record: &csv::StringRecord,
    idx: usize,
    granularity: Granularity,
) -> Result<i64, IngestError> {
    let raw = record.get(idx).unwrap_or("").trim();
    granularity.ordinal(raw).ok_or_else(|| IngestError::UnparseableValue {
        row: row_number(record),
        column: "period".into(),
        value: raw.to_string(),
    })
}

/// Parse `unit_id,period,value` rows. Row numbers in errors are file line numbers.
pub fn parse_panel_csv<R: Read>(reader: R) -> Result<PanelTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let (ui, pi, vi) = (
        column_index(&headers, "unit_id")?,
        column_index(&headers, "period")?,
        column_index(&headers, "value")?,
    );
    let mut granularity = None;
    let mut cells: BTreeMap<String, BTreeMap<i64, f64>> = BTreeMap::new();
    let mut first_row: HashMap<(String, i64), u64> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let unit = record.get(ui).unwrap_or("").to_string();
        let g = *granularity.get_or_insert_with(|| Granularity::detect(record.get(pi).unwrap_or("")));
        let period = parse_period(&record, pi, g)?;
        let value = parse_value(&record, vi, "value")?;
        let row = row_number(&record);
        if first_row.insert((unit.clone(), period), row).is_some() {
            return Err(IngestError::DuplicateKey {
                row,
                unit,
                period: g.label(period),
            });
        }
        cells.entry(unit).or_default().insert(period, value);
    }
    let granularity = granularity.ok_or_else(|| IngestError::BadConfig("panel file has no rows".into()))?;
    let start = cells.values().filter_map(|m| m.keys().next()).min().copied().unwrap_or(0);
    let end = cells.values().filter_map(|m| m.keys().next_back()).max().copied().unwrap_or(0);
    let mut units = Vec::with_capacity(cells.len());
    for (unit, series) in cells {
        let mut values = Vec::with_capacity((end - start + 1) as usize);
        for ord in start..=end {
            match series.get(&ord) {
                Some(v) => values.push(*v),
                None => {
                    return Err(IngestError::GapInPeriods {
                        unit,
                        period: granularity.label(ord),
                    })
                }
            }
        }
        units.push((unit, values));
    }
    Ok(PanelTable {
        axis: PeriodAxis::new(granularity, start),
        units,
    })
}

pub fn read_panel_csv(path: &Path) -> Result<PanelTable, IngestError> {
    let file = std::fs::File::open(path).map_err(io_error(path))?;
    parse_panel_csv(std::io::BufReader::new(file))
}

/// Values are written in shortest round-trip form, so reading back is bit-exact.
pub fn write_panel_csv<W: Write>(writer: W, table: &PanelTable) -> Result<(), IngestError> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    wtr.write_record(["unit_id", "period", "value"])?;
    for (unit, values) in &table.units {
        for (k, v) in values.iter().enumerate() {
            wtr.write_record([unit.as_str(), &table.axis.label(k), &v.to_string()])?;
        }
    }
    wtr.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}
