use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use counterfact_core::panel::{PanelDataset, SimulationTruth};

use crate::panel_csv::{column_index, parse_period, parse_value};
use crate::period::PeriodAxis;
use crate::{io_error, IngestError};

/// `unit_id,period,counterfactual` for each treated unit's post period.
pub fn write_truth_csv<W: Write>(
    writer: W,
    truth: &SimulationTruth,
    axis: &PeriodAxis,
    t0: usize,
) -> Result<(), IngestError> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    wtr.write_record(["unit_id", "period", "counterfactual"])?;
    for (unit, path) in &truth.counterfactuals {
        for (k, v) in path.iter().enumerate() {
            wtr.write_record([unit.as_str(), &axis.label(t0 + k), &v.to_string()])?;
        }
    }
    wtr.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}

pub fn parse_truth_csv<R: Read>(
    reader: R,
    axis: &PeriodAxis,
    panel: &PanelDataset,
) -> Result<SimulationTruth, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let (ui, pi, ci) = (
        column_index(&headers, "unit_id")?,
        column_index(&headers, "period")?,
        column_index(&headers, "counterfactual")?,
    );
    let (t0, h) = (panel.t0(), panel.horizon());
    let mut cells: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let unit = record.get(ui).unwrap_or("").to_string();
        if panel.unit(&unit).is_err() {
            return Err(IngestError::UnknownUnit(unit));
        }
        let ord = parse_period(&record, pi, axis.granularity)?;
        let value = parse_value(&record, ci, "counterfactual")?;
        let index = usize::try_from(ord - axis.start).unwrap_or(usize::MAX);
        if index < t0 || index >= t0 + h {
            return Err(IngestError::UnparseableValue {
                row: crate::panel_csv::row_number(&record),
                column: "period".into(),
                value: axis.granularity.label(ord),
            });
        }
        cells.entry(unit).or_default().insert(index - t0, value);
    }
    let mut counterfactuals = BTreeMap::new();
    for (unit, steps) in cells {
        let path = (0..h)
            .map(|k| {
                steps.get(&k).copied().ok_or_else(|| IngestError::GapInPeriods {
                    unit: unit.clone(),
                    period: axis.label(t0 + k),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        counterfactuals.insert(unit, path);
    }
    let mut truth = SimulationTruth {
        counterfactuals,
        true_att: 0.0,
    };
    truth.true_att = truth.att_against(panel)?;
    Ok(truth)
}

/// Read stored counterfactuals; `true_att` is recomputed against the panel's observations.
pub fn read_truth_csv(path: &Path, axis: &PeriodAxis, panel: &PanelDataset) -> Result<SimulationTruth, IngestError> {
    let file = std::fs::File::open(path).map_err(io_error(path))?;
    parse_truth_csv(std::io::BufReader::new(file), axis, panel)
}
