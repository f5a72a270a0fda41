use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{write_atomic, IngestError};

/// Which fields of the provider's records hold the unit, period and value, plus extra
/// query parameters for the request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeriesSpec {
    pub unit_field: String,
    pub period_field: String,
    pub value_field: String,
    pub query: Vec<(String, String)>,
}

impl Default for SeriesSpec {
    fn default() -> Self {
        Self {
            unit_field: "stateid".into(),
            period_field: "period".into(),
            value_field: "price".into(),
            query: vec![
                ("frequency".into(), "monthly".into()),
                ("data[0]".into(), "price".into()),
                ("facets[sectorid][]".into(), "RES".into()),
            ],
        }
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (before + column.saturating_sub(1)).min(text.len())
}

fn drift(message: impl Into<String>) -> IngestError {
    IngestError::SchemaDrift {
        offset: 0,
        message: message.into(),
    }
}

fn field_text(record: &Value, field: &str) -> Option<String> {
    match record.get(field)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Rows `(unit, period, value)` from a `{"response": {"data": [...]}}` body, sorted by unit
/// and period. Records with a null value are skipped.
pub fn parse_price_response(body: &str, spec: &SeriesSpec) -> Result<Vec<(String, String, f64)>, IngestError> {
    let doc: Value = serde_json::from_str(body).map_err(|e| IngestError::SchemaDrift {
        offset: byte_offset(body, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let data = doc
        .pointer("/response/data")
        .and_then(Value::as_array)
        .ok_or_else(|| drift("no response.data array"))?;
    let mut rows = Vec::with_capacity(data.len());
    for (i, record) in data.iter().enumerate() {
        if record.get(&spec.value_field).is_some_and(Value::is_null) {
            continue;
        }
        let get = |field: &str| {
            field_text(record, field).ok_or_else(|| drift(format!("record {i} has no `{field}`")))
        };
        let (unit, period, raw) = (get(&spec.unit_field)?, get(&spec.period_field)?, get(&spec.value_field)?);
        let value = raw
            .parse::<f64>()
            .map_err(|_| drift(format!("record {i}: `{raw}` is not a number")))?;
        rows.push((unit, period, value));
    }
    rows.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    Ok(rows)
}

/// Download a price series and write it as a `unit_id,period,value` panel file.
/// The API key is read from the environment variable `api_key_env`.
pub fn fetch_public_prices(
    endpoint: &str,
    api_key_env: &str,
    spec: &SeriesSpec,
    out: &Path,
) -> Result<usize, IngestError> {
    let key = std::env::var(api_key_env).map_err(|_| IngestError::AuthError {
        env_var: api_key_env.to_string(),
        status: "variable not set".into(),
    })?;
    let mut request = ureq::get(endpoint).query("api_key", &key);
    for (k, v) in &spec.query {
        request = request.query(k, v);
    }
    let mut response = request.call().map_err(|e| match e {
        ureq::Error::StatusCode(code @ (401 | 403)) => IngestError::AuthError {
            env_var: api_key_env.to_string(),
            status: format!("HTTP {code}"),
        },
        other => IngestError::HttpError(other.to_string()),
    })?;
    let body = response
        .body_mut()
        .read_to_string()
        .map_err(|e| IngestError::HttpError(e.to_string()))?;
    let rows = parse_price_response(&body, spec)?;

    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    wtr.write_record(["unit_id", "period", "value"])?;
    for (unit, period, value) in &rows {
        wtr.write_record([unit.as_str(), period.as_str(), &value.to_string()])?;
    }
    let bytes = wtr.into_inner().map_err(|e| IngestError::HttpError(e.to_string()))?;
    write_atomic(out, &bytes)?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_count_bytes_across_lines() {
        let text = "{\n  \"a\": ,\n}";
        let err = serde_json::from_str::<Value>(text).unwrap_err();
        let off = byte_offset(text, err.line(), err.column());
        assert_eq!(&text[off..off + 1], ",");
    }

    #[test]
    fn numeric_and_string_values() {
        let body = r#"{"response":{"data":[
            {"period":"1990-02","stateid":"CA","price":"7.5"},
            {"period":"1990-01","stateid":"CA","price":7.25},
            {"period":"1990-01","stateid":"AL","price":null}]}}"#;
        let rows = parse_price_response(body, &SeriesSpec::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], ("CA".into(), "1990-01".into(), 7.25));
    }
}
