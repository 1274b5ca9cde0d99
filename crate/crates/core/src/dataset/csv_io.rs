use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use super::SeriesFrame;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Reject,
    ForwardFill,
}

/// Column roles for a market CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    #[serde(default = "default_ts")]
    pub timestamp: String,
    #[serde(default = "default_target")]
    pub target: String,
    /// Covariate columns to keep; `None` keeps every other column.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default)]
    pub missing: MissingPolicy,
    /// Declared spacing; inferred from the first gap when absent.
    #[serde(default)]
    pub period_minutes: Option<i64>,
}

fn default_ts() -> String {
    "timestamp".into()
}

fn default_target() -> String {
    "price".into()
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp: default_ts(),
            target: default_target(),
            covariates: None,
            missing: MissingPolicy::Reject,
            period_minutes: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SeriesFrame> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| t.and_utc())
}

fn parse_cell(s: &str) -> std::result::Result<Option<f64>, ()> {
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_nan() => Ok(None),
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

/// Parse a market CSV from any reader. Lines starting with `#` are ignored.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<SeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let ts_col = find(&schema.timestamp)?;
    let y_col = find(&schema.target)?;
    let cov_names: Vec<String> = match &schema.covariates {
        Some(list) => list.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ts_col && *i != y_col)
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let mut cov_cols = Vec::with_capacity(cov_names.len());
    for name in &cov_names {
        if name == &schema.timestamp || name == &schema.target {
            return Err(Error::Schema(format!("column '{name}' cannot be both a role and a covariate")));
        }
        cov_cols.push(find(name)?);
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = cov_names.iter().find(|n| !seen.insert(n.as_str())) {
        return Err(Error::Schema(format!("covariate '{dup}' listed twice")));
    }

    // (timestamp, line, target, covariates)
    let mut rows: Vec<(DateTime<Utc>, u64, Option<f64>, Vec<Option<f64>>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| rec.get(i).unwrap_or("");
        let ts_raw = get(ts_col);
        let ts = parse_timestamp(ts_raw).ok_or_else(|| Error::Parse {
            line,
            message: format!("unparsable timestamp '{ts_raw}'"),
        })?;
        let num = |i: usize, name: &str| {
            parse_cell(get(i)).map_err(|_| Error::Parse {
                line,
                message: format!("unparsable number '{}' in column '{name}'", get(i)),
            })
        };
        let y = num(y_col, &schema.target)?;
        let covs = cov_cols
            .iter()
            .zip(&cov_names)
            .map(|(&i, name)| num(i, name))
            .collect::<Result<Vec<_>>>()?;
        rows.push((ts, line, y, covs));
    }

    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Grid(format!(
            "duplicate timestamp {} (lines {} and {})",
            w[0].0.to_rfc3339(),
            w[0].1,
            w[1].1
        )));
    }

    let n = rows.len();
    let mut target = Vec::with_capacity(n);
    let mut covs: Vec<Vec<f64>> = vec![Vec::with_capacity(n); cov_names.len()];
    let fill = |prev: Option<f64>, v: Option<f64>, line: u64, name: &str| -> Result<f64> {
        match (v, schema.missing, prev) {
            (Some(v), _, _) => Ok(v),
            (None, MissingPolicy::ForwardFill, Some(p)) => Ok(p),
            (None, MissingPolicy::ForwardFill, None) => Err(Error::Parse {
                line,
                message: format!("missing '{name}' with nothing to forward-fill from"),
            }),
            (None, MissingPolicy::Reject, _) => Err(Error::Parse {
                line,
                message: format!("missing value in column '{name}'"),
            }),
        }
    };
    for (_, line, y, cv) in &rows {
        let v = fill(target.last().copied(), *y, *line, &schema.target)?;
        target.push(v);
        for (j, c) in cv.iter().enumerate() {
            let v = fill(covs[j].last().copied(), *c, *line, &cov_names[j])?;
            covs[j].push(v);
        }
    }

    let covariates: BTreeMap<String, Vec<f64>> = cov_names.into_iter().zip(covs).collect();
    let timestamps = rows.into_iter().map(|r| r.0).collect();
    SeriesFrame::new(
        timestamps,
        schema.period_minutes.map(TimeDelta::minutes),
        schema.target.clone(),
        target,
        covariates,
    )
}

/// Write a frame as `timestamp,<target>,<covariates...>`, optionally preceded
/// by a `# `-prefixed comment line.
pub fn write_frame_csv<W: Write>(frame: &SeriesFrame, out: W, comment: Option<&str>) -> Result<()> {
    let mut out = out;
    if let Some(c) = comment {
        writeln!(out, "# {c}").map_err(|e| Error::io("<frame csv>", e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string(), frame.target_name().to_string()];
    header.extend(frame.covariates().keys().cloned());
    w.write_record(&header)?;
    for i in 0..frame.len() {
        let mut rec = vec![
            frame.timestamps()[i].to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            frame.target()[i].to_string(),
        ];
        rec.extend(frame.covariates().values().map(|c| c[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<frame csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<SeriesFrame> {
        read_csv(s.as_bytes(), &CsvSchema { target: "price".into(), timestamp: "ts".into(), ..Default::default() })
    }

    #[test]
    fn minimal_three_rows() {
        let f = parse("ts,price\n2021-01-01T00:00:00Z,1\n2021-01-01T01:00:00Z,2\n2021-01-01T02:00:00Z,3\n").unwrap();
        assert_eq!(f.len(), 3);
        assert!(f.covariates().is_empty());
        assert_eq!(f.target(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn covariate_column_mapped() {
        let f = parse("ts,price,wind_fc\n2021-01-01T00:00:00Z,1,5\n2021-01-01T01:00:00Z,2,6\n").unwrap();
        assert_eq!(f.covariates().keys().collect::<Vec<_>>(), vec!["wind_fc"]);
        assert_eq!(f.covariate("wind_fc").unwrap(), &[5.0, 6.0]);
    }

    #[test]
    fn duplicate_timestamp_named() {
        let err = parse("ts,price\n2021-01-01T00:00:00Z,1\n2021-01-01T00:00:00Z,2\n").unwrap_err();
        match err {
            Error::Grid(m) => assert!(m.contains("2021-01-01T00:00:00"), "{m}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unsorted_rows_are_sorted() {
        let f = parse("ts,price\n2021-01-01T01:00:00Z,2\n2021-01-01T00:00:00Z,1\n").unwrap();
        assert_eq!(f.target(), &[1.0, 2.0]);
    }

    #[test]
    fn missing_column_is_schema_error() {
        assert!(matches!(parse("ts,cost\n2021-01-01T00:00:00Z,1\n"), Err(Error::Schema(_))));
    }

    #[test]
    fn irregular_gap_reported() {
        let err = parse("ts,price\n2021-01-01T00:00:00Z,1\n2021-01-01T01:00:00Z,2\n2021-01-01T03:00:00Z,3\n")
            .unwrap_err();
        match err {
            Error::Grid(m) => assert!(m.contains("2021-01-01T01:00:00"), "{m}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        let err = parse("ts,price\n2021-01-01T00:00:00Z,1\n2021-01-01T01:00:00Z,abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn missing_values_rejected_or_filled() {
        let text = "ts,price\n2021-01-01T00:00:00Z,1\n2021-01-01T01:00:00Z,\n2021-01-01T02:00:00Z,3\n";
        assert!(matches!(parse(text), Err(Error::Parse { line: 3, .. })));
        let schema = CsvSchema {
            timestamp: "ts".into(),
            missing: MissingPolicy::ForwardFill,
            ..Default::default()
        };
        let f = read_csv(text.as_bytes(), &schema).unwrap();
        assert_eq!(f.target(), &[1.0, 1.0, 3.0]);
    }

    #[test]
    fn write_then_read_round_trips() {
        let f = parse("ts,price,wind_fc\n2021-01-01T00:00:00Z,1.25,5\n2021-01-01T01:00:00Z,-2.5,6.125\n").unwrap();
        let mut buf = Vec::new();
        write_frame_csv(&f, &mut buf, Some("config_hash=abc")).unwrap();
        let g = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
        assert_eq!(g.target(), f.target());
        assert_eq!(g.covariates(), f.covariates());
        assert_eq!(g.timestamps(), f.timestamps());
    }
}
