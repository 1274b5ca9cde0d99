//! Long-format forecast files (`timestamp,level,value`) and truth files
//! (`timestamp,value`), the hand-off between backtesting, evaluation and
//! trading.

use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};

use crate::error::{Error, Result};
use crate::quantile::{QuantileForecast, QuantileGrid};

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn parse_timestamp(s: &str, line: u64) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Parse {
            line,
            message: format!("bad timestamp '{s}': {e}"),
        })
}

fn parse_number(s: &str, line: u64, what: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad {what} '{s}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite {what}"),
        });
    }
    Ok(v)
}

fn write_comment<W: Write>(out: &mut W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        for l in c.lines() {
            writeln!(out, "# {l}").map_err(|e| Error::io("<output>", e))?;
        }
    }
    Ok(())
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let h = rdr.headers()?;
    if h.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Schema(format!(
            "expected columns {}, found {}",
            expected.join(","),
            h.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

pub fn write_forecast_csv<W: Write>(
    mut out: W,
    timestamps: &[DateTime<Utc>],
    forecast: &QuantileForecast,
    comment: Option<&str>,
) -> Result<()> {
    if timestamps.len() != forecast.len() {
        return Err(Error::Shape(format!(
            "{} timestamps for {} forecast steps",
            timestamps.len(),
            forecast.len()
        )));
    }
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "level", "value"])?;
    let levels = forecast.grid().levels();
    for (t, ts) in timestamps.iter().enumerate() {
        let stamp = format_timestamp(ts);
        for (k, &l) in levels.iter().enumerate() {
            w.write_record([stamp.clone(), l.to_string(), forecast.step(t)[k].to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<forecast>", e))?;
    Ok(())
}

/// Inverse of [`write_forecast_csv`]. Every timestamp must list the same
/// increasing levels in consecutive rows.
pub fn read_forecast_csv<R: Read>(input: R) -> Result<(Vec<DateTime<Utc>>, QuantileForecast)> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &["timestamp", "level", "value"])?;
    let mut stamps: Vec<DateTime<Utc>> = Vec::new();
    let mut levels: Vec<Vec<f64>> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let ts = parse_timestamp(&rec[0], line)?;
        let level = parse_number(&rec[1], line, "level")?;
        let value = parse_number(&rec[2], line, "value")?;
        if stamps.last() != Some(&ts) {
            if stamps.last().is_some_and(|last| *last >= ts) {
                return Err(Error::Parse {
                    line,
                    message: format!("timestamp {} out of order or repeated", format_timestamp(&ts)),
                });
            }
            stamps.push(ts);
            levels.push(Vec::new());
            values.push(Vec::new());
        }
        levels.last_mut().expect("pushed").push(level);
        values.last_mut().expect("pushed").push(value);
    }
    if stamps.is_empty() {
        return Err(Error::Schema("forecast file has no rows".into()));
    }
    if let Some(i) = levels.iter().position(|l| *l != levels[0]) {
        return Err(Error::Schema(format!(
            "timestamp {} lists different levels than the first step",
            format_timestamp(&stamps[i])
        )));
    }
    let grid = QuantileGrid::new(levels[0].clone())?;
    Ok((stamps, QuantileForecast::new(grid, values)?))
}

pub fn write_truth_csv<W: Write>(mut out: W, timestamps: &[DateTime<Utc>], truths: &[f64], comment: Option<&str>) -> Result<()> {
    if timestamps.len() != truths.len() {
        return Err(Error::Shape("timestamps and truths differ in length".into()));
    }
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "value"])?;
    for (ts, v) in timestamps.iter().zip(truths) {
        w.write_record([format_timestamp(ts), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<truth>", e))?;
    Ok(())
}

pub fn read_truth_csv<R: Read>(input: R) -> Result<(Vec<DateTime<Utc>>, Vec<f64>)> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &["timestamp", "value"])?;
    let mut stamps: Vec<DateTime<Utc>> = Vec::new();
    let mut vals = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let ts = parse_timestamp(&rec[0], line)?;
        if stamps.last().is_some_and(|last| *last >= ts) {
            return Err(Error::Parse {
                line,
                message: "timestamps must increase".into(),
            });
        }
        stamps.push(ts);
        vals.push(parse_number(&rec[1], line, "value")?);
    }
    Ok((stamps, vals))
}

/// First `# key=value` comment line value for `key`, if any.
pub fn header_value(text: &str, key: &str) -> Option<String> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').trim().split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim().to_string())
}

pub fn forecast_file_name(method: &str, learner: &str) -> String {
    format!("forecast_{method}_{learner}.csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeDelta;
    use proptest::prelude::*;

    fn stamps(n: usize) -> Vec<DateTime<Utc>> {
        (0..n).map(|i| DateTime::<Utc>::UNIX_EPOCH + TimeDelta::minutes(30 * i as i64)).collect()
    }

    proptest! {
        #[test]
        fn forecast_round_trip_is_exact(vals in proptest::collection::vec(-1e6f64..1e6, 27)) {
            let f = QuantileForecast::new(QuantileGrid::deciles(), vals.chunks(9).map(|c| c.to_vec()).collect()).unwrap();
            let ts = stamps(3);
            let mut buf = Vec::new();
            write_forecast_csv(&mut buf, &ts, &f, Some("config_hash=abc")).unwrap();
            let (ts2, f2) = read_forecast_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(ts2, ts);
            prop_assert_eq!(f2, f);
            prop_assert_eq!(header_value(std::str::from_utf8(&buf).unwrap(), "config_hash"), Some("abc".to_string()));
        }
    }

    #[test]
    fn truth_round_trip() {
        let ts = stamps(4);
        let v = vec![1.5, -2.25, 1e-7, 3.0];
        let mut buf = Vec::new();
        write_truth_csv(&mut buf, &ts, &v, None).unwrap();
        assert_eq!(read_truth_csv(buf.as_slice()).unwrap(), (ts, v));
    }

    #[test]
    fn malformed_forecasts_rejected() {
        let bad_header = "ts,level,value\n2021-01-01T00:00:00Z,0.5,1\n";
        assert!(matches!(read_forecast_csv(bad_header.as_bytes()), Err(Error::Schema(_))));
        let bad_num = "timestamp,level,value\n2021-01-01T00:00:00Z,0.5,abc\n";
        assert!(matches!(read_forecast_csv(bad_num.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let ragged = "timestamp,level,value\n2021-01-01T00:00:00Z,0.1,1\n2021-01-01T00:00:00Z,0.9,2\n2021-01-01T01:00:00Z,0.1,1\n";
        assert!(matches!(read_forecast_csv(ragged.as_bytes()), Err(Error::Schema(_))));
        let backwards = "timestamp,level,value\n2021-01-01T01:00:00Z,0.5,1\n2021-01-01T00:00:00Z,0.5,1\n";
        assert!(read_forecast_csv(backwards.as_bytes()).is_err());
        assert!(read_forecast_csv("timestamp,level,value\n".as_bytes()).is_err());
    }
}
