//! Per-round metrics and their line-oriented text format: one `#` header
//! line of `key=value` pairs, then one tab-separated row per round with
//! floats written to 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "reprl-metrics";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const COLUMNS: [&str; 8] =
    ["round", "mean_return", "best_return", "goal_rate", "w_norm", "logdet_v", "repr_loss", "elapsed"];

const MISSING: &str = "nan";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub mean_return: f64,
    pub best_return: f64,
    pub goal_rate: f64,
    /// `‖ŵ‖` of the bandit, when the driver has one.
    pub w_norm: Option<f64>,
    /// `log det V` of the bandit, when the driver has one.
    pub logdet_v: Option<f64>,
    pub repr_loss: Option<f64>,
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsHeader {
    pub version: String,
    pub driver: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub header: MetricsHeader,
    pub rows: Vec<MetricsRow>,
}

fn fmt_float(out: &mut String, v: f64) {
    if v.is_finite() {
        write!(out, "{v:.16e}").expect("write to string");
    } else if v.is_nan() {
        out.push_str(MISSING);
    } else if v > 0.0 {
        out.push_str("inf");
    } else {
        out.push_str("-inf");
    }
}

fn parse_float(field: &str, line: usize) -> Result<f64> {
    field.parse::<f64>().map_err(|e| Error::Parse { line, message: format!("bad number `{field}`: {e}") })
}

fn parse_optional(field: &str, line: usize) -> Result<Option<f64>> {
    if field == MISSING {
        Ok(None)
    } else {
        parse_float(field, line).map(Some)
    }
}

impl MetricsLog {
    pub fn new(config: &RunConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            header: MetricsHeader {
                version: VERSION.to_string(),
                driver: config.run.driver.name().to_string(),
                seed,
                config_hash: config.hash()?,
            },
            rows: Vec::new(),
        })
    }

    /// Appends a row; rounds must be strictly increasing.
    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.round <= last.round {
                return Err(Error::InvalidCount("metrics rounds must be strictly increasing"));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut out = format!(
            "# {FORMAT_TAG} version={} driver={} seed={} config_hash={} columns={}\n",
            h.version,
            h.driver,
            h.seed,
            h.config_hash,
            COLUMNS.join(",")
        );
        for r in &self.rows {
            write!(out, "{}", r.round).expect("write to string");
            for v in [
                Some(r.mean_return),
                Some(r.best_return),
                Some(r.goal_rate),
                r.w_norm,
                r.logdet_v,
                r.repr_loss,
                Some(r.elapsed),
            ] {
                out.push('\t');
                fmt_float(&mut out, v.unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
        let body = first
            .strip_prefix("# ")
            .and_then(|s| s.strip_prefix(FORMAT_TAG))
            .ok_or(Error::Parse { line: 1, message: "not a metrics file".into() })?;
        let mut fields = std::collections::HashMap::new();
        for kv in body.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or(Error::Parse { line: 1, message: format!("bad header field `{kv}`") })?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields.get(k).map(|v| v.to_string()).ok_or(Error::Parse { line: 1, message: format!("header lacks `{k}`") })
        };
        if get("columns")? != COLUMNS.join(",") {
            return Err(Error::Parse { line: 1, message: "unexpected columns".into() });
        }
        let header = MetricsHeader {
            version: get("version")?,
            driver: get("driver")?,
            seed: get("seed")?.parse().map_err(|_| Error::Parse { line: 1, message: "bad seed".into() })?,
            config_hash: get("config_hash")?,
        };
        let mut log = MetricsLog { header, rows: Vec::new() };
        for (i, line) in lines {
            let n = i + 1;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != COLUMNS.len() {
                return Err(Error::Parse { line: n, message: format!("expected {} fields, got {}", COLUMNS.len(), f.len()) });
            }
            let round = f[0].parse().map_err(|_| Error::Parse { line: n, message: format!("bad round `{}`", f[0]) })?;
            log.push(MetricsRow {
                round,
                mean_return: parse_float(f[1], n)?,
                best_return: parse_float(f[2], n)?,
                goal_rate: parse_float(f[3], n)?,
                w_norm: parse_optional(f[4], n)?,
                logdet_v: parse_optional(f[5], n)?,
                repr_loss: parse_optional(f[6], n)?,
                elapsed: parse_float(f[7], n)?,
            })
            .map_err(|e| Error::Parse { line: n, message: e.to_string() })?;
        }
        Ok(log)
    }
}

pub fn write_metrics(log: &MetricsLog, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, log.to_text())?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<MetricsLog> {
    MetricsLog::parse(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log() -> MetricsLog {
        MetricsLog::new(&RunConfig::default(), 3).unwrap()
    }

    fn row(round: usize, x: f64) -> MetricsRow {
        MetricsRow {
            round,
            mean_return: x,
            best_return: 2.0 * x,
            goal_rate: 0.25,
            w_norm: Some(x / 3.0),
            logdet_v: None,
            repr_loss: Some(-x),
            elapsed: 0.0,
        }
    }

    #[test]
    fn empty_log_is_header_only() {
        let text = log().to_text();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("# reprl-metrics "));
        assert_eq!(MetricsLog::parse(&text).unwrap(), log());
    }

    #[test]
    fn three_rounds_three_rows() {
        let mut l = log();
        for r in 0..3 {
            l.push(row(r, r as f64 + 0.1)).unwrap();
        }
        assert_eq!(l.to_text().lines().count(), 4);
        assert!(l.push(row(2, 0.0)).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/m.tsv");
        let mut l = log();
        l.push(row(0, 1.0 / 3.0)).unwrap();
        l.push(row(5, -7.25e-300)).unwrap();
        write_metrics(&l, &path).unwrap();
        assert_eq!(read_metrics(&path).unwrap(), l);
    }

    #[test]
    fn rejects_garbage() {
        assert!(MetricsLog::parse("").is_err());
        assert!(MetricsLog::parse("hello\n").is_err());
        let mut text = log().to_text();
        text.push_str("0\t1\t2\n");
        assert!(matches!(MetricsLog::parse(&text), Err(Error::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn floats_round_trip_bit_exactly(bits in prop::collection::vec(any::<u64>(), 1..20)) {
            let mut l = log();
            for (i, b) in bits.iter().enumerate() {
                let v = f64::from_bits(*b);
                let v = if v.is_finite() { v } else { 1.5 };
                l.push(row(i, v)).unwrap();
            }
            let back = MetricsLog::parse(&l.to_text()).unwrap();
            for (a, b) in back.rows.iter().zip(&l.rows) {
                prop_assert_eq!(a.mean_return.to_bits(), b.mean_return.to_bits());
                prop_assert_eq!(a.w_norm.map(f64::to_bits), b.w_norm.map(f64::to_bits));
                prop_assert_eq!(a.repr_loss.map(f64::to_bits), b.repr_loss.map(f64::to_bits));
            }
        }
    }
}
