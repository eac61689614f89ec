//! Simulation datasets: the single-file CSV interchange format and
//! chronological drop/train/test splitting.
//!
//! CSV layout (one header row, then one row per timestamp):
//!
//! ```text
//! timestamp,p_0,..,p_{np-1},q_0,..,q_{np-1},v_0,..,v_{nv-1},a_0,..,a_{nv-1}
//! 2024-01-01T00:00:00Z,1.2000000000000000e-2,...
//! ```
//!
//! Timestamps are RFC 3339 UTC at whole seconds. Values are per-unit and
//! radians, written with 17 significant digits (`{:.16e}`) so that a read
//! after a write reproduces every bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("row {row} (line {line}), column {column}: {msg}")]
    Value { row: usize, line: u64, column: String, msg: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("split needs {required} days but the dataset spans {available}")]
    SpanTooShort { required: usize, available: usize },
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Time-indexed `(p, q) -> (v, a)` samples, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    timestamps: Vec<DateTime<Utc>>,
    n_p: usize,
    n_v: usize,
    inputs: Vec<f64>,
    outputs_v: Vec<f64>,
    outputs_a: Vec<f64>,
}

impl Dataset {
    pub fn empty(n_p: usize, n_v: usize) -> Self {
        Self { timestamps: Vec::new(), n_p, n_v, inputs: Vec::new(), outputs_v: Vec::new(), outputs_a: Vec::new() }
    }

    /// Builds a dataset from flat row-major buffers, checking every invariant.
    pub fn from_parts(
        timestamps: Vec<DateTime<Utc>>,
        n_p: usize,
        n_v: usize,
        inputs: Vec<f64>,
        outputs_v: Vec<f64>,
        outputs_a: Vec<f64>,
    ) -> Result<Self, DatasetError> {
        let t = timestamps.len();
        if inputs.len() != t * 2 * n_p || outputs_v.len() != t * n_v || outputs_a.len() != t * n_v {
            return Err(DatasetError::Invalid(format!(
                "buffer sizes do not match T={t}, n_p={n_p}, n_v={n_v}"
            )));
        }
        check_timestamps(&timestamps)?;
        if let Some(i) = inputs.iter().chain(&outputs_v).chain(&outputs_a).position(|x| !x.is_finite()) {
            return Err(DatasetError::Invalid(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { timestamps, n_p, n_v, inputs, outputs_v, outputs_a })
    }

    pub fn push(&mut self, ts: DateTime<Utc>, p: &[f64], q: &[f64], v: &[f64], a: &[f64]) {
        assert_eq!(p.len(), self.n_p);
        assert_eq!(q.len(), self.n_p);
        assert_eq!(v.len(), self.n_v);
        assert_eq!(a.len(), self.n_v);
        self.timestamps.push(ts);
        self.inputs.extend_from_slice(p);
        self.inputs.extend_from_slice(q);
        self.outputs_v.extend_from_slice(v);
        self.outputs_a.extend_from_slice(a);
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    /// Concatenated `(p, q)` for row `t`, length `2 n_p`.
    pub fn input(&self, t: usize) -> &[f64] {
        &self.inputs[t * 2 * self.n_p..(t + 1) * 2 * self.n_p]
    }

    pub fn p(&self, t: usize) -> &[f64] {
        &self.input(t)[..self.n_p]
    }

    pub fn q(&self, t: usize) -> &[f64] {
        &self.input(t)[self.n_p..]
    }

    pub fn v(&self, t: usize) -> &[f64] {
        &self.outputs_v[t * self.n_v..(t + 1) * self.n_v]
    }

    pub fn a(&self, t: usize) -> &[f64] {
        &self.outputs_a[t * self.n_v..(t + 1) * self.n_v]
    }

    /// Sampling interval in minutes, if there are at least two rows.
    pub fn resolution_minutes(&self) -> Option<i64> {
        match self.timestamps.as_slice() {
            [a, b, ..] => Some((*b - *a).num_minutes()),
            _ => None,
        }
    }

    pub fn steps_per_day(&self) -> Option<usize> {
        let r = self.resolution_minutes()?;
        (r > 0 && 1440 % r == 0).then(|| (1440 / r) as usize)
    }

    /// Rows `range`, as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        let (w, nv) = (2 * self.n_p, self.n_v);
        Dataset {
            timestamps: self.timestamps[range.clone()].to_vec(),
            n_p: self.n_p,
            n_v: self.n_v,
            inputs: self.inputs[range.start * w..range.end * w].to_vec(),
            outputs_v: self.outputs_v[range.start * nv..range.end * nv].to_vec(),
            outputs_a: self.outputs_a[range.start * nv..range.end * nv].to_vec(),
        }
    }

    /// Appends `other` (same dimensions, later timestamps).
    pub fn concat(&self, other: &Dataset) -> Result<Dataset, DatasetError> {
        if other.n_p != self.n_p || other.n_v != self.n_v {
            return Err(DatasetError::Invalid("dimension mismatch in concat".into()));
        }
        let mut ts = self.timestamps.clone();
        ts.extend_from_slice(&other.timestamps);
        let cat = |a: &[f64], b: &[f64]| [a, b].concat();
        Dataset::from_parts(
            ts,
            self.n_p,
            self.n_v,
            cat(&self.inputs, &other.inputs),
            cat(&self.outputs_v, &other.outputs_v),
            cat(&self.outputs_a, &other.outputs_a),
        )
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["timestamp".to_string()];
        for prefix in ["p", "q"] {
            h.extend((0..self.n_p).map(|i| format!("{prefix}_{i}")));
        }
        for prefix in ["v", "a"] {
            h.extend((0..self.n_v).map(|i| format!("{prefix}_{i}")));
        }
        h
    }

    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "{}", self.header().join(","))?;
        for t in 0..self.len() {
            w.write_all(format_timestamp(&self.timestamps[t]).as_bytes())?;
            for x in self.input(t).iter().chain(self.v(t)).chain(self.a(t)) {
                write!(w, ",{x:.16e}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, DatasetError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(r);
        let mut records = reader.records();
        let header = match records.next() {
            Some(Ok(h)) => h,
            Some(Err(e)) => return Err(csv_error(e)),
            None => return Err(DatasetError::Parse { line: 1, msg: "missing header row".into() }),
        };
        let names: Vec<&str> = header.iter().collect();
        let (n_p, n_v) = parse_header(&names)?;
        let width = 1 + 2 * n_p + 2 * n_v;

        let mut ds = Dataset::empty(n_p, n_v);
        for (row_idx, rec) in records.enumerate() {
            let rec = rec.map_err(csv_error)?;
            let row = row_idx + 1;
            let line = rec.position().map_or(row as u64 + 1, |p| p.line());
            if rec.len() != width {
                return Err(DatasetError::Parse {
                    line,
                    msg: format!("row {row} has {} fields, expected {width}", rec.len()),
                });
            }
            let ts = parse_timestamp(&rec[0]).map_err(|msg| DatasetError::Value {
                row,
                line,
                column: "timestamp".into(),
                msg,
            })?;
            if let Some(prev) = ds.timestamps.last() {
                if ts <= *prev {
                    return Err(DatasetError::Value {
                        row,
                        line,
                        column: "timestamp".into(),
                        msg: "timestamps must be strictly increasing".into(),
                    });
                }
            }
            if ds.timestamps.len() >= 2 {
                let step = ds.timestamps[1] - ds.timestamps[0];
                if ts - *ds.timestamps.last().unwrap() != step {
                    return Err(DatasetError::Value {
                        row,
                        line,
                        column: "timestamp".into(),
                        msg: "timestamps must be uniformly spaced".into(),
                    });
                }
            }
            for (k, field) in rec.iter().enumerate().skip(1) {
                let x: f64 = field.trim().parse().map_err(|_| DatasetError::Value {
                    row,
                    line,
                    column: names[k].to_string(),
                    msg: format!("not a number: {field:?}"),
                })?;
                if !x.is_finite() {
                    return Err(DatasetError::Value {
                        row,
                        line,
                        column: names[k].to_string(),
                        msg: format!("non-finite value {field:?}"),
                    });
                }
                let col = k - 1;
                if col < 2 * n_p {
                    ds.inputs.push(x);
                } else if col < 2 * n_p + n_v {
                    ds.outputs_v.push(x);
                } else {
                    ds.outputs_a.push(x);
                }
            }
            ds.timestamps.push(ts);
        }
        Ok(ds)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let io = |source| DatasetError::Io { path: path.display().to_string(), source };
        let f = File::create(path).map_err(io)?;
        self.write_to(f).map_err(io)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
        Self::read_from(BufReader::new(f))
    }
}

fn csv_error(e: csv::Error) -> DatasetError {
    let line = e.position().map_or(0, |p| p.line());
    DatasetError::Parse { line, msg: e.to_string() }
}

fn check_timestamps(ts: &[DateTime<Utc>]) -> Result<(), DatasetError> {
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DatasetError::Invalid("timestamps must be strictly increasing".into()));
    }
    if ts.len() >= 2 {
        let step = ts[1] - ts[0];
        if ts.windows(2).any(|w| w[1] - w[0] != step) {
            return Err(DatasetError::Invalid("timestamps must be uniformly spaced".into()));
        }
    }
    Ok(())
}

/// Checks the header against the schema and returns `(n_p, n_v)`.
fn parse_header(names: &[&str]) -> Result<(usize, usize), DatasetError> {
    let bad = |msg: String| DatasetError::Parse { line: 1, msg };
    if names.first() != Some(&"timestamp") {
        return Err(bad("first column must be `timestamp`".into()));
    }
    let count = |prefix: &str, from: usize| {
        names[from..]
            .iter()
            .enumerate()
            .take_while(|(i, n)| **n == format!("{prefix}_{i}"))
            .count()
    };
    let n_p = count("p", 1);
    let n_q = count("q", 1 + n_p);
    let n_v = count("v", 1 + n_p + n_q);
    let n_a = count("a", 1 + n_p + n_q + n_v);
    if n_q != n_p || n_a != n_v || 1 + n_p + n_q + n_v + n_a != names.len() {
        return Err(bad(format!(
            "header must be timestamp,p_0..p_k,q_0..q_k,v_0..v_m,a_0..a_m; got {} columns",
            names.len()
        )));
    }
    Ok((n_p, n_v))
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|d| d.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp {s:?}: {e}"))
}

/// Leading days discarded, then training days, then test days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub drop_days: usize,
    pub train_days: usize,
    pub test_days: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { drop_days: 3, train_days: 7, test_days: 18 }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub dropped: Dataset,
    pub train: Dataset,
    pub test: Dataset,
    pub warning: Option<String>,
}

/// Contiguous `[drop][train][test]` partition, in time order, no shuffling.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Split, DatasetError> {
    if spec.train_days == 0 {
        return Err(DatasetError::Invalid("train_days must be >= 1".into()));
    }
    let spd = dataset
        .steps_per_day()
        .ok_or_else(|| DatasetError::Invalid("cannot infer a whole-day resolution from timestamps".into()))?;
    let available = dataset.len() / spd;
    let required = spec.drop_days + spec.train_days + spec.test_days;
    if required > available {
        return Err(DatasetError::SpanTooShort { required, available });
    }
    let a = spec.drop_days * spd;
    let b = a + spec.train_days * spd;
    let c = b + spec.test_days * spd;
    let warning = (spec.test_days == 0).then(|| "test set is empty".to_string());
    Ok(Split { dropped: dataset.slice(0..a), train: dataset.slice(a..b), test: dataset.slice(b..c), warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use proptest::prelude::*;

    fn start() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
    }

    fn synthetic(days: usize, res_min: i64, n_p: usize, n_v: usize) -> Dataset {
        let spd = (1440 / res_min) as usize;
        let mut ds = Dataset::empty(n_p, n_v);
        for t in 0..days * spd {
            let ts = start() + Duration::minutes(res_min * t as i64);
            let f = t as f64;
            let p: Vec<f64> = (0..n_p).map(|i| 0.01 * (f * 0.1 + i as f64).sin()).collect();
            let q: Vec<f64> = p.iter().map(|x| x / 3.0).collect();
            let v: Vec<f64> = (0..n_v).map(|i| 1.0 - 1e-3 * i as f64 - 1e-5 * f).collect();
            let a: Vec<f64> = (0..n_v).map(|i| -1e-3 * i as f64 / 7.0).collect();
            ds.push(ts, &p, &q, &v, &a);
        }
        ds
    }

    fn csv_string(ds: &Dataset) -> String {
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn minimal_two_rows() {
        let text = "timestamp,p_0,q_0,v_0,a_0\n\
                    2024-01-01T00:00:00Z,0.1,0.05,1.0,0.0\n\
                    2024-01-01T00:05:00Z,0.2,0.05,0.99,-0.01\n";
        let ds = Dataset::read_from(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.p(1), &[0.2]);
        assert_eq!(ds.a(1), &[-0.01]);
        assert_eq!(ds.resolution_minutes(), Some(5));
    }

    #[test]
    fn nan_cites_row() {
        let ds = synthetic(1, 60, 4, 2);
        let mut lines: Vec<String> = csv_string(&ds).lines().map(String::from).collect();
        let mut fields: Vec<String> = lines[5].split(',').map(String::from).collect();
        let col = ds.header().iter().position(|h| h == "q_3").unwrap();
        fields[col] = "NaN".into();
        lines[5] = fields.join(",");
        let err = Dataset::read_from(lines.join("\n").as_bytes()).unwrap_err();
        match err {
            DatasetError::Value { row, column, .. } => {
                assert_eq!(row, 5);
                assert_eq!(column, "q_3");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn ragged_row_rejected() {
        let text = "timestamp,p_0,q_0,v_0,a_0\n2024-01-01T00:00:00Z,0.1,0.05,1.0\n";
        assert!(matches!(Dataset::read_from(text.as_bytes()), Err(DatasetError::Parse { line: 2, .. })));
    }

    #[test]
    fn non_monotone_rejected() {
        let text = "timestamp,p_0,q_0,v_0,a_0\n\
                    2024-01-01T00:05:00Z,0.1,0.05,1.0,0.0\n\
                    2024-01-01T00:00:00Z,0.2,0.05,0.99,-0.01\n";
        assert!(matches!(Dataset::read_from(text.as_bytes()), Err(DatasetError::Value { row: 2, .. })));
    }

    #[test]
    fn bad_header_rejected() {
        for text in ["", "time,p_0\n", "timestamp,p_0,q_1,v_0,a_0\n", "timestamp,p_0,q_0,v_0\n"] {
            assert!(Dataset::read_from(text.as_bytes()).is_err(), "{text:?}");
        }
    }

    #[test]
    fn reference_split_structure() {
        let ds = synthetic(28, 60, 2, 3);
        let s = split(&ds, &SplitSpec { drop_days: 3, train_days: 7, test_days: 18 }).unwrap();
        let day = |t: &DateTime<Utc>| (*t - start()).num_days() + 1;
        assert_eq!(day(&s.train.timestamps()[0]), 4);
        assert_eq!(day(s.train.timestamps().last().unwrap()), 10);
        assert_eq!(day(&s.test.timestamps()[0]), 11);
        assert_eq!(day(s.test.timestamps().last().unwrap()), 28);
        assert!(s.warning.is_none());
    }

    #[test]
    fn degenerate_split_warns() {
        let ds = synthetic(2, 60, 1, 1);
        let s = split(&ds, &SplitSpec { drop_days: 0, train_days: 2, test_days: 0 }).unwrap();
        assert!(s.test.is_empty());
        assert!(s.warning.is_some());
        assert_eq!(s.train, ds);
    }

    #[test]
    fn short_span_reports_days() {
        let ds = synthetic(5, 60, 1, 1);
        match split(&ds, &SplitSpec::default()) {
            Err(DatasetError::SpanTooShort { required: 28, available: 5 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_round_trip_through_files() {
        let ds = synthetic(4, 30, 3, 4);
        let s = split(&ds, &SplitSpec { drop_days: 1, train_days: 2, test_days: 1 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        s.train.write_csv(&path).unwrap();
        assert_eq!(Dataset::read_csv(&path).unwrap(), s.train);
    }

    proptest! {
        #[test]
        fn read_inverts_write(
            rows in 0usize..6,
            n_p in 1usize..4,
            n_v in 1usize..4,
            vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL, 60),
        ) {
            let mut ds = Dataset::empty(n_p, n_v);
            let mut it = vals.iter().cycle();
            let mut take = |n: usize| (0..n).map(|_| *it.next().unwrap()).collect::<Vec<_>>();
            for t in 0..rows {
                let (p, q, v, a) = (take(n_p), take(n_p), take(n_v), take(n_v));
                ds.push(start() + Duration::minutes(15 * t as i64), &p, &q, &v, &a);
            }
            let back = Dataset::read_from(csv_string(&ds).as_bytes()).unwrap();
            prop_assert_eq!(back.len(), ds.len());
            for t in 0..rows {
                for (x, y) in back.input(t).iter().zip(ds.input(t)) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
                for (x, y) in back.v(t).iter().chain(back.a(t)).zip(ds.v(t).iter().chain(ds.a(t))) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }

        #[test]
        fn split_is_partition(drop in 0usize..3, train in 1usize..3, test in 0usize..3) {
            let ds = synthetic(8, 120, 2, 2);
            let s = split(&ds, &SplitSpec { drop_days: drop, train_days: train, test_days: test }).unwrap();
            let used = (drop + train + test) * 12;
            let whole = s.dropped.concat(&s.train).unwrap().concat(&s.test).unwrap();
            prop_assert_eq!(whole, ds.slice(0..used));
        }
    }
}
