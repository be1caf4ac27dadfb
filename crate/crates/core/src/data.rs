//! CSV ingestion, the dataset registry with split rules, global
//! standardization and window sampling.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeedError};
use crate::numeric::{RngState, Tensor};
use crate::window::SeriesWindow;

/// Train/validation/test proportions; only their ratios matter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatio {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(SeedError::config(format!("split parts must be positive, got {self}")));
        }
        Ok(())
    }

    /// Segment lengths for a series of `len` steps; validation and test
    /// are floored, so the remainder goes to train.
    pub fn lengths(&self, len: usize) -> (usize, usize, usize) {
        let total = self.train + self.val + self.test;
        let val = (len as f64 * self.val / total).floor() as usize;
        let test = (len as f64 * self.test / total).floor() as usize;
        (len.saturating_sub(val + test), val, test)
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.train, self.val, self.test)
    }
}

impl FromStr for SplitRatio {
    type Err = SeedError;

    /// `6:2:2`, `0.7,0.1,0.2` or `7/1/2`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split([':', ',', '/']).map(str::trim).collect();
        if parts.len() != 3 {
            return Err(SeedError::config(format!("split {s:?} must have three parts")));
        }
        let mut v = [0.0; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| SeedError::config(format!("split {s:?}: {p:?} is not a number")))?;
        }
        SplitRatio::new(v[0], v[1], v[2])
    }
}

/// A multivariate series, `time x C`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub columns: Vec<String>,
    values: Vec<f64>,
    n_rows: usize,
    pub split: Option<SplitRatio>,
    pub frequency: Option<String>,
    /// Rows dropped at load time because a value was missing or non-finite.
    pub rejected_rows: usize,
}

impl Dataset {
    pub fn from_rows(name: impl Into<String>, columns: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let c = columns.len();
        if c == 0 || values.is_empty() || !values.len().is_multiple_of(c) {
            return Err(SeedError::data(format!(
                "{} values do not fill rows of {c} columns",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SeedError::data("dataset contains non-finite values"));
        }
        Ok(Self {
            name: name.into(),
            n_rows: values.len() / c,
            columns,
            values,
            split: None,
            frequency: None,
            rejected_rows: 0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    /// Row-major `time x C` values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let c = self.n_vars();
        &self.values[t * c..(t + 1) * c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n_rows).map(|t| self.values[t * self.n_vars() + c]).collect()
    }

    /// `C x len` slice of rows `start..start + len`.
    pub fn slice_vars_major(&self, start: usize, len: usize) -> Tensor {
        let c = self.n_vars();
        Tensor::from_fn(&[c, len], |i| self.values[(start + i % len) * c + i / len])
    }

    pub fn with_split(mut self, split: SplitRatio) -> Self {
        self.split = Some(split);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvOptions {
    /// Skip the first column (timestamps).
    pub date_col: bool,
}

pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| SeedError::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    read_csv(file, &name, options)
}

/// Parses CSV text; the first record is the header. Rows with an empty or
/// non-finite cell are dropped and counted; malformed numbers are errors
/// reporting the 1-based line and column.
pub fn read_csv(reader: impl Read, name: &str, options: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(e, 1))?,
        None => return Err(SeedError::data(format!("{name}: empty file"))),
    };
    let skip = usize::from(options.date_col);
    if header.len() <= skip {
        return Err(SeedError::data(format!("{name}: header has no value columns")));
    }
    let columns: Vec<String> = header.iter().skip(skip).map(str::to_string).collect();
    let width = header.len();
    let mut values = Vec::new();
    let mut rejected = 0;
    let mut row_buf = Vec::with_capacity(columns.len());
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(e, line))?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != width {
            return Err(SeedError::Parse {
                row: line,
                column: rec.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        row_buf.clear();
        let mut ok = true;
        for (j, cell) in rec.iter().enumerate().skip(skip) {
            if cell.is_empty() {
                ok = false;
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| SeedError::Parse {
                row: line,
                column: j + 1,
                message: format!("{cell:?} is not a number"),
            })?;
            ok &= v.is_finite();
            row_buf.push(v);
        }
        if ok {
            values.extend_from_slice(&row_buf);
        } else {
            rejected += 1;
        }
    }
    if values.is_empty() {
        return Err(SeedError::data(format!(
            "{name}: no usable rows ({rejected} rejected for missing or non-finite values)"
        )));
    }
    let mut ds = Dataset::from_rows(name, columns, values)?;
    ds.rejected_rows = rejected;
    Ok(ds)
}

fn csv_error(e: csv::Error, line: usize) -> SeedError {
    SeedError::Parse {
        row: line,
        column: 0,
        message: e.to_string(),
    }
}

/// Writes the dataset with a header row; values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv(dataset: &Dataset, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| SeedError::data(format!("csv write: {e}"));
    w.write_record(&dataset.columns).map_err(io)?;
    for t in 0..dataset.n_rows() {
        w.write_record(dataset.row(t).iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.flush().map_err(|e| SeedError::data(format!("csv write: {e}")))?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| SeedError::io(path, e))?;
    write_csv(dataset, std::io::BufWriter::new(file))
}

// ---------------------------------------------------------------------------
// Registry

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryEntry {
    pub name: String,
    pub split: String,
    #[serde(default)]
    pub date_col: bool,
    #[serde(default)]
    pub frequency: Option<String>,
}

impl RegistryEntry {
    pub fn split_ratio(&self) -> Result<SplitRatio> {
        self.split.parse()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Registry {
    entries: Vec<RegistryEntry>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[serde(alias = "dataset")]
    datasets: Vec<RegistryEntry>,
}

impl Registry {
    pub fn builtin() -> Self {
        let e = |name: &str, split: &str, date_col: bool, freq: &str| RegistryEntry {
            name: name.into(),
            split: split.into(),
            date_col,
            frequency: Some(freq.into()),
        };
        Self {
            entries: vec![
                e("ETTh1", "6:2:2", true, "1h"),
                e("ETTh2", "6:2:2", true, "1h"),
                e("ETTm1", "6:2:2", true, "15min"),
                e("ETTm2", "6:2:2", true, "15min"),
                e("Weather", "7:1:2", true, "10min"),
                e("ECL", "7:1:2", true, "1h"),
                e("Traffic", "7:1:2", true, "1h"),
                e("Solar", "7:1:2", false, "10min"),
                e("PEMS03", "3:1:1", false, "5min"),
                e("PEMS04", "3:1:1", false, "5min"),
                e("PEMS07", "3:1:1", false, "5min"),
                e("PEMS08", "3:1:1", false, "5min"),
            ],
        }
    }

    /// Case-insensitive lookup.
    pub fn get(&self, name: &str) -> Option<&RegistryEntry> {
        self.entries.iter().find(|e| e.name.eq_ignore_ascii_case(name))
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    /// Adds or replaces entries.
    pub fn merge(&mut self, other: Vec<RegistryEntry>) {
        for entry in other {
            match self.entries.iter_mut().find(|e| e.name.eq_ignore_ascii_case(&entry.name)) {
                Some(slot) => *slot = entry,
                None => self.entries.push(entry),
            }
        }
    }

    pub fn load_override(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| SeedError::io(path, e))?;
        self.merge(parse_registry(&text)?);
        Ok(())
    }
}

/// Parses registry overrides. JSON (an array of entries or
/// `{"datasets": [...]}`) or TOML (`[[dataset]]` tables or a `datasets`
/// array), each entry having `name`, `split` and optionally `date_col`.
pub fn parse_registry(text: &str) -> Result<Vec<RegistryEntry>> {
    let trimmed = text.trim_start();
    let entries = if trimmed.starts_with('[') && !trimmed.starts_with("[[") || trimmed.starts_with('{') {
        if trimmed.starts_with('{') {
            serde_json::from_str::<RegistryFile>(text)
                .map_err(|e| SeedError::config(format!("registry json: {e}")))?
                .datasets
        } else {
            serde_json::from_str::<Vec<RegistryEntry>>(text)
                .map_err(|e| SeedError::config(format!("registry json: {e}")))?
        }
    } else {
        toml::from_str::<RegistryFile>(text)
            .map_err(|e| SeedError::config(format!("registry toml: {e}")))?
            .datasets
    };
    for e in &entries {
        if e.name.trim().is_empty() {
            return Err(SeedError::config("registry entry with empty name"));
        }
        e.split_ratio()?;
    }
    Ok(entries)
}

// ---------------------------------------------------------------------------
// Splits and windows

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl FromStr for SplitKind {
    type Err = SeedError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(SplitKind::Train),
            "val" | "valid" | "validation" => Ok(SplitKind::Val),
            "test" => Ok(SplitKind::Test),
            _ => Err(SeedError::config(format!("unknown split {s:?}"))),
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        })
    }
}

/// A contiguous run of rows, `C x len`. For validation and test the
/// first `context` rows come from the preceding split and only serve as
/// lookback.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub kind: SplitKind,
    /// Global index of the first row.
    pub offset: usize,
    pub context: usize,
    pub values: Tensor,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.values.last_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_vars(&self) -> usize {
        self.values.shape()[0]
    }

    /// Window starts `0, stride, ..` with `start + L + T <= len`.
    pub fn window_starts(&self, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<usize>> {
        if stride == 0 {
            return Err(SeedError::config("window stride must be at least 1"));
        }
        let need = lookback + horizon;
        if self.len() < need {
            return Err(SeedError::data(format!(
                "{} segment has {} steps, fewer than lookback + horizon = {need}",
                self.kind,
                self.len()
            )));
        }
        Ok((0..=(self.len() - need) / stride).map(|i| i * stride).collect())
    }

    pub fn sample(&self, start: usize, lookback: usize, horizon: usize) -> WindowSample {
        let (c, len) = (self.n_vars(), self.len());
        let d = self.values.data();
        let take = |from: usize, n: usize| Tensor::from_fn(&[c, n], |i| d[(i / n) * len + from + i % n]);
        WindowSample {
            lookback: SeriesWindow::new(take(start, lookback)).expect("window shape"),
            target: take(start + lookback, horizon),
            start,
        }
    }

    /// Lookbacks `[B, C, L]` and targets `[B, C, T]` for several starts.
    pub fn batch(&self, starts: &[usize], lookback: usize, horizon: usize) -> (Tensor, Tensor) {
        let (c, len) = (self.n_vars(), self.len());
        let d = self.values.data();
        let mut x = Vec::with_capacity(starts.len() * c * lookback);
        let mut y = Vec::with_capacity(starts.len() * c * horizon);
        for &s in starts {
            for ci in 0..c {
                let row = &d[ci * len..(ci + 1) * len];
                x.extend_from_slice(&row[s..s + lookback]);
                y.extend_from_slice(&row[s + lookback..s + lookback + horizon]);
            }
        }
        (
            Tensor::new(vec![starts.len(), c, lookback], x).unwrap(),
            Tensor::new(vec![starts.len(), c, horizon], y).unwrap(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub lookback: SeriesWindow,
    pub target: Tensor,
    /// Start index within the segment.
    pub start: usize,
}

pub fn windows(segment: &Segment, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<WindowSample>> {
    Ok(segment
        .window_starts(lookback, horizon, stride)?
        .into_iter()
        .map(|s| segment.sample(s, lookback, horizon))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Segment,
    pub val: Segment,
    pub test: Segment,
}

impl Splits {
    pub fn get(&self, kind: SplitKind) -> &Segment {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }
}

/// Chronological three-way split; validation and test carry `lookback`
/// rows of preceding context.
pub fn split(dataset: &Dataset, ratio: SplitRatio, lookback: usize, horizon: usize) -> Result<Splits> {
    ratio.validate()?;
    let (n_train, n_val, n_test) = ratio.lengths(dataset.n_rows());
    let seg = |kind, start: usize, len: usize, context: usize| Segment {
        kind,
        offset: start - context,
        context,
        values: dataset.slice_vars_major(start - context, len + context),
    };
    let ctx = |start: usize| lookback.min(start);
    let splits = Splits {
        train: seg(SplitKind::Train, 0, n_train, 0),
        val: seg(SplitKind::Val, n_train, n_val, ctx(n_train)),
        test: seg(SplitKind::Test, n_train + n_val, n_test, ctx(n_train + n_val)),
    };
    for s in [&splits.train, &splits.val, &splits.test] {
        s.window_starts(lookback, horizon, 1)?;
    }
    Ok(splits)
}

/// Per-variable affine map fitted on the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(dataset: &Dataset, rows: usize) -> Result<Self> {
        if rows == 0 || rows > dataset.n_rows() {
            return Err(SeedError::data(format!("cannot fit statistics on {rows} rows")));
        }
        let c = dataset.n_vars();
        let mut mean = vec![0.0; c];
        for t in 0..rows {
            for (m, v) in mean.iter_mut().zip(dataset.row(t)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for t in 0..rows {
            for ((s, v), m) in var.iter_mut().zip(dataset.row(t)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / rows as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, dataset: &Dataset) -> Dataset {
        let c = dataset.n_vars();
        let values = dataset
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % c]) / self.std[i % c])
            .collect();
        Dataset {
            values,
            ..dataset.clone()
        }
    }
}

/// Splits a dataset after standardizing it with training-split statistics.
pub fn prepare(
    dataset: &Dataset,
    ratio: SplitRatio,
    lookback: usize,
    horizon: usize,
    standardize: bool,
) -> Result<(Splits, Option<Standardizer>)> {
    if !standardize {
        return Ok((split(dataset, ratio, lookback, horizon)?, None));
    }
    let (n_train, _, _) = ratio.lengths(dataset.n_rows());
    let scaler = Standardizer::fit(dataset, n_train.max(1).min(dataset.n_rows()))?;
    let scaled = scaler.apply(dataset);
    Ok((split(&scaled, ratio, lookback, horizon)?, Some(scaler)))
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Periods used for the sine channels of [`synthetic_mixed`].
pub const SYNTH_PERIODS: [usize; 8] = [24, 12, 48, 36, 18, 60, 30, 42];

/// `n_sine` unit sinusoids at distinct periods (random phases) followed by
/// `n_noise` standard-normal channels, `length` steps.
pub fn synthetic_mixed(n_sine: usize, n_noise: usize, length: usize, seed: u64) -> Result<Dataset> {
    if n_sine + n_noise == 0 || length == 0 {
        return Err(SeedError::config("synthetic dataset needs channels and length"));
    }
    if n_sine > SYNTH_PERIODS.len() {
        return Err(SeedError::config(format!(
            "at most {} sine channels are supported",
            SYNTH_PERIODS.len()
        )));
    }
    let mut phase_rng = RngState::new(seed).fork(1);
    let phases: Vec<f64> = (0..n_sine)
        .map(|_| phase_rng.uniform() * std::f64::consts::TAU)
        .collect();
    let mut noise_rng = RngState::new(seed).fork(2);
    let c = n_sine + n_noise;
    let mut values = Vec::with_capacity(length * c);
    for t in 0..length {
        for (k, phase) in phases.iter().enumerate() {
            let p = SYNTH_PERIODS[k] as f64;
            values.push((std::f64::consts::TAU * t as f64 / p + phase).sin());
        }
        for _ in 0..n_noise {
            values.push(noise_rng.normal());
        }
    }
    let columns = (0..n_sine)
        .map(|k| format!("sine{k}"))
        .chain((0..n_noise).map(|k| format!("noise{k}")))
        .collect();
    Dataset::from_rows("synthetic", columns, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, date_col: bool) -> Result<Dataset> {
        read_csv(text.as_bytes(), "t", &CsvOptions { date_col })
    }

    #[test]
    fn toy_csv() {
        let ds = parse("a,b\n1,2\n3,4.5\n-1,1e3\n", false).unwrap();
        assert_eq!((ds.n_rows(), ds.n_vars()), (3, 2));
        assert_eq!(ds.values(), &[1.0, 2.0, 3.0, 4.5, -1.0, 1000.0]);
        assert_eq!(ds.columns, vec!["a", "b"]);
        assert!(matches!(parse("a,b\n", false), Err(SeedError::Data(_))));
        assert!(matches!(parse("", false), Err(SeedError::Data(_))));
    }

    #[test]
    fn ett_style_date_column() {
        let mut text = String::from("date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n");
        for h in 0..5 {
            text.push_str(&format!("2016-07-01 0{h}:00:00,5.8,2.0,1.5,0.4,4.2,1.3,30.5\n"));
        }
        let ds = parse(&text, true).unwrap();
        assert_eq!(ds.n_vars(), 7);
        assert_eq!(ds.columns[6], "OT");
    }

    #[test]
    fn parse_errors_and_rejections() {
        match parse("a,b\n1,2\n3,x\n", false) {
            Err(SeedError::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("a,b\n1,2\n3\n", false), Err(SeedError::Parse { row: 3, .. })));
        let ds = parse("a,b\n1,2\nNaN,1\n3,\n4,inf\n5,6\n", false).unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert_eq!(ds.rejected_rows, 3);
        assert!(matches!(parse("a\nnan\n", false), Err(SeedError::Data(_))));
    }

    #[test]
    fn csv_round_trip() {
        let ds = synthetic_mixed(2, 2, 50, 3).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), "synthetic", &CsvOptions::default()).unwrap();
        assert_eq!(back.values(), ds.values());
        assert_eq!(back.columns, ds.columns);
    }

    #[test]
    fn split_lengths() {
        let r: SplitRatio = "6:2:2".parse().unwrap();
        assert_eq!(r.lengths(100), (60, 20, 20));
        assert_eq!(r.lengths(101), (61, 20, 20));
        let pems = Registry::builtin().get("pems04").unwrap().split_ratio().unwrap();
        assert_eq!(pems.lengths(500), (300, 100, 100));
        assert_eq!("0.7,0.1,0.2".parse::<SplitRatio>().unwrap().lengths(1000), (700, 100, 200));
        assert!("1:2".parse::<SplitRatio>().is_err());
        assert!("1:0:2".parse::<SplitRatio>().is_err());
    }

    #[test]
    fn window_counts() {
        let seg = |len| Segment {
            kind: SplitKind::Train,
            offset: 0,
            context: 0,
            values: Tensor::from_fn(&[2, len], |i| i as f64),
        };
        assert_eq!(seg(192).window_starts(96, 96, 1).unwrap().len(), 1);
        assert_eq!(seg(200).window_starts(96, 96, 1).unwrap().len(), 9);
        assert_eq!(seg(200).window_starts(96, 96, 8).unwrap().len(), 2);
        assert!(matches!(seg(191).window_starts(96, 96, 1), Err(SeedError::Data(_))));
        let s = seg(10);
        let w = windows(&s, 3, 2, 1).unwrap();
        assert_eq!(w.len(), 6);
        assert_eq!(w[2].lookback.row(1), &[12.0, 13.0, 14.0]);
        assert_eq!(w[2].target.data(), &[5.0, 6.0, 15.0, 16.0]);
        let (x, y) = s.batch(&[2], 3, 2);
        assert_eq!(x.data(), w[2].lookback.values().data());
        assert_eq!(y.data(), w[2].target.data());
    }

    #[test]
    fn splits_are_disjoint_in_target_space() {
        let ds = synthetic_mixed(1, 1, 400, 1).unwrap();
        let (l, t) = (24, 12);
        let s = split(&ds, "6:2:2".parse().unwrap(), l, t).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        let mut total = 0;
        for seg in [&s.train, &s.val, &s.test] {
            let mut own = std::collections::BTreeSet::new();
            for start in seg.window_starts(l, t, 1).unwrap() {
                for k in 0..t {
                    own.insert(seg.offset + start + l + k);
                }
            }
            total += own.len();
            seen.extend(own);
        }
        assert_eq!(seen.len(), total);
        assert_eq!(s.val.offset, 240 - l);
        assert_eq!(s.val.values.data()[l], ds.row(240)[0]);
        // exhaustive and duplicate free for stride 1
        let starts = s.train.window_starts(l, t, 1).unwrap();
        assert_eq!(starts, (0..=240 - l - t).collect::<Vec<_>>());
    }

    #[test]
    fn standardization_uses_train_rows_only() {
        let values: Vec<f64> = (0..100).map(|i| if i < 60 { (i % 2) as f64 } else { 100.0 }).collect();
        let ds = Dataset::from_rows("x", vec!["v".into()], values).unwrap();
        let (splits, scaler) = prepare(&ds, "6:2:2".parse().unwrap(), 4, 2, true).unwrap();
        let scaler = scaler.unwrap();
        assert!((scaler.mean[0] - 0.5).abs() < 1e-12);
        assert!((scaler.std[0] - 0.5).abs() < 1e-12);
        assert!(splits.train.values.data().iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn registry_defaults_and_overrides() {
        let reg = Registry::builtin();
        assert_eq!(reg.entries().len(), 12);
        assert_eq!(reg.get("etth1").unwrap().split, "6:2:2");
        assert_eq!(reg.get("Weather").unwrap().split, "7:1:2");
        let toml = "[[dataset]]\nname = \"mine\"\nsplit = \"8:1:1\"\ndate_col = true\n";
        let entries = parse_registry(toml).unwrap();
        assert_eq!(entries[0].name, "mine");
        let json = r#"{"datasets": [{"name": "ETTh1", "split": "7:1:2"}]}"#;
        let mut reg = Registry::builtin();
        reg.merge(parse_registry(json).unwrap());
        assert_eq!(reg.get("ETTh1").unwrap().split, "7:1:2");
        assert!(!reg.get("ETTh1").unwrap().date_col);
        assert_eq!(parse_registry(r#"[{"name":"a","split":"1:1:1"}]"#).unwrap().len(), 1);
        assert!(parse_registry(r#"[{"name":"a","split":"1:1"}]"#).is_err());
        assert!(parse_registry("[[dataset]]\nname = \"a\"\n").is_err());
        assert!(parse_registry("not valid").is_err());
    }

    #[test]
    fn synthetic_is_seeded() {
        let a = synthetic_mixed(4, 4, 200, 9).unwrap();
        assert_eq!(a, synthetic_mixed(4, 4, 200, 9).unwrap());
        assert_ne!(a.values(), synthetic_mixed(4, 4, 200, 10).unwrap().values());
        assert_eq!(a.n_vars(), 8);
        assert!(a.column(0).iter().all(|v| v.abs() <= 1.0));
    }
}
