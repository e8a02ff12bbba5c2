//! Synthetic series, lag embedding, causal standardisation and CSV input.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard on the running standard deviation.
pub const EPS_SD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub values: Vec<f64>,
    pub name: String,
    /// Generator seed, 0 for external data.
    pub sample_seed: u64,
}

impl Series {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("series value"));
        }
        Ok(Self { values, name: name.into(), sample_seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The deterministic part of the synthetic map, `2x / (1 + 0.8x²)`.
pub fn ar_map(x: f64) -> f64 {
    2.0 * x / (1.0 + 0.8 * x * x)
}

/// `x_t = 2x_{t−1} / (1 + 0.8x²_{t−1}) + ε_t` with `ε_t, x₀ ~ U(−1, 1)`.
///
/// Returns `n` values, the first being `x₀`.
pub fn gen_nonlinear_ar(n: usize, seed: u64) -> Result<Series> {
    if n == 0 {
        return Err(Error::InvalidArgument("series length must be at least 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n);
    let mut x = rng.random_range(-1.0..1.0);
    values.push(x);
    for _ in 1..n {
        x = ar_map(x) + rng.random_range(-1.0..1.0);
        values.push(x);
    }
    Ok(Series { values, name: "nonlinear_ar".into(), sample_seed: seed })
}

/// Lags `x_{t−1}, …, x_{t−L}` (most recent first) and target `x_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaggedSample {
    pub x: Vec<f64>,
    pub y: f64,
    pub t: usize,
}

pub fn lag_embed(values: &[f64], lags: usize) -> Result<Vec<LaggedSample>> {
    if lags == 0 {
        return Err(Error::InvalidArgument("lag order must be at least 1".into()));
    }
    if values.len() < lags + 1 {
        return Err(Error::InsufficientData { required: lags + 1, available: values.len() });
    }
    Ok((lags..values.len())
        .map(|t| LaggedSample { x: (1..=lags).map(|k| values[t - k]).collect(), y: values[t], t })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StandardizerMode {
    Expanding,
    Frozen,
}

/// Causal z-scoring: each value is scaled by statistics of strictly earlier
/// values (Welford accumulation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineStandardizer {
    pub count: u64,
    pub running_mean: f64,
    pub running_m2: f64,
    pub mode: StandardizerMode,
}

impl Default for OnlineStandardizer {
    fn default() -> Self {
        Self::new()
    }
}

impl OnlineStandardizer {
    pub fn new() -> Self {
        Self { count: 0, running_mean: 0.0, running_m2: 0.0, mode: StandardizerMode::Expanding }
    }

    /// Population standard deviation of the values seen so far.
    pub fn sd(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.running_m2 / self.count as f64).max(0.0).sqrt()
        }
    }

    pub fn freeze(&mut self) {
        self.mode = StandardizerMode::Frozen;
    }

    pub fn ingest(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.running_mean;
        self.running_mean += delta / self.count as f64;
        self.running_m2 += delta * (x - self.running_mean);
    }

    /// `(x − mean) / max(sd, EPS_SD)` from prior observations, then ingests
    /// `x` unless frozen. The very first value maps to 0.
    ///
    /// With a single prior value the sd is 0, so the guard applies in full:
    /// the stream `{0, 2}` yields `0` and then `2 / EPS_SD`.
    pub fn push(&mut self, x: f64) -> f64 {
        let out = if self.count == 0 { 0.0 } else { (x - self.running_mean) / self.sd().max(EPS_SD) };
        if self.mode == StandardizerMode::Expanding {
            self.ingest(x);
        }
        out
    }
}

/// Standardises a whole series causally.
pub fn standardize_causal(values: &[f64]) -> Vec<f64> {
    let mut s = OnlineStandardizer::new();
    values.iter().map(|&v| s.push(v)).collect()
}

/// Column selector for [`read_csv_series`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl ColumnRef {
    /// Numeric strings select by index, anything else by name.
    pub fn parse(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        }
    }
}

/// Reads one numeric column. A first line whose cells are not all numeric
/// is taken as the header. Row numbers in errors are 1-based file lines.
pub fn read_csv_series(path: &Path, column: &ColumnRef) -> Result<Series> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path).map_err(csv_err)?;
    let mut records = reader.records();
    let first = match records.next() {
        Some(r) => r.map_err(csv_err)?,
        None => return Err(Error::MissingColumn(format!("{} is empty", path.display()))),
    };
    let has_header = first.iter().any(|cell| cell.trim().parse::<f64>().is_err());
    let index = match column {
        ColumnRef::Index(i) => *i,
        ColumnRef::Name(name) => {
            if !has_header {
                return Err(Error::MissingColumn(format!("{name} (file has no header)")));
            }
            first
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))?
        }
    };

    let mut values = Vec::new();
    let mut parse_row = |record: &csv::StringRecord, row: usize| -> Result<()> {
        let cell = record.get(index).ok_or_else(|| Error::Csv { row, message: format!("no column {index}") })?;
        let v: f64 = cell
            .trim()
            .parse()
            .map_err(|_| Error::Csv { row, message: format!("non-numeric cell {cell:?}") })?;
        if !v.is_finite() {
            return Err(Error::Csv { row, message: format!("non-finite cell {cell:?}") });
        }
        values.push(v);
        Ok(())
    };
    if !has_header {
        parse_row(&first, 1)?;
    }
    for record in records {
        let record = record.map_err(csv_err)?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        parse_row(&record, row)?;
    }
    if values.is_empty() {
        return Err(Error::MissingColumn(format!("column {index} has no data rows")));
    }
    let name = match column {
        ColumnRef::Name(n) => n.clone(),
        ColumnRef::Index(i) => format!("column_{i}"),
    };
    Series::new(name, values)
}

fn csv_err(e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => return Error::Io(io),
            _ => unreachable!(),
        }
    }
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Csv { row, message: e.to_string() }
}

/// The prequential design used by the synthetic experiments: standardise
/// the raw series causally, embed with `lags`, and keep the last
/// `window + steps` samples (the leading ones act as burn-in for the
/// standardiser and the dynamics).
pub fn prepare_stream(values: &[f64], lags: usize, window: usize, steps: usize) -> Result<Vec<LaggedSample>> {
    let standardized = standardize_causal(values);
    let samples = lag_embed(&standardized, lags)?;
    let needed = window + steps;
    if samples.len() < needed {
        return Err(Error::InsufficientData { required: needed + lags, available: values.len() });
    }
    Ok(samples[samples.len() - needed..].to_vec())
}
