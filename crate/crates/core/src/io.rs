//! File formats.
//!
//! * signals: CSV `t,value` on a uniform time grid;
//! * datasets: CSV `t,y` plus a sidecar JSON naming the input signal and the
//!   regressor construction, e.g.
//!   `{"input": "u.csv", "memory": {"infinite": {"horizon": 100}}, "zero_pad": false}`;
//! * kernel specs, models, verdicts and reports: JSON.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Dataset, Memory, Signal};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes `t,<value_header>` rows, `t = (start + k)·period`.
pub fn write_signal_csv(path: &Path, signal: &Signal, value_header: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", value_header])?;
    let p = signal.sample_period();
    for (t, v) in signal.times().zip(signal.samples()) {
        let time = if p == 1.0 { t.to_string() } else { (t as f64 * p).to_string() };
        w.write_record([time, v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a two-column CSV with header `t,<anything>`; times must be uniform.
pub fn read_signal_csv(path: &Path) -> Result<Signal> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.len() != 2 || headers.get(0) != Some("t") {
        return Err(Error::InvalidArgument(format!("{}: expected a 't,<value>' header", path.display())));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec[k].trim().parse().map_err(|_| Error::InvalidArgument(format!("{}: bad number '{}'", path.display(), &rec[k])))
        };
        times.push(parse(0)?);
        values.push(parse(1)?);
    }
    if times.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no samples", path.display())));
    }
    let period = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
    if !(period > 0.0) {
        return Err(Error::InvalidArgument(format!("{}: times must increase", path.display())));
    }
    let start = (times[0] / period).round();
    for (k, t) in times.iter().enumerate() {
        if ((start + k as f64) * period - t).abs() > 1e-9 * period.max(t.abs()) {
            return Err(Error::InvalidArgument(format!("{}: non-uniform time at row {}", path.display(), k + 2)));
        }
    }
    Signal::new(values, start as i64, period)
}

/// Sidecar describing how a `t,y` file becomes a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    /// Input signal CSV, relative to the sidecar's directory.
    pub input: PathBuf,
    pub memory: Memory,
    #[serde(default)]
    pub zero_pad: bool,
}

/// Default sidecar location: `<data>.json` next to the data file.
pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

pub fn load_dataset(data: &Path, sidecar: Option<&Path>) -> Result<Dataset> {
    let side_path = sidecar.map_or_else(|| sidecar_path(data), Path::to_path_buf);
    let side: DatasetSidecar = read_json(&side_path)?;
    let base = side_path.parent().unwrap_or(Path::new("."));
    let u = read_signal_csv(&base.join(&side.input))?;
    let y = read_signal_csv(data)?;
    Dataset::from_signals(&u, &y, side.memory, side.zero_pad)
}

pub fn write_predictions(path: &Path, times: &[f64], y_hat: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "y_hat"])?;
    for (t, y) in times.iter().zip(y_hat) {
        w.write_record([t.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.csv");
        let s = Signal::discrete(vec![0.1, -2.5, 1.0 / 3.0], -4).unwrap();
        write_signal_csv(&p, &s, "value").unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("t,value\n-4,0.1\n"));
        assert_eq!(read_signal_csv(&p).unwrap(), s);
        let c = Signal::new(vec![1.0, 2.0, 3.0], 2, 0.25).unwrap();
        write_signal_csv(&p, &c, "value").unwrap();
        assert_eq!(read_signal_csv(&p).unwrap(), c);
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "time,value\n0,1\n").unwrap();
        assert!(read_signal_csv(&p).is_err());
        std::fs::write(&p, "t,value\n0,1\n1,2\n3,4\n").unwrap();
        assert!(read_signal_csv(&p).is_err());
    }

    #[test]
    fn dataset_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let u = Signal::discrete(vec![1.0, 2.0, 3.0, 4.0], 0).unwrap();
        let y = Signal::discrete(vec![10.0, 20.0], 2).unwrap();
        write_signal_csv(&dir.path().join("u.csv"), &u, "value").unwrap();
        let data = dir.path().join("train.csv");
        write_signal_csv(&data, &y, "y").unwrap();
        let side = DatasetSidecar { input: "u.csv".into(), memory: Memory::Finite(2), zero_pad: false };
        write_json(&sidecar_path(&data), &side).unwrap();
        let d = load_dataset(&data, None).unwrap();
        assert_eq!(d.locations[0].values, vec![3.0, 2.0]);
        assert_eq!(d.outputs, vec![10.0, 20.0]);
        assert_eq!(d.timestamps, vec![2.0, 3.0]);
    }
}
