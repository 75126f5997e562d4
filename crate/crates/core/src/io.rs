//! Files of a run directory.
//!
//! ```text
//! manifest.json            config echo, seeds, convergence flags, timing
//! states/state_K.json      StateRecord (grid, ψ samples, energy, losses)
//! states/state_K.csv       x, psi_re[, psi_im]
//! checkpoints/state_K.json network parameters
//! history/state_K.csv      loss history, one row per log interval
//! metrics.csv              written by `evaluate`
//! plots/                   written by `export-plots`
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::SolveConfig;
use crate::error::{Error, Result};
use crate::losses::LossTerm;
use crate::network::{NetworkParams, NetworkSpec};
use crate::trainer::{HistoryRow, StateRecord};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.csv";

pub fn state_json(index: usize) -> PathBuf {
    Path::new("states").join(format!("state_{index}.json"))
}

pub fn state_csv(index: usize) -> PathBuf {
    Path::new("states").join(format!("state_{index}.csv"))
}

pub fn checkpoint_file(index: usize) -> PathBuf {
    Path::new("checkpoints").join(format!("state_{index}.json"))
}

pub fn history_csv(index: usize) -> PathBuf {
    Path::new("history").join(format!("state_{index}.csv"))
}

/// Write `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, &(text + "\n"))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Saved network parameters.
///
/// JSON with a header (`spec`, `seed`, `epoch`) followed by the flat
/// parameter vector in the order of [`NetworkParams::as_slice`]: for each
/// layer the row-major `fan_out × fan_in` weights then the biases, and
/// finally the energy weight and bias. Floats are written so that they
/// read back bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    /// Seed the state was trained with.
    pub seed: u64,
    /// Epoch at which these parameters were recorded.
    pub epoch: u64,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: &NetworkParams, seed: u64, epoch: u64) -> Self {
        Checkpoint {
            spec: params.spec().clone(),
            seed,
            epoch,
            params: params.as_slice().to_vec(),
        }
    }

    pub fn into_params(self) -> Result<NetworkParams> {
        NetworkParams::from_vec(&self.spec, self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(i) = self.params.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(path, format!("parameter {i} is not finite")));
        }
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Outcome of one state in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestState {
    pub index: usize,
    pub seed: u64,
    pub energy: f64,
    pub converged: bool,
    pub epochs_used: u64,
    pub total_loss: f64,
    pub seconds: f64,
}

/// `manifest.json`: enough to rerun and to locate every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub config: SolveConfig,
    pub n_states: usize,
    pub seed: u64,
    pub complete: bool,
    pub wall_clock_seconds: f64,
    pub states: Vec<ManifestState>,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        read_json(&run_dir.join(MANIFEST))
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        write_json(&run_dir.join(MANIFEST), self)
    }
}

/// Load every state record listed in the manifest of `run_dir`.
pub fn load_records(run_dir: &Path) -> Result<(Manifest, Vec<StateRecord>)> {
    let manifest_path = run_dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::usage(format!("{} has no {MANIFEST}; not a run directory", run_dir.display())));
    }
    let manifest = Manifest::load(run_dir)?;
    if manifest.states.is_empty() {
        return Err(Error::usage(format!("{} contains no state records", run_dir.display())));
    }
    let records = manifest
        .states
        .iter()
        .map(|s| read_json(&run_dir.join(state_json(s.index))))
        .collect::<Result<_>>()?;
    Ok((manifest, records))
}

/// Write a state's JSON record and its samples CSV.
pub fn save_record(run_dir: &Path, record: &StateRecord) -> Result<()> {
    write_json(&run_dir.join(state_json(record.index)), record)?;
    write_file(&run_dir.join(state_csv(record.index)), &samples_csv(record))
}

/// `x, psi_re[, psi_im]` on the record's grid.
pub fn samples_csv(record: &StateRecord) -> String {
    let complex = record.psi.num_channels() == 2;
    let mut out = String::from(if complex { "x,psi_re,psi_im\n" } else { "x,psi_re\n" });
    for (j, x) in record.grid.iter().enumerate() {
        let _ = write!(out, "{x},{}", record.psi.re()[j]);
        if let Some(im) = record.psi.im() {
            let _ = write!(out, ",{}", im[j]);
        }
        out.push('\n');
    }
    out
}

/// Loss history: epoch, total, energy, fidelity, then the loss and weight
/// of each term. Absent terms and a missing fidelity are left empty.
pub fn history_csv_text(rows: &[HistoryRow]) -> String {
    let mut out = String::from("epoch,total,energy,fidelity");
    for t in LossTerm::ALL {
        let _ = write!(out, ",loss_{}", t.name());
    }
    for t in LossTerm::ALL {
        let _ = write!(out, ",weight_{}", t.name());
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{},", r.epoch, r.total, r.energy);
        if let Some(f) = r.fidelity {
            let _ = write!(out, "{f}");
        }
        for (_, v) in r.losses.iter() {
            out.push(',');
            if let Some(v) = v {
                let _ = write!(out, "{v}");
            }
        }
        for w in r.weights {
            let _ = write!(out, ",{w}");
        }
        out.push('\n');
    }
    out
}

/// Parsed loss-history CSV: `(epoch, total, fidelity)` per row.
pub fn read_history(path: &Path) -> Result<Vec<(u64, f64, Option<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize| Error::format(path, format!("malformed row {line}"));
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, line)| {
            let mut cols = line.split(',');
            let epoch = cols.next().and_then(|c| c.parse().ok()).ok_or_else(|| bad(i))?;
            let total = cols.next().and_then(|c| c.parse().ok()).ok_or_else(|| bad(i))?;
            let fidelity = cols.nth(1).and_then(|c| c.parse().ok());
            Ok((epoch, total, fidelity))
        })
        .collect()
}

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub system: String,
    /// Quantum number of the matched exact state.
    pub n: i64,
    pub e_pinn: f64,
    pub e_exact: f64,
    /// Signed relative error, or the raw energy when `e_exact` is zero.
    pub err_e: f64,
    pub fidelity: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("system,n,E_pinn,E_exact,err_E,fidelity\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.system, r.n, r.e_pinn, r.e_exact, r.err_e, r.fidelity);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossBreakdown;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let spec = crate::config::SolveConfig::well().network;
        let params = NetworkParams::init(&spec, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        Checkpoint::new(&params, 3, 17).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!((loaded.seed, loaded.epoch), (3, 17));
        let back = loaded.into_params().unwrap();
        assert_eq!(back.as_slice(), params.as_slice());
    }

    #[test]
    fn history_round_trip() {
        let mut losses = LossBreakdown::default();
        losses.set(LossTerm::Pde, 0.25);
        let rows = vec![
            HistoryRow {
                epoch: 0,
                losses: losses.clone(),
                weights: [1.0; 9],
                total: 3.5,
                energy: 0.1,
                fidelity: Some(0.5),
            },
            HistoryRow {
                epoch: 100,
                losses,
                weights: [1.0; 9],
                total: 1.5,
                energy: 0.2,
                fidelity: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        write_file(&path, &history_csv_text(&rows)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 4 + 18);
        assert!(text.lines().all(|l| l.split(',').count() == 22));
        assert_eq!(read_history(&path).unwrap(), vec![(0, 3.5, Some(0.5)), (100, 1.5, None)]);
    }

    #[test]
    fn metrics_header() {
        let text = metrics_csv(&[]);
        assert_eq!(text, "system,n,E_pinn,E_exact,err_E,fidelity\n");
    }

    #[test]
    fn missing_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_records(dir.path()).is_err());
    }
}
