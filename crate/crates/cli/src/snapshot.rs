//! Density snapshots and optimizer checkpoints.
//!
//! A snapshot is a little-endian binary file:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `VRFBRHO1` |
//! | 3 × 8 | cell counts nx, ny, nz of the design layer (u64) |
//! | 3 × 8 | spacing hx, hy, hz in metres (f64) |
//! | 8 | iteration (u64) |
//! | 8·n | raw densities ρ (f64), design-cell order |
//! | 8·n | filtered densities ρ̃ (f64) |
//!
//! The checkpoint is JSON holding the complete optimizer state, so a resumed
//! run continues exactly where the interrupted one stopped.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vrfb_core::topopt::DensityField;
use vrfb_core::{Grid, IterationRecord, OptimizerState};

use crate::error::{CliError, CliResult};

const MAGIC: &[u8; 8] = b"VRFBRHO1";

#[derive(Debug, Clone, PartialEq)]
pub struct DensitySnapshot {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub iteration: usize,
    pub rho: Vec<f64>,
    pub filtered: Vec<f64>,
}

impl DensitySnapshot {
    pub fn new(grid: &Grid, iteration: usize, density: &DensityField) -> Self {
        Self {
            dims: [grid.nx, grid.ny, grid.nz_channel],
            spacing: [grid.hx, grid.hy, grid.dz(grid.nz_electrode)],
            iteration,
            rho: density.rho.clone(),
            filtered: density.filtered.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 16 * self.rho.len());
        out.extend_from_slice(MAGIC);
        for d in self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for s in self.spacing {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&(self.iteration as u64).to_le_bytes());
        for v in self.rho.iter().chain(&self.filtered) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> CliResult<Self> {
        let bad = |r: &str| CliError::format(path, r.to_string());
        if bytes.len() < 64 || &bytes[..8] != MAGIC {
            return Err(bad("not a density snapshot"));
        }
        let word = |i: usize| -> [u8; 8] { bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes") };
        let dims = [0, 1, 2].map(|i| u64::from_le_bytes(word(i)) as usize);
        let spacing = [3, 4, 5].map(|i| f64::from_le_bytes(word(i)));
        let iteration = u64::from_le_bytes(word(6)) as usize;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad("bad dimensions"))?;
        let body = &bytes[64..];
        if body.len() != 16 * n {
            return Err(bad("payload size does not match the header"));
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            dims,
            spacing,
            iteration,
            rho: vals[..n].to_vec(),
            filtered: vals[n..].to_vec(),
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// The stored design, checked against `grid`.
    pub fn density(&self, grid: &Grid) -> CliResult<DensityField> {
        if self.dims != [grid.nx, grid.ny, grid.nz_channel] {
            return Err(CliError::Usage(format!(
                "snapshot has {:?} design cells, the configured grid {:?}",
                self.dims,
                [grid.nx, grid.ny, grid.nz_channel]
            )));
        }
        let d = DensityField {
            rho: self.rho.clone(),
            filtered: self.filtered.clone(),
            radius: 0.0,
        };
        d.check(grid)?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub pressure_drop: f64,
    pub flow_rate: f64,
    pub mean_abs_eta: f64,
    pub max_change: f64,
}

impl From<&IterationRecord> for TraceRow {
    fn from(r: &IterationRecord) -> Self {
        Self {
            iteration: r.iteration,
            objective: r.objective,
            pressure_drop: r.pressure_drop,
            flow_rate: r.flow_rate,
            mean_abs_eta: r.mean_abs_eta,
            max_change: r.max_change,
        }
    }
}

impl From<&TraceRow> for IterationRecord {
    fn from(r: &TraceRow) -> Self {
        Self {
            iteration: r.iteration,
            objective: r.objective,
            pressure_drop: r.pressure_drop,
            flow_rate: r.flow_rate,
            mean_abs_eta: r.mean_abs_eta,
            max_change: r.max_change,
        }
    }
}

/// Serializable mirror of [`OptimizerState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Hash of the configuration the state belongs to.
    pub config_hash: String,
    pub iteration: usize,
    pub rho: Vec<f64>,
    pub move_limit: f64,
    pub worse_count: usize,
    pub stall_count: usize,
    pub variable_moves: Vec<f64>,
    pub last_direction: Vec<i8>,
    pub warm_start: Option<Vec<f64>>,
    pub trace: Vec<TraceRow>,
}

impl Checkpoint {
    pub fn new(config_hash: &str, s: &OptimizerState) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            iteration: s.iteration,
            rho: s.rho.clone(),
            move_limit: s.move_limit,
            worse_count: s.worse_count,
            stall_count: s.stall_count,
            variable_moves: s.variable_moves.clone(),
            last_direction: s.last_direction.clone(),
            warm_start: s.warm_start.clone(),
            trace: s.trace.iter().map(TraceRow::from).collect(),
        }
    }

    pub fn state(&self) -> OptimizerState {
        OptimizerState {
            iteration: self.iteration,
            rho: self.rho.clone(),
            move_limit: self.move_limit,
            worse_count: self.worse_count,
            stall_count: self.stall_count,
            variable_moves: self.variable_moves.clone(),
            last_direction: self.last_direction.clone(),
            warm_start: self.warm_start.clone(),
            trace: self.trace.iter().map(IterationRecord::from).collect(),
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string(self).map_err(|e| CliError::format(path, e.to_string()))?;
        // write then rename so an interrupted run never leaves a torn checkpoint
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn snapshot_bytes_round_trip(vals in proptest::collection::vec(0.0f64..=1.0, 12), it in 0usize..1000) {
            let s = DensitySnapshot {
                dims: [2, 3, 1],
                spacing: [1e-3, 2e-3, 3e-3],
                iteration: it,
                rho: vals[..6].to_vec(),
                filtered: vals[6..].to_vec(),
            };
            let back = DensitySnapshot::from_bytes(&s.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, s);
        }

        #[test]
        fn checkpoint_json_round_trips_floats(vals in proptest::collection::vec(-1e10f64..1e10, 1..20)) {
            let c = Checkpoint {
                config_hash: "abc".into(),
                iteration: 3,
                rho: vals.clone(),
                move_limit: 0.1,
                worse_count: 1,
                stall_count: 0,
                variable_moves: vals.iter().map(|v| v.abs() / 7.0).collect(),
                last_direction: vals.iter().map(|v| v.signum() as i8).collect(),
                warm_start: Some(vals.iter().map(|v| v / 3.0).collect()),
                trace: vec![],
            };
            let text = serde_json::to_string(&c).unwrap();
            let back: Checkpoint = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, c);
        }
    }

    #[test]
    fn truncated_snapshot_is_rejected() {
        let s = DensitySnapshot {
            dims: [1, 1, 2],
            spacing: [1.0; 3],
            iteration: 0,
            rho: vec![0.5; 2],
            filtered: vec![0.5; 2],
        };
        let b = s.to_bytes();
        assert!(DensitySnapshot::from_bytes(&b[..b.len() - 1], Path::new("mem")).is_err());
        assert!(DensitySnapshot::from_bytes(b"nonsense", Path::new("mem")).is_err());
    }
}
