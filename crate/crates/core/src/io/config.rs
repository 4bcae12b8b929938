//! Run configuration: one TOML file covering the grid, transcription
//! choices, solver knobs, simulation refinement, and rolling-horizon
//! settings. Every field has a default, so an empty (or absent) file is a
//! valid configuration; unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::SolverOptions;
use crate::transcription::{HorizonData, TranscribeOptions};

/// Grid and transcription settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Collocation points per horizon.
    pub grid_points: usize,
    /// Optimization horizon in hours.
    pub horizon_hours: f64,
    /// Momentum smoothing δ.
    pub smoothing: f64,
    /// Pipes are split into segments strictly shorter than this when set.
    pub segment_km: Option<f64>,
    /// Hours covered by the input data (defaults to the horizon).
    pub data_hours: Option<f64>,
    /// Ramp length in hours blending the data end back onto its start;
    /// enables the extended-horizon read when set.
    pub blend_hours: Option<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            grid_points: 24,
            horizon_hours: 24.0,
            smoothing: 1e-6,
            segment_km: None,
            data_hours: None,
            blend_hours: None,
        }
    }
}

/// Interior-point knobs; defaults mirror [`SolverOptions::default`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    pub mu_init: f64,
    pub mu_shrink: f64,
    pub mu_power: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub dual_reg: f64,
    pub primal_reg_init: f64,
    pub bound_push: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            max_iterations: o.max_iterations,
            kkt_tolerance: o.kkt_tolerance,
            mu_init: o.mu_init,
            mu_shrink: o.mu_shrink,
            mu_power: o.mu_power,
            armijo: o.armijo,
            backtrack: o.backtrack,
            max_backtracks: o.max_backtracks,
            dual_reg: o.dual_reg,
            primal_reg_init: o.primal_reg_init,
            bound_push: o.bound_push,
        }
    }
}

/// Independent-replay settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// Fine steps per collocation interval.
    pub substeps: usize,
    /// Skip the post-solve replay when false.
    pub check: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            substeps: 8,
            check: true,
        }
    }
}

/// Rolling-horizon settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSection {
    pub steps: usize,
    pub shift_hours: f64,
}

impl Default for MpcSection {
    fn default() -> Self {
        Self {
            steps: 3,
            shift_hours: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub solver: SolverSection,
    pub simulate: SimulateSection,
    pub mpc: MpcSection,
}

impl RunConfig {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iterations: self.solver.max_iterations,
            kkt_tolerance: self.solver.kkt_tolerance,
            mu_init: self.solver.mu_init,
            mu_shrink: self.solver.mu_shrink,
            mu_power: self.solver.mu_power,
            armijo: self.solver.armijo,
            backtrack: self.solver.backtrack,
            max_backtracks: self.solver.max_backtracks,
            dual_reg: self.solver.dual_reg,
            primal_reg_init: self.solver.primal_reg_init,
            bound_push: self.solver.bound_push,
        }
    }

    /// Transcription options at the given window offset; the extended-horizon
    /// blend is enabled when `blend_hours` is set.
    pub fn transcribe_options(&self, hour_offset: f64) -> Result<TranscribeOptions> {
        let extension = match self.run.blend_hours {
            None => None,
            Some(tau) => Some(HorizonData::new(
                self.run.data_hours.unwrap_or(self.run.horizon_hours),
                tau,
            )?),
        };
        Ok(TranscribeOptions {
            smoothing: self.run.smoothing,
            hour_offset,
            extension,
        })
    }
}

/// Reads the configuration, or returns all defaults when no path is given.
pub fn read_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(name: &str, content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("pipeclear-config-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn defaults_apply_without_a_file() {
        let cfg = read_config(None).unwrap();
        assert_eq!(cfg.run.grid_points, 24);
        assert_eq!(cfg.simulate.substeps, 8);
        let o = cfg.solver_options();
        let d = SolverOptions::default();
        assert_eq!(o.kkt_tolerance, d.kkt_tolerance);
        assert_eq!(o.max_iterations, d.max_iterations);
        assert!(cfg.transcribe_options(0.0).unwrap().extension.is_none());
    }

    #[test]
    fn partial_files_override_only_their_keys() {
        let path = write_temp(
            "partial.toml",
            "[run]\ngrid_points = 12\nhorizon_hours = 6.0\nblend_hours = 2.0\n\n[solver]\nkkt_tolerance = 1e-9\n",
        );
        let cfg = read_config(Some(&path)).unwrap();
        assert_eq!(cfg.run.grid_points, 12);
        assert_eq!(cfg.solver_options().kkt_tolerance, 1e-9);
        assert_eq!(cfg.solver_options().mu_init, 0.1);
        assert_eq!(cfg.mpc.steps, 3);
        let opts = cfg.transcribe_options(1.0).unwrap();
        assert_eq!(opts.hour_offset, 1.0);
        let ext = opts.extension.unwrap();
        assert_eq!(ext.horizon(), 6.0);
        assert_eq!(ext.tau(), 2.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let path = write_temp("bad.toml", "[run]\ngrid_pts = 12\n");
        assert!(matches!(
            read_config(Some(&path)),
            Err(Error::Parse { .. })
        ));
    }
}
