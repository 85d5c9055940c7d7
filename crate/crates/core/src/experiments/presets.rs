use serde::{Deserialize, Serialize};

use super::basin::BasinConfig;
use super::tracking::{swing_nominal, TrackingConfig};
use super::ControllerKind;
use crate::error::Result;
use crate::minimal::MinimalModel;
use crate::systems::SystemKind;
use crate::trajectory::TrajectoryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Coarse grids and 10 ms steps; minutes on a laptop.
    Desk,
    /// Fine grids, 1 ms steps and 1000 tracking runs.
    Full,
}

impl Preset {
    pub fn dt(self) -> f64 {
        match self {
            Preset::Desk => 0.01,
            Preset::Full => 0.001,
        }
    }

    pub fn grid_count(self) -> usize {
        match self {
            Preset::Desk => 17,
            Preset::Full => 101,
        }
    }

    pub fn tracking_runs(self) -> usize {
        match self {
            Preset::Desk => 50,
            Preset::Full => 1000,
        }
    }
}

pub fn basin_config(system: SystemKind, controller: ControllerKind, preset: Preset) -> BasinConfig {
    BasinConfig::for_system(system, controller, preset.grid_count(), preset.dt())
}

pub fn tracking_config(system: SystemKind, preset: Preset, seed: u64) -> TrackingConfig {
    TrackingConfig::new(system, preset.tracking_runs(), seed, preset.dt())
}

/// Swing amplitude and frequency of the built-in nominal.
pub const SWING_AMPLITUDE: f64 = 8.0;
pub const SWING_FREQUENCY: f64 = 0.6;
pub const SWING_DURATION: f64 = 5.0;

/// Built-in open-loop swing nominal used when no nominal file is supplied.
pub fn default_nominal(model: &MinimalModel, dt: f64) -> Result<TrajectoryRecord> {
    swing_nominal(model, SWING_AMPLITUDE, SWING_FREQUENCY, SWING_DURATION, dt)
}
