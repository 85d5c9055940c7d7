//! Time-indexed rollout records and their file format.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{BodyState, MechanismState, Multipliers};

pub const FORMAT_NAME: &str = "maxlqr-trajectory";
pub const FORMAT_VERSION: u32 = 1;

/// States `z_0..z_N`, controls and multipliers `0..N−1`, stage costs `0..N`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<MechanismState>,
    pub controls: Vec<DVector<f64>>,
    pub multipliers: Vec<Multipliers>,
    pub stage_costs: Vec<f64>,
    pub accumulated_cost: f64,
}

impl TrajectoryRecord {
    pub fn start(state: MechanismState, t0: f64) -> Self {
        TrajectoryRecord { times: vec![t0], states: vec![state], ..Default::default() }
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn push(&mut self, u: DVector<f64>, lambda: Multipliers, next: MechanismState, dt: f64) {
        let t = self.times.last().copied().unwrap_or(0.0) + dt;
        self.controls.push(u);
        self.multipliers.push(lambda);
        self.states.push(next);
        self.times.push(t);
    }

    pub fn add_cost(&mut self, c: f64) {
        self.stage_costs.push(c);
        self.accumulated_cost += c;
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.controls.len();
        if self.states.len() != n + 1 || self.times.len() != n + 1 || self.multipliers.len() != n {
            return Err(Error::Format(format!(
                "inconsistent lengths: {} states, {} times, {} controls, {} multipliers",
                self.states.len(),
                self.times.len(),
                n,
                self.multipliers.len()
            )));
        }
        if self.stage_costs.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::Format("stage costs must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TrajectoryFile {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            times: self.times.clone(),
            states: self.states.iter().map(|s| s.bodies.iter().map(|b| b.to_raw().to_vec()).collect()).collect(),
            controls: self.controls.iter().map(|u| u.as_slice().to_vec()).collect(),
            multipliers: self.multipliers.iter().map(|l| l.0.as_slice().to_vec()).collect(),
            stage_costs: self.stage_costs.clone(),
            accumulated_cost: self.accumulated_cost,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TrajectoryFile = serde_json::from_str(text)?;
        if file.format != FORMAT_NAME {
            return Err(Error::Format(format!("not a trajectory file (format '{}')", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported trajectory version {}", file.version)));
        }
        let states = file
            .states
            .iter()
            .enumerate()
            .map(|(k, bodies)| {
                let bodies = bodies.iter().map(|raw| BodyState::from_raw(raw)).collect::<Result<Vec<_>>>()?;
                Ok(MechanismState { bodies, k })
            })
            .collect::<Result<Vec<_>>>()?;
        let rec = TrajectoryRecord {
            times: file.times,
            states,
            controls: file.controls.into_iter().map(DVector::from_vec).collect(),
            multipliers: file.multipliers.into_iter().map(|l| Multipliers(DVector::from_vec(l))).collect(),
            stage_costs: file.stage_costs,
            accumulated_cost: file.accumulated_cost,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryFile {
    format: String,
    version: u32,
    times: Vec<f64>,
    /// Per state, per body: x, v, q (w, x, y, z), ω.
    states: Vec<Vec<Vec<f64>>>,
    controls: Vec<Vec<f64>>,
    multipliers: Vec<Vec<f64>>,
    stage_costs: Vec<f64>,
    accumulated_cost: f64,
}

/// Writes a matrix as whitespace-separated rows.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
        writeln!(f, "{}", row.join(" "))?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(|t| t.parse::<f64>().map_err(|e| Error::Format(e.to_string()))).collect())
        .collect::<Result<_>>()?;
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format("ragged matrix file".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    #[test]
    fn json_round_trip_is_exact() {
        let s = MechanismState::new(vec![BodyState {
            x: Vector3::new(0.1, 1.0 / 3.0, -2.5e-7),
            v: Vector3::new(std::f64::consts::PI, 0.0, -1.0),
            q: UnitQuaternion::from_euler_angles(0.3, -0.2, 0.1),
            omega: Vector3::new(1e-300, 2.0, 3.0),
        }]);
        let mut rec = TrajectoryRecord::start(s.clone(), 0.0);
        rec.push(DVector::from_vec(vec![0.1 + 0.2]), Multipliers(DVector::from_vec(vec![9.81])), s, 0.01);
        rec.add_cost(0.5);
        let text = rec.to_json().unwrap();
        let back = TrajectoryRecord::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.controls[0][0].to_bits(), (0.1f64 + 0.2).to_bits());
    }

    #[test]
    fn matrix_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 1.0 / 3.0, 0.0, 1e-12, 7.0]);
        let p = dir.path().join("m.txt");
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
    }
}
