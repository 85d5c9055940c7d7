use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    make_open_loop_nominal, simulate_closed_loop, Controller, ControllerKind, LoopSpec, MaximalLqr, MinimalLqr,
    MinimalWeights, Outcome, ReferencePath, StageCost, StopRule,
};
use crate::error::{Error, Result};
use crate::linearization::{linearize_trajectory, LinearizedSystem};
use crate::lqr::{tvlqr, tvlqr_scheduled, CostWeights};
use crate::mechanism::{Mechanism, MechanismState};
use crate::minimal::{matched_cost_matrix, MinimalModel};
use crate::systems::SystemKind;
use crate::trajectory::TrajectoryRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingConfig {
    pub system: SystemKind,
    pub runs: usize,
    pub noise_sigma: f64,
    pub friction_k: f64,
    pub mass_factor_range: [f64; 2],
    pub init_jitter_range: [f64; 2],
    pub weights: MinimalWeights,
    pub seed: u64,
    pub dt: f64,
    pub blowup_omega: f64,
}

impl TrackingConfig {
    pub fn new(system: SystemKind, runs: usize, seed: u64, dt: f64) -> Self {
        TrackingConfig {
            system,
            runs,
            noise_sigma: 2.0,
            friction_k: 0.1,
            mass_factor_range: [0.9, 1.1],
            init_jitter_range: [-0.1, 0.1],
            weights: tracking_weights(system),
            seed,
            dt,
            blowup_omega: StopRule::default().blowup_omega,
        }
    }

    /// Same settings with every perturbation switched off.
    pub fn noiseless(&self) -> Self {
        TrackingConfig {
            noise_sigma: 0.0,
            friction_k: 0.0,
            mass_factor_range: [1.0, 1.0],
            init_jitter_range: [0.0, 0.0],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r.iter().all(|x| x.is_finite());
        if self.runs == 0 {
            return Err(Error::InvalidArgument("runs must be at least 1".into()));
        }
        if !ordered(self.mass_factor_range) || self.mass_factor_range[0] <= 0.0 {
            return Err(Error::InvalidArgument("mass_factor_range must be positive and ordered".into()));
        }
        if !ordered(self.init_jitter_range) {
            return Err(Error::InvalidArgument("init_jitter_range must be ordered".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.friction_k >= 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidArgument("noise_sigma and friction_k must be nonnegative, dt positive".into()));
        }
        Ok(())
    }
}

/// Weights for the tracking study.
pub fn tracking_weights(system: SystemKind) -> MinimalWeights {
    match system {
        SystemKind::Cartpole => MinimalWeights { q: vec![10.0, 10.0, 1.0, 1.0], r: vec![0.1] },
        other => MinimalWeights::for_system(other),
    }
}

/// Scales every body's mass and inertia by independent uniform factors (mass first, then
/// inertia, body by body) and sets the joint friction.
pub fn perturb_mechanism(mech: &Mechanism, cfg: &TrackingConfig, rng: &mut impl Rng) -> Result<Mechanism> {
    cfg.validate()?;
    let [lo, hi] = cfg.mass_factor_range;
    let dist = Uniform::new_inclusive(lo, hi).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let params: Vec<_> = mech
        .bodies()
        .iter()
        .map(|b| {
            let fm = dist.sample(rng);
            let fj = dist.sample(rng);
            (b.mass * fm, b.inertia * fj)
        })
        .collect();
    mech.with_body_parameters(&params)?.with_joint_friction(cfg.friction_k)
}

/// Per-run random draws, shared by both controllers.
#[derive(Debug, Clone)]
pub struct RunDraws {
    pub mech: Mechanism,
    pub jitter: DVector<f64>,
    pub noise: Vec<DVector<f64>>,
}

pub fn draw_run(cfg: &TrackingConfig, mech: &Mechanism, dim: usize, steps: usize, run: usize) -> Result<RunDraws> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(run as u64);
    let perturbed = perturb_mechanism(mech, cfg, &mut rng)?;
    let [a, b] = cfg.init_jitter_range;
    let jit = Uniform::new_inclusive(a, b).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let jitter = DVector::from_fn(dim, |_, _| jit.sample(&mut rng));
    let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let m = mech.input_dim();
    let noise = (0..steps).map(|_| DVector::from_fn(m, |_, _| normal.sample(&mut rng))).collect();
    Ok(RunDraws { mech: perturbed, jitter, noise })
}

/// Open-loop sinusoidal input from the hanging configuration (first angle turned half a revolution
/// from the reference).
pub fn swing_nominal(model: &MinimalModel, amplitude: f64, frequency: f64, duration: f64, dt: f64) -> Result<TrajectoryRecord> {
    let mech = model.mechanism()?;
    let mut c0 = model.reference.clone();
    if let Some(i) = (0..model.dim() / 2).find(|i| model.is_angle(*i)) {
        c0[i] = crate::math::wrap_angle(c0[i] + std::f64::consts::PI);
    }
    let z0 = model.maximal_state(&c0)?;
    let steps = (duration / dt).round() as usize;
    let m = mech.input_dim();
    let controls: Vec<_> = (0..steps)
        .map(|k| {
            let t = k as f64 * dt;
            DVector::from_element(m, amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin())
        })
        .collect();
    make_open_loop_nominal(&mech, &controls, &z0, dt)
}

/// Builds the time-varying controller that tracks `nominal`.
pub fn tracking_controller(
    model: &MinimalModel,
    nominal: &TrajectoryRecord,
    weights: &MinimalWeights,
    kind: ControllerKind,
    dt: f64,
) -> Result<Box<dyn Controller>> {
    let mech = model.mechanism()?;
    let systems = linearize_trajectory(&mech, nominal, dt)?;
    let n = nominal.len();
    let q = weights.q_matrix();
    let r = weights.r_matrix();
    Ok(match kind {
        ControllerKind::Maximal => {
            let q_at = |z: &MechanismState| -> Result<DMatrix<f64>> {
                let (_, f) = model.coordinate_map(z, z)?;
                matched_cost_matrix(&q, &f)
            };
            let qs = (0..=n).map(|k| q_at(&nominal.states[k])).collect::<Result<Vec<_>>>()?;
            let ws = (0..n)
                .map(|k| CostWeights::new(qs[k].clone(), r.clone(), qs[k + 1].clone()))
                .collect::<Result<Vec<_>>>()?;
            let gains = tvlqr_scheduled(&systems, &ws)?;
            Box::new(MaximalLqr {
                gains: gains.into_iter().map(|g| g.k).collect(),
                states: nominal.states[..n].to_vec(),
                inputs: nominal.controls.clone(),
            })
        }
        ControllerKind::Minimal => {
            let coords = nominal.states.iter().map(|z| model.coordinates(z)).collect::<Result<Vec<_>>>()?;
            let lin = (0..n)
                .into_par_iter()
                .map(|k| {
                    let (a, b) = model.linearize(&coords[k], &nominal.controls[k], dt)?;
                    LinearizedSystem::unconstrained(a, b)
                })
                .collect::<Result<Vec<_>>>()?;
            let gains = tvlqr(&lin, &CostWeights::stationary(q, r)?)?;
            Box::new(MinimalLqr {
                model: model.clone(),
                gains: gains.into_iter().map(|g| g.k).collect(),
                coordinates: coords[..n].to_vec(),
                inputs: nominal.controls.clone(),
            })
        }
    })
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub record: TrajectoryRecord,
    pub outcome: Outcome,
    /// Accumulated cost after capping diverged runs.
    pub cost: f64,
}

impl RunResult {
    pub fn diverged(&self) -> bool {
        self.outcome.is_diverged()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,stage_cost,accumulated_cost\n");
        let mut acc = 0.0;
        for (k, c) in self.record.stage_costs.iter().enumerate() {
            acc += c;
            let _ = writeln!(s, "{k},{c:.17e},{acc:.17e}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingAggregate {
    pub config: TrackingConfig,
    pub controller: ControllerKind,
    pub steps: usize,
    pub runs: usize,
    pub divergence_count: usize,
    /// Cost assigned to diverged runs: 10× the worst non-diverged run.
    pub divergence_cap: Option<f64>,
    pub mean_accumulated_cost: f64,
    pub std_accumulated_cost: f64,
    /// Per-step statistics over the non-diverged runs.
    pub mean_stage_cost: Vec<f64>,
    pub std_stage_cost: Vec<f64>,
    pub mean_accumulated_series: Vec<f64>,
    pub std_accumulated_series: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrackingResult {
    pub runs: Vec<RunResult>,
    pub aggregate: TrackingAggregate,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Runs `cfg.runs` perturbed rollouts tracking `nominal`. Draws depend only on
/// `(seed, run)`, so both controller kinds face identical perturbations.
pub fn tracking_experiment(cfg: &TrackingConfig, nominal: &TrajectoryRecord, kind: ControllerKind) -> Result<TrackingResult> {
    cfg.validate()?;
    let model = MinimalModel::new(cfg.system)?;
    let mech = model.mechanism()?;
    let controller = tracking_controller(&model, nominal, &cfg.weights, kind, cfg.dt)?;
    let steps = nominal.len();
    let reference = ReferencePath {
        model: model.clone(),
        coordinates: nominal.states.iter().map(|z| model.coordinates(z)).collect::<Result<Vec<_>>>()?,
        inputs: nominal.controls.clone(),
    };
    let c_start = reference.coordinates[0].clone();
    let cost = cfg.weights.stage_cost();

    let raw = (0..cfg.runs)
        .into_par_iter()
        .map(|run| -> Result<(TrajectoryRecord, Outcome)> {
            let draws = draw_run(cfg, &mech, model.dim(), steps, run)?;
            let z0 = if draws.jitter.iter().all(|j| *j == 0.0) {
                nominal.states[0].clone()
            } else {
                match model.maximal_state(&(&c_start + &draws.jitter)) {
                    Ok(z) => z,
                    Err(e) => {
                        let reason = format!("initial state: {e}");
                        return Ok((TrajectoryRecord::start(nominal.states[0].clone(), 0.0), Outcome::Diverged { reason }));
                    }
                }
            };
            let spec = LoopSpec {
                mech: &draws.mech,
                controller: controller.as_ref(),
                reference: &reference,
                dt: cfg.dt,
                steps,
                stop: StopRule { convergence_radius: None, blowup_omega: cfg.blowup_omega },
                cost: Some(&cost as &StageCost),
            };
            let noise = &draws.noise;
            let sigma = cfg.noise_sigma;
            let r = simulate_closed_loop(&spec, z0, &mut |k| (sigma > 0.0).then(|| noise[k].clone()))?;
            Ok((r.record, r.outcome))
        })
        .collect::<Result<Vec<_>>>()?;

    let worst = raw
        .iter()
        .filter(|(_, o)| !o.is_diverged())
        .map(|(r, _)| r.accumulated_cost)
        .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.max(c))));
    let cap = worst.map(|w| 10.0 * w);
    let runs: Vec<RunResult> = raw
        .into_iter()
        .map(|(record, outcome)| {
            let cost = match (&outcome, cap) {
                (Outcome::Diverged { .. }, Some(c)) => c,
                _ => record.accumulated_cost,
            };
            RunResult { record, outcome, cost }
        })
        .collect();

    let (mean, std) = mean_std(&runs.iter().map(|r| r.cost).collect::<Vec<_>>());
    let kept: Vec<&RunResult> = runs.iter().filter(|r| !r.diverged()).collect();
    let series = |f: &dyn Fn(&RunResult, usize) -> f64| -> (Vec<f64>, Vec<f64>) {
        (0..=steps).map(|k| mean_std(&kept.iter().map(|r| f(r, k)).collect::<Vec<_>>())).unzip()
    };
    let (mean_stage, std_stage) = series(&|r, k| r.record.stage_costs[k]);
    let (mean_acc, std_acc) = series(&|r, k| r.record.stage_costs[..=k].iter().sum());
    let aggregate = TrackingAggregate {
        config: cfg.clone(),
        controller: kind,
        steps,
        runs: runs.len(),
        divergence_count: runs.len() - kept.len(),
        divergence_cap: cap,
        mean_accumulated_cost: mean,
        std_accumulated_cost: std,
        mean_stage_cost: mean_stage,
        std_stage_cost: std_stage,
        mean_accumulated_series: mean_acc,
        std_accumulated_series: std_acc,
    };
    Ok(TrackingResult { runs, aggregate })
}

impl TrackingResult {
    /// Writes `<stem>_run_NNNN.csv` per run and `<stem>_aggregate.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, r) in self.runs.iter().enumerate() {
            std::fs::write(dir.join(format!("{stem}_run_{i:04}.csv")), r.to_csv())?;
        }
        let json = serde_json::to_string_pretty(&self.aggregate).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}_aggregate.json")), json + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_range_without_friction_leaves_mechanism_unchanged() {
        let model = MinimalModel::new(SystemKind::Cartpole).unwrap();
        let mech = model.mechanism().unwrap();
        let mut cfg = TrackingConfig::new(SystemKind::Cartpole, 1, 3, 0.01).noiseless();
        cfg.friction_k = 0.0;
        let p = perturb_mechanism(&mech, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (a, b) in p.bodies().iter().zip(mech.bodies()) {
            assert_eq!(a.mass, b.mass);
            assert_eq!(a.inertia, b.inertia);
        }
    }

    #[test]
    fn factor_draws_average_to_one() {
        let model = MinimalModel::new(SystemKind::Pendulum).unwrap();
        let mech = model.mechanism().unwrap();
        let cfg = TrackingConfig::new(SystemKind::Pendulum, 1, 0, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m0 = mech.bodies()[0].mass;
        let n = 10000;
        let mean = (0..n).map(|_| perturb_mechanism(&mech, &cfg, &mut rng).unwrap().bodies()[0].mass / m0).sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.005, "{mean}");
    }

    #[test]
    fn draws_are_reproducible_per_run() {
        let model = MinimalModel::new(SystemKind::Cartpole).unwrap();
        let mech = model.mechanism().unwrap();
        let cfg = TrackingConfig::new(SystemKind::Cartpole, 2, 9, 0.01);
        let a = draw_run(&cfg, &mech, 4, 5, 1).unwrap();
        let b = draw_run(&cfg, &mech, 4, 5, 1).unwrap();
        let c = draw_run(&cfg, &mech, 4, 5, 0).unwrap();
        assert_eq!(a.jitter, b.jitter);
        assert_eq!(a.noise, b.noise);
        assert_ne!(a.jitter, c.jitter);
    }

    #[test]
    fn noiseless_tracking_is_exact() {
        let model = MinimalModel::new(SystemKind::Cartpole).unwrap();
        let nominal = swing_nominal(&model, 5.0, 0.5, 1.0, 0.01).unwrap();
        let cfg = TrackingConfig::new(SystemKind::Cartpole, 1, 0, 0.01).noiseless();
        for kind in [ControllerKind::Maximal, ControllerKind::Minimal] {
            let r = tracking_experiment(&cfg, &nominal, kind).unwrap();
            assert!(r.aggregate.mean_accumulated_cost < 1e-6, "{kind:?} {}", r.aggregate.mean_accumulated_cost);
        }
    }
}
