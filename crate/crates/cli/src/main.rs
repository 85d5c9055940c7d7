use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use maxlqr::dynamics::{evaluate_constraints, static_balance, step, total_energy};
use maxlqr::experiments::basin::{basin_of_attraction, equilibrium_controller, BasinConfig};
use maxlqr::experiments::presets::{basin_config, default_nominal, tracking_config, Preset};
use maxlqr::experiments::tracking::tracking_experiment;
use maxlqr::experiments::{maximal_equilibrium_lqr, minimal_equilibrium_lqr, ControllerKind, MinimalWeights};
use maxlqr::linearization::{linearize, LinearizedSystem};
use maxlqr::lqr::{infinite_horizon, CostWeights, GainSet, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use maxlqr::minimal::MinimalModel;
use maxlqr::systems::SystemKind;
use maxlqr::trajectory::{write_matrix, TrajectoryRecord};

/// Constrained LQR in maximal coordinates: simulation, linearization, gains and experiments.
#[derive(Parser)]
#[command(name = "maxlqr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll a system open loop (or closed loop with --coords) and write the trajectory.
    Simulate(Common),
    /// Linearize at the reference equilibrium and write A, B, C, G.
    Linearize(Common),
    /// Synthesize infinite-horizon gains at the reference equilibrium.
    Gains(Common),
    /// Basin-of-attraction grid sweep.
    Basin(Common),
    /// Perturbed trajectory-tracking study.
    Track(Common),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Coords {
    Minimal,
    Maximal,
    Both,
}

impl Coords {
    fn kinds(self) -> Vec<ControllerKind> {
        match self {
            Coords::Minimal => vec![ControllerKind::Minimal],
            Coords::Maximal => vec![ControllerKind::Maximal],
            Coords::Both => vec![ControllerKind::Maximal, ControllerKind::Minimal],
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PresetArg {
    Desk,
    Full,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Full => Preset::Full,
        }
    }
}

/// Options shared by every subcommand. Flags override values from `--config`.
#[derive(Args, Clone, Debug, Default)]
struct Common {
    #[arg(long)]
    system: Option<String>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long, value_enum)]
    coords: Option<Coords>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// JSON file with any of the option names below as keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Report the maximal relative energy drift of the rollout.
    #[arg(long)]
    check_energy: bool,
    #[arg(long)]
    runs: Option<usize>,
    /// Nominal trajectory file for `track`.
    #[arg(long)]
    nominal: Option<PathBuf>,
    /// Cells per grid axis for `basin`.
    #[arg(long)]
    grid: Option<usize>,
}

/// Resolved settings; written next to the outputs of every run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    system: Option<String>,
    preset: Option<PresetArg>,
    coords: Option<Coords>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    horizon: Option<f64>,
    dt: Option<f64>,
    check_energy: Option<bool>,
    runs: Option<usize>,
    nominal: Option<PathBuf>,
    grid: Option<usize>,
}

impl RunConfig {
    fn resolve(c: &Common) -> Result<Self> {
        let mut cfg = match &c.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        macro_rules! over {
            ($($f:ident),*) => { $( if c.$f.is_some() { cfg.$f = c.$f.clone(); } )* };
        }
        over!(system, preset, coords, seed, out, jobs, horizon, dt, runs, nominal, grid);
        if c.check_energy {
            cfg.check_energy = Some(true);
        }
        Ok(cfg)
    }

    fn preset(&self) -> Preset {
        self.preset.unwrap_or(PresetArg::Desk).into()
    }

    fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn system(&self, default: Option<SystemKind>) -> Result<SystemKind> {
        match (&self.system, default) {
            (Some(s), _) => Ok(SystemKind::from_name(s)?),
            (None, Some(d)) => Ok(d),
            (None, None) => {
                let names: Vec<_> = SystemKind::ALL.iter().map(|s| s.name()).collect();
                bail!("--system is required; valid systems: {}", names.join(", "))
            }
        }
    }

    fn write_echo(&self, dir: &Path, command: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let echo = serde_json::json!({ "command": command, "config": self });
        fs::write(dir.join(format!("{command}_config.json")), serde_json::to_string_pretty(&echo)? + "\n")?;
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Linearize(c) => ("linearize", c),
        Command::Gains(c) => ("gains", c),
        Command::Basin(c) => ("basin", c),
        Command::Track(c) => ("track", c),
    };
    let cfg = RunConfig::resolve(common)?;
    if let Some(j) = cfg.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global()?;
    }
    match cli.command {
        Command::Simulate(_) => simulate(&cfg),
        Command::Linearize(_) => linearize_cmd(&cfg),
        Command::Gains(_) => gains(&cfg),
        Command::Basin(_) => basin(&cfg),
        Command::Track(_) => track(&cfg),
    }
    .with_context(|| format!("{name} failed"))
}

fn simulate(cfg: &RunConfig) -> Result<()> {
    let kind = cfg.system(None)?;
    let model = MinimalModel::new(kind)?;
    let mech = model.mechanism()?;
    let dt = cfg.dt.unwrap_or(0.001);
    let horizon = cfg.horizon.unwrap_or(1.0);
    let steps = (horizon / dt).round() as usize;
    let mut c0 = model.reference.clone();
    c0[0] += if model.is_angle(0) { 0.5 } else { 0.05 };
    let z0 = model.maximal_state(&c0)?;
    let out = cfg.out();
    cfg.write_echo(&out, "simulate")?;

    let controller = match cfg.coords {
        None => None,
        Some(Coords::Both) => bail!("simulate takes --coords minimal or maximal"),
        Some(c) => Some(equilibrium_controller(
            &model,
            c.kinds()[0],
            &MinimalWeights::for_system(kind),
            dt,
            0.0,
        )?),
    };
    let mut record = TrajectoryRecord::start(z0, 0.0);
    let mut max_residual = 0.0f64;
    for k in 0..steps {
        let z = &record.states[k];
        let u = match &controller {
            Some((c, _)) => c.control(k, z)?,
            None => model.input_ref.clone(),
        };
        let (next, lambda) = step(&mech, z, &u, dt).with_context(|| format!("step {k}"))?;
        max_residual = max_residual.max(evaluate_constraints(&mech, &next).amax());
        record.push(u, lambda, next, dt);
    }
    record.save(&out.join("trajectory.json"))?;
    println!("states: {}", record.states.len());
    println!("max constraint residual: {max_residual:.3e}");
    if cfg.check_energy.unwrap_or(false) {
        let e0 = total_energy(&mech, &record.states[0]);
        let drift = record
            .states
            .iter()
            .map(|z| (total_energy(&mech, z) - e0).abs())
            .fold(0.0, f64::max)
            / e0.abs().max(f64::MIN_POSITIVE);
        println!("max relative energy drift: {drift:.3e}");
    }
    Ok(())
}

fn linearize_cmd(cfg: &RunConfig) -> Result<()> {
    let kind = cfg.system(None)?;
    let model = MinimalModel::new(kind)?;
    let dt = cfg.dt.unwrap_or(cfg.preset().dt());
    let out = cfg.out();
    cfg.write_echo(&out, "linearize")?;
    let mech = model.mechanism()?;
    let z = model.reference_state()?;
    let (u, lambda) = static_balance(&mech, &z)?;
    let coords = cfg.coords.unwrap_or(Coords::Maximal);
    if coords != Coords::Minimal {
        let sys = linearize(&mech, &z, &u, &lambda, dt)?;
        sys.export(&out.join("maximal"))?;
        println!("maximal: n = {}, m = {}, c = {}", sys.state_dim(), sys.input_dim(), sys.constraint_dim());
    }
    if coords != Coords::Maximal {
        let (a, b) = model.linearize(&model.reference, &model.input_ref, dt)?;
        let dir = out.join("minimal");
        fs::create_dir_all(&dir)?;
        write_matrix(&dir.join("A.txt"), &a)?;
        write_matrix(&dir.join("B.txt"), &b)?;
        println!("minimal: n = {}, m = {}", a.nrows(), b.ncols());
    }
    Ok(())
}

fn write_gains(dir: &Path, g: &GainSet, iterations: usize, note: Option<&str>) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join("K.txt"), &g.k)?;
    write_matrix(&dir.join("L.txt"), &g.l)?;
    write_matrix(&dir.join("P.txt"), &g.p)?;
    let info = serde_json::json!({ "iterations": iterations, "note": note });
    fs::write(dir.join("gains.json"), serde_json::to_string_pretty(&info)? + "\n")?;
    Ok(())
}

fn gains(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out();
    cfg.write_echo(&out, "gains")?;
    if cfg.system.as_deref().map(|s| s.replace('_', "-")) == Some("scalar-test".into()) {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sys = LinearizedSystem::unconstrained(one.clone(), one.clone())?;
        let w = CostWeights::stationary(one.clone(), one)?;
        let r = infinite_horizon(&sys, &w, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
        write_gains(&out.join("scalar-test"), &r.gains, r.iterations, None)?;
        println!("K = {:.6}", r.gains.k[(0, 0)]);
        println!("P = {:.6}", r.gains.p[(0, 0)]);
        println!("iterations: {}", r.iterations);
        return Ok(());
    }
    let kind = cfg.system(None)?;
    let model = MinimalModel::new(kind)?;
    let dt = cfg.dt.unwrap_or(cfg.preset().dt());
    let w = MinimalWeights::for_system(kind);
    for ck in cfg.coords.unwrap_or(Coords::Maximal).kinds() {
        let (g, it) = match ck {
            ControllerKind::Maximal => {
                let (_, g, it) = maximal_equilibrium_lqr(&model, &w, dt, 0.0)?;
                (g, it)
            }
            ControllerKind::Minimal => {
                let (_, g, it) = minimal_equilibrium_lqr(&model, &w, dt)?;
                (g, it)
            }
        };
        let note = (ck == ControllerKind::Minimal && kind == SystemKind::Delta2d)
            .then_some("minimal model obtained by projecting the maximal linearization onto the constraint manifold");
        write_gains(&out.join(ck.name()), &g, it, note)?;
        println!("{}: K is {}x{}, {} iterations", ck.name(), g.k.nrows(), g.k.ncols(), it);
        if let Some(n) = note {
            println!("note: {n}");
        }
    }
    Ok(())
}

fn basin(cfg: &RunConfig) -> Result<()> {
    let kind = cfg.system(None)?;
    let preset = cfg.preset();
    let out = cfg.out();
    cfg.write_echo(&out, "basin")?;
    let start = Instant::now();
    let mut counts = Vec::new();
    let mut timing = serde_json::Map::new();
    for ck in cfg.coords.unwrap_or(Coords::Both).kinds() {
        let mut bc: BasinConfig = basin_config(kind, ck, preset);
        if let Some(dt) = cfg.dt {
            bc.dt = dt;
        }
        if let Some(h) = cfg.horizon {
            bc.horizon = h;
        }
        if let Some(n) = cfg.grid {
            bc.axes.iter_mut().for_each(|a| a.count = n);
        }
        let t = Instant::now();
        let r = basin_of_attraction(&bc)?;
        timing.insert(ck.name().into(), t.elapsed().as_secs_f64().into());
        r.write(&out, &format!("basin_{}", ck.name()))?;
        let s = &r.summary;
        println!(
            "{}: {} of {} cells converged ({} diverged, {} timeout, {} infeasible)",
            ck.name(),
            s.converged,
            s.total,
            s.diverged - s.infeasible,
            s.timeout,
            s.infeasible
        );
        counts.push((ck.name(), s.converged));
    }
    let summary = serde_json::json!({
        "system": kind.name(),
        "converged_cells": counts.iter().map(|(k, c)| (k.to_string(), serde_json::Value::from(*c))).collect::<serde_json::Map<_, _>>(),
        "maximal_at_least_minimal": match counts.as_slice() {
            [(_, a), (_, b)] => Some(a >= b),
            _ => None,
        },
    });
    fs::write(out.join("basin_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    timing.insert("total".into(), start.elapsed().as_secs_f64().into());
    fs::write(out.join("basin_timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
    Ok(())
}

fn track(cfg: &RunConfig) -> Result<()> {
    let kind = cfg.system(Some(SystemKind::Cartpole))?;
    let preset = cfg.preset();
    let model = MinimalModel::new(kind)?;
    let mut tc = tracking_config(kind, preset, cfg.seed());
    if let Some(r) = cfg.runs {
        tc.runs = r;
    }
    if let Some(dt) = cfg.dt {
        tc.dt = dt;
    }
    let nominal = match &cfg.nominal {
        Some(p) => TrajectoryRecord::load(p).with_context(|| format!("loading nominal {}", p.display()))?,
        None => default_nominal(&model, tc.dt)?,
    };
    let out = cfg.out();
    cfg.write_echo(&out, "track")?;
    nominal.save(&out.join("nominal.json"))?;
    let mut summary = serde_json::Map::new();
    for ck in cfg.coords.unwrap_or(Coords::Both).kinds() {
        let r = tracking_experiment(&tc, &nominal, ck)?;
        r.write(&out.join("runs"), ck.name())?;
        let a = &r.aggregate;
        fs::write(out.join(format!("track_{}.json", ck.name())), serde_json::to_string_pretty(a)? + "\n")?;
        println!(
            "{}: mean accumulated cost {:.6}, std {:.6}, {} of {} runs diverged",
            ck.name(),
            a.mean_accumulated_cost,
            a.std_accumulated_cost,
            a.divergence_count,
            a.runs
        );
        summary.insert(
            ck.name().into(),
            serde_json::json!({
                "mean_accumulated_cost": a.mean_accumulated_cost,
                "std_accumulated_cost": a.std_accumulated_cost,
                "divergence_count": a.divergence_count,
            }),
        );
    }
    summary.insert("seed".into(), tc.seed.into());
    summary.insert("runs".into(), tc.runs.into());
    fs::write(out.join("track_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}
