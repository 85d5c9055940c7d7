//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the libtest harness
//! so the lines always reach stdout.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maxlqr::dynamics::{evaluate_constraints, static_balance, step, total_energy};
use maxlqr::experiments::basin::{basin_of_attraction, equilibrium_controller, run_from, BasinConfig};
use maxlqr::experiments::presets::{basin_config, default_nominal, tracking_config, Preset};
use maxlqr::experiments::tracking::{tracking_experiment, TrackingResult};
use maxlqr::experiments::{ControllerKind, MinimalWeights, StopRule};
use maxlqr::linearization::{finite_difference_jacobians, linearize, linearize_trajectory, LinearizedSystem};
use maxlqr::lqr::{
    infinite_horizon, kkt_qp_oracle, riccati_step_constrained, riccati_step_unconstrained, tvlqr, CostWeights,
    GainSet, DEFAULT_MAX_ITERS, DEFAULT_TOL,
};
use maxlqr::math::{condition_number, inf_norm, max_relative_error};
use maxlqr::mechanism::MechanismState;
use maxlqr::minimal::MinimalModel;
use maxlqr::systems::SystemKind;

const SEED: u64 = 7;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn psd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let m = uniform(rng, n, n);
    &m * m.transpose() / n as f64 + DMatrix::identity(n, n) * shift
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (CostWeights, DMatrix<f64>) {
    let w = CostWeights::new(psd(rng, n, 0.0), psd(rng, m, 0.5), psd(rng, n, 0.0)).unwrap();
    let p = psd(rng, n, 0.0);
    (w, p)
}

/// Random constrained system whose `GC` is comfortably invertible.
fn random_constrained(rng: &mut ChaCha8Rng, n: usize, m: usize, c: usize) -> LinearizedSystem {
    loop {
        let (a, b, cm, g) = (uniform(rng, n, n), uniform(rng, n, m), uniform(rng, n, c), uniform(rng, c, n));
        if condition_number(&(&g * &cm)) < 1e4 {
            return LinearizedSystem::from_matrices(a, b, cm, g).unwrap();
        }
    }
}

fn manifold_ratio(sys: &LinearizedSystem, gains: &GainSet) -> f64 {
    let denom = inf_norm(&sys.g) * inf_norm(&gains.a_bar);
    if denom == 0.0 {
        return 0.0;
    }
    inf_norm(&(&sys.g * &gains.a_bar)) / denom
}

// ---------------------------------------------------------------------------------------
// Independent planar oracles (hand-derived Lagrangian equations of motion).

const G: f64 = 9.81;

/// Acrobot with angles from hanging, elbow torque `u`.
fn acrobot_rhs(x: &[f64; 4], u: f64) -> [f64; 4] {
    let (m1, i1, l1, lc1) = (1.0, 0.084, 1.0, 0.5);
    let (m2, i2, lc2) = (1.0, 0.334, 1.0);
    let (t1, t2, d1, d2) = (x[0], x[1], x[2], x[3]);
    let c2 = t2.cos();
    let s2 = t2.sin();
    let m11 = i1 + i2 + m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2);
    let m12 = i2 + m2 * (lc2 * lc2 + l1 * lc2 * c2);
    let m22 = i2 + m2 * lc2 * lc2;
    let h1 = -m2 * l1 * lc2 * s2 * (2.0 * d1 * d2 + d2 * d2);
    let h2 = m2 * l1 * lc2 * s2 * d1 * d1;
    let p1 = (m1 * lc1 + m2 * l1) * G * t1.sin() + m2 * G * lc2 * (t1 + t2).sin();
    let p2 = m2 * G * lc2 * (t1 + t2).sin();
    let (r1, r2) = (-h1 - p1, u - h2 - p2);
    let det = m11 * m22 - m12 * m12;
    [d1, d2, (m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det]
}

/// Cart-pole with the pole angle from upright and cart force `u`.
fn cartpole_rhs(x: &[f64; 4], u: f64) -> [f64; 4] {
    let (mc, mp, ip, lc) = (0.5, 1.0, 0.084, 0.5);
    let (th, yd, thd) = (x[1], x[2], x[3]);
    let (s, c) = th.sin_cos();
    let m11 = mc + mp;
    let m12 = -mp * lc * c;
    let m22 = ip + mp * lc * lc;
    let r1 = u - mp * lc * s * thd * thd;
    let r2 = mp * G * lc * s;
    let det = m11 * m22 - m12 * m12;
    [yd, thd, (m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det]
}

fn rk4(f: &dyn Fn(&[f64; 4]) -> [f64; 4], x: &[f64; 4], h: f64) -> [f64; 4] {
    let add = |a: &[f64; 4], b: &[f64; 4], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]];
    let k1 = f(x);
    let k2 = f(&add(x, &k1, h / 2.0));
    let k3 = f(&add(x, &k2, h / 2.0));
    let k4 = f(&add(x, &k3, h));
    let mut out = *x;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Absolute planar angle of body `i`, read straight from its rotation matrix.
fn body_angle(z: &MechanismState, i: usize) -> f64 {
    let r = z.bodies[i].q.to_rotation_matrix();
    let m = r.matrix();
    m[(2, 1)].atan2(m[(1, 1)])
}

fn wrap(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

// ---------------------------------------------------------------------------------------

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let one = DMatrix::from_element(1, 1, 1.0);
    let sys = LinearizedSystem::unconstrained(one.clone(), one.clone()).unwrap();
    let w = CostWeights::stationary(one.clone(), one).unwrap();
    let r = infinite_horizon(&sys, &w, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
    let (p, k) = (r.gains.p[(0, 0)], r.gains.k[(0, 0)]);
    let (pe, ke) = ((1.0 + 5f64.sqrt()) / 2.0, (5f64.sqrt() - 1.0) / 2.0);
    let el = t.elapsed();
    let ok = (p - pe).abs() <= 1e-9 && (k - ke).abs() <= 1e-9 && el < Duration::from_secs(1);
    verdict(ok, format!("P error {:.1e}, K error {:.1e}, {:?}", (p - pe).abs(), (k - ke).abs(), el))
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=n);
        let (a, b) = (uniform(&mut rng, n, n), uniform(&mut rng, n, m));
        let (w, p) = random_weights(&mut rng, n, m);
        let sys = LinearizedSystem::from_matrices(a.clone(), b.clone(), DMatrix::zeros(n, 0), DMatrix::zeros(0, n))
            .unwrap();
        let gc = riccati_step_constrained(&sys, &w, &p).unwrap();
        let gu = riccati_step_unconstrained(&a, &b, &w, &p).unwrap();
        for (x, y) in [(&gc.k, &gu.k), (&gc.p, &gu.p), (&gc.a_bar, &gu.a_bar)] {
            worst = worst.max((x - y).amax());
        }
    }
    verdict(worst <= 1e-12, format!("max elementwise difference {worst:.1e} over 100 systems"))
}

fn criterion_3() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=6);
        let m = rng.random_range(1..=3);
        let c = rng.random_range(1..=(n - 1).min(3));
        let sys = random_constrained(&mut rng, n, m, c);
        let (w, p) = random_weights(&mut rng, n, m);
        let z = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let g = riccati_step_constrained(&sys, &w, &p).unwrap();
        let (u, l) = kkt_qp_oracle(&sys, &w, &p, &z).unwrap();
        let du = (-&g.k * &z - &u).amax() / u.amax().max(1.0);
        let dl = (-&g.l * &z - &l).amax() / l.amax().max(1.0);
        worst = worst.max(du).max(dl);
    }
    let el = t.elapsed();
    verdict(worst <= 1e-8 && el < Duration::from_secs(10), format!("max scaled error {worst:.1e}, {el:?}"))
}

fn criterion_4() -> Verdict {
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(1..=3);
        let c = rng.random_range(1..=(n - 1).min(4));
        let sys = random_constrained(&mut rng, n, m, c);
        let (w, p) = random_weights(&mut rng, n, m);
        worst = worst.max(manifold_ratio(&sys, &riccati_step_constrained(&sys, &w, &p).unwrap()));
        count += 1;
    }
    for kind in [SystemKind::Acrobot, SystemKind::Cartpole, SystemKind::Delta2d, SystemKind::TripleCartpole] {
        let model = MinimalModel::new(kind).unwrap();
        let mech = model.mechanism().unwrap();
        let z = model.reference_state().unwrap();
        let (u, l) = static_balance(&mech, &z).unwrap();
        let sys = linearize(&mech, &z, &u, &l, 0.01).unwrap();
        let n = sys.state_dim();
        let w = CostWeights::stationary(DMatrix::identity(n, n), DMatrix::identity(sys.input_dim(), sys.input_dim()))
            .unwrap();
        let r = infinite_horizon(&sys, &w, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        worst = worst.max(manifold_ratio(&sys, &r.gains));
        count += 1;
    }
    let model = MinimalModel::new(SystemKind::Cartpole).unwrap();
    let mech = model.mechanism().unwrap();
    let nominal = default_nominal(&model, 0.01).unwrap();
    let systems = linearize_trajectory(&mech, &nominal, 0.01).unwrap();
    let n = systems[0].state_dim();
    let w = CostWeights::stationary(DMatrix::identity(n, n), DMatrix::identity(1, 1)).unwrap();
    for (s, g) in systems.iter().zip(tvlqr(&systems, &w).unwrap()) {
        worst = worst.max(manifold_ratio(s, &g));
        count += 1;
    }
    verdict(worst <= 1e-9, format!("max ratio {worst:.1e} over {count} gains"))
}

fn criterion_5() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut worst = 0.0f64;
    for kind in [SystemKind::Acrobot, SystemKind::Cartpole] {
        let model = MinimalModel::new(kind).unwrap();
        for i in 0..20 {
            let mut mech = model.mechanism().unwrap();
            if i % 2 == 1 {
                mech = mech.with_joint_friction(0.1).unwrap();
            }
            let c = DVector::from_fn(4, |j, _| match (j, model.is_angle(j)) {
                (0 | 1, true) => rng.random_range(-PI..PI),
                (0 | 1, false) => rng.random_range(-1.0..1.0),
                _ => rng.random_range(-2.0..2.0),
            });
            let z = model.maximal_state(&c).unwrap();
            let u = DVector::from_fn(mech.input_dim(), |_, _| rng.random_range(-2.0..2.0));
            let (_, lambda) = step(&mech, &z, &u, 0.01).unwrap();
            let an = linearize(&mech, &z, &u, &lambda, 0.01).unwrap();
            let fd = finite_difference_jacobians(&mech, &z, &u, &lambda, 0.01, 1e-6).unwrap();
            for (x, y) in [(&an.a, &fd.a), (&an.b, &fd.b), (&an.c, &fd.c), (&an.g, &fd.g)] {
                worst = worst.max(max_relative_error(x, y));
            }
        }
    }
    let el = t.elapsed();
    verdict(worst < 1e-5 && el < Duration::from_secs(60), format!("max relative error {worst:.1e}, {el:?}"))
}

/// Maximal rollout against an oracle; returns (max angle error, same with the oracle started
/// from the raw velocities, max constraint residual).
///
/// The position update `x' = x + dt·v'` makes every stored velocity the mean velocity over the
/// step that produced it, so a continuous trajectory through `(x0, ẋ0)` corresponds to the
/// discrete start `v0 = ẋ0 − (dt/2)·ẍ0`. The oracle is started from that consistent pair.
fn compare_rollout(
    kind: SystemKind,
    x0: [f64; 4],
    u: f64,
    oracle: &dyn Fn(&[f64; 4]) -> [f64; 4],
    angles: &dyn Fn(&MechanismState) -> Vec<f64>,
    oracle_angles: &dyn Fn(&[f64; 4]) -> Vec<f64>,
) -> (f64, f64, f64) {
    let model = MinimalModel::new(kind).unwrap();
    let mech = model.mechanism().unwrap();
    let mut z = model.maximal_state(&DVector::from_column_slice(&x0)).unwrap();
    let (dt, sub) = (1e-3, 10);
    let a0 = oracle(&x0);
    let mut x = x0;
    x[2] += 0.5 * dt * a0[2];
    x[3] += 0.5 * dt * a0[3];
    let mut raw = x0;
    let uv = DVector::from_element(mech.input_dim(), u);
    let (mut err, mut raw_err, mut res) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        z = step(&mech, &z, &uv, dt).unwrap().0;
        res = res.max(evaluate_constraints(&mech, &z).amax());
        for _ in 0..sub {
            x = rk4(oracle, &x, dt / sub as f64);
            raw = rk4(oracle, &raw, dt / sub as f64);
        }
        let got = angles(&z);
        for (a, b) in got.iter().zip(oracle_angles(&x)) {
            err = err.max(wrap(a - b).abs());
        }
        for (a, b) in got.iter().zip(oracle_angles(&raw)) {
            raw_err = raw_err.max(wrap(a - b).abs());
        }
    }
    (err, raw_err, res)
}

fn criterion_6() -> Verdict {
    let chain_angles = |z: &MechanismState| {
        let p1 = body_angle(z, 0);
        vec![p1, body_angle(z, 1) - p1]
    };
    let (ea, na, ra) = compare_rollout(
        SystemKind::Acrobot,
        [0.5, 0.3, 0.0, 0.0],
        0.5,
        &|x| acrobot_rhs(x, 0.5),
        &chain_angles,
        &|x| vec![x[0], x[1]],
    );
    let (ec, nc, rc) = compare_rollout(
        SystemKind::Cartpole,
        [0.0, 0.4, 0.0, 0.0],
        1.0,
        &|x| cartpole_rhs(x, 1.0),
        &|z| vec![body_angle(z, 1) - PI, z.bodies[0].x.y],
        &|x| vec![x[1], x[0]],
    );

    let model = MinimalModel::new(SystemKind::DoublePendulum).unwrap();
    let mech = model.mechanism().unwrap();
    let mut z = model.maximal_state(&DVector::from_vec(vec![1.2, -0.5, 0.0, 0.0])).unwrap();
    let e0 = total_energy(&mech, &z);
    let (mut drift, mut rd) = (0.0f64, 0.0f64);
    for _ in 0..10000 {
        z = step(&mech, &z, &DVector::zeros(0), 1e-3).unwrap().0;
        rd = rd.max(evaluate_constraints(&mech, &z).amax());
        drift = drift.max((total_energy(&mech, &z) - e0).abs() / e0.abs());
    }
    let res = ra.max(rc).max(rd);
    let ok = ea < 1e-3 && ec < 1e-3 && drift < 0.01 && res <= 1e-10;
    verdict(
        ok,
        format!(
            "acrobot {ea:.1e} rad, cartpole {ec:.1e} (raw-velocity start: {na:.1e}, {nc:.1e}), energy drift {:.2}%, residual {res:.2e}",
            100.0 * drift
        ),
    )
}

fn criterion_7() -> Verdict {
    let t = Instant::now();
    let model = MinimalModel::new(SystemKind::Delta2d).unwrap();
    let mech = model.mechanism().unwrap();
    let z = model.reference_state().unwrap();
    let (u, _) = static_balance(&mech, &z).unwrap();
    let el = t.elapsed();
    let ok = (u[0] - 6.788).abs() <= 1e-2 && (u[1] + 6.788).abs() <= 1e-2 && el < Duration::from_secs(1);
    verdict(ok, format!("u = ({:.4}, {:.4}), {el:?}", u[0], u[1]))
}

fn criterion_8(out: &Path) -> Verdict {
    let t = Instant::now();
    std::fs::create_dir_all(out).unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    let steps = 2500;
    let mut spot = |kind: SystemKind, ck: ControllerKind, c: [f64; 4]| {
        let model = MinimalModel::new(kind).unwrap();
        let (ctrl, _) =
            equilibrium_controller(&model, ck, &MinimalWeights::for_system(kind), 0.01, 0.0).unwrap();
        let p = run_from(&model, ctrl.as_ref(), &DVector::from_row_slice(&c), 0.01, steps, &StopRule::default()).unwrap();
        ok &= p.outcome.is_converged();
        lines.push(format!("{},{},{:?},{}", kind.name(), ck.name(), c, p.outcome));
    };
    for ck in [ControllerKind::Maximal, ControllerKind::Minimal] {
        for th in [0.8, -0.8] {
            spot(SystemKind::Cartpole, ck, [0.0, th, 0.0, 0.0]);
        }
    }
    for s in [1.0, -1.0] {
        spot(SystemKind::Acrobot, ControllerKind::Maximal, [PI + 0.2 * s, -0.2 * s, 0.0, 0.0]);
    }
    std::fs::write(out.join("spot_checks.csv"), lines.join("\n") + "\n").unwrap();

    let mut feasible_upper = 0;
    let mut failures = 0;
    for ck in [ControllerKind::Maximal, ControllerKind::Minimal] {
        let r = basin_of_attraction(&basin_config(SystemKind::Delta2d, ck, Preset::Desk)).unwrap();
        r.write(out, &format!("delta_{}", ck.name())).unwrap();
        for p in r.points.iter().filter(|p| p.feasible && p.values[1] > 0.0) {
            feasible_upper += 1;
            if !p.outcome.is_converged() {
                failures += 1;
            }
        }
    }
    ok &= feasible_upper > 0 && failures == 0;
    let el = t.elapsed();
    ok &= el < Duration::from_secs(600);
    verdict(
        ok,
        format!(
            "{} spot checks, delta: {} of {feasible_upper} feasible upper starts failed, {el:?}",
            lines.len(),
            failures
        ),
    )
}

fn criterion_9(out: &Path) -> Verdict {
    let t = Instant::now();
    let mut counts = Vec::new();
    for ck in [ControllerKind::Maximal, ControllerKind::Minimal] {
        let cfg: BasinConfig = basin_config(SystemKind::Acrobot, ck, Preset::Desk);
        let r = basin_of_attraction(&cfg).unwrap();
        r.write(out, &format!("acrobot_{}", ck.name())).unwrap();
        counts.push(r.summary.converged);
    }
    let el = t.elapsed();
    let ok = counts[0] >= counts[1] && el < Duration::from_secs(1800);
    verdict(ok, format!("17x17 cells converged: maximal {}, minimal {} (dt 10 ms), {el:?}", counts[0], counts[1]))
}

fn track(out: &Path, noiseless: bool) -> Vec<TrackingResult> {
    let model = MinimalModel::new(SystemKind::Cartpole).unwrap();
    let mut cfg = tracking_config(SystemKind::Cartpole, Preset::Desk, SEED);
    if noiseless {
        cfg = cfg.noiseless();
        cfg.runs = 1;
    }
    let nominal = default_nominal(&model, cfg.dt).unwrap();
    [ControllerKind::Maximal, ControllerKind::Minimal]
        .into_iter()
        .map(|ck| {
            let r = tracking_experiment(&cfg, &nominal, ck).unwrap();
            let stem = format!("{}{}", if noiseless { "noiseless_" } else { "" }, ck.name());
            r.write(out, &stem).unwrap();
            r
        })
        .collect()
}

fn criterion_10(out: &Path) -> Verdict {
    let t = Instant::now();
    let clean = track(out, true);
    let (ca, cb) = (clean[0].aggregate.mean_accumulated_cost, clean[1].aggregate.mean_accumulated_cost);
    let noisy = track(out, false);
    let (a, b) = (&noisy[0].aggregate, &noisy[1].aggregate);
    let mean_ok = a.mean_accumulated_cost <= b.mean_accumulated_cost;
    let std_ok = a.std_accumulated_cost <= b.std_accumulated_cost;
    let el = t.elapsed();
    let ok = ca < 1e-6 && cb < 1e-6 && mean_ok && std_ok && el < Duration::from_secs(900);
    verdict(
        ok,
        format!(
            "noiseless cost {ca:.1e}/{cb:.1e}; 50 runs: maximal mean {:.2} std {:.2} ({} diverged), minimal mean {:.2} std {:.2} ({} diverged), {el:?}",
            a.mean_accumulated_cost,
            a.std_accumulated_cost,
            a.divergence_count,
            b.mean_accumulated_cost,
            b.std_accumulated_cost,
            b.divergence_count
        ),
    )
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn criterion_11(first: &Path, second: &Path) -> Verdict {
    criterion_8(&second.join("8"));
    criterion_9(&second.join("9"));
    criterion_10(&second.join("10"));
    let mut compared = 0;
    let mut differing = Vec::new();
    for sub in ["8", "9", "10"] {
        let (a, b) = (files(&first.join(sub)), files(&second.join(sub)));
        if a.len() != b.len() {
            differing.push(format!("{sub}: file count"));
            continue;
        }
        for (x, y) in a.iter().zip(&b) {
            compared += 1;
            if std::fs::read(x).unwrap() != std::fs::read(y).unwrap() {
                differing.push(x.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
    }
    verdict(differing.is_empty() && compared > 0, format!("{compared} files compared, differing: {differing:?}"))
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    let runs: Vec<(usize, Box<dyn Fn() -> Verdict>)> = vec![
        (1, Box::new(criterion_1)),
        (2, Box::new(criterion_2)),
        (3, Box::new(criterion_3)),
        (4, Box::new(criterion_4)),
        (5, Box::new(criterion_5)),
        (6, Box::new(criterion_6)),
        (7, Box::new(criterion_7)),
        (8, Box::new(|| criterion_8(&first.join("8")))),
        (9, Box::new(|| criterion_9(&first.join("9")))),
        (10, Box::new(|| criterion_10(&first.join("10")))),
        (11, Box::new(|| criterion_11(&first, &second))),
    ];
    let mut failed = 0;
    for (n, f) in runs {
        let v = f();
        println!("criterion {n:>2}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
