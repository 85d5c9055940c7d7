use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maxlqr::dynamics::step;
use maxlqr::experiments::MinimalWeights;
use maxlqr::linearization::LinearizedSystem;
use maxlqr::lqr::{infinite_horizon, CostWeights, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use maxlqr::minimal::{matched_cost_matrix, MinimalModel, Plant};
use maxlqr::systems::SystemKind;

const SYSTEMS: [SystemKind; 4] = [SystemKind::Acrobot, SystemKind::Cartpole, SystemKind::TripleCartpole, SystemKind::Delta2d];

#[test]
fn dimensions() {
    for (kind, n) in SYSTEMS.iter().zip([4, 4, 8, 4]) {
        assert_eq!(MinimalModel::new(*kind).unwrap().dim(), n, "{kind:?}");
    }
}

#[test]
fn pushed_cart_agrees_across_simulators() {
    let model = MinimalModel::new(SystemKind::Cartpole).unwrap();
    let mech = model.mechanism().unwrap();
    let c0 = DVector::from_vec(vec![0.0, PI, 0.0, 0.0]);
    let u = DVector::from_element(1, 1.0);
    let dt = 1e-3;
    let mut z = model.maximal_state(&c0).unwrap();
    // The maximal plant reads v0 as the average over the step before t = 0, so the oracle starts half a step on.
    let plant = match &model.plant {
        Plant::Chain(chain) => chain,
        _ => unreachable!(),
    };
    let rate = MinimalModel::chain_accelerations(plant, &c0, &u).unwrap();
    let mut c = c0.clone();
    for i in 0..2 {
        c[2 + i] += 0.5 * dt * rate[2 + i];
    }
    let mut prev = c.clone();
    for _ in 0..100 {
        z = step(&mech, &z, &u, dt).unwrap().0;
        prev = c.clone();
        c = model.step(&c, &u, dt).unwrap();
    }
    // Stored maximal velocities are step averages; compare with the minimal step average.
    let v_min = (c[0] - prev[0]) / dt;
    let v_max = z.bodies[0].v.y;
    assert!((v_max - v_min).abs() < 1e-4, "{v_max} vs {v_min}");
    // Initial cart acceleration from the hanging mass matrix (pole rotation included).
    let (mc, mp, ip, lc) = (0.5, 1.0, 0.084, 0.5);
    let m22 = ip + mp * lc * lc;
    let a0 = m22 / ((mc + mp) * m22 - (mp * lc) * (mp * lc));
    assert!((v_max / (a0 * 0.1) - 1.0).abs() < 0.05, "{v_max} vs {}", a0 * 0.1);
}

#[test]
fn upright_cartpole_is_unstable() {
    let model = MinimalModel::new(SystemKind::Cartpole).unwrap();
    let (a, _) = model.linearize(&model.reference, &model.input_ref, 0.01).unwrap();
    let eig = a.complex_eigenvalues();
    assert!(eig.iter().any(|e| e.norm() > 1.0 + 1e-6), "{eig}");
}

#[test]
fn small_step_linearization_approaches_continuous_jacobian() {
    let model = MinimalModel::new(SystemKind::Cartpole).unwrap();
    let (mc, mp, ip, lc, g) = (0.5, 1.0, 0.084, 0.5, 9.81);
    let m = DMatrix::from_row_slice(2, 2, &[mc + mp, -mp * lc, -mp * lc, ip + mp * lc * lc]);
    let minv = m.try_inverse().unwrap();
    // Upright: generalized forces (u, mp g lc θ).
    let dq = &minv * DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, mp * g * lc]);
    let du = &minv * DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    let mut ac = DMatrix::zeros(4, 4);
    ac[(0, 2)] = 1.0;
    ac[(1, 3)] = 1.0;
    ac.view_mut((2, 0), (2, 2)).copy_from(&dq);
    let mut bc = DMatrix::zeros(4, 1);
    bc.view_mut((2, 0), (2, 1)).copy_from(&du);
    let mut errs = Vec::new();
    for dt in [1e-2, 1e-3] {
        let (a, b) = model.linearize(&model.reference, &model.input_ref, dt).unwrap();
        let ea = ((a - DMatrix::identity(4, 4)) / dt - &ac).amax();
        let eb = (b / dt - &bc).amax();
        errs.push(ea.max(eb));
    }
    assert!(errs[1] < errs[0] / 5.0 && errs[1] < 0.05, "{errs:?}");
}

#[test]
fn rotated_first_link_maps_to_first_coordinate() {
    let model = MinimalModel::new(SystemKind::Acrobot).unwrap();
    let z_ref = model.reference_state().unwrap();
    let delta = 1e-4;
    let z = model.maximal_state(&DVector::from_vec(vec![PI + delta, 0.0, 0.0, 0.0])).unwrap();
    let (c, f) = model.coordinate_map(&z, &z_ref).unwrap();
    assert!((c[0] - delta).abs() < 1e-8 && c.rows(1, 3).amax() < 1e-8, "{c}");
    assert_eq!(f.shape(), (4, 12 * 2));
}

#[test]
fn matched_cost_agrees_to_first_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for kind in SYSTEMS {
        let model = MinimalModel::new(kind).unwrap();
        let z_ref = model.reference_state().unwrap();
        let (_, f) = model.coordinate_map(&z_ref, &z_ref).unwrap();
        let q = MinimalWeights::for_system(kind).q_matrix();
        let qmax = matched_cost_matrix(&q, &f).unwrap();
        let rank = |m: &DMatrix<f64>| m.clone().svd(false, false).singular_values.iter().filter(|s| **s > 1e-9).count();
        assert_eq!(rank(&qmax), rank(&f), "{kind:?}");
        assert!(rank(&f) <= model.dim());
        for _ in 0..20 {
            let n = f.ncols();
            let mut dz = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            dz *= rng.random_range(1e-5..1e-3) / dz.norm();
            let z = z_ref.retract(&dz);
            let (c, _) = model.coordinate_map(&z, &z_ref).unwrap();
            let lhs = (dz.transpose() * &qmax * &dz)[(0, 0)];
            let rhs = (c.transpose() * &q * &c)[(0, 0)];
            let scale = q.amax() * dz.norm_squared();
            // The remainder is third order in |dz|.
            assert!((lhs - rhs).abs() <= 0.1 * scale * dz.norm(), "{kind:?}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn minimal_lqr_stabilizes_its_own_model() {
    for kind in [SystemKind::Acrobot, SystemKind::Cartpole, SystemKind::TripleCartpole] {
        let model = MinimalModel::new(kind).unwrap();
        let dt = 0.01;
        let (a, b) = model.linearize(&model.reference, &model.input_ref, dt).unwrap();
        let w = MinimalWeights::for_system(kind);
        let sys = LinearizedSystem::unconstrained(a, b).unwrap();
        let k = infinite_horizon(&sys, &CostWeights::stationary(w.q_matrix(), w.r_matrix()).unwrap(), DEFAULT_TOL, DEFAULT_MAX_ITERS)
            .unwrap()
            .gains
            .k;
        let mut c = model.reference.clone();
        for i in 0..model.dim() / 2 {
            c[i] += 0.01;
        }
        let e0 = (&c - &model.reference).norm();
        for _ in 0..3000 {
            let u = &model.input_ref - &k * (&c - &model.reference);
            c = model.step(&c, &u, dt).unwrap();
        }
        let e = (&c - &model.reference).norm();
        assert!(e < 1e-3 * e0, "{kind:?}: {e} from {e0}");
    }
}
