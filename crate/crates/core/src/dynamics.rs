//! Implicit discrete-time dynamics in maximal coordinates.
//!
//! One step solves, for every body,
//!
//! ```text
//! x' = x + dt·v'                    q' = q ⊗ Exp(dt·ω')
//! m(v' − v)/dt − m·g − f_u − f_k(z') − [G(z)ᵀλ]_f = 0
//! J(ω' − ω)/dt + ω̄ × Jω̄ − τ_u − τ_k(z') − [G(z)ᵀλ]_τ = 0,   ω̄ = (ω + ω')/2
//! ```
//!
//! together with the position-level constraints `g(z') = 0`. `f_u, τ_u` come
//! from the actuators (zero-order hold over the step) and `f_k, τ_k` from
//! viscous joint friction evaluated at the new velocities.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::constraints::{self, Pose, CONFIG_DIM};
use crate::error::{Error, Result};
use crate::math::{exp_map, log_map, lu_is_singular, max_abs, right_jacobian, skew};
use crate::mechanism::{BodyState, JointKind, Mechanism, MechanismState, Multipliers, TANGENT_DIM};

/// Newton settings for the implicit step.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    /// Infinity-norm tolerance on the stacked (dynamics, constraint) residual.
    pub tol: f64,
    pub max_iters: usize,
    /// Largest constraint violation accepted in the incoming state.
    pub feasibility_tol: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { tol: 1e-10, max_iters: 100, feasibility_tol: 1e-6 }
    }
}

/// Stacked joint residuals of `state`.
pub fn evaluate_constraints(mech: &Mechanism, state: &MechanismState) -> DVector<f64> {
    constraints::evaluate(mech, &constraints::poses(state))
}

/// Constraint Jacobian over the full state tangent (12 columns per body; velocity columns are zero).
pub fn constraint_jacobian(mech: &Mechanism, state: &MechanismState) -> DMatrix<f64> {
    let g = constraints::jacobian_config(mech, &constraints::poses(state));
    constraints::embed_config_columns(&g, mech.body_count())
}

/// Wrench `[f, τ]` per body produced by unit entries of the control vector.
pub fn actuation_matrix(mech: &Mechanism, poses: &[Pose]) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(CONFIG_DIM * mech.body_count(), mech.input_dim());
    for (col, &ji) in mech.actuators().iter().enumerate() {
        let j = &mech.joints()[ji];
        let c = CONFIG_DIM * j.child;
        if j.kind == JointKind::Prismatic {
            let rp = j.parent.map_or_else(Matrix3::identity, |p| poses[p].r);
            let dir = rp * j.axis;
            for k in 0..3 {
                b[(c + k, col)] += dir[k];
                if let Some(p) = j.parent {
                    b[(CONFIG_DIM * p + k, col)] -= dir[k];
                }
            }
        } else {
            for k in 0..3 {
                b[(c + 3 + k, col)] += j.axis_child[k];
                if let Some(p) = j.parent {
                    b[(CONFIG_DIM * p + 3 + k, col)] -= j.axis[k];
                }
            }
        }
    }
    b
}

/// Derivative of the actuator wrench with respect to the configuration tangent.
/// Only prismatic actuators between two bodies depend on the pose.
pub fn actuation_config_jacobian(mech: &Mechanism, poses: &[Pose], u: &DVector<f64>) -> DMatrix<f64> {
    let n = CONFIG_DIM * mech.body_count();
    let mut d = DMatrix::zeros(n, n);
    for (col, &ji) in mech.actuators().iter().enumerate() {
        let j = &mech.joints()[ji];
        if j.kind != JointKind::Prismatic {
            continue;
        }
        let Some(p) = j.parent else { continue };
        let blk = -u[col] * poses[p].r * skew(&j.axis);
        let (rc, rp, cp) = (CONFIG_DIM * j.child, CONFIG_DIM * p, CONFIG_DIM * p + 3);
        let mut child = d.view_mut((rc, cp), (3, 3));
        child += blk;
        let mut parent = d.view_mut((rp, cp), (3, 3));
        parent -= blk;
    }
    d
}

/// Viscous joint wrench at a state and its derivative over the full state tangent
/// (`6B × 12B`).
pub fn friction_wrench(mech: &Mechanism, state: &MechanismState) -> (DVector<f64>, DMatrix<f64>) {
    let nb = mech.body_count();
    let mut w = DVector::zeros(CONFIG_DIM * nb);
    let mut d = DMatrix::zeros(CONFIG_DIM * nb, TANGENT_DIM * nb);
    for j in mech.joints() {
        let k = j.friction;
        if k == 0.0 || j.kind == JointKind::FixedOrientation {
            continue;
        }
        let c = j.child;
        if j.kind == JointKind::Prismatic {
            let rp = j.parent.map_or_else(Matrix3::identity, |p| state.bodies[p].rotation());
            let a = rp * j.axis;
            let vp = j.parent.map_or_else(Vector3::zeros, |p| state.bodies[p].v);
            let dv = state.bodies[c].v - vp;
            let s = a.dot(&dv);
            let fc = -k * s * a;
            let aat = a * a.transpose();
            add3(&mut w, CONFIG_DIM * c, &fc);
            add_blk(&mut d, CONFIG_DIM * c, TANGENT_DIM * c + 3, &(-k * aat));
            if let Some(p) = j.parent {
                add3(&mut w, CONFIG_DIM * p, &(-fc));
                add_blk(&mut d, CONFIG_DIM * c, TANGENT_DIM * p + 3, &(k * aat));
                add_blk(&mut d, CONFIG_DIM * p, TANGENT_DIM * c + 3, &(k * aat));
                add_blk(&mut d, CONFIG_DIM * p, TANGENT_DIM * p + 3, &(-k * aat));
                // axis rotates with the parent
                let e = -rp * skew(&j.axis);
                let dfc = -k * (s * e + a * dv.transpose() * e);
                add_blk(&mut d, CONFIG_DIM * c, TANGENT_DIM * p + 6, &dfc);
                add_blk(&mut d, CONFIG_DIM * p, TANGENT_DIM * p + 6, &(-dfc));
            }
        } else {
            let ac = j.axis_child;
            let ap = j.axis;
            let wp = j.parent.map_or(0.0, |p| ap.dot(&state.bodies[p].omega));
            let s = ac.dot(&state.bodies[c].omega) - wp;
            add3(&mut w, CONFIG_DIM * c + 3, &(-k * s * ac));
            add_blk(&mut d, CONFIG_DIM * c + 3, TANGENT_DIM * c + 9, &(-k * ac * ac.transpose()));
            if let Some(p) = j.parent {
                add3(&mut w, CONFIG_DIM * p + 3, &(k * s * ap));
                add_blk(&mut d, CONFIG_DIM * c + 3, TANGENT_DIM * p + 9, &(k * ac * ap.transpose()));
                add_blk(&mut d, CONFIG_DIM * p + 3, TANGENT_DIM * c + 9, &(k * ap * ac.transpose()));
                add_blk(&mut d, CONFIG_DIM * p + 3, TANGENT_DIM * p + 9, &(-k * ap * ap.transpose()));
            }
        }
    }
    (w, d)
}

fn add3(v: &mut DVector<f64>, o: usize, x: &Vector3<f64>) {
    for k in 0..3 {
        v[o + k] += x[k];
    }
}

fn add_blk(m: &mut DMatrix<f64>, r: usize, c: usize, b: &Matrix3<f64>) {
    let mut v = m.view_mut((r, c), (3, 3));
    v += b;
}

/// Stacked gravity wrench `[m·g, 0]` per body.
fn gravity_wrench(mech: &Mechanism) -> DVector<f64> {
    let mut w = DVector::zeros(CONFIG_DIM * mech.body_count());
    for (i, b) in mech.bodies().iter().enumerate() {
        add3(&mut w, CONFIG_DIM * i, &(b.mass * mech.gravity()));
    }
    w
}

/// Body states at `k+1` implied by new velocities.
fn advance(state: &MechanismState, vel: &[(Vector3<f64>, Vector3<f64>)], dt: f64) -> MechanismState {
    let bodies = state
        .bodies
        .iter()
        .zip(vel)
        .map(|(b, (v, w))| BodyState { x: b.x + dt * v, v: *v, q: b.q * exp_map(&(dt * w)), omega: *w })
        .collect();
    MechanismState { bodies, k: state.k + 1 }
}

/// Rigid-body part of the dynamics residual (6 rows per body), without constraint forces.
fn momentum_residual(
    mech: &Mechanism,
    prev: &MechanismState,
    next: &MechanismState,
    applied: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    let nb = mech.body_count();
    let mut r = DVector::zeros(CONFIG_DIM * nb);
    for (i, body) in mech.bodies().iter().enumerate() {
        let (a, b) = (&prev.bodies[i], &next.bodies[i]);
        let lin = body.mass * (b.v - a.v) / dt;
        let wm = 0.5 * (a.omega + b.omega);
        let ang = body.inertia * (b.omega - a.omega) / dt + wm.cross(&(body.inertia * wm));
        for k in 0..3 {
            r[CONFIG_DIM * i + k] = lin[k] - applied[CONFIG_DIM * i + k];
            r[CONFIG_DIM * i + 3 + k] = ang[k] - applied[CONFIG_DIM * i + 3 + k];
        }
    }
    r
}

struct StepFrame<'a> {
    mech: &'a Mechanism,
    state: &'a MechanismState,
    dt: f64,
    /// Gravity plus actuation at step start.
    external: DVector<f64>,
    /// Constraint Jacobian at step start (force directions).
    g_start: DMatrix<f64>,
}

impl<'a> StepFrame<'a> {
    fn new(mech: &'a Mechanism, state: &'a MechanismState, u: &DVector<f64>, dt: f64) -> Self {
        let poses = constraints::poses(state);
        let external = gravity_wrench(mech) + actuation_matrix(mech, &poses) * u;
        let g_start = constraints::jacobian_config(mech, &poses);
        StepFrame { mech, state, dt, external, g_start }
    }

    fn unpack(&self, y: &DVector<f64>) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        (0..self.mech.body_count())
            .map(|i| {
                let o = CONFIG_DIM * i;
                (Vector3::new(y[o], y[o + 1], y[o + 2]), Vector3::new(y[o + 3], y[o + 4], y[o + 5]))
            })
            .collect()
    }

    /// Dynamics residual rows and their Jacobian with respect to the velocities `(v', ω')`.
    fn dynamics(&self, next: &MechanismState, lambda: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mech = self.mech;
        let nb = mech.body_count();
        let (fric, dfric) = friction_wrench(mech, next);
        let applied = &self.external + fric + self.g_start.transpose() * lambda;
        let r = momentum_residual(mech, self.state, next, &applied, self.dt);

        let n = CONFIG_DIM * nb;
        let mut jac = DMatrix::zeros(n, n);
        for (i, body) in mech.bodies().iter().enumerate() {
            let o = CONFIG_DIM * i;
            let wm = 0.5 * (self.state.bodies[i].omega + next.bodies[i].omega);
            let jw = body.inertia * wm;
            let gyro = 0.5 * (skew(&wm) * body.inertia - skew(&jw));
            add_blk(&mut jac, o, o, &(Matrix3::identity() * (body.mass / self.dt)));
            add_blk(&mut jac, o + 3, o + 3, &(body.inertia / self.dt + gyro));
        }
        // friction enters with a minus sign; chain δθ' = dt·J_r(dt·ω')·δω'
        for b in 0..nb {
            let to = TANGENT_DIM * b;
            let jr = self.dt * right_jacobian(&(self.dt * next.bodies[b].omega));
            for row in 0..n {
                for k in 0..3 {
                    jac[(row, CONFIG_DIM * b + k)] -= dfric[(row, to + 3 + k)];
                    let mut dw = dfric[(row, to + 9 + k)];
                    for l in 0..3 {
                        dw += dfric[(row, to + 6 + l)] * jr[(l, k)];
                    }
                    jac[(row, CONFIG_DIM * b + 3 + k)] -= dw;
                }
            }
        }
        (r, jac)
    }
}

fn initial_velocities(state: &MechanismState) -> DVector<f64> {
    let mut y = DVector::zeros(CONFIG_DIM * state.bodies.len());
    for (i, b) in state.bodies.iter().enumerate() {
        for k in 0..3 {
            y[CONFIG_DIM * i + k] = b.v[k];
            y[CONFIG_DIM * i + 3 + k] = b.omega[k];
        }
    }
    y
}

/// Advances the mechanism one step, returning the new state and the constraint forces.
pub fn step(
    mech: &Mechanism,
    state: &MechanismState,
    u: &DVector<f64>,
    dt: f64,
) -> Result<(MechanismState, Multipliers)> {
    step_with_options(mech, state, u, dt, &StepOptions::default())
}

pub fn step_with_options(
    mech: &Mechanism,
    state: &MechanismState,
    u: &DVector<f64>,
    dt: f64,
    opts: &StepOptions,
) -> Result<(MechanismState, Multipliers)> {
    check_step_inputs(mech, state, u, dt)?;
    let violation = max_abs(evaluate_constraints(mech, state).iter().copied());
    if violation > opts.feasibility_tol {
        return Err(Error::Infeasible(format!("incoming state violates constraints by {violation:e}")));
    }
    let frame = StepFrame::new(mech, state, u, dt);
    let nb = mech.body_count();
    let nv = CONFIG_DIM * nb;
    let nc = mech.constraint_dim();

    // Unknowns are velocities and impulses μ = dt·λ; the dynamics rows are scaled by dt
    // and the constraint rows by 1/dt so both blocks have comparable pivots.
    let mut y = initial_velocities(state);
    let mut mu = DVector::zeros(nc);
    let mut residual = f64::INFINITY;
    for _ in 0..=opts.max_iters {
        let vel = frame.unpack(&y);
        let next = advance(state, &vel, dt);
        let lambda = &mu / dt;
        let (rd, jd) = frame.dynamics(&next, &lambda);
        let poses = constraints::poses(&next);
        let rg = constraints::evaluate(mech, &poses);
        residual = max_abs(rd.iter().chain(rg.iter()).copied());
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            let mut next = next;
            next.renormalize();
            return Ok((next, Multipliers(lambda)));
        }
        let g_next = constraints::jacobian_config(mech, &poses);
        let mut kkt = DMatrix::zeros(nv + nc, nv + nc);
        kkt.view_mut((0, 0), (nv, nv)).copy_from(&(jd * dt));
        kkt.view_mut((0, nv), (nv, nc)).copy_from(&(-frame.g_start.transpose()));
        // ∂g/∂v' = G_x·dt, ∂g/∂ω' = G_θ·dt·J_r(dt ω'); rows scaled by 1/dt
        for b in 0..nb {
            let jr = right_jacobian(&(dt * vel[b].1));
            let gx = g_next.view((0, CONFIG_DIM * b), (nc, 3));
            let gt = g_next.view((0, CONFIG_DIM * b + 3), (nc, 3)) * jr;
            kkt.view_mut((nv, CONFIG_DIM * b), (nc, 3)).copy_from(&gx);
            kkt.view_mut((nv, CONFIG_DIM * b + 3), (nc, 3)).copy_from(&gt);
        }
        let mut rhs = DVector::zeros(nv + nc);
        rhs.rows_mut(0, nv).copy_from(&(-rd * dt));
        rhs.rows_mut(nv, nc).copy_from(&(-rg / dt));
        let lu = kkt.lu();
        if lu_is_singular(&lu, 1e-13) {
            return Err(Error::SingularKkt);
        }
        let delta = lu.solve(&rhs).ok_or(Error::SingularKkt)?;
        y += delta.rows(0, nv);
        mu += delta.rows(nv, nc);
    }
    Err(Error::NewtonDivergence { iterations: opts.max_iters, residual })
}

fn check_step_inputs(mech: &Mechanism, state: &MechanismState, u: &DVector<f64>, dt: f64) -> Result<()> {
    mech.check_state(state)?;
    mech.check_input(u)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if !state.is_finite() || u.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite state or control".into()));
    }
    Ok(())
}

/// Solves only the dynamics rows for a prescribed multiplier vector (the constraint rows are
/// not imposed). This is the solution map the linearization differentiates.
pub fn step_with_multipliers(
    mech: &Mechanism,
    state: &MechanismState,
    u: &DVector<f64>,
    lambda: &Multipliers,
    dt: f64,
) -> Result<MechanismState> {
    check_step_inputs(mech, state, u, dt)?;
    if lambda.len() != mech.constraint_dim() {
        return Err(Error::Dimension("multiplier dimension must equal constraint dimension".into()));
    }
    let frame = StepFrame::new(mech, state, u, dt);
    let mut y = initial_velocities(state);
    let opts = StepOptions::default();
    let mut residual = f64::INFINITY;
    for _ in 0..=opts.max_iters {
        let next = advance(state, &frame.unpack(&y), dt);
        let (rd, jd) = frame.dynamics(&next, &lambda.0);
        residual = max_abs(rd.iter().copied());
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            let mut next = next;
            next.renormalize();
            return Ok(next);
        }
        let lu = jd.lu();
        if lu_is_singular(&lu, 1e-13) {
            return Err(Error::SingularKkt);
        }
        y -= lu.solve(&rd).ok_or(Error::SingularKkt)?;
    }
    Err(Error::NewtonDivergence { iterations: opts.max_iters, residual })
}

/// Full implicit residual `[d; g]` of a candidate transition.
///
/// `d` has 12 rows per body in tangent order: position kinematics, linear momentum,
/// attitude kinematics, angular momentum. `g` is evaluated at `next`.
pub fn step_residual(
    mech: &Mechanism,
    state: &MechanismState,
    next: &MechanismState,
    u: &DVector<f64>,
    lambda: &Multipliers,
    dt: f64,
) -> Result<DVector<f64>> {
    check_step_inputs(mech, state, u, dt)?;
    mech.check_state(next)?;
    if lambda.len() != mech.constraint_dim() {
        return Err(Error::Dimension("multiplier dimension must equal constraint dimension".into()));
    }
    let frame = StepFrame::new(mech, state, u, dt);
    let (rd, _) = frame.dynamics(next, &lambda.0);
    let nb = mech.body_count();
    let nc = mech.constraint_dim();
    let mut out = DVector::zeros(TANGENT_DIM * nb + nc);
    for (i, (a, b)) in state.bodies.iter().zip(&next.bodies).enumerate() {
        let o = TANGENT_DIM * i;
        let kin_x = b.x - a.x - dt * b.v;
        let kin_q = log_map(&(a.q.inverse() * b.q)) - dt * b.omega;
        for k in 0..3 {
            out[o + k] = kin_x[k];
            out[o + 3 + k] = rd[CONFIG_DIM * i + k];
            out[o + 6 + k] = kin_q[k];
            out[o + 9 + k] = rd[CONFIG_DIM * i + 3 + k];
        }
    }
    out.rows_mut(TANGENT_DIM * nb, nc).copy_from(&evaluate_constraints(mech, next));
    Ok(out)
}

/// Static control and constraint forces holding `state` at rest.
pub fn static_balance(mech: &Mechanism, state: &MechanismState) -> Result<(DVector<f64>, Multipliers)> {
    mech.check_state(state)?;
    let speed = state.bodies.iter().flat_map(|b| b.v.iter().chain(b.omega.iter())).fold(0.0f64, |m, x| m.max(x.abs()));
    if speed > 1e-12 {
        return Err(Error::InvalidArgument("gravity compensation needs a state at rest".into()));
    }
    let poses = constraints::poses(state);
    let b = actuation_matrix(mech, &poses);
    let gt = constraints::jacobian_config(mech, &poses).transpose();
    let (m, c) = (b.ncols(), gt.ncols());
    let mut a = DMatrix::zeros(b.nrows(), m + c);
    a.view_mut((0, 0), (b.nrows(), m)).copy_from(&b);
    a.view_mut((0, m), (b.nrows(), c)).copy_from(&gt);
    let rhs = -gravity_wrench(mech);
    if a.ncols() == 0 {
        let residual = max_abs(rhs.iter().copied());
        return if residual > 1e-8 {
            Err(Error::Unactuatable { residual })
        } else {
            Ok((DVector::zeros(0), Multipliers::zeros(0)))
        };
    }
    let svd = a.clone().svd(true, true);
    let sol = svd.solve(&rhs, 1e-12).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let residual = max_abs((&a * &sol - &rhs).iter().copied());
    if residual > 1e-8 {
        return Err(Error::Unactuatable { residual });
    }
    Ok((sol.rows(0, m).into_owned(), Multipliers(sol.rows(m, c).into_owned())))
}

/// Control holding a static configuration at rest.
pub fn gravity_compensation(mech: &Mechanism, state: &MechanismState) -> Result<DVector<f64>> {
    static_balance(mech, state).map(|(u, _)| u)
}

/// Kinetic plus gravitational potential energy (datum at the world origin).
pub fn total_energy(mech: &Mechanism, state: &MechanismState) -> f64 {
    mech.bodies()
        .iter()
        .zip(&state.bodies)
        .map(|(b, s)| {
            0.5 * b.mass * s.v.norm_squared() + 0.5 * s.omega.dot(&(b.inertia * s.omega))
                - b.mass * mech.gravity().dot(&s.x)
        })
        .sum()
}

/// Moves a configuration onto the constraint manifold with minimum-norm Gauss–Newton
/// corrections and projects velocities onto the constraint tangent space.
pub fn project_to_constraints(mech: &Mechanism, state: &MechanismState, tol: f64) -> Result<MechanismState> {
    mech.check_state(state)?;
    let nb = mech.body_count();
    let mut s = state.clone();
    if mech.constraint_dim() == 0 {
        return Ok(s);
    }
    let mut converged = false;
    for _ in 0..50 {
        let poses = constraints::poses(&s);
        let g = constraints::evaluate(mech, &poses);
        if max_abs(g.iter().copied()) <= tol {
            converged = true;
            break;
        }
        let jac = constraints::jacobian_config(mech, &poses);
        let dq = jac.clone().svd(true, true).solve(&(-g), 1e-12).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for (i, b) in s.bodies.iter_mut().enumerate() {
            let o = CONFIG_DIM * i;
            b.x += Vector3::new(dq[o], dq[o + 1], dq[o + 2]);
            b.q *= exp_map(&Vector3::new(dq[o + 3], dq[o + 4], dq[o + 5]));
        }
    }
    if !converged {
        let g = evaluate_constraints(mech, &s);
        return Err(Error::Infeasible(format!(
            "assembly did not converge (residual {:e})",
            max_abs(g.iter().copied())
        )));
    }
    // velocities: remove the component that violates G·ν = 0
    let jac = constraints::jacobian_config(mech, &constraints::poses(&s));
    let mut nu = DVector::zeros(CONFIG_DIM * nb);
    for (i, b) in s.bodies.iter().enumerate() {
        for k in 0..3 {
            nu[CONFIG_DIM * i + k] = b.v[k];
            nu[CONFIG_DIM * i + 3 + k] = b.omega[k];
        }
    }
    let gn = &jac * &nu;
    let corr = jac.clone().svd(true, true).solve(&gn, 1e-12).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    nu -= corr;
    for (i, b) in s.bodies.iter_mut().enumerate() {
        let o = CONFIG_DIM * i;
        b.v = Vector3::new(nu[o], nu[o + 1], nu[o + 2]);
        b.omega = Vector3::new(nu[o + 3], nu[o + 4], nu[o + 5]);
    }
    s.renormalize();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{acrobot_chain, pendulum_chain, Delta2d, SystemKind};
    use std::f64::consts::PI;

    #[test]
    fn free_body_drifts() {
        let mech = crate::systems::free_body(Vector3::zeros()).unwrap();
        let mut s = MechanismState::new(vec![BodyState::at_rest(Vector3::zeros(), nalgebra::UnitQuaternion::identity())]);
        s.bodies[0].v = Vector3::new(1.0, 0.0, 0.0);
        let (next, lambda) = step(&mech, &s, &DVector::zeros(0), 0.01).unwrap();
        assert!((next.bodies[0].x - Vector3::new(0.01, 0.0, 0.0)).norm() < 1e-15);
        assert!(lambda.is_empty());
        assert_eq!(next.k, 1);
    }

    #[test]
    fn hanging_pendulum_is_static() {
        let chain = pendulum_chain();
        let mech = chain.mechanism().unwrap();
        let s = chain.state(&[0.0, 0.0]).unwrap();
        let (next, lambda) = step(&mech, &s, &DVector::zeros(0), 0.01).unwrap();
        assert!(next.difference(&s).amax() < 1e-12);
        // point rows come first; the pin pushes up on the child
        assert!((lambda.0[2] - 9.81).abs() < 1e-9, "{}", lambda.0);
    }

    #[test]
    fn pendulum_matches_rk4_oracle() {
        let chain = pendulum_chain();
        let mech = chain.mechanism().unwrap();
        let link = &chain.links[0];
        let (m, l, j) = (link.mass, link.length, link.inertia[(0, 0)]);
        // released from horizontal: φ = π/2
        let mut s = chain.state(&[PI / 2.0, 0.0]).unwrap();
        let dt = 1e-3;
        for _ in 0..1000 {
            s = step(&mech, &s, &DVector::zeros(0), dt).unwrap().0;
        }
        let r = s.bodies[0].rotation();
        let phi = r[(2, 1)].atan2(r[(1, 1)]);
        let f = |y: [f64; 2]| [y[1], -m * 9.81 * (l / 2.0) * y[0].sin() / (j + m * l * l / 4.0)];
        let mut y = [PI / 2.0, 0.0];
        let h = 1e-4;
        for _ in 0..10000 {
            let k1 = f(y);
            let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
            let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
            let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
            for i in 0..2 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        assert!((phi - y[0]).abs() < 1e-3, "{phi} vs {}", y[0]);
    }

    #[test]
    fn step_residual_vanishes_at_solution() {
        let chain = acrobot_chain();
        let mech = chain.mechanism().unwrap();
        let s = chain.state(&[0.4, -0.3, 0.5, 1.0]).unwrap();
        let u = DVector::from_element(1, 0.7);
        let (next, lambda) = step(&mech, &s, &u, 0.01).unwrap();
        let r = step_residual(&mech, &s, &next, &u, &lambda, 0.01).unwrap();
        assert!(r.amax() < 1e-9, "{}", r.amax());
        assert!(evaluate_constraints(&mech, &next).amax() <= 1e-10);
    }

    #[test]
    fn fixed_multipliers_reproduce_the_step() {
        let mech = SystemKind::Cartpole.mechanism().unwrap();
        let s = crate::systems::cartpole_chain().state(&[0.1, 0.3, -0.2, 0.4]).unwrap();
        let u = DVector::from_element(1, 1.5);
        let (next, lambda) = step(&mech, &s, &u, 0.01).unwrap();
        let again = step_with_multipliers(&mech, &s, &u, &lambda, 0.01).unwrap();
        assert!(again.difference(&next).amax() < 1e-10);
    }

    #[test]
    fn upright_acrobot_needs_no_torque() {
        let chain = acrobot_chain();
        let mech = chain.mechanism().unwrap();
        let s = chain.state(&[PI, 0.0, 0.0, 0.0]).unwrap();
        let u = gravity_compensation(&mech, &s).unwrap();
        assert!(u.amax() < 1e-8);
    }

    #[test]
    fn delta_compensation_holds_the_pose() {
        let d = Delta2d::default();
        let mech = d.mechanism().unwrap();
        let s = d.configuration(0.0, 1.061).unwrap();
        let u = gravity_compensation(&mech, &s).unwrap();
        assert!((u[0] - 6.788).abs() < 1e-2 && (u[1] + 6.788).abs() < 1e-2, "{u}");
        let (next, _) = step(&mech, &s, &u, 0.01).unwrap();
        assert!(next.difference(&s).amax() < 1e-9);
    }

    #[test]
    fn energy_of_moving_body() {
        let mech = crate::systems::free_body(Vector3::new(0.0, 0.0, -9.81)).unwrap();
        let mut s = MechanismState::new(vec![BodyState::at_rest(Vector3::zeros(), nalgebra::UnitQuaternion::identity())]);
        assert_eq!(total_energy(&mech, &s), 0.0);
        s.bodies[0].v = Vector3::new(2.0, 0.0, 0.0);
        assert!((total_energy(&mech, &s) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn infeasible_input_state_is_rejected() {
        let chain = pendulum_chain();
        let mech = chain.mechanism().unwrap();
        let mut s = chain.state(&[0.0, 0.0]).unwrap();
        s.bodies[0].x.y += 0.01;
        assert!(matches!(step(&mech, &s, &DVector::zeros(0), 0.01), Err(Error::Infeasible(_))));
        let fixed = project_to_constraints(&mech, &s, 1e-12).unwrap();
        assert!(evaluate_constraints(&mech, &fixed).amax() < 1e-12);
    }
}
