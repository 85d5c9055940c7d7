//! Minimal-coordinate models, the maximal-to-minimal coordinate map, and cost matching.
//!
//! Serial chains use their analytic equations of motion. The delta robot has no closed
//! form; its reduced model steps the maximal plant and reads back the base coordinates,
//! and its reduced linearization projects the maximal one onto the constraint manifold.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, RowVector3, Vector2, Vector3};

use crate::dynamics::{self, static_balance};
use crate::error::{Error, Result};
use crate::linearization::linearize;
use crate::math::{lu_is_singular, wrap_angle};
use crate::mechanism::{Mechanism, MechanismState, TANGENT_DIM};
use crate::systems::{delta_body, Delta2d, PlanarChain, SystemKind};

#[derive(Debug, Clone)]
pub enum Plant {
    Chain(PlanarChain),
    Delta { robot: Delta2d, mech: Mechanism },
}

#[derive(Debug, Clone)]
pub struct MinimalModel {
    pub kind: SystemKind,
    pub plant: Plant,
    /// Reference minimal state `c*` (absolute coordinates).
    pub reference: DVector<f64>,
    /// Reference control `u*`.
    pub input_ref: DVector<f64>,
}

impl MinimalModel {
    pub fn new(kind: SystemKind) -> Result<Self> {
        match kind.chain() {
            Some(chain) => {
                let n = chain.dof();
                let mut reference = DVector::zeros(2 * n);
                if matches!(kind, SystemKind::Pendulum | SystemKind::Acrobot | SystemKind::DoublePendulum) {
                    reference[0] = PI;
                }
                let m = chain.actuated.iter().filter(|a| **a).count();
                Ok(MinimalModel { kind, plant: Plant::Chain(chain), reference, input_ref: DVector::zeros(m) })
            }
            None => {
                let robot = Delta2d::default();
                let mech = robot.mechanism()?;
                let (y, z) = robot.reference_position();
                let zs = robot.configuration(y, z)?;
                let (u, _) = static_balance(&mech, &zs)?;
                let reference = DVector::from_vec(vec![y, z, 0.0, 0.0]);
                Ok(MinimalModel { kind, plant: Plant::Delta { robot, mech }, reference, input_ref: u })
            }
        }
    }

    /// Minimal state dimension (coordinates and rates).
    pub fn dim(&self) -> usize {
        match &self.plant {
            Plant::Chain(c) => 2 * c.dof(),
            Plant::Delta { .. } => 4,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_ref.len()
    }

    /// Whether minimal coordinate `i` is an angle (wrapped in errors).
    pub fn is_angle(&self, i: usize) -> bool {
        match &self.plant {
            Plant::Chain(c) => {
                let off = usize::from(c.cart.is_some());
                i >= off && i < c.dof()
            }
            Plant::Delta { .. } => false,
        }
    }

    /// Maximal mechanism the model describes.
    pub fn mechanism(&self) -> Result<Mechanism> {
        match &self.plant {
            Plant::Chain(c) => c.mechanism(),
            Plant::Delta { mech, .. } => Ok(mech.clone()),
        }
    }

    /// Maximal state for minimal coordinates.
    pub fn maximal_state(&self, c: &DVector<f64>) -> Result<MechanismState> {
        self.check(c)?;
        match &self.plant {
            Plant::Chain(chain) => chain.state(c.as_slice()),
            Plant::Delta { robot, mech } => robot.state(mech, c.as_slice()),
        }
    }

    /// Maximal reference state `z*`.
    pub fn reference_state(&self) -> Result<MechanismState> {
        self.maximal_state(&self.reference)
    }

    fn check(&self, c: &DVector<f64>) -> Result<()> {
        if c.len() != self.dim() {
            return Err(Error::Dimension(format!("expected {} minimal coordinates, got {}", self.dim(), c.len())));
        }
        Ok(())
    }

    /// Continuous-time state derivative `(ċ, c̈)` of a serial chain, with `M(c) c̈ = Bu − velocity terms + gravity`.
    pub fn chain_accelerations(chain: &PlanarChain, c: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (mass, rhs) = chain_mass_and_forces(chain, c, u)?;
        let n = chain.dof();
        mass.cholesky()
            .map(|ch| ch.solve(&rhs))
            .ok_or_else(|| Error::InvalidArgument("chain mass matrix is not positive definite".into()))
            .map(|acc| {
                let mut out = DVector::zeros(2 * n);
                out.rows_mut(0, n).copy_from(&c.rows(n, n));
                out.rows_mut(n, n).copy_from(&acc);
                out
            })
    }

    /// One step of the minimal model.
    pub fn step(&self, c: &DVector<f64>, u: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        self.check(c)?;
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        if u.len() != self.input_dim() {
            return Err(Error::Dimension("control dimension mismatch".into()));
        }
        match &self.plant {
            Plant::Chain(chain) => {
                let f = |x: &DVector<f64>| Self::chain_accelerations(chain, x, u);
                let k1 = f(c)?;
                let k2 = f(&(c + &k1 * (dt / 2.0)))?;
                let k3 = f(&(c + &k2 * (dt / 2.0)))?;
                let k4 = f(&(c + &k3 * dt))?;
                Ok(c + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
            }
            Plant::Delta { robot, mech } => {
                let z = robot.state(mech, c.as_slice())?;
                let (next, _) = dynamics::step(mech, &z, u, dt)?;
                Ok(self.coordinates(&next)?)
            }
        }
    }

    /// Total energy of a chain in minimal coordinates.
    pub fn chain_energy(chain: &PlanarChain, c: &DVector<f64>) -> Result<f64> {
        let n = chain.dof();
        let (mass, _) = chain_mass_and_forces(chain, c, &DVector::zeros(chain.actuated.iter().filter(|a| **a).count()))?;
        let rates = c.rows(n, n);
        let kinetic = 0.5 * (rates.transpose() * &mass * rates)[(0, 0)];
        let (phi, _) = chain.absolute_angles(c.as_slice());
        let mut height = 0.0;
        let mut potential = 0.0;
        for (link, p) in chain.links.iter().zip(&phi) {
            potential += link.mass * chain.gravity * (height - 0.5 * link.length * p.cos());
            height -= link.length * p.cos();
        }
        Ok(kinetic + potential)
    }

    /// Central-difference linearization of `step`. The delta robot uses the projected
    /// maximal linearization instead (see [`MinimalModel::projected_linearization`]).
    pub fn linearize(&self, c: &DVector<f64>, u: &DVector<f64>, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match &self.plant {
            Plant::Chain(_) => self.finite_difference_linearization(c, u, dt, 1e-6),
            Plant::Delta { .. } => self.projected_linearization(c, u, dt),
        }
    }

    pub fn finite_difference_linearization(
        &self,
        c: &DVector<f64>,
        u: &DVector<f64>,
        dt: f64,
        h: f64,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.dim();
        let m = u.len();
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            let hj = h * (1.0 + c[j].abs());
            let (mut cp, mut cm) = (c.clone(), c.clone());
            cp[j] += hj;
            cm[j] -= hj;
            a.set_column(j, &((self.step(&cp, u, dt)? - self.step(&cm, u, dt)?) / (2.0 * hj)));
        }
        let mut b = DMatrix::zeros(n, m);
        for j in 0..m {
            let hj = h * (1.0 + u[j].abs());
            let (mut up, mut um) = (u.clone(), u.clone());
            up[j] += hj;
            um[j] -= hj;
            b.set_column(j, &((self.step(c, &up, dt)? - self.step(c, &um, dt)?) / (2.0 * hj)));
        }
        Ok((a, b))
    }

    /// Reduced model `A_r = F Π A T`, `B_r = F Π B` where `Π = I − C(GC)⁻¹G` removes the
    /// constraint-violating part of a maximal step and `T = N(FN)⁻¹` lifts reduced
    /// coordinates onto the tangent space of consistent states at the reference.
    pub fn projected_linearization(
        &self,
        c: &DVector<f64>,
        u: &DVector<f64>,
        dt: f64,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mech = self.mechanism()?;
        let z = self.maximal_state(c)?;
        let (_, lambda) = dynamics::step(&mech, &z, u, dt)?;
        let sys = linearize(&mech, &z, u, &lambda, dt)?;
        let n = sys.state_dim();
        let nc = sys.constraint_dim();
        let gc = &sys.g * &sys.c;
        let x = gc.lu().solve(&sys.g).ok_or(Error::SingularGc { condition: f64::INFINITY })?;
        let proj = DMatrix::identity(n, n) - &sys.c * x;
        let (_, f) = self.coordinate_map(&z, &z)?;
        let null = consistent_tangent_basis(&mech, &z, nc)?;
        let fnull = &f * &null;
        let lu = fnull.clone().lu();
        if lu_is_singular(&lu, 1e-12) {
            return Err(Error::ChartSingularity("reduced coordinates do not chart the manifold".into()));
        }
        let t = &null * lu.try_inverse().ok_or_else(|| Error::ChartSingularity("singular chart".into()))?;
        let fp = &f * proj;
        Ok((&fp * &sys.a * t, &fp * &sys.b))
    }

    /// Absolute minimal coordinates `f(z)`.
    pub fn coordinates(&self, z: &MechanismState) -> Result<DVector<f64>> {
        Ok(self.evaluate_map(z, false)?.0)
    }

    /// `c = f(z) − f(z_ref)` (angles wrapped) and the tangent Jacobian `F` at `z`.
    pub fn coordinate_map(&self, z: &MechanismState, z_ref: &MechanismState) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (fz, jac) = self.evaluate_map(z, true)?;
        let (fr, _) = self.evaluate_map(z_ref, false)?;
        let mut c = fz - fr;
        for i in 0..c.len() {
            if self.is_angle(i) {
                c[i] = wrap_angle(c[i]);
            }
        }
        Ok((c, jac))
    }

    /// Error to a minimal reference given in absolute coordinates.
    pub fn error_to(&self, z: &MechanismState, c_ref: &DVector<f64>) -> Result<DVector<f64>> {
        let mut c = self.coordinates(z)? - c_ref;
        for i in 0..c.len() {
            if self.is_angle(i) {
                c[i] = wrap_angle(c[i]);
            }
        }
        Ok(c)
    }

    fn evaluate_map(&self, z: &MechanismState, with_jacobian: bool) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mech_bodies = match &self.plant {
            Plant::Chain(ch) => ch.links.len() + usize::from(ch.cart.is_some()),
            Plant::Delta { mech, .. } => mech.body_count(),
        };
        if z.bodies.len() != mech_bodies {
            return Err(Error::Dimension("state does not belong to this model".into()));
        }
        let n = self.dim();
        let cols = TANGENT_DIM * z.bodies.len();
        let mut f = DVector::zeros(n);
        let mut jac = if with_jacobian { DMatrix::zeros(n, cols) } else { DMatrix::zeros(0, 0) };
        match &self.plant {
            Plant::Chain(chain) => {
                let dof = chain.dof();
                let off = usize::from(chain.cart.is_some());
                if off == 1 {
                    f[0] = z.bodies[0].x.y;
                    f[dof] = z.bodies[0].v.y;
                    if with_jacobian {
                        jac[(0, 1)] = 1.0;
                        jac[(dof, 4)] = 1.0;
                    }
                }
                let mut prev_phi = chain.base_angle;
                let mut prev_rate = 0.0;
                for i in 0..chain.links.len() {
                    let b = off + i;
                    let r = z.bodies[b].rotation();
                    let (phi, dphi) = planar_angle(&r)?;
                    let rate = z.bodies[b].omega.x;
                    f[off + i] = wrap_angle(phi - prev_phi);
                    f[dof + off + i] = rate - prev_rate;
                    if with_jacobian {
                        let o = TANGENT_DIM * b;
                        for k in 0..3 {
                            jac[(off + i, o + 6 + k)] += dphi[k];
                        }
                        jac[(dof + off + i, o + 9)] += 1.0;
                        if i > 0 {
                            let (_, dprev) = planar_angle(&z.bodies[b - 1].rotation())?;
                            let op = TANGENT_DIM * (b - 1);
                            for k in 0..3 {
                                jac[(off + i, op + 6 + k)] -= dprev[k];
                            }
                            jac[(dof + off + i, op + 9)] -= 1.0;
                        }
                    }
                    prev_phi = phi;
                    prev_rate = rate;
                }
                // the first angle is relative to the base angle; unwrap into (c*−π, c*+π]
                if chain.links.len() > 0 {
                    f[off] = self.reference[off] + wrap_angle(f[off] - self.reference[off]);
                }
            }
            Plant::Delta { .. } => {
                let b = &z.bodies[delta_body::BASE];
                f[0] = b.x.y;
                f[1] = b.x.z;
                f[2] = b.v.y;
                f[3] = b.v.z;
                if with_jacobian {
                    let o = TANGENT_DIM * delta_body::BASE;
                    jac[(0, o + 1)] = 1.0;
                    jac[(1, o + 2)] = 1.0;
                    jac[(2, o + 4)] = 1.0;
                    jac[(3, o + 5)] = 1.0;
                }
            }
        }
        Ok((f, jac))
    }
}

/// Angle about x of a rotation matrix and its derivative with respect to a body-frame
/// rotation perturbation.
fn planar_angle(r: &Matrix3<f64>) -> Result<(f64, RowVector3<f64>)> {
    let (s, c) = (r[(2, 1)], r[(1, 1)]);
    let n2 = s * s + c * c;
    if n2 < 1e-12 {
        return Err(Error::ChartSingularity("link axis is parallel to the joint plane normal".into()));
    }
    // d(R21) = row2 · (δ × e2) and likewise for R11
    let e2 = Vector3::y();
    let row = |i: usize| Vector3::new(r[(i, 0)], r[(i, 1)], r[(i, 2)]);
    let d = (c * e2.cross(&row(2)) - s * e2.cross(&row(1))) / n2;
    Ok((s.atan2(c), d.transpose()))
}

/// Basis of tangent vectors whose configuration and velocity parts both satisfy `G_cfg ν = 0`.
fn consistent_tangent_basis(mech: &Mechanism, z: &MechanismState, nc: usize) -> Result<DMatrix<f64>> {
    let g = crate::constraints::jacobian_config(mech, &crate::constraints::poses(z));
    let cfg = g.ncols();
    // eigenvectors of GᵀG with zero eigenvalue span the null space
    let eig = (g.transpose() * &g).symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let mut order: Vec<usize> = (0..cfg).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let free = cfg - nc;
    let tiny = 1e-10 * top;
    if (free > 0 && eig.eigenvalues[order[free - 1]] > tiny) || (free < cfg && eig.eigenvalues[order[free]] <= tiny) {
        return Err(Error::SingularGc { condition: f64::INFINITY });
    }
    let nb = mech.body_count();
    let mut basis = DMatrix::zeros(TANGENT_DIM * nb, 2 * free);
    for j in 0..free {
        let v = eig.eigenvectors.column(order[j]);
        for b in 0..nb {
            for k in 0..3 {
                // configuration copy
                basis[(TANGENT_DIM * b + k, j)] = v[6 * b + k];
                basis[(TANGENT_DIM * b + 6 + k, j)] = v[6 * b + 3 + k];
                // velocity copy
                basis[(TANGENT_DIM * b + 3 + k, free + j)] = v[6 * b + k];
                basis[(TANGENT_DIM * b + 9 + k, free + j)] = v[6 * b + 3 + k];
            }
        }
    }
    Ok(basis)
}

fn chain_mass_and_forces(chain: &PlanarChain, c: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = chain.dof();
    if c.len() != 2 * n {
        return Err(Error::Dimension(format!("expected {} minimal coordinates", 2 * n)));
    }
    let off = usize::from(chain.cart.is_some());
    let (phi, rate) = chain.absolute_angles(c.as_slice());
    let e = |p: f64| Vector2::new(p.sin(), -p.cos());
    let de = |p: f64| Vector2::new(p.cos(), p.sin());
    let gravity = Vector2::new(0.0, -chain.gravity);

    let mut mass = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    if let Some(cart) = &chain.cart {
        mass[(0, 0)] += cart.mass;
    }
    for (i, link) in chain.links.iter().enumerate() {
        let lc = link.length / 2.0;
        // ∂p_i/∂c and the angular row ∂φ_i/∂c
        let mut jp = DMatrix::zeros(2, n);
        let mut jphi = DMatrix::zeros(1, n);
        if off == 1 {
            jp[(0, 0)] = 1.0;
        }
        let mut avel = Vector2::zeros();
        for j in 0..=i {
            let arm = if j < i { chain.links[j].length } else { lc };
            let d = de(phi[j]) * arm;
            for k in 0..=j {
                jp[(0, off + k)] += d.x;
                jp[(1, off + k)] += d.y;
            }
            avel -= e(phi[j]) * (arm * rate[j] * rate[j]);
        }
        for k in 0..=i {
            jphi[(0, off + k)] = 1.0;
        }
        let m = link.mass;
        mass += jp.transpose() * &jp * m + jphi.transpose() * &jphi * link.inertia[(0, 0)];
        let force = (gravity - avel) * m;
        rhs += jp.transpose() * DVector::from_column_slice(force.as_slice());
    }
    let mut col = 0;
    for (j, act) in chain.actuated.iter().enumerate() {
        if *act {
            if col >= u.len() {
                return Err(Error::Dimension("control dimension mismatch".into()));
            }
            rhs[j] += u[col];
            col += 1;
        }
    }
    if col != u.len() {
        return Err(Error::Dimension("control dimension mismatch".into()));
    }
    Ok((mass, rhs))
}

/// `FᵀQF`, symmetrized.
pub fn matched_cost_matrix(q_min: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if q_min.nrows() != f.nrows() || !q_min.is_square() {
        return Err(Error::Dimension("Q_min and F are not conformable".into()));
    }
    let q = f.transpose() * q_min * f;
    Ok((&q + q.transpose()) * 0.5)
}
