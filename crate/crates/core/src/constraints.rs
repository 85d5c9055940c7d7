//! Joint constraint residuals, their tangent-space Jacobians, and the derivative
//! of the resulting constraint wrench `Gᵀλ` with respect to the configuration.
//!
//! Every joint is assembled from a handful of geometric primitives. Each
//! primitive sees a parent pose (identity for the world) and a child pose and
//! works in the 6-dimensional configuration tangent `[δx, δθ]` of each body,
//! with `δθ` a body-frame rotation applied on the right.

use nalgebra::{DMatrix, DVector, Matrix3, RowVector3, SMatrix, UnitQuaternion, Vector3};

use crate::math::{orthonormal_complement, skew};
use crate::mechanism::{Joint, JointKind, Mechanism, MechanismState};

/// Configuration tangent size per body.
pub const CONFIG_DIM: usize = 6;

#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub x: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
    pub r: Matrix3<f64>,
}

impl Pose {
    pub fn new(x: Vector3<f64>, q: UnitQuaternion<f64>) -> Self {
        Pose { x, q, r: q.to_rotation_matrix().into_inner() }
    }

    pub fn world() -> Self {
        Pose::new(Vector3::zeros(), UnitQuaternion::identity())
    }
}

pub fn poses(state: &MechanismState) -> Vec<Pose> {
    state.bodies.iter().map(|b| Pose::new(b.x, b.q)).collect()
}

/// Row Jacobians of one primitive with respect to the parent and child `[δx, δθ]`.
type Rows = Vec<(RowVector3<f64>, RowVector3<f64>, RowVector3<f64>, RowVector3<f64>)>;

/// Derivative of the stacked wrench `[f_p, τ_p, f_c, τ_c]` with respect to `[δx_p, δθ_p, δx_c, δθ_c]`.
pub type WrenchJacobian = SMatrix<f64, 12, 12>;

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// World-frame coincidence of two anchor points (3 rows).
    Point { anchor_parent: Vector3<f64>, anchor_child: Vector3<f64> },
    /// Anchor offset projected on parent-frame directions (one row each).
    Lateral { anchor_parent: Vector3<f64>, anchor_child: Vector3<f64>, basis: Vec<Vector3<f64>> },
    /// Child axis kept orthogonal to parent-frame directions (one row each).
    AxisAlign { axis_child: Vector3<f64>, basis: Vec<Vector3<f64>> },
    /// Relative rotation error `2·vec(q0* ⊗ q_p* ⊗ q_c)` projected on `rows`.
    OrientationLock { rest: UnitQuaternion<f64>, rows: Vec<Vector3<f64>> },
}

impl Primitive {
    pub fn dim(&self) -> usize {
        match self {
            Primitive::Point { .. } => 3,
            Primitive::Lateral { basis, .. } | Primitive::AxisAlign { basis, .. } => basis.len(),
            Primitive::OrientationLock { rows, .. } => rows.len(),
        }
    }

    pub fn residual(&self, p: &Pose, c: &Pose, out: &mut [f64]) {
        match self {
            Primitive::Point { anchor_parent, anchor_child } => {
                let r = c.x + c.r * anchor_child - p.x - p.r * anchor_parent;
                out.copy_from_slice(r.as_slice());
            }
            Primitive::Lateral { anchor_parent, anchor_child, basis } => {
                let e = p.r.transpose() * (c.x + c.r * anchor_child - p.x) - anchor_parent;
                for (o, b) in out.iter_mut().zip(basis) {
                    *o = b.dot(&e);
                }
            }
            Primitive::AxisAlign { axis_child, basis } => {
                let w = p.r.transpose() * c.r * axis_child;
                for (o, b) in out.iter_mut().zip(basis) {
                    *o = b.dot(&w);
                }
            }
            Primitive::OrientationLock { rest, rows } => {
                let (_, v) = relative_error(rest, p, c);
                for (o, n) in out.iter_mut().zip(rows) {
                    *o = 2.0 * n.dot(&v);
                }
            }
        }
    }

    fn rows(&self, p: &Pose, c: &Pose) -> Rows {
        let z = RowVector3::zeros();
        match self {
            Primitive::Point { anchor_parent, anchor_child } => {
                let jp = p.r * skew(anchor_parent);
                let jc = -c.r * skew(anchor_child);
                (0..3)
                    .map(|i| {
                        let mut e = RowVector3::zeros();
                        e[i] = 1.0;
                        (-e, jp.row(i).into_owned(), e, jc.row(i).into_owned())
                    })
                    .collect()
            }
            Primitive::Lateral { anchor_child, basis, .. } => {
                let rpt = p.r.transpose();
                let e = rpt * (c.x + c.r * anchor_child - p.x);
                let se = skew(&e);
                let tc = -rpt * c.r * skew(anchor_child);
                basis
                    .iter()
                    .map(|b| {
                        let bt = b.transpose();
                        (-(bt * rpt), bt * se, bt * rpt, bt * tc)
                    })
                    .collect()
            }
            Primitive::AxisAlign { axis_child, basis } => {
                let w = p.r.transpose() * c.r * axis_child;
                let sw = skew(&w);
                let tc = -p.r.transpose() * c.r * skew(axis_child);
                basis
                    .iter()
                    .map(|b| {
                        let bt = b.transpose();
                        (z, bt * sw, z, bt * tc)
                    })
                    .collect()
            }
            Primitive::OrientationLock { rest, rows } => {
                let (w, v) = relative_error(rest, p, c);
                let r0 = rest.to_rotation_matrix().into_inner();
                let mc = Matrix3::identity() * w + skew(&v);
                let mp = -(Matrix3::identity() * w - skew(&v)) * r0.transpose();
                rows.iter()
                    .map(|n| {
                        let nt = n.transpose();
                        (z, nt * mp, z, nt * mc)
                    })
                    .collect()
            }
        }
    }

    /// Derivative of the wrench `Jᵀλ` this primitive exerts, for the given multipliers.
    pub fn wrench_jacobian(&self, p: &Pose, c: &Pose, lambda: &[f64]) -> WrenchJacobian {
        let mut out = WrenchJacobian::zeros();
        // block (row group, col group): 0 f_p/δx_p, 1 τ_p/δθ_p, 2 f_c/δx_c, 3 τ_c/δθ_c
        let mut put = |ri: usize, ci: usize, m: Matrix3<f64>| {
            let mut blk = out.fixed_view_mut::<3, 3>(3 * ri, 3 * ci);
            blk += m;
        };
        match self {
            Primitive::Point { anchor_parent, anchor_child } => {
                let lam = Vector3::from_column_slice(lambda);
                put(3, 3, skew(anchor_child) * skew(&(c.r.transpose() * lam)));
                put(1, 1, -skew(anchor_parent) * skew(&(p.r.transpose() * lam)));
            }
            Primitive::Lateral { anchor_child, basis, .. } => {
                let s = combine(basis, lambda);
                let rpt = p.r.transpose();
                let e = rpt * (c.x + c.r * anchor_child - p.x);
                let y = c.r.transpose() * p.r * s;
                let ss = skew(&s);
                put(2, 1, -p.r * ss);
                put(3, 3, skew(anchor_child) * skew(&y));
                put(3, 1, -skew(anchor_child) * c.r.transpose() * p.r * ss);
                put(0, 1, p.r * ss);
                put(1, 2, ss * rpt);
                put(1, 0, -ss * rpt);
                put(1, 3, -ss * rpt * c.r * skew(anchor_child));
                put(1, 1, ss * skew(&e));
            }
            Primitive::AxisAlign { axis_child, basis } => {
                let s = combine(basis, lambda);
                let w = p.r.transpose() * c.r * axis_child;
                let y = c.r.transpose() * p.r * s;
                let ss = skew(&s);
                put(3, 3, skew(axis_child) * skew(&y));
                put(3, 1, -skew(axis_child) * c.r.transpose() * p.r * ss);
                put(1, 1, ss * skew(&w));
                put(1, 3, -ss * p.r.transpose() * c.r * skew(axis_child));
            }
            Primitive::OrientationLock { rest, rows } => {
                let lam = combine(rows, lambda);
                let (w, v) = relative_error(rest, p, c);
                let r0 = rest.to_rotation_matrix().into_inner();
                let id = Matrix3::identity();
                let sl = skew(&lam);
                let outer = lam * v.transpose();
                let plus = id * w + skew(&v);
                let minus = id * w - skew(&v);
                put(3, 3, 0.5 * (sl * plus - outer));
                put(1, 3, 0.5 * r0 * (outer + sl * plus));
                put(3, 1, 0.5 * (outer - sl * minus) * r0.transpose());
                put(1, 1, -0.5 * r0 * (outer + sl * minus) * r0.transpose());
            }
        }
        out
    }
}

fn combine(basis: &[Vector3<f64>], lambda: &[f64]) -> Vector3<f64> {
    basis.iter().zip(lambda).fold(Vector3::zeros(), |acc, (b, l)| acc + b * *l)
}

/// Sign-canonical `(w, v)` of `q0* ⊗ q_p* ⊗ q_c`.
fn relative_error(rest: &UnitQuaternion<f64>, p: &Pose, c: &Pose) -> (f64, Vector3<f64>) {
    let e = rest.inverse() * p.q.inverse() * c.q;
    let (w, v) = (e.w, e.imag());
    if w < 0.0 {
        (-w, -v)
    } else {
        (w, v)
    }
}

pub fn joint_primitives(joint: &Joint) -> Vec<Primitive> {
    let basis = orthonormal_complement(&joint.axis).to_vec();
    let all_rows = vec![Vector3::x(), Vector3::y(), Vector3::z()];
    let point = Primitive::Point { anchor_parent: joint.anchor_parent, anchor_child: joint.anchor_child };
    let lateral = Primitive::Lateral {
        anchor_parent: joint.anchor_parent,
        anchor_child: joint.anchor_child,
        basis: basis.clone(),
    };
    let lock = Primitive::OrientationLock { rest: joint.rest_orientation, rows: all_rows };
    match joint.kind {
        JointKind::Revolute => {
            vec![point, Primitive::AxisAlign { axis_child: joint.axis_child, basis }]
        }
        JointKind::Prismatic => vec![lock, lateral],
        JointKind::FixedOrientation => vec![lock],
        JointKind::OriginPin => vec![point],
        JointKind::PlanarPin => vec![lateral],
    }
}

fn parent_pose(joint: &Joint, poses: &[Pose]) -> Pose {
    joint.parent.map_or_else(Pose::world, |p| poses[p])
}

/// Stacked joint residuals in joint order.
pub fn evaluate(mech: &Mechanism, poses: &[Pose]) -> DVector<f64> {
    let mut out = DVector::zeros(mech.constraint_dim());
    for (joint, &offset) in mech.joints().iter().zip(mech.constraint_offsets()) {
        let p = parent_pose(joint, poses);
        let c = poses[joint.child];
        let mut row = offset;
        for prim in joint_primitives(joint) {
            let d = prim.dim();
            prim.residual(&p, &c, &mut out.as_mut_slice()[row..row + d]);
            row += d;
        }
    }
    out
}

/// Constraint Jacobian over the configuration tangent (`6` columns per body: δx then δθ).
pub fn jacobian_config(mech: &Mechanism, poses: &[Pose]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(mech.constraint_dim(), CONFIG_DIM * mech.body_count());
    for (joint, &offset) in mech.joints().iter().zip(mech.constraint_offsets()) {
        let p = parent_pose(joint, poses);
        let c = poses[joint.child];
        let mut row = offset;
        for prim in joint_primitives(joint) {
            for (xp, tp, xc, tc) in prim.rows(&p, &c) {
                for k in 0..3 {
                    if let Some(pi) = joint.parent {
                        let o = CONFIG_DIM * pi;
                        g[(row, o + k)] += xp[k];
                        g[(row, o + 3 + k)] += tp[k];
                    }
                    let o = CONFIG_DIM * joint.child;
                    g[(row, o + k)] += xc[k];
                    g[(row, o + 3 + k)] += tc[k];
                }
                row += 1;
            }
        }
    }
    g
}

/// Derivative of the generalized constraint wrench `Gᵀλ` (force and body torque per body)
/// with respect to the configuration tangent.
pub fn wrench_jacobian(mech: &Mechanism, poses: &[Pose], lambda: &DVector<f64>) -> DMatrix<f64> {
    let n = CONFIG_DIM * mech.body_count();
    let mut h = DMatrix::zeros(n, n);
    for (joint, &offset) in mech.joints().iter().zip(mech.constraint_offsets()) {
        let p = parent_pose(joint, poses);
        let c = poses[joint.child];
        let mut row = offset;
        for prim in joint_primitives(joint) {
            let d = prim.dim();
            let local = prim.wrench_jacobian(&p, &c, &lambda.as_slice()[row..row + d]);
            row += d;
            // local index groups: 0..6 parent, 6..12 child
            let owners = [joint.parent, Some(joint.child)];
            for (gi, bi) in owners.iter().enumerate() {
                let Some(bi) = bi else { continue };
                for (gj, bj) in owners.iter().enumerate() {
                    let Some(bj) = bj else { continue };
                    let blk = local.fixed_view::<6, 6>(6 * gi, 6 * gj);
                    let mut dst = h.view_mut((CONFIG_DIM * bi, CONFIG_DIM * bj), (6, 6));
                    dst += blk;
                }
            }
        }
    }
    h
}

/// Embed a configuration-tangent Jacobian (`6` per body) into the full state tangent (`12` per body).
pub fn embed_config_columns(g: &DMatrix<f64>, bodies: usize) -> DMatrix<f64> {
    use crate::mechanism::TANGENT_DIM;
    let mut out = DMatrix::zeros(g.nrows(), TANGENT_DIM * bodies);
    for b in 0..bodies {
        out.view_mut((0, TANGENT_DIM * b), (g.nrows(), 3))
            .copy_from(&g.view((0, CONFIG_DIM * b), (g.nrows(), 3)));
        out.view_mut((0, TANGENT_DIM * b + 6), (g.nrows(), 3))
            .copy_from(&g.view((0, CONFIG_DIM * b + 3), (g.nrows(), 3)));
    }
    out
}
