//! Riccati recursions with and without the multiplier channel.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linearization::LinearizedSystem;
use crate::math::{condition_number, lu_is_singular};
use crate::mechanism::MechanismState;

/// Quadratic stage and terminal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qn: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, qn: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&q, "Q")?;
        check_symmetric(&r, "R")?;
        check_symmetric(&qn, "Q_N")?;
        if qn.shape() != q.shape() {
            return Err(Error::Dimension("Q_N must have the shape of Q".into()));
        }
        for (m, name) in [(&q, "Q"), (&qn, "Q_N")] {
            if m.nrows() > 0 && m.clone().symmetric_eigenvalues().min() < -1e-12 {
                return Err(Error::InvalidArgument(format!("{name} must be positive semidefinite")));
            }
        }
        if r.nrows() > 0 && !(r.clone().symmetric_eigenvalues().min() > 0.0) {
            return Err(Error::InvalidArgument("R must be positive definite".into()));
        }
        Ok(CostWeights { q, r, qn })
    }

    /// Same terminal and stage state weight.
    pub fn stationary(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let qn = q.clone();
        Self::new(q, r, qn)
    }

    /// Adds `eps·I` to both state weights.
    pub fn with_ridge(mut self, eps: f64) -> Self {
        if eps != 0.0 {
            let n = self.q.nrows();
            self.q += DMatrix::identity(n, n) * eps;
            self.qn += DMatrix::identity(n, n) * eps;
        }
        self
    }
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{name} must be square")));
    }
    let scale = 1.0 + m.amax();
    if (m - m.transpose()).amax() > 1e-12 * scale || m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} must be finite and symmetric")));
    }
    Ok(())
}

/// Gains for one step: `u = −K z`, `λ = −L z`, cost-to-go `zᵀPz/2`, closed loop `Ā`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
}

fn symmetrize(p: DMatrix<f64>) -> DMatrix<f64> {
    (&p + p.transpose()) * 0.5
}

fn check_dims(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &CostWeights, p_next: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let ok = a.is_square()
        && b.nrows() == n
        && w.q.nrows() == n
        && w.r.nrows() == b.ncols()
        && p_next.shape() == (n, n);
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}, P {:?}",
            a.shape(),
            b.shape(),
            w.q.shape(),
            w.r.shape(),
            p_next.shape()
        )))
    }
}

pub fn riccati_step_unconstrained(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &CostWeights,
    p_next: &DMatrix<f64>,
) -> Result<GainSet> {
    check_dims(a, b, w, p_next)?;
    let btp = b.transpose() * p_next;
    let s = &w.r + &btp * b;
    let lu = s.lu();
    if lu_is_singular(&lu, 1e-13) {
        return Err(Error::SingularInnerMatrix);
    }
    let k = lu.solve(&(&btp * a)).ok_or(Error::SingularInnerMatrix)?;
    let a_bar = a - b * &k;
    let p = &w.q + k.transpose() * &w.r * &k + a_bar.transpose() * p_next * &a_bar;
    Ok(GainSet { k, l: DMatrix::zeros(0, a.nrows()), p: symmetrize(p), a_bar })
}

/// Quantities that depend only on the system, reused across Riccati iterations.
struct Elimination {
    gb: DMatrix<f64>,
    gc: DMatrix<f64>,
    ga: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl Elimination {
    fn new(sys: &LinearizedSystem) -> Result<Self> {
        let gb = &sys.g * &sys.b;
        let gc = &sys.g * &sys.c;
        let ga = &sys.g * &sys.a;
        let condition = condition_number(&gc);
        if condition > 1e12 {
            return Err(Error::SingularGc { condition });
        }
        // D = B − C (GC)⁻¹ GB
        let d = if gc.nrows() == 0 {
            sys.b.clone()
        } else {
            let x = gc.clone().lu().solve(&gb).ok_or(Error::SingularGc { condition: f64::INFINITY })?;
            &sys.b - &sys.c * x
        };
        Ok(Elimination { gb, gc, ga, d })
    }

    fn step(&self, sys: &LinearizedSystem, w: &CostWeights, p_next: &DMatrix<f64>) -> Result<GainSet> {
        let (n, m, c) = (sys.state_dim(), sys.input_dim(), sys.constraint_dim());
        let dtp = self.d.transpose() * p_next;
        let mut lhs = DMatrix::zeros(m + c, m + c);
        lhs.view_mut((0, 0), (m, m)).copy_from(&(&w.r + &dtp * &sys.b));
        lhs.view_mut((0, m), (m, c)).copy_from(&(&dtp * &sys.c));
        lhs.view_mut((m, 0), (c, m)).copy_from(&self.gb);
        lhs.view_mut((m, m), (c, c)).copy_from(&self.gc);
        let mut rhs = DMatrix::zeros(m + c, n);
        rhs.view_mut((0, 0), (m, n)).copy_from(&(&dtp * &sys.a));
        rhs.view_mut((m, 0), (c, n)).copy_from(&self.ga);
        let lu = lhs.lu();
        if lu_is_singular(&lu, 1e-13) {
            return Err(Error::SingularSaddle);
        }
        let kl = lu.solve(&rhs).ok_or(Error::SingularSaddle)?;
        if kl.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularSaddle);
        }
        let k = kl.rows(0, m).into_owned();
        let l = kl.rows(m, c).into_owned();
        let a_bar = &sys.a - &sys.b * &k - &sys.c * &l;
        let p = &w.q + k.transpose() * &w.r * &k + a_bar.transpose() * p_next * &a_bar;
        Ok(GainSet { k, l, p: symmetrize(p), a_bar })
    }
}

pub fn riccati_step_constrained(sys: &LinearizedSystem, w: &CostWeights, p_next: &DMatrix<f64>) -> Result<GainSet> {
    check_dims(&sys.a, &sys.b, w, p_next)?;
    Elimination::new(sys)?.step(sys, w, p_next)
}

/// Minimizer of `uᵀRu/2 + z'ᵀP z'/2` with `z' = Az + Bu + Cλ` subject to `G z' = 0`,
/// from the full stationarity system with an explicit multiplier for the constraint.
pub fn kkt_qp_oracle(
    sys: &LinearizedSystem,
    w: &CostWeights,
    p_next: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dims(&sys.a, &sys.b, w, p_next)?;
    let (m, c) = (sys.input_dim(), sys.constraint_dim());
    let (b, cm, g) = (&sys.b, &sys.c, &sys.g);
    let az = &sys.a * z;
    let dim = m + 2 * c;
    let mut kkt = DMatrix::zeros(dim, dim);
    let gt = g.transpose();
    kkt.view_mut((0, 0), (m, m)).copy_from(&(&w.r + b.transpose() * p_next * b));
    kkt.view_mut((0, m), (m, c)).copy_from(&(b.transpose() * p_next * cm));
    kkt.view_mut((0, m + c), (m, c)).copy_from(&(b.transpose() * &gt));
    kkt.view_mut((m, 0), (c, m)).copy_from(&(cm.transpose() * p_next * b));
    kkt.view_mut((m, m), (c, c)).copy_from(&(cm.transpose() * p_next * cm));
    kkt.view_mut((m, m + c), (c, c)).copy_from(&(cm.transpose() * &gt));
    kkt.view_mut((m + c, 0), (c, m)).copy_from(&(g * b));
    kkt.view_mut((m + c, m), (c, c)).copy_from(&(g * cm));
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, m).copy_from(&(-(b.transpose() * p_next * &az)));
    rhs.rows_mut(m, c).copy_from(&(-(cm.transpose() * p_next * &az)));
    rhs.rows_mut(m + c, c).copy_from(&(-(g * &az)));
    let lu = kkt.lu();
    if lu_is_singular(&lu, 1e-14) {
        return Err(Error::SingularKkt);
    }
    let x = lu.solve(&rhs).ok_or(Error::SingularKkt)?;
    Ok((x.rows(0, m).into_owned(), x.rows(m, c).into_owned()))
}

/// Fixed point of the recursion together with the number of iterations used.
#[derive(Debug, Clone, PartialEq)]
pub struct InfiniteHorizon {
    pub gains: GainSet,
    pub iterations: usize,
}

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 200_000;

/// Iterates the Riccati step from `P = Q` until the largest entry of `ΔP` is below
/// `tol · max(1, max|P|)`. The unconstrained step is used when the system has no constraints.
pub fn infinite_horizon(sys: &LinearizedSystem, w: &CostWeights, tol: f64, max_iters: usize) -> Result<InfiniteHorizon> {
    check_dims(&sys.a, &sys.b, w, &w.q)?;
    let elim = if sys.constraint_dim() > 0 { Some(Elimination::new(sys)?) } else { None };
    let mut p = w.q.clone();
    let mut last_change = f64::INFINITY;
    let mut last = None;
    for it in 1..=max_iters {
        let gains = match &elim {
            Some(e) => e.step(sys, w, &p)?,
            None => riccati_step_unconstrained(&sys.a, &sys.b, w, &p)?,
        };
        last_change = (&gains.p - &p).amax();
        if !last_change.is_finite() {
            return Err(Error::NoConvergence { iterations: it, last_change, last: Box::new(gains) });
        }
        let scale = gains.p.amax().max(1.0);
        if last_change <= tol * scale {
            return Ok(InfiniteHorizon { gains, iterations: it });
        }
        p = gains.p.clone();
        last = Some(gains);
    }
    match last {
        Some(gains) => Err(Error::NoConvergence { iterations: max_iters, last_change, last: Box::new(gains) }),
        None => Err(Error::InvalidArgument("max_iters must be at least 1".into())),
    }
}

/// Time-varying gains for a list of systems with shared weights.
pub fn tvlqr(systems: &[LinearizedSystem], w: &CostWeights) -> Result<Vec<GainSet>> {
    let weights = vec![w.clone(); systems.len()];
    tvlqr_scheduled(systems, &weights)
}

/// Time-varying gains with per-step weights; the terminal cost is `weights[N−1].qn`.
pub fn tvlqr_scheduled(systems: &[LinearizedSystem], weights: &[CostWeights]) -> Result<Vec<GainSet>> {
    if systems.is_empty() {
        return Err(Error::InvalidArgument("tvlqr needs at least one system".into()));
    }
    if weights.len() != systems.len() {
        return Err(Error::Dimension("one weight set per system expected".into()));
    }
    let mut p = weights[weights.len() - 1].qn.clone();
    let mut out = vec![None; systems.len()];
    for k in (0..systems.len()).rev() {
        let (sys, w) = (&systems[k], &weights[k]);
        let gains = if sys.constraint_dim() == 0 {
            riccati_step_unconstrained(&sys.a, &sys.b, w, &p)
        } else {
            riccati_step_constrained(sys, w, &p)
        }
        .map_err(|e| Error::AtStep { index: k, source: Box::new(e) })?;
        p = gains.p.clone();
        out[k] = Some(gains);
    }
    Ok(out.into_iter().map(|g| g.expect("filled by the backward pass")).collect())
}

/// `u* − K δz` for a tangent-space error `δz`.
pub fn feedback_tangent(gains: &GainSet, dz: &DVector<f64>, u_ref: &DVector<f64>) -> DVector<f64> {
    u_ref - &gains.k * dz
}

/// `u* − K (z ⊖ z*)`; the multiplier gain is not used.
pub fn feedback(gains: &GainSet, z: &MechanismState, z_ref: &MechanismState, u_ref: &DVector<f64>) -> DVector<f64> {
    feedback_tangent(gains, &z.difference(z_ref), u_ref)
}
