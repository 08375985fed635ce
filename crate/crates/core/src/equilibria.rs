//! Data-driven steady states.
//!
//! A pair `(u, y)` is an equilibrium iff the constant sequence of `n + 1`
//! copies is a trajectory. With `H = [H_{n+1}(u^d); H_{n+1}(y^d)]` that is
//! equivalent to `S_u u + S_y y = 0` where
//! `[S_u S_y] = (H H^+ - I) blockdiag(1 ⊗ I_m, 1 ⊗ I_p)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hankel::{self, HankelBlock, Trajectory};
use crate::numerics::{self, RankTolerance};

/// Default rank cutoff for the steady-state maps. `S_u` is rank deficient
/// whenever `m > p`; round-off in the projector leaves singular values near
/// `1e-14` that must not be inverted.
pub const STEADY_RANK_CUTOFF: f64 = 1e-9;

/// Default relative equilibrium tolerance.
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyMaps {
    s_u: DMatrix<f64>,
    s_y: DMatrix<f64>,
    s_u_pinv: DMatrix<f64>,
    /// `I_m - S_u^+ S_u`
    p0: DMatrix<f64>,
    /// `S_u^+ S_y`
    s_u_pinv_s_y: DMatrix<f64>,
    order: usize,
}

impl SteadyMaps {
    pub fn s_u(&self) -> &DMatrix<f64> {
        &self.s_u
    }
    pub fn s_y(&self) -> &DMatrix<f64> {
        &self.s_y
    }
    pub fn s_u_pinv(&self) -> &DMatrix<f64> {
        &self.s_u_pinv
    }
    pub fn input_projector(&self) -> &DMatrix<f64> {
        &self.p0
    }
    /// The order bound the maps were built with (window length minus one).
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn input_dim(&self) -> usize {
        self.s_u.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.s_y.ncols()
    }

    /// `||S_u u + S_y y||`.
    pub fn residual(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (&self.s_u * u + &self.s_y * y).norm()
    }

    /// Residual test against `tol * (1 + ||(u, y)||)`.
    pub fn is_equilibrium_within(&self, u: &DVector<f64>, y: &DVector<f64>, tol: f64) -> bool {
        let scale = 1.0 + (u.norm_squared() + y.norm_squared()).sqrt();
        self.residual(u, y) <= tol * scale
    }

    /// `P_0 v - S_u^+ S_y y` without a feasibility check. Matrix-vector only.
    pub fn project_input(&self, v: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.p0 * v - &self.s_u_pinv_s_y * y
    }
}

/// Builds the steady-state maps from data. `order` is an upper bound on the
/// system order; the input must be persistently exciting of order `2 order + 1`.
pub fn compute_steady_maps(data: &Trajectory, order: usize, tol: RankTolerance) -> Result<SteadyMaps> {
    let pe_order = 2 * order + 1;
    if data.len() < pe_order || !hankel::is_persistently_exciting(data.inputs(), pe_order, RankTolerance::auto())? {
        return Err(Error::InsufficientExcitation { order: pe_order });
    }
    let depth = order + 1;
    let hu = hankel::build_hankel(data.inputs(), depth)?;
    let hy = hankel::build_hankel(data.outputs(), depth)?;
    let (m, p) = (data.input_dim(), data.output_dim());

    let h = numerics::vstack(&[hu.matrix(), hy.matrix()]);
    let rows = h.nrows();
    let projector = &h * numerics::pseudoinverse(&h, tol)?;
    let defect = projector - DMatrix::<f64>::identity(rows, rows);
    let s_u = defect.columns(0, m * depth) * numerics::stacked_identity(depth, m);
    let s_y = defect.columns(m * depth, p * depth) * numerics::stacked_identity(depth, p);

    let s_u_pinv = numerics::pseudoinverse(&s_u, tol)?;
    let p0 = DMatrix::identity(m, m) - &s_u_pinv * &s_u;
    let s_u_pinv_s_y = &s_u_pinv * &s_y;
    Ok(SteadyMaps {
        s_u,
        s_y,
        s_u_pinv,
        p0,
        s_u_pinv_s_y,
        order,
    })
}

/// `||S_u u + S_y y||`; zero (to tolerance) iff `(u, y)` is an equilibrium.
pub fn is_equilibrium(maps: &SteadyMaps, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
    maps.residual(u, y)
}

/// Equilibrium test straight from the definition: residual of the constant
/// sequence `(u, y)` repeated `depth` times against `[U; Y]`.
pub fn is_equilibrium_by_definition(
    u_hankel: &HankelBlock,
    y_hankel: &HankelBlock,
    u: &DVector<f64>,
    y: &DVector<f64>,
    tol: RankTolerance,
) -> Result<f64> {
    let depth = u_hankel.depth();
    let candidate = Trajectory::new(vec![u.clone(); depth], vec![y.clone(); depth])?;
    hankel::trajectory_residual(&candidate, u_hankel, y_hankel, tol)
}

/// The steady-state input for output `y` closest to `v`:
/// `u = (I - S_u^+ S_u) v - S_u^+ S_y y`.
///
/// Fails with [`Error::InfeasibleOutput`] if `(u, y)` does not pass the
/// equilibrium test at relative tolerance `tol`.
pub fn nearest_steady_input(
    maps: &SteadyMaps,
    v: &DVector<f64>,
    y: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    if v.len() != maps.input_dim() || y.len() != maps.output_dim() {
        return Err(Error::InvalidInput("reference or output has wrong dimension".into()));
    }
    let u = maps.project_input(v, y);
    if !maps.is_equilibrium_within(&u, y, tol) {
        return Err(Error::InfeasibleOutput {
            residual: maps.residual(&u, y),
        });
    }
    Ok(u)
}
