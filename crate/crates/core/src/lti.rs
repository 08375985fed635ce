//! Model-based ground truth: state-space simulation, steady states and the
//! hindsight-optimal control problem.
//!
//! The controller never sees anything in this module; it is used to generate
//! data, to close the loop in simulation and to check the data-driven results.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{CostSchedule, QuadraticTracking, StageCost};
use crate::error::{Error, Result};
use crate::hankel::Trajectory;
use crate::numerics::{self, RankTolerance};

/// `x+ = A x + B u`, `y = C x + D u` with its current state.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    x: DVector<f64>,
}

impl LtiSystem {
    /// Validates dimensions, controllability of `(A, B)` and observability of `(A, C)`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::InvalidSystem("A must be square and nonempty".into()));
        }
        let (m, p) = (b.ncols(), c.nrows());
        if m == 0 || p == 0 {
            return Err(Error::InvalidSystem("need at least one input and one output".into()));
        }
        if b.nrows() != n || c.ncols() != n || d.shape() != (p, m) || x0.len() != n {
            return Err(Error::InvalidSystem("inconsistent system dimensions".into()));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            numerics::ensure_finite(mat, name)?;
        }
        controllability_index(&a, &b)?;
        if !is_observable(&a, &c)? {
            return Err(Error::InvalidSystem("(A, C) is not observable".into()));
        }
        Ok(LtiSystem { a, b, c, d, x: x0 })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn order(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn set_state(&mut self, x: DVector<f64>) -> Result<()> {
        if x.len() != self.order() {
            return Err(Error::InvalidInput("state has wrong dimension".into()));
        }
        self.x = x;
        Ok(())
    }

    /// Applies `u`, returns the output `y = C x + D u` and advances the state.
    pub fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "input has length {}, system has {} inputs",
                u.len(),
                self.input_dim()
            )));
        }
        let y = &self.c * &self.x + &self.d * u;
        self.x = &self.a * &self.x + &self.b * u;
        Ok(y)
    }

    /// Simulates from the current state; the final state is kept.
    pub fn simulate(&mut self, inputs: &[DVector<f64>]) -> Result<Trajectory> {
        let outputs = inputs
            .iter()
            .map(|u| self.step(u))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(inputs.to_vec(), outputs)
    }

    /// Simulates `u_k = K x_k + w_k`, returning the applied inputs and outputs.
    pub fn simulate_with_feedback(
        &mut self,
        gain: &DMatrix<f64>,
        excitation: &[DVector<f64>],
    ) -> Result<Trajectory> {
        if gain.shape() != (self.input_dim(), self.order()) {
            return Err(Error::InvalidInput("feedback gain has wrong shape".into()));
        }
        let mut inputs = Vec::with_capacity(excitation.len());
        let mut outputs = Vec::with_capacity(excitation.len());
        for w in excitation {
            let u = gain * &self.x + w;
            outputs.push(self.step(&u)?);
            inputs.push(u);
        }
        Trajectory::new(inputs, outputs)
    }

    pub fn controllability_index(&self) -> Result<usize> {
        controllability_index(&self.a, &self.b)
    }

    /// Largest eigenvalue modulus of `A`.
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// The steady-state matrix `[I - A, -B; C, D]`.
    pub fn steady_state_matrix(&self) -> DMatrix<f64> {
        let (n, m, p) = (self.order(), self.input_dim(), self.output_dim());
        let mut s = DMatrix::zeros(n + p, n + m);
        s.view_mut((0, 0), (n, n))
            .copy_from(&(DMatrix::identity(n, n) - &self.a));
        s.view_mut((0, n), (n, m)).copy_from(&(-&self.b));
        s.view_mut((n, 0), (p, n)).copy_from(&self.c);
        s.view_mut((n, n), (p, m)).copy_from(&self.d);
        s
    }

    /// `true` when the steady-state matrix has full row rank, which makes
    /// every output a steady-state output.
    pub fn every_output_is_steady(&self) -> Result<bool> {
        let s = self.steady_state_matrix();
        Ok(numerics::numerical_rank(&s, RankTolerance::auto())? == s.nrows())
    }

    /// DC gain `C (I - A)^{-1} B + D`.
    pub fn steady_state_gain(&self) -> Result<DMatrix<f64>> {
        let n = self.order();
        let lu = (DMatrix::identity(n, n) - &self.a).lu();
        let x = lu
            .solve(&self.b)
            .ok_or_else(|| Error::NoSteadyState("I - A is singular".into()))?;
        Ok(&self.c * x + &self.d)
    }

    /// Model-side equilibrium test: distance of `(u, y)` from satisfying
    /// `x = A x + B u`, `y = C x + D u` for some `x` (least squares over `x`).
    pub fn equilibrium_residual(&self, u: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let n = self.order();
        let lhs = numerics::vstack(&[&(DMatrix::identity(n, n) - &self.a), &self.c]);
        let rhs = numerics::vconcat(&[&(&self.b * u), &(y - &self.d * u)]);
        let x = numerics::pseudoinverse(&lhs, RankTolerance::auto())? * &rhs;
        Ok((lhs * x - rhs).norm())
    }

    /// Extended observability matrix `[C; CA; ...; CA^{k-1}]`.
    pub fn observability_matrix(&self, k: usize) -> DMatrix<f64> {
        let (n, p) = (self.order(), self.output_dim());
        let mut o = DMatrix::zeros(k * p, n);
        let mut ca = self.c.clone();
        for i in 0..k {
            o.view_mut((i * p, 0), (p, n)).copy_from(&ca);
            ca = &ca * &self.a;
        }
        o
    }

    /// Block lower-triangular input-to-output map over `k` steps (zero initial state).
    pub fn impulse_toeplitz(&self, k: usize) -> DMatrix<f64> {
        let (m, p) = (self.input_dim(), self.output_dim());
        let mut markov = Vec::with_capacity(k);
        markov.push(self.d.clone());
        let mut ab = self.b.clone();
        for _ in 1..k {
            markov.push(&self.c * &ab);
            ab = &self.a * ab;
        }
        let mut t = DMatrix::zeros(k * p, k * m);
        for i in 0..k {
            for j in 0..=i {
                t.view_mut((i * p, j * m), (p, m)).copy_from(&markov[i - j]);
            }
        }
        t
    }

    /// Least-squares initial state of a trajectory from all of its samples.
    pub fn reconstruct_initial_state(&self, traj: &Trajectory) -> Result<DVector<f64>> {
        let k = traj.len();
        if traj.input_dim() != self.input_dim() || traj.output_dim() != self.output_dim() {
            return Err(Error::InvalidInput("trajectory dimensions differ from system".into()));
        }
        let o = self.observability_matrix(k);
        let free = traj.stacked_outputs() - self.impulse_toeplitz(k) * traj.stacked_inputs();
        Ok(numerics::pseudoinverse(&o, RankTolerance::auto())? * free)
    }

    /// Reconstructs the initial state from the first `min(n, L)` samples,
    /// simulates the trajectory's inputs forward and returns the largest
    /// output mismatch. Zero (to rounding) iff the trajectory is generated
    /// by this system.
    pub fn trajectory_mismatch(&self, traj: &Trajectory) -> Result<f64> {
        let head = traj.window(0, self.order().min(traj.len()))?;
        let x0 = self.reconstruct_initial_state(&head)?;
        let mut sim = self.clone();
        sim.x = x0;
        let replay = sim.simulate(traj.inputs())?;
        Ok(replay
            .outputs()
            .iter()
            .zip(traj.outputs())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// Distance of `[u; y]` from the space of length-`L` system trajectories,
    /// computed from the model (`y = O x0 + T u`).
    pub fn behavior_residual(&self, traj: &Trajectory) -> Result<f64> {
        let k = traj.len();
        let (n, m) = (self.order(), self.input_dim());
        let o = self.observability_matrix(k);
        let t = self.impulse_toeplitz(k);
        let rows_u = k * m;
        let rows_y = k * self.output_dim();
        let mut basis = DMatrix::zeros(rows_u + rows_y, rows_u + n);
        basis
            .view_mut((0, 0), (rows_u, rows_u))
            .copy_from(&DMatrix::identity(rows_u, rows_u));
        basis.view_mut((rows_u, 0), (rows_y, rows_u)).copy_from(&t);
        basis.view_mut((rows_u, rows_u), (rows_y, n)).copy_from(&o);
        let w = numerics::vconcat(&[&traj.stacked_inputs(), &traj.stacked_outputs()]);
        let qr = basis.clone().qr();
        let q = qr.q();
        Ok((&w - &q * (q.transpose() * &w)).norm())
    }

    /// LQR gain (`Q = I`, `R = I`) from value iteration on the Riccati
    /// equation; `u = K x` stabilizes any stabilizable pair.
    pub fn stabilizing_gain(&self) -> Result<DMatrix<f64>> {
        let (n, m) = (self.order(), self.input_dim());
        let (a, b) = (&self.a, &self.b);
        let mut p = DMatrix::<f64>::identity(n, n);
        for _ in 0..20_000 {
            let bp = b.transpose() * &p;
            let s = DMatrix::identity(m, m) + &bp * b;
            let k = s
                .cholesky()
                .ok_or_else(|| Error::NumericalFailure("Riccati iteration lost definiteness".into()))?
                .solve(&(&bp * a));
            let next = DMatrix::identity(n, n) + a.transpose() * &p * a - a.transpose() * bp.transpose() * &k;
            let next = (&next + next.transpose()) * 0.5;
            let delta = (&next - &p).norm();
            p = next;
            if delta <= 1e-12 * (1.0 + p.norm()) {
                return Ok(-k);
            }
        }
        Err(Error::NumericalFailure("Riccati iteration did not converge".into()))
    }
}

/// Smallest `k` with `rank [B, AB, ..., A^{k-1} B] = n`.
pub fn controllability_index(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<usize> {
    let n = a.nrows();
    let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut ak_b = b.clone();
    for k in 1..=n {
        blocks.push(ak_b.clone());
        let refs: Vec<_> = blocks.iter().collect();
        let ctrb = hstack(&refs);
        if numerics::numerical_rank(&ctrb, RankTolerance::auto())? == n {
            return Ok(k);
        }
        ak_b = a * ak_b;
    }
    Err(Error::InvalidSystem("(A, B) is not controllable".into()))
}

pub fn is_observable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<bool> {
    let n = a.nrows();
    let mut rows: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut ca = c.clone();
    for _ in 0..n {
        rows.push(ca.clone());
        ca = &ca * a;
    }
    let refs: Vec<_> = rows.iter().collect();
    Ok(numerics::numerical_rank(&numerics::vstack(&refs), RankTolerance::auto())? == n)
}

fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Induced 2-norm.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    numerics::singular_values(a)
        .ok()
        .and_then(|s| s.first().copied())
        .unwrap_or(f64::NAN)
}

/// Model steady state for output `y_target` whose input is closest to `v`:
/// `min ||u - v||` s.t. `x = A x + B u`, `y_target = C x + D u`.
pub fn model_steady_state(
    sys: &LtiSystem,
    y_target: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, m, p) = (sys.order(), sys.input_dim(), sys.output_dim());
    if y_target.len() != p || v.len() != m {
        return Err(Error::InvalidInput("target or reference has wrong dimension".into()));
    }
    if !sys.every_output_is_steady()? {
        return Err(Error::NoSteadyState(
            "[I - A, -B; C, D] does not have full row rank".into(),
        ));
    }
    let mut hess = DMatrix::zeros(n + m, n + m);
    hess.view_mut((n, n), (m, m))
        .copy_from(&DMatrix::identity(m, m));
    let mut lin = DVector::zeros(n + m);
    lin.rows_mut(n, m).copy_from(&(-v));
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(n, p).copy_from(y_target);
    let z = numerics::solve_equality_qp(&hess, &lin, &sys.steady_state_matrix(), &rhs)?;
    Ok((z.rows(n, m).into_owned(), z.rows(0, n).into_owned()))
}

/// Optimal input/output sequence over `t = 0..=T` with full knowledge of the costs.
#[derive(Debug, Clone, PartialEq)]
pub struct Hindsight {
    pub trajectory: Trajectory,
    pub stage_costs: Vec<f64>,
    pub total_cost: f64,
}

fn hindsight_from_inputs(
    sys: &LtiSystem,
    schedule: &CostSchedule<QuadraticTracking>,
    x0: &DVector<f64>,
    inputs: Vec<DVector<f64>>,
) -> Result<Hindsight> {
    let mut sim = sys.clone();
    sim.x = x0.clone();
    let trajectory = sim.simulate(&inputs)?;
    let stage_costs: Vec<f64> = trajectory
        .inputs()
        .iter()
        .zip(trajectory.outputs())
        .enumerate()
        .map(|(t, (u, y))| schedule.at(t).value(u, y))
        .collect();
    let total_cost = stage_costs.iter().sum();
    Ok(Hindsight {
        trajectory,
        stage_costs,
        total_cost,
    })
}

fn check_schedule_dims(sys: &LtiSystem, schedule: &CostSchedule<QuadraticTracking>, x0: &DVector<f64>) -> Result<()> {
    if x0.len() != sys.order() {
        return Err(Error::InvalidInput("initial state has wrong dimension".into()));
    }
    let ok = schedule.segments().iter().all(|(_, c)| {
        c.eta.len() == sys.input_dim() && c.theta.len() == sys.output_dim()
    });
    if !ok {
        return Err(Error::InvalidInput("cost targets do not match system dimensions".into()));
    }
    Ok(())
}

/// Exact solution of the finite-horizon tracking problem by a backward
/// Riccati recursion (linear in the horizon).
pub fn solve_hindsight(
    sys: &LtiSystem,
    schedule: &CostSchedule<QuadraticTracking>,
    x0: &DVector<f64>,
) -> Result<Hindsight> {
    check_schedule_dims(sys, schedule, x0)?;
    let (n, m) = (sys.order(), sys.input_dim());
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let horizon = schedule.horizon();

    let ctc = c.transpose() * c;
    let dtc = d.transpose() * c;
    let dtd = d.transpose() * d + DMatrix::identity(m, m);

    let mut p_mat = DMatrix::<f64>::zeros(n, n);
    let mut p_vec = DVector::<f64>::zeros(n);
    let mut gains = Vec::with_capacity(horizon + 1);
    for t in (0..=horizon).rev() {
        let cost = schedule.at(t);
        let bp = b.transpose() * &p_mat;
        let quu = &dtd + &bp * b;
        let qux = &dtc + &bp * a;
        let qxx = &ctc + a.transpose() * &p_mat * a;
        let qu = -&cost.eta - d.transpose() * &cost.theta + b.transpose() * &p_vec;
        let qx = -(c.transpose() * &cost.theta) + a.transpose() * &p_vec;
        let chol = quu
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("input Hessian not positive definite".into()))?;
        let k_fb = -chol.solve(&qux);
        let k_ff = -chol.solve(&qu);
        let next = &qxx + qux.transpose() * &k_fb;
        p_mat = (&next + next.transpose()) * 0.5;
        p_vec = qx + qux.transpose() * &k_ff;
        gains.push((k_fb, k_ff));
    }
    gains.reverse();

    let mut x = x0.clone();
    let mut inputs = Vec::with_capacity(horizon + 1);
    for (k_fb, k_ff) in &gains {
        let u = k_fb * &x + k_ff;
        x = a * &x + b * &u;
        inputs.push(u);
    }
    if inputs.iter().any(|u| !u.iter().all(|v| v.is_finite())) {
        return Err(Error::NumericalFailure("hindsight inputs are not finite".into()));
    }
    hindsight_from_inputs(sys, schedule, x0, inputs)
}

/// The same problem as [`solve_hindsight`] posed as one dense
/// equality-constrained QP over stacked inputs and states. Cubic in the
/// horizon; used to cross-check the recursion.
pub fn solve_hindsight_dense(
    sys: &LtiSystem,
    schedule: &CostSchedule<QuadraticTracking>,
    x0: &DVector<f64>,
) -> Result<Hindsight> {
    check_schedule_dims(sys, schedule, x0)?;
    let (n, m, p) = (sys.order(), sys.input_dim(), sys.output_dim());
    let steps = schedule.horizon() + 1;
    let nu = m * steps;
    let nz = nu + n * steps; // inputs u_0..u_T then states x_1..x_{T+1}

    // Least-squares residual J z - r covering both cost halves.
    let mut j = DMatrix::zeros(nu + p * steps, nz);
    let mut r = DVector::zeros(nu + p * steps);
    for t in 0..steps {
        let cost = schedule.at(t);
        j.view_mut((t * m, t * m), (m, m))
            .copy_from(&DMatrix::identity(m, m));
        r.rows_mut(t * m, m).copy_from(&cost.eta);
        let row = nu + t * p;
        j.view_mut((row, t * m), (p, m)).copy_from(&sys.d);
        let mut target = cost.theta.clone();
        if t == 0 {
            target -= &sys.c * x0;
        } else {
            j.view_mut((row, nu + (t - 1) * n), (p, n))
                .copy_from(&sys.c);
        }
        r.rows_mut(row, p).copy_from(&target);
    }

    let mut e = DMatrix::zeros(n * steps, nz);
    let mut f = DVector::zeros(n * steps);
    for t in 0..steps {
        let row = t * n;
        e.view_mut((row, nu + t * n), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        e.view_mut((row, t * m), (n, m)).copy_from(&(-&sys.b));
        if t == 0 {
            f.rows_mut(0, n).copy_from(&(&sys.a * x0));
        } else {
            e.view_mut((row, nu + (t - 1) * n), (n, n))
                .copy_from(&(-&sys.a));
        }
    }

    let hess = j.transpose() * &j;
    let lin = -(j.transpose() * r);
    let z = numerics::solve_equality_qp(&hess, &lin, &e, &f)?;
    let inputs = (0..steps).map(|t| z.rows(t * m, m).into_owned()).collect();
    hindsight_from_inputs(sys, schedule, x0, inputs)
}

/// How a system is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SystemSpec {
    Explicit {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        d: Vec<Vec<f64>>,
        #[serde(default)]
        x0: Option<Vec<f64>>,
    },
    Random(RandomSystemSpec),
}

/// Random system: `(B, C, D)` are drawn once from the seed, then `A` is
/// redrawn until the pair is controllable and observable, every output is a
/// steady-state output and `I - A` is safely invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSystemSpec {
    pub order: usize,
    pub inputs: usize,
    pub outputs: usize,
    /// `A` entries are uniform on `[-a_bound, a_bound]`.
    #[serde(default = "one")]
    pub a_bound: f64,
    /// `B`, `C`, `D` entries are uniform on `[-bcd_bound, bcd_bound]`.
    #[serde(default = "one")]
    pub bcd_bound: f64,
    #[serde(default = "yes")]
    pub feedthrough: bool,
    /// If set, `A` is rescaled to this spectral radius after drawing.
    #[serde(default)]
    pub spectral_radius: Option<f64>,
    /// Require every output to be a steady-state output.
    #[serde(default = "yes")]
    pub require_steady_outputs: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

impl RandomSystemSpec {
    /// `n`, `m`, `p` with unit bounds and all checks on.
    pub fn new(order: usize, inputs: usize, outputs: usize) -> Self {
        RandomSystemSpec {
            order,
            inputs,
            outputs,
            a_bound: 1.0,
            bcd_bound: 1.0,
            feedthrough: true,
            spectral_radius: None,
            require_steady_outputs: true,
            seed: None,
        }
    }
}

const MAX_SYSTEM_DRAWS: usize = 10_000;

fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        if bound > 0.0 {
            rng.gen_range(-bound..=bound)
        } else {
            0.0
        }
    })
}

fn rows_to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("matrix {name} has ragged rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl SystemSpec {
    /// Builds the system; `fallback_seed` is used when a random spec has no seed.
    pub fn build(&self, fallback_seed: u64) -> Result<LtiSystem> {
        match self {
            SystemSpec::Explicit { a, b, c, d, x0 } => {
                let a = rows_to_matrix(a, "A")?;
                let n = a.nrows();
                let x0 = x0
                    .as_ref()
                    .map(|v| DVector::from_column_slice(v))
                    .unwrap_or_else(|| DVector::zeros(n));
                LtiSystem::new(
                    a,
                    rows_to_matrix(b, "B")?,
                    rows_to_matrix(c, "C")?,
                    rows_to_matrix(d, "D")?,
                    x0,
                )
            }
            SystemSpec::Random(spec) => spec.build(fallback_seed),
        }
    }
}

impl RandomSystemSpec {
    pub fn build(&self, fallback_seed: u64) -> Result<LtiSystem> {
        let (n, m, p) = (self.order, self.inputs, self.outputs);
        if n == 0 || m == 0 || p == 0 {
            return Err(Error::Config("system dimensions must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.unwrap_or(fallback_seed));
        let b = uniform_matrix(&mut rng, n, m, self.bcd_bound);
        let c = uniform_matrix(&mut rng, p, n, self.bcd_bound);
        let d = if self.feedthrough {
            uniform_matrix(&mut rng, p, m, self.bcd_bound)
        } else {
            DMatrix::zeros(p, m)
        };
        for _ in 0..MAX_SYSTEM_DRAWS {
            let mut a = uniform_matrix(&mut rng, n, n, self.a_bound);
            if let Some(target) = self.spectral_radius {
                let rho = spectral_radius(&a);
                if rho < 1e-6 {
                    continue;
                }
                a *= target / rho;
            }
            let sys = match LtiSystem::new(a, b.clone(), c.clone(), d.clone(), DVector::zeros(n)) {
                Ok(s) => s,
                Err(Error::InvalidSystem(_)) => continue,
                Err(e) => return Err(e),
            };
            // Keep the DC gain well defined so equilibria can be assigned from inputs.
            let inv = (DMatrix::identity(n, n) - sys.a()).try_inverse();
            if !inv.is_some_and(|m| operator_norm(&m) <= 1e2) {
                continue;
            }
            if self.require_steady_outputs && !sys.every_output_is_steady()? {
                continue;
            }
            return Ok(sys);
        }
        Err(Error::InvalidSystem(format!(
            "no admissible system after {MAX_SYSTEM_DRAWS} draws (n={n}, m={m}, p={p})"
        )))
    }
}
