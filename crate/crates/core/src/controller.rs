//! Data-driven output-feedback OCO controller.
//!
//! Everything that depends only on the recorded data is computed once in
//! [`DataMatrices::precompute`]. The online step ([`Controller::advance`])
//! then costs two gradient evaluations plus matrix-vector products.
//!
//! Notation used below: `n` is the order bound, `mu` the prediction horizon,
//! `mu~ = n + mu + 1`, and the Hankel depth is `L = 2n + mu + 1`. Block rows
//! are 1-based. A coefficient vector `c` describes the length-`L` trajectory
//! `[U; Y] c`: blocks `1..=n` are the past window, block `n + 1` is "now",
//! block `mu~` is `mu` steps ahead, blocks `mu~..=L` are the terminal
//! equilibrium segment.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::costs::{ogd_step, StageCost};
use crate::equilibria::{self, SteadyMaps, EQUILIBRIUM_TOLERANCE, STEADY_RANK_CUTOFF};
use crate::error::{Error, Result};
use crate::hankel::{self, HankelBlock, Trajectory};
use crate::numerics::{self, repeat_block, RankTolerance, DEFAULT_FEASIBILITY};

/// Weight matrix `Q` in `min ||Q beta||`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightSpec {
    /// `[w U^{n+1:n+mu}; w Y^{n+1:n+mu}; I]`: penalizes the transient part of
    /// the correction, with identity regularization.
    Transient { penalty: f64 },
    /// `Q = I`, the minimum-norm correction.
    Identity,
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Transient { penalty: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Cutoff for the pseudoinverses of the prediction and correction matrices.
    pub rank: RankTolerance,
    /// Cutoff for the steady-state maps.
    pub steady_rank: RankTolerance,
    /// Relative residual allowed on the consistency of the linear constraints.
    pub feasibility: f64,
    /// Relative residual allowed on the steady-state test.
    pub equilibrium: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank: RankTolerance::auto(),
            steady_rank: RankTolerance::relative(STEADY_RANK_CUTOFF).expect("positive cutoff"),
            feasibility: DEFAULT_FEASIBILITY,
            equilibrium: EQUILIBRIUM_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Step size of the input gradient step.
    pub step_input: f64,
    /// Step size of the output gradient step.
    pub step_output: f64,
    /// Upper bound on the system order.
    pub order_bound: usize,
    /// Prediction horizon; defaults to the order bound.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub weight: WeightSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Initial input estimate `v_0`; zero when absent.
    #[serde(default)]
    pub initial_input: Option<Vec<f64>>,
}

impl ControllerConfig {
    pub fn new(order_bound: usize, horizon: usize, step: f64) -> Self {
        ControllerConfig {
            step_input: step,
            step_output: step,
            order_bound,
            horizon: Some(horizon),
            weight: WeightSpec::default(),
            tolerances: Tolerances::default(),
            initial_input: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(self.order_bound)
    }

    pub fn validate(&self) -> Result<()> {
        let steps_ok = [self.step_input, self.step_output]
            .iter()
            .all(|g| g.is_finite() && *g > 0.0);
        if !steps_ok {
            return Err(Error::Config("step sizes must be positive".into()));
        }
        if self.order_bound == 0 || self.horizon() == 0 {
            return Err(Error::Config("order bound and horizon must be at least 1".into()));
        }
        if let WeightSpec::Transient { penalty } = self.weight {
            if !(penalty.is_finite() && penalty >= 0.0) {
                return Err(Error::Config("transient penalty must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// Minimum data length for persistency of excitation of order `3n + mu + 1`.
    pub fn min_data_len(&self, inputs: usize) -> usize {
        (inputs + 1) * self.pe_order() - 1
    }

    pub fn pe_order(&self) -> usize {
        3 * self.order_bound + self.horizon() + 1
    }
}

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub inputs: usize,
    pub outputs: usize,
    pub order: usize,
    pub horizon: usize,
}

impl Dims {
    /// `mu~ = n + mu + 1`
    pub fn tail_start(&self) -> usize {
        self.order + self.horizon + 1
    }
    pub fn depth(&self) -> usize {
        2 * self.order + self.horizon + 1
    }
    pub fn plan_len(&self) -> usize {
        self.inputs * (self.horizon + 1)
    }
}

/// All data-dependent matrices, computed offline.
#[derive(Debug, Clone)]
pub struct DataMatrices {
    dims: Dims,
    u_hankel: HankelBlock,
    y_hankel: HankelBlock,
    h_alpha: DMatrix<f64>,
    h_alpha_pinv: DMatrix<f64>,
    omega_map: DMatrix<f64>,
    h_beta: DMatrix<f64>,
    beta_map: DMatrix<f64>,
    weight: DMatrix<f64>,
    /// `Y^{mu~}`
    y_predict: DMatrix<f64>,
    /// `U^{mu~:mu~+n}`
    u_terminal: DMatrix<f64>,
    /// `Y^{mu~:mu~+n-1}`
    y_terminal: DMatrix<f64>,
    /// `U^{n+1:n+mu+1}`
    u_plan: DMatrix<f64>,
    steady: SteadyMaps,
}

impl DataMatrices {
    pub fn precompute(data: &Trajectory, config: &ControllerConfig) -> Result<Self> {
        config.validate()?;
        let dims = Dims {
            inputs: data.input_dim(),
            outputs: data.output_dim(),
            order: config.order_bound,
            horizon: config.horizon(),
        };
        let needed = config.min_data_len(dims.inputs);
        if data.len() < needed {
            return Err(Error::DataTooShort {
                needed,
                got: data.len(),
            });
        }
        let pe_order = config.pe_order();
        if !hankel::is_persistently_exciting(data.inputs(), pe_order, RankTolerance::auto())? {
            return Err(Error::InsufficientExcitation { order: pe_order });
        }

        let (n, mu) = (dims.order, dims.horizon);
        let tail = dims.tail_start();
        let depth = dims.depth();
        let u_hankel = hankel::build_hankel(data.inputs(), depth)?;
        let y_hankel = hankel::build_hankel(data.outputs(), depth)?;
        let cols = u_hankel.ncols();

        let u_past = u_hankel.block_rows(1, n)?;
        let y_past = y_hankel.block_rows(1, n)?;
        let u_future = u_hankel.block_rows(n + 1, depth)?;
        let u_terminal = u_hankel.block_rows(tail, depth)?;
        let y_terminal = y_hankel.block_rows(tail, tail + n - 1)?;

        let h_alpha = numerics::vstack(&[&u_past, &u_future, &y_past]);
        let h_beta = numerics::vstack(&[&u_past, &u_terminal, &y_past, &y_terminal]);
        let tol = config.tolerances;

        let h_alpha_pinv = numerics::pseudoinverse(&h_alpha, tol.rank)?;
        // rhs of the omega equation is E v with E = [0; 1 ⊗ I_m; 0]
        let (m, p) = (dims.inputs, dims.outputs);
        let mut selector = DMatrix::zeros(h_alpha.nrows(), m);
        selector
            .view_mut((m * n, 0), (m * tail, m))
            .copy_from(&numerics::stacked_identity(tail, m));
        let omega_map = &h_alpha_pinv * selector;

        let weight = match config.weight {
            WeightSpec::Transient { penalty } => numerics::vstack(&[
                &(u_hankel.block_rows(n + 1, n + mu)? * penalty),
                &(y_hankel.block_rows(n + 1, n + mu)? * penalty),
                &DMatrix::identity(cols, cols),
            ]),
            WeightSpec::Identity => DMatrix::identity(cols, cols),
        };
        let beta_map = numerics::weighted_min_norm_operator(&h_beta, &weight, tol.rank)?;
        let steady = equilibria::compute_steady_maps(data, n, tol.steady_rank)?;
        debug_assert_eq!(h_alpha.nrows(), m * n + m * tail + p * n);

        Ok(DataMatrices {
            dims,
            y_predict: y_hankel.block_row(tail)?,
            u_plan: u_hankel.block_rows(n + 1, tail)?,
            u_hankel,
            y_hankel,
            h_alpha,
            h_alpha_pinv,
            omega_map,
            h_beta,
            beta_map,
            weight,
            u_terminal,
            y_terminal,
            steady,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn column_count(&self) -> usize {
        self.u_hankel.ncols()
    }
    pub fn u_hankel(&self) -> &HankelBlock {
        &self.u_hankel
    }
    pub fn y_hankel(&self) -> &HankelBlock {
        &self.y_hankel
    }
    pub fn h_alpha(&self) -> &DMatrix<f64> {
        &self.h_alpha
    }
    pub fn h_alpha_pinv(&self) -> &DMatrix<f64> {
        &self.h_alpha_pinv
    }
    pub fn omega_map(&self) -> &DMatrix<f64> {
        &self.omega_map
    }
    pub fn h_beta(&self) -> &DMatrix<f64> {
        &self.h_beta
    }
    pub fn beta_map(&self) -> &DMatrix<f64> {
        &self.beta_map
    }
    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }
    pub fn steady_maps(&self) -> &SteadyMaps {
        &self.steady
    }

    /// Right-hand side `[0; 1 ⊗ v; 0]` of the omega equation.
    pub fn omega_rhs(&self, v: &DVector<f64>) -> DVector<f64> {
        let Dims { inputs: m, outputs: p, order: n, .. } = self.dims;
        numerics::vconcat(&[
            &DVector::zeros(m * n),
            &repeat_block(v, self.dims.tail_start()),
            &DVector::zeros(p * n),
        ])
    }

    /// Coefficients reproducing a zero past window followed by `v` held for `mu~` steps.
    pub fn compute_omega(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.omega_map * v
    }

    /// Right-hand side of the alpha equation for the given state.
    pub fn alpha_rhs(&self, state: &ControllerState) -> DVector<f64> {
        let n = self.dims.order;
        let m = self.dims.inputs;
        let shifted = state.plan.rows(m, state.plan.len() - m).into_owned();
        let offset = repeat_block(&(&state.us_prev - &state.v_prev), n + 1);
        numerics::vconcat(&[
            &stack_window(&state.u_window),
            &shifted,
            &offset,
            &stack_window(&state.y_window),
        ])
    }

    /// Coefficients continuing the measured window with the shifted plan.
    pub fn compute_alpha(&self, state: &ControllerState, feasibility: f64) -> Result<DVector<f64>> {
        let rhs = self.alpha_rhs(state);
        let alpha = &self.h_alpha_pinv * &rhs;
        let residual = (&self.h_alpha * &alpha - &rhs).norm();
        if residual > feasibility * (1.0 + rhs.norm()) {
            return Err(Error::InconsistentWindow { residual });
        }
        Ok(alpha)
    }

    /// `mu`-step-ahead output prediction `Y^{mu~} (alpha + omega)`.
    pub fn predict_output(&self, alpha: &DVector<f64>, omega: &DVector<f64>) -> DVector<f64> {
        &self.y_predict * (alpha + omega)
    }

    /// Steady-state input for `y_s` closest to `v`.
    pub fn steady_input(&self, v: &DVector<f64>, y_s: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
        equilibria::nearest_steady_input(&self.steady, v, y_s, tol)
    }

    /// Terminal mismatch `g` of the combined trajectory `alpha + omega`.
    pub fn beta_rhs(
        &self,
        combined: &DVector<f64>,
        u_s: &DVector<f64>,
        y_s: &DVector<f64>,
    ) -> DVector<f64> {
        let Dims { inputs: m, outputs: p, order: n, .. } = self.dims;
        numerics::vconcat(&[
            &DVector::zeros(m * n),
            &(repeat_block(u_s, n + 1) - &self.u_terminal * combined),
            &DVector::zeros(p * n),
            &(repeat_block(y_s, n) - &self.y_terminal * combined),
        ])
    }

    /// Weighted minimum-norm correction steering the prediction to `(u_s, y_s)`.
    pub fn compute_beta(
        &self,
        alpha: &DVector<f64>,
        omega: &DVector<f64>,
        u_s: &DVector<f64>,
        y_s: &DVector<f64>,
        feasibility: f64,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let g = self.beta_rhs(&(alpha + omega), u_s, y_s);
        let beta = &self.beta_map * &g;
        let residual = (&self.h_beta * &beta - &g).norm();
        if residual > feasibility * (1.0 + g.norm()) {
            return Err(Error::Infeasible { residual });
        }
        Ok((beta, g))
    }

    /// Input blocks `n+1..=mu~` of `[U] c`.
    pub fn planned_inputs(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.u_plan * coeffs
    }

    /// Output blocks `a..=b` of `[Y] c`.
    pub fn output_blocks(&self, coeffs: &DVector<f64>, a: usize, b: usize) -> Result<DVector<f64>> {
        Ok(self.y_hankel.block_rows(a, b)? * coeffs)
    }

    /// Input blocks `a..=b` of `[U] c`.
    pub fn input_blocks(&self, coeffs: &DVector<f64>, a: usize, b: usize) -> Result<DVector<f64>> {
        Ok(self.u_hankel.block_rows(a, b)? * coeffs)
    }
}

fn stack_window(window: &VecDeque<DVector<f64>>) -> DVector<f64> {
    let refs: Vec<_> = window.iter().collect();
    numerics::vconcat(&refs)
}

/// The evolving quantities of the online loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    t: usize,
    /// `v_{t-1}`
    v_prev: DVector<f64>,
    /// `u^_{t-1}`, the planned input offsets over `mu + 1` steps.
    plan: DVector<f64>,
    /// `u^s_{t-1}`
    us_prev: DVector<f64>,
    u_window: VecDeque<DVector<f64>>,
    y_window: VecDeque<DVector<f64>>,
    /// Input applied at `t - 1` whose output has not been recorded yet.
    pending_input: Option<DVector<f64>>,
}

impl ControllerState {
    /// Initial state from a warm-up segment whose last `n` samples fill the window.
    pub fn new(dims: Dims, v0: DVector<f64>, warmup: &Trajectory) -> Result<Self> {
        let n = dims.order;
        if warmup.len() < n {
            return Err(Error::InvalidInput(format!(
                "warm-up has {} samples, need at least {n}",
                warmup.len()
            )));
        }
        if warmup.input_dim() != dims.inputs
            || warmup.output_dim() != dims.outputs
            || v0.len() != dims.inputs
        {
            return Err(Error::InvalidInput("warm-up or v0 has wrong dimension".into()));
        }
        let skip = warmup.len() - n;
        Ok(ControllerState {
            t: 0,
            plan: DVector::zeros(dims.plan_len()),
            us_prev: v0.clone(),
            v_prev: v0,
            u_window: warmup.inputs()[skip..].iter().cloned().collect(),
            y_window: warmup.outputs()[skip..].iter().cloned().collect(),
            pending_input: None,
        })
    }

    pub fn time(&self) -> usize {
        self.t
    }
    pub fn input_estimate(&self) -> &DVector<f64> {
        &self.v_prev
    }
    pub fn plan(&self) -> &DVector<f64> {
        &self.plan
    }
    pub fn steady_input(&self) -> &DVector<f64> {
        &self.us_prev
    }
    pub fn input_window(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.u_window.iter()
    }
    pub fn output_window(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.y_window.iter()
    }

    fn record(&mut self, y: &DVector<f64>) -> Result<()> {
        let u = self
            .pending_input
            .take()
            .ok_or_else(|| Error::InvalidInput("no input awaiting a measurement".into()))?;
        if y.len() != self.y_window.front().map_or(y.len(), |w| w.len()) {
            return Err(Error::InvalidInput("measurement has wrong dimension".into()));
        }
        if !self.u_window.is_empty() {
            self.u_window.pop_front();
            self.y_window.pop_front();
            self.u_window.push_back(u);
            self.y_window.push_back(y.clone());
        }
        Ok(())
    }
}

/// Everything computed during one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub t: usize,
    pub v: DVector<f64>,
    pub omega: DVector<f64>,
    pub alpha: DVector<f64>,
    pub y_hat: DVector<f64>,
    pub y_s: DVector<f64>,
    pub u_s: DVector<f64>,
    pub g: DVector<f64>,
    pub beta: DVector<f64>,
    pub plan: DVector<f64>,
    pub input: DVector<f64>,
}

impl StepDiagnostics {
    /// `alpha + beta + omega`, the coefficients of the full planned trajectory.
    pub fn combined(&self) -> DVector<f64> {
        &self.alpha + &self.beta + &self.omega
    }
}

/// The online controller: shared offline matrices plus its own state.
#[derive(Debug, Clone)]
pub struct Controller {
    matrices: Arc<DataMatrices>,
    state: ControllerState,
    step_input: f64,
    step_output: f64,
    tolerances: Tolerances,
}

impl Controller {
    pub fn new(matrices: Arc<DataMatrices>, config: &ControllerConfig, warmup: &Trajectory) -> Result<Self> {
        config.validate()?;
        let dims = matrices.dims();
        if dims.order != config.order_bound || dims.horizon != config.horizon() {
            return Err(Error::Config("config does not match the precomputed matrices".into()));
        }
        let v0 = match &config.initial_input {
            Some(v) => DVector::from_column_slice(v),
            None => DVector::zeros(dims.inputs),
        };
        let state = ControllerState::new(dims, v0, warmup)?;
        Ok(Controller {
            matrices,
            state,
            step_input: config.step_input,
            step_output: config.step_output,
            tolerances: config.tolerances,
        })
    }

    pub fn matrices(&self) -> &DataMatrices {
        &self.matrices
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    /// One step at time `t`.
    ///
    /// `prev_cost` is `L_{t-1}` (absent at `t = 0`, where the gradients are
    /// taken as zero) and `y_prev` the measurement `y_{t-1}` that follows the
    /// previously returned input. Returns the input `u_t` to apply.
    pub fn advance(
        &mut self,
        prev_cost: Option<&dyn StageCost>,
        y_prev: Option<&DVector<f64>>,
    ) -> Result<(DVector<f64>, StepDiagnostics)> {
        let t = self.state.t;
        self.advance_inner(prev_cost, y_prev)
            .map_err(|e| e.at_step(t))
    }

    fn advance_inner(
        &mut self,
        prev_cost: Option<&dyn StageCost>,
        y_prev: Option<&DVector<f64>>,
    ) -> Result<(DVector<f64>, StepDiagnostics)> {
        let mats = &*self.matrices;
        let tol = self.tolerances;
        let m = mats.dims.inputs;
        match (self.state.pending_input.is_some(), y_prev) {
            (true, Some(y)) => self.state.record(y)?,
            (false, None) => {}
            (true, None) => {
                return Err(Error::InvalidInput("missing measurement of the previous output".into()))
            }
            (false, Some(_)) => {
                return Err(Error::InvalidInput("measurement given before any input was applied".into()))
            }
        }
        if let Some(cost) = prev_cost {
            let c = cost.curvature();
            if self.step_input > c.max_step_u() || self.step_output > c.max_step_y() {
                log::warn!(
                    "step sizes ({}, {}) exceed the contraction bounds ({}, {})",
                    self.step_input,
                    self.step_output,
                    c.max_step_u(),
                    c.max_step_y()
                );
            }
        }

        let state = &self.state;
        let v = match prev_cost {
            Some(cost) => ogd_step(&state.v_prev, &cost.grad_u(&state.v_prev), self.step_input)?,
            None => state.v_prev.clone(),
        };
        let omega = mats.compute_omega(&v);
        let alpha = mats.compute_alpha(state, tol.feasibility)?;
        let y_hat = mats.predict_output(&alpha, &omega);
        let y_s = match prev_cost {
            Some(cost) => ogd_step(&y_hat, &cost.grad_y(&y_hat), self.step_output)?,
            None => y_hat.clone(),
        };
        let u_s = mats.steady_input(&v, &y_s, tol.equilibrium)?;
        let (beta, g) = mats.compute_beta(&alpha, &omega, &u_s, &y_s, tol.feasibility)?;

        let shifted = state.plan.rows(m, state.plan.len() - m).into_owned();
        let carried = numerics::vconcat(&[&shifted, &(&state.us_prev - &state.v_prev)]);
        let plan = carried + mats.planned_inputs(&beta);
        let input = plan.rows(0, m) + &v;

        let diag = StepDiagnostics {
            t: state.t,
            v: v.clone(),
            omega,
            alpha,
            y_hat,
            y_s,
            u_s: u_s.clone(),
            g,
            beta,
            plan: plan.clone(),
            input: input.clone(),
        };
        let state = &mut self.state;
        state.v_prev = v;
        state.plan = plan;
        state.us_prev = u_s;
        state.pending_input = Some(input.clone());
        state.t += 1;
        Ok((input, diag))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = ControllerConfig::new(5, 5, 0.75);
        assert!(c.validate().is_ok());
        assert_eq!(c.min_data_len(2), 62);
        c.step_input = 0.0;
        assert!(c.validate().is_err());
        let mut c = ControllerConfig::new(5, 5, 0.75);
        c.horizon = Some(0);
        assert!(c.validate().is_err());
        let mut c = ControllerConfig::new(3, 1, 0.5);
        c.horizon = None;
        assert_eq!(c.horizon(), 3);
    }

    #[test]
    fn dims_arithmetic() {
        let d = Dims {
            inputs: 2,
            outputs: 1,
            order: 5,
            horizon: 5,
        };
        assert_eq!(d.tail_start(), 11);
        assert_eq!(d.depth(), 16);
        assert_eq!(d.plan_len(), 12);
    }

    #[test]
    fn short_data_is_rejected() {
        let data = Trajectory::new(
            vec![DVector::from_element(2, 1.0); 40],
            vec![DVector::from_element(1, 1.0); 40],
        )
        .unwrap();
        let err = DataMatrices::precompute(&data, &ControllerConfig::new(5, 5, 0.75)).unwrap_err();
        assert_eq!(err, Error::DataTooShort { needed: 62, got: 40 });
    }

    #[test]
    fn constant_data_is_not_exciting() {
        let data = Trajectory::new(
            vec![DVector::from_element(1, 1.0); 30],
            vec![DVector::from_element(1, 1.0); 30],
        )
        .unwrap();
        let err = DataMatrices::precompute(&data, &ControllerConfig::new(1, 1, 0.5)).unwrap_err();
        assert_eq!(err, Error::InsufficientExcitation { order: 5 });
    }
}
