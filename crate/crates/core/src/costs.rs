//! Separable time-varying stage costs `L_t(u, y) = f_t^u(u) + f_t^y(y)` and the
//! gradient step both halves of the controller use.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strong convexity and smoothness constants of the two cost halves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureParams {
    pub convexity_u: f64,
    pub convexity_y: f64,
    pub smoothness_u: f64,
    pub smoothness_y: f64,
}

impl CurvatureParams {
    /// Largest step that still gives the gradient-descent contraction on the input cost.
    pub fn max_step_u(&self) -> f64 {
        2.0 / (self.smoothness_u + self.convexity_u)
    }

    pub fn max_step_y(&self) -> f64 {
        2.0 / (self.smoothness_y + self.convexity_y)
    }
}

/// A stage cost with gradient access. Implementors must be strongly convex and
/// smooth in each argument, with minimizers that form an equilibrium of the plant.
pub trait StageCost {
    fn value_u(&self, u: &DVector<f64>) -> f64;
    fn value_y(&self, y: &DVector<f64>) -> f64;
    fn grad_u(&self, u: &DVector<f64>) -> DVector<f64>;
    fn grad_y(&self, y: &DVector<f64>) -> DVector<f64>;
    fn curvature(&self) -> CurvatureParams;
    /// `eta_t`, the minimizer of the input cost.
    fn input_target(&self) -> &DVector<f64>;
    /// `theta_t`, the minimizer of the output cost.
    fn output_target(&self) -> &DVector<f64>;

    fn value(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.value_u(u) + self.value_y(y)
    }
}

/// `1/2 ||u - eta||^2 + 1/2 ||y - theta||^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTracking {
    pub eta: DVector<f64>,
    pub theta: DVector<f64>,
}

/// Builds the quadratic tracking cost with minimizers `(eta, theta)`.
pub fn quadratic_tracking(eta: DVector<f64>, theta: DVector<f64>) -> Result<QuadraticTracking> {
    if !eta.iter().chain(theta.iter()).all(|x| x.is_finite()) {
        return Err(Error::InvalidInput("cost targets must be finite".into()));
    }
    Ok(QuadraticTracking { eta, theta })
}

impl QuadraticTracking {
    /// Sup of the gradient norms over the box `[-radius, radius]^d` around the
    /// origin, i.e. the Lipschitz constants `(L_u, L_y)` on that operating set.
    pub fn lipschitz_on_box(&self, radius: f64) -> (f64, f64) {
        let far = |c: &DVector<f64>| c.map(|x| x.abs() + radius).norm();
        (far(&self.eta), far(&self.theta))
    }
}

impl StageCost for QuadraticTracking {
    fn value_u(&self, u: &DVector<f64>) -> f64 {
        0.5 * (u - &self.eta).norm_squared()
    }

    fn value_y(&self, y: &DVector<f64>) -> f64 {
        0.5 * (y - &self.theta).norm_squared()
    }

    fn grad_u(&self, u: &DVector<f64>) -> DVector<f64> {
        u - &self.eta
    }

    fn grad_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y - &self.theta
    }

    fn curvature(&self) -> CurvatureParams {
        CurvatureParams {
            convexity_u: 1.0,
            convexity_y: 1.0,
            smoothness_u: 1.0,
            smoothness_y: 1.0,
        }
    }

    fn input_target(&self) -> &DVector<f64> {
        &self.eta
    }

    fn output_target(&self) -> &DVector<f64> {
        &self.theta
    }
}

/// One gradient step `z - step * grad`.
pub fn ogd_step(z: &DVector<f64>, grad: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
    if z.len() != grad.len() {
        return Err(Error::InvalidInput(format!(
            "point has length {}, gradient has length {}",
            z.len(),
            grad.len()
        )));
    }
    Ok(z - grad * step)
}

/// Piecewise-constant cost sequence over `t = 0..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSchedule<C = QuadraticTracking> {
    segments: Vec<(usize, C)>,
    horizon: usize,
}

impl<C: StageCost> CostSchedule<C> {
    /// `segments` are `(activation time, cost)` pairs; times must be strictly
    /// increasing and start at 0.
    pub fn new(segments: Vec<(usize, C)>, horizon: usize) -> Result<Self> {
        match segments.first() {
            None => return Err(Error::InvalidInput("empty cost schedule".into())),
            Some((t0, _)) if *t0 != 0 => {
                return Err(Error::InvalidInput("first cost must activate at t = 0".into()))
            }
            _ => {}
        }
        if segments.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidInput(
                "activation times must be strictly increasing".into(),
            ));
        }
        Ok(CostSchedule { segments, horizon })
    }

    pub fn constant(cost: C, horizon: usize) -> Self {
        CostSchedule {
            segments: vec![(0, cost)],
            horizon,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn segments(&self) -> &[(usize, C)] {
        &self.segments
    }

    /// Activation times after t = 0.
    pub fn switch_times(&self) -> impl Iterator<Item = usize> + '_ {
        self.segments.iter().skip(1).map(|(t, _)| *t)
    }

    /// The cost active at time `t`.
    pub fn at(&self, t: usize) -> &C {
        let idx = self.segments.partition_point(|(s, _)| *s <= t);
        &self.segments[idx - 1].1
    }

    /// Same schedule with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Self
    where
        C: Clone,
    {
        CostSchedule {
            segments: self.segments.clone(),
            horizon,
        }
    }

    /// Checks every segment's minimizers against an equilibrium residual
    /// function; rejects the schedule if any residual exceeds the tolerance.
    pub fn validate_equilibria<F>(&self, mut residual: F, tol: f64) -> Result<()>
    where
        F: FnMut(&DVector<f64>, &DVector<f64>) -> Result<f64>,
    {
        for (t, cost) in &self.segments {
            let (eta, theta) = (cost.input_target(), cost.output_target());
            let r = residual(eta, theta)?;
            let scale = 1.0 + (eta.norm_squared() + theta.norm_squared()).sqrt();
            if r > tol * scale {
                return Err(Error::InvalidInput(format!(
                    "cost minimizers active at t = {t} are not an equilibrium (residual {r:.3e})"
                )));
            }
        }
        Ok(())
    }
}
