//! Dynamic regret against the hindsight-optimal trajectory and the
//! path-length of the cost minimizers.

use nalgebra::DVector;
use serde::Serialize;

use crate::costs::{CostSchedule, QuadraticTracking, StageCost};
use crate::error::{Error, Result};
use crate::hankel::Trajectory;
use crate::lti::{self, LtiSystem};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretReport {
    /// `L_t(u_t, y_t)` along the realized trajectory.
    pub realized_costs: Vec<f64>,
    /// `L_t(u*_t, y*_t)` along the hindsight-optimal trajectory.
    pub hindsight_costs: Vec<f64>,
    /// `R(tau)` for every `tau <= T`.
    pub cumulative_regret: Vec<f64>,
    /// Regret against the pointwise equilibrium comparator `(eta_t, theta_t)`.
    pub equilibrium_regret: f64,
    /// `Theta_T`, the path length of the output minimizers.
    pub theta_variation: f64,
    /// `N_T`, the path length of the input minimizers.
    pub eta_variation: f64,
    #[serde(skip)]
    pub hindsight: Trajectory,
}

impl RegretReport {
    /// `R(T)`.
    pub fn total(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    pub fn realized_total(&self) -> f64 {
        self.realized_costs.iter().sum()
    }

    pub fn hindsight_total(&self) -> f64 {
        self.hindsight_costs.iter().sum()
    }
}

/// Minimizers active at the horizon's time steps, including their values
/// before t = 0 when given.
fn path_lengths<C: StageCost>(
    schedule: &CostSchedule<C>,
    before_start: Option<(&DVector<f64>, &DVector<f64>)>,
) -> (f64, f64) {
    let mut theta_len = 0.0;
    let mut eta_len = 0.0;
    let mut prev: Option<(&DVector<f64>, &DVector<f64>)> = before_start;
    for (t, cost) in schedule.segments() {
        if *t > schedule.horizon() {
            break;
        }
        let cur = (cost.input_target(), cost.output_target());
        if let Some((eta, theta)) = prev {
            eta_len += (cur.0 - eta).norm();
            theta_len += (cur.1 - theta).norm();
        }
        prev = Some(cur);
    }
    (theta_len, eta_len)
}

/// `(Theta_T, N_T)` with the minimizers before t = 0 equal to those at t = 0.
pub fn variation_metrics<C: StageCost>(schedule: &CostSchedule<C>) -> (f64, f64) {
    path_lengths(schedule, None)
}

/// `(Theta_T, N_T)` including the jump from `(eta_{-1}, theta_{-1})` at t = 0.
pub fn variation_metrics_from<C: StageCost>(
    schedule: &CostSchedule<C>,
    eta_before: &DVector<f64>,
    theta_before: &DVector<f64>,
) -> (f64, f64) {
    path_lengths(schedule, Some((eta_before, theta_before)))
}

/// Regret of `realized` (over `t = 0..=T`, started from state `x0`) against
/// the optimal trajectory in hindsight.
///
/// `before_start` sets `(eta_{-1}, theta_{-1})`; the controller's convention
/// is `(v_{-1}, y^_0)`.
pub fn compute_regret(
    realized: &Trajectory,
    sys: &LtiSystem,
    schedule: &CostSchedule<QuadraticTracking>,
    x0: &DVector<f64>,
    before_start: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<RegretReport> {
    let steps = schedule.horizon() + 1;
    if realized.len() != steps {
        return Err(Error::InvalidInput(format!(
            "realized trajectory has {} samples, horizon needs {steps}",
            realized.len()
        )));
    }
    let hindsight = lti::solve_hindsight(sys, schedule, x0)?;
    let realized_costs: Vec<f64> = realized
        .inputs()
        .iter()
        .zip(realized.outputs())
        .enumerate()
        .map(|(t, (u, y))| schedule.at(t).value(u, y))
        .collect();
    let mut acc = 0.0;
    let cumulative_regret = realized_costs
        .iter()
        .zip(&hindsight.stage_costs)
        .map(|(r, h)| {
            acc += r - h;
            acc
        })
        .collect();
    let equilibrium_total: f64 = (0..steps)
        .map(|t| {
            let c = schedule.at(t);
            c.value(&c.eta, &c.theta)
        })
        .sum();
    let (theta_variation, eta_variation) = path_lengths(schedule, before_start);
    Ok(RegretReport {
        equilibrium_regret: realized_costs.iter().sum::<f64>() - equilibrium_total,
        realized_costs,
        hindsight_costs: hindsight.stage_costs,
        cumulative_regret,
        theta_variation,
        eta_variation,
        hindsight: hindsight.trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::quadratic_tracking;
    use nalgebra::dmatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn constant_schedule_has_no_variation() {
        let s = CostSchedule::constant(quadratic_tracking(v(&[1.0]), v(&[2.0])).unwrap(), 50);
        assert_eq!(variation_metrics(&s), (0.0, 0.0));
    }

    #[test]
    fn single_switch_variation() {
        let a = quadratic_tracking(v(&[0.0, 0.0]), v(&[1.0])).unwrap();
        let b = quadratic_tracking(v(&[3.0, 4.0]), v(&[-1.0])).unwrap();
        let s = CostSchedule::new(vec![(0, a), (10, b)], 20).unwrap();
        assert_eq!(variation_metrics(&s), (2.0, 5.0));
        // Switches beyond the horizon do not count.
        assert_eq!(variation_metrics(&s.with_horizon(5)), (0.0, 0.0));
        let (th, et) = variation_metrics_from(&s, &v(&[0.0, 0.0]), &v(&[0.0]));
        assert_eq!((th, et), (3.0, 5.0));
    }

    #[test]
    fn hindsight_trajectory_has_zero_regret() {
        let sys = LtiSystem::new(dmatrix![0.8], dmatrix![1.0], dmatrix![1.0], dmatrix![0.2], v(&[0.5]))
            .unwrap();
        let s = CostSchedule::new(
            vec![
                (0, quadratic_tracking(v(&[1.0]), v(&[6.0])).unwrap()),
                (3, quadratic_tracking(v(&[-1.0]), v(&[-6.0])).unwrap()),
            ],
            6,
        )
        .unwrap();
        let x0 = v(&[0.5]);
        let opt = lti::solve_hindsight(&sys, &s, &x0).unwrap();
        let report = compute_regret(&opt.trajectory, &sys, &s, &x0, None).unwrap();
        assert!(report.total().abs() < 1e-12);
        assert!(compute_regret(&opt.trajectory, &sys, &s.with_horizon(3), &x0, None).is_err());
    }
}
