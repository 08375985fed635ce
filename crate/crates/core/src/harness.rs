//! Experiment runner: data generation, noise injection, the closed loop with
//! its cost-revelation protocol, regret post-processing and CSV output.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, ControllerConfig, DataMatrices, StepDiagnostics, Tolerances};
use crate::costs::{quadratic_tracking, CostSchedule, StageCost};
use crate::error::{Error, Result};
use crate::hankel::{self, Trajectory};
use crate::lti::{LtiSystem, RandomSystemSpec, SystemSpec};
use crate::numerics::RankTolerance;
use crate::regret::{self, RegretReport};

const STREAM_DATA: u64 = 1;
const STREAM_DATA_NOISE: u64 = 2;
const STREAM_MEASUREMENT_NOISE: u64 = 3;
const STREAM_SCHEDULE: u64 = 4;

/// Data noise bound of the noisy-data case.
pub const DATA_NOISE_BOUND: f64 = 1e-5;
/// Measurement noise bound of the noisy-measurement case.
pub const MEASUREMENT_NOISE_BOUND: f64 = 1e-2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    /// Stabilize the plant during data collection only if it is unstable.
    #[default]
    Auto,
    Never,
    Always,
}

/// How the offline data trajectory is recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    pub length: usize,
    /// Excitation samples are uniform on `[-input_bound, input_bound]^m`.
    pub input_bound: f64,
    /// With feedback the applied input is `K x + w`, `K` an LQR gain of the
    /// true model and `w` the excitation; this keeps data from unstable
    /// plants bounded.
    pub feedback: FeedbackMode,
    pub max_attempts: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            length: 100,
            input_bound: 1.0,
            feedback: FeedbackMode::Auto,
            max_attempts: 20,
        }
    }
}

/// When the cost minimizers switch and how they are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSpec {
    /// Number of switches after t = 0.
    pub switches: usize,
    /// Fixed spacing between switches; evenly spread over the horizon when absent.
    pub switch_interval: Option<usize>,
    /// Explicit switch times; overrides `switches` and `switch_interval`.
    pub switch_times: Option<Vec<usize>>,
    /// `eta` entries are uniform on `[-eta_bound, eta_bound]`.
    pub eta_bound: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            switches: 5,
            switch_interval: None,
            switch_times: None,
            eta_bound: 1.0,
        }
    }
}

impl ScheduleSpec {
    pub fn times(&self, horizon: usize) -> Vec<usize> {
        let mut times = vec![0];
        if let Some(explicit) = &self.switch_times {
            times.extend(explicit.iter().copied().filter(|&t| t > 0));
        } else {
            let interval = self
                .switch_interval
                .unwrap_or_else(|| ((horizon + 1) / (self.switches + 1)).max(1));
            times.extend((1..=self.switches).map(|k| k * interval));
        }
        times.sort_unstable();
        times.dedup();
        times
    }

    /// Draws `eta` per segment and sets `theta` so `(eta, theta)` is an
    /// equilibrium of `sys`.
    pub fn build(&self, sys: &LtiSystem, horizon: usize, seed: u64) -> Result<CostSchedule> {
        let gain = sys.steady_state_gain()?;
        let mut rng = rng_for(seed, STREAM_SCHEDULE);
        let m = sys.input_dim();
        let segments = self
            .times(horizon)
            .into_iter()
            .map(|t| {
                let eta = DVector::from_fn(m, |_, _| uniform(&mut rng, self.eta_bound));
                let theta = &gain * &eta;
                Ok((t, quadratic_tracking(eta, theta)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let schedule = CostSchedule::new(segments, horizon)?;
        schedule.validate_equilibria(|u, y| sys.equilibrium_residual(u, y), 1e-9)?;
        Ok(schedule)
    }
}

fn uniform<R: Rng>(rng: &mut R, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.gen_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Which signals are corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "kebab-case")]
pub enum NoiseCase {
    #[default]
    Noiseless,
    /// Additive noise on the recorded output data.
    Data { data_bound: f64 },
    /// Noise on the recorded output data and on every online measurement.
    DataAndMeasurement {
        data_bound: f64,
        measurement_bound: f64,
    },
}

impl NoiseCase {
    /// Case 1, 2 or 3 with the reference noise bounds.
    pub fn from_case_number(case: u8) -> Result<Self> {
        match case {
            1 => Ok(NoiseCase::Noiseless),
            2 => Ok(NoiseCase::Data {
                data_bound: DATA_NOISE_BOUND,
            }),
            3 => Ok(NoiseCase::DataAndMeasurement {
                data_bound: DATA_NOISE_BOUND,
                measurement_bound: MEASUREMENT_NOISE_BOUND,
            }),
            other => Err(Error::Config(format!("noise case must be 1, 2 or 3, got {other}"))),
        }
    }

    pub fn case_number(&self) -> u8 {
        match self {
            NoiseCase::Noiseless => 1,
            NoiseCase::Data { .. } => 2,
            NoiseCase::DataAndMeasurement { .. } => 3,
        }
    }

    pub fn data_bound(&self) -> f64 {
        match *self {
            NoiseCase::Noiseless => 0.0,
            NoiseCase::Data { data_bound } | NoiseCase::DataAndMeasurement { data_bound, .. } => {
                data_bound
            }
        }
    }

    pub fn measurement_bound(&self) -> f64 {
        match *self {
            NoiseCase::DataAndMeasurement {
                measurement_bound, ..
            } => measurement_bound,
            _ => 0.0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.data_bound() == 0.0 && self.measurement_bound() == 0.0
    }
}

/// Tolerances used whenever noise is present: looser rank cutoffs drop the
/// noise floor of the Hankel matrices, and the consistency checks only guard
/// against gross failures.
pub fn noisy_tolerances() -> Tolerances {
    Tolerances {
        rank: RankTolerance::auto(),
        steady_rank: RankTolerance::relative(1e-4).expect("positive cutoff"),
        feasibility: 1e-1,
        equilibrium: 1e-1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub horizon: usize,
    pub system: SystemSpec,
    #[serde(default)]
    pub data: DataSpec,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub noise: NoiseCase,
    /// Replaces `controller.tolerances` when noise is present.
    #[serde(default)]
    pub noisy_tolerances: Option<Tolerances>,
    /// Plant state before warm-up; zero when absent.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    /// Warm-up length; the order bound when absent.
    #[serde(default)]
    pub warmup: Option<usize>,
    /// Where the CLI writes its files when `--out` is not given.
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    /// Random 5-state, 2-input, 1-output plant with `A` uniform on `[-1, 1]`,
    /// 100 data samples, step sizes 0.75, horizon 5.
    pub fn reference(seed: u64, horizon: usize) -> Self {
        ExperimentConfig {
            seed,
            horizon,
            system: SystemSpec::Random(RandomSystemSpec::new(5, 2, 1)),
            data: DataSpec::default(),
            controller: ControllerConfig::new(5, 5, 0.75),
            schedule: ScheduleSpec::default(),
            noise: NoiseCase::Noiseless,
            noisy_tolerances: None,
            initial_state: None,
            warmup: None,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.controller.validate()?;
        if self.data.input_bound < 0.0 || self.schedule.eta_bound < 0.0 {
            return Err(Error::Config("bounds must be nonnegative".into()));
        }
        if self.noise.data_bound() < 0.0 || self.noise.measurement_bound() < 0.0 {
            return Err(Error::Config("noise bounds must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The controller configuration actually used for the current noise case.
    pub fn effective_controller(&self) -> ControllerConfig {
        let mut c = self.controller.clone();
        if !self.noise.is_noiseless() {
            c.tolerances = self.noisy_tolerances.unwrap_or_else(noisy_tolerances);
        }
        c
    }
}

/// Records a data trajectory of `spec.length` samples from `sys` (started at
/// zero state) whose input is persistently exciting of order `pe_order`.
pub fn generate_data(sys: &LtiSystem, spec: &DataSpec, pe_order: usize, seed: u64) -> Result<Trajectory> {
    let mut rng = rng_for(seed, STREAM_DATA);
    let m = sys.input_dim();
    let use_feedback = match spec.feedback {
        FeedbackMode::Always => true,
        FeedbackMode::Never => false,
        FeedbackMode::Auto => sys.spectral_radius() >= 1.0,
    };
    let gain = if use_feedback {
        Some(sys.stabilizing_gain()?)
    } else {
        None
    };
    for _ in 0..spec.max_attempts.max(1) {
        let excitation: Vec<_> = (0..spec.length)
            .map(|_| DVector::from_fn(m, |_, _| uniform(&mut rng, spec.input_bound)))
            .collect();
        let mut plant = sys.clone();
        plant.set_state(DVector::zeros(sys.order()))?;
        let traj = match &gain {
            Some(k) => plant.simulate_with_feedback(k, &excitation)?,
            None => plant.simulate(&excitation)?,
        };
        if traj.len() >= pe_order
            && hankel::is_persistently_exciting(traj.inputs(), pe_order, RankTolerance::auto())?
        {
            return Ok(traj);
        }
    }
    Err(Error::GenerationFailure(format!(
        "input not persistently exciting of order {pe_order} after {} attempts",
        spec.max_attempts.max(1)
    )))
}

/// Adds independent perturbations drawn uniformly from the ball of radius
/// `bound` to every sample.
pub fn inject_noise<R: Rng>(values: &mut [DVector<f64>], bound: f64, rng: &mut R) {
    if bound <= 0.0 {
        return;
    }
    for v in values.iter_mut() {
        *v += sample_ball(v.len(), bound, rng);
    }
}

fn sample_ball<R: Rng>(dim: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    loop {
        let d = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..=1.0));
        if d.norm_squared() <= 1.0 {
            return d * radius;
        }
    }
}

/// Anything that turns an input into an output.
pub trait Plant {
    fn apply(&mut self, u: &DVector<f64>) -> Result<DVector<f64>>;

    /// Internal state, if the plant exposes one.
    fn state_snapshot(&self) -> Option<DVector<f64>> {
        None
    }
}

impl Plant for LtiSystem {
    fn apply(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.step(u)
    }

    fn state_snapshot(&self) -> Option<DVector<f64>> {
        Some(self.state().clone())
    }
}

/// Everything logged by a closed-loop run over `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClosedLoop {
    pub inputs: Vec<DVector<f64>>,
    /// True plant outputs.
    pub outputs: Vec<DVector<f64>>,
    /// What the controller saw.
    pub measurements: Vec<DVector<f64>>,
    /// Plant state before each input, when available.
    pub states: Vec<DVector<f64>>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl ClosedLoop {
    pub fn trajectory(&self) -> Result<Trajectory> {
        Trajectory::new(self.inputs.clone(), self.outputs.clone())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// A run that stopped early, with everything logged up to the failure.
#[derive(Debug)]
pub struct PartialRun<T> {
    pub error: Error,
    pub partial: T,
}

/// Runs the loop for `t = 0..=schedule.horizon()`.
///
/// At step `t` the controller receives `L_{t-1}` and the measurement
/// `y_{t-1}`; `L_t` is only looked up after `u_t` has been applied.
pub fn run_closed_loop<P: Plant, C: StageCost, R: Rng>(
    controller: &mut Controller,
    plant: &mut P,
    schedule: &CostSchedule<C>,
    measurement_noise: Option<(f64, &mut R)>,
) -> std::result::Result<ClosedLoop, PartialRun<ClosedLoop>> {
    let mut log = ClosedLoop::default();
    let mut noise = measurement_noise;
    for t in 0..=schedule.horizon() {
        let prev_cost = (t > 0).then(|| schedule.at(t - 1) as &dyn StageCost);
        let step = controller.advance(prev_cost, log.measurements.last());
        let (u, diag) = match step {
            Ok(s) => s,
            Err(error) => return Err(PartialRun { error, partial: log }),
        };
        if let Some(x) = plant.state_snapshot() {
            log.states.push(x);
        }
        let y = match plant.apply(&u) {
            Ok(y) => y,
            Err(e) => {
                return Err(PartialRun {
                    error: e.at_step(t),
                    partial: log,
                })
            }
        };
        let mut measured = y.clone();
        if let Some((bound, rng)) = noise.as_mut() {
            inject_noise(std::slice::from_mut(&mut measured), *bound, *rng);
        }
        if !y.iter().chain(u.iter()).all(|x| x.is_finite()) {
            return Err(PartialRun {
                error: Error::NumericalFailure("closed loop diverged".into()).at_step(t),
                partial: log,
            });
        }
        log.inputs.push(u);
        log.outputs.push(y);
        log.measurements.push(measured);
        log.diagnostics.push(diag);
    }
    Ok(log)
}

/// One CSV row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub t: usize,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub eta: DVector<f64>,
    pub theta: DVector<f64>,
    pub u_s: DVector<f64>,
    pub y_s: DVector<f64>,
    pub y_hat: DVector<f64>,
    pub stage_cost: f64,
    pub hindsight_cost: f64,
    pub cumulative_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl RunRecord {
    fn build(log: &ClosedLoop, schedule: &CostSchedule, regret: Option<&RegretReport>) -> Self {
        let rows = log
            .diagnostics
            .iter()
            .enumerate()
            .map(|(t, d)| {
                let cost = schedule.at(t);
                let stage_cost = cost.value(&log.inputs[t], &log.outputs[t]);
                RunRow {
                    t,
                    u: log.inputs[t].clone(),
                    y: log.outputs[t].clone(),
                    eta: cost.eta.clone(),
                    theta: cost.theta.clone(),
                    u_s: d.u_s.clone(),
                    y_s: d.y_s.clone(),
                    y_hat: d.y_hat.clone(),
                    stage_cost,
                    hindsight_cost: regret.map_or(f64::NAN, |r| r.hindsight_costs[t]),
                    cumulative_regret: regret.map_or(f64::NAN, |r| r.cumulative_regret[t]),
                }
            })
            .collect();
        RunRecord { rows }
    }

    pub fn header(&self) -> Vec<String> {
        let Some(first) = self.rows.first() else {
            return vec!["t".into()];
        };
        let mut h = vec!["t".to_string()];
        let vectors: [(&str, usize); 7] = [
            ("u_t", first.u.len()),
            ("y_t", first.y.len()),
            ("eta_t", first.eta.len()),
            ("theta_t", first.theta.len()),
            ("u_s_t", first.u_s.len()),
            ("y_s_t", first.y_s.len()),
            ("y_hat_t", first.y_hat.len()),
        ];
        for (name, len) in vectors {
            h.extend((0..len).map(|i| format!("{name}_{i}")));
        }
        h.extend(["stage_cost", "hindsight_cost", "cumulative_regret"].map(String::from));
        h
    }

    /// CSV with a header row; floats carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![r.t.to_string()];
            for v in [&r.u, &r.y, &r.eta, &r.theta, &r.u_s, &r.y_s, &r.y_hat] {
                rec.extend(v.iter().map(|&x| fmt_f64(x)));
            }
            rec.extend([r.stage_cost, r.hindsight_cost, r.cumulative_regret].map(fmt_f64));
            w.write_record(&rec)?;
        }
        w.flush()
    }
}

/// Writes a trajectory as CSV with columns `k, u_0.., y_0..`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string()];
    header.extend((0..traj.input_dim()).map(|i| format!("u_{i}")));
    header.extend((0..traj.output_dim()).map(|i| format!("y_{i}")));
    w.write_record(&header)?;
    for (k, (u, y)) in traj.inputs().iter().zip(traj.outputs()).enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend(u.iter().chain(y.iter()).map(|&x| fmt_f64(x)));
        w.write_record(&rec)?;
    }
    w.flush()
}

/// Reads a trajectory written by [`write_trajectory_csv`].
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| Error::Config(e.to_string()))?.clone();
    let m = header.iter().filter(|h| h.starts_with("u_")).count();
    let p = header.iter().filter(|h| h.starts_with("y_")).count();
    if m == 0 || p == 0 || header.len() != 1 + m + p {
        return Err(Error::Config("trajectory CSV needs columns k, u_*, y_*".into()));
    }
    let (mut us, mut ys) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Config(e.to_string()))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("bad number in trajectory CSV: {e}")))?;
        us.push(DVector::from_column_slice(&vals[..m]));
        ys.push(DVector::from_column_slice(&vals[m..]));
    }
    Trajectory::new(us, ys)
}

/// Scalar outcome of one run, suitable for JSON or a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub horizon: usize,
    pub noise_case: u8,
    pub total_regret: f64,
    pub realized_cost: f64,
    pub hindsight_cost: f64,
    pub equilibrium_regret: f64,
    pub theta_variation: f64,
    pub eta_variation: f64,
    /// Mean `||y_t - theta_t||` over `t >= mu~`.
    pub mean_tracking_error: f64,
    pub final_tracking_error: f64,
    pub max_output_norm: f64,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub system: LtiSystem,
    pub data: Trajectory,
    pub matrices: Arc<DataMatrices>,
    pub schedule: CostSchedule,
    /// Plant state at t = 0 (after warm-up).
    pub initial_state: DVector<f64>,
    pub closed_loop: ClosedLoop,
    pub regret: RegretReport,
    pub record: RunRecord,
}

impl Experiment {
    pub fn summary(&self, cfg: &ExperimentConfig) -> RunSummary {
        let errors: Vec<f64> = self
            .closed_loop
            .outputs
            .iter()
            .enumerate()
            .map(|(t, y)| (y - &self.schedule.at(t).theta).norm())
            .collect();
        let skip = self.matrices.dims().tail_start().min(errors.len().saturating_sub(1));
        let tail = &errors[skip..];
        RunSummary {
            seed: cfg.seed,
            horizon: cfg.horizon,
            noise_case: cfg.noise.case_number(),
            total_regret: self.regret.total(),
            realized_cost: self.regret.realized_total(),
            hindsight_cost: self.regret.hindsight_total(),
            equilibrium_regret: self.regret.equilibrium_regret,
            theta_variation: self.regret.theta_variation,
            eta_variation: self.regret.eta_variation,
            mean_tracking_error: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
            final_tracking_error: errors.last().copied().unwrap_or(0.0),
            max_output_norm: self
                .closed_loop
                .outputs
                .iter()
                .map(|y| y.norm())
                .fold(0.0, f64::max),
        }
    }
}

/// A failed run; `partial` holds the rows logged before the failure.
#[derive(Debug)]
pub struct ExperimentFailure {
    pub error: Error,
    pub partial: Option<RunRecord>,
}

impl From<Error> for ExperimentFailure {
    fn from(error: Error) -> Self {
        ExperimentFailure {
            error,
            partial: None,
        }
    }
}

/// The offline part of a run: system, data (with data noise) and matrices.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(LtiSystem, Trajectory, Arc<DataMatrices>, ControllerConfig)> {
    cfg.validate()?;
    let system = cfg.system.build(cfg.seed)?;
    let ctrl_cfg = cfg.effective_controller();
    let mut data = generate_data(&system, &cfg.data, ctrl_cfg.pe_order(), cfg.seed)?;
    inject_noise(
        data.outputs_mut(),
        cfg.noise.data_bound(),
        &mut rng_for(cfg.seed, STREAM_DATA_NOISE),
    );
    let matrices = Arc::new(DataMatrices::precompute(&data, &ctrl_cfg)?);
    Ok((system, data, matrices, ctrl_cfg))
}

/// Warm-up, closed loop and regret for one configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<Experiment, ExperimentFailure> {
    let (system, data, matrices, ctrl_cfg) = prepare(cfg)?;
    let schedule = cfg.schedule.build(&system, cfg.horizon, cfg.seed)?;

    let mut plant = system.clone();
    let n = system.order();
    let x_start = match &cfg.initial_state {
        Some(x) if x.len() == n => DVector::from_column_slice(x),
        Some(_) => return Err(Error::Config("initial state has wrong dimension".into()).into()),
        None => DVector::zeros(n),
    };
    plant.set_state(x_start)?;
    let warmup_len = cfg.warmup.unwrap_or(ctrl_cfg.order_bound).max(ctrl_cfg.order_bound);
    let mut warmup = plant.simulate(&vec![DVector::zeros(system.input_dim()); warmup_len])?;
    let mut meas_rng = rng_for(cfg.seed, STREAM_MEASUREMENT_NOISE);
    let meas_bound = cfg.noise.measurement_bound();
    inject_noise(warmup.outputs_mut(), meas_bound, &mut meas_rng);
    let initial_state = plant.state().clone();

    let mut controller = Controller::new(matrices.clone(), &ctrl_cfg, &warmup)?;
    let noise = (meas_bound > 0.0).then_some((meas_bound, &mut meas_rng));
    let closed_loop = match run_closed_loop(&mut controller, &mut plant, &schedule, noise) {
        Ok(log) => log,
        Err(PartialRun { error, partial }) => {
            return Err(ExperimentFailure {
                error,
                partial: Some(RunRecord::build(&partial, &schedule, None)),
            })
        }
    };

    let realized = closed_loop.trajectory()?;
    let first = &closed_loop.diagnostics[0];
    let v_before = ctrl_cfg
        .initial_input
        .as_ref()
        .map(|v| DVector::from_column_slice(v))
        .unwrap_or_else(|| DVector::zeros(system.input_dim()));
    let regret = regret::compute_regret(
        &realized,
        &system,
        &schedule,
        &initial_state,
        Some((&v_before, &first.y_hat)),
    )?;
    let record = RunRecord::build(&closed_loop, &schedule, Some(&regret));
    Ok(Experiment {
        system,
        data,
        matrices,
        schedule,
        initial_state,
        closed_loop,
        regret,
        record,
    })
}

/// Outcome of one invariant check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn at_most(name: &'static str, value: f64, threshold: f64) -> Self {
        CheckOutcome {
            name,
            value,
            threshold,
            passed: value <= threshold,
        }
    }
}

/// Closed-loop invariants of a finished run. The identities hold exactly in
/// the noiseless case; under noise they are reported, not expected to pass.
pub fn check_invariants(exp: &Experiment) -> Result<Vec<CheckOutcome>> {
    let mats = &exp.matrices;
    let dims = mats.dims();
    let (n, tail) = (dims.order, dims.tail_start());
    let diags = &exp.closed_loop.diagnostics;

    let mut recursive: f64 = 0.0;
    let mut input_consistency: f64 = 0.0;
    for (prev, cur) in diags.iter().zip(diags.iter().skip(1)) {
        let lhs = mats.output_blocks(&(&cur.alpha + &prev.omega), tail, tail + n - 1)?;
        let rhs = mats.output_blocks(&prev.combined(), tail + 1, tail + n)?;
        recursive = recursive.max((lhs - rhs).norm());
    }
    for (d, u) in diags.iter().zip(&exp.closed_loop.inputs) {
        let applied = mats.input_blocks(&d.combined(), n + 1, n + 1)?;
        input_consistency = input_consistency.max((applied - u).norm());
    }

    let mut terminal: f64 = 0.0;
    let mut steady: f64 = 0.0;
    for d in diags {
        let ys = mats.output_blocks(&d.combined(), tail, tail + n)?;
        let target = crate::numerics::repeat_block(&d.y_s, n + 1);
        terminal = terminal.max((ys - target).norm());
        steady = steady.max(mats.steady_maps().residual(&d.u_s, &d.y_s));
    }

    let mut prediction: f64 = 0.0;
    if exp.closed_loop.states.len() == diags.len() {
        for (d, x) in diags.iter().zip(&exp.closed_loop.states) {
            let plan_inputs = mats.input_blocks(&(&d.alpha + &d.omega), n + 1, tail)?;
            let mut sim = exp.system.clone();
            sim.set_state(x.clone())?;
            let m = dims.inputs;
            let mut y_last = DVector::zeros(dims.outputs);
            for k in 0..=dims.horizon {
                y_last = sim.step(&plan_inputs.rows(k * m, m).into_owned())?;
            }
            prediction = prediction.max((y_last - &d.y_hat).norm());
        }
    }

    let scale = 1.0 + exp.regret.realized_total().abs();
    Ok(vec![
        CheckOutcome::at_most("recursive-predictions", recursive, 1e-6),
        CheckOutcome::at_most("terminal-output", terminal, 1e-6),
        CheckOutcome::at_most("input-consistency", input_consistency, 1e-8),
        CheckOutcome::at_most("prediction-soundness", prediction, 1e-6),
        CheckOutcome::at_most("steady-state-residual", steady, 1e-6),
        CheckOutcome::at_most("regret-nonnegative", -exp.regret.total(), 1e-6 * scale),
    ])
}
