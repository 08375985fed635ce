#![allow(dead_code)]

use ddoco::costs::{quadratic_tracking, CostSchedule, StageCost};
use ddoco::hankel::{self, Trajectory};
use ddoco::lti::{LtiSystem, RandomSystemSpec};
use ddoco::RankTolerance;
use nalgebra::{dmatrix, DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec<R: Rng>(rng: &mut R, len: usize, bound: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(-bound..=bound))
}

pub fn uniform_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..=1.0))
}

/// Stable random system scaled to spectral radius `rho`.
pub fn stable_system(seed: u64, n: usize, m: usize, p: usize, rho: f64) -> LtiSystem {
    let mut spec = RandomSystemSpec::new(n, m, p);
    spec.spectral_radius = Some(rho);
    spec.require_steady_outputs = p <= m;
    spec.build(seed).expect("random system")
}

/// Random-input trajectory of `len` samples from a random initial state.
pub fn random_data<R: Rng>(sys: &LtiSystem, len: usize, rng: &mut R) -> Trajectory {
    let mut s = sys.clone();
    s.set_state(uniform_vec(rng, sys.order(), 1.0)).unwrap();
    let inputs: Vec<_> = (0..len).map(|_| uniform_vec(rng, sys.input_dim(), 1.0)).collect();
    s.simulate(&inputs).unwrap()
}

/// Data whose input is persistently exciting of order `order`.
pub fn pe_data<R: Rng>(sys: &LtiSystem, order: usize, rng: &mut R) -> Trajectory {
    let len = (sys.input_dim() + 1) * order - 1 + 10;
    loop {
        let d = random_data(sys, len, rng);
        if hankel::is_persistently_exciting(d.inputs(), order, RankTolerance::auto()).unwrap() {
            return d;
        }
    }
}

/// Indices of a maximal set of linearly independent rows (Gram-Schmidt
/// with pivoting on the largest remaining row).
pub fn independent_rows(h: &DMatrix<f64>) -> Vec<usize> {
    let scale = h.norm().max(1e-300);
    let mut rest: Vec<DVector<f64>> = h.row_iter().map(|r| r.transpose()).collect();
    let mut keep = Vec::new();
    loop {
        let best = (0..rest.len())
            .filter(|i| !keep.contains(i))
            .max_by(|&a, &b| rest[a].norm().total_cmp(&rest[b].norm()));
        let Some(i) = best else { break };
        let nr = rest[i].norm();
        if nr <= 1e-9 * scale {
            break;
        }
        let q = &rest[i] / nr;
        keep.push(i);
        for (j, r) in rest.iter_mut().enumerate() {
            if !keep.contains(&j) {
                let c = q.dot(r);
                *r -= &q * c;
            }
        }
    }
    keep.sort_unstable();
    keep
}

pub fn select_rows(h: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), h.ncols(), |i, j| h[(rows[i], j)])
}

pub fn select_entries(g: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| g[rows[i]])
}

/// Minimum-norm solution of a consistent system `h x = b` from a QR
/// factorization of `h^T` restricted to independent rows.
pub fn min_norm_qr(h: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let rows = independent_rows(h);
    let hr = select_rows(h, &rows);
    let br = select_entries(b, &rows);
    let qr = hr.transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let z = r
        .transpose()
        .solve_lower_triangular(&br)
        .expect("nonsingular triangular factor");
    q * z
}

/// `min ||q x||^2` s.t. `h x = g` by a dense KKT system on the independent
/// rows of `h`; `q` must have full column rank.
pub fn weighted_kkt(h: &DMatrix<f64>, q: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let rows = independent_rows(h);
    let hr = select_rows(h, &rows);
    let gr = select_entries(g, &rows);
    let (k, c) = (hr.nrows(), hr.ncols());
    let mut kkt = DMatrix::zeros(c + k, c + k);
    kkt.view_mut((0, 0), (c, c)).copy_from(&(q.transpose() * q));
    kkt.view_mut((0, c), (c, k)).copy_from(&hr.transpose());
    kkt.view_mut((c, 0), (k, c)).copy_from(&hr);
    let mut rhs = DVector::zeros(c + k);
    rhs.rows_mut(c, k).copy_from(&gr);
    kkt.lu().solve(&rhs).expect("nonsingular KKT").rows(0, c).into_owned()
}

/// `min ||u - v||` s.t. `s_u u = -s_y y` by KKT on independent rows.
pub fn nearest_input_kkt(
    s_u: &DMatrix<f64>,
    s_y: &DMatrix<f64>,
    v: &DVector<f64>,
    y: &DVector<f64>,
) -> DVector<f64> {
    let rhs = -(s_y * y);
    let rows = independent_rows(s_u);
    let m = s_u.ncols();
    if rows.is_empty() {
        return v.clone();
    }
    let hr = select_rows(s_u, &rows);
    let gr = select_entries(&rhs, &rows);
    let k = hr.nrows();
    let mut kkt = DMatrix::zeros(m + k, m + k);
    kkt.view_mut((0, 0), (m, m)).fill_with_identity();
    kkt.view_mut((0, m), (m, k)).copy_from(&hr.transpose());
    kkt.view_mut((m, 0), (k, m)).copy_from(&hr);
    let mut b = DVector::zeros(m + k);
    b.rows_mut(0, m).copy_from(v);
    b.rows_mut(m, k).copy_from(&gr);
    kkt.lu().solve(&b).expect("nonsingular KKT").rows(0, m).into_owned()
}

/// Model steady state for the input `u`: `x = (I - A)^{-1} B u`, `y = C x + D u`.
pub fn model_equilibrium(sys: &LtiSystem, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = sys.order();
    let x = (DMatrix::identity(n, n) - sys.a())
        .lu()
        .solve(&(sys.b() * u))
        .expect("I - A invertible");
    let y = sys.c() * &x + sys.d() * u;
    (x, y)
}

/// Block rows `a..=b` (1-based) of a Hankel matrix with block size `k`.
pub fn blocks(h: &DMatrix<f64>, k: usize, a: usize, b: usize) -> DMatrix<f64> {
    h.rows((a - 1) * k, (b - a + 1) * k).into_owned()
}

pub fn repeat(v: &DVector<f64>, times: usize) -> DVector<f64> {
    let parts: Vec<f64> = (0..times).flat_map(|_| v.iter().copied()).collect();
    DVector::from_vec(parts)
}

pub fn concat(parts: &[&DVector<f64>]) -> DVector<f64> {
    DVector::from_vec(parts.iter().flat_map(|p| p.iter().copied()).collect())
}

/// Equilibrium targets switching at random times.
pub fn random_schedule<R: Rng>(sys: &LtiSystem, horizon: usize, switches: usize, rng: &mut R) -> CostSchedule {
    let gain = sys.steady_state_gain().unwrap();
    let mut segs = vec![];
    let mut t = 0;
    for _ in 0..=switches {
        let eta = uniform_vec(rng, sys.input_dim(), 1.0);
        let theta = &gain * &eta;
        segs.push((t, quadratic_tracking(eta, theta).unwrap()));
        t += rng.gen_range(1..=horizon.max(1));
    }
    CostSchedule::new(segs, horizon).unwrap()
}

/// Total stage cost of `inputs` applied from `x0`.
pub fn total_cost(sys: &LtiSystem, s: &CostSchedule, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> f64 {
    let mut sim = sys.clone();
    sim.set_state(x0.clone()).unwrap();
    let t = sim.simulate(inputs).unwrap();
    t.inputs()
        .iter()
        .zip(t.outputs())
        .enumerate()
        .map(|(k, (u, y))| s.at(k).value(u, y))
        .sum()
}

/// Coarse-to-fine grid search over the four inputs of a scalar problem.
pub fn grid_minimize(f: impl Fn(&[f64; 4]) -> f64) -> ([f64; 4], f64) {
    let mut center = [0.0; 4];
    let mut width = 4.0;
    let mut best = f(&center);
    for _ in 0..40 {
        let pts: Vec<f64> = (0..=8).map(|k| -1.0 + 0.25 * k as f64).collect();
        let mut next = center;
        for a in &pts {
            for b in &pts {
                for c in &pts {
                    for d in &pts {
                        let z = [
                            center[0] + a * width,
                            center[1] + b * width,
                            center[2] + c * width,
                            center[3] + d * width,
                        ];
                        let val = f(&z);
                        if val < best {
                            best = val;
                            next = z;
                        }
                    }
                }
            }
        }
        center = next;
        width *= 0.5;
    }
    (center, best)
}

/// Scalar plant, horizon 3, one switch at t = 2.
pub fn scalar_problem() -> (LtiSystem, CostSchedule, DVector<f64>) {
    let sys = LtiSystem::new(dmatrix![0.9], dmatrix![0.5], dmatrix![1.0], dmatrix![0.1], dvec(&[0.0])).unwrap();
    let c = |eta: f64| {
        let theta = (0.5 / (1.0 - 0.9) + 0.1) * eta;
        quadratic_tracking(dvec(&[eta]), dvec(&[theta])).unwrap()
    };
    let s = CostSchedule::new(vec![(0, c(1.0)), (2, c(-0.5))], 3).unwrap();
    (sys, s, dvec(&[0.4]))
}

pub fn dvec(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}
