//! Hankel matrices of vector signals and the trajectory-space tests built
//! on them.
//!
//! Block rows are addressed 1-based and inclusive (`block_rows(a, b)`),
//! matching the way the controller's selector matrices are described.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, RankTolerance};

/// Paired input/output sequences of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    inputs: Vec<DVector<f64>>,
    outputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(inputs: Vec<DVector<f64>>, outputs: Vec<DVector<f64>>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::InvalidInput(format!(
                "{} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        let m = inputs.first().map_or(1, |u| u.len());
        let p = outputs.first().map_or(1, |y| y.len());
        if m == 0 || p == 0 {
            return Err(Error::InvalidInput("signal dimension must be at least 1".into()));
        }
        if inputs.iter().any(|u| u.len() != m) || outputs.iter().any(|y| y.len() != p) {
            return Err(Error::InvalidInput("ragged signal dimensions".into()));
        }
        let finite = inputs
            .iter()
            .chain(outputs.iter())
            .all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::InvalidInput("trajectory has non-finite entries".into()));
        }
        Ok(Trajectory { inputs, outputs })
    }

    /// Builds a trajectory from stacked vectors `[u_1; ...; u_L]`, `[y_1; ...; y_L]`.
    pub fn from_stacked(u: &DVector<f64>, y: &DVector<f64>, m: usize, p: usize) -> Result<Self> {
        if m == 0 || p == 0 || u.len() % m != 0 || y.len() % p != 0 || u.len() / m != y.len() / p
        {
            return Err(Error::InvalidInput(format!(
                "stacked lengths {} and {} do not split into blocks of {m} and {p}",
                u.len(),
                y.len()
            )));
        }
        let split = |v: &DVector<f64>, d: usize| {
            (0..v.len() / d)
                .map(|k| v.rows(k * d, d).into_owned())
                .collect::<Vec<_>>()
        };
        Trajectory::new(split(u, m), split(y, p))
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.first().map_or(0, |y| y.len())
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[DVector<f64>] {
        &self.outputs
    }

    pub fn outputs_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.outputs
    }

    pub fn stacked_inputs(&self) -> DVector<f64> {
        stack(&self.inputs)
    }

    pub fn stacked_outputs(&self) -> DVector<f64> {
        stack(&self.outputs)
    }

    /// The sub-trajectory of `len` samples starting at `start` (0-based).
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::InvalidInput(format!(
                "window {start}..{} exceeds length {}",
                start + len,
                self.len()
            )));
        }
        Ok(Trajectory {
            inputs: self.inputs[start..start + len].to_vec(),
            outputs: self.outputs[start..start + len].to_vec(),
        })
    }
}

fn stack(seq: &[DVector<f64>]) -> DVector<f64> {
    let refs: Vec<_> = seq.iter().collect();
    numerics::vconcat(&refs)
}

/// Depth-`L` block Hankel matrix of a vector signal.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelBlock {
    depth: usize,
    block_size: usize,
    matrix: DMatrix<f64>,
}

impl HankelBlock {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Rows of block rows `a..=b` (1-based).
    pub fn block_rows(&self, a: usize, b: usize) -> Result<DMatrix<f64>> {
        if a == 0 || a > b || b > self.depth {
            return Err(Error::InvalidIndex {
                a,
                b,
                depth: self.depth,
            });
        }
        let start = (a - 1) * self.block_size;
        let len = (b - a + 1) * self.block_size;
        Ok(self.matrix.rows(start, len).into_owned())
    }

    /// Single block row `a` (1-based).
    pub fn block_row(&self, a: usize) -> Result<DMatrix<f64>> {
        self.block_rows(a, a)
    }
}

/// Builds `H_L(z)`: block row `i`, column `j` holds `z_{i+j-1}`.
pub fn build_hankel(z: &[DVector<f64>], depth: usize) -> Result<HankelBlock> {
    let len = z.len();
    if depth == 0 || depth > len {
        return Err(Error::InvalidDepth { depth, len });
    }
    let dim = z[0].len();
    if dim == 0 || z.iter().any(|v| v.len() != dim) {
        return Err(Error::InvalidInput("signal samples must share a nonzero dimension".into()));
    }
    let cols = len - depth + 1;
    let mut matrix = DMatrix::zeros(depth * dim, cols);
    for i in 0..depth {
        for j in 0..cols {
            matrix.view_mut((i * dim, j), (dim, 1)).copy_from(&z[i + j]);
        }
    }
    Ok(HankelBlock {
        depth,
        block_size: dim,
        matrix,
    })
}

/// `true` iff `rank H_L(u) = m L`. Returns `false` without factorizing when the
/// Hankel matrix has fewer columns than `m L`.
pub fn is_persistently_exciting(u: &[DVector<f64>], depth: usize, tol: RankTolerance) -> Result<bool> {
    let h = build_hankel(u, depth)?;
    let needed = h.block_size * depth;
    if needed > h.ncols() {
        return Ok(false);
    }
    Ok(numerics::numerical_rank(&h.matrix, tol)? == needed)
}

fn check_pair(u: &HankelBlock, y: &HankelBlock) -> Result<()> {
    if u.depth != y.depth || u.ncols() != y.ncols() {
        return Err(Error::InvalidInput(
            "input and output Hankel blocks differ in depth or column count".into(),
        ));
    }
    Ok(())
}

/// Least-squares residual `min_a || [U; Y] a - [u; y] ||` of a candidate
/// length-`L` trajectory against the data's trajectory space.
pub fn trajectory_residual(
    candidate: &Trajectory,
    u: &HankelBlock,
    y: &HankelBlock,
    tol: RankTolerance,
) -> Result<f64> {
    check_pair(u, y)?;
    if candidate.len() != u.depth
        || candidate.input_dim() != u.block_size
        || candidate.output_dim() != y.block_size
    {
        return Err(Error::InvalidInput(format!(
            "candidate of length {} (dims {}/{}) does not match Hankel depth {} (dims {}/{})",
            candidate.len(),
            candidate.input_dim(),
            candidate.output_dim(),
            u.depth,
            u.block_size,
            y.block_size
        )));
    }
    let h = numerics::vstack(&[&u.matrix, &y.matrix]);
    let w = numerics::vconcat(&[&candidate.stacked_inputs(), &candidate.stacked_outputs()]);
    let h_pinv = numerics::pseudoinverse(&h, tol)?;
    let alpha = h_pinv * &w;
    Ok((h * alpha - w).norm())
}

/// The trajectory `[U; Y] alpha`, reshaped into `L` samples.
pub fn expand(alpha: &DVector<f64>, u: &HankelBlock, y: &HankelBlock) -> Result<Trajectory> {
    check_pair(u, y)?;
    if alpha.len() != u.ncols() {
        return Err(Error::InvalidInput(format!(
            "coefficient vector has length {}, Hankel blocks have {} columns",
            alpha.len(),
            u.ncols()
        )));
    }
    let us = &u.matrix * alpha;
    let ys = &y.matrix * alpha;
    Trajectory::from_stacked(&us, &ys, u.block_size, y.block_size)
}
