//! Matrix-free linear operators.
//!
//! Every forward model `A` and regularization operator `L` used by the
//! solvers is a [`LinearOperator`]: a shape plus a kind that knows how to
//! apply itself and its adjoint. Operators are immutable once built.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::rng::SplitMix64;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({r}, {c}) outside {rows}x{cols}"
                )));
            }
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    fn mul(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).map(|(c, a)| a * v[c]).sum();
        }
    }

    fn mul_t(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &ur) in u.iter().enumerate() {
            if ur != 0.0 {
                for (c, a) in self.row(r) {
                    out[c] += a * ur;
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }
}

/// Convolution kernels of the one-dimensional deconvolution examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConvKernel {
    /// `w(t) = (1 - (t/σ)²) exp(-(t/σ)²)`, the band-limited "spiky" kernel.
    MexicanHat,
    /// `w(t) = exp(-(t/σ)²)`.
    Gaussian,
}

impl ConvKernel {
    pub fn eval(self, t: f64, sigma: f64) -> f64 {
        let u2 = (t / sigma).powi(2);
        match self {
            ConvKernel::MexicanHat => (1.0 - u2) * (-u2).exp(),
            ConvKernel::Gaussian => (-u2).exp(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum OperatorKind {
    Identity,
    Dense(DMatrix<f64>),
    /// Toeplitz convolution `a_ij = w(t_i - t_j)`, kept dense at desk scale.
    ToeplitzConv {
        kernel: ConvKernel,
        h: f64,
        sigma: f64,
        matrix: DMatrix<f64>,
    },
    /// Forward differences `(Dv)_i = v_{i+1} - v_i`.
    Diff1d,
    /// `[I_nx ⊗ D_ny; D_nx ⊗ I_ny]` acting on column-major `ny × nx` images.
    Grad2d { nx: usize, ny: usize },
    /// Parallel-beam projector with exact ray/pixel intersection lengths.
    Tomo {
        grid: usize,
        angles_deg: Vec<f64>,
        matrix: SparseMatrix,
    },
    Sparse(SparseMatrix),
    /// `[top; scale * bottom]`.
    ScaledStack {
        top: Arc<LinearOperator>,
        bottom: Arc<LinearOperator>,
        scale: f64,
    },
}

#[derive(Debug, Clone)]
pub struct LinearOperator {
    rows: usize,
    cols: usize,
    kind: OperatorKind,
}

impl LinearOperator {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            kind: OperatorKind::Identity,
        }
    }

    pub fn dense(matrix: DMatrix<f64>) -> Self {
        Self {
            rows: matrix.nrows(),
            cols: matrix.ncols(),
            kind: OperatorKind::Dense(matrix),
        }
    }

    pub fn sparse(matrix: SparseMatrix) -> Self {
        Self {
            rows: matrix.rows(),
            cols: matrix.cols(),
            kind: OperatorKind::Sparse(matrix),
        }
    }

    /// `[top; scale * bottom]`. Both blocks must have the same column count.
    pub fn scaled_stack(top: Arc<LinearOperator>, bottom: Arc<LinearOperator>, scale: f64) -> Result<Self> {
        check_len("scaled_stack columns", top.cols, bottom.cols)?;
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("stack scale must be nonnegative, got {scale}")));
        }
        Ok(Self {
            rows: top.rows + bottom.rows,
            cols: top.cols,
            kind: OperatorKind::ScaledStack { top, bottom, scale },
        })
    }

    /// True for the identity kind or a dense identity matrix.
    pub fn is_identity(&self) -> bool {
        match &self.kind {
            OperatorKind::Identity => true,
            OperatorKind::Dense(m) => m.is_square() && *m == DMatrix::identity(m.nrows(), m.ncols()),
            _ => false,
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("apply", self.cols, v.len())?;
        let mut out = DVector::zeros(self.rows);
        self.apply_into(v.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    pub fn apply_adjoint(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("apply_adjoint", self.rows, u.len())?;
        let mut out = DVector::zeros(self.cols);
        self.adjoint_into(u.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `out = Op v`; lengths are the caller's responsibility.
    pub(crate) fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        match &self.kind {
            OperatorKind::Identity => out.copy_from_slice(v),
            OperatorKind::Dense(m) | OperatorKind::ToeplitzConv { matrix: m, .. } => dense_mul(m, v, out),
            OperatorKind::Diff1d => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = v[i + 1] - v[i];
                }
            }
            OperatorKind::Grad2d { nx, ny } => {
                let (nx, ny) = (*nx, *ny);
                let (dy, dx) = out.split_at_mut(nx * (ny - 1));
                for i in 0..nx {
                    for j in 0..ny - 1 {
                        dy[i * (ny - 1) + j] = v[i * ny + j + 1] - v[i * ny + j];
                    }
                }
                for i in 0..nx - 1 {
                    for j in 0..ny {
                        dx[i * ny + j] = v[(i + 1) * ny + j] - v[i * ny + j];
                    }
                }
            }
            OperatorKind::Tomo { matrix, .. } | OperatorKind::Sparse(matrix) => matrix.mul(v, out),
            OperatorKind::ScaledStack { top, bottom, scale } => {
                let (head, tail) = out.split_at_mut(top.rows);
                top.apply_into(v, head);
                bottom.apply_into(v, tail);
                tail.iter_mut().for_each(|t| *t *= scale);
            }
        }
    }

    /// `out = Opᵀ u`; lengths are the caller's responsibility.
    pub(crate) fn adjoint_into(&self, u: &[f64], out: &mut [f64]) {
        match &self.kind {
            OperatorKind::Identity => out.copy_from_slice(u),
            OperatorKind::Dense(m) | OperatorKind::ToeplitzConv { matrix: m, .. } => dense_mul_t(m, u, out),
            OperatorKind::Diff1d => {
                let n = out.len();
                out[0] = -u[0];
                for i in 1..n - 1 {
                    out[i] = u[i - 1] - u[i];
                }
                out[n - 1] = u[n - 2];
            }
            OperatorKind::Grad2d { nx, ny } => {
                let (nx, ny) = (*nx, *ny);
                out.iter_mut().for_each(|o| *o = 0.0);
                let (dy, dx) = u.split_at(nx * (ny - 1));
                for i in 0..nx {
                    for j in 0..ny - 1 {
                        let w = dy[i * (ny - 1) + j];
                        out[i * ny + j + 1] += w;
                        out[i * ny + j] -= w;
                    }
                }
                for i in 0..nx - 1 {
                    for j in 0..ny {
                        let w = dx[i * ny + j];
                        out[(i + 1) * ny + j] += w;
                        out[i * ny + j] -= w;
                    }
                }
            }
            OperatorKind::Tomo { matrix, .. } | OperatorKind::Sparse(matrix) => matrix.mul_t(u, out),
            OperatorKind::ScaledStack { top, bottom, scale } => {
                let (head, tail) = u.split_at(top.rows);
                top.adjoint_into(head, out);
                let mut extra = vec![0.0; out.len()];
                bottom.adjoint_into(tail, &mut extra);
                for (o, e) in out.iter_mut().zip(extra) {
                    *o += scale * e;
                }
            }
        }
    }

    /// Dense materialization by applying the operator to each basis vector.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.kind {
            OperatorKind::Dense(m) | OperatorKind::ToeplitzConv { matrix: m, .. } => m.clone(),
            OperatorKind::Tomo { matrix, .. } | OperatorKind::Sparse(matrix) => matrix.to_dense(),
            _ => {
                let mut out = DMatrix::zeros(self.rows, self.cols);
                let mut e = vec![0.0; self.cols];
                let mut col = vec![0.0; self.rows];
                for j in 0..self.cols {
                    e[j] = 1.0;
                    self.apply_into(&e, &mut col);
                    out.column_mut(j).copy_from_slice(&col);
                    e[j] = 0.0;
                }
                out
            }
        }
    }

    /// Estimate of `‖Op‖₂` by power iteration on `OpᵀOp` from a fixed start.
    pub fn norm_estimate(&self, iterations: usize) -> f64 {
        if self.cols == 0 || self.rows == 0 {
            return 0.0;
        }
        let mut rng = SplitMix64::new(0x5EED);
        let mut v: Vec<f64> = (0..self.cols).map(|_| rng.uniform() + 0.5).collect();
        let mut av = vec![0.0; self.rows];
        let mut estimate = 0.0;
        for _ in 0..iterations.max(1) {
            let nv = norm(&v);
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            self.apply_into(&v, &mut av);
            estimate = norm(&av);
            self.adjoint_into(&av, &mut v);
        }
        estimate
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dense_mul(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let rows = m.nrows();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (col, &vj) in m.as_slice().chunks_exact(rows.max(1)).zip(v) {
        if vj != 0.0 {
            for (o, a) in out.iter_mut().zip(col) {
                *o += a * vj;
            }
        }
    }
}

fn dense_mul_t(m: &DMatrix<f64>, u: &[f64], out: &mut [f64]) {
    let rows = m.nrows();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (o, col) in out.iter_mut().zip(m.as_slice().chunks_exact(rows.max(1))) {
        *o = dot(col, u);
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

/// First-order forward difference operator `D ∈ ℝ^{(n-1)×n}`.
pub fn make_diff_1d(n: usize) -> Result<LinearOperator> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("diff_1d needs n >= 2, got {n}")));
    }
    Ok(LinearOperator {
        rows: n - 1,
        cols: n,
        kind: OperatorKind::Diff1d,
    })
}

/// Two-dimensional gradient `[I_nx ⊗ D_ny; D_nx ⊗ I_ny]`.
///
/// Pixel `(i, j)` (column `i < nx`, row `j < ny`) sits at index `i * ny + j`.
pub fn make_grad_2d(nx: usize, ny: usize) -> Result<LinearOperator> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidArgument(format!("grad_2d needs nx, ny >= 2, got {nx}x{ny}")));
    }
    Ok(LinearOperator {
        rows: nx * (ny - 1) + ny * (nx - 1),
        cols: nx * ny,
        kind: OperatorKind::Grad2d { nx, ny },
    })
}

/// Toeplitz convolution with `a_ij = w(t_i - t_j)`, `t_i = i h`.
pub fn make_toeplitz_conv(kernel: ConvKernel, n: usize, h: f64, sigma: f64) -> Result<LinearOperator> {
    if n == 0 {
        return Err(Error::InvalidArgument("toeplitz_conv needs n >= 1".into()));
    }
    if !(sigma > 0.0) || !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "toeplitz_conv needs positive h and sigma, got h={h}, sigma={sigma}"
        )));
    }
    let matrix = DMatrix::from_fn(n, n, |i, j| kernel.eval((i as f64 - j as f64) * h, sigma));
    Ok(LinearOperator {
        rows: n,
        cols: n,
        kind: OperatorKind::ToeplitzConv {
            kernel,
            h,
            sigma,
            matrix,
        },
    })
}

/// Gravity surveying kernel `d (d² + (s - t)²)^{-3/2}` on `[0, 1]` with
/// midpoint quadrature: nodes `(j - ½)/n`, weights `1/n`.
pub fn make_gravity(n: usize, depth: f64) -> Result<LinearOperator> {
    if n == 0 || !(depth > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gravity needs n >= 1 and depth > 0, got n={n}, d={depth}"
        )));
    }
    let dt = 1.0 / n as f64;
    let matrix = DMatrix::from_fn(n, n, |i, j| {
        let diff = (i as f64 - j as f64) * dt;
        depth * (depth * depth + diff * diff).powf(-1.5) * dt
    });
    Ok(LinearOperator::dense(matrix))
}

/// Dense `m × n` matrix of i.i.d. standard normal entries, filled row by row.
pub fn make_gaussian_random(m: usize, n: usize, seed: u64) -> Result<LinearOperator> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("gaussian_random needs m, n >= 1, got {m}x{n}")));
    }
    let mut rng = SplitMix64::new(seed);
    let mut matrix = DMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            matrix[(i, j)] = rng.normal();
        }
    }
    Ok(LinearOperator::dense(matrix))
}

/// Parallel-beam projector on a `grid × grid` image covering `[-½, ½]²`.
///
/// Each angle contributes `grid` rays, one per detector bin of width `1/grid`
/// centred on the image. At angle θ the detector axis is `(cos θ, sin θ)` and
/// rays travel along `(-sin θ, cos θ)`, so 0° integrates image columns.
/// Row `a * grid + k` holds the intersection lengths of ray `k` at angle `a`.
pub fn make_parallel_tomo(grid: usize, angles_deg: &[f64]) -> Result<LinearOperator> {
    if grid < 2 {
        return Err(Error::InvalidArgument(format!("tomography needs grid >= 2, got {grid}")));
    }
    if angles_deg.is_empty() {
        return Err(Error::InvalidArgument("tomography needs at least one angle".into()));
    }
    let width = 1.0 / grid as f64;
    let mut triplets = Vec::new();
    for (a, &deg) in angles_deg.iter().enumerate() {
        let theta = deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        let detector = (cos, sin);
        let direction = (-sin, cos);
        for k in 0..grid {
            let offset = (k as f64 + 0.5) * width - 0.5;
            let origin = (offset * detector.0, offset * detector.1);
            for (pixel, length) in trace_ray(grid, origin, direction) {
                triplets.push((a * grid + k, pixel, length));
            }
        }
    }
    let matrix = SparseMatrix::from_triplets(angles_deg.len() * grid, grid * grid, &triplets)?;
    Ok(LinearOperator {
        rows: matrix.rows(),
        cols: matrix.cols(),
        kind: OperatorKind::Tomo {
            grid,
            angles_deg: angles_deg.to_vec(),
            matrix,
        },
    })
}

/// Intersections of the line `origin + t·direction` with the pixels of the
/// grid on `[-½, ½]²`. `direction` is a unit vector.
fn trace_ray(grid: usize, origin: (f64, f64), direction: (f64, f64)) -> Vec<(usize, f64)> {
    const PARALLEL: f64 = 1e-12;
    let width = 1.0 / grid as f64;
    let lines: Vec<f64> = (0..=grid).map(|i| -0.5 + i as f64 * width).collect();

    // Parameter interval inside the box.
    let mut t_lo = f64::NEG_INFINITY;
    let mut t_hi = f64::INFINITY;
    for (o, d) in [(origin.0, direction.0), (origin.1, direction.1)] {
        if d.abs() < PARALLEL {
            if !(-0.5..=0.5).contains(&o) {
                return Vec::new();
            }
        } else {
            let t0 = (-0.5 - o) / d;
            let t1 = (0.5 - o) / d;
            t_lo = t_lo.max(t0.min(t1));
            t_hi = t_hi.min(t0.max(t1));
        }
    }
    if !(t_hi > t_lo) {
        return Vec::new();
    }

    let mut ts = vec![t_lo, t_hi];
    for (o, d) in [(origin.0, direction.0), (origin.1, direction.1)] {
        if d.abs() >= PARALLEL {
            ts.extend(lines.iter().map(|&x| (x - o) / d).filter(|&t| t > t_lo && t < t_hi));
        }
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let cell = |coord: f64| -> Option<usize> {
        let idx = ((coord + 0.5) / width).floor();
        (idx >= 0.0 && (idx as usize) < grid).then_some(idx as usize)
    };
    let mut out: Vec<(usize, f64)> = Vec::new();
    for w in ts.windows(2) {
        let length = w[1] - w[0];
        if length <= 1e-14 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let (px, py) = (origin.0 + mid * direction.0, origin.1 + mid * direction.1);
        if let (Some(ix), Some(iy)) = (cell(px), cell(py)) {
            let pixel = ix * grid + iy;
            match out.last_mut() {
                Some((p, l)) if *p == pixel => *l += length,
                _ => out.push((pixel, length)),
            }
        }
    }
    out
}
