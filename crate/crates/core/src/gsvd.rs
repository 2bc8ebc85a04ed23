//! Generalized SVD of a pair `(A, L)` and the spectral objects built on it.
//!
//! The factorization is `A = U Σ X`, `L = V Γ X` with `X` invertible and
//! `Σᵀ Σ + Γᵀ Γ = I`. It is computed by the QR-then-CS route: factor the
//! stack `[A; L] = Q R`, split `Q = [Q₁; Q₂]`, take the right singular
//! vectors `W` of `Q₁` and read the cosines/sines off the columns of `Q₁W`
//! and `Q₂W`. Then `X = WᵀR`.
//!
//! Every column of `X` carries one pair `(σ_i, γ_i)`; the pairs are sorted
//! with `σ` ascending (so `γ` descending). In block notation the
//! trailing `n − p` pairs of the tall regime are `(1, 0)` and the leading
//! `n − m` pairs of the wide regime are `(0, 1)`; zero rows of `Γ` (when
//! `p > n`) have no pair and only show up as the `p − r_L` directions in
//! the orthogonal complement of the active columns of `V`.

use nalgebra::{DMatrix, DVector, Dyn, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::prox::Regularizer;
use crate::sr3::{fista_solve, FistaOptions, SolveResult};
use crate::linops::LinearOperator;

/// Relative threshold below which a singular value (or σ_i, γ_i) counts as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `m ≥ n`, `p ≤ n`.
    Tall,
    /// `m < n`, `p > n`.
    Wide,
    /// Any other shape with `m + p ≥ n`, e.g. an overdetermined `A` with `p > n`.
    Mixed,
}

impl Regime {
    pub fn classify(m: usize, n: usize, p: usize) -> Result<Self> {
        if m + p < n {
            return Err(Error::UnsupportedShape { m, n, p });
        }
        Ok(if m >= n && p <= n {
            Regime::Tall
        } else if m < n && p > n {
            Regime::Wide
        } else {
            Regime::Mixed
        })
    }
}

#[derive(Debug, Clone)]
pub struct GsvdFactors {
    /// `m × n`; column `i` is the unit vector paired with `σ_i` (zero if `σ_i = 0`).
    pub u: DMatrix<f64>,
    /// `p × n`; column `i` is the unit vector paired with `γ_i` (zero if `γ_i = 0`).
    pub v: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub x_inv: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub gamma: Vec<f64>,
    pub regime: Regime,
    pub rank_a: usize,
    pub rank_l: usize,
}

impl GsvdFactors {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn p(&self) -> usize {
        self.v.nrows()
    }

    fn gamma_active(&self, i: usize) -> bool {
        self.gamma[i] > RANK_TOL * max_of(&self.gamma)
    }

    fn sigma_active(&self, i: usize) -> bool {
        self.sigma[i] > RANK_TOL * max_of(&self.sigma)
    }

    /// Generalized singular values `σ_i / γ_i` over the pairs with `γ_i ≠ 0`,
    /// descending. These are the singular values of `A L_A†` on the range of `L`.
    pub fn generalized_values(&self) -> Vec<f64> {
        let mut vals: Vec<f64> = (0..self.n())
            .filter(|&i| self.gamma_active(i))
            .map(|i| self.sigma[i] / self.gamma[i])
            .collect();
        sort_descending(&mut vals);
        vals
    }

    /// `U Σ X`.
    pub fn reconstruct_a(&self) -> DMatrix<f64> {
        scale_columns(&self.u, &self.sigma) * &self.x
    }

    /// `V Γ X`.
    pub fn reconstruct_l(&self) -> DMatrix<f64> {
        scale_columns(&self.v, &self.gamma) * &self.x
    }

    /// Dense `L_A† = X⁻¹ Γ† Vᵀ` (`n × p`).
    pub fn a_weighted_pinv(&self) -> DMatrix<f64> {
        let inv: Vec<f64> = (0..self.n())
            .map(|i| if self.gamma_active(i) { 1.0 / self.gamma[i] } else { 0.0 })
            .collect();
        scale_columns(&self.x_inv, &inv) * self.v.transpose()
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn sort_descending(v: &mut [f64]) {
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
}

fn scale_columns(m: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, &s) in d.iter().enumerate() {
        out.column_mut(j).scale_mut(s);
    }
    out
}

/// Dense SVD with a tight bidiagonal convergence test.
///
/// nalgebra's default tolerance can accept a visibly wrong factorization when
/// singular values cluster, e.g. near 1 for the `Q₁` of a GSVD.
pub fn dense_svd(m: &DMatrix<f64>, compute_u: bool, compute_v: bool) -> Result<SVD<f64, Dyn, Dyn>> {
    m.clone()
        .try_svd(compute_u, compute_v, 1e-20, 100_000)
        .or_else(|| m.clone().try_svd(compute_u, compute_v, f64::EPSILON, 100_000))
        .ok_or(Error::Singular("dense SVD did not converge"))
}

/// Descending singular values of a dense matrix.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let sv = match dense_svd(m, false, false) {
        Ok(svd) => svd.singular_values,
        Err(_) => m.clone().singular_values(),
    };
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sort_descending(&mut sv);
    sv
}

/// GSVD of `(A, L)`. Requires `[A; L]` to have full column rank.
pub fn gsvd(a: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<GsvdFactors> {
    let (m, n) = a.shape();
    check_len("gsvd: columns of L", n, l.ncols())?;
    let p = l.nrows();
    let regime = Regime::classify(m, n, p)?;

    let mut stack = DMatrix::zeros(m + p, n);
    stack.rows_mut(0, m).copy_from(a);
    stack.rows_mut(m, p).copy_from(l);
    let qr = stack.qr();
    let q = qr.q();
    let r = qr.r();

    let r_sv = singular_values_desc(&r);
    let rank = r_sv.iter().filter(|&&s| s > RANK_TOL * r_sv[0]).count();
    if rank < n {
        return Err(Error::RankDeficient { rank, n });
    }

    // Right singular vectors of Q₁, padded with zero rows so the SVD is full n × n.
    let q1 = q.rows(0, m).into_owned();
    let q2 = q.rows(m, p).into_owned();
    let mut padded = DMatrix::zeros(m.max(n), n);
    padded.rows_mut(0, m).copy_from(&q1);
    let svd = dense_svd(&padded, false, true)?;
    let w = svd
        .v_t
        .ok_or(Error::Singular("gsvd: SVD of Q1 did not return right vectors"))?
        .transpose();

    let q1w = &q1 * &w;
    let q2w = &q2 * &w;
    let mut pairs: Vec<(usize, f64, f64)> = (0..n)
        .map(|i| {
            let (c, s) = (q1w.column(i).norm(), q2w.column(i).norm());
            let h = c.hypot(s);
            (i, c / h, s / h)
        })
        .collect();
    pairs.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());

    let mut u = DMatrix::zeros(m, n);
    let mut v = DMatrix::zeros(p, n);
    let mut w_sorted = DMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    for (k, &(i, c, s)) in pairs.iter().enumerate() {
        let cu = q1w.column(i).norm();
        let sv = q2w.column(i).norm();
        if cu > 0.0 {
            u.column_mut(k).copy_from(&(q1w.column(i) / cu));
        }
        if sv > 0.0 {
            v.column_mut(k).copy_from(&(q2w.column(i) / sv));
        }
        w_sorted.column_mut(k).copy_from(&w.column(i));
        sigma.push(c);
        gamma.push(s);
    }

    let x = w_sorted.transpose() * &r;
    let x_inv = r
        .solve_upper_triangular(&w_sorted)
        .ok_or(Error::Singular("gsvd: triangular factor R"))?;

    let smax = max_of(&sigma);
    let gmax = max_of(&gamma);
    let rank_a = sigma.iter().filter(|&&c| c > RANK_TOL * smax).count();
    let rank_l = gamma.iter().filter(|&&s| s > RANK_TOL * gmax).count();
    if rank_a > m || rank_l > p {
        return Err(Error::Singular("gsvd: inconsistent cosine/sine pairs"));
    }

    Ok(GsvdFactors {
        u,
        v,
        x,
        x_inv,
        sigma,
        gamma,
        regime,
        rank_a,
        rank_l,
    })
}

/// Singular values of `F_κ` from the GSVD, descending.
///
/// `p − r_L` values equal `√κ` (the complement of the range of `L`); each pair
/// with `γ_i ≠ 0` contributes `√(σ_i² / (σ_i²/κ + γ_i²))`.
pub fn fk_singular_values(factors: &GsvdFactors, kappa: f64) -> Result<Vec<f64>> {
    positive("kappa", kappa)?;
    let plateau = factors.p() - factors.rank_l;
    let mut vals = vec![kappa.sqrt(); plateau];
    for i in (0..factors.n()).filter(|&i| factors.gamma_active(i)) {
        let (s, g) = (factors.sigma[i], factors.gamma[i]);
        vals.push((s * s / (s * s / kappa + g * g)).sqrt());
    }
    sort_descending(&mut vals);
    Ok(vals)
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {value}")))
    }
}

/// Explicitly assembled relaxed system. Verification use only (`n ≤ 512`).
#[derive(Debug, Clone)]
pub struct RelaxedSystem {
    /// `[√κ (I − κ L H⁻¹ Lᵀ); κ A H⁻¹ Lᵀ]`, `(p + m) × p`.
    pub f_kappa: DMatrix<f64>,
    /// `[√κ L H⁻¹ Aᵀ b; b − A H⁻¹ Aᵀ b]`.
    pub g_kappa: DVector<f64>,
    /// `AᵀA + κ LᵀL`.
    pub h_kappa: DMatrix<f64>,
    pub kappa: f64,
}

pub const RELAXED_ASSEMBLY_MAX_N: usize = 512;

pub fn build_relaxed_system(a: &DMatrix<f64>, l: &DMatrix<f64>, b: &DVector<f64>, kappa: f64) -> Result<RelaxedSystem> {
    positive("kappa", kappa)?;
    let (m, n) = a.shape();
    check_len("relaxed system: columns of L", n, l.ncols())?;
    check_len("relaxed system: b", m, b.len())?;
    if n > RELAXED_ASSEMBLY_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "explicit relaxed system limited to n <= {RELAXED_ASSEMBLY_MAX_N}, got {n}"
        )));
    }
    let p = l.nrows();
    let h = hk_matrix(a, l, kappa);
    let chol = h.clone().cholesky().ok_or(Error::Singular("H_kappa"))?;
    let h_inv_lt = chol.solve(&l.transpose());
    let h_inv_atb = chol.solve(&(a.transpose() * b));
    let sk = kappa.sqrt();

    let mut f = DMatrix::zeros(p + m, p);
    let top = (DMatrix::identity(p, p) - l * &h_inv_lt * kappa) * sk;
    f.rows_mut(0, p).copy_from(&top);
    f.rows_mut(p, m).copy_from(&(a * &h_inv_lt * kappa));

    let mut g = DVector::zeros(p + m);
    g.rows_mut(0, p).copy_from(&(l * &h_inv_atb * sk));
    g.rows_mut(p, m).copy_from(&(b - a * &h_inv_atb));

    Ok(RelaxedSystem {
        f_kappa: f,
        g_kappa: g,
        h_kappa: h,
        kappa,
    })
}

fn hk_matrix(a: &DMatrix<f64>, l: &DMatrix<f64>, kappa: f64) -> DMatrix<f64> {
    let mut h = a.transpose() * a + l.transpose() * l * kappa;
    // Symmetrize away rounding in the two products.
    let ht = h.transpose();
    h += ht;
    h *= 0.5;
    h
}

/// Singular values of `H_κ = AᵀA + κLᵀL`, descending (`κ = 0` allowed).
pub fn hk_singular_values(a: &DMatrix<f64>, l: &DMatrix<f64>, kappa: f64) -> Result<Vec<f64>> {
    if !(kappa >= 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be >= 0, got {kappa}")));
    }
    check_len("H_kappa: columns of L", a.ncols(), l.ncols())?;
    Ok(singular_values_desc(&hk_matrix(a, l, kappa)))
}

/// `L_A† y = X⁻¹ Γ† Vᵀ y`.
pub fn a_weighted_pinv_apply(factors: &GsvdFactors, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("A-weighted pseudo-inverse", factors.p(), y.len())?;
    let mut z = factors.v.transpose() * y;
    for i in 0..factors.n() {
        z[i] = if factors.gamma_active(i) { z[i] / factors.gamma[i] } else { 0.0 };
    }
    Ok(&factors.x_inv * z)
}

/// Component of the solution in `N(L)`: `x_N = (A (I − L†L))† b`.
///
/// In GSVD form only the pairs with `γ_i = 0` contribute.
pub fn nullspace_component(factors: &GsvdFactors, b: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("nullspace component", factors.m(), b.len())?;
    let mut z = DVector::zeros(factors.n());
    for i in 0..factors.n() {
        if !factors.gamma_active(i) && factors.sigma_active(i) {
            z[i] = factors.u.column(i).dot(b) / factors.sigma[i];
        }
    }
    Ok(&factors.x_inv * z)
}

/// The standard-form transformation of a dense general-form problem.
///
/// `x = L_A† y + x_N` where `y` solves `min ½‖Ā y − b̄‖² + R(y)` with
/// `Ā = A L_A†` and `b̄ = b − A x_N`.
#[derive(Debug, Clone)]
pub struct StandardForm {
    pub factors: GsvdFactors,
    pub pinv: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    pub x_null: DVector<f64>,
    pub b_bar: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct StandardFormSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub report: SolveResult,
}

impl StandardForm {
    pub fn new(a: &DMatrix<f64>, l: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        check_len("standard form: b", a.nrows(), b.len())?;
        let factors = gsvd(a, l)?;
        let pinv = factors.a_weighted_pinv();
        let a_bar = a * &pinv;
        let x_null = nullspace_component(&factors, b)?;
        let b_bar = b - a * &x_null;
        Ok(Self {
            factors,
            pinv,
            a_bar,
            x_null,
            b_bar,
        })
    }

    pub fn map_back(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.pinv * y + &self.x_null
    }

    /// Solves the transformed problem with FISTA (or directly when `R = 0`).
    pub fn solve(&self, reg: &Regularizer, options: &FistaOptions) -> Result<StandardFormSolution> {
        let op = LinearOperator::dense(self.a_bar.clone());
        let report = match reg {
            Regularizer::None => {
                let y = dense_svd(&self.a_bar, true, true)?
                    .pseudo_inverse(RANK_TOL * self.a_bar.norm().max(f64::MIN_POSITIVE))
                    .map_err(|_| Error::Singular("standard form pseudo-inverse"))?
                    * &self.b_bar;
                let r = &self.b_bar - &self.a_bar * &y;
                SolveResult::direct(y.clone(), y, r.norm())
            }
            _ => fista_solve(&op, &self.b_bar, reg, options)?,
        };
        let y = report.y.clone();
        Ok(StandardFormSolution {
            x: self.map_back(&y),
            y,
            report,
        })
    }
}

/// Reference solution of the general-form problem via the standard form.
pub fn standard_form_solve(
    a: &DMatrix<f64>,
    l: &DMatrix<f64>,
    b: &DVector<f64>,
    reg: &Regularizer,
    options: &FistaOptions,
) -> Result<DVector<f64>> {
    Ok(StandardForm::new(a, l, b)?.solve(reg, options)?.x)
}
