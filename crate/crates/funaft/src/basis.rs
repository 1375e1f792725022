//! B-spline bases, tensor-product bases, and second-order difference
//! penalty matrices.
//!
//! Bases are clamped (boundary knots replicated `degree + 1` times) with
//! equally spaced interior knots, so evaluation anywhere in the domain is a
//! partition of unity and the difference penalty has an interpretable
//! affine null space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("need at least degree + 1 = {min} basis functions, got {k}")]
    TooFewBasisFunctions { k: usize, min: usize },
    #[error("domain [{lo}, {hi}] is degenerate")]
    DegenerateDomain { lo: f64, hi: f64 },
    #[error("second-difference penalty needs K >= 3, got {k}")]
    PenaltyTooSmall { k: usize },
}

/// Univariate clamped B-spline basis on a closed interval.
#[derive(Debug, Serialize, Deserialize)]
pub struct SplineBasis {
    degree: usize,
    num_basis: usize,
    knots: Vec<f64>,
    domain: (f64, f64),
    /// Evaluations requested outside the domain are clamped; this counts them.
    #[serde(skip, default)]
    clamp_count: AtomicU64,
}

impl Clone for SplineBasis {
    fn clone(&self) -> Self {
        Self {
            degree: self.degree,
            num_basis: self.num_basis,
            knots: self.knots.clone(),
            domain: self.domain,
            clamp_count: AtomicU64::new(self.clamp_count.load(Ordering::Relaxed)),
        }
    }
}

/// Equally spaced clamped basis: `k - degree - 1` interior knots, boundary
/// knots replicated `degree + 1` times.
pub fn make_bspline_basis(
    domain: (f64, f64),
    k: usize,
    degree: usize,
) -> Result<SplineBasis, BasisError> {
    let (lo, hi) = domain;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(BasisError::DegenerateDomain { lo, hi });
    }
    if k < degree + 1 {
        return Err(BasisError::TooFewBasisFunctions { k, min: degree + 1 });
    }
    let n_interior = k - degree - 1;
    let h = (hi - lo) / (n_interior + 1) as f64;
    let mut knots = Vec::with_capacity(k + degree + 1);
    knots.extend(std::iter::repeat(lo).take(degree + 1));
    for j in 1..=n_interior {
        knots.push(lo + h * j as f64);
    }
    knots.extend(std::iter::repeat(hi).take(degree + 1));
    Ok(SplineBasis {
        degree,
        num_basis: k,
        knots,
        domain,
        clamp_count: AtomicU64::new(0),
    })
}

impl SplineBasis {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// How many evaluations have been clamped to the domain boundary.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_count.load(Ordering::Relaxed)
    }

    /// All `K` basis values at `s` via the Cox–de Boor recursion.
    /// Out-of-domain arguments are clamped to the nearer boundary.
    pub fn eval(&self, s: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_basis);
        self.eval_into(s, &mut out);
        out
    }

    /// As [`eval`](Self::eval) but writing into a caller-provided vector.
    pub fn eval_into(&self, s: f64, out: &mut DVector<f64>) {
        debug_assert_eq!(out.len(), self.num_basis);
        out.fill(0.0);
        let (lo, hi) = self.domain;
        let t = if s < lo || s > hi {
            self.clamp_count.fetch_add(1, Ordering::Relaxed);
            s.clamp(lo, hi)
        } else {
            s
        };
        let span = self.find_span(t);
        let d = self.degree;

        // Cox–de Boor: compute the degree+1 nonzero values on this span.
        let mut values = vec![0.0; d + 1];
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        values[0] = 1.0;
        for j in 1..=d {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = values[r] / denom;
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        for (r, &v) in values.iter().enumerate() {
            out[span - d + r] = v;
        }
    }

    /// Index of the knot span containing `t`, restricted to non-degenerate
    /// spans so the recursion never divides by zero.
    fn find_span(&self, t: f64) -> usize {
        let d = self.degree;
        let last = self.num_basis - 1;
        if t >= self.domain.1 {
            return last;
        }
        let interior = &self.knots[d..=self.num_basis];
        let count = interior.partition_point(|&k| k <= t);
        (d + count.saturating_sub(1)).min(last)
    }
}

/// Tensor-product basis: column (j, k) evaluates to `B_j(s) · B_k(x)`.
/// Columns are laid out row-major in j, i.e. index `j * K_X + k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorBasis {
    pub s_basis: SplineBasis,
    pub x_basis: SplineBasis,
}

impl TensorBasis {
    pub fn num_columns(&self) -> usize {
        self.s_basis.num_basis() * self.x_basis.num_basis()
    }

    /// All `K_S · K_X` products at `(s, x)`.
    pub fn eval(&self, s: f64, x: f64) -> DVector<f64> {
        let bs = self.s_basis.eval(s);
        let bx = self.x_basis.eval(x);
        let kx = self.x_basis.num_basis();
        let mut out = DVector::zeros(self.num_columns());
        for j in 0..self.s_basis.num_basis() {
            if bs[j] == 0.0 {
                continue;
            }
            for k in 0..kx {
                out[j * kx + k] = bs[j] * bx[k];
            }
        }
        out
    }
}

/// Symmetric positive-semidefinite roughness penalty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyMatrix {
    pub matrix: DMatrix<f64>,
    pub null_space_dim: usize,
}

/// Second-order difference penalty `D = Δ₂ᵀΔ₂` with affine null space.
pub fn make_penalty(k: usize) -> Result<PenaltyMatrix, BasisError> {
    if k < 3 {
        return Err(BasisError::PenaltyTooSmall { k });
    }
    let mut delta = DMatrix::zeros(k - 2, k);
    for r in 0..k - 2 {
        delta[(r, r)] = 1.0;
        delta[(r, r + 1)] = -2.0;
        delta[(r, r + 2)] = 1.0;
    }
    Ok(PenaltyMatrix {
        matrix: delta.transpose() * &delta,
        null_space_dim: 2,
    })
}

/// Kronecker-sum penalty `D_S ⊗ I + I ⊗ D_X` for tensor coefficients,
/// penalizing roughness in both directions under one shared smoothing
/// parameter. Its null space is the bilinear coefficient patterns (dim 4).
pub fn make_tensor_penalty(tb: &TensorBasis) -> Result<PenaltyMatrix, BasisError> {
    let ks = tb.s_basis.num_basis();
    let kx = tb.x_basis.num_basis();
    let d_s = make_penalty(ks)?.matrix;
    let d_x = make_penalty(kx)?.matrix;
    let eye_s = DMatrix::identity(ks, ks);
    let eye_x = DMatrix::identity(kx, kx);
    Ok(PenaltyMatrix {
        matrix: d_s.kronecker(&eye_x) + eye_s.kronecker(&d_x),
        null_space_dim: 4,
    })
}
