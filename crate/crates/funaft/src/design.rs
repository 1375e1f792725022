//! Per-subject quadrature that collapses sampled functional covariates into
//! spline feature vectors, for both the linear weight-function model and the
//! tensor-product surface model.

use crate::basis::{BasisError, PenaltyMatrix, SplineBasis, TensorBasis};
use crate::dataset::{Subject, SurvivalDataset};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("quadrature needs at least 2 grid points, got {count}")]
    TooFewPoints { count: usize },
    #[error(
        "subject `{id}`: functional value {value} outside the x-basis domain [{lo}, {hi}]"
    )]
    ValueOutsideXDomain {
        id: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("design has {design} columns but penalty is {penalty}x{penalty}")]
    PenaltyDimensionMismatch { design: usize, penalty: usize },
}

/// Quadrature rule used to discretize the functional integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureKind {
    /// Equal weights 1/p; adequate for even grids over [0, 1].
    Riemann,
    /// Trapezoid weights; handles irregular grids.
    Trapezoid,
    /// Riemann when the grid is even within 1e-9 relative spacing,
    /// trapezoid otherwise.
    Auto,
}

impl QuadratureKind {
    /// Resolve `Auto` against a concrete grid.
    pub fn resolve(self, grid: &[f64]) -> QuadratureKind {
        match self {
            QuadratureKind::Auto => {
                if grid_is_even(grid) {
                    QuadratureKind::Riemann
                } else {
                    QuadratureKind::Trapezoid
                }
            }
            other => other,
        }
    }
}

fn grid_is_even(grid: &[f64]) -> bool {
    if grid.len() < 2 {
        return false;
    }
    let h = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    grid.windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1e-300))
}

/// Quadrature weights for one subject's grid.
pub fn quadrature_weights(grid: &[f64], kind: QuadratureKind) -> Result<Vec<f64>, DesignError> {
    let p = grid.len();
    if p < 2 {
        return Err(DesignError::TooFewPoints { count: p });
    }
    let weights = match kind.resolve(grid) {
        QuadratureKind::Riemann => vec![1.0 / p as f64; p],
        QuadratureKind::Trapezoid => {
            let mut w = vec![0.0; p];
            w[0] = 0.5 * (grid[1] - grid[0]);
            w[p - 1] = 0.5 * (grid[p - 1] - grid[p - 2]);
            for j in 1..p - 1 {
                w[j] = 0.5 * (grid[j + 1] - grid[j - 1]);
            }
            w
        }
        QuadratureKind::Auto => unreachable!("resolved above"),
    };
    Ok(weights)
}

/// Design matrix: quadrature-collapsed functional features next to an
/// intercept-led scalar block, plus the zero-padded roughness penalty.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    /// n × K (or n × K_S·K_X) functional feature block.
    pub functional: DMatrix<f64>,
    /// n × (d + 1) block: intercept column of ones, then scalar covariates.
    pub scalar: DMatrix<f64>,
    /// Penalty over all columns; zero blocks over the scalar columns.
    pub penalty: DMatrix<f64>,
    /// Dimension of the penalty null space within the functional block.
    pub penalty_null_dim: usize,
    /// Column means removed from the functional block (surface model only).
    pub column_centers: Option<DVector<f64>>,
    /// Pooled quadrature-weighted means of the x-basis evaluations
    /// (surface model only); used to report the surface with mean-zero
    /// effects against the empirical x distribution.
    pub x_marginal: Option<DVector<f64>>,
}

impl DesignMatrix {
    pub fn num_rows(&self) -> usize {
        self.scalar.nrows()
    }

    pub fn num_scalar_cols(&self) -> usize {
        self.scalar.ncols()
    }

    pub fn num_functional_cols(&self) -> usize {
        self.functional.ncols()
    }

    pub fn num_cols(&self) -> usize {
        self.num_scalar_cols() + self.num_functional_cols()
    }

    /// Columns of the penalty null space plus the unpenalized scalar block;
    /// the lower bound for effective degrees of freedom.
    pub fn min_df(&self) -> f64 {
        (self.num_scalar_cols() + self.penalty_null_dim) as f64
    }

    /// Concatenated [scalar | functional] matrix.
    pub fn full_matrix(&self) -> DMatrix<f64> {
        let n = self.num_rows();
        let mut full = DMatrix::zeros(n, self.num_cols());
        full.view_mut((0, 0), (n, self.num_scalar_cols()))
            .copy_from(&self.scalar);
        full.view_mut((0, self.num_scalar_cols()), (n, self.num_functional_cols()))
            .copy_from(&self.functional);
        full
    }
}

fn scalar_block(data: &SurvivalDataset) -> DMatrix<f64> {
    let n = data.len();
    let d = data.num_scalars();
    let mut block = DMatrix::zeros(n, d + 1);
    for (i, subject) in data.subjects.iter().enumerate() {
        block[(i, 0)] = 1.0;
        for (j, z) in subject.scalars.iter().enumerate() {
            block[(i, j + 1)] = *z;
        }
    }
    block
}

fn pad_penalty(pen: &PenaltyMatrix, scalar_cols: usize) -> DMatrix<f64> {
    let k = pen.matrix.nrows();
    let total = scalar_cols + k;
    let mut padded = DMatrix::zeros(total, total);
    padded
        .view_mut((scalar_cols, scalar_cols), (k, k))
        .copy_from(&pen.matrix);
    padded
}

/// Linear-model features for a single subject:
/// `C_k = Σ_j q_j X(s_j) B_k(s_j)`.
pub fn linear_features(
    subject: &Subject,
    basis: &SplineBasis,
    rule: QuadratureKind,
) -> Result<DVector<f64>, DesignError> {
    let weights = quadrature_weights(&subject.grid, rule)?;
    let k = basis.num_basis();
    let mut row = DVector::zeros(k);
    let mut scratch = DVector::zeros(k);
    for ((s, x), q) in subject.grid.iter().zip(&subject.values).zip(&weights) {
        basis.eval_into(*s, &mut scratch);
        row.axpy(q * x, &scratch, 1.0);
    }
    Ok(row)
}

/// Build the linear-model design: functional block per Eq.-style quadrature
/// collapse, intercept-led scalar block, zero-padded penalty.
pub fn build_linear_design(
    data: &SurvivalDataset,
    basis: &SplineBasis,
    pen: &PenaltyMatrix,
    rule: QuadratureKind,
) -> Result<DesignMatrix, DesignError> {
    let n = data.len();
    let k = basis.num_basis();
    let mut functional = DMatrix::zeros(n, k);
    for (i, subject) in data.subjects.iter().enumerate() {
        let row = linear_features(subject, basis, rule)?;
        functional.row_mut(i).copy_from(&row.transpose());
    }
    let scalar = scalar_block(data);
    let penalty = pad_penalty(pen, scalar.ncols());
    Ok(DesignMatrix {
        functional,
        scalar,
        penalty,
        penalty_null_dim: pen.null_space_dim,
        column_centers: None,
        x_marginal: None,
    })
}

/// Surface-model features for one subject, uncentered:
/// column (j, k) is `Σ_m q_m B_j(s_m) B_k(X(s_m))`.
pub fn additive_features(
    subject: &Subject,
    tb: &TensorBasis,
    rule: QuadratureKind,
) -> Result<DVector<f64>, DesignError> {
    let weights = quadrature_weights(&subject.grid, rule)?;
    let (xlo, xhi) = tb.x_basis.domain();
    let mut row = DVector::zeros(tb.num_columns());
    for ((s, x), q) in subject.grid.iter().zip(&subject.values).zip(&weights) {
        if *x < xlo || *x > xhi {
            return Err(DesignError::ValueOutsideXDomain {
                id: subject.id.clone(),
                value: *x,
                lo: xlo,
                hi: xhi,
            });
        }
        row.axpy(*q, &tb.eval(*s, *x), 1.0);
    }
    Ok(row)
}

/// Build the surface-model design. Functional columns are centered by their
/// empirical means across subjects, enforcing the sample version of the
/// mean-zero identifiability constraint; the removed means are stored so the
/// intercept interpretation and later predictions stay consistent.
pub fn build_additive_design(
    data: &SurvivalDataset,
    tb: &TensorBasis,
    pen: &PenaltyMatrix,
    rule: QuadratureKind,
) -> Result<DesignMatrix, DesignError> {
    let n = data.len();
    let cols = tb.num_columns();
    if pen.matrix.nrows() != cols {
        return Err(DesignError::PenaltyDimensionMismatch {
            design: cols,
            penalty: pen.matrix.nrows(),
        });
    }
    let mut functional = DMatrix::zeros(n, cols);
    let kx = tb.x_basis.num_basis();
    let mut x_marginal = DVector::zeros(kx);
    let mut total_weight = 0.0;
    for (i, subject) in data.subjects.iter().enumerate() {
        let row = additive_features(subject, tb, rule)?;
        functional.row_mut(i).copy_from(&row.transpose());
        let weights = quadrature_weights(&subject.grid, rule)?;
        for (x, q) in subject.values.iter().zip(&weights) {
            x_marginal.axpy(*q, &tb.x_basis.eval(*x), 1.0);
            total_weight += q;
        }
    }
    x_marginal /= total_weight;

    let mut centers = DVector::zeros(cols);
    for c in 0..cols {
        let mean = functional.column(c).sum() / n as f64;
        centers[c] = mean;
        functional.column_mut(c).add_scalar_mut(-mean);
    }

    let scalar = scalar_block(data);
    let penalty = pad_penalty(pen, scalar.ncols());
    Ok(DesignMatrix {
        functional,
        scalar,
        penalty,
        penalty_null_dim: pen.null_space_dim,
        column_centers: Some(centers),
        x_marginal: Some(x_marginal),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_bspline_basis, make_penalty, make_tensor_penalty};
    use crate::numeric::linspace;

    fn subject(id: &str, grid: Vec<f64>, values: Vec<f64>) -> Subject {
        Subject {
            id: id.into(),
            time: 1.0,
            event: true,
            scalars: vec![],
            grid,
            values,
        }
    }

    fn dataset(subjects: Vec<Subject>) -> SurvivalDataset {
        SurvivalDataset::new(subjects, vec![]).unwrap()
    }

    #[test]
    fn riemann_weights_even_grid() {
        let grid = linspace(0.0, 1.0, 100);
        let w = quadrature_weights(&grid, QuadratureKind::Riemann).unwrap();
        assert!(w.iter().all(|&q| (q - 0.01).abs() < 1e-15));
        // Auto picks riemann on an even grid.
        let auto = quadrature_weights(&grid, QuadratureKind::Auto).unwrap();
        assert_eq!(w, auto);
    }

    #[test]
    fn trapezoid_weights_textbook_case() {
        let w = quadrature_weights(&[0.0, 0.5, 1.0], QuadratureKind::Trapezoid).unwrap();
        assert_eq!(w, vec![0.25, 0.5, 0.25]);
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auto_uses_trapezoid_on_irregular_grids() {
        let grid = [0.0, 0.3, 0.4, 1.0];
        let w = quadrature_weights(&grid, QuadratureKind::Auto).unwrap();
        assert_eq!(w, vec![0.15, 0.2, 0.35, 0.3]);
        assert!(quadrature_weights(&[0.5], QuadratureKind::Auto).is_err());
    }

    #[test]
    fn trapezoid_integrates_quadratic_to_1e4() {
        let grid = linspace(0.0, 1.0, 101);
        let w = quadrature_weights(&grid, QuadratureKind::Trapezoid).unwrap();
        let integral: f64 = grid.iter().zip(&w).map(|(s, q)| q * s * s).sum();
        assert!((integral - 1.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn zero_covariate_gives_zero_row() {
        let basis = make_bspline_basis((0.0, 1.0), 6, 3).unwrap();
        let pen = make_penalty(6).unwrap();
        let data = dataset(vec![subject("a", linspace(0.0, 1.0, 20), vec![0.0; 20])]);
        let design = build_linear_design(&data, &basis, &pen, QuadratureKind::Trapezoid).unwrap();
        assert!(design.functional.iter().all(|&v| v == 0.0));
        assert_eq!(design.scalar[(0, 0)], 1.0);
    }

    #[test]
    fn unit_covariate_recovers_basis_integrals() {
        // X ≡ 1 collapses each column to ∫ B_k; oracle on a dense grid.
        let basis = make_bspline_basis((0.0, 1.0), 7, 3).unwrap();
        let pen = make_penalty(7).unwrap();
        let p = 2000;
        let data = dataset(vec![subject("a", linspace(0.0, 1.0, p), vec![1.0; p])]);
        let design = build_linear_design(&data, &basis, &pen, QuadratureKind::Trapezoid).unwrap();

        let dense = linspace(0.0, 1.0, 100_001);
        for k in 0..7 {
            let vals: Vec<f64> = dense.iter().map(|&s| basis.eval(s)[k]).collect();
            let oracle = crate::numeric::trapezoid(&dense, &vals);
            assert!(
                (design.functional[(0, k)] - oracle).abs() < 1e-4,
                "column {k}: {} vs {}",
                design.functional[(0, k)],
                oracle
            );
        }
    }

    #[test]
    fn riemann_and_trapezoid_agree_on_dense_even_grids() {
        let basis = make_bspline_basis((0.0, 1.0), 6, 3).unwrap();
        let pen = make_penalty(6).unwrap();
        let p = 100;
        let grid = linspace(0.0, 1.0, p);
        // Low-order Fourier mixture, the shape the curve generator produces.
        let tau = 2.0 * std::f64::consts::PI;
        let values: Vec<f64> = grid
            .iter()
            .map(|s| 1.0 + (tau * s).sin() - 0.3 * (2.0 * tau * s).sin())
            .collect();
        let data = dataset(vec![subject("a", grid, values)]);
        let riemann =
            build_linear_design(&data, &basis, &pen, QuadratureKind::Riemann).unwrap();
        let trap =
            build_linear_design(&data, &basis, &pen, QuadratureKind::Trapezoid).unwrap();
        let max_c = riemann.functional.abs().max();
        let max_diff = (&riemann.functional - &trap.functional).abs().max();
        assert!(max_diff < 0.02 * max_c, "diff {max_diff} vs scale {max_c}");
    }

    #[test]
    fn design_is_linear_in_the_covariate() {
        let basis = make_bspline_basis((0.0, 1.0), 6, 3).unwrap();
        let pen = make_penalty(6).unwrap();
        let grid = linspace(0.0, 1.0, 37);
        let x1: Vec<f64> = grid.iter().map(|s| s.cos()).collect();
        let x2: Vec<f64> = grid.iter().map(|s| s * s - 0.4).collect();
        let combo: Vec<f64> = x1
            .iter()
            .zip(&x2)
            .map(|(a, b)| 2.0 * a - 0.7 * b)
            .collect();
        let d1 = build_linear_design(
            &dataset(vec![subject("a", grid.clone(), x1)]),
            &basis,
            &pen,
            QuadratureKind::Trapezoid,
        )
        .unwrap();
        let d2 = build_linear_design(
            &dataset(vec![subject("a", grid.clone(), x2)]),
            &basis,
            &pen,
            QuadratureKind::Trapezoid,
        )
        .unwrap();
        let dc = build_linear_design(
            &dataset(vec![subject("a", grid, combo)]),
            &basis,
            &pen,
            QuadratureKind::Trapezoid,
        )
        .unwrap();
        let expected = 2.0 * d1.functional.row(0) - 0.7 * d2.functional.row(0);
        assert!((dc.functional.row(0) - expected).abs().max() < 1e-12);
    }

    #[test]
    fn refinement_error_decreases_with_grid_density() {
        let basis = make_bspline_basis((0.0, 1.0), 6, 3).unwrap();
        let pen = make_penalty(6).unwrap();
        let curve = |s: f64| (3.0 * s).sin() + 0.5 * s;

        let dense_grid = linspace(0.0, 1.0, 100_001);
        let dense_vals: Vec<f64> = dense_grid.iter().map(|&s| curve(s)).collect();
        let dense = build_linear_design(
            &dataset(vec![subject("d", dense_grid, dense_vals)]),
            &basis,
            &pen,
            QuadratureKind::Trapezoid,
        )
        .unwrap();

        let mut errors = Vec::new();
        for p in [50usize, 100, 500] {
            let grid = linspace(0.0, 1.0, p);
            let vals: Vec<f64> = grid.iter().map(|&s| curve(s)).collect();
            let coarse = build_linear_design(
                &dataset(vec![subject("c", grid, vals)]),
                &basis,
                &pen,
                QuadratureKind::Riemann,
            )
            .unwrap();
            errors.push((coarse.functional.row(0) - dense.functional.row(0)).abs().max());
        }
        assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    }

    #[test]
    fn additive_block_matches_double_loop_oracle_before_centering() {
        let tb = TensorBasis {
            s_basis: make_bspline_basis((0.0, 1.0), 4, 3).unwrap(),
            x_basis: make_bspline_basis((-1.5, 1.5), 4, 3).unwrap(),
        };
        let pen = make_tensor_penalty(&tb).unwrap();
        let grid = linspace(0.0, 1.0, 5);
        let curves = [
            vec![0.3, -0.2, 0.9, -1.1, 0.5],
            vec![1.2, 0.8, 0.1, -0.4, -0.9],
            vec![-0.6, -0.1, 0.2, 0.7, 1.3],
        ];
        let subs: Vec<Subject> = curves
            .iter()
            .enumerate()
            .map(|(i, v)| subject(&format!("s{i}"), grid.clone(), v.clone()))
            .collect();
        let data = dataset(subs);
        let design =
            build_additive_design(&data, &tb, &pen, QuadratureKind::Trapezoid).unwrap();
        let centers = design.column_centers.as_ref().unwrap();

        // Naive summation oracle, independent double loop.
        let w = quadrature_weights(&grid, QuadratureKind::Trapezoid).unwrap();
        for (i, values) in curves.iter().enumerate() {
            for j in 0..4 {
                for k in 0..4 {
                    let mut oracle = 0.0;
                    for (m, (&s, &x)) in grid.iter().zip(values).enumerate() {
                        oracle += w[m] * tb.s_basis.eval(s)[j] * tb.x_basis.eval(x)[k];
                    }
                    let col = j * 4 + k;
                    let uncentered = design.functional[(i, col)] + centers[col];
                    assert!(
                        (uncentered - oracle).abs() < 1e-12,
                        "subject {i} col ({j},{k})"
                    );
                }
            }
        }
    }

    #[test]
    fn centered_columns_have_zero_mean() {
        let tb = TensorBasis {
            s_basis: make_bspline_basis((0.0, 1.0), 4, 3).unwrap(),
            x_basis: make_bspline_basis((-2.0, 2.0), 4, 3).unwrap(),
        };
        let pen = make_tensor_penalty(&tb).unwrap();
        let grid = linspace(0.0, 1.0, 9);
        let subs: Vec<Subject> = (0..5)
            .map(|i| {
                let vals: Vec<f64> = grid
                    .iter()
                    .map(|s| ((i + 1) as f64 * s).sin())
                    .collect();
                subject(&format!("s{i}"), grid.clone(), vals)
            })
            .collect();
        let design = build_additive_design(
            &dataset(subs),
            &tb,
            &pen,
            QuadratureKind::Trapezoid,
        )
        .unwrap();
        for c in 0..design.functional.ncols() {
            let mean = design.functional.column(c).sum() / 5.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn identical_curves_center_to_zero_block() {
        let tb = TensorBasis {
            s_basis: make_bspline_basis((0.0, 1.0), 4, 3).unwrap(),
            x_basis: make_bspline_basis((-2.0, 2.0), 4, 3).unwrap(),
        };
        let pen = make_tensor_penalty(&tb).unwrap();
        let grid = linspace(0.0, 1.0, 11);
        let vals: Vec<f64> = grid.iter().map(|s| (s - 0.3).powi(2)).collect();
        let subs: Vec<Subject> = (0..4)
            .map(|i| subject(&format!("s{i}"), grid.clone(), vals.clone()))
            .collect();
        let design = build_additive_design(
            &dataset(subs),
            &tb,
            &pen,
            QuadratureKind::Trapezoid,
        )
        .unwrap();
        assert!(design.functional.abs().max() < 1e-14);
    }

    #[test]
    fn value_outside_x_domain_names_the_subject() {
        let tb = TensorBasis {
            s_basis: make_bspline_basis((0.0, 1.0), 4, 3).unwrap(),
            x_basis: make_bspline_basis((-1.0, 1.0), 4, 3).unwrap(),
        };
        let pen = make_tensor_penalty(&tb).unwrap();
        let grid = linspace(0.0, 1.0, 4);
        let data = dataset(vec![
            subject("ok", grid.clone(), vec![0.0, 0.5, -0.5, 0.2]),
            subject("wild", grid, vec![0.0, 3.5, -0.5, 0.2]),
        ]);
        match build_additive_design(&data, &tb, &pen, QuadratureKind::Trapezoid) {
            Err(DesignError::ValueOutsideXDomain { id, value, .. }) => {
                assert_eq!(id, "wild");
                assert_eq!(value, 3.5);
            }
            other => panic!("expected ValueOutsideXDomain, got {other:?}"),
        }
    }
}
