//! Quasi-Newton maximization of the penalized log-likelihood, smoothing
//! selection by generalized cross-validation over a logarithmic λ grid, and
//! end-to-end fit orchestration for the linear and additive models.
//!
//! Fits along the λ grid are warm-started from the previous solution, which
//! cuts the iteration count several-fold without moving the optima; the
//! acceptance suite checks path independence directly.

use crate::basis::{
    make_bspline_basis, make_penalty, make_tensor_penalty, BasisError, PenaltyMatrix,
    SplineBasis, TensorBasis,
};
use crate::dataset::{DataError, Subject, SurvivalDataset};
use crate::design::{
    additive_features, build_additive_design, build_linear_design, linear_features,
    DesignError, DesignMatrix, QuadratureKind,
};
use crate::likelihood::{Family, LikelihoodProblem, ParamVector};
use crate::numeric::log_space;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("objective is not finite at the initial point")]
    NonFiniteInit,
    #[error("dataset has no observed events; all observations censored")]
    AllCensored,
    #[error("tensor basis needs at least 3 functions per margin, got {ks} x {kx}")]
    TensorTooSmall { ks: usize, kx: usize },
    #[error("λ grid needs at least 2 points and 0 < lo < hi, got {size} over ({lo}, {hi})")]
    BadLambdaGrid { size: usize, lo: f64, hi: f64 },
    #[error("every λ fit failed:\n{details}")]
    AllLambdaFailed { details: String },
    #[error("cannot {action} model file {path}: {source}")]
    ModelIo {
        action: &'static str,
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse model file {path}: {source}")]
    ModelParse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// BFGS stopping rules and Wolfe constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub max_iter: usize,
    /// Stop when the max-abs gradient component falls below this.
    pub grad_tol: f64,
    /// Stop when |Δf| ≤ rel_f_tol · (1 + |f|).
    pub rel_f_tol: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iter: 500,
            grad_tol: 1e-6,
            rel_f_tol: 1e-8,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
        }
    }
}

/// Outcome of a BFGS run.
#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the initial point and after each accepted step;
    /// nondecreasing by the sufficient-increase condition.
    pub objective_trace: Vec<f64>,
}

struct LineSearchHit {
    alpha: f64,
    value: f64,
    grad: DVector<f64>,
}

/// Strong-Wolfe line search (bracket then zoom) on a minimization objective.
/// `dir_deriv0` must be negative. Non-finite trial values shrink the step.
fn wolfe_line_search<F>(
    eval: &F,
    x: &DVector<f64>,
    direction: &DVector<f64>,
    f0: f64,
    dir_deriv0: f64,
    c1: f64,
    c2: f64,
) -> Option<LineSearchHit>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let phi = |alpha: f64| {
        let point = x + direction * alpha;
        eval(&point)
    };

    let zoom = |mut lo: f64,
                mut f_lo: f64,
                mut g_lo: Option<DVector<f64>>,
                mut hi: f64|
     -> Option<LineSearchHit> {
        for _ in 0..60 {
            let alpha = 0.5 * (lo + hi);
            let (f_a, g_a) = phi(alpha);
            if !f_a.is_finite() || f_a > f0 + c1 * alpha * dir_deriv0 || f_a >= f_lo {
                hi = alpha;
            } else {
                let d_a = g_a.dot(direction);
                if d_a.abs() <= -c2 * dir_deriv0 {
                    return Some(LineSearchHit {
                        alpha,
                        value: f_a,
                        grad: g_a,
                    });
                }
                if d_a * (hi - lo) >= 0.0 {
                    hi = lo;
                }
                lo = alpha;
                f_lo = f_a;
                g_lo = Some(g_a);
            }
            if (hi - lo).abs() <= 1e-14 * lo.abs().max(1.0) {
                break;
            }
        }
        // Interval collapsed: accept a plain sufficient-decrease point if any.
        if f_lo < f0 {
            g_lo.map(|grad| LineSearchHit {
                alpha: lo,
                value: f_lo,
                grad,
            })
        } else {
            None
        }
    };

    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut g_prev: Option<DVector<f64>> = None;
    let mut alpha = 1.0;
    for iter in 0..30 {
        let (f_a, g_a) = phi(alpha);
        if !f_a.is_finite() || f_a > f0 + c1 * alpha * dir_deriv0 || (iter > 0 && f_a >= f_prev) {
            return zoom(alpha_prev, f_prev, g_prev, alpha);
        }
        let d_a = g_a.dot(direction);
        if d_a.abs() <= -c2 * dir_deriv0 {
            return Some(LineSearchHit {
                alpha,
                value: f_a,
                grad: g_a,
            });
        }
        if d_a >= 0.0 {
            return zoom(alpha, f_a, Some(g_a.clone()), alpha_prev);
        }
        alpha_prev = alpha;
        f_prev = f_a;
        g_prev = Some(g_a);
        alpha = (alpha * 2.0).min(1e6);
    }
    None
}

/// Maximize a differentiable objective by BFGS with a strong-Wolfe line
/// search. The callable returns the value and gradient of the objective to
/// be MAXIMIZED; internally the negation is minimized.
pub fn bfgs_maximize<F>(
    objective: F,
    init: &DVector<f64>,
    settings: &OptimizerSettings,
) -> Result<BfgsResult, FitError>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let eval = |x: &DVector<f64>| {
        let (f, g) = objective(x);
        (-f, -g)
    };
    let dim = init.len();
    let mut x = init.clone();
    let (mut f, mut g) = eval(&x);
    if !f.is_finite() {
        return Err(FitError::NonFiniteInit);
    }
    let mut trace = vec![-f];
    if g.amax() < settings.grad_tol {
        return Ok(BfgsResult {
            x,
            value: -f,
            iterations: 0,
            converged: true,
            objective_trace: trace,
        });
    }

    let mut h_inv = DMatrix::identity(dim, dim);
    let mut first_step = true;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..settings.max_iter {
        let mut direction = -(&h_inv * &g);
        let mut dir_deriv = direction.dot(&g);
        if dir_deriv >= 0.0 {
            // Curvature got corrupted; restart from steepest descent.
            h_inv = DMatrix::identity(dim, dim);
            first_step = true;
            direction = -g.clone();
            dir_deriv = direction.dot(&g);
        }
        let Some(hit) = wolfe_line_search(
            &eval,
            &x,
            &direction,
            f,
            dir_deriv,
            settings.wolfe_c1,
            settings.wolfe_c2,
        ) else {
            break; // leave converged = false; best point retained
        };
        iterations += 1;
        let step = &direction * hit.alpha;
        let y = &hit.grad - &g;
        let sy = step.dot(&y);
        let f_prev = f;
        x += &step;
        f = hit.value;
        g = hit.grad;
        trace.push(-f);

        if g.amax() < settings.grad_tol
            || (f_prev - f).abs() <= settings.rel_f_tol * (1.0 + f.abs())
        {
            converged = true;
            break;
        }

        if sy > 1e-12 * step.norm() * y.norm() {
            if first_step {
                // Scale the seed inverse Hessian (Nocedal & Wright eq. 6.20).
                let scale = sy / y.dot(&y);
                h_inv = DMatrix::identity(dim, dim) * scale;
                first_step = false;
            }
            let rho = 1.0 / sy;
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ, expanded to
            // H − ρ(s (Hy)ᵀ + (Hy) sᵀ) + ρ(1 + ρ yᵀHy) s sᵀ.
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            let s_hy = &step * hy.transpose();
            h_inv -= (&s_hy + s_hy.transpose()) * rho;
            h_inv += &step * step.transpose() * (rho * (1.0 + rho * yhy));
            // symmetrize drift
            let ht = h_inv.transpose();
            h_inv = (&h_inv + &ht) * 0.5;
        }
    }

    Ok(BfgsResult {
        x,
        value: -f,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Effective degrees of freedom tr((CᵀWC + λD)⁻¹ CᵀWC), with W the exact
/// per-subject curvature of the unpenalized log-likelihood at `theta`.
/// A ridge jitter of 1e-10·tr is added (with a warning) if the factorization
/// meets a singular matrix.
pub fn effective_df(problem: &LikelihoodProblem, theta: &DVector<f64>, lambda: f64) -> f64 {
    let design = problem.full_design();
    let weights = problem.eta_curvatures(theta);
    let mut weighted = design.clone();
    for (mut row, w) in weighted.row_iter_mut().zip(weights.iter()) {
        row *= *w;
    }
    let info = design.tr_mul(&weighted);
    let mut system = &info + problem.penalty() * lambda;
    if !system.iter().all(|v| v.is_finite()) {
        return f64::NAN;
    }
    let mut jitter = 1e-10 * system.trace().abs().max(1e-300);
    for _ in 0..40 {
        if let Some(chol) = system.clone().cholesky() {
            return chol.solve(&info).trace();
        }
        log::warn!("singular CᵀWC + λD; adding ridge jitter {jitter:.3e}");
        for i in 0..system.nrows() {
            system[(i, i)] += jitter;
        }
        jitter *= 10.0;
    }
    f64::NAN
}

/// One entry of the smoothing-selection path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaRecord {
    pub lambda: f64,
    pub gcv: f64,
    pub df: f64,
    /// Unpenalized log-likelihood at the penalized optimum.
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Fit at one λ and score it: GCV(λ) = −ℓ_np/n / (1 − df/n)², +∞ when
/// df ≥ n.
pub fn gcv_score(
    problem: &LikelihoodProblem,
    lambda: f64,
    init: &DVector<f64>,
    settings: &OptimizerSettings,
) -> Result<(LambdaRecord, DVector<f64>), FitError> {
    let fit = bfgs_maximize(|theta| problem.value_grad(theta, lambda), init, settings)?;
    let loglik = problem.value(&fit.x, 0.0);
    let df = effective_df(problem, &fit.x, lambda);
    let n = problem.num_subjects() as f64;
    let gcv = if !df.is_finite() || df >= n {
        f64::INFINITY
    } else {
        let denom = 1.0 - df / n;
        -(loglik / n) / (denom * denom)
    };
    Ok((
        LambdaRecord {
            lambda,
            gcv,
            df,
            loglik,
            converged: fit.converged,
            iterations: fit.iterations,
        },
        fit.x,
    ))
}

pub(crate) struct PathResult {
    pub records: Vec<LambdaRecord>,
    pub best_index: usize,
    pub best_theta: DVector<f64>,
}

/// Ascending warm-started sweep of the λ grid; picks the GCV minimizer.
pub(crate) fn select_lambda_path(
    problem: &LikelihoodProblem,
    grid: &[f64],
    init: &DVector<f64>,
    settings: &OptimizerSettings,
) -> Result<PathResult, FitError> {
    let mut records = Vec::with_capacity(grid.len());
    let mut warm = init.clone();
    let mut best: Option<(usize, f64, DVector<f64>)> = None;
    let mut failures = Vec::new();
    for (idx, &lambda) in grid.iter().enumerate() {
        match gcv_score(problem, lambda, &warm, settings) {
            Ok((record, theta)) => {
                warm = theta.clone();
                let is_better = match &best {
                    Some((_, gcv, _)) => record.gcv < *gcv,
                    None => record.gcv.is_finite(),
                };
                if is_better {
                    best = Some((idx, record.gcv, theta));
                }
                records.push(record);
            }
            Err(err) => {
                failures.push(format!("λ = {lambda:.4e}: {err}"));
                records.push(LambdaRecord {
                    lambda,
                    gcv: f64::INFINITY,
                    df: f64::NAN,
                    loglik: f64::NAN,
                    converged: false,
                    iterations: 0,
                });
            }
        }
    }
    match best {
        Some((best_index, _, best_theta)) => Ok(PathResult {
            records,
            best_index,
            best_theta,
        }),
        None => Err(FitError::AllLambdaFailed {
            details: failures.join("\n"),
        }),
    }
}

/// Which model structure a [`FittedModel`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lfaft,
    Afaft,
}

/// Frozen basis metadata inside a fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BasisMeta {
    Linear {
        basis: SplineBasis,
    },
    Additive {
        s_basis: SplineBasis,
        x_basis: SplineBasis,
    },
}

/// Mean curve removed from the functional covariate before fitting
/// (`--center-x`), kept for reuse on prediction data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CenterCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

/// A fitted functional AFT model with everything needed to predict,
/// report coefficients, and run inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub family: Family,
    pub params: ParamVector,
    pub lambda: f64,
    pub df: f64,
    pub loglik_unpenalized: f64,
    pub converged: bool,
    pub n_iter: usize,
    pub gcv_path: Vec<LambdaRecord>,
    pub basis: BasisMeta,
    /// Functional domain of the training data before normalization.
    pub s_domain: (f64, f64),
    pub scalar_names: Vec<String>,
    pub quadrature: QuadratureKind,
    /// Column means removed from the additive functional block.
    pub column_centers: Option<Vec<f64>>,
    /// Pooled empirical x-basis means, for mean-zero surface reporting.
    pub x_marginal: Option<Vec<f64>>,
    /// Mean curve removed from X before fitting, when centering was on.
    pub x_center_curve: Option<CenterCurve>,
    pub n_subjects: usize,
}

/// Knobs shared by both fit entry points.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub quadrature: QuadratureKind,
    pub lambda_grid_size: usize,
    pub lambda_range: (f64, f64),
    pub optimizer: OptimizerSettings,
    /// Subtract the pointwise mean curve from X before fitting.
    pub center_x: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            quadrature: QuadratureKind::Auto,
            lambda_grid_size: 20,
            lambda_range: (1.0, 1e4),
            optimizer: OptimizerSettings::default(),
            center_x: false,
        }
    }
}

impl FitOptions {
    fn lambda_grid(&self) -> Result<Vec<f64>, FitError> {
        let (lo, hi) = self.lambda_range;
        if self.lambda_grid_size < 2 || !(lo > 0.0) || !(hi > lo) {
            return Err(FitError::BadLambdaGrid {
                size: self.lambda_grid_size,
                lo,
                hi,
            });
        }
        Ok(log_space(lo, hi, self.lambda_grid_size))
    }
}

/// Starting point: intercept at the event-only mean of log Y, slopes and
/// spline coefficients at zero, log σ at the event-only log-sd of log Y.
fn initial_theta(data: &SurvivalDataset, num_coef: usize) -> DVector<f64> {
    let event_logs: Vec<f64> = data
        .subjects
        .iter()
        .filter(|s| s.event)
        .map(|s| s.time.ln())
        .collect();
    let mean = event_logs.iter().sum::<f64>() / event_logs.len() as f64;
    let sd = if event_logs.len() >= 2 {
        let ss: f64 = event_logs.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (event_logs.len() - 1) as f64).sqrt().max(1e-3)
    } else {
        1.0
    };
    let mut theta = DVector::zeros(num_coef + 1);
    theta[0] = mean;
    theta[num_coef] = sd.ln();
    theta
}

fn prepared_data(
    data: &SurvivalDataset,
    center_x: bool,
) -> Result<(SurvivalDataset, (f64, f64), Option<CenterCurve>), FitError> {
    if data.num_events() == 0 {
        return Err(FitError::AllCensored);
    }
    let normalized = data.normalize_domain()?;
    let s_domain = normalized.source_domain.unwrap_or(normalized.domain);
    if !center_x {
        return Ok((normalized, s_domain, None));
    }
    let (centered, mean) = normalized.center_functional()?;
    let curve = CenterCurve {
        grid: centered.subjects[0].grid.clone(),
        values: mean,
    };
    Ok((centered, s_domain, Some(curve)))
}

fn assemble_model(
    kind: ModelKind,
    family: Family,
    basis: BasisMeta,
    design: &DesignMatrix,
    data: &SurvivalDataset,
    s_domain: (f64, f64),
    quadrature: QuadratureKind,
    center_curve: Option<CenterCurve>,
    path: PathResult,
) -> FittedModel {
    let best = &path.records[path.best_index];
    FittedModel {
        kind,
        family,
        params: ParamVector::unpack(&path.best_theta, design.num_scalar_cols()),
        lambda: best.lambda,
        df: best.df,
        loglik_unpenalized: best.loglik,
        converged: best.converged,
        n_iter: best.iterations,
        gcv_path: path.records.clone(),
        basis,
        s_domain,
        scalar_names: data.scalar_names.clone(),
        quadrature,
        column_centers: design.column_centers.as_ref().map(|c| c.iter().copied().collect()),
        x_marginal: design.x_marginal.as_ref().map(|c| c.iter().copied().collect()),
        x_center_curve: center_curve,
        n_subjects: data.len(),
    }
}

/// Fit the linear functional AFT model with `k` cubic B-spline basis
/// functions for the weight function.
pub fn fit_lfaft(
    data: &SurvivalDataset,
    family: Family,
    k: usize,
    options: &FitOptions,
) -> Result<FittedModel, FitError> {
    let (train, s_domain, center_curve) = prepared_data(data, options.center_x)?;
    let basis = make_bspline_basis((0.0, 1.0), k, 3)?;
    let pen = make_penalty(k)?;
    let design = build_linear_design(&train, &basis, &pen, options.quadrature)?;
    let problem = LikelihoodProblem::new(&design, &train, family);
    let grid = options.lambda_grid()?;
    let init = initial_theta(&train, design.num_cols());
    let path = select_lambda_path(&problem, &grid, &init, &options.optimizer)?;
    Ok(assemble_model(
        ModelKind::Lfaft,
        family,
        BasisMeta::Linear { basis },
        &design,
        &train,
        s_domain,
        options.quadrature,
        center_curve,
        path,
    ))
}

/// Fit the additive functional AFT model with a `ks × kx` tensor-product
/// basis for the coefficient surface.
pub fn fit_afaft(
    data: &SurvivalDataset,
    family: Family,
    ks: usize,
    kx: usize,
    options: &FitOptions,
) -> Result<FittedModel, FitError> {
    if ks < 3 || kx < 3 {
        return Err(FitError::TensorTooSmall { ks, kx });
    }
    let (train, s_domain, center_curve) = prepared_data(data, options.center_x)?;
    let tb = TensorBasis {
        s_basis: make_bspline_basis((0.0, 1.0), ks, 3)?,
        x_basis: make_bspline_basis(x_domain(&train), kx, 3)?,
    };
    let pen = make_tensor_penalty(&tb)?;
    let design = build_additive_design(&train, &tb, &pen, options.quadrature)?;
    let problem = LikelihoodProblem::new(&design, &train, family);
    let grid = options.lambda_grid()?;
    let init = initial_theta(&train, design.num_cols());
    let path = select_lambda_path(&problem, &grid, &init, &options.optimizer)?;
    Ok(assemble_model(
        ModelKind::Afaft,
        family,
        BasisMeta::Additive {
            s_basis: tb.s_basis,
            x_basis: tb.x_basis,
        },
        &design,
        &train,
        s_domain,
        options.quadrature,
        center_curve,
        path,
    ))
}

/// Empirical range of all functional values, widened by 1% per side so
/// prediction-time values near the boundary stay inside.
fn x_domain(data: &SurvivalDataset) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in &data.subjects {
        for &v in &s.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let width = (hi - lo).max(1e-6);
    (lo - 0.01 * width, hi + 0.01 * width)
}

impl FittedModel {
    /// Total coefficient count (γ plus spline block).
    pub fn num_coef(&self) -> usize {
        self.params.num_coef()
    }

    /// Map a location from the original functional domain onto [0, 1].
    pub fn normalize_s(&self, s: f64) -> f64 {
        let (lo, hi) = self.s_domain;
        if hi > lo {
            ((s - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            s
        }
    }

    /// The penalty matrix this model was fitted under (functional block only).
    pub fn penalty(&self) -> PenaltyMatrix {
        match &self.basis {
            BasisMeta::Linear { basis } => {
                make_penalty(basis.num_basis()).expect("penalty existed at fit time")
            }
            BasisMeta::Additive { s_basis, x_basis } => {
                let tb = TensorBasis {
                    s_basis: s_basis.clone(),
                    x_basis: x_basis.clone(),
                };
                make_tensor_penalty(&tb).expect("penalty existed at fit time")
            }
        }
    }

    /// Normalize a subject onto the model's internal scales: grid mapped to
    /// [0, 1] and, when the model was fitted with centering, the stored mean
    /// curve subtracted (linearly interpolated onto the subject grid).
    pub fn prepare_subject(&self, subject: &Subject) -> Subject {
        let mut prepared = subject.clone();
        for s in &mut prepared.grid {
            *s = self.normalize_s(*s);
        }
        if let Some(center) = &self.x_center_curve {
            for (s, v) in prepared.grid.iter().zip(prepared.values.iter_mut()) {
                *v -= interp_linear(&center.grid, &center.values, *s);
            }
        }
        prepared
    }

    /// Functional feature row for a prepared subject, with the training
    /// column centers applied for the additive model.
    pub fn functional_row(&self, prepared: &Subject) -> Result<DVector<f64>, DesignError> {
        match &self.basis {
            BasisMeta::Linear { basis } => linear_features(prepared, basis, self.quadrature),
            BasisMeta::Additive { s_basis, x_basis } => {
                let tb = TensorBasis {
                    s_basis: s_basis.clone(),
                    x_basis: x_basis.clone(),
                };
                let mut row = additive_features(prepared, &tb, self.quadrature)?;
                if let Some(centers) = &self.column_centers {
                    for (r, c) in row.iter_mut().zip(centers) {
                        *r -= c;
                    }
                }
                Ok(row)
            }
        }
    }

    /// Linear predictor η for one subject on the original data scales.
    pub fn linear_predictor(&self, subject: &Subject) -> Result<f64, DesignError> {
        let prepared = self.prepare_subject(subject);
        let row = self.functional_row(&prepared)?;
        let mut eta = self.params.gamma[0];
        for (g, z) in self.params.gamma.iter().skip(1).zip(&subject.scalars) {
            eta += g * z;
        }
        eta += row
            .iter()
            .zip(&self.params.b)
            .map(|(c, b)| c * b)
            .sum::<f64>();
        Ok(eta)
    }

    /// Rebuild the full training-layout design for a dataset, reusing the
    /// frozen basis, quadrature rule, and (for the additive model) the
    /// training column centers. Used by bootstrap refits and the Wald
    /// Hessian, so resampled designs stay aligned with the original fit.
    pub fn design_for(&self, data: &SurvivalDataset) -> Result<DesignMatrix, FitError> {
        let n = data.len();
        let cols = self.params.b.len();
        let mut functional = DMatrix::zeros(n, cols);
        for (i, subject) in data.subjects.iter().enumerate() {
            let prepared = self.prepare_subject(subject);
            let row = self.functional_row(&prepared)?;
            functional.row_mut(i).copy_from(&row.transpose());
        }
        let d = data.num_scalars();
        let mut scalar = DMatrix::zeros(n, d + 1);
        for (i, subject) in data.subjects.iter().enumerate() {
            scalar[(i, 0)] = 1.0;
            for (j, z) in subject.scalars.iter().enumerate() {
                scalar[(i, j + 1)] = *z;
            }
        }
        let pen = self.penalty();
        let total = scalar.ncols() + cols;
        let mut penalty = DMatrix::zeros(total, total);
        penalty
            .view_mut((scalar.ncols(), scalar.ncols()), (cols, cols))
            .copy_from(&pen.matrix);
        Ok(DesignMatrix {
            functional,
            scalar,
            penalty,
            penalty_null_dim: pen.null_space_dim,
            column_centers: self
                .column_centers
                .as_ref()
                .map(|c| DVector::from_vec(c.clone())),
            x_marginal: self
                .x_marginal
                .as_ref()
                .map(|c| DVector::from_vec(c.clone())),
        })
    }

    /// Serialize to pretty JSON (deterministic field order).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FitError> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|e| FitError::ModelIo {
            action: "write",
            path: path.as_ref().display().to_string(),
            source: e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FittedModel, FitError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| FitError::ModelIo {
            action: "read",
            path: path.as_ref().display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| FitError::ModelParse {
            path: path.as_ref().display().to_string(),
            source: e,
        })
    }
}

/// Piecewise-linear interpolation with flat extrapolation.
pub(crate) fn interp_linear(grid: &[f64], values: &[f64], at: f64) -> f64 {
    debug_assert_eq!(grid.len(), values.len());
    if at <= grid[0] {
        return values[0];
    }
    if at >= grid[grid.len() - 1] {
        return values[values.len() - 1];
    }
    let idx = grid.partition_point(|&g| g <= at);
    let (g0, g1) = (grid[idx - 1], grid[idx]);
    let t = (at - g0) / (g1 - g0);
    values[idx - 1] * (1.0 - t) + values[idx] * t
}
