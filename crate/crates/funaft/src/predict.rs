//! Coefficient reconstruction, subject-level survival prediction, and
//! uncertainty quantification by nonparametric bootstrap or Wald
//! approximation.
//!
//! Coefficient functions are reported on the original functional domain
//! with the normalization Jacobian folded in, so `exp(∫ β̂ ds)` on the
//! reported scale equals the multiplicative survival-time change for a
//! unit shift of the whole covariate.

use crate::basis::BasisError;
use crate::dataset::{Subject, SurvivalDataset};
use crate::design::DesignError;
use crate::fitter::{
    bfgs_maximize, BasisMeta, FitError, FittedModel, ModelKind, OptimizerSettings,
};
use crate::likelihood::{log_survival, Family, LikelihoodError, LikelihoodProblem, ParamVector};
use crate::numeric::{linspace, quantile_sorted, trapezoid};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("this operation needs a {expected:?} model, got {got:?}")]
    WrongModelKind { expected: ModelKind, got: ModelKind },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("time grid must be positive and strictly ascending")]
    BadTimeGrid,
    #[error("bootstrap needs at least 50 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("subject `{id}`: grid point {s} outside the model domain [{lo}, {hi}]")]
    SubjectOutsideDomain { id: String, s: f64, lo: f64, hi: f64 },
    #[error("bootstrap could not draw a resample with at least one event")]
    DegenerateResampling,
    #[error("penalized Hessian is not negative definite; use the bootstrap instead")]
    HessianNotNegativeDefinite,
}

/// Estimated weight function on a grid, optionally with pointwise bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientCurve {
    pub s_grid: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub lower95: Option<Vec<f64>>,
    pub upper95: Option<Vec<f64>>,
    /// exp(∫ β̂ ds): multiplicative survival-time change for a unit shift
    /// of the whole functional covariate.
    pub exp_integral: f64,
}

/// Estimated coefficient surface on a grid (rows indexed by s).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientSurface {
    pub s_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub f_hat: Vec<Vec<f64>>,
}

/// Predicted survival curve for one subject.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub id: String,
    pub t_grid: Vec<f64>,
    pub s_hat: Vec<f64>,
}

/// Point estimate with a 95% interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScalarInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Output of [`bootstrap_ci`] / [`wald_ci`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceSummary {
    /// Pointwise intervals on the weight function (linear models only).
    pub curve: Option<CoefficientCurve>,
    pub gamma: Vec<ScalarInterval>,
    pub sigma: ScalarInterval,
    pub method: String,
    /// Resamples redrawn because they contained no events (bootstrap only).
    pub zero_event_redraws: u64,
}

fn domain_scale(model: &FittedModel) -> f64 {
    let (lo, hi) = model.s_domain;
    if hi > lo {
        1.0 / (hi - lo)
    } else {
        1.0
    }
}

/// Weight-function values on an even `n_points` grid over the original
/// domain, from an arbitrary coefficient vector. The 1/(hi−lo) Jacobian
/// keeps ∫ X β̂ ds on the original scale equal to the fitted predictor
/// contribution.
fn curve_values(model: &FittedModel, b: &[f64], s_grid: &[f64]) -> Result<Vec<f64>, PredictError> {
    let BasisMeta::Linear { basis } = &model.basis else {
        return Err(PredictError::WrongModelKind {
            expected: ModelKind::Lfaft,
            got: model.kind,
        });
    };
    let scale = domain_scale(model);
    Ok(s_grid
        .iter()
        .map(|&s| {
            let u = model.normalize_s(s);
            basis
                .eval(u)
                .iter()
                .zip(b)
                .map(|(phi, coef)| phi * coef)
                .sum::<f64>()
                * scale
        })
        .collect())
}

/// Reconstruct the estimated weight function of a linear model.
pub fn coef_curve(model: &FittedModel, n_points: usize) -> Result<CoefficientCurve, PredictError> {
    let (lo, hi) = model.s_domain;
    let s_grid = linspace(lo, hi, n_points.max(2));
    let beta_hat = curve_values(model, &model.params.b, &s_grid)?;
    let exp_integral = trapezoid(&s_grid, &beta_hat).exp();
    Ok(CoefficientCurve {
        s_grid,
        beta_hat,
        lower95: None,
        upper95: None,
        exp_integral,
    })
}

/// Reconstruct the estimated coefficient surface of an additive model,
/// shifted so its mean against the pooled empirical x distribution is zero
/// at every s (the reporting convention matching the fitting constraint).
pub fn coef_surface(
    model: &FittedModel,
    n_s: usize,
    n_x: usize,
) -> Result<CoefficientSurface, PredictError> {
    let BasisMeta::Additive { s_basis, x_basis } = &model.basis else {
        return Err(PredictError::WrongModelKind {
            expected: ModelKind::Afaft,
            got: model.kind,
        });
    };
    let (lo, hi) = model.s_domain;
    let s_grid = linspace(lo, hi, n_s.max(2));
    let (xlo, xhi) = x_basis.domain();
    let x_grid = linspace(xlo, xhi, n_x.max(2));
    let kx = x_basis.num_basis();
    let scale = domain_scale(model);
    let marginal = model.x_marginal.as_deref().unwrap_or(&[]);

    let mut f_hat = Vec::with_capacity(s_grid.len());
    for &s in &s_grid {
        let u = model.normalize_s(s);
        let bs = s_basis.eval(u);
        // Per-s shift: surface averaged over the pooled x distribution.
        let mut shift = 0.0;
        if marginal.len() == kx {
            for j in 0..s_basis.num_basis() {
                for k in 0..kx {
                    shift += model.params.b[j * kx + k] * bs[j] * marginal[k];
                }
            }
        }
        let mut row = Vec::with_capacity(x_grid.len());
        for &x in &x_grid {
            let bx = x_basis.eval(x);
            let mut value = 0.0;
            for j in 0..s_basis.num_basis() {
                if bs[j] == 0.0 {
                    continue;
                }
                for k in 0..kx {
                    value += model.params.b[j * kx + k] * bs[j] * bx[k];
                }
            }
            row.push((value - shift) * scale);
        }
        f_hat.push(row);
    }
    Ok(CoefficientSurface {
        s_grid,
        x_grid,
        f_hat,
    })
}

/// Predicted survival curve for one subject over `t_grid`.
pub fn predict_survival(
    model: &FittedModel,
    subject: &Subject,
    t_grid: &[f64],
) -> Result<SurvivalCurve, PredictError> {
    // t = 0 is allowed (S = 1 there); negative or non-ascending grids are not.
    if t_grid.is_empty()
        || t_grid[0] < 0.0
        || t_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(PredictError::BadTimeGrid);
    }
    let (lo, hi) = model.s_domain;
    let slack = 1e-9 * (hi - lo).max(1.0);
    for &s in &subject.grid {
        if s < lo - slack || s > hi + slack {
            return Err(PredictError::SubjectOutsideDomain {
                id: subject.id.clone(),
                s,
                lo,
                hi,
            });
        }
    }
    let eta = model.linear_predictor(subject)?;
    let sigma = model.params.sigma();
    let s_hat = t_grid
        .iter()
        .map(|&t| {
            if t == 0.0 {
                Ok(1.0)
            } else {
                log_survival(model.family, t, eta, sigma).map(f64::exp)
            }
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(SurvivalCurve {
        id: subject.id.clone(),
        t_grid: t_grid.to_vec(),
        s_hat,
    })
}

struct ResampleDraw {
    theta: DVector<f64>,
    redraws: u64,
}

/// Refit machinery shared by the bootstrap resamples: the full training
/// design is built once and resamples select rows from it.
struct RefitContext {
    full: DMatrix<f64>,
    penalty: DMatrix<f64>,
    log_times: Vec<f64>,
    events: Vec<bool>,
    family: Family,
    num_gamma: usize,
    lambda: f64,
    origin: DVector<f64>,
    settings: OptimizerSettings,
}

impl RefitContext {
    fn new(model: &FittedModel, data: &SurvivalDataset) -> Result<Self, PredictError> {
        let design = model.design_for(data)?;
        Ok(RefitContext {
            full: design.full_matrix(),
            penalty: design.penalty.clone(),
            log_times: data.subjects.iter().map(|s| s.time.ln()).collect(),
            events: data.subjects.iter().map(|s| s.event).collect(),
            family: model.family,
            num_gamma: model.params.gamma.len(),
            lambda: model.lambda,
            origin: model.params.pack(),
            settings: OptimizerSettings::default(),
        })
    }

    fn refit(&self, indices: &[usize]) -> Result<DVector<f64>, FitError> {
        let m = self.full.ncols();
        let mut rows = DMatrix::zeros(indices.len(), m);
        let mut log_times = Vec::with_capacity(indices.len());
        let mut events = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            rows.row_mut(r).copy_from(&self.full.row(i));
            log_times.push(self.log_times[i]);
            events.push(self.events[i]);
        }
        let problem = LikelihoodProblem::from_parts(
            rows,
            self.penalty.clone(),
            log_times,
            events,
            self.family,
            self.num_gamma,
        );
        let fit = bfgs_maximize(
            |theta| problem.value_grad(theta, self.lambda),
            &self.origin,
            &self.settings,
        )?;
        Ok(fit.x)
    }

    fn draw(&self, n: usize, seed: u64) -> Result<ResampleDraw, PredictError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut redraws = 0u64;
        loop {
            let indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            if indices.iter().any(|&i| self.events[i]) {
                let theta = self.refit(&indices)?;
                return Ok(ResampleDraw { theta, redraws });
            }
            redraws += 1;
            if redraws > 1000 {
                return Err(PredictError::DegenerateResampling);
            }
        }
    }
}

fn percentile_interval(samples: &mut Vec<f64>, estimate: f64) -> ScalarInterval {
    samples.sort_by(f64::total_cmp);
    ScalarInterval {
        estimate,
        lower: quantile_sorted(samples, 0.025),
        upper: quantile_sorted(samples, 0.975),
    }
}

/// Nonparametric bootstrap: `b` subject-level resamples with replacement,
/// each refit at the model's selected λ, percentile 2.5/97.5 intervals.
/// Resample r draws from its own RNG stream derived from `seed`, so results
/// are reproducible for a fixed seed no matter how many worker threads run.
pub fn bootstrap_ci(
    model: &FittedModel,
    data: &SurvivalDataset,
    b: usize,
    seed: u64,
    n_points: usize,
) -> Result<InferenceSummary, PredictError> {
    if b < 50 {
        return Err(PredictError::TooFewResamples(b));
    }
    let ctx = RefitContext::new(model, data)?;
    let n = data.len();
    let draws: Vec<Result<ResampleDraw, PredictError>> = (0..b)
        .into_par_iter()
        .map(|r| ctx.draw(n, crate::numeric::derive_seed(seed, r as u64)))
        .collect();

    let num_gamma = model.params.gamma.len();
    let mut redraws = 0u64;
    let mut gamma_samples: Vec<Vec<f64>> = vec![Vec::with_capacity(b); num_gamma];
    let mut sigma_samples: Vec<f64> = Vec::with_capacity(b);
    let mut curve_samples: Vec<Vec<f64>> = Vec::new();
    let is_linear = model.kind == ModelKind::Lfaft;
    let (lo, hi) = model.s_domain;
    let s_grid = linspace(lo, hi, n_points.max(2));

    for draw in draws {
        let draw = draw?;
        redraws += draw.redraws;
        let params = ParamVector::unpack(&draw.theta, num_gamma);
        for (g, sample) in params.gamma.iter().zip(gamma_samples.iter_mut()) {
            sample.push(*g);
        }
        sigma_samples.push(params.sigma());
        if is_linear {
            curve_samples.push(curve_values(model, &params.b, &s_grid)?);
        }
    }

    let gamma = model
        .params
        .gamma
        .iter()
        .zip(gamma_samples.iter_mut())
        .map(|(est, samples)| percentile_interval(samples, *est))
        .collect();
    let sigma = percentile_interval(&mut sigma_samples, model.params.sigma());

    let curve = if is_linear {
        let mut base = coef_curve(model, n_points)?;
        let mut lower = Vec::with_capacity(s_grid.len());
        let mut upper = Vec::with_capacity(s_grid.len());
        for j in 0..s_grid.len() {
            let mut column: Vec<f64> = curve_samples.iter().map(|c| c[j]).collect();
            column.sort_by(f64::total_cmp);
            lower.push(quantile_sorted(&column, 0.025));
            upper.push(quantile_sorted(&column, 0.975));
        }
        base.lower95 = Some(lower);
        base.upper95 = Some(upper);
        Some(base)
    } else {
        None
    };

    Ok(InferenceSummary {
        curve,
        gamma,
        sigma,
        method: "bootstrap_percentile".to_string(),
        zero_event_redraws: redraws,
    })
}

/// Wald intervals from the observed information (negative Hessian of the
/// penalized log-likelihood at the fit, conditional on the selected λ).
/// The weight-function variance follows from the delta rule over the basis
/// row; σ is handled on the log scale and exponentiated.
pub fn wald_ci(
    model: &FittedModel,
    data: &SurvivalDataset,
    n_points: usize,
) -> Result<InferenceSummary, PredictError> {
    let design = model.design_for(data)?;
    let problem = LikelihoodProblem::new(&design, data, model.family);
    let theta = model.params.pack();
    let hessian = problem.hessian(&theta, model.lambda);
    let info = -hessian;
    let Some(chol) = info.clone().cholesky() else {
        return Err(PredictError::HessianNotNegativeDefinite);
    };
    let cov = chol.inverse();

    let num_gamma = model.params.gamma.len();
    let z95 = 1.959963984540054;
    let gamma = (0..num_gamma)
        .map(|i| {
            let se = cov[(i, i)].max(0.0).sqrt();
            ScalarInterval {
                estimate: model.params.gamma[i],
                lower: model.params.gamma[i] - z95 * se,
                upper: model.params.gamma[i] + z95 * se,
            }
        })
        .collect();

    let m = theta.len() - 1;
    let log_sigma_se = cov[(m, m)].max(0.0).sqrt();
    let sigma = ScalarInterval {
        estimate: model.params.sigma(),
        lower: (model.params.log_sigma - z95 * log_sigma_se).exp(),
        upper: (model.params.log_sigma + z95 * log_sigma_se).exp(),
    };

    let curve = match &model.basis {
        BasisMeta::Linear { basis } => {
            let mut base = coef_curve(model, n_points)?;
            let scale = domain_scale(model);
            let b_cov = cov.view((num_gamma, num_gamma), (basis.num_basis(), basis.num_basis()));
            let mut lower = Vec::with_capacity(base.s_grid.len());
            let mut upper = Vec::with_capacity(base.s_grid.len());
            for (idx, &s) in base.s_grid.iter().enumerate() {
                let row = basis.eval(model.normalize_s(s)) * scale;
                let var = (row.transpose() * b_cov * &row)[0].max(0.0);
                let se = var.sqrt();
                lower.push(base.beta_hat[idx] - z95 * se);
                upper.push(base.beta_hat[idx] + z95 * se);
            }
            base.lower95 = Some(lower);
            base.upper95 = Some(upper);
            Some(base)
        }
        BasisMeta::Additive { .. } => None,
    };

    Ok(InferenceSummary {
        curve,
        gamma,
        sigma,
        method: "wald".to_string(),
        zero_event_redraws: 0,
    })
}
