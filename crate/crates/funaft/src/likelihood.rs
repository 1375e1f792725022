//! Error-family definitions (log-normal, log-logistic), the penalized
//! log-likelihood, and its analytic gradient in (γ, b, log σ).
//!
//! All densities and survival functions are evaluated in log space. The
//! scale parameter is optimized as log σ so the whole parameter vector is
//! unconstrained.

use crate::dataset::SurvivalDataset;
use crate::design::DesignMatrix;
use crate::numeric::{norm_hazard, norm_log_sf, sigmoid, softplus, LOG_2PI};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error("survival quantities need t > 0, got {t}")]
    NonPositiveTime { t: f64 },
    #[error("scale must be positive, got {sigma}")]
    NonPositiveScale { sigma: f64 },
}

/// AFT error distribution on the log-time scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// ε standard normal: log T ~ N(η, σ²).
    LogNormal,
    /// ε standard logistic: T log-logistic with α = exp(η), κ = 1/σ.
    LogLogistic,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::LogNormal => write!(f, "lognormal"),
            Family::LogLogistic => write!(f, "loglogistic"),
        }
    }
}

/// Exponent guard: |κ(log t − η)| is clamped here before entering the
/// logistic helpers, mirroring the exp overflow bound.
const EXP_CLAMP: f64 = 700.0;

fn clamp_w(w: f64, guard: Option<&AtomicU64>) -> f64 {
    if w.abs() > EXP_CLAMP {
        if let Some(counter) = guard {
            counter.fetch_add(1, Ordering::Relaxed);
        }
        w.clamp(-EXP_CLAMP, EXP_CLAMP)
    } else {
        w
    }
}

fn check_args(t: f64, sigma: f64) -> Result<(), LikelihoodError> {
    if !(t > 0.0) {
        return Err(LikelihoodError::NonPositiveTime { t });
    }
    if !(sigma > 0.0) {
        return Err(LikelihoodError::NonPositiveScale { sigma });
    }
    Ok(())
}

/// log f(t | η, σ) for the given family.
pub fn log_density(family: Family, t: f64, eta: f64, sigma: f64) -> Result<f64, LikelihoodError> {
    check_args(t, sigma)?;
    let log_t = t.ln();
    Ok(match family {
        Family::LogNormal => {
            let z = (log_t - eta) / sigma;
            -log_t - sigma.ln() - 0.5 * LOG_2PI - 0.5 * z * z
        }
        Family::LogLogistic => {
            let kappa = 1.0 / sigma;
            let w = clamp_w(kappa * (log_t - eta), None);
            kappa.ln() + w - log_t - 2.0 * softplus(w)
        }
    })
}

/// log S(t | η, σ) for the given family.
pub fn log_survival(family: Family, t: f64, eta: f64, sigma: f64) -> Result<f64, LikelihoodError> {
    check_args(t, sigma)?;
    let log_t = t.ln();
    Ok(match family {
        Family::LogNormal => norm_log_sf((log_t - eta) / sigma),
        Family::LogLogistic => {
            let w = clamp_w((log_t - eta) / sigma, None);
            -softplus(w)
        }
    })
}

/// Model parameters: scalar effects (intercept first), spline coefficients,
/// and the scale on the log scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamVector {
    pub gamma: Vec<f64>,
    pub b: Vec<f64>,
    pub log_sigma: f64,
}

impl ParamVector {
    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub fn num_coef(&self) -> usize {
        self.gamma.len() + self.b.len()
    }

    /// Flatten to [γ..., b..., log σ] for the optimizer.
    pub fn pack(&self) -> DVector<f64> {
        let mut theta = DVector::zeros(self.num_coef() + 1);
        for (i, g) in self.gamma.iter().enumerate() {
            theta[i] = *g;
        }
        for (i, b) in self.b.iter().enumerate() {
            theta[self.gamma.len() + i] = *b;
        }
        theta[self.num_coef()] = self.log_sigma;
        theta
    }

    /// Inverse of [`pack`](Self::pack) given the scalar-block width.
    pub fn unpack(theta: &DVector<f64>, num_gamma: usize) -> Self {
        let m = theta.len() - 1;
        ParamVector {
            gamma: theta.iter().take(num_gamma).copied().collect(),
            b: theta.iter().take(m).skip(num_gamma).copied().collect(),
            log_sigma: theta[m],
        }
    }
}

/// One subject's log-likelihood term with first derivatives in (η, log σ)
/// and the exact negative second derivative in η.
#[derive(Debug, Clone, Copy)]
struct TermDerivs {
    value: f64,
    d_eta: f64,
    d_log_sigma: f64,
    neg_d2_eta: f64,
}

fn event_term(family: Family, log_t: f64, eta: f64, sigma: f64, guard: &AtomicU64) -> TermDerivs {
    match family {
        Family::LogNormal => {
            let z = (log_t - eta) / sigma;
            TermDerivs {
                value: -log_t - sigma.ln() - 0.5 * LOG_2PI - 0.5 * z * z,
                d_eta: z / sigma,
                d_log_sigma: z * z - 1.0,
                neg_d2_eta: 1.0 / (sigma * sigma),
            }
        }
        Family::LogLogistic => {
            let kappa = 1.0 / sigma;
            let w = clamp_w(kappa * (log_t - eta), Some(guard));
            let p = sigmoid(w);
            TermDerivs {
                value: kappa.ln() + w - log_t - 2.0 * softplus(w),
                d_eta: -kappa * (1.0 - 2.0 * p),
                d_log_sigma: -1.0 - w * (1.0 - 2.0 * p),
                neg_d2_eta: 2.0 * kappa * kappa * p * (1.0 - p),
            }
        }
    }
}

fn censored_term(
    family: Family,
    log_t: f64,
    eta: f64,
    sigma: f64,
    guard: &AtomicU64,
) -> TermDerivs {
    match family {
        Family::LogNormal => {
            let z = (log_t - eta) / sigma;
            let h = norm_hazard(z);
            TermDerivs {
                value: norm_log_sf(z),
                d_eta: h / sigma,
                d_log_sigma: z * h,
                neg_d2_eta: h * (h - z) / (sigma * sigma),
            }
        }
        Family::LogLogistic => {
            let kappa = 1.0 / sigma;
            let w = clamp_w(kappa * (log_t - eta), Some(guard));
            let p = sigmoid(w);
            TermDerivs {
                value: -softplus(w),
                d_eta: kappa * p,
                d_log_sigma: w * p,
                neg_d2_eta: kappa * kappa * p * (1.0 - p),
            }
        }
    }
}

/// Prepared penalized-likelihood evaluations over a fixed design and dataset.
/// The smoothing parameter is an argument so one problem serves a whole
/// λ path.
pub struct LikelihoodProblem {
    full: DMatrix<f64>,
    penalty: DMatrix<f64>,
    log_times: Vec<f64>,
    events: Vec<bool>,
    family: Family,
    num_gamma: usize,
    guard_count: AtomicU64,
}

impl LikelihoodProblem {
    pub fn new(design: &DesignMatrix, data: &SurvivalDataset, family: Family) -> Self {
        assert_eq!(design.num_rows(), data.len(), "design/data row mismatch");
        Self::from_parts(
            design.full_matrix(),
            design.penalty.clone(),
            data.subjects.iter().map(|s| s.time.ln()).collect(),
            data.subjects.iter().map(|s| s.event).collect(),
            family,
            design.num_scalar_cols(),
        )
    }

    /// Assemble directly from a prebuilt design; used by bootstrap refits
    /// that select rows out of an existing full matrix.
    pub fn from_parts(
        full: DMatrix<f64>,
        penalty: DMatrix<f64>,
        log_times: Vec<f64>,
        events: Vec<bool>,
        family: Family,
        num_gamma: usize,
    ) -> Self {
        assert_eq!(full.nrows(), log_times.len());
        assert_eq!(full.nrows(), events.len());
        assert_eq!(full.ncols(), penalty.nrows());
        LikelihoodProblem {
            full,
            penalty,
            log_times,
            events,
            family,
            num_gamma,
            guard_count: AtomicU64::new(0),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn num_subjects(&self) -> usize {
        self.log_times.len()
    }

    /// Coefficient count (γ plus b), excluding log σ.
    pub fn num_coef(&self) -> usize {
        self.full.ncols()
    }

    pub fn num_gamma(&self) -> usize {
        self.num_gamma
    }

    /// How many logistic exponent clamps have fired on this problem.
    pub fn guard_count(&self) -> u64 {
        self.guard_count.load(Ordering::Relaxed)
    }

    fn linear_predictor(&self, theta: &DVector<f64>) -> DVector<f64> {
        let coef = theta.rows(0, self.num_coef());
        &self.full * coef
    }

    fn penalty_quadratic(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let coef = theta.rows(0, self.num_coef()).into_owned();
        let d_coef = &self.penalty * &coef;
        ((coef.transpose() * &d_coef)[0], d_coef)
    }

    /// Penalized log-likelihood at packed parameters `theta` = [γ, b, log σ].
    /// Non-finite linear predictors yield −∞ so the optimizer rejects the step.
    pub fn value(&self, theta: &DVector<f64>, lambda: f64) -> f64 {
        let sigma = theta[theta.len() - 1].exp();
        if !sigma.is_finite() || sigma <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let eta = self.linear_predictor(theta);
        let mut total = 0.0;
        for i in 0..self.num_subjects() {
            if !eta[i].is_finite() {
                return f64::NEG_INFINITY;
            }
            let term = if self.events[i] {
                event_term(self.family, self.log_times[i], eta[i], sigma, &self.guard_count)
            } else {
                censored_term(self.family, self.log_times[i], eta[i], sigma, &self.guard_count)
            };
            total += term.value;
        }
        if !total.is_finite() {
            return f64::NEG_INFINITY;
        }
        let (quad, _) = self.penalty_quadratic(theta);
        total - lambda * quad
    }

    /// Penalized log-likelihood and its analytic gradient.
    pub fn value_grad(&self, theta: &DVector<f64>, lambda: f64) -> (f64, DVector<f64>) {
        let m = self.num_coef();
        let sigma = theta[m].exp();
        if !sigma.is_finite() || sigma <= 0.0 {
            return (f64::NEG_INFINITY, DVector::zeros(m + 1));
        }
        let eta = self.linear_predictor(theta);
        let mut total = 0.0;
        let mut g_eta = DVector::zeros(self.num_subjects());
        let mut g_log_sigma = 0.0;
        for i in 0..self.num_subjects() {
            if !eta[i].is_finite() {
                return (f64::NEG_INFINITY, DVector::zeros(m + 1));
            }
            let term = if self.events[i] {
                event_term(self.family, self.log_times[i], eta[i], sigma, &self.guard_count)
            } else {
                censored_term(self.family, self.log_times[i], eta[i], sigma, &self.guard_count)
            };
            total += term.value;
            g_eta[i] = term.d_eta;
            g_log_sigma += term.d_log_sigma;
        }
        if !total.is_finite() {
            return (f64::NEG_INFINITY, DVector::zeros(m + 1));
        }
        let (quad, d_coef) = self.penalty_quadratic(theta);
        let mut grad = DVector::zeros(m + 1);
        let coef_grad = self.full.tr_mul(&g_eta) - 2.0 * lambda * &d_coef;
        grad.rows_mut(0, m).copy_from(&coef_grad);
        grad[m] = g_log_sigma;
        (total - lambda * quad, grad)
    }

    /// Exact per-subject curvature weights w_i = −∂²ℓ_i/∂η_i², events and
    /// censored subjects alike; the diagonal of W in the effective-df trace.
    pub fn eta_curvatures(&self, theta: &DVector<f64>) -> DVector<f64> {
        let sigma = theta[theta.len() - 1].exp();
        let eta = self.linear_predictor(theta);
        DVector::from_fn(self.num_subjects(), |i, _| {
            let term = if self.events[i] {
                event_term(self.family, self.log_times[i], eta[i], sigma, &self.guard_count)
            } else {
                censored_term(self.family, self.log_times[i], eta[i], sigma, &self.guard_count)
            };
            term.neg_d2_eta
        })
    }

    /// Hessian of the penalized log-likelihood by central finite differences
    /// of the analytic gradient, symmetrized.
    pub fn hessian(&self, theta: &DVector<f64>, lambda: f64) -> DMatrix<f64> {
        let dim = theta.len();
        let mut hess = DMatrix::zeros(dim, dim);
        let mut probe = theta.clone();
        for j in 0..dim {
            let step = 1e-5 * theta[j].abs().max(1.0);
            probe[j] = theta[j] + step;
            let (_, g_plus) = self.value_grad(&probe, lambda);
            probe[j] = theta[j] - step;
            let (_, g_minus) = self.value_grad(&probe, lambda);
            probe[j] = theta[j];
            let col = (g_plus - g_minus) / (2.0 * step);
            hess.column_mut(j).copy_from(&col);
        }
        // Symmetrize FD noise away.
        let ht = hess.transpose();
        (hess + ht) * 0.5
    }

    /// Reference to the zero-padded penalty (scalar block unpenalized).
    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    /// Reference to the concatenated [scalar | functional] design.
    pub fn full_design(&self) -> &DMatrix<f64> {
        &self.full
    }
}

/// Spec-shaped convenience wrapper over [`LikelihoodProblem::value`].
pub fn penalized_loglik(
    design: &DesignMatrix,
    data: &SurvivalDataset,
    params: &ParamVector,
    family: Family,
    lambda: f64,
) -> f64 {
    LikelihoodProblem::new(design, data, family).value(&params.pack(), lambda)
}

/// Spec-shaped convenience wrapper over [`LikelihoodProblem::value_grad`].
pub fn gradient(
    design: &DesignMatrix,
    data: &SurvivalDataset,
    params: &ParamVector,
    family: Family,
    lambda: f64,
) -> DVector<f64> {
    LikelihoodProblem::new(design, data, family)
        .value_grad(&params.pack(), lambda)
        .1
}

/// Spec-shaped convenience wrapper over [`LikelihoodProblem::hessian`].
pub fn hessian(
    design: &DesignMatrix,
    data: &SurvivalDataset,
    params: &ParamVector,
    family: Family,
    lambda: f64,
) -> DMatrix<f64> {
    LikelihoodProblem::new(design, data, family).hessian(&params.pack(), lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_bspline_basis, make_penalty};
    use crate::dataset::Subject;
    use crate::design::{build_linear_design, QuadratureKind};
    use crate::numeric::linspace;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lognormal_density_at_median() {
        // t = e^η kills the quadratic term.
        let (eta, sigma): (f64, f64) = (1.3, 0.7);
        let got = log_density(Family::LogNormal, eta.exp(), eta, sigma).unwrap();
        let expected = -eta - sigma.ln() - 0.5 * LOG_2PI;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn loglogistic_density_unit_case() {
        // σ = 1, η = 0, t = 1: f(1) = 1/4.
        let got = log_density(Family::LogLogistic, 1.0, 0.0, 1.0).unwrap();
        assert!((got - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn survival_is_half_at_the_median() {
        let half = 0.5f64.ln();
        let s_ln = log_survival(Family::LogNormal, 2.0f64.exp(), 2.0, 0.6).unwrap();
        assert!((s_ln - half).abs() < 1e-12);
        // α = exp(η) is the log-logistic median.
        let s_ll = log_survival(Family::LogLogistic, 1.4f64.exp(), 1.4, 0.3).unwrap();
        assert!((s_ll - half).abs() < 1e-12);
    }

    #[test]
    fn lognormal_deep_tail_stays_finite() {
        // (log t − η)/σ = 10.
        let got = log_survival(Family::LogNormal, 10.0f64.exp(), 0.0, 1.0).unwrap();
        assert!((got - (-53.231285150512470578)).abs() < 1e-9);
        // Far deeper tails remain finite.
        let deep = log_survival(Family::LogNormal, 60.0f64.exp(), 0.0, 1.0).unwrap();
        assert!(deep.is_finite() && deep < -1000.0);
    }

    #[test]
    fn nonpositive_time_is_rejected() {
        assert!(log_density(Family::LogNormal, 0.0, 0.0, 1.0).is_err());
        assert!(log_survival(Family::LogLogistic, -1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn density_is_negative_derivative_of_survival() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for family in [Family::LogNormal, Family::LogLogistic] {
            for _ in 0..20 {
                let eta: f64 = rng.random_range(-1.0..1.5);
                let sigma: f64 = rng.random_range(0.3..2.0);
                let t: f64 = rng.random_range(0.2..6.0);
                let h = 1e-5 * t;
                let s_plus = log_survival(family, t + h, eta, sigma).unwrap().exp();
                let s_minus = log_survival(family, t - h, eta, sigma).unwrap().exp();
                let fd = -(s_plus - s_minus) / (2.0 * h);
                let f = log_density(family, t, eta, sigma).unwrap().exp();
                assert!(
                    (f - fd).abs() < 1e-6 * f.abs().max(1e-8),
                    "{family:?} t={t} eta={eta} sigma={sigma}: {f} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn survival_decreases_from_one_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for family in [Family::LogNormal, Family::LogLogistic] {
            for _ in 0..100 {
                let eta: f64 = rng.random_range(-2.0..2.0);
                let sigma: f64 = rng.random_range(0.2..3.0);
                let grid = [1e-8, 0.01, 0.1, 1.0, 10.0, 1e3, 1e8];
                let mut prev = f64::INFINITY;
                for &t in &grid {
                    let ls = log_survival(family, t, eta, sigma).unwrap();
                    assert!(ls <= prev + 1e-14);
                    prev = ls;
                }
                // The log-logistic tail is heavy (polynomial with power 1/σ),
                // so the limits need wider excursions than the log-normal.
                let early = log_survival(family, 1e-30, eta, sigma).unwrap().exp();
                assert!(early > 1.0 - 1e-6);
                let late = log_survival(family, 1e30, eta, sigma).unwrap().exp();
                assert!(late < 1e-3);
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        // Substituting u = log t gives ∫ f(e^u) e^u du over a wide window;
        // Simpson quadrature as an oracle.
        for family in [Family::LogNormal, Family::LogLogistic] {
            for (eta, sigma) in [(0.0, 1.0), (1.2, 0.5), (-0.7, 2.0)] {
                let (lo, hi) = (eta - 60.0 * sigma, eta + 60.0 * sigma);
                let n = 20_001;
                let h = (hi - lo) / (n - 1) as f64;
                let integrand = |u: f64| {
                    log_density(family, u.exp(), eta, sigma)
                        .map(|ld| (ld + u).exp())
                        .unwrap_or(0.0)
                };
                let mut acc = integrand(lo) + integrand(hi);
                for i in 1..n - 1 {
                    let u = lo + h * i as f64;
                    acc += integrand(u) * if i % 2 == 1 { 4.0 } else { 2.0 };
                }
                let integral = acc * h / 3.0;
                assert!(
                    (integral - 1.0).abs() < 1e-4,
                    "{family:?} eta={eta} sigma={sigma}: ∫f = {integral}"
                );
            }
        }
    }

    fn toy_problem(family: Family) -> (crate::design::DesignMatrix, SurvivalDataset) {
        // Fixed 3-subject design emulating an already-collapsed functional
        // block; matches the frozen hand computation below.
        let subjects = vec![
            Subject {
                id: "1".into(),
                time: 1.5,
                event: true,
                scalars: vec![],
                grid: vec![0.0, 1.0],
                values: vec![0.0, 0.0],
            },
            Subject {
                id: "2".into(),
                time: 2.2,
                event: false,
                scalars: vec![],
                grid: vec![0.0, 1.0],
                values: vec![0.0, 0.0],
            },
            Subject {
                id: "3".into(),
                time: 0.9,
                event: true,
                scalars: vec![],
                grid: vec![0.0, 1.0],
                values: vec![0.0, 0.0],
            },
        ];
        let data = SurvivalDataset::new(subjects, vec![]).unwrap();
        let functional = DMatrix::from_row_slice(
            3,
            4,
            &[
                0.2, -0.1, 0.3, 0.05, //
                0.0, 0.4, -0.2, 0.1, //
                -0.3, 0.2, 0.1, -0.4,
            ],
        );
        let scalar = DMatrix::from_element(3, 1, 1.0);
        let pen = make_penalty(4).unwrap();
        let mut penalty = DMatrix::zeros(5, 5);
        penalty.view_mut((1, 1), (4, 4)).copy_from(&pen.matrix);
        let design = crate::design::DesignMatrix {
            functional,
            scalar,
            penalty,
            penalty_null_dim: 2,
            column_centers: None,
            x_marginal: None,
        };
        let _ = family;
        (design, data)
    }

    fn toy_params() -> ParamVector {
        ParamVector {
            gamma: vec![0.7],
            b: vec![0.5, -0.3, 0.2, 0.1],
            log_sigma: 0.8f64.ln(),
        }
    }

    #[test]
    fn toy_penalized_loglik_matches_hand_computation() {
        // Frozen with 50-digit arithmetic from the closed-form family
        // expressions; etas (0.895, 0.55, 0.47), bᵀDb = 2.05, λ = 2.5.
        let (design, data) = toy_problem(Family::LogNormal);
        let params = toy_params();
        let got_ln = penalized_loglik(&design, &data, &params, Family::LogNormal, 2.5);
        assert!((got_ln - (-8.222720886010893)).abs() < 1e-10, "{got_ln}");
        let got_ll = penalized_loglik(&design, &data, &params, Family::LogLogistic, 2.5);
        assert!((got_ll - (-8.823458183169883)).abs() < 1e-10, "{got_ll}");
    }

    #[test]
    fn lambda_zero_drops_the_penalty() {
        let (design, data) = toy_problem(Family::LogNormal);
        let params = toy_params();
        let problem = LikelihoodProblem::new(&design, &data, Family::LogNormal);
        let with_pen = problem.value(&params.pack(), 2.5);
        let without = problem.value(&params.pack(), 0.0);
        assert!((without - with_pen - 2.5 * 2.05).abs() < 1e-10);
    }

    #[test]
    fn fully_censored_sums_survival_terms_only() {
        let (design, mut data) = toy_problem(Family::LogNormal);
        for s in &mut data.subjects {
            s.event = false;
        }
        let params = toy_params();
        let problem = LikelihoodProblem::new(&design, &data, Family::LogNormal);
        let got = problem.value(&params.pack(), 1.0);
        let mut expected = -1.0 * 2.05;
        let sigma = params.sigma();
        let etas = [0.895, 0.55, 0.47];
        for (s, eta) in data.subjects.iter().zip(etas) {
            expected += log_survival(Family::LogNormal, s.time, eta, sigma).unwrap();
        }
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let basis = make_bspline_basis((0.0, 1.0), 6, 3).unwrap();
        let pen = make_penalty(6).unwrap();
        let grid = linspace(0.0, 1.0, 25);
        let subjects: Vec<Subject> = (0..40)
            .map(|i| {
                let values: Vec<f64> = grid
                    .iter()
                    .map(|s| rng.random_range(-1.0..1.0) + s.sin())
                    .collect();
                Subject {
                    id: format!("s{i}"),
                    time: rng.random_range(0.3..8.0),
                    event: i % 3 != 0,
                    scalars: vec![rng.random_range(-1.0..1.0)],
                    grid: grid.clone(),
                    values,
                }
            })
            .collect();
        let data = SurvivalDataset::new(subjects, vec!["z1".into()]).unwrap();
        let design = build_linear_design(&data, &basis, &pen, QuadratureKind::Riemann).unwrap();

        for family in [Family::LogNormal, Family::LogLogistic] {
            let problem = LikelihoodProblem::new(&design, &data, family);
            for trial in 0..20 {
                let theta = DVector::from_fn(problem.num_coef() + 1, |j, _| {
                    if j == problem.num_coef() {
                        rng.random_range(-0.8..0.8)
                    } else {
                        rng.random_range(-0.6..0.6)
                    }
                });
                let lambda = rng.random_range(0.0..10.0);
                let (_, grad) = problem.value_grad(&theta, lambda);
                let mut probe = theta.clone();
                for j in 0..theta.len() {
                    let step = 1e-6 * theta[j].abs().max(1.0);
                    probe[j] = theta[j] + step;
                    let up = problem.value(&probe, lambda);
                    probe[j] = theta[j] - step;
                    let down = problem.value(&probe, lambda);
                    probe[j] = theta[j];
                    let fd = (up - down) / (2.0 * step);
                    let scale = grad[j].abs().max(fd.abs()).max(1e-4);
                    assert!(
                        (grad[j] - fd).abs() / scale < 1e-5,
                        "{family:?} trial {trial} component {j}: {} vs {fd}",
                        grad[j]
                    );
                }
            }
        }
    }

    #[test]
    fn hessian_is_symmetric_and_coef_block_concave_for_lognormal() {
        let (design, data) = toy_problem(Family::LogNormal);
        let params = toy_params();
        let problem = LikelihoodProblem::new(&design, &data, Family::LogNormal);
        let hess = problem.hessian(&params.pack(), 0.7);
        let asym = (&hess - hess.transpose()).abs().max();
        assert!(asym < 1e-8);
        // Log-normal likelihood is concave in (γ, b) at fixed σ.
        let coef_block = hess.view((0, 0), (5, 5)).into_owned();
        let eig = coef_block.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e < 1e-8), "{eig:?}");
    }

    #[test]
    fn nonfinite_linear_predictor_reports_neg_infinity() {
        let (design, data) = toy_problem(Family::LogNormal);
        let problem = LikelihoodProblem::new(&design, &data, Family::LogNormal);
        let mut theta = toy_params().pack();
        theta[1] = f64::INFINITY;
        assert_eq!(problem.value(&theta, 1.0), f64::NEG_INFINITY);
        let (v, g) = problem.value_grad(&theta, 1.0);
        assert_eq!(v, f64::NEG_INFINITY);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn curvature_weights_match_finite_difference_of_eta_gradient() {
        let (design, data) = toy_problem(Family::LogNormal);
        for family in [Family::LogNormal, Family::LogLogistic] {
            let problem = LikelihoodProblem::new(&design, &data, family);
            let params = toy_params();
            let sigma = params.sigma();
            let etas = [0.895_f64, 0.55, 0.47];
            let w = problem.eta_curvatures(&params.pack());
            let guard = AtomicU64::new(0);
            for (i, (&eta, subject)) in etas.iter().zip(&data.subjects).enumerate() {
                let log_t = subject.time.ln();
                let h = 1e-6;
                let term = |e: f64| {
                    if subject.event {
                        event_term(family, log_t, e, sigma, &guard).d_eta
                    } else {
                        censored_term(family, log_t, e, sigma, &guard).d_eta
                    }
                };
                let fd = -(term(eta + h) - term(eta - h)) / (2.0 * h);
                assert!(
                    (w[i] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                    "{family:?} subject {i}: {} vs {fd}",
                    w[i]
                );
                assert!(w[i] > 0.0);
            }
        }
    }
}
