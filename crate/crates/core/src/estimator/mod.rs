//! Maximum simulated likelihood fitting, standard errors, information criteria and MSPE.

pub mod optim;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{Dataset, Transformation};
use crate::error::{Error, Result};
use crate::likelihood::{DrawSettings, ModelDesign, ParamKind, SimulatedLikelihood};
use crate::spec::{Dispersion, Distribution, FactorLevel, HeteroRole, ModelSpecification};

pub use optim::{minimize, OptimMethod, OptimOptions, OptimResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub method: OptimMethod,
    pub optim: OptimOptions,
    pub draws: DrawSettings,
    /// Compute the Hessian and standard errors after convergence.
    pub standard_errors: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            method: OptimMethod::Bfgs,
            optim: OptimOptions::default(),
            draws: DrawSettings::default(),
            standard_errors: true,
        }
    }
}

/// One line of a coefficient table, on the reporting scale: spreads and Cholesky diagonals
/// as absolute values, the NB dispersion as alpha.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub name: String,
    pub kind: ParamKind,
    pub transformation: Option<Transformation>,
    pub estimate: f64,
    pub std_err: Option<f64>,
    pub z: Option<f64>,
    pub p: Option<f64>,
}

impl CoefficientRow {
    pub fn stars(&self) -> &'static str {
        significance_stars(self.p)
    }
}

pub fn significance_stars(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.001 => "***",
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        Some(p) if p < 0.1 => ".",
        _ => "",
    }
}

/// Two-sided standard-normal tail probability.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub spec: ModelSpecification,
    /// Estimates on the optimizer scale.
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub n_params: usize,
    pub n_obs: usize,
    pub iterations: usize,
    pub clamp_count: u64,
    /// Standard errors on the optimizer scale, when the Hessian was negative definite.
    pub std_errors: Option<Vec<f64>>,
    pub rows: Vec<CoefficientRow>,
    pub message: Option<String>,
}

impl FitResult {
    fn failure(spec: &ModelSpecification, n_obs: usize, message: String) -> FitResult {
        FitResult {
            spec: spec.clone(),
            theta: Vec::new(),
            loglik: f64::NAN,
            converged: false,
            n_params: 0,
            n_obs,
            iterations: 0,
            clamp_count: 0,
            std_errors: None,
            rows: Vec::new(),
            message: Some(message),
        }
    }

    /// Information criteria, or the +inf sentinel when the fit failed.
    pub fn criteria(&self) -> Criteria {
        if self.converged && self.loglik.is_finite() {
            information_criteria(self.loglik, self.n_params, self.n_obs)
        } else {
            Criteria::sentinel()
        }
    }

    /// Estimated NB dispersion alpha.
    pub fn alpha(&self) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.kind == ParamKind::LogDispersion)
            .map(|r| r.estimate)
    }

    pub fn row(&self, name: &str) -> Option<&CoefficientRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub bic: f64,
    pub aic: f64,
    pub hqic: f64,
    pub caic: f64,
    /// `None` when `n <= k + 1`.
    pub aicc: Option<f64>,
}

impl Criteria {
    pub fn sentinel() -> Criteria {
        Criteria {
            bic: f64::INFINITY,
            aic: f64::INFINITY,
            hqic: f64::INFINITY,
            caic: f64::INFINITY,
            aicc: Some(f64::INFINITY),
        }
    }
}

pub fn information_criteria(loglik: f64, k: usize, n: usize) -> Criteria {
    let kf = k as f64;
    let nf = n as f64;
    let dev = -2.0 * loglik;
    let aic = dev + 2.0 * kf;
    Criteria {
        bic: dev + kf * nf.ln(),
        aic,
        hqic: dev + 2.0 * kf * nf.ln().ln(),
        caic: dev + kf * (nf.ln() + 1.0),
        aicc: (n > k + 1).then(|| aic + 2.0 * kf * (kf + 1.0) / (nf - kf - 1.0)),
    }
}

/// Quantities a search can minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    Bic,
    Aic,
    Hqic,
    Caic,
    Aicc,
    Mspe,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Bic => "BIC",
            ObjectiveKind::Aic => "AIC",
            ObjectiveKind::Hqic => "HQIC",
            ObjectiveKind::Caic => "CAIC",
            ObjectiveKind::Aicc => "AICc",
            ObjectiveKind::Mspe => "MSPE",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bic" => Ok(ObjectiveKind::Bic),
            "aic" => Ok(ObjectiveKind::Aic),
            "hqic" => Ok(ObjectiveKind::Hqic),
            "caic" => Ok(ObjectiveKind::Caic),
            "aicc" => Ok(ObjectiveKind::Aicc),
            "mspe" => Ok(ObjectiveKind::Mspe),
            other => Err(Error::InvalidArgument(format!("unknown objective {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValues {
    pub loglik: f64,
    pub criteria: Criteria,
    /// `None` when there is no held-out data.
    pub mspe: Option<f64>,
}

impl ObjectiveValues {
    pub fn sentinel() -> ObjectiveValues {
        ObjectiveValues {
            loglik: f64::NAN,
            criteria: Criteria::sentinel(),
            mspe: Some(f64::INFINITY),
        }
    }

    /// Value of `kind`; unavailable quantities count as +inf.
    pub fn get(&self, kind: ObjectiveKind) -> f64 {
        let v = match kind {
            ObjectiveKind::Bic => Some(self.criteria.bic),
            ObjectiveKind::Aic => Some(self.criteria.aic),
            ObjectiveKind::Hqic => Some(self.criteria.hqic),
            ObjectiveKind::Caic => Some(self.criteria.caic),
            ObjectiveKind::Aicc => self.criteria.aicc,
            ObjectiveKind::Mspe => self.mspe,
        };
        match v {
            Some(v) if !v.is_nan() => v,
            _ => f64::INFINITY,
        }
    }
}

/// Mean squared difference between counts and predicted means.
pub fn mean_squared_error(y: &[u64], predicted: &[f64]) -> Option<f64> {
    if y.is_empty() || y.len() != predicted.len() {
        return None;
    }
    let s: f64 = y
        .iter()
        .zip(predicted)
        .map(|(&a, &b)| (a as f64 - b).powi(2))
        .sum();
    Some(s / y.len() as f64)
}

/// Held-out MSPE with random coefficients at their expected values. `None` for an empty
/// test set or a failed fit.
pub fn mspe(fit: &FitResult, test: &Dataset) -> Option<f64> {
    if test.n_obs() == 0 || !fit.converged {
        return None;
    }
    let design = ModelDesign::new(&fit.spec, test).ok()?;
    let y = test.y()?;
    mean_squared_error(y, &design.predict_mean(&fit.theta))
}

/// Central-difference Hessian of `f` from function values, step `1e-4 * max(1, |x_i|)`.
pub fn numerical_hessian<F>(mut f: F, x: &[f64]) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let mut out = vec![vec![0.0; n]; n];
    let f0 = f(x);
    let mut p = x.to_vec();
    for i in 0..n {
        p[i] = x[i] + h[i];
        let fp = f(&p);
        p[i] = x[i] - h[i];
        let fm = f(&p);
        p[i] = x[i];
        out[i][i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                p[i] = x[i] + si * h[i];
                p[j] = x[j] + sj * h[j];
                let v = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Hessian from central differences of an analytic gradient. Column `j` differentiates the
/// gradient along coordinate `j`; the result is not symmetrized.
pub fn hessian_from_gradient<G>(mut grad: G, x: &[f64]) -> Vec<Vec<f64>>
where
    G: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut out = vec![vec![0.0; n]; n];
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut p = x.to_vec();
    for j in 0..n {
        let h = 1e-5 * x[j].abs().max(1.0);
        p[j] = x[j] + h;
        grad(&p, &mut gp);
        p[j] = x[j] - h;
        grad(&p, &mut gm);
        p[j] = x[j];
        for i in 0..n {
            out[i][j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    out
}

/// `sqrt(diag((-H)^-1))` for a log-likelihood Hessian `H`; `None` unless `-H` is positive
/// definite.
pub fn standard_errors(hessian: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = hessian.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let m = DMatrix::from_fn(n, n, |i, j| -0.5 * (hessian[i][j] + hessian[j][i]));
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let inv = m.cholesky()?.inverse();
    let se: Vec<f64> = (0..n).map(|i| inv[(i, i)].sqrt()).collect();
    se.iter().all(|v| v.is_finite() && *v > 0.0).then_some(se)
}

fn mean_count(ds: &Dataset) -> f64 {
    let y = ds.y().unwrap_or(&[]);
    if y.is_empty() {
        return 1.0;
    }
    (y.iter().sum::<u64>() as f64 / y.len() as f64).max(1e-3)
}

/// Poisson fixed-effects fit of every factor that carries a coefficient; gives starting
/// values for the full model, keyed by factor index.
fn prefit(spec: &ModelSpecification, ds: &Dataset, settings: &FitSettings) -> Option<(f64, Vec<Option<f64>>)> {
    let mut fixed = spec.clone();
    fixed.dispersion = Dispersion::Poisson;
    for g in fixed.factors.iter_mut() {
        g.level = match g.level {
            FactorLevel::Off => FactorLevel::Off,
            FactorLevel::HeteroMeans if g.role == HeteroRole::MeanCovariate => FactorLevel::Off,
            _ => FactorLevel::Fixed,
        };
    }
    let design = ModelDesign::new(&fixed, ds).ok()?;
    let sl = SimulatedLikelihood::new(&design, &settings.draws).ok()?;
    let mut x0 = vec![0.0; design.n_params()];
    x0[0] = mean_count(ds).ln();
    let r = optimize(&sl, &x0, settings);
    if !r.value.is_finite() {
        return None;
    }
    let mut by_factor = vec![None; spec.factors.len()];
    let mut j = 1;
    for (k, g) in fixed.factors.iter().enumerate() {
        if g.level == FactorLevel::Fixed {
            by_factor[k] = Some(r.x[j]);
            j += 1;
        }
    }
    Some((r.x[0], by_factor))
}

fn starting_values(spec: &ModelSpecification, ds: &Dataset, design: &ModelDesign, settings: &FitSettings) -> Vec<f64> {
    let mut theta = vec![0.0; design.n_params()];
    let pure_poisson = !design.has_random() && spec.dispersion == Dispersion::Poisson;
    let (intercept, by_factor) = if pure_poisson {
        (mean_count(ds).ln(), vec![None; spec.factors.len()])
    } else {
        prefit(spec, ds, settings).unwrap_or((mean_count(ds).ln(), vec![None; spec.factors.len()]))
    };
    theta[0] = intercept;
    let mut j = 1;
    for (k, g) in spec.factors.iter().enumerate() {
        if g.level == FactorLevel::Fixed {
            theta[j] = by_factor[k].unwrap_or(0.0);
            j += 1;
        }
    }
    for (d, dim) in design.dims.iter().enumerate() {
        let b = by_factor[dim.factor].unwrap_or(0.0);
        theta[design.mean_index(d)] = if dim.distribution == Distribution::LogNormal {
            if b > 1e-3 {
                b.ln()
            } else {
                -2.0
            }
        } else {
            b
        };
        if let Some(s) = design.spread_index(d) {
            theta[s] = 0.1;
        }
    }
    for row in 0..design.correlated.len() {
        theta[design.cholesky_index(row, row)] = 0.1;
    }
    if let Some(a) = design.dispersion_index() {
        theta[a] = 0.5f64.ln();
    }
    theta
}

/// Minimizes the mean negative log-likelihood.
fn optimize(sl: &SimulatedLikelihood<'_>, x0: &[f64], settings: &FitSettings) -> OptimResult {
    let n = sl.design().n_obs.max(1) as f64;
    minimize(
        |x, g| match sl.loglik_grad(x, g) {
            Ok(v) if v.value.is_finite() => {
                g.iter_mut().for_each(|gi| *gi = -*gi / n);
                -v.value / n
            }
            _ => f64::NAN,
        },
        x0,
        settings.method,
        &settings.optim,
    )
}

/// Fits `spec` on `train`. Estimation problems are reported in the result
/// (`converged = false`, sentinel criteria) rather than as errors.
pub fn fit(spec: &ModelSpecification, train: &Dataset, settings: &FitSettings) -> FitResult {
    let n = train.n_obs();
    let design = match ModelDesign::new(spec, train) {
        Ok(d) => d,
        Err(e) => return FitResult::failure(spec, n, e.to_string()),
    };
    let sl = match SimulatedLikelihood::new(&design, &settings.draws) {
        Ok(s) => s,
        Err(e) => return FitResult::failure(spec, n, e.to_string()),
    };
    let x0 = starting_values(spec, train, &design, settings);
    let r = optimize(&sl, &x0, settings);
    let loglik = sl.loglik(&r.x).map(|v| v.value).unwrap_or(f64::NAN);
    let clamp_count = sl.loglik(&r.x).map(|v| v.clamp_count).unwrap_or(0);
    let converged = r.converged && loglik.is_finite();
    let message = (!converged).then(|| {
        if loglik.is_finite() {
            format!("no convergence after {} iterations (gradient {:.3e})", r.iterations, r.grad_norm)
        } else {
            "non-finite log-likelihood".to_string()
        }
    });
    let std_errors = if converged && settings.standard_errors {
        let h = hessian_from_gradient(
            |x, g| {
                if sl.loglik_grad(x, g).is_err() {
                    g.iter_mut().for_each(|v| *v = f64::NAN);
                }
            },
            &r.x,
        );
        standard_errors(&h)
    } else {
        None
    };
    let rows = coefficient_rows(&design, &r.x, std_errors.as_deref());
    FitResult {
        spec: spec.clone(),
        theta: r.x,
        loglik,
        converged,
        n_params: design.n_params(),
        n_obs: n,
        iterations: r.iterations,
        clamp_count,
        std_errors,
        rows,
        message,
    }
}

/// Fits `spec` through a caller-supplied objective (negative log-likelihood and gradient).
/// Used where the likelihood is not one of the built-in designs.
pub fn fit_objective<F>(f: F, x0: &[f64], settings: &FitSettings) -> OptimResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    minimize(f, x0, settings.method, &settings.optim)
}

fn coefficient_rows(design: &ModelDesign, theta: &[f64], se: Option<&[f64]>) -> Vec<CoefficientRow> {
    design
        .params
        .iter()
        .enumerate()
        .map(|(j, info)| {
            let raw = theta[j];
            let raw_se = se.map(|s| s[j]);
            let (estimate, std_err) = match info.kind {
                ParamKind::Spread { .. } => (raw.abs(), raw_se),
                // Flip whole columns so the factor has a positive diagonal.
                ParamKind::Cholesky { col, .. } => {
                    let flip = theta[design.cholesky_index(col, col)] < 0.0;
                    (if flip { -raw } else { raw }, raw_se)
                }
                ParamKind::LogDispersion => {
                    let a = raw.exp();
                    (a, raw_se.map(|s| a * s))
                }
                _ => (raw, raw_se),
            };
            let z = std_err.filter(|s| *s > 0.0).map(|s| estimate / s);
            CoefficientRow {
                name: info.name.clone(),
                kind: info.kind,
                transformation: info.transformation,
                estimate,
                std_err,
                z,
                p: z.map(two_sided_p),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnData, ModelTerms};

    #[test]
    fn criteria_arithmetic() {
        let c = information_criteria(-50.0, 2, 100);
        assert!((c.bic - 109.21034037197618).abs() < 1e-9);
        assert_eq!(c.aic, 104.0);
        assert!((c.caic - 111.21034037197618).abs() < 1e-9);
        assert!((c.aicc.unwrap() - 104.12371134020619).abs() < 1e-9);
        assert!((c.hqic - 106.10871850323160).abs() < 1e-9);
        assert!(information_criteria(-5.0, 3, 4).aicc.is_none());
    }

    #[test]
    fn criteria_increase_with_k() {
        for k in 1..20 {
            let a = information_criteria(-300.0, k, 200);
            let b = information_criteria(-300.0, k + 1, 200);
            assert!(b.bic > a.bic && b.aic > a.aic && b.hqic > a.hqic && b.caic > a.caic);
            assert!(b.aicc.unwrap() > a.aicc.unwrap());
        }
    }

    #[test]
    fn sentinel_is_worst() {
        let s = ObjectiveValues::sentinel();
        for kind in [ObjectiveKind::Bic, ObjectiveKind::Mspe, ObjectiveKind::Aicc] {
            assert_eq!(s.get(kind), f64::INFINITY);
        }
    }

    #[test]
    fn stars_and_p() {
        assert_eq!(significance_stars(Some(0.0004)), "***");
        assert_eq!(significance_stars(Some(0.004)), "**");
        assert_eq!(significance_stars(Some(0.04)), "*");
        assert_eq!(significance_stars(Some(0.07)), ".");
        assert_eq!(significance_stars(Some(0.2)), "");
        assert_eq!(significance_stars(None), "");
        assert!((two_sided_p(1.959963984540054) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mean_squared_error(&[0, 2], &[1.0, 1.0]), Some(1.0));
        assert_eq!(mean_squared_error(&[3, 4], &[3.0, 4.0]), Some(0.0));
        assert_eq!(mean_squared_error(&[], &[]), None);
    }

    #[test]
    fn quadratic_hessian() {
        let x = [0.3, -1.2, 2.0];
        let h = numerical_hessian(|t| -0.5 * t.iter().map(|v| v * v).sum::<f64>(), &x);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { -1.0 } else { 0.0 };
                assert!((h[i][j] - expect).abs() < 1e-6);
            }
        }
        let se = standard_errors(&h).unwrap();
        assert!(se.iter().all(|s| (s - 1.0).abs() < 1e-6));
        let not_pd = vec![vec![1.0, 0.0], vec![0.0, -1.0]];
        assert!(standard_errors(&not_pd).is_none());
    }

    fn counts(y: Vec<f64>) -> Dataset {
        Dataset::from_columns(vec![("Y".into(), ColumnData::Numeric(y))])
            .unwrap()
            .assign_roles(&ModelTerms::response("Y"))
            .unwrap()
    }

    #[test]
    fn intercept_only_mle_and_se() {
        let y: Vec<f64> = (0..50).map(|i| ((i * 7) % 6) as f64).collect();
        let total: f64 = y.iter().sum();
        let mean = total / 50.0;
        let ds = counts(y);
        let spec = ModelSpecification::intercept_only(0, Dispersion::Poisson);
        let f = fit(&spec, &ds, &FitSettings::default());
        assert!(f.converged);
        assert!((f.theta[0] - mean.ln()).abs() < 1e-6);
        let se = f.rows[0].std_err.unwrap();
        assert!((se - 1.0 / total.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn failure_sentinel_through_objective() {
        let r = fit_objective(|_, _| f64::NAN, &[0.0, 0.0], &FitSettings::default());
        assert!(!r.converged);
        let fr = FitResult::failure(
            &ModelSpecification::intercept_only(0, Dispersion::Poisson),
            10,
            "non-finite".into(),
        );
        assert_eq!(fr.criteria().bic, f64::INFINITY);
    }
}
