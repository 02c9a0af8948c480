//! Simulated log-likelihood of Poisson and NB-2 count models with random parameters.
//!
//! A [`ModelDesign`] fixes the data side of a specification (transformed columns, draw units,
//! parameter layout). [`SimulatedLikelihood`] pairs a design with standardized draws and
//! evaluates the log-likelihood and its gradient for a parameter vector.

use std::collections::HashMap;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::data::{apply_transformation, Dataset, Transformation};
use crate::error::{Error, Result};
use crate::spec::{Dispersion, Distribution, FactorLevel, HeteroRole, ModelSpecification, INTERCEPT};

/// Bound applied to the linear predictor before exponentiation.
pub const ETA_CLAMP: f64 = 30.0;
/// Leading Halton points discarded.
pub const HALTON_SKIP: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawGenerator {
    Halton,
    Pseudorandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawSettings {
    pub generator: DrawGenerator,
    pub n_draws: usize,
    pub seed: u64,
    /// Truncation point of `tn_n`, in standard deviations.
    pub tn_bound: f64,
}

impl Default for DrawSettings {
    fn default() -> Self {
        DrawSettings {
            generator: DrawGenerator::Halton,
            n_draws: 200,
            seed: 0,
            tn_bound: 1.96,
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// The `k`-th prime, counting from zero (2, 3, 5, ...).
pub fn nth_prime(k: usize) -> u64 {
    let mut found = 0;
    let mut candidate = 1u64;
    loop {
        candidate += 1;
        if (2..).take_while(|d| d * d <= candidate).all(|d| !candidate.is_multiple_of(d)) {
            if found == k {
                return candidate;
            }
            found += 1;
        }
    }
}

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while index > 0 {
        f /= b;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Uniform draws for one random dimension: `values[unit * n_draws + r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawColumn {
    pub key: usize,
    pub n_units: usize,
    pub values: Vec<f64>,
}

/// Standard uniform draws, one column per random dimension.
///
/// Each column is keyed (by factor index in practice), so the same factor sees the same
/// draws in every specification: Halton columns use the key-th prime as base and
/// pseudorandom columns use the key as ChaCha stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawMatrix {
    pub generator: DrawGenerator,
    pub seed: u64,
    pub n_draws: usize,
    pub columns: Vec<DrawColumn>,
}

impl DrawMatrix {
    pub fn generate(settings: &DrawSettings, dims: &[(usize, usize)]) -> DrawMatrix {
        let r = settings.n_draws;
        let columns = dims
            .iter()
            .map(|&(key, n_units)| {
                let len = n_units * r;
                let values = match settings.generator {
                    DrawGenerator::Halton => {
                        let base = nth_prime(key);
                        (0..len as u64)
                            .map(|i| halton(i + 1 + HALTON_SKIP, base))
                            .collect()
                    }
                    DrawGenerator::Pseudorandom => {
                        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
                        rng.set_stream(key as u64);
                        (0..len).map(|_| rng.sample(Open01)).collect()
                    }
                };
                DrawColumn {
                    key,
                    n_units,
                    values,
                }
            })
            .collect();
        DrawMatrix {
            generator: settings.generator,
            seed: settings.seed,
            n_draws: r,
            columns,
        }
    }

    pub fn uniform(&self, dim: usize, unit: usize, r: usize) -> f64 {
        self.columns[dim].values[unit * self.n_draws + r]
    }
}

fn triangular_quantile(u: f64) -> f64 {
    if u < 0.5 {
        (2.0 * u).sqrt() - 1.0
    } else {
        1.0 - (2.0 * (1.0 - u)).sqrt()
    }
}

/// Maps a uniform draw to the standardized variate of `dist`: the coefficient is
/// `mean + spread * z`, or `exp(mean + spread * z)` for the log-normal.
pub fn standard_variate(u: f64, dist: Distribution, tn_bound: f64) -> f64 {
    let n = std_normal();
    match dist {
        Distribution::Normal | Distribution::LogNormal => n.inverse_cdf(u),
        Distribution::Uniform => 2.0 * u - 1.0,
        Distribution::Triangular => triangular_quantile(u),
        Distribution::TruncNormal => {
            let lo = n.cdf(-tn_bound);
            let hi = n.cdf(tn_bound);
            n.inverse_cdf(lo + u * (hi - lo))
        }
    }
}

/// Coefficient implied by uniform draw `u` under `dist`; `spread` is used as `|spread|`.
pub fn marginal_transform(u: f64, dist: Distribution, mean: f64, spread: f64, tn_bound: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidArgument(format!("uniform draw {u} outside (0, 1)")));
    }
    let v = mean + spread.abs() * standard_variate(u, dist, tn_bound);
    Ok(if dist == Distribution::LogNormal { v.exp() } else { v })
}

pub fn poisson_logpmf(y: u64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let yf = y as f64;
    Ok(-lambda + yf * lambda.ln() - ln_factorial(y))
}

/// `ln G(y + r) - ln G(r)`, summed exactly for small counts to avoid cancellation at large r.
fn ln_rising(y: u64, r: f64) -> f64 {
    if y <= 64 {
        (0..y).map(|j| (r + j as f64).ln()).sum()
    } else {
        ln_gamma(y as f64 + r) - ln_gamma(r)
    }
}

/// `ln y!`, summed exactly for small counts.
fn ln_factorial(y: u64) -> f64 {
    if y <= 64 {
        (2..=y).map(|j| (j as f64).ln()).sum()
    } else {
        ln_gamma(y as f64 + 1.0)
    }
}

fn digamma_rising(y: u64, r: f64) -> f64 {
    if y <= 64 {
        (0..y).map(|j| 1.0 / (r + j as f64)).sum()
    } else {
        digamma(y as f64 + r) - digamma(r)
    }
}

/// NB-2 log-pmf with mean `lambda` and variance `lambda + alpha * lambda^2`.
pub fn negbin_logpmf(y: u64, lambda: f64, alpha: f64) -> Result<f64> {
    if !(lambda > 0.0) || !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda and alpha must be positive, got {lambda} and {alpha}"
        )));
    }
    let r = 1.0 / alpha;
    let yf = y as f64;
    Ok(ln_rising(y, r) - ln_factorial(y) - r * (lambda / r).ln_1p()
        + yf * (lambda.ln() - (r + lambda).ln()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DimKind {
    Independent,
    Correlated,
    Grouped,
    HeteroMember,
}

/// One random coefficient of a specification.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomDim {
    pub factor: usize,
    pub name: String,
    pub transformation: Transformation,
    pub distribution: Distribution,
    pub kind: DimKind,
    pub hetero_group: Option<usize>,
    pub x: Vec<f64>,
}

/// Covariates shifting the means of a heterogeneity group's members.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroBlock {
    pub distribution: Distribution,
    pub members: Vec<usize>,
    pub covariate_names: Vec<String>,
    pub covariate_transformations: Vec<Transformation>,
    pub z: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ParamKind {
    Fixed,
    Mean { dim: usize },
    Spread { dim: usize },
    /// Entry of the lower-triangular factor of the correlated block (positions in the block).
    Cholesky { row: usize, col: usize },
    Delta { group: usize, covariate: usize },
    LogDispersion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub kind: ParamKind,
    pub name: String,
    pub transformation: Option<Transformation>,
}

/// Data prepared for one specification: transformed columns, draw units and the layout
/// of the flat parameter vector.
///
/// Layout: fixed coefficients (intercept first), random means, spreads of non-correlated
/// random coefficients, lower-triangular Cholesky entries of the correlated block (row
/// major), heterogeneity shifts per (group, covariate), and `ln alpha` for NB models.
#[derive(Debug, Clone)]
pub struct ModelDesign {
    pub dispersion: Dispersion,
    pub n_obs: usize,
    pub y: Vec<u64>,
    pub offset: Vec<f64>,
    pub n_fixed: usize,
    /// Row-major `n_obs x n_fixed`.
    pub fixed_x: Vec<f64>,
    pub dims: Vec<RandomDim>,
    /// Dimension indices of the correlated block, in factor order.
    pub correlated: Vec<usize>,
    pub hetero: Vec<HeteroBlock>,
    pub params: Vec<ParamInfo>,
    /// Observation lists per draw unit of non-grouped coefficients.
    pub panels: Vec<Vec<usize>>,
    pub panel_of: Vec<usize>,
    pub group_of: Vec<usize>,
    pub n_groups: usize,
    spread_index: Vec<Option<usize>>,
    mean_start: usize,
    chol_start: usize,
    delta_start: usize,
}

impl ModelDesign {
    pub fn new(spec: &ModelSpecification, ds: &Dataset) -> Result<ModelDesign> {
        let names = ds.candidate_names();
        if spec.factors.len() != names.len() {
            return Err(Error::DimensionMismatch(format!(
                "specification has {} factors, data has {} candidates",
                spec.factors.len(),
                names.len()
            )));
        }
        let y = ds
            .y()
            .ok_or_else(|| Error::InvalidArgument("dataset has no response column".into()))?
            .to_vec();
        let n = y.len();
        let offset = ds.offset().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);

        let mut params = vec![ParamInfo {
            kind: ParamKind::Fixed,
            name: INTERCEPT.to_string(),
            transformation: None,
        }];
        let mut fixed_cols: Vec<Vec<f64>> = Vec::new();
        let mut dims = Vec::new();
        let groups = spec.hetero_groups();
        let mut hetero: Vec<HeteroBlock> = Vec::new();
        let mut group_index: HashMap<usize, usize> = HashMap::new();
        for (g, grp) in groups.iter().enumerate() {
            let mut z = Vec::new();
            let mut cov_names = Vec::new();
            let mut cov_tr = Vec::new();
            for &k in &grp.covariates {
                let tau = spec.factors[k].transformation;
                z.push(apply_transformation(ds.candidate(k), tau, names[k])?);
                cov_names.push(names[k].to_string());
                cov_tr.push(tau);
            }
            for &k in &grp.members {
                group_index.insert(k, g);
            }
            hetero.push(HeteroBlock {
                distribution: grp.distribution,
                members: Vec::new(),
                covariate_names: cov_names,
                covariate_transformations: cov_tr,
                z,
            });
        }

        for (k, gene) in spec.factors.iter().enumerate() {
            let kind = match gene.level {
                FactorLevel::Off => continue,
                FactorLevel::Fixed => {
                    fixed_cols.push(apply_transformation(ds.candidate(k), gene.transformation, names[k])?);
                    params.push(ParamInfo {
                        kind: ParamKind::Fixed,
                        name: names[k].to_string(),
                        transformation: Some(gene.transformation),
                    });
                    continue;
                }
                FactorLevel::Random => DimKind::Independent,
                FactorLevel::Correlated => DimKind::Correlated,
                FactorLevel::Grouped => {
                    if !ds.has_groups() {
                        return Err(Error::InvalidSpecification(format!(
                            "grouped random parameter {} needs a group column",
                            names[k]
                        )));
                    }
                    DimKind::Grouped
                }
                FactorLevel::HeteroMeans => match gene.role {
                    HeteroRole::MeanCovariate => continue,
                    HeteroRole::RandomMember => DimKind::HeteroMember,
                },
            };
            let hetero_group = (kind == DimKind::HeteroMember).then(|| group_index[&k]);
            if let Some(g) = hetero_group {
                hetero[g].members.push(dims.len());
            }
            dims.push(RandomDim {
                factor: k,
                name: names[k].to_string(),
                transformation: gene.transformation,
                distribution: gene.distribution,
                kind,
                hetero_group,
                x: apply_transformation(ds.candidate(k), gene.transformation, names[k])?,
            });
        }
        for (g, block) in hetero.iter().enumerate() {
            if block.members.is_empty() || block.z.is_empty() {
                return Err(Error::InvalidSpecification(format!(
                    "heterogeneity group {g} needs a random member and a mean covariate"
                )));
            }
        }
        let correlated: Vec<usize> = (0..dims.len())
            .filter(|&d| dims[d].kind == DimKind::Correlated)
            .collect();

        let n_fixed = params.len();
        let mut fixed_x = vec![0.0; n * n_fixed];
        for i in 0..n {
            fixed_x[i * n_fixed] = 1.0;
            for (j, col) in fixed_cols.iter().enumerate() {
                fixed_x[i * n_fixed + j + 1] = col[i];
            }
        }

        let mean_start = params.len();
        for d in &dims {
            params.push(ParamInfo {
                kind: ParamKind::Mean { dim: params.len() - mean_start },
                name: d.name.clone(),
                transformation: Some(d.transformation),
            });
        }
        let mut spread_index = vec![None; dims.len()];
        for (i, d) in dims.iter().enumerate() {
            if d.kind != DimKind::Correlated {
                spread_index[i] = Some(params.len());
                params.push(ParamInfo {
                    kind: ParamKind::Spread { dim: i },
                    name: format!("{} (Std. Dev.) {}", d.name, d.distribution.long_name()),
                    transformation: Some(d.transformation),
                });
            }
        }
        let chol_start = params.len();
        for (row, &di) in correlated.iter().enumerate() {
            for (col, &dj) in correlated.iter().enumerate().take(row + 1) {
                let name = if row == col {
                    format!("{} (Std. Dev.) {}", dims[di].name, dims[di].distribution.long_name())
                } else {
                    format!("Cholesky {}, {}", dims[di].name, dims[dj].name)
                };
                params.push(ParamInfo {
                    kind: ParamKind::Cholesky { row, col },
                    name,
                    transformation: None,
                });
            }
        }
        let delta_start = params.len();
        for (g, block) in hetero.iter().enumerate() {
            for (c, name) in block.covariate_names.iter().enumerate() {
                params.push(ParamInfo {
                    kind: ParamKind::Delta { group: g, covariate: c },
                    name: format!("{name}: hetero group {g}"),
                    transformation: Some(block.covariate_transformations[c]),
                });
            }
        }
        if spec.dispersion == Dispersion::NegBinomial {
            params.push(ParamInfo {
                kind: ParamKind::LogDispersion,
                name: "nb".into(),
                transformation: None,
            });
        }

        let (panels, panel_of) = match ds.panels() {
            Some(labels) => {
                let mut dense: HashMap<usize, usize> = HashMap::new();
                let mut panels: Vec<Vec<usize>> = Vec::new();
                let mut panel_of = Vec::with_capacity(n);
                for (i, &id) in labels.ids.iter().enumerate() {
                    let p = *dense.entry(id).or_insert_with(|| {
                        panels.push(Vec::new());
                        panels.len() - 1
                    });
                    panels[p].push(i);
                    panel_of.push(p);
                }
                (panels, panel_of)
            }
            None => ((0..n).map(|i| vec![i]).collect(), (0..n).collect()),
        };
        let (group_of, n_groups) = match ds.groups() {
            Some(labels) => (labels.ids.clone(), labels.n_levels()),
            None => (vec![0; n], 1),
        };

        Ok(ModelDesign {
            dispersion: spec.dispersion,
            n_obs: n,
            y,
            offset,
            n_fixed,
            fixed_x,
            dims,
            correlated,
            hetero,
            params,
            panels,
            panel_of,
            group_of,
            n_groups,
            spread_index,
            mean_start,
            chol_start,
            delta_start,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn has_random(&self) -> bool {
        !self.dims.is_empty()
    }

    pub fn mean_index(&self, dim: usize) -> usize {
        self.mean_start + dim
    }

    pub fn spread_index(&self, dim: usize) -> Option<usize> {
        self.spread_index[dim]
    }

    pub fn cholesky_index(&self, row: usize, col: usize) -> usize {
        self.chol_start + row * (row + 1) / 2 + col
    }

    pub fn delta_index(&self, group: usize, covariate: usize) -> usize {
        let before: usize = self.hetero[..group].iter().map(|b| b.z.len()).sum();
        self.delta_start + before + covariate
    }

    pub fn dispersion_index(&self) -> Option<usize> {
        (self.dispersion == Dispersion::NegBinomial).then(|| self.params.len() - 1)
    }

    /// Lower-triangular Cholesky factor of the correlated block as stored in `theta`.
    pub fn cholesky(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        let m = self.correlated.len();
        let mut l = vec![vec![0.0; m]; m];
        for (row, lrow) in l.iter_mut().enumerate() {
            for (col, v) in lrow.iter_mut().enumerate().take(row + 1) {
                let raw = theta[self.cholesky_index(row, col)];
                *v = raw;
            }
        }
        l
    }

    fn hetero_shift(&self, theta: &[f64], group: usize, i: usize) -> f64 {
        let block = &self.hetero[group];
        let base = self.delta_index(group, 0);
        block.z.iter().enumerate().map(|(c, z)| theta[base + c] * z[i]).sum()
    }

    /// Expected coefficient of each random dimension for observation `i` (draw-free).
    fn expected_coefficients(&self, theta: &[f64], i: usize) -> Vec<f64> {
        let l = self.cholesky(theta);
        self.dims
            .iter()
            .enumerate()
            .map(|(d, dim)| {
                let mut v = theta[self.mean_index(d)];
                if let Some(g) = dim.hetero_group {
                    v += self.hetero_shift(theta, g, i);
                }
                if dim.distribution != Distribution::LogNormal {
                    return v;
                }
                let var = match self.spread_index(d) {
                    Some(s) => theta[s] * theta[s],
                    None => {
                        let row = self.correlated.iter().position(|&c| c == d).unwrap();
                        l[row].iter().map(|x| x * x).sum()
                    }
                };
                (v + 0.5 * var).exp()
            })
            .collect()
    }

    /// Conditional means with every random coefficient at its expected value.
    pub fn predict_mean(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.n_obs)
            .map(|i| {
                let mut eta = self.offset[i]
                    + (0..self.n_fixed)
                        .map(|j| self.fixed_x[i * self.n_fixed + j] * theta[j])
                        .sum::<f64>();
                for (d, b) in self.expected_coefficients(theta, i).into_iter().enumerate() {
                    eta += self.dims[d].x[i] * b;
                }
                eta.clamp(-ETA_CLAMP, ETA_CLAMP).exp()
            })
            .collect()
    }
}

/// `exp` of the clamped linear predictor.
pub fn conditional_mean(x: &[f64], beta: &[f64], offset: f64) -> f64 {
    let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + offset;
    eta.clamp(-ETA_CLAMP, ETA_CLAMP).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoglikValue {
    pub value: f64,
    /// Number of linear-predictor evaluations that hit the clamp.
    pub clamp_count: u64,
}

/// A design with standardized draws ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct SimulatedLikelihood<'a> {
    design: &'a ModelDesign,
    n_draws: usize,
    /// Standardized variates per dimension, `[unit * n_draws + r]`.
    z: Vec<Vec<f64>>,
}

impl<'a> SimulatedLikelihood<'a> {
    pub fn new(design: &'a ModelDesign, settings: &DrawSettings) -> Result<Self> {
        if design.dims.is_empty() {
            return Ok(SimulatedLikelihood {
                design,
                n_draws: 1,
                z: Vec::new(),
            });
        }
        if settings.n_draws == 0 {
            return Err(Error::InvalidArgument("at least one draw is required".into()));
        }
        let shape: Vec<(usize, usize)> = design
            .dims
            .iter()
            .map(|d| {
                let units = if d.kind == DimKind::Grouped {
                    design.n_groups
                } else {
                    design.panels.len()
                };
                (d.factor, units)
            })
            .collect();
        let draws = DrawMatrix::generate(settings, &shape);
        Self::with_draws(design, &draws, settings.tn_bound)
    }

    pub fn with_draws(design: &'a ModelDesign, draws: &DrawMatrix, tn_bound: f64) -> Result<Self> {
        if draws.columns.len() != design.dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} draw columns for {} random coefficients",
                draws.columns.len(),
                design.dims.len()
            )));
        }
        let z = design
            .dims
            .iter()
            .zip(&draws.columns)
            .map(|(d, col)| {
                let needed = if d.kind == DimKind::Grouped {
                    design.n_groups
                } else {
                    design.panels.len()
                };
                if col.n_units < needed {
                    return Err(Error::DimensionMismatch(format!(
                        "draws for {} cover {} units, need {needed}",
                        d.name, col.n_units
                    )));
                }
                Ok(col
                    .values
                    .iter()
                    .map(|&u| standard_variate(u, d.distribution, tn_bound))
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(SimulatedLikelihood {
            design,
            n_draws: if design.dims.is_empty() { 1 } else { draws.n_draws },
            z,
        })
    }

    pub fn design(&self) -> &ModelDesign {
        self.design
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    fn unit(&self, d: usize, i: usize) -> usize {
        if self.design.dims[d].kind == DimKind::Grouped {
            self.design.group_of[i]
        } else {
            self.design.panel_of[i]
        }
    }

    /// Coefficients of the random dimensions for observation `i` under draw `r`.
    pub fn random_coefficients(&self, theta: &[f64], i: usize, r: usize) -> Vec<f64> {
        let des = self.design;
        let l = des.cholesky(theta);
        (0..des.dims.len())
            .map(|d| {
                let dim = &des.dims[d];
                let mut v = theta[des.mean_index(d)];
                match des.spread_index(d) {
                    Some(s) => v += theta[s] * self.z[d][self.unit(d, i) * self.n_draws + r],
                    None => {
                        let row = des.correlated.iter().position(|&c| c == d).unwrap();
                        for (col, &e) in des.correlated.iter().enumerate().take(row + 1) {
                            v += l[row][col] * self.z[e][self.unit(e, i) * self.n_draws + r];
                        }
                    }
                }
                if let Some(g) = dim.hetero_group {
                    v += des.hetero_shift(theta, g, i);
                }
                if dim.distribution == Distribution::LogNormal {
                    v.exp()
                } else {
                    v
                }
            })
            .collect()
    }

    pub fn loglik(&self, theta: &[f64]) -> Result<LoglikValue> {
        self.evaluate(theta, None)
    }

    /// Log-likelihood and its gradient (written into `grad`).
    pub fn loglik_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<LoglikValue> {
        if grad.len() != theta.len() {
            return Err(Error::DimensionMismatch("gradient buffer length".into()));
        }
        self.evaluate(theta, Some(grad))
    }

    fn evaluate(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> Result<LoglikValue> {
        let des = self.design;
        let k = des.n_params();
        if theta.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has {} entries, model has {k}",
                theta.len()
            )));
        }
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let n = des.n_obs;
        let nd = des.dims.len();
        let rr = self.n_draws;
        let nf = des.n_fixed;

        let fixed_eta: Vec<f64> = (0..n)
            .map(|i| {
                des.offset[i]
                    + des.fixed_x[i * nf..(i + 1) * nf]
                        .iter()
                        .zip(&theta[..nf])
                        .map(|(x, b)| x * b)
                        .sum::<f64>()
            })
            .collect();
        let shift: Vec<Vec<f64>> = (0..des.hetero.len())
            .map(|g| (0..n).map(|i| des.hetero_shift(theta, g, i)).collect())
            .collect();

        let nb = des.dispersion_index().map(|idx| 1.0 / theta[idx].exp());
        // Per-observation NB constants: ln-rising minus ln y!, and the digamma difference.
        let (nb_const, nb_dig): (Vec<f64>, Vec<f64>) = match nb {
            Some(r) => des
                .y
                .iter()
                .map(|&y| (ln_rising(y, r) - ln_factorial(y), digamma_rising(y, r)))
                .unzip(),
            None => (
                des.y.iter().map(|&y| -ln_factorial(y)).collect(),
                Vec::new(),
            ),
        };

        let means: Vec<f64> = (0..nd).map(|d| theta[des.mean_index(d)]).collect();
        let scales: Vec<f64> = (0..nd)
            .map(|d| des.spread_index(d).map_or(0.0, |s| theta[s]))
            .collect();
        let chol = des.cholesky(theta);
        let m = des.correlated.len();
        let lognormal: Vec<bool> = des
            .dims
            .iter()
            .map(|d| d.distribution == Distribution::LogNormal)
            .collect();

        let max_t = des.panels.iter().map(Vec::len).max().unwrap_or(0);
        let mut ell = vec![0.0; rr];
        let mut base = vec![0.0; nd];
        let want_grad = grad.is_some();
        let mut score = if want_grad { vec![0.0; max_t * rr] } else { Vec::new() };
        let mut dalpha = if want_grad && nb.is_some() { vec![0.0; max_t * rr] } else { Vec::new() };
        let mut dv = if want_grad { vec![0.0; max_t * rr * nd] } else { Vec::new() };

        let mut total = 0.0;
        let mut clamps = 0u64;
        let ln_r = (rr as f64).ln();

        for (p, obs) in des.panels.iter().enumerate() {
            for r in 0..rr {
                for d in 0..nd {
                    if des.dims[d].kind != DimKind::Grouped && des.dims[d].kind != DimKind::Correlated {
                        base[d] = means[d] + scales[d] * self.z[d][p * rr + r];
                    }
                }
                for (row, &d) in des.correlated.iter().enumerate() {
                    let mut v = means[d];
                    for col in 0..=row {
                        v += chol[row][col] * self.z[des.correlated[col]][p * rr + r];
                    }
                    base[d] = v;
                }
                let mut l = 0.0;
                for (ti, &i) in obs.iter().enumerate() {
                    let mut eta = fixed_eta[i];
                    for d in 0..nd {
                        let dim = &des.dims[d];
                        let mut v = if dim.kind == DimKind::Grouped {
                            means[d] + scales[d] * self.z[d][des.group_of[i] * rr + r]
                        } else {
                            base[d]
                        };
                        if let Some(g) = dim.hetero_group {
                            v += shift[g][i];
                        }
                        let (b, dbdv) = if lognormal[d] {
                            let e = v.exp();
                            (e, e)
                        } else {
                            (v, 1.0)
                        };
                        eta += dim.x[i] * b;
                        if want_grad {
                            dv[(ti * rr + r) * nd + d] = dim.x[i] * dbdv;
                        }
                    }
                    let clamped = !(-ETA_CLAMP..=ETA_CLAMP).contains(&eta);
                    if clamped {
                        clamps += 1;
                        eta = eta.clamp(-ETA_CLAMP, ETA_CLAMP);
                    }
                    let lambda = eta.exp();
                    let yf = des.y[i] as f64;
                    let (lp, sc) = match nb {
                        None => (nb_const[i] - lambda + yf * eta, yf - lambda),
                        Some(rk) => {
                            let log1p = (lambda / rk).ln_1p();
                            let ln_rl = (rk + lambda).ln();
                            let lp = nb_const[i] - rk * log1p + yf * (eta - ln_rl);
                            if want_grad && !dalpha.is_empty() {
                                let d_r = nb_dig[i] - log1p + (lambda - yf) / (rk + lambda);
                                dalpha[ti * rr + r] = -rk * d_r;
                            }
                            (lp, rk * (yf - lambda) / (rk + lambda))
                        }
                    };
                    if want_grad {
                        score[ti * rr + r] = if clamped { 0.0 } else { sc };
                    }
                    l += lp;
                }
                ell[r] = l;
            }

            let mx = ell.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !mx.is_finite() {
                return Ok(LoglikValue {
                    value: f64::NAN,
                    clamp_count: clamps,
                });
            }
            let mut sum = 0.0;
            for e in ell.iter_mut() {
                *e = (*e - mx).exp();
                sum += *e;
            }
            total += mx + sum.ln() - ln_r;

            let Some(g) = grad.as_deref_mut() else {
                continue;
            };
            // ell now holds unnormalized weights.
            for r in 0..rr {
                let w = ell[r] / sum;
                if w == 0.0 {
                    continue;
                }
                for (ti, &i) in obs.iter().enumerate() {
                    let c = w * score[ti * rr + r];
                    if !dalpha.is_empty() {
                        g[k - 1] += w * dalpha[ti * rr + r];
                    }
                    if c == 0.0 {
                        continue;
                    }
                    let xr = &des.fixed_x[i * nf..(i + 1) * nf];
                    for j in 0..nf {
                        g[j] += c * xr[j];
                    }
                    let dvr = &dv[(ti * rr + r) * nd..(ti * rr + r + 1) * nd];
                    for d in 0..nd {
                        let q = c * dvr[d];
                        g[des.mean_start + d] += q;
                        let dim = &des.dims[d];
                        if let Some(s) = des.spread_index[d] {
                            let unit = if dim.kind == DimKind::Grouped { des.group_of[i] } else { p };
                            g[s] += q * self.z[d][unit * rr + r];
                        }
                        if let Some(hg) = dim.hetero_group {
                            let start = des.delta_index(hg, 0);
                            for (cv, z) in des.hetero[hg].z.iter().enumerate() {
                                g[start + cv] += q * z[i];
                            }
                        }
                    }
                    for row in 0..m {
                        let q = c * dvr[des.correlated[row]];
                        for col in 0..=row {
                            let zc = self.z[des.correlated[col]][p * rr + r];
                            let idx = des.cholesky_index(row, col);
                            g[idx] += q * zc;
                        }
                    }
                }
            }
        }
        Ok(LoglikValue {
            value: total,
            clamp_count: clamps,
        })
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnData, ModelTerms};
    use crate::spec::FactorGene;

    #[test]
    fn primes_and_halton() {
        let p: Vec<u64> = (0..6).map(nth_prime).collect();
        assert_eq!(p, vec![2, 3, 5, 7, 11, 13]);
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert_eq!(halton(3, 2), 0.75);
        assert!((halton(4, 3) - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn marginals() {
        let t = 1.96;
        assert_eq!(marginal_transform(0.5, Distribution::Normal, 2.0, 3.0, t).unwrap(), 2.0);
        assert_eq!(marginal_transform(0.5, Distribution::Triangular, 0.0, 1.0, t).unwrap(), 0.0);
        assert_eq!(marginal_transform(0.5, Distribution::LogNormal, 0.0, 1.0, t).unwrap(), 1.0);
        let q = marginal_transform(0.975, Distribution::Normal, 0.0, 1.0, t).unwrap();
        assert!((q - 1.959963984540054).abs() < 1e-9, "{q}");
        assert_eq!(marginal_transform(0.75, Distribution::Uniform, 1.0, 2.0, t).unwrap(), 2.0);
        let tn = marginal_transform(0.999999, Distribution::TruncNormal, 0.0, 1.0, t).unwrap();
        assert!(tn < 1.96 && tn > 1.9);
        assert!(marginal_transform(0.0, Distribution::Normal, 0.0, 1.0, t).is_err());
        assert!(marginal_transform(1.0, Distribution::Normal, 0.0, 1.0, t).is_err());
        // Negative spread acts as its absolute value.
        assert_eq!(
            marginal_transform(0.75, Distribution::Uniform, 0.0, -2.0, t).unwrap(),
            marginal_transform(0.75, Distribution::Uniform, 0.0, 2.0, t).unwrap()
        );
    }

    #[test]
    fn pmf_values() {
        assert!((poisson_logpmf(0, 1.0).unwrap() + 1.0).abs() < 1e-15);
        assert!((poisson_logpmf(1, 1.0).unwrap() + 1.0).abs() < 1e-15);
        assert!((poisson_logpmf(3, 2.5).unwrap() + 1.5428872736055898).abs() < 1e-12);
        assert!(poisson_logpmf(1, 0.0).is_err());
        let nb = negbin_logpmf(2, 1.5, 0.5).unwrap();
        assert!((nb + 1.7152150079771429).abs() < 1e-10, "{nb}");
        let near = negbin_logpmf(3, 2.5, 1e-8).unwrap();
        assert!((near - poisson_logpmf(3, 2.5).unwrap()).abs() < 1e-5);
        let (lam, a) = (2.0, 0.7);
        let zero = negbin_logpmf(0, lam, a).unwrap();
        assert!((zero - (1.0 / a) * (1.0 / (1.0 + a * lam)).ln()).abs() < 1e-12);
        assert!(negbin_logpmf(1, 1.0, 0.0).is_err());
    }

    #[test]
    fn pmfs_normalize() {
        for lam in [0.1, 1.0, 5.0, 12.5, 20.0] {
            let s: f64 = (0..=200).map(|y| poisson_logpmf(y, lam).unwrap().exp()).sum();
            assert!((s - 1.0).abs() < 1e-8);
            // At alpha 0.5 and lambda 20 the mass beyond 200 is about 9e-8, so the
            // truncated check uses dispersions whose tail is negligible there.
            for a in [0.05, 0.2] {
                let s: f64 = (0..=200).map(|y| negbin_logpmf(y, lam, a).unwrap().exp()).sum();
                assert!((s - 1.0).abs() < 1e-8, "lam {lam} a {a}: {s}");
            }
        }
    }

    #[test]
    fn conditional_mean_values() {
        assert_eq!(conditional_mean(&[], &[], 0.0), 1.0);
        assert!((conditional_mean(&[0.0], &[1.0], 5f64.ln()) - 5.0).abs() < 1e-12);
        let v = conditional_mean(&[1.0, 2.0], &[0.5, -0.3], 0.0);
        assert!((v - 0.9048374180359596).abs() < 1e-12);
        assert_eq!(conditional_mean(&[1.0], &[1000.0], 0.0), ETA_CLAMP.exp());
    }

    fn data(n: usize, with_panels: bool) -> Dataset {
        let x1: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64 / 10.0 - 0.5).collect();
        let x2: Vec<f64> = (0..n).map(|i| ((i * 5) % 13) as f64 / 12.0).collect();
        let x3: Vec<f64> = (0..n).map(|i| ((i * 3) % 7) as f64 / 6.0 + 0.1).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 13) % 5) as f64).collect();
        let mut cols = vec![
            ("Y".to_string(), ColumnData::Numeric(y)),
            ("A".to_string(), ColumnData::Numeric(x1)),
            ("B".to_string(), ColumnData::Numeric(x2)),
            ("C".to_string(), ColumnData::Numeric(x3)),
            (
                "G".to_string(),
                ColumnData::Categorical((0..n).map(|i| format!("g{}", i % 4)).collect()),
            ),
        ];
        let mut terms = ModelTerms::response("Y");
        terms.group = Some("G".into());
        if with_panels {
            cols.push((
                "P".to_string(),
                ColumnData::Categorical((0..n).map(|i| format!("p{}", i / 3)).collect()),
            ));
            terms.panels = Some("P".into());
        }
        Dataset::from_columns(cols).unwrap().assign_roles(&terms).unwrap()
    }

    fn spec_of(levels: [FactorLevel; 3], disp: Dispersion) -> ModelSpecification {
        let mut s = ModelSpecification::intercept_only(3, disp);
        for (g, l) in s.factors.iter_mut().zip(levels) {
            *g = FactorGene::new(l);
        }
        s
    }

    fn exact_loglik(des: &ModelDesign, theta: &[f64]) -> f64 {
        let lam = des.predict_mean(theta);
        let alpha = des.dispersion_index().map(|i| theta[i].exp());
        des.y
            .iter()
            .zip(&lam)
            .map(|(&y, &l)| match alpha {
                None => poisson_logpmf(y, l).unwrap(),
                Some(a) => negbin_logpmf(y, l, a).unwrap(),
            })
            .sum()
    }

    #[test]
    fn intercept_only_two_zeros() {
        let ds = Dataset::from_columns(vec![("Y".into(), ColumnData::Numeric(vec![0.0, 0.0]))])
            .unwrap()
            .assign_roles(&ModelTerms::response("Y"))
            .unwrap();
        let spec = ModelSpecification::intercept_only(0, Dispersion::Poisson);
        let des = ModelDesign::new(&spec, &ds).unwrap();
        let sl = SimulatedLikelihood::new(&des, &DrawSettings::default()).unwrap();
        assert_eq!(sl.loglik(&[0.0]).unwrap().value, -2.0);
    }

    #[test]
    fn zero_spread_collapses_to_exact() {
        let ds = data(60, true);
        use FactorLevel::*;
        for disp in [Dispersion::Poisson, Dispersion::NegBinomial] {
            let spec = spec_of([Fixed, Random, Grouped], disp);
            let des = ModelDesign::new(&spec, &ds).unwrap();
            let mut theta = vec![0.1; des.n_params()];
            for d in 0..des.dims.len() {
                theta[des.spread_index(d).unwrap()] = 0.0;
            }
            let exact = exact_loglik(&des, &theta);
            for r in [5, 50] {
                let sl = SimulatedLikelihood::new(&des, &DrawSettings { n_draws: r, ..Default::default() }).unwrap();
                assert!((sl.loglik(&theta).unwrap().value - exact).abs() < 1e-10);
            }
            for d in 0..des.dims.len() {
                theta[des.spread_index(d).unwrap()] = 1e-8;
            }
            let sl = SimulatedLikelihood::new(&des, &DrawSettings::default()).unwrap();
            assert!((sl.loglik(&theta).unwrap().value - exact).abs() < 1e-6);
        }
    }

    fn check_gradient(spec: &ModelSpecification, ds: &Dataset) {
        let des = ModelDesign::new(spec, ds).unwrap();
        let sl = SimulatedLikelihood::new(&des, &DrawSettings { n_draws: 20, ..Default::default() }).unwrap();
        let k = des.n_params();
        let theta: Vec<f64> = (0..k).map(|j| 0.15 - 0.07 * (j % 5) as f64).collect();
        let mut g = vec![0.0; k];
        sl.loglik_grad(&theta, &mut g).unwrap();
        for j in 0..k {
            let h = 1e-6;
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let fd = (sl.loglik(&tp).unwrap().value - sl.loglik(&tm).unwrap().value) / (2.0 * h);
            assert!(
                (fd - g[j]).abs() < 1e-5 * (1.0 + fd.abs()),
                "{} param {j} ({}): analytic {} vs fd {fd}",
                spec.describe(&["A", "B", "C"]),
                des.params[j].name,
                g[j]
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use FactorLevel::*;
        for panels in [false, true] {
            let ds = data(45, panels);
            for disp in [Dispersion::Poisson, Dispersion::NegBinomial] {
                for dist in Distribution::ALL {
                    let mut spec = spec_of([Fixed, Random, Grouped], disp);
                    spec.factors[1].distribution = dist;
                    spec.factors[2].distribution = dist;
                    check_gradient(&spec, &ds);

                    let mut spec = spec_of([Correlated, Correlated, Correlated], disp);
                    spec.factors[0].distribution = dist;
                    check_gradient(&spec, &ds);

                    let mut spec = spec_of([HeteroMeans, HeteroMeans, Fixed], disp);
                    spec.factors[0].role = HeteroRole::MeanCovariate;
                    spec.factors[0].distribution = dist;
                    spec.factors[1].distribution = dist;
                    check_gradient(&spec, &ds);
                }
            }
        }
    }

    #[test]
    fn grouped_draws_shared_within_group() {
        use FactorLevel::*;
        let ds = data(40, true);
        let spec = spec_of([Off, Grouped, Off], Dispersion::Poisson);
        let des = ModelDesign::new(&spec, &ds).unwrap();
        let sl = SimulatedLikelihood::new(&des, &DrawSettings { n_draws: 7, ..Default::default() }).unwrap();
        let theta = vec![0.2, 0.4, 0.9];
        for i in 0..40 {
            for j in 0..40 {
                if des.group_of[i] == des.group_of[j] {
                    for r in 0..7 {
                        assert_eq!(sl.random_coefficients(&theta, i, r), sl.random_coefficients(&theta, j, r));
                    }
                }
            }
        }
    }

    #[test]
    fn draws_are_deterministic() {
        for generator in [DrawGenerator::Halton, DrawGenerator::Pseudorandom] {
            let s = DrawSettings { generator, n_draws: 30, seed: 9, tn_bound: 1.96 };
            let a = DrawMatrix::generate(&s, &[(0, 10), (3, 4)]);
            let b = DrawMatrix::generate(&s, &[(0, 10), (3, 4)]);
            assert_eq!(a, b);
            assert!(a.columns.iter().all(|c| c.values.iter().all(|&u| u > 0.0 && u < 1.0)));
        }
    }

    #[test]
    fn hetero_shift_is_delta_times_z() {
        use FactorLevel::*;
        let ds = data(30, false);
        let mut spec = spec_of([HeteroMeans, HeteroMeans, Off], Dispersion::Poisson);
        spec.factors[0].role = HeteroRole::MeanCovariate;
        let des = ModelDesign::new(&spec, &ds).unwrap();
        let sl = SimulatedLikelihood::new(&des, &DrawSettings::default()).unwrap();
        let mut theta = vec![0.0; des.n_params()];
        theta[des.mean_index(0)] = 0.3;
        theta[des.spread_index(0).unwrap()] = 0.5;
        theta[des.delta_index(0, 0)] = 0.4249;
        let z = &des.hetero[0].z[0];
        let (i, j) = (0..30)
            .flat_map(|i| (0..30).map(move |j| (i, j)))
            .find(|&(i, j)| des.panel_of[i] != des.panel_of[j] && (z[i] - z[j]).abs() > 0.1)
            .unwrap();
        let bi = sl.random_coefficients(&theta, i, 3)[0];
        theta[des.delta_index(0, 0)] = 0.0;
        let bi0 = sl.random_coefficients(&theta, i, 3)[0];
        assert!((bi - bi0 - 0.4249 * z[i]).abs() < 1e-12);
        let _ = j;
    }
}
