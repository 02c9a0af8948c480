//! Seeded synthetic count data with known generating models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Gamma, Normal, Poisson};

use crate::data::{ColumnData, Dataset};

fn poisson_draw<R: Rng>(rng: &mut R, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).expect("positive mean").sample(rng)
}

fn gamma_mixed<R: Rng>(rng: &mut R, lambda: f64, alpha: f64) -> f64 {
    let r = 1.0 / alpha;
    let g = Gamma::new(r, 1.0 / r).expect("positive shape").sample(rng);
    poisson_draw(rng, lambda * g)
}

fn normals<R: Rng>(rng: &mut R, n: usize, sd: f64) -> Vec<f64> {
    let d = Normal::new(0.0, sd).expect("finite sd");
    (0..n).map(|_| d.sample(rng)).collect()
}

fn assemble(y: Vec<f64>, xs: Vec<(String, Vec<f64>)>) -> Dataset {
    let mut cols = vec![("Y".to_string(), ColumnData::Numeric(y))];
    cols.extend(xs.into_iter().map(|(n, v)| (n, ColumnData::Numeric(v))));
    Dataset::from_columns(cols).expect("generated columns are valid")
}

/// Fixed-effects Poisson data: `beta[0]` is the intercept, `beta[j]` multiplies `Xj ~ N(0, 1)`.
pub fn poisson_fixed(n: usize, beta: &[f64], seed: u64) -> Dataset {
    count_fixed(n, beta, None, seed)
}

/// NB-2 data with dispersion `alpha`, otherwise as [`poisson_fixed`].
pub fn negbin_fixed(n: usize, beta: &[f64], alpha: f64, seed: u64) -> Dataset {
    count_fixed(n, beta, Some(alpha), seed)
}

fn count_fixed(n: usize, beta: &[f64], alpha: Option<f64>, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (1..beta.len()).map(|_| normals(&mut rng, n, 1.0)).collect();
    let y = (0..n)
        .map(|i| {
            let eta = beta[0] + xs.iter().zip(&beta[1..]).map(|(x, b)| x[i] * b).sum::<f64>();
            match alpha {
                None => poisson_draw(&mut rng, eta.exp()),
                Some(a) => gamma_mixed(&mut rng, eta.exp(), a),
            }
        })
        .collect();
    assemble(
        y,
        xs.into_iter()
            .enumerate()
            .map(|(j, x)| (format!("X{}", j + 1), x))
            .collect(),
    )
}

/// Panel Poisson data with one normally distributed coefficient per panel:
/// `ln lambda = intercept + b_p * X1`, `b_p ~ N(mean, sd)`. Column `PANEL` holds the id.
pub fn panel_random_parameter(
    n_panels: usize,
    per_panel: usize,
    intercept: f64,
    mean: f64,
    sd: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef = Normal::new(mean, sd).expect("finite sd");
    let xdist = Normal::new(0.0, 1.0).unwrap();
    let n = n_panels * per_panel;
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut panel = Vec::with_capacity(n);
    for p in 0..n_panels {
        let b = coef.sample(&mut rng);
        for _ in 0..per_panel {
            let xi = xdist.sample(&mut rng);
            y.push(poisson_draw(&mut rng, (intercept + b * xi).exp()));
            x.push(xi);
            panel.push(format!("P{p:04}"));
        }
    }
    Dataset::from_columns(vec![
        ("Y".into(), ColumnData::Numeric(y)),
        ("X1".into(), ColumnData::Numeric(x)),
        ("PANEL".into(), ColumnData::Categorical(panel)),
    ])
    .expect("generated columns are valid")
}

/// Search benchmark with candidates X1..X7 and Z1. True model:
/// `ln lambda = 0.3 - 0.6 X1 + b2 X2 + b3 X3`, with `b2 ~ N(0.6, 0.5)` and
/// `b3 ~ N(0.4 + 0.6 Z1, 0.3)` drawn per panel. X4..X7 and Z1 have no direct effect.
/// Panels of `per_panel` rows are labelled in column `PANEL`.
pub fn search_benchmark(n_panels: usize, per_panel: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_panels * per_panel;
    let xs: Vec<Vec<f64>> = (0..7).map(|_| normals(&mut rng, n, 0.7)).collect();
    let z_panel: Vec<f64> = (0..n_panels).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect();
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut panel = Vec::with_capacity(n);
    for p in 0..n_panels {
        let b2 = 0.6 + 0.5 * std.sample(&mut rng);
        let b3 = 0.4 + 0.6 * z_panel[p] + 0.3 * std.sample(&mut rng);
        for t in 0..per_panel {
            let i = p * per_panel + t;
            let eta = 0.3 - 0.6 * xs[0][i] + b2 * xs[1][i] + b3 * xs[2][i];
            y.push(poisson_draw(&mut rng, eta.exp()));
            z.push(z_panel[p]);
            panel.push(format!("P{p:04}"));
        }
    }
    let mut cols = vec![("Y".to_string(), ColumnData::Numeric(y))];
    for (j, x) in xs.into_iter().enumerate() {
        cols.push((format!("X{}", j + 1), ColumnData::Numeric(x)));
    }
    cols.push(("Z1".into(), ColumnData::Numeric(z)));
    cols.push(("PANEL".into(), ColumnData::Categorical(panel)));
    Dataset::from_columns(cols).expect("generated columns are valid")
}

/// Grouped data with candidates X1, X2, X3 (positive), Z1, Z2 and a `GROUP` column.
/// `ln lambda = 0.2 + 0.5 X1 + g X2 + 0.3 ln X3`, with `g ~ N(-0.4, 0.4)` per group.
pub fn grouped_benchmark(n: usize, n_groups: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let g_coef: Vec<f64> = (0..n_groups).map(|_| -0.4 + 0.4 * std.sample(&mut rng)).collect();
    let x1 = normals(&mut rng, n, 0.8);
    let x2 = normals(&mut rng, n, 0.8);
    let x3: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..4.0)).collect();
    let z1: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
    let z2 = normals(&mut rng, n, 1.0);
    let groups: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n_groups)).collect();
    let y = (0..n)
        .map(|i| {
            let eta = 0.2 + 0.5 * x1[i] + g_coef[groups[i]] * x2[i] + 0.3 * x3[i].ln();
            poisson_draw(&mut rng, eta.exp())
        })
        .collect();
    Dataset::from_columns(vec![
        ("Y".into(), ColumnData::Numeric(y)),
        ("X1".into(), ColumnData::Numeric(x1)),
        ("X2".into(), ColumnData::Numeric(x2)),
        ("X3".into(), ColumnData::Numeric(x3)),
        ("Z1".into(), ColumnData::Numeric(z1)),
        ("Z2".into(), ColumnData::Numeric(z2)),
        (
            "GROUP".into(),
            ColumnData::Categorical(groups.iter().map(|g| format!("G{g:02}")).collect()),
        ),
    ])
    .expect("generated columns are valid")
}
