//! Seeded hyperparameter sweep.
//!
//! Every run shares the data split, the draws and the estimation cache, so only the search
//! itself varies between rows. The weighted sum divides each objective by its interquartile
//! range over a fixed reference sample of random specifications, which keeps rows comparable
//! across grid points and makes each row depend only on its own grid point and seed.

use std::collections::BTreeMap;
use std::time::Instant;

use countreg_core::objective::ModelObjective;
use countreg_core::search::{iqr_scale, run_search, NoObserver, SpecObjective};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::config::{hyperparameter_names, RunConfig};
use crate::error::CliError;
use crate::run::Prepared;

const REFERENCE_SAMPLE: usize = 25;

pub type Grid = BTreeMap<String, Vec<Value>>;

pub fn parse_grid(text: &str) -> Result<Grid, CliError> {
    let grid: Grid = serde_json::from_str(text).map_err(|e| CliError::Config(format!("grid: {e}")))?;
    if let Some((k, _)) = grid.iter().find(|(_, v)| v.is_empty()) {
        return Err(CliError::Config(format!("grid: {k} has no values")));
    }
    Ok(grid)
}

/// Every combination of grid values, in lexicographic key order.
pub fn grid_points(grid: &Grid) -> Vec<Vec<(String, Value)>> {
    let mut points: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (k, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((k.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

fn with_overrides(cfg: &RunConfig, point: &[(String, Value)]) -> Result<RunConfig, CliError> {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    let map = v.as_object_mut().expect("config is an object");
    for (k, val) in point {
        map.insert(k.clone(), val.clone());
    }
    let text = serde_json::to_string(&v).expect("json");
    RunConfig::parse(&text, std::path::Path::new(""))
}

fn csv_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Runs the Cartesian product of `grid` for `n_seeds` seeds (config seed, seed + 1, ...)
/// and returns the results CSV.
pub fn sweep(cfg: &RunConfig, grid: &Grid, n_seeds: usize) -> Result<String, CliError> {
    let alg = cfg.algorithm_name().to_ascii_lowercase();
    let allowed = hyperparameter_names(&alg);
    for k in grid.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(CliError::Config(format!(
                "grid: {k} is not a hyperparameter of {alg} (expected one of {})",
                allowed.join(", ")
            )));
        }
    }
    let points = grid_points(grid);
    let configs = points
        .iter()
        .map(|p| with_overrides(cfg, p))
        .collect::<Result<Vec<_>, _>>()?;

    let prep = Prepared::new(cfg)?;
    let initial = prep.manual_specification(cfg)?;
    let mut obj = ModelObjective::new(
        prep.space.clone(),
        &prep.split.train,
        &prep.split.test,
        cfg.fit_settings()?,
        cfg.objectives()?,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reference = Vec::with_capacity(REFERENCE_SAMPLE);
    for _ in 0..REFERENCE_SAMPLE {
        let spec = prep.space.random_specification(&mut rng)?;
        reference.push(obj.evaluate(&spec).point);
    }
    let scale = [
        iqr_scale(&reference.iter().map(|p| p[0]).collect::<Vec<_>>()),
        iqr_scale(&reference.iter().map(|p| p[1]).collect::<Vec<_>>()),
    ];

    let mut out = String::new();
    let mut header: Vec<String> = grid.keys().cloned().collect();
    header.extend(
        ["seed", "best_weighted_sum", "archive_size", "iterations", "elapsed_seconds"].map(String::from),
    );
    out.push_str(&header.join(","));
    out.push('\n');
    for (point, run_cfg) in points.iter().zip(&configs) {
        let algorithm = run_cfg.search_algorithm(&alg)?;
        for s in 0..n_seeds {
            let seed = cfg.seed + s as u64;
            let start = Instant::now();
            let outcome = run_search(&algorithm, &mut obj, initial.as_ref(), &run_cfg.limits(), seed, &mut NoObserver)?;
            let elapsed = start.elapsed().as_secs_f64();
            let best = outcome
                .archive
                .members()
                .iter()
                .map(|m| m.point[0] / scale[0] + m.point[1] / scale[1])
                .fold(f64::INFINITY, f64::min);
            let mut row: Vec<String> = point.iter().map(|(_, v)| csv_value(v)).collect();
            row.push(seed.to_string());
            row.push(if best.is_finite() { best.to_string() } else { String::new() });
            row.push(outcome.archive.len().to_string());
            row.push(outcome.iterations.to_string());
            row.push(format!("{elapsed:.3}"));
            out.push_str(&row.join(","));
            out.push('\n');
            if cfg.verbose >= 1 {
                let desc: Vec<String> = point.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("{} seed={seed}: best weighted sum {best:.4}", desc.join(" "));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_counting() {
        let grid = parse_grid(r#"{"alpha": [0.9, 0.99]}"#).unwrap();
        assert_eq!(grid_points(&grid).len(), 2);
        let full = parse_grid(
            r#"{"alpha": [0.8, 0.85, 0.9, 0.95, 0.99], "_ts": [1, 2, 5], "INTL_ACPT": [0.5],
                "_crossover_perc": [0.0, 0.1, 0.2, 0.3, 0.4]}"#,
        )
        .unwrap();
        assert_eq!(grid_points(&full).len() * 5, 375);
        assert!(parse_grid(r#"{"alpha": []}"#).is_err());
    }
}
