use std::time::Instant;

use countreg_core::data::ModelTerms;
use countreg_core::estimator::{fit, FitSettings};
use countreg_core::likelihood::DrawSettings;
use countreg_core::spec::{Dispersion, FactorGene, FactorLevel, ModelSpecification};
use countreg_core::synth;

fn all_fixed(n: usize, dispersion: Dispersion) -> ModelSpecification {
    let mut s = ModelSpecification::intercept_only(n, dispersion);
    s.factors.iter_mut().for_each(|g| *g = FactorGene::new(FactorLevel::Fixed));
    s
}

#[test]
fn poisson_coefficients_recovered() {
    let truth = [0.5, -0.3, 0.8];
    let ds = synth::poisson_fixed(2000, &truth, 11)
        .assign_roles(&ModelTerms::response("Y"))
        .unwrap();
    let start = Instant::now();
    let f = fit(&all_fixed(2, Dispersion::Poisson), &ds, &FitSettings::default());
    println!("poisson fit {:?}", start.elapsed());
    assert!(f.converged);
    for (row, b) in f.rows.iter().zip(truth) {
        let se = row.std_err.unwrap();
        assert!((row.estimate - b).abs() < 0.1);
        assert!((row.estimate - b).abs() < 3.0 * se, "{} {} {se}", row.name, row.estimate);
    }
}

#[test]
fn negbin_dispersion_recovered() {
    let ds = synth::negbin_fixed(3000, &[0.7, 0.4], 0.6, 5)
        .assign_roles(&ModelTerms::response("Y"))
        .unwrap();
    let start = Instant::now();
    let f = fit(&all_fixed(1, Dispersion::NegBinomial), &ds, &FitSettings::default());
    println!("nb fit {:?}", start.elapsed());
    assert!(f.converged, "{:?}", f.message);
    let a = f.alpha().unwrap();
    assert!((a - 0.6).abs() < 0.12, "alpha {a}");
}

#[test]
fn panel_random_parameter_recovered() {
    let mut terms = ModelTerms::response("Y");
    terms.panels = Some("PANEL".into());
    let ds = synth::panel_random_parameter(500, 4, 0.2, 0.5, 0.3, 21)
        .assign_roles(&terms)
        .unwrap();
    let mut spec = ModelSpecification::intercept_only(1, Dispersion::Poisson);
    spec.factors[0] = FactorGene::new(FactorLevel::Random);
    let settings = FitSettings {
        draws: DrawSettings { n_draws: 500, ..Default::default() },
        ..Default::default()
    };
    let start = Instant::now();
    let f = fit(&spec, &ds, &settings);
    println!("rp fit {:?} iters {}", start.elapsed(), f.iterations);
    assert!(f.converged, "{:?}", f.message);
    let mean = f.row("X1").unwrap().estimate;
    let sd = f.rows.iter().find(|r| r.name.contains("Std. Dev.")).unwrap().estimate;
    println!("mean {mean} sd {sd}");
    assert!((mean - 0.5).abs() < 0.1);
    assert!((sd - 0.3).abs() < 0.15);
}
