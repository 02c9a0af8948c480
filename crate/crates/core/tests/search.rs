use std::time::Duration;

use countreg_core::data::{Dataset, ModelTerms};
use countreg_core::estimator::ObjectiveValues;
use countreg_core::search::*;
use countreg_core::spec::{ConstraintSet, ModelSpecification, SearchSpace};
use countreg_core::synth;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset() -> Dataset {
    let mut terms = ModelTerms::response("Y");
    terms.panels = Some("PANEL".into());
    synth::search_benchmark(30, 3, 5).assign_roles(&terms).unwrap()
}

/// Cheap objective: distance to a target encoding against model size.
struct Toy {
    space: SearchSpace,
    target: Vec<usize>,
    invalid: usize,
}

impl Toy {
    fn new(ds: &Dataset) -> Toy {
        let space = SearchSpace::new(ConstraintSet::default(), ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let target = space.encode(&space.random_specification(&mut rng).unwrap()).unwrap();
        Toy { space, target, invalid: 0 }
    }
}

impl SpecObjective for Toy {
    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&mut self, spec: &ModelSpecification) -> Evaluated {
        if !self.space.is_valid(spec) {
            self.invalid += 1;
        }
        let enc = self.space.encode(spec).unwrap();
        let dist = enc.iter().zip(&self.target).filter(|(a, b)| a != b).count() as f64;
        let size = spec.active_factors().len() as f64;
        Evaluated {
            spec: spec.clone(),
            point: [dist, size],
            values: ObjectiveValues::sentinel(),
            converged: true,
            cached: false,
        }
    }
}

fn algorithms() -> Vec<Algorithm> {
    vec![
        Algorithm::Hs(HsParams::default()),
        Algorithm::Sa(SaParams::default()),
        Algorithm::De(DeParams::default()),
    ]
}

fn run(alg: &Algorithm, limits: &Limits, seed: u64) -> (SearchOutcome, Vec<IterationRecord>, usize) {
    let ds = dataset();
    let mut toy = Toy::new(&ds);
    let mut log = Vec::new();
    let mut obs = |r: &IterationRecord| log.push(r.clone());
    let out = run_search(alg, &mut toy, None, limits, seed, &mut obs).unwrap();
    (out, log, toy.invalid)
}

#[test]
fn searches_submit_only_valid_specifications() {
    let limits = Limits { max_iter: 400, max_no_improvement: 400, ..Default::default() };
    for alg in algorithms() {
        let (out, log, invalid) = run(&alg, &limits, 1);
        assert_eq!(invalid, 0, "{alg:?}");
        assert_eq!(log.len(), out.iterations);
        let ds = dataset();
        let space = SearchSpace::new(ConstraintSet::default(), &ds).unwrap();
        let members = out.archive.members();
        assert!(!members.is_empty());
        for a in members {
            assert!(space.is_valid(&a.spec));
            for b in members {
                assert!(!dominates(&a.point, &b.point));
            }
        }
    }
}

#[test]
fn searches_are_deterministic() {
    let limits = Limits { max_iter: 150, max_no_improvement: 150, ..Default::default() };
    for alg in algorithms() {
        let (a, la, _) = run(&alg, &limits, 4);
        let (b, lb, _) = run(&alg, &limits, 4);
        assert_eq!(la, lb, "{alg:?}");
        assert_eq!(format!("{:?}", a.archive), format!("{:?}", b.archive));
        let (_, lc, _) = run(&alg, &limits, 5);
        assert_ne!(la, lc);
    }
}

#[test]
fn iteration_limit_is_exact() {
    let limits = Limits { max_iter: 37, max_no_improvement: 1000, ..Default::default() };
    for alg in algorithms() {
        let (out, log, _) = run(&alg, &limits, 2);
        assert_eq!(out.iterations, 37);
        assert_eq!(log.len(), 37);
        assert_eq!(out.stop_reason, StopReason::MaxIterations);
    }
}

#[test]
fn zero_time_budget_evaluates_nothing() {
    let limits = Limits { max_time: Duration::ZERO, ..Default::default() };
    for alg in algorithms() {
        let (out, log, _) = run(&alg, &limits, 2);
        assert_eq!(out.iterations, 0);
        assert!(log.is_empty());
        assert_eq!(out.stop_reason, StopReason::Time);
    }
}

#[test]
fn no_improvement_stop_follows_rejections() {
    let limits = Limits { max_iter: 100_000, max_no_improvement: 10, ..Default::default() };
    for alg in algorithms() {
        let (out, log, _) = run(&alg, &limits, 3);
        assert_eq!(out.stop_reason, StopReason::NoImprovement, "{alg:?}");
        let tail = &log[log.len() - 10..];
        assert!(tail.iter().all(|r| !r.accepted && r.phase == Phase::Search));
    }
}

#[test]
fn archive_best_never_worsens() {
    let limits = Limits { max_iter: 300, max_no_improvement: 300, ..Default::default() };
    for alg in algorithms() {
        let (_, log, _) = run(&alg, &limits, 8);
        let mut best = f64::INFINITY;
        for r in &log {
            let v = r.objective_1.unwrap();
            best = best.min(v);
        }
        let (out, _, _) = run(&alg, &limits, 8);
        assert_eq!(out.archive.best(0), Some(best));
    }
}

#[test]
fn identical_memory_without_adjustment_reproduces_member() {
    let ds = dataset();
    let toy = Toy::new(&ds);
    let space = toy.space();
    let memory = vec![toy.target.clone(); 5];
    let hp = HsParams { hmcr: 1.0, par: 1.0, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        assert_eq!(improvise(space, &memory, &hp, &mut rng), toy.target);
    }
    let conventional = HsParams { pitch_rule: PitchRule::Conventional, par: 0.0, ..hp };
    assert_eq!(improvise(space, &memory, &conventional, &mut rng), toy.target);
}

#[test]
fn de_crossover_extremes() {
    let ds = dataset();
    let toy = Toy::new(&ds);
    let space = toy.space();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let members: Vec<Vec<usize>> = (0..4)
        .map(|_| space.encode(&space.random_specification(&mut rng).unwrap()).unwrap())
        .collect();
    let donors = [members[1].as_slice(), &members[2], &members[3]];
    let keep = DeParams { cr: 0.0, ..Default::default() };
    assert_eq!(de_offspring(space, &members[0], donors, &keep, &mut rng).unwrap(), members[0]);
    let copy = DeParams { cr: 1.0, ai: 0, ..Default::default() };
    assert_eq!(de_offspring(space, &members[0], donors, &copy, &mut rng).unwrap(), members[1]);
}

#[test]
fn de_without_crossover_keeps_population() {
    let limits = Limits { max_iter: 100, max_no_improvement: 1000, ..Default::default() };
    let alg = Algorithm::De(DeParams { cr: 0.0, pop_size: 8, ..Default::default() });
    let (_, log, _) = run(&alg, &limits, 6);
    let init: Vec<&str> = log.iter().filter(|r| r.phase == Phase::Init).map(|r| r.encoding.as_str()).collect();
    for r in log.iter().filter(|r| r.phase == Phase::Search) {
        assert!(!r.accepted);
        assert!(init.contains(&r.encoding.as_str()));
    }
}
