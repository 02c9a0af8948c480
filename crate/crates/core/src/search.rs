//! Multi-objective metaheuristics over model specifications.
//!
//! Every algorithm works on slot index vectors from a [`SearchSpace`], submits only
//! repaired, valid specifications to the objective, and maintains a [`ParetoArchive`] of
//! mutually non-dominated results. One iteration is one proposed candidate.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::ObjectiveValues;
use crate::spec::{de_index_update, ModelSpecification, SearchSpace};

/// Objective pair; the second entry is 0 in single-objective mode.
pub type Point = [f64; 2];

/// `a` is no worse in both objectives and strictly better in one.
pub fn dominates(a: &Point, b: &Point) -> bool {
    a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1])
}

/// Indices of the non-dominated points, in input order. Of several equal points only the
/// first is kept.
pub fn non_dominated_sort(points: &[Point]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points.iter().enumerate().any(|(j, q)| {
                dominates(q, &points[i]) || (j < i && q == &points[i])
            })
        })
        .collect()
}

fn distance(a: &Point, b: &Point) -> f64 {
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    if d.is_nan() {
        f64::INFINITY
    } else {
        d
    }
}

/// SPEA2 raw fitness: for each point, the summed strength of the points dominating it,
/// where a point's strength is how many points it dominates.
pub fn spea2_raw_fitness(points: &[Point]) -> Vec<f64> {
    let strength: Vec<usize> = points
        .iter()
        .map(|p| points.iter().filter(|q| dominates(p, q)).count())
        .collect();
    points
        .iter()
        .map(|p| {
            points
                .iter()
                .zip(&strength)
                .filter(|(q, _)| dominates(q, p))
                .map(|(_, s)| *s as f64)
                .sum()
        })
        .collect()
}

/// SPEA2 fitness (lower is better): raw fitness plus `1 / (sigma_k + 2)`, with `sigma_k`
/// the distance to the k-th nearest other point and `k = ceil(sqrt(N))`.
pub fn spea2_fitness(points: &[Point]) -> Vec<f64> {
    let n = points.len();
    let k = (n as f64).sqrt().ceil() as usize;
    let raw = spea2_raw_fitness(points);
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| distance(&points[i], &points[j])).collect();
            d.sort_by(f64::total_cmp);
            let density = match d.get(k.saturating_sub(1)).or(d.last()) {
                Some(&s) if s.is_finite() => 1.0 / (s + 2.0),
                _ => 0.0,
            };
            raw[i] + density
        })
        .collect()
}

fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}

/// Indices ordered by SPEA2 fitness; ties fall back to the first, then second objective.
pub fn spea2_order(points: &[Point]) -> Vec<usize> {
    let fit = spea2_fitness(points);
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        cmp_f64(fit[a], fit[b])
            .then(cmp_f64(points[a][0], points[b][0]))
            .then(cmp_f64(points[a][1], points[b][1]))
    });
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchiveMember {
    pub spec: ModelSpecification,
    pub point: Point,
    pub values: ObjectiveValues,
}

/// Mutually non-dominated (specification, objectives) pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParetoArchive {
    members: Vec<ArchiveMember>,
}

impl ParetoArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `member` unless an existing member dominates or equals it; evicts members it
    /// dominates. Non-finite points are never admitted. Returns whether it was added.
    pub fn insert(&mut self, member: ArchiveMember) -> bool {
        if !member.point.iter().all(|v| v.is_finite()) {
            return false;
        }
        if self
            .members
            .iter()
            .any(|m| dominates(&m.point, &member.point) || m.point == member.point || m.spec == member.spec)
        {
            return false;
        }
        self.members.retain(|m| !dominates(&member.point, &m.point));
        self.members.push(member);
        true
    }

    pub fn members(&self) -> &[ArchiveMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Members ordered by first objective, then second.
    pub fn sorted(&self) -> Vec<ArchiveMember> {
        let mut m = self.members.clone();
        m.sort_by(|a, b| cmp_f64(a.point[0], b.point[0]).then(cmp_f64(a.point[1], b.point[1])));
        m
    }

    /// Lowest value of objective `i` in the archive.
    pub fn best(&self, i: usize) -> Option<f64> {
        self.members.iter().map(|m| m.point[i]).min_by(|a, b| cmp_f64(*a, *b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub max_iter: usize,
    pub max_time: Duration,
    /// Consecutive iterations without acceptance before stopping.
    pub max_no_improvement: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_iter: 1000,
            max_time: Duration::from_secs(3600),
            max_no_improvement: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Time,
    MaxIterations,
    NoImprovement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TerminationState {
    pub iteration: usize,
    pub since_acceptance: usize,
}

impl TerminationState {
    pub fn record(&mut self, accepted: bool) {
        if accepted {
            self.since_acceptance = 0;
        } else {
            self.since_acceptance += 1;
        }
    }
}

pub fn check_termination(state: &TerminationState, elapsed: Duration, limits: &Limits) -> Option<StopReason> {
    if elapsed > limits.max_time {
        Some(StopReason::Time)
    } else if state.iteration >= limits.max_iter {
        Some(StopReason::MaxIterations)
    } else if state.since_acceptance >= limits.max_no_improvement {
        Some(StopReason::NoImprovement)
    } else {
        None
    }
}

/// Result of submitting one specification.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub spec: ModelSpecification,
    pub point: Point,
    pub values: ObjectiveValues,
    pub converged: bool,
    pub cached: bool,
}

/// What the metaheuristics optimize.
pub trait SpecObjective {
    fn space(&self) -> &SearchSpace;
    fn evaluate(&mut self, spec: &ModelSpecification) -> Evaluated;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Search,
}

/// One line of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub encoding: String,
    pub model: String,
    pub loglik: Option<f64>,
    pub objective_1: Option<f64>,
    pub objective_2: Option<f64>,
    pub converged: bool,
    pub accepted: bool,
    pub archive_updated: bool,
    pub archive_size: usize,
    pub cached: bool,
}

pub trait SearchObserver {
    fn on_iteration(&mut self, record: &IterationRecord);
}

impl<F: FnMut(&IterationRecord)> SearchObserver for F {
    fn on_iteration(&mut self, record: &IterationRecord) {
        self(record)
    }
}

pub struct NoObserver;

impl SearchObserver for NoObserver {
    fn on_iteration(&mut self, _: &IterationRecord) {}
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub archive: ParetoArchive,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub elapsed: Duration,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Evaluation bookkeeping shared by the algorithms.
struct Driver<'a> {
    obj: &'a mut dyn SpecObjective,
    observer: &'a mut dyn SearchObserver,
    archive: ParetoArchive,
    state: TerminationState,
    limits: Limits,
    start: Instant,
    stop: Option<StopReason>,
}

impl<'a> Driver<'a> {
    fn new(obj: &'a mut dyn SpecObjective, limits: &Limits, observer: &'a mut dyn SearchObserver) -> Self {
        Driver {
            obj,
            observer,
            archive: ParetoArchive::new(),
            state: TerminationState::default(),
            limits: *limits,
            start: Instant::now(),
            stop: None,
        }
    }

    fn space(&self) -> &SearchSpace {
        self.obj.space()
    }

    /// Evaluates `spec` unless a stopping rule fires first. The archive is updated here;
    /// the caller reports acceptance through [`Driver::record`].
    fn evaluate(&mut self, spec: &ModelSpecification) -> Option<(Evaluated, bool)> {
        if self.stop.is_some() {
            return None;
        }
        if let Some(reason) = check_termination(&self.state, self.start.elapsed(), &self.limits) {
            self.stop = Some(reason);
            return None;
        }
        let e = self.obj.evaluate(spec);
        self.state.iteration += 1;
        let updated = self.archive.insert(ArchiveMember {
            spec: e.spec.clone(),
            point: e.point,
            values: e.values,
        });
        Some((e, updated))
    }

    fn record(&mut self, e: &Evaluated, phase: Phase, accepted: bool, archive_updated: bool) {
        let accepted_any = accepted || archive_updated;
        if phase == Phase::Search {
            self.state.record(accepted_any);
        }
        let space = self.obj.space();
        let encoding = space
            .encode(&e.spec)
            .map(|v| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("."))
            .unwrap_or_default();
        let rec = IterationRecord {
            iteration: self.state.iteration,
            phase,
            encoding,
            model: e.spec.describe(&space.factor_names()),
            loglik: finite(e.values.loglik),
            objective_1: finite(e.point[0]),
            objective_2: finite(e.point[1]),
            converged: e.converged,
            accepted: accepted_any,
            archive_updated,
            archive_size: self.archive.len(),
            cached: e.cached,
        };
        self.observer.on_iteration(&rec);
    }

    fn finish(self) -> SearchOutcome {
        SearchOutcome {
            archive: self.archive,
            stop_reason: self.stop.unwrap_or(StopReason::MaxIterations),
            iterations: self.state.iteration,
            elapsed: self.start.elapsed(),
        }
    }
}

/// Decodes an index vector into a valid specification: repair first, then a fresh random
/// specification when repair cannot fix it.
fn realize<R: Rng>(space: &SearchSpace, indices: &[usize], rng: &mut R) -> Result<ModelSpecification> {
    let spec = space.repair(&space.decode(indices)?);
    if space.is_valid(&spec) {
        Ok(spec)
    } else {
        space.random_specification(rng)
    }
}

/// `count` random valid specifications, the first replaced by `initial` when given.
fn initial_population<R: Rng>(
    space: &SearchSpace,
    count: usize,
    initial: Option<&ModelSpecification>,
    rng: &mut R,
) -> Result<Vec<ModelSpecification>> {
    let mut out = Vec::with_capacity(count);
    if let Some(s) = initial {
        let s = space.canonicalize(s);
        let violations = space.validate(&s);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidSpecification(format!(
                "initial specification violates constraints: {}",
                list.join(", ")
            )));
        }
        out.push(s);
    }
    while out.len() < count {
        out.push(space.random_specification(rng)?);
    }
    Ok(out)
}

struct Member {
    spec: ModelSpecification,
    indices: Vec<usize>,
    point: Point,
}

fn evaluate_population(
    driver: &mut Driver<'_>,
    specs: Vec<ModelSpecification>,
) -> Result<Vec<Member>> {
    let mut pop = Vec::with_capacity(specs.len());
    for spec in specs {
        let Some((e, updated)) = driver.evaluate(&spec) else {
            break;
        };
        driver.record(&e, Phase::Init, true, updated);
        pop.push(Member {
            indices: driver.space().encode(&e.spec)?,
            spec: e.spec,
            point: e.point,
        });
    }
    Ok(pop)
}

fn sort_population(pop: &mut Vec<Member>) {
    let points: Vec<Point> = pop.iter().map(|m| m.point).collect();
    let order = spea2_order(&points);
    let mut taken: Vec<Option<Member>> = pop.drain(..).map(Some).collect();
    pop.extend(order.into_iter().map(|i| taken[i].take().expect("each index once")));
}

fn no_worse(a: &Point, b: &Point) -> bool {
    a[0] <= b[0] && a[1] <= b[1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PitchRule {
    /// Adjust when the uniform draw is at least PAR.
    Literal,
    /// Adjust when the uniform draw is below PAR.
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsParams {
    pub hms: usize,
    pub hmcr: f64,
    pub par: f64,
    pub mpai: usize,
    pub pitch_rule: PitchRule,
}

impl Default for HsParams {
    fn default() -> Self {
        HsParams {
            hms: 20,
            hmcr: 0.4,
            par: 0.4,
            mpai: 1,
            pitch_rule: PitchRule::Literal,
        }
    }
}

fn check_probability(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {v}")))
    }
}

impl HsParams {
    pub fn validate(&self) -> Result<()> {
        check_probability("_hmcr", self.hmcr)?;
        check_probability("_par", self.par)?;
        if self.hms == 0 || self.mpai == 0 {
            return Err(Error::InvalidArgument("_hms and _mpai must be at least 1".into()));
        }
        Ok(())
    }
}

/// Builds one harmony: memory consideration with pitch adjustment, else a random value.
pub fn improvise<R: Rng>(space: &SearchSpace, memory: &[Vec<usize>], hp: &HsParams, rng: &mut R) -> Vec<usize> {
    (0..space.n_slots())
        .map(|j| {
            let card = space.cardinality(j);
            if rng.gen::<f64>() < hp.hmcr {
                let mut idx = memory[rng.gen_range(0..memory.len())][j];
                let u = rng.gen::<f64>();
                let adjust = match hp.pitch_rule {
                    PitchRule::Literal => u >= hp.par,
                    PitchRule::Conventional => u < hp.par,
                };
                if adjust && card > 1 {
                    let step = rng.gen_range(1..=hp.mpai) as i64;
                    let step = if rng.gen::<bool>() { step } else { -step };
                    idx = (idx as i64 + step).rem_euclid(card as i64) as usize;
                }
                idx
            } else {
                rng.gen_range(0..card)
            }
        })
        .collect()
}

pub fn harmony_search(
    obj: &mut dyn SpecObjective,
    initial: Option<&ModelSpecification>,
    hp: &HsParams,
    limits: &Limits,
    seed: u64,
    observer: &mut dyn SearchObserver,
) -> Result<SearchOutcome> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = initial_population(obj.space(), hp.hms, initial, &mut rng)?;
    let mut driver = Driver::new(obj, limits, observer);
    let mut memory = evaluate_population(&mut driver, specs)?;
    sort_population(&mut memory);
    while driver.stop.is_none() && !memory.is_empty() {
        let indices: Vec<Vec<usize>> = memory.iter().map(|m| m.indices.clone()).collect();
        let raw = improvise(driver.space(), &indices, hp, &mut rng);
        let spec = realize(driver.space(), &raw, &mut rng)?;
        let Some((e, updated)) = driver.evaluate(&spec) else {
            break;
        };
        let worst = memory.len() - 1;
        let accepted = no_worse(&e.point, &memory[worst].point)
            && e.point.iter().all(|v| v.is_finite())
            && !memory.iter().any(|m| m.spec == e.spec);
        if accepted {
            memory[worst] = Member {
                indices: driver.space().encode(&e.spec)?,
                spec: e.spec.clone(),
                point: e.point,
            };
            sort_population(&mut memory);
        }
        driver.record(&e, Phase::Search, accepted, updated);
    }
    Ok(driver.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaParams {
    /// Cooling factor applied after each temperature step.
    pub alpha: f64,
    /// Proposals per temperature.
    pub steps_per_temp: usize,
    /// Target acceptance probability of the mean uphill move at the initial temperature.
    pub initial_acceptance: f64,
    pub n_initial: usize,
    /// Probability of moving each further slot in a neighbour proposal.
    pub extra_move_prob: f64,
}

impl Default for SaParams {
    fn default() -> Self {
        SaParams {
            alpha: 0.95,
            steps_per_temp: 2,
            initial_acceptance: 0.5,
            n_initial: 25,
            extra_move_prob: 0.0,
        }
    }
}

impl SaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(self.initial_acceptance > 0.0 && self.initial_acceptance < 1.0) {
            return Err(Error::InvalidArgument("INTL_ACPT must be in (0, 1)".into()));
        }
        check_probability("_crossover_perc", self.extra_move_prob)?;
        if self.steps_per_temp == 0 || self.n_initial == 0 {
            return Err(Error::InvalidArgument(
                "STEPS_PER_TEMP and _num_intl_slns must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn quartile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Interquartile range of the finite values, or 1 when it is zero or undefined.
pub fn iqr_scale(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 2 {
        return 1.0;
    }
    v.sort_by(f64::total_cmp);
    let r = quartile(&v, 0.75) - quartile(&v, 0.25);
    if r > 0.0 && r.is_finite() {
        r
    } else {
        1.0
    }
}

/// Sum of per-objective deltas from `from` to `to`, each divided by its scale.
pub fn normalized_delta(from: &Point, to: &Point, scale: &[f64; 2]) -> f64 {
    (to[0] - from[0]) / scale[0] + (to[1] - from[1]) / scale[1]
}

/// Initial temperature at which the mean uphill normalized delta over all ordered pairs of
/// `points` is accepted with probability `acceptance`.
pub fn initial_temperature(points: &[Point], scale: &[f64; 2], acceptance: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for a in points {
        for b in points {
            let d = normalized_delta(a, b, scale);
            if d > 0.0 && d.is_finite() {
                sum += d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return 1.0;
    }
    -(sum / count as f64) / acceptance.ln()
}

/// Acceptance probability of a move that improves neither objective.
pub fn acceptance_probability(delta: f64, temperature: f64) -> f64 {
    if delta <= 0.0 {
        1.0
    } else if delta.is_finite() {
        (-delta / temperature).exp()
    } else {
        0.0
    }
}

pub fn simulated_annealing(
    obj: &mut dyn SpecObjective,
    initial: Option<&ModelSpecification>,
    hp: &SaParams,
    limits: &Limits,
    seed: u64,
    observer: &mut dyn SearchObserver,
) -> Result<SearchOutcome> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = initial_population(obj.space(), hp.n_initial, initial, &mut rng)?;
    let mut driver = Driver::new(obj, limits, observer);
    let mut pop = evaluate_population(&mut driver, specs)?;
    if pop.is_empty() {
        return Ok(driver.finish());
    }
    sort_population(&mut pop);
    let points: Vec<Point> = pop.iter().map(|m| m.point).collect();
    let scale = [
        iqr_scale(&points.iter().map(|p| p[0]).collect::<Vec<_>>()),
        iqr_scale(&points.iter().map(|p| p[1]).collect::<Vec<_>>()),
    ];
    let mut temperature = initial_temperature(&points, &scale, hp.initial_acceptance);
    let mut current = pop.swap_remove(0);
    while driver.stop.is_none() {
        for _ in 0..hp.steps_per_temp {
            let spec = driver.space().neighbor(&current.spec, &mut rng, hp.extra_move_prob);
            let Some((e, updated)) = driver.evaluate(&spec) else {
                break;
            };
            let improves = e.point[0] < current.point[0] || e.point[1] < current.point[1];
            let accepted = e.spec != current.spec
                && (improves || {
                    let q = acceptance_probability(normalized_delta(&current.point, &e.point, &scale), temperature);
                    rng.gen::<f64>() < q
                });
            if accepted {
                current = Member {
                    indices: driver.space().encode(&e.spec)?,
                    spec: e.spec.clone(),
                    point: e.point,
                };
            }
            driver.record(&e, Phase::Search, accepted, updated);
        }
        temperature *= hp.alpha;
    }
    Ok(driver.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeParams {
    /// Integer scale of the index difference.
    pub ai: i64,
    pub cr: f64,
    pub pop_size: usize,
}

impl Default for DeParams {
    fn default() -> Self {
        DeParams {
            ai: 1,
            cr: 0.2,
            pop_size: 20,
        }
    }
}

impl DeParams {
    pub fn validate(&self) -> Result<()> {
        check_probability("_cr", self.cr)?;
        if self.pop_size < 4 {
            return Err(Error::InvalidArgument(format!(
                "_pop_size must be at least 4, got {}",
                self.pop_size
            )));
        }
        Ok(())
    }
}

/// Three distinct member indices, all different from `p`.
pub fn pick_donors<R: Rng>(rng: &mut R, n: usize, p: usize) -> [usize; 3] {
    let mut pool: Vec<usize> = (0..n).filter(|&i| i != p).collect();
    pool.partial_shuffle(rng, 3);
    [pool[0], pool[1], pool[2]]
}

/// Mutation and binomial crossover for one member.
pub fn de_offspring<R: Rng>(
    space: &SearchSpace,
    parent: &[usize],
    donors: [&[usize]; 3],
    hp: &DeParams,
    rng: &mut R,
) -> Result<Vec<usize>> {
    (0..space.n_slots())
        .map(|j| {
            if rng.gen::<f64>() < hp.cr {
                de_index_update(donors[0][j], donors[1][j], donors[2][j], hp.ai, space.cardinality(j))
            } else {
                Ok(parent[j])
            }
        })
        .collect()
}

pub fn differential_evolution(
    obj: &mut dyn SpecObjective,
    initial: Option<&ModelSpecification>,
    hp: &DeParams,
    limits: &Limits,
    seed: u64,
    observer: &mut dyn SearchObserver,
) -> Result<SearchOutcome> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = initial_population(obj.space(), hp.pop_size, initial, &mut rng)?;
    let mut driver = Driver::new(obj, limits, observer);
    let mut pop = evaluate_population(&mut driver, specs)?;
    if pop.len() < 4 {
        return Ok(driver.finish());
    }
    sort_population(&mut pop);
    'outer: while driver.stop.is_none() {
        for p in 0..pop.len() {
            let [a, b, c] = pick_donors(&mut rng, pop.len(), p);
            let raw = de_offspring(
                driver.space(),
                &pop[p].indices,
                [&pop[a].indices, &pop[b].indices, &pop[c].indices],
                hp,
                &mut rng,
            )?;
            let spec = realize(driver.space(), &raw, &mut rng)?;
            let Some((e, updated)) = driver.evaluate(&spec) else {
                break 'outer;
            };
            let accepted = e.spec != pop[p].spec
                && no_worse(&e.point, &pop[p].point)
                && e.point.iter().all(|v| v.is_finite());
            if accepted {
                pop[p] = Member {
                    indices: driver.space().encode(&e.spec)?,
                    spec: e.spec.clone(),
                    point: e.point,
                };
            }
            driver.record(&e, Phase::Search, accepted, updated);
        }
        sort_population(&mut pop);
    }
    Ok(driver.finish())
}

/// Which algorithm to run, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Algorithm {
    Hs(HsParams),
    Sa(SaParams),
    De(DeParams),
}

pub fn run_search(
    algorithm: &Algorithm,
    obj: &mut dyn SpecObjective,
    initial: Option<&ModelSpecification>,
    limits: &Limits,
    seed: u64,
    observer: &mut dyn SearchObserver,
) -> Result<SearchOutcome> {
    match algorithm {
        Algorithm::Hs(hp) => harmony_search(obj, initial, hp, limits, seed, observer),
        Algorithm::Sa(hp) => simulated_annealing(obj, initial, hp, limits, seed, observer),
        Algorithm::De(hp) => differential_evolution(obj, initial, hp, limits, seed, observer),
    }
}

/// Objective-free evaluation count per canonical encoding; handy for instrumentation.
pub fn visit_counts(records: &[IterationRecord]) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for r in records {
        *m.entry(r.encoding.clone()).or_insert(0) += 1;
    }
    m
}
