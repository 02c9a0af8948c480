//! Model specifications and the discrete search space they live in.
//!
//! A specification assigns every candidate factor a level (off, fixed, random, correlated
//! random, grouped random, heterogeneity-in-means member), a transformation and a
//! random-parameter distribution, plus the count family. [`SearchSpace`] resolves the
//! analyst's constraints against a dataset and turns specifications into vectors of slot
//! indices for the metaheuristics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Transformation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FactorLevel {
    Off,
    Fixed,
    Random,
    Correlated,
    Grouped,
    HeteroMeans,
}

impl FactorLevel {
    pub const ALL: [FactorLevel; 6] = [
        FactorLevel::Off,
        FactorLevel::Fixed,
        FactorLevel::Random,
        FactorLevel::Correlated,
        FactorLevel::Grouped,
        FactorLevel::HeteroMeans,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<FactorLevel> {
        FactorLevel::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("factor level {code} is not in 0..=5")))
    }

    /// Levels 2 through 5 draw their coefficient from a distribution.
    pub fn is_random(self) -> bool {
        self >= FactorLevel::Random
    }
}

/// Expands level codes as written in constraint blocks: `6` stands for every level.
pub fn expand_level_codes(codes: &[u8]) -> Result<Vec<FactorLevel>> {
    let mut out = Vec::new();
    for &c in codes {
        if c == 6 {
            out.extend(FactorLevel::ALL);
        } else {
            out.push(FactorLevel::from_code(c)?);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// `complexity_level` as an integer: that level and every lower one (6 means all six).
pub fn levels_up_to(max: u8) -> Result<Vec<FactorLevel>> {
    if max > 6 {
        return Err(Error::InvalidArgument(format!(
            "complexity_level {max} is not in 0..=6"
        )));
    }
    Ok(FactorLevel::ALL
        .iter()
        .copied()
        .filter(|l| l.code() <= max.min(5))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Distribution {
    Triangular,
    Uniform,
    Normal,
    LogNormal,
    TruncNormal,
}

impl Distribution {
    pub const ALL: [Distribution; 5] = [
        Distribution::Triangular,
        Distribution::Uniform,
        Distribution::Normal,
        Distribution::LogNormal,
        Distribution::TruncNormal,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Distribution::Triangular => "t",
            Distribution::Uniform => "u",
            Distribution::Normal => "n",
            Distribution::LogNormal => "ln_n",
            Distribution::TruncNormal => "tn_n",
        }
    }

    pub fn long_name(self) -> &'static str {
        match self {
            Distribution::Triangular => "triangular",
            Distribution::Uniform => "uniform",
            Distribution::Normal => "normal",
            Distribution::LogNormal => "ln_normal",
            Distribution::TruncNormal => "tn_normal",
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "t" | "triangular" => Ok(Distribution::Triangular),
            "u" | "uniform" => Ok(Distribution::Uniform),
            "n" | "normal" => Ok(Distribution::Normal),
            "ln" | "ln_n" | "ln_normal" | "lognormal" | "log-normal" => Ok(Distribution::LogNormal),
            "tn" | "tn_n" | "tn_normal" | "truncnormal" | "truncated_normal" => {
                Ok(Distribution::TruncNormal)
            }
            other => Err(Error::UnknownDistribution(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dispersion {
    Poisson,
    NegBinomial,
}

impl Dispersion {
    pub fn from_code(code: u8) -> Result<Dispersion> {
        match code {
            0 => Ok(Dispersion::Poisson),
            1 => Ok(Dispersion::NegBinomial),
            c => Err(Error::InvalidArgument(format!(
                "model type {c} is not 0 (Poisson) or 1 (negative binomial)"
            ))),
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Dispersion::Poisson => "Poisson",
            Dispersion::NegBinomial => "NB",
        }
    }
}

/// Role of a level-5 factor inside its heterogeneity group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeteroRole {
    /// A random parameter whose mean is shifted by the group's covariates.
    RandomMember,
    /// A covariate that shifts the means of the group's random members.
    MeanCovariate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorGene {
    pub level: FactorLevel,
    pub transformation: Transformation,
    pub distribution: Distribution,
    pub role: HeteroRole,
}

impl FactorGene {
    pub const OFF: FactorGene = FactorGene {
        level: FactorLevel::Off,
        transformation: Transformation::No,
        distribution: Distribution::Normal,
        role: HeteroRole::RandomMember,
    };

    pub fn new(level: FactorLevel) -> FactorGene {
        FactorGene {
            level,
            ..FactorGene::OFF
        }
    }
}

/// One heterogeneity-in-means group: random members sharing a distribution, and the
/// covariates shifting their means.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeteroGroup {
    pub distribution: Distribution,
    pub members: Vec<usize>,
    pub covariates: Vec<usize>,
}

/// A full model hypothesis. `factors[k]` describes the k-th candidate column; the
/// intercept is always a fixed effect and has no gene.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpecification {
    pub factors: Vec<FactorGene>,
    pub dispersion: Dispersion,
}

impl ModelSpecification {
    pub fn intercept_only(n_factors: usize, dispersion: Dispersion) -> Self {
        ModelSpecification {
            factors: vec![FactorGene::OFF; n_factors],
            dispersion,
        }
    }

    /// Indices of factors that enter the model.
    pub fn active_factors(&self) -> Vec<usize> {
        self.factors
            .iter()
            .enumerate()
            .filter(|(_, g)| g.level != FactorLevel::Off)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn factors_at(&self, level: FactorLevel) -> Vec<usize> {
        self.factors
            .iter()
            .enumerate()
            .filter(|(_, g)| g.level == level)
            .map(|(k, _)| k)
            .collect()
    }

    /// Level-5 factors partitioned by distribution, in distribution order.
    pub fn hetero_groups(&self) -> Vec<HeteroGroup> {
        let mut groups: BTreeMap<Distribution, HeteroGroup> = BTreeMap::new();
        for (k, g) in self.factors.iter().enumerate() {
            if g.level != FactorLevel::HeteroMeans {
                continue;
            }
            let entry = groups.entry(g.distribution).or_insert_with(|| HeteroGroup {
                distribution: g.distribution,
                members: Vec::new(),
                covariates: Vec::new(),
            });
            match g.role {
                HeteroRole::RandomMember => entry.members.push(k),
                HeteroRole::MeanCovariate => entry.covariates.push(k),
            }
        }
        groups.into_values().collect()
    }

    pub fn has_random_terms(&self) -> bool {
        self.factors.iter().any(|g| {
            g.level.is_random()
                && !(g.level == FactorLevel::HeteroMeans && g.role == HeteroRole::MeanCovariate)
        })
    }

    /// Short human-readable description of the active genes.
    pub fn describe(&self, names: &[&str]) -> String {
        let mut parts = vec![self.dispersion.name().to_string()];
        for (k, g) in self.factors.iter().enumerate() {
            let name = names.get(k).copied().unwrap_or("?");
            let tag = match g.level {
                FactorLevel::Off => continue,
                FactorLevel::Fixed => format!("{name}:F:{}", g.transformation),
                FactorLevel::Random => format!("{name}:R:{}:{}", g.transformation, g.distribution),
                FactorLevel::Correlated => {
                    format!("{name}:C:{}:{}", g.transformation, g.distribution)
                }
                FactorLevel::Grouped => format!("{name}:G:{}:{}", g.transformation, g.distribution),
                FactorLevel::HeteroMeans => {
                    let role = match g.role {
                        HeteroRole::RandomMember => "HM",
                        HeteroRole::MeanCovariate => "HZ",
                    };
                    format!("{name}:{role}:{}:{}", g.transformation, g.distribution)
                }
            };
            parts.push(tag);
        }
        parts.join(" ")
    }
}

/// Allowed decisions for one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorConstraint {
    pub levels: Vec<FactorLevel>,
    pub transformations: Vec<Transformation>,
    pub distributions: Vec<Distribution>,
}

impl FactorConstraint {
    pub fn unconstrained() -> Self {
        FactorConstraint {
            levels: FactorLevel::ALL.to_vec(),
            transformations: vec![
                Transformation::No,
                Transformation::Sqrt,
                Transformation::Log,
                Transformation::Arcsinh,
            ],
            distributions: Distribution::ALL.to_vec(),
        }
    }
}

/// Per-factor constraints plus the global search settings that bound a specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    /// Applies to every factor without an explicit entry.
    pub default: FactorConstraint,
    pub factors: BTreeMap<String, FactorConstraint>,
    pub model_types: Vec<Dispersion>,
    pub max_characteristics: usize,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        ConstraintSet {
            default: FactorConstraint::unconstrained(),
            factors: BTreeMap::new(),
            model_types: vec![Dispersion::Poisson, Dispersion::NegBinomial],
            max_characteristics: 25,
        }
    }
}

impl ConstraintSet {
    pub fn for_factor(&self, name: &str) -> &FactorConstraint {
        self.factors.get(name).unwrap_or(&self.default)
    }

    /// Every factor restricted to `levels` and `transformations`; distributions stay global.
    pub fn uniform(
        levels: Vec<FactorLevel>,
        transformations: Vec<Transformation>,
        model_types: Vec<Dispersion>,
    ) -> Self {
        ConstraintSet {
            default: FactorConstraint {
                levels,
                transformations,
                distributions: Distribution::ALL.to_vec(),
            },
            model_types,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ViolationRule {
    FactorCount,
    Level,
    Transformation,
    TransformationInfeasible,
    Distribution,
    GroupedWithoutGroups,
    HeteroGroupIncomplete,
    LoneCorrelated,
    TooManyFactors,
    ModelType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub factor: Option<String>,
    pub rule: ViolationRule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.factor {
            Some(name) => write!(f, "{name}: {:?}", self.rule),
            None => write!(f, "{:?}", self.rule),
        }
    }
}

/// Dataset facts needed to check specifications without touching the data again.
#[derive(Debug, Clone, PartialEq)]
struct DataFacts {
    names: Vec<String>,
    has_groups: bool,
    /// `feasible[k]` lists transformations valid for every value of factor k.
    feasible: Vec<Vec<Transformation>>,
}

impl DataFacts {
    fn from_dataset(ds: &Dataset) -> DataFacts {
        let names: Vec<String> = ds.candidate_names().iter().map(|s| s.to_string()).collect();
        let feasible = (0..names.len())
            .map(|k| {
                let x = ds.candidate(k);
                Transformation::ALL
                    .iter()
                    .copied()
                    .filter(|t| t.is_feasible(x))
                    .collect()
            })
            .collect();
        DataFacts {
            names,
            has_groups: ds.has_groups(),
            feasible,
        }
    }
}

fn check(spec: &ModelSpecification, constraints: &ConstraintSet, facts: &DataFacts) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |factor: Option<&str>, rule| {
        out.push(Violation {
            factor: factor.map(str::to_string),
            rule,
        })
    };
    if spec.factors.len() != facts.names.len() {
        push(None, ViolationRule::FactorCount);
        return out;
    }
    if !constraints.model_types.contains(&spec.dispersion) {
        push(None, ViolationRule::ModelType);
    }
    for (k, gene) in spec.factors.iter().enumerate() {
        let name = facts.names[k].as_str();
        let c = constraints.for_factor(name);
        if !c.levels.contains(&gene.level) {
            push(Some(name), ViolationRule::Level);
        }
        if gene.level == FactorLevel::Grouped && !facts.has_groups {
            push(Some(name), ViolationRule::GroupedWithoutGroups);
        }
        if gene.level != FactorLevel::Off {
            if !c.transformations.contains(&gene.transformation) {
                push(Some(name), ViolationRule::Transformation);
            }
            if !facts.feasible[k].contains(&gene.transformation) {
                push(Some(name), ViolationRule::TransformationInfeasible);
            }
        }
        if gene.level.is_random() && !c.distributions.contains(&gene.distribution) {
            push(Some(name), ViolationRule::Distribution);
        }
    }
    for group in spec.hetero_groups() {
        if group.members.is_empty() || group.covariates.is_empty() {
            for &k in group.members.iter().chain(&group.covariates) {
                push(Some(&facts.names[k]), ViolationRule::HeteroGroupIncomplete);
            }
        }
    }
    let correlated = spec.factors_at(FactorLevel::Correlated);
    if correlated.len() == 1 {
        push(Some(&facts.names[correlated[0]]), ViolationRule::LoneCorrelated);
    }
    if spec.active_factors().len() > constraints.max_characteristics {
        push(None, ViolationRule::TooManyFactors);
    }
    out
}

/// Lists every rule `spec` breaks against `constraints` on `ds`. Empty means valid.
pub fn validate(spec: &ModelSpecification, constraints: &ConstraintSet, ds: &Dataset) -> Vec<Violation> {
    check(spec, constraints, &DataFacts::from_dataset(ds))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotKind {
    Level,
    Transformation,
    Distribution,
    Role,
    Dispersion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Slot {
    /// `None` for the global dispersion slot.
    pub factor: Option<usize>,
    pub kind: SlotKind,
}

#[derive(Debug, Clone, PartialEq)]
struct FactorOptions {
    levels: Vec<FactorLevel>,
    transformations: Vec<Transformation>,
    distributions: Vec<Distribution>,
    roles: Vec<HeteroRole>,
}

/// Constraints resolved against a dataset: the admissible values of every chromosome slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    constraints: ConstraintSet,
    facts: DataFacts,
    options: Vec<FactorOptions>,
    dispersions: Vec<Dispersion>,
    slots: Vec<Slot>,
}

impl SearchSpace {
    pub fn new(constraints: ConstraintSet, ds: &Dataset) -> Result<SearchSpace> {
        let facts = DataFacts::from_dataset(ds);
        for name in constraints.factors.keys() {
            if !facts.names.contains(name) {
                return Err(Error::UnknownFactor(name.clone()));
            }
        }
        let mut options = Vec::with_capacity(facts.names.len());
        for (k, name) in facts.names.iter().enumerate() {
            let c = constraints.for_factor(name);
            let mut levels: Vec<FactorLevel> = c
                .levels
                .iter()
                .copied()
                .filter(|&l| l != FactorLevel::Grouped || facts.has_groups)
                .collect();
            levels.sort();
            levels.dedup();
            if levels.is_empty() {
                return Err(Error::Unsatisfiable(format!(
                    "factor {name} has no admissible level"
                )));
            }
            let mut transformations: Vec<Transformation> = c
                .transformations
                .iter()
                .copied()
                .filter(|t| facts.feasible[k].contains(t))
                .collect();
            transformations.dedup();
            let active_possible = levels.iter().any(|&l| l != FactorLevel::Off);
            if transformations.is_empty() {
                if active_possible {
                    return Err(Error::Unsatisfiable(format!(
                        "factor {name} has no feasible transformation"
                    )));
                }
                transformations.push(Transformation::No);
            }
            let mut distributions = c.distributions.clone();
            distributions.dedup();
            if distributions.is_empty() {
                if levels.iter().any(|l| l.is_random()) {
                    return Err(Error::Unsatisfiable(format!(
                        "factor {name} allows random levels but no distribution"
                    )));
                }
                distributions.push(Distribution::Normal);
            }
            let roles = if !levels.contains(&FactorLevel::HeteroMeans) {
                vec![HeteroRole::RandomMember]
            } else if levels
                .iter()
                .any(|l| matches!(l, FactorLevel::Random | FactorLevel::Correlated | FactorLevel::Grouped))
            {
                vec![HeteroRole::RandomMember, HeteroRole::MeanCovariate]
            } else {
                vec![HeteroRole::MeanCovariate]
            };
            options.push(FactorOptions {
                levels,
                transformations,
                distributions,
                roles,
            });
        }
        let mut dispersions = constraints.model_types.clone();
        dispersions.sort();
        dispersions.dedup();
        if dispersions.is_empty() {
            return Err(Error::Unsatisfiable("no model type allowed".into()));
        }
        let n = facts.names.len();
        let mut slots = Vec::with_capacity(4 * n + 1);
        for kind in [
            SlotKind::Level,
            SlotKind::Transformation,
            SlotKind::Distribution,
            SlotKind::Role,
        ] {
            slots.extend((0..n).map(|k| Slot {
                factor: Some(k),
                kind,
            }));
        }
        slots.push(Slot {
            factor: None,
            kind: SlotKind::Dispersion,
        });
        Ok(SearchSpace {
            constraints,
            facts,
            options,
            dispersions,
            slots,
        })
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn n_factors(&self) -> usize {
        self.facts.names.len()
    }

    pub fn factor_names(&self) -> Vec<&str> {
        self.facts.names.iter().map(String::as_str).collect()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn cardinality(&self, j: usize) -> usize {
        let slot = self.slots[j];
        match (slot.kind, slot.factor) {
            (SlotKind::Dispersion, _) => self.dispersions.len(),
            (kind, Some(k)) => {
                let o = &self.options[k];
                match kind {
                    SlotKind::Level => o.levels.len(),
                    SlotKind::Transformation => o.transformations.len(),
                    SlotKind::Distribution => o.distributions.len(),
                    SlotKind::Role => o.roles.len(),
                    SlotKind::Dispersion => unreachable!(),
                }
            }
            (_, None) => unreachable!(),
        }
    }

    pub fn validate(&self, spec: &ModelSpecification) -> Vec<Violation> {
        check(spec, &self.constraints, &self.facts)
    }

    pub fn is_valid(&self, spec: &ModelSpecification) -> bool {
        self.validate(spec).is_empty()
    }

    /// Slot index vector of `spec`. Fails when some gene is not admissible.
    pub fn encode(&self, spec: &ModelSpecification) -> Result<Vec<usize>> {
        if spec.factors.len() != self.n_factors() {
            return Err(Error::DimensionMismatch(format!(
                "specification has {} factors, space has {}",
                spec.factors.len(),
                self.n_factors()
            )));
        }
        fn pos<T: PartialEq + fmt::Debug>(list: &[T], v: &T, what: &str, name: &str) -> Result<usize> {
            list.iter().position(|x| x == v).ok_or_else(|| {
                Error::InvalidSpecification(format!("{what} {v:?} not admissible for {name}"))
            })
        }
        self.slots
            .iter()
            .map(|slot| match (slot.kind, slot.factor) {
                (SlotKind::Dispersion, _) => {
                    pos(&self.dispersions, &spec.dispersion, "model type", "model")
                }
                (kind, Some(k)) => {
                    let o = &self.options[k];
                    let g = &spec.factors[k];
                    let name = &self.facts.names[k];
                    match kind {
                        SlotKind::Level => pos(&o.levels, &g.level, "level", name),
                        SlotKind::Transformation => {
                            pos(&o.transformations, &g.transformation, "transformation", name)
                        }
                        SlotKind::Distribution => {
                            pos(&o.distributions, &g.distribution, "distribution", name)
                        }
                        SlotKind::Role => pos(&o.roles, &g.role, "role", name),
                        SlotKind::Dispersion => unreachable!(),
                    }
                }
                (_, None) => unreachable!(),
            })
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Result<ModelSpecification> {
        if indices.len() != self.n_slots() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} slot indices, got {}",
                self.n_slots(),
                indices.len()
            )));
        }
        let mut spec = ModelSpecification::intercept_only(self.n_factors(), self.dispersions[0]);
        for (j, (&idx, slot)) in indices.iter().zip(&self.slots).enumerate() {
            if idx >= self.cardinality(j) {
                return Err(Error::InvalidArgument(format!(
                    "slot {j} index {idx} out of range {}",
                    self.cardinality(j)
                )));
            }
            match (slot.kind, slot.factor) {
                (SlotKind::Dispersion, _) => spec.dispersion = self.dispersions[idx],
                (kind, Some(k)) => {
                    let o = &self.options[k];
                    let g = &mut spec.factors[k];
                    match kind {
                        SlotKind::Level => g.level = o.levels[idx],
                        SlotKind::Transformation => g.transformation = o.transformations[idx],
                        SlotKind::Distribution => g.distribution = o.distributions[idx],
                        SlotKind::Role => g.role = o.roles[idx],
                        SlotKind::Dispersion => unreachable!(),
                    }
                }
                (_, None) => unreachable!(),
            }
        }
        Ok(spec)
    }

    /// Whether slot `j` influences the model described by `spec`.
    pub fn slot_is_relevant(&self, spec: &ModelSpecification, j: usize) -> bool {
        let slot = self.slots[j];
        let Some(k) = slot.factor else {
            return true;
        };
        let level = spec.factors[k].level;
        match slot.kind {
            SlotKind::Level => true,
            SlotKind::Transformation => level != FactorLevel::Off,
            SlotKind::Distribution => level.is_random(),
            SlotKind::Role => level == FactorLevel::HeteroMeans,
            SlotKind::Dispersion => true,
        }
    }

    /// Resets genes that do not affect the model to the first admissible value, so that
    /// equivalent specifications share one encoding.
    pub fn canonicalize(&self, spec: &ModelSpecification) -> ModelSpecification {
        let mut out = spec.clone();
        for (k, g) in out.factors.iter_mut().enumerate() {
            let o = &self.options[k];
            if g.level == FactorLevel::Off {
                g.transformation = o.transformations[0];
            }
            if !g.level.is_random() {
                g.distribution = o.distributions[0];
            }
            if g.level != FactorLevel::HeteroMeans {
                g.role = o.roles[0];
            }
        }
        out
    }

    fn lower_level(&self, k: usize, from: FactorLevel, avoid: &[FactorLevel]) -> Option<FactorLevel> {
        self.options[k]
            .levels
            .iter()
            .rev()
            .copied()
            .find(|&l| l < from && !avoid.contains(&l))
    }

    /// Deterministic repair of structural violations: incomplete heterogeneity groups and
    /// lone correlated factors drop to the nearest admissible lower level, and factors
    /// beyond the characteristics cap are switched off from the last factor backwards.
    pub fn repair(&self, spec: &ModelSpecification) -> ModelSpecification {
        let mut out = self.canonicalize(spec);
        for _ in 0..(4 * self.n_factors() + 4) {
            let mut changed = false;
            for group in out.hetero_groups() {
                if group.members.is_empty() || group.covariates.is_empty() {
                    for &k in group.members.iter().chain(&group.covariates) {
                        if let Some(l) = self.lower_level(k, FactorLevel::HeteroMeans, &[]) {
                            out.factors[k].level = l;
                            changed = true;
                        }
                    }
                }
            }
            let correlated = out.factors_at(FactorLevel::Correlated);
            if correlated.len() == 1 {
                let k = correlated[0];
                if let Some(l) = self.lower_level(k, FactorLevel::Correlated, &[]) {
                    out.factors[k].level = l;
                    changed = true;
                }
            }
            let mut active = out.active_factors().len();
            if active > self.constraints.max_characteristics {
                for k in (0..self.n_factors()).rev() {
                    if active <= self.constraints.max_characteristics {
                        break;
                    }
                    if out.factors[k].level != FactorLevel::Off
                        && self.options[k].levels.contains(&FactorLevel::Off)
                    {
                        out.factors[k].level = FactorLevel::Off;
                        active -= 1;
                        changed = true;
                    }
                }
            }
            out = self.canonicalize(&out);
            if !changed {
                break;
            }
        }
        out
    }

    /// Uniform draw over admissible values per slot, repaired and checked. Gives up with
    /// [`Error::Unsatisfiable`] when no valid specification turns up.
    pub fn random_specification<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelSpecification> {
        const ATTEMPTS: usize = 500;
        for _ in 0..ATTEMPTS {
            let indices: Vec<usize> = (0..self.n_slots())
                .map(|j| rng.gen_range(0..self.cardinality(j)))
                .collect();
            let mut spec = self.decode(&indices)?;
            let cap = self.constraints.max_characteristics;
            let mut active: Vec<usize> = spec
                .active_factors()
                .into_iter()
                .filter(|&k| self.options[k].levels.contains(&FactorLevel::Off))
                .collect();
            while spec.active_factors().len() > cap && !active.is_empty() {
                let k = active.swap_remove(rng.gen_range(0..active.len()));
                spec.factors[k].level = FactorLevel::Off;
            }
            let spec = self.repair(&spec);
            if self.is_valid(&spec) {
                return Ok(spec);
            }
        }
        Err(Error::Unsatisfiable(format!(
            "no valid specification found in {ATTEMPTS} random draws"
        )))
    }

    /// Slots a neighbour move may change: relevant and with more than one value.
    pub fn mutable_slots(&self, spec: &ModelSpecification) -> Vec<usize> {
        (0..self.n_slots())
            .filter(|&j| self.cardinality(j) > 1 && self.slot_is_relevant(spec, j))
            .collect()
    }

    /// Every specification one slot step (+1 or -1, wrapping) away, before repair.
    pub fn single_moves(&self, spec: &ModelSpecification) -> Vec<ModelSpecification> {
        let Ok(idx) = self.encode(spec) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for j in self.mutable_slots(spec) {
            let card = self.cardinality(j);
            for step in [1, card - 1] {
                let mut next = idx.clone();
                next[j] = (idx[j] + step) % card;
                if let Ok(s) = self.decode(&next) {
                    let s = self.canonicalize(&s);
                    if !out.contains(&s) {
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    /// A random neighbour: one mutable slot moved to an adjacent index (wrapping), then
    /// repaired. `extra_move_prob` additionally moves each other mutable slot with that
    /// probability (0 gives the single-slot neighbourhood).
    pub fn neighbor<R: Rng + ?Sized>(
        &self,
        spec: &ModelSpecification,
        rng: &mut R,
        extra_move_prob: f64,
    ) -> ModelSpecification {
        let Ok(idx) = self.encode(spec) else {
            return spec.clone();
        };
        let mutable = self.mutable_slots(spec);
        if mutable.is_empty() {
            return spec.clone();
        }
        for _ in 0..64 {
            let mut next = idx.clone();
            let chosen = mutable[rng.gen_range(0..mutable.len())];
            for &j in &mutable {
                if j == chosen || (extra_move_prob > 0.0 && rng.gen::<f64>() < extra_move_prob) {
                    let card = self.cardinality(j);
                    next[j] = if rng.gen::<bool>() {
                        (next[j] + 1) % card
                    } else {
                        (next[j] + card - 1) % card
                    };
                }
            }
            if let Ok(candidate) = self.decode(&next) {
                let candidate = self.repair(&candidate);
                if self.is_valid(&candidate) && &candidate != spec {
                    return candidate;
                }
            }
        }
        spec.clone()
    }
}

/// Differential-evolution index move: `(base + scale * (a - b)) mod cardinality`, with a
/// non-negative remainder.
pub fn de_index_update(base: usize, a: usize, b: usize, scale: i64, cardinality: usize) -> Result<usize> {
    if cardinality == 0 {
        return Err(Error::InvalidArgument("cardinality must be at least 1".into()));
    }
    let card = cardinality as i128;
    let raw = base as i128 + scale as i128 * (a as i128 - b as i128);
    Ok(raw.rem_euclid(card) as usize)
}

/// Analyst-written specification, using the configuration field names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualFit {
    #[serde(default)]
    pub fixed_terms: Vec<String>,
    #[serde(default)]
    pub rdm_terms: Vec<String>,
    #[serde(default)]
    pub rdm_cor_terms: Vec<String>,
    #[serde(default)]
    pub grouped_terms: Vec<String>,
    #[serde(default, alias = "hetero_in_means")]
    pub hetro_in_means: Vec<String>,
    #[serde(default)]
    pub transformations: Vec<String>,
    #[serde(default)]
    pub dispersion: u8,
}

/// Name of the always-present intercept in manual specifications and reports.
pub const INTERCEPT: &str = "const";

fn split_term(token: &str) -> Result<(String, Option<Distribution>)> {
    let mut parts = token.rsplitn(2, ':');
    let last = parts.next().unwrap_or("").trim();
    match parts.next() {
        Some(name) => Ok((name.trim().to_string(), Some(last.parse()?))),
        None => Ok((last.to_string(), None)),
    }
}

/// Builds a specification from a manual fit block.
///
/// Terms are `name` or `name:distribution`. The transformation list follows the order
/// fixed, random, correlated, grouped, heterogeneity terms; trailing extra entries must be
/// `no`. In the heterogeneity list, `main:` marks random members; without any such marker
/// the first term is the mean covariate and the rest are random members.
pub fn parse_manual_specification(fit: &ManualFit, factor_names: &[&str]) -> Result<ModelSpecification> {
    let mut spec = ModelSpecification::intercept_only(
        factor_names.len(),
        Dispersion::from_code(fit.dispersion)?,
    );
    let mut assigned = vec![false; factor_names.len()];
    let mut order: Vec<Option<usize>> = Vec::new();

    let explicit_main = fit
        .hetro_in_means
        .iter()
        .any(|t| t.trim_start().starts_with("main:"));
    let lists: [(&[String], FactorLevel); 5] = [
        (&fit.fixed_terms, FactorLevel::Fixed),
        (&fit.rdm_terms, FactorLevel::Random),
        (&fit.rdm_cor_terms, FactorLevel::Correlated),
        (&fit.grouped_terms, FactorLevel::Grouped),
        (&fit.hetro_in_means, FactorLevel::HeteroMeans),
    ];
    for (terms, level) in lists {
        for (i, token) in terms.iter().enumerate() {
            let mut token = token.trim();
            let mut role = HeteroRole::RandomMember;
            if level == FactorLevel::HeteroMeans {
                if let Some(rest) = token.strip_prefix("main:") {
                    token = rest;
                } else if explicit_main || i == 0 {
                    role = HeteroRole::MeanCovariate;
                }
            }
            let (name, dist) = split_term(token)?;
            if name == INTERCEPT {
                if level != FactorLevel::Fixed {
                    return Err(Error::InvalidSpecification(
                        "the intercept can only be a fixed term".into(),
                    ));
                }
                order.push(None);
                continue;
            }
            let k = factor_names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::UnknownFactor(name.clone()))?;
            if assigned[k] {
                return Err(Error::InvalidSpecification(format!(
                    "factor {name} appears in more than one term list"
                )));
            }
            assigned[k] = true;
            let gene = &mut spec.factors[k];
            gene.level = level;
            gene.role = role;
            if level.is_random() && role == HeteroRole::RandomMember {
                gene.distribution = dist.ok_or_else(|| {
                    Error::InvalidSpecification(format!("term {name} needs a distribution"))
                })?;
            } else if let Some(d) = dist {
                gene.distribution = d;
            }
            order.push(Some(k));
        }
    }

    if fit.transformations.len() < order.len() {
        return Err(Error::InvalidSpecification(format!(
            "transformation list has {} entries for {} terms",
            fit.transformations.len(),
            order.len()
        )));
    }
    for (slot, token) in order.iter().zip(&fit.transformations) {
        let t: Transformation = token.parse()?;
        match slot {
            Some(k) => spec.factors[*k].transformation = t,
            None if t != Transformation::No => {
                return Err(Error::InvalidSpecification(
                    "the intercept cannot be transformed".into(),
                ))
            }
            None => {}
        }
    }
    for extra in &fit.transformations[order.len()..] {
        if extra.parse::<Transformation>()? != Transformation::No {
            return Err(Error::InvalidSpecification(format!(
                "transformation list has {} entries for {} terms",
                fit.transformations.len(),
                order.len()
            )));
        }
    }

    // A single correlated term is a plain random parameter.
    let correlated = spec.factors_at(FactorLevel::Correlated);
    if correlated.len() == 1 {
        spec.factors[correlated[0]].level = FactorLevel::Random;
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnData, ModelTerms};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::{HashSet, VecDeque};

    fn dataset(names: &[&str], with_group: bool) -> Dataset {
        let n = 12;
        let mut cols = vec![(
            "Y".to_string(),
            ColumnData::Numeric((0..n).map(|i| (i % 4) as f64).collect()),
        )];
        for (j, name) in names.iter().enumerate() {
            cols.push((
                name.to_string(),
                ColumnData::Numeric((0..n).map(|i| 0.5 + ((i * (j + 2)) % 7) as f64).collect()),
            ));
        }
        let mut terms = ModelTerms::response("Y");
        if with_group {
            cols.push((
                "G".into(),
                ColumnData::Categorical((0..n).map(|i| format!("g{}", i % 3)).collect()),
            ));
            terms.group = Some("G".into());
        }
        Dataset::from_columns(cols).unwrap().assign_roles(&terms).unwrap()
    }

    fn analyst_constraints() -> ConstraintSet {
        let mut c = ConstraintSet::default();
        let entry = |levels: &[u8], dists: &[&str]| FactorConstraint {
            levels: expand_level_codes(levels).unwrap(),
            transformations: vec![Transformation::No],
            distributions: dists.iter().map(|d| d.parse().unwrap()).collect(),
        };
        c.factors.insert("X1".into(), entry(&[0, 1], &[]));
        c.factors.insert("X2".into(), entry(&[1, 2, 5], &["n", "t"]));
        c.factors.insert("X3".into(), entry(&[0, 2, 6], &["n", "ln"]));
        c.factors.insert("Z1".into(), entry(&[0, 5], &["n"]));
        c.factors.insert("Z2".into(), entry(&[0, 2, 5], &["ln"]));
        c
    }

    #[test]
    fn distribution_aliases_canonicalize() {
        assert_eq!("ln".parse::<Distribution>().unwrap(), Distribution::LogNormal);
        assert_eq!("ln_n".parse::<Distribution>().unwrap(), Distribution::LogNormal);
        assert_eq!("tn".parse::<Distribution>().unwrap(), Distribution::TruncNormal);
        assert_eq!("tn_normal".parse::<Distribution>().unwrap(), Distribution::TruncNormal);
        assert_eq!("triangular".parse::<Distribution>().unwrap(), Distribution::Triangular);
        assert_eq!(Distribution::LogNormal.code(), "ln_n");
        assert!("beta".parse::<Distribution>().is_err());
    }

    #[test]
    fn level_expansion() {
        assert_eq!(levels_up_to(6).unwrap(), FactorLevel::ALL.to_vec());
        assert_eq!(levels_up_to(5).unwrap(), FactorLevel::ALL.to_vec());
        assert_eq!(
            levels_up_to(1).unwrap(),
            vec![FactorLevel::Off, FactorLevel::Fixed]
        );
        assert_eq!(expand_level_codes(&[0, 2, 6]).unwrap().len(), 6);
        assert!(expand_level_codes(&[7]).is_err());
    }

    #[test]
    fn singleton_space_yields_all_fixed() {
        let ds = dataset(&["A", "B", "C"], false);
        let c = ConstraintSet::uniform(
            vec![FactorLevel::Fixed],
            vec![Transformation::No],
            vec![Dispersion::Poisson],
        );
        let space = SearchSpace::new(c, &ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = space.random_specification(&mut rng).unwrap();
            assert!(s.factors.iter().all(|g| g.level == FactorLevel::Fixed
                && g.transformation == Transformation::No));
            assert_eq!(s.dispersion, Dispersion::Poisson);
        }
    }

    #[test]
    fn binary_levels_both_occur() {
        let ds = dataset(&["A"], false);
        let c = ConstraintSet::uniform(
            vec![FactorLevel::Off, FactorLevel::Fixed],
            vec![Transformation::No],
            vec![Dispersion::Poisson],
        );
        let space = SearchSpace::new(c, &ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let on = (0..n)
            .filter(|_| space.random_specification(&mut rng).unwrap().factors[0].level == FactorLevel::Fixed)
            .count();
        // Binomial(10000, 0.5): sd 50, so 5000 +/- 300 is a 6-sigma band.
        assert!((4700..=5300).contains(&on), "on = {on}");
    }

    #[test]
    fn analyst_constraints_respected_by_random_specs() {
        let ds = dataset(&["X1", "X2", "X3", "Z1", "Z2"], true);
        let space = SearchSpace::new(analyst_constraints(), &ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let s = space.random_specification(&mut rng).unwrap();
            assert!(space.validate(&s).is_empty());
            assert!(!s.factors[0].level.is_random());
            assert_ne!(s.factors[1].level, FactorLevel::Off);
        }
    }

    #[test]
    fn validate_reports_violations() {
        let ds = dataset(&["X1", "X2", "X3", "Z1", "Z2"], false);
        let c = analyst_constraints();
        let mut s = ModelSpecification::intercept_only(5, Dispersion::Poisson);
        s.factors[1].level = FactorLevel::Off;
        let v = validate(&s, &c, &ds);
        assert!(v.contains(&Violation {
            factor: Some("X2".into()),
            rule: ViolationRule::Level
        }));

        let mut all_fixed = ModelSpecification::intercept_only(5, Dispersion::Poisson);
        all_fixed.factors.iter_mut().for_each(|g| g.level = FactorLevel::Fixed);
        assert!(validate(&all_fixed, &ConstraintSet::default(), &ds).is_empty());

        let mut grouped = all_fixed.clone();
        grouped.factors[0].level = FactorLevel::Grouped;
        let v = validate(&grouped, &ConstraintSet::default(), &ds);
        assert!(v.iter().any(|v| v.rule == ViolationRule::GroupedWithoutGroups));

        let mut lone = all_fixed.clone();
        lone.factors[0].level = FactorLevel::Correlated;
        let v = validate(&lone, &ConstraintSet::default(), &ds);
        assert!(v.iter().any(|v| v.rule == ViolationRule::LoneCorrelated));
    }

    #[test]
    fn grouped_level_masked_without_group_column() {
        let ds = dataset(&["A"], false);
        let c = ConstraintSet::uniform(
            vec![FactorLevel::Grouped],
            vec![Transformation::No],
            vec![Dispersion::Poisson],
        );
        assert!(matches!(SearchSpace::new(c, &ds), Err(Error::Unsatisfiable(_))));
    }

    #[test]
    fn infeasible_transformations_are_masked() {
        let n = 6;
        let ds = Dataset::from_columns(vec![
            ("Y".into(), ColumnData::Numeric(vec![1.0; n])),
            ("Z".into(), ColumnData::Numeric((0..n).map(|i| i as f64).collect())),
        ])
        .unwrap()
        .assign_roles(&ModelTerms::response("Y"))
        .unwrap();
        let space = SearchSpace::new(ConstraintSet::default(), &ds).unwrap();
        let j = space
            .slots()
            .iter()
            .position(|s| s.kind == SlotKind::Transformation)
            .unwrap();
        // no, sqrt, arcsinh remain; log fails on the zero.
        assert_eq!(space.cardinality(j), 3);
    }

    fn toy_space(n: usize, with_group: bool) -> (Dataset, SearchSpace) {
        let names: Vec<String> = (0..n).map(|i| format!("A{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let ds = dataset(&refs, with_group);
        let mut c = ConstraintSet::default();
        c.default.transformations = vec![Transformation::No, Transformation::Sqrt];
        c.default.distributions = vec![Distribution::Normal, Distribution::Uniform];
        let space = SearchSpace::new(c, &ds).unwrap();
        (ds, space)
    }

    #[test]
    fn encode_decode_roundtrip_exhaustive() {
        let (_, space) = toy_space(3, true);
        // Enumerate every index vector and keep canonical valid specs.
        let cards: Vec<usize> = (0..space.n_slots()).map(|j| space.cardinality(j)).collect();
        let total: usize = cards.iter().product();
        let mut idx = vec![0usize; cards.len()];
        let mut checked = 0;
        for _ in 0..total {
            let spec = space.decode(&idx).unwrap();
            let canon = space.canonicalize(&spec);
            if space.is_valid(&canon) {
                let enc = space.encode(&canon).unwrap();
                assert_eq!(space.decode(&enc).unwrap(), canon);
                checked += 1;
            }
            for j in 0..idx.len() {
                idx[j] += 1;
                if idx[j] < cards[j] {
                    break;
                }
                idx[j] = 0;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn neighbor_changes_one_slot() {
        let (_, space) = toy_space(4, false);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut spec = space.random_specification(&mut rng).unwrap();
        for _ in 0..500 {
            let next = space.neighbor(&spec, &mut rng, 0.0);
            assert!(space.is_valid(&next));
            let a = space.encode(&spec).unwrap();
            let b = space.encode(&next).unwrap();
            let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count();
            assert!(diff >= 1);
            // Changes beyond one slot only come from canonicalization or repair.
            if diff > 1 {
                let raw_moves = space.single_moves(&spec);
                assert!(raw_moves.iter().any(|m| space.repair(m) == next));
            }
            spec = next;
        }
    }

    #[test]
    fn cardinality_one_slots_never_move() {
        let ds = dataset(&["A", "B"], false);
        let mut c = ConstraintSet::uniform(
            vec![FactorLevel::Off, FactorLevel::Fixed],
            vec![Transformation::No],
            vec![Dispersion::Poisson],
        );
        c.factors.insert(
            "B".into(),
            FactorConstraint {
                levels: vec![FactorLevel::Fixed],
                transformations: vec![Transformation::No],
                distributions: vec![],
            },
        );
        let space = SearchSpace::new(c, &ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = space.random_specification(&mut rng).unwrap();
        for _ in 0..100 {
            let next = space.neighbor(&spec, &mut rng, 0.0);
            assert_eq!(next.factors[1], spec.factors[1]);
            assert_ne!(next.factors[0].level, spec.factors[0].level);
        }
    }

    #[test]
    fn neighbor_moves_connect_small_space() {
        let ds = dataset(&["A", "B"], false);
        let c = ConstraintSet::uniform(
            vec![FactorLevel::Off, FactorLevel::Fixed],
            vec![Transformation::No],
            vec![Dispersion::Poisson],
        );
        let space = SearchSpace::new(c, &ds).unwrap();
        let all: Vec<ModelSpecification> = [(0, 0), (0, 1), (1, 0), (1, 1)]
            .iter()
            .map(|&(a, b)| {
                let mut s = ModelSpecification::intercept_only(2, Dispersion::Poisson);
                s.factors[0].level = FactorLevel::ALL[a];
                s.factors[1].level = FactorLevel::ALL[b];
                space.canonicalize(&s)
            })
            .collect();
        for start in &all {
            let mut seen = HashSet::from([start.clone()]);
            let mut queue = VecDeque::from([start.clone()]);
            while let Some(s) = queue.pop_front() {
                for m in space.single_moves(&s) {
                    let m = space.repair(&m);
                    if seen.insert(m.clone()) {
                        queue.push_back(m);
                    }
                }
            }
            assert_eq!(seen.len(), 4);
        }
    }

    #[test]
    fn repair_downgrades_lone_correlated_and_incomplete_groups() {
        let (_, space) = toy_space(3, false);
        let mut s = ModelSpecification::intercept_only(3, Dispersion::Poisson);
        s.factors[0].level = FactorLevel::Correlated;
        let r = space.repair(&s);
        assert_eq!(r.factors[0].level, FactorLevel::Random);

        let mut s = ModelSpecification::intercept_only(3, Dispersion::Poisson);
        s.factors[1].level = FactorLevel::HeteroMeans;
        let r = space.repair(&s);
        // Grouped is masked (no group column), then correlated would be alone: random.
        assert_eq!(r.factors[1].level, FactorLevel::Random);
        assert!(space.is_valid(&r));
    }

    #[test]
    fn de_index_examples() {
        assert_eq!(de_index_update(1, 3, 0, 2, 6).unwrap(), 1);
        assert_eq!(de_index_update(0, 0, 2, 1, 5).unwrap(), 3);
        assert!(de_index_update(0, 0, 0, 1, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn de_index_closed(base in 0usize..50, a in 0usize..50, b in 0usize..50,
                           scale in -5i64..6, card in 1usize..50) {
            let r = de_index_update(base % card, a % card, b % card, scale, card).unwrap();
            proptest::prop_assert!(r < card);
        }

        #[test]
        fn random_specs_validate(seed in 0u64..10_000) {
            let (_, space) = toy_space(4, true);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = space.random_specification(&mut rng).unwrap();
            proptest::prop_assert!(space.validate(&s).is_empty());
        }
    }

    #[test]
    fn de_index_property_many_tuples() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100_000 {
            let card = rng.gen_range(1..40usize);
            let r = de_index_update(
                rng.gen_range(0..card),
                rng.gen_range(0..card),
                rng.gen_range(0..card),
                rng.gen_range(-4..5),
                card,
            )
            .unwrap();
            assert!(r < card);
        }
    }

    #[test]
    fn shrinking_constraints_never_admits_more() {
        let (ds, space) = toy_space(2, false);
        let mut small = space.constraints().clone();
        small.default.levels = vec![FactorLevel::Off, FactorLevel::Fixed, FactorLevel::Random];
        let cards: Vec<usize> = (0..space.n_slots()).map(|j| space.cardinality(j)).collect();
        let total: usize = cards.iter().product();
        let mut idx = vec![0usize; cards.len()];
        for _ in 0..total {
            let s = space.decode(&idx).unwrap();
            if validate(&s, &small, &ds).is_empty() {
                assert!(validate(&s, space.constraints(), &ds).is_empty());
            }
            for j in 0..idx.len() {
                idx[j] += 1;
                if idx[j] < cards[j] {
                    break;
                }
                idx[j] = 0;
            }
        }
    }

    #[test]
    fn manual_correlated_listing() {
        let fit = ManualFit {
            fixed_terms: vec!["const".into()],
            rdm_cor_terms: vec!["X1:uniform".into(), "X2:normal".into(), "X3:triangular".into()],
            transformations: vec!["no".into(); 4],
            dispersion: 0,
            ..Default::default()
        };
        let s = parse_manual_specification(&fit, &["X1", "X2", "X3"]).unwrap();
        assert_eq!(s.dispersion, Dispersion::Poisson);
        let expect = [Distribution::Uniform, Distribution::Normal, Distribution::Triangular];
        for (g, d) in s.factors.iter().zip(expect) {
            assert_eq!(g.level, FactorLevel::Correlated);
            assert_eq!(g.distribution, d);
        }
    }

    #[test]
    fn manual_intercept_only_and_errors() {
        let fit = ManualFit {
            fixed_terms: vec!["const".into()],
            transformations: vec!["no".into()],
            ..Default::default()
        };
        let s = parse_manual_specification(&fit, &["A"]).unwrap();
        assert!(s.active_factors().is_empty());

        let bad = ManualFit {
            fixed_terms: vec!["const".into(), "Q".into()],
            transformations: vec!["no".into(); 2],
            ..Default::default()
        };
        assert_eq!(
            parse_manual_specification(&bad, &["A"]).unwrap_err(),
            Error::UnknownFactor("Q".into())
        );
        let bad = ManualFit {
            rdm_terms: vec!["A:beta".into()],
            transformations: vec!["no".into()],
            ..Default::default()
        };
        assert!(matches!(
            parse_manual_specification(&bad, &["A"]),
            Err(Error::UnknownDistribution(_))
        ));
        let bad = ManualFit {
            fixed_terms: vec!["const".into(), "A".into()],
            transformations: vec!["no".into()],
            ..Default::default()
        };
        assert!(matches!(
            parse_manual_specification(&bad, &["A"]),
            Err(Error::InvalidSpecification(_))
        ));
    }

    #[test]
    fn manual_hetero_listing() {
        let fit = ManualFit {
            fixed_terms: vec!["const".into()],
            rdm_terms: vec!["X1:uniform".into()],
            hetro_in_means: vec!["Z1:normal".into(), "X2:normal".into(), "X3:normal".into()],
            transformations: vec!["no".into(); 6],
            dispersion: 0,
            ..Default::default()
        };
        let names = ["X1", "X2", "X3", "Z1"];
        let s = parse_manual_specification(&fit, &names).unwrap();
        let groups = s.hetero_groups();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].distribution, Distribution::Normal);
        assert_eq!(groups[0].covariates, vec![3]);
        assert_eq!(groups[0].members, vec![1, 2]);
        assert_eq!(s.factors[0].level, FactorLevel::Random);
    }
}
