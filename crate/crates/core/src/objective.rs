//! Specification scoring for the search: fit on the training split, score on both splits,
//! cache by canonical encoding.

use std::collections::HashMap;

use crate::data::Dataset;
use crate::estimator::{fit, mspe, FitResult, FitSettings, ObjectiveKind, ObjectiveValues};
use crate::search::{Evaluated, SpecObjective};
use crate::spec::{ModelSpecification, SearchSpace};

/// One or two objectives to minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Objectives {
    pub first: ObjectiveKind,
    pub second: Option<ObjectiveKind>,
}

impl Objectives {
    pub fn single(first: ObjectiveKind) -> Self {
        Objectives { first, second: None }
    }

    pub fn pair(first: ObjectiveKind, second: ObjectiveKind) -> Self {
        Objectives {
            first,
            second: Some(second),
        }
    }

    pub fn is_multi(&self) -> bool {
        self.second.is_some()
    }
}

pub struct ModelObjective<'a> {
    space: SearchSpace,
    train: &'a Dataset,
    test: &'a Dataset,
    settings: FitSettings,
    objectives: Objectives,
    cache: HashMap<Vec<usize>, FitResult>,
    invalid_submissions: usize,
    estimations: usize,
}

impl<'a> ModelObjective<'a> {
    /// MSPE objectives fall back to single-objective mode when `test` is empty.
    pub fn new(
        space: SearchSpace,
        train: &'a Dataset,
        test: &'a Dataset,
        settings: FitSettings,
        mut objectives: Objectives,
    ) -> Self {
        if test.n_obs() == 0 {
            if objectives.second == Some(ObjectiveKind::Mspe) {
                objectives.second = None;
            }
            if objectives.first == ObjectiveKind::Mspe {
                objectives.first = ObjectiveKind::Bic;
            }
        }
        ModelObjective {
            space,
            train,
            test,
            settings,
            objectives,
            cache: HashMap::new(),
            invalid_submissions: 0,
            estimations: 0,
        }
    }

    pub fn objectives(&self) -> Objectives {
        self.objectives
    }

    /// Submissions that violated the constraints; these are never estimated.
    pub fn invalid_submissions(&self) -> usize {
        self.invalid_submissions
    }

    /// Distinct specifications estimated.
    pub fn estimations(&self) -> usize {
        self.estimations
    }

    pub fn cached_fit(&self, spec: &ModelSpecification) -> Option<&FitResult> {
        let key = self.space.encode(&self.space.canonicalize(spec)).ok()?;
        self.cache.get(&key)
    }

    pub fn settings(&self) -> &FitSettings {
        &self.settings
    }

    fn values(&self, fit: &FitResult) -> ObjectiveValues {
        if !fit.converged {
            return ObjectiveValues::sentinel();
        }
        ObjectiveValues {
            loglik: fit.loglik,
            criteria: fit.criteria(),
            mspe: mspe(fit, self.test),
        }
    }

    fn point(&self, values: &ObjectiveValues) -> [f64; 2] {
        [
            values.get(self.objectives.first),
            self.objectives.second.map_or(0.0, |k| values.get(k)),
        ]
    }
}

impl SpecObjective for ModelObjective<'_> {
    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&mut self, spec: &ModelSpecification) -> Evaluated {
        let spec = self.space.canonicalize(spec);
        let key = match self.space.encode(&spec) {
            Ok(k) if self.space.is_valid(&spec) => k,
            _ => {
                self.invalid_submissions += 1;
                let values = ObjectiveValues::sentinel();
                return Evaluated {
                    point: self.point(&values),
                    spec,
                    values,
                    converged: false,
                    cached: false,
                };
            }
        };
        let cached = self.cache.contains_key(&key);
        if !cached {
            let mut settings = self.settings;
            settings.standard_errors = false;
            let result = fit(&spec, self.train, &settings);
            self.estimations += 1;
            self.cache.insert(key.clone(), result);
        }
        let result = &self.cache[&key];
        let values = self.values(result);
        Evaluated {
            point: self.point(&values),
            converged: result.converged,
            spec,
            values,
            cached,
        }
    }
}
