//! Run orchestration and the run folder.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use countreg_core::data::{split, Dataset, Split, SplitPlan};
use countreg_core::estimator::{fit, mspe, FitResult, ObjectiveValues};
use countreg_core::objective::{ModelObjective, Objectives};
use countreg_core::report::{archive_csv, front_data, front_svg, render_fit_table};
use countreg_core::search::{run_search, ArchiveMember, IterationRecord, SearchOutcome, StopReason};
use countreg_core::spec::{parse_manual_specification, ModelSpecification, SearchSpace};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

/// Loaded data, split and search space for a configuration.
pub struct Prepared {
    pub data: Dataset,
    pub split: Split,
    pub plan: SplitPlan,
    pub space: SearchSpace,
}

impl Prepared {
    pub fn new(cfg: &RunConfig) -> Result<Prepared, CliError> {
        let raw = Dataset::load_csv(&cfg.data)?;
        let data = raw.assign_roles(&cfg.model_terms)?;
        let mut plan = SplitPlan::default_for(&data, cfg.seed);
        plan.test_fraction = cfg.test_percentage;
        let split = split(&data, &plan)?;
        let names = data.candidate_names();
        let constraints = cfg.constraints(&names)?;
        let space = SearchSpace::new(constraints, &data)?;
        Ok(Prepared {
            data,
            split,
            plan,
            space,
        })
    }

    pub fn factor_names(&self) -> Vec<&str> {
        self.data.candidate_names()
    }

    pub fn manual_specification(&self, cfg: &RunConfig) -> Result<Option<ModelSpecification>, CliError> {
        let Some(m) = &cfg.manual_fit else {
            return Ok(None);
        };
        let spec = parse_manual_specification(m, &self.factor_names())?;
        Ok(Some(spec))
    }
}

/// `H:MM:SS.ffffff`.
pub fn format_elapsed(d: Duration) -> String {
    let secs = d.as_secs();
    format!(
        "{}:{:02}:{:02}.{:06}",
        secs / 3600,
        (secs / 60) % 60,
        secs % 60,
        d.subsec_micros()
    )
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

/// A fresh folder under `parent` named `stem`, `stem_2`, `stem_3`, ...
fn fresh_folder(parent: &Path, stem: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(parent).map_err(|e| CliError::Output(format!("{}: {e}", parent.display())))?;
    let mut n = 1;
    loop {
        let name = if n == 1 { stem.to_string() } else { format!("{stem}_{n}") };
        let p = parent.join(name);
        match fs::create_dir(&p) {
            Ok(()) => return Ok(p),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(CliError::Output(format!("{}: {e}", p.display()))),
        }
    }
}

fn run_folder(cfg: &RunConfig, stem: &str, out: Option<&Path>) -> Result<PathBuf, CliError> {
    match out {
        Some(p) => {
            fs::create_dir_all(p).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
            Ok(p.to_path_buf())
        }
        None => fresh_folder(&cfg.output_dir, stem),
    }
}

#[derive(Serialize)]
struct RoleRecord<'a> {
    roles: Vec<(String, countreg_core::data::ColumnRole)>,
    split: &'a SplitPlan,
    train_rows: &'a [usize],
    test_rows: &'a [usize],
}

fn write_common(dir: &Path, cfg: &RunConfig, prep: &Prepared) -> Result<(), CliError> {
    write_file(&dir.join("config.json"), &cfg.echo())?;
    let roles = RoleRecord {
        roles: prep.data.role_map(),
        split: &prep.plan,
        train_rows: &prep.split.train_rows,
        test_rows: &prep.split.test_rows,
    };
    let mut s = serde_json::to_string_pretty(&roles).expect("roles serialize");
    s.push('\n');
    write_file(&dir.join("roles.json"), &s)
}

fn fit_record(fit: &FitResult, values: &ObjectiveValues) -> String {
    #[derive(Serialize)]
    struct Record<'a> {
        fit: &'a FitResult,
        objectives: &'a ObjectiveValues,
    }
    let mut s = serde_json::to_string_pretty(&Record { fit, objectives: values }).expect("fit serializes");
    s.push('\n');
    s
}

fn values_of(fit: &FitResult, test: &Dataset) -> ObjectiveValues {
    if !fit.converged {
        return ObjectiveValues::sentinel();
    }
    ObjectiveValues {
        loglik: fit.loglik,
        criteria: fit.criteria(),
        mspe: mspe(fit, test),
    }
}

pub struct FitOutcome {
    pub folder: PathBuf,
    pub fit: FitResult,
    pub values: ObjectiveValues,
}

/// Estimates the manual specification on the training split.
pub fn run_fit(cfg: &RunConfig, out: Option<&Path>) -> Result<FitOutcome, CliError> {
    let start = Instant::now();
    let prep = Prepared::new(cfg)?;
    let spec = prep
        .manual_specification(cfg)?
        .ok_or_else(|| CliError::Config("fit needs a Manual_Fit block".into()))?;
    let violations = prep.space.validate(&spec);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(CliError::Config(format!("Manual_Fit violates constraints: {}", list.join(", "))));
    }
    let settings = cfg.fit_settings()?;
    let folder = run_folder(cfg, &format!("fit_seed{}", cfg.seed), out)?;
    write_common(&folder, cfg, &prep)?;
    let result = fit(&spec, &prep.split.train, &settings);
    let values = values_of(&result, &prep.split.test);
    let table = render_fit_table(&result);
    write_file(&folder.join("model.txt"), &table)?;
    write_file(&folder.join("model.json"), &fit_record(&result, &values))?;
    if cfg.verbose >= 1 {
        println!("{}", result.spec.describe(&prep.factor_names()));
        print!("{table}");
        if let Some(m) = values.mspe {
            println!("mspe: {m:.4}");
        }
        println!("Elapsed time: {}", format_elapsed(start.elapsed()));
    }
    Ok(FitOutcome {
        folder,
        fit: result,
        values,
    })
}

pub struct SearchRun {
    pub folder: PathBuf,
    pub outcome: SearchOutcome,
    pub objectives: Objectives,
    pub invalid_submissions: usize,
    pub estimations: usize,
}

fn console_line(r: &IterationRecord, o: &Objectives) -> String {
    let fmt = |v: Option<f64>| v.map_or("inf".to_string(), |v| format!("{v:.4}"));
    let mut s = format!("[{}] {} | {}: {}", r.iteration, r.model, o.first.name(), fmt(r.objective_1));
    if let Some(k) = o.second {
        s.push_str(&format!(" | {}: {}", k.name(), fmt(r.objective_2)));
    }
    s.push_str(&format!(" | LL: {}", fmt(r.loglik)));
    if r.archive_updated {
        s.push_str(" | new Pareto member");
    }
    s
}

fn pareto_summary(members: &[ArchiveMember], o: &Objectives) -> String {
    let items: Vec<String> = members
        .iter()
        .map(|m| {
            let c = &m.values.criteria;
            let mut s = format!("{{'aic': {:.3}, 'bic': {:.3}", c.aic, c.bic);
            if o.second.is_some() {
                s.push_str(&format!(", '{}': {:.4}", o.second.map_or("", |k| k.name()), m.point[1]));
            }
            s.push('}');
            s
        })
        .collect();
    format!("Pareto Solutions: [{}]", items.join(", "))
}

/// Runs the configured search and writes the run folder.
pub fn run_search_command(cfg: &RunConfig, out: Option<&Path>) -> Result<SearchRun, CliError> {
    let start = Instant::now();
    let prep = Prepared::new(cfg)?;
    let initial = prep.manual_specification(cfg)?;
    let alg_name = cfg.algorithm_name().to_ascii_lowercase();
    let algorithm = cfg.search_algorithm(&alg_name)?;
    let settings = cfg.fit_settings()?;
    let folder = run_folder(cfg, &format!("{alg_name}_seed{}", cfg.seed), out)?;
    write_common(&folder, cfg, &prep)?;

    let mut obj = ModelObjective::new(
        prep.space.clone(),
        &prep.split.train,
        &prep.split.test,
        settings.clone(),
        cfg.objectives()?,
    );
    let objectives = obj.objectives();
    let log_path = folder.join("iterations.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut evaluated: Vec<[f64; 2]> = Vec::new();
    let mut io_error: Option<std::io::Error> = None;
    let verbose = cfg.verbose;
    let mut observer = |r: &IterationRecord| {
        let line = serde_json::to_string(r).expect("record serializes");
        if let Err(e) = writeln!(log, "{line}") {
            io_error.get_or_insert(e);
        }
        if let (Some(a), b) = (r.objective_1, r.objective_2) {
            evaluated.push([a, b.unwrap_or(0.0)]);
        }
        let show = match verbose {
            1 => r.converged,
            2 => r.archive_updated,
            _ => false,
        };
        if show {
            println!("{}", console_line(r, &objectives));
        }
    };
    let outcome = run_search(&algorithm, &mut obj, initial.as_ref(), &cfg.limits(), cfg.seed, &mut observer)?;
    drop(observer);
    if let Some(e) = io_error {
        return Err(e.into());
    }
    log.flush()?;
    drop(log);

    let members = outcome.archive.sorted();
    write_file(
        &folder.join("pareto.csv"),
        &archive_csv(&members, &prep.space, objectives.first, objectives.second),
    )?;
    write_file(
        &folder.join("front.csv"),
        &front_data(&members, objectives.first, objectives.second),
    )?;
    let front: Vec<[f64; 2]> = members.iter().map(|m| m.point).collect();
    write_file(
        &folder.join("front.svg"),
        &front_svg(
            &evaluated,
            &front,
            objectives.first.name(),
            objectives.second.map_or("", |k| k.name()),
        ),
    )?;

    let models = folder.join("models");
    fs::create_dir_all(&models)?;
    let mut first_table = None;
    for (i, m) in members.iter().enumerate() {
        let result = fit(&m.spec, &prep.split.train, &settings);
        let values = values_of(&result, &prep.split.test);
        let table = format!("{}\n{}", m.spec.describe(&prep.factor_names()), render_fit_table(&result));
        write_file(&models.join(format!("model_{}.txt", i + 1)), &table)?;
        write_file(&models.join(format!("model_{}.json", i + 1)), &fit_record(&result, &values))?;
        first_table.get_or_insert(table);
    }

    let elapsed = start.elapsed();
    let stop = match outcome.stop_reason {
        StopReason::Time => "time limit",
        StopReason::MaxIterations => "iteration limit",
        StopReason::NoImprovement => "no improvement",
    };
    let summary = format!(
        "algorithm: {alg_name}\nseed: {}\nstop: {stop}\niterations: {}\nestimated models: {}\nconstraint violations submitted: {}\narchive size: {}\nelapsed: {}\n",
        cfg.seed,
        outcome.iterations,
        obj.estimations(),
        obj.invalid_submissions(),
        members.len(),
        format_elapsed(elapsed),
    );
    write_file(&folder.join("summary.txt"), &summary)?;
    if cfg.verbose >= 1 {
        println!("Stopped: {stop} after {} iterations", outcome.iterations);
        println!("{}", pareto_summary(&members, &objectives));
        if let Some(t) = first_table {
            print!("{t}");
        }
        println!("Run folder: {}", folder.display());
        println!("Elapsed time: {}", format_elapsed(elapsed));
    }
    Ok(SearchRun {
        folder,
        invalid_submissions: obj.invalid_submissions(),
        estimations: obj.estimations(),
        outcome,
        objectives,
    })
}

/// `run`: a manual block without an algorithm estimates that single model; otherwise search.
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf, CliError> {
    if cfg.manual_fit.is_some() && cfg.algorithm.is_none() {
        Ok(run_fit(cfg, out)?.folder)
    } else {
        Ok(run_search_command(cfg, out)?.folder)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elapsed_format() {
        assert_eq!(format_elapsed(Duration::from_micros(94_087_934)), "0:01:34.087934");
        assert_eq!(format_elapsed(Duration::from_secs(3 * 3600 + 5)), "3:00:05.000000");
    }
}
