//! Tabular data: CSV loading, column roles, train/test splitting and column transformations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name that is picked up as an offset without being declared.
pub const AUTO_OFFSET_NAME: &str = "Offset";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnRole {
    Response,
    Offset,
    Group,
    Panel,
    Candidate,
    Excluded,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    fn label(&self, row: usize) -> String {
        match self {
            ColumnData::Numeric(v) => format!("{}", v[row]),
            ColumnData::Categorical(v) => v[row].clone(),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub role: ColumnRole,
    pub data: ColumnData,
}

/// Dense integer ids for a categorical column. `names[id]` recovers the original label.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub ids: Vec<usize>,
    pub names: Arc<Vec<String>>,
}

impl Labels {
    fn from_column(data: &ColumnData) -> Labels {
        let mut lookup: HashMap<String, usize> = HashMap::new();
        let mut names = Vec::new();
        let ids = (0..data.len())
            .map(|row| {
                let label = data.label(row);
                *lookup.entry(label.clone()).or_insert_with(|| {
                    names.push(label);
                    names.len() - 1
                })
            })
            .collect();
        Labels {
            ids,
            names: Arc::new(names),
        }
    }

    fn select(&self, rows: &[usize]) -> Labels {
        Labels {
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            names: Arc::clone(&self.names),
        }
    }

    pub fn n_levels(&self) -> usize {
        self.names.len()
    }
}

/// Role assignment, in the key names used by run configurations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelTerms {
    #[serde(rename = "Y")]
    pub y: String,
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub panels: Option<String>,
    #[serde(default, rename = "Offset")]
    pub offset: Option<String>,
    /// Columns never considered as factors (identifiers and the like).
    #[serde(default)]
    pub exclude: Vec<String>,
}

impl ModelTerms {
    pub fn response(y: impl Into<String>) -> Self {
        ModelTerms {
            y: y.into(),
            ..Default::default()
        }
    }
}

/// An observation table with column roles.
///
/// After [`Dataset::assign_roles`] the response, offset and grouping labels are cached so
/// that likelihood code never re-parses columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    n_obs: usize,
    y: Option<Vec<u64>>,
    offset: Option<Vec<f64>>,
    groups: Option<Labels>,
    panels: Option<Labels>,
}

impl Dataset {
    /// Builds a dataset from named columns. Roles start as `Candidate`, except a column
    /// literally named `Offset`, which becomes the offset.
    pub fn from_columns(columns: Vec<(String, ColumnData)>) -> Result<Dataset> {
        let n_obs = columns.first().map(|(_, d)| d.len()).unwrap_or(0);
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(columns.len());
        for (name, data) in columns {
            if !seen.insert(name.clone()) {
                return Err(Error::DuplicateColumn(name));
            }
            if data.len() != n_obs {
                return Err(Error::InvalidData {
                    column: name,
                    message: format!("expected {} values, found {}", n_obs, data.len()),
                });
            }
            if let ColumnData::Numeric(v) = &data {
                if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::MissingValue {
                        row: row + 1,
                        column: name,
                    });
                }
            }
            let role = if name == AUTO_OFFSET_NAME && matches!(data, ColumnData::Numeric(_)) {
                ColumnRole::Offset
            } else {
                ColumnRole::Candidate
            };
            out.push(Column { name, role, data });
        }
        let mut ds = Dataset {
            columns: out,
            n_obs,
            y: None,
            offset: None,
            groups: None,
            panels: None,
        };
        ds.refresh_cache()?;
        Ok(ds)
    }

    /// Reads comma-delimited text with a header row.
    ///
    /// A column is numeric when its first value parses as a number; any later value that
    /// does not parse is an error naming the row (1-based, header excluded) and column.
    pub fn from_reader<R: Read>(reader: R) -> Result<Dataset> {
        Dataset::from_reader_with_schema(reader, None)
    }

    /// Like [`Dataset::from_reader`], but with an explicit schema: the named columns are
    /// categorical and every other column must be numeric.
    pub fn from_reader_with_schema<R: Read>(
        reader: R,
        categorical: Option<&[&str]>,
    ) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Io(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let width = headers.len();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); width];
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| Error::Io(e.to_string()))?;
            if record.len() != width {
                return Err(Error::RaggedRow {
                    row,
                    expected: width,
                    found: record.len(),
                });
            }
            for (j, field) in record.iter().enumerate() {
                let field = field.trim();
                if field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan") {
                    return Err(Error::MissingValue {
                        row,
                        column: headers[j].clone(),
                    });
                }
                raw[j].push(field.to_string());
            }
        }
        let mut columns = Vec::with_capacity(width);
        for (name, cells) in headers.into_iter().zip(raw) {
            let numeric = match categorical {
                Some(names) => !names.contains(&name.as_str()),
                None => cells.first().map(|c| f64::from_str(c).is_ok()).unwrap_or(true),
            };
            let data = if numeric {
                let mut values = Vec::with_capacity(cells.len());
                for (i, c) in cells.iter().enumerate() {
                    let v = f64::from_str(c).map_err(|_| Error::Parse {
                        row: i + 1,
                        column: name.clone(),
                        message: format!("'{c}' is not numeric"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row: i + 1,
                            column: name.clone(),
                            message: format!("'{c}' is not finite"),
                        });
                    }
                    values.push(v);
                }
                ColumnData::Numeric(values)
            } else {
                ColumnData::Categorical(cells)
            };
            columns.push((name, data));
        }
        Dataset::from_columns(columns)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Dataset::from_reader(std::io::BufReader::new(file))
    }

    /// Writes every column (whatever its role) with full round-trip float precision.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))
            .map_err(io)?;
        for row in 0..self.n_obs {
            w.write_record(self.columns.iter().map(|c| c.data.label(row)))
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::Io(e.to_string()))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Applies `terms`. Named group, panel and offset columns leave the candidate pool.
    pub fn assign_roles(&self, terms: &ModelTerms) -> Result<Dataset> {
        let mut ds = self.clone();
        let mut assigned: BTreeMap<String, &'static str> = BTreeMap::new();
        let mut claim = |name: &str, role: &'static str| -> Result<()> {
            if let Some(prev) = assigned.insert(name.to_string(), role) {
                return Err(Error::DuplicateRole {
                    column: name.to_string(),
                    detail: format!("already assigned as {prev}, requested {role}"),
                });
            }
            Ok(())
        };
        claim(&terms.y, "Y")?;
        if let Some(g) = &terms.group {
            claim(g, "group")?;
        }
        if let Some(p) = &terms.panels {
            claim(p, "panels")?;
        }
        if let Some(o) = &terms.offset {
            claim(o, "Offset")?;
        }
        for e in &terms.exclude {
            claim(e, "exclude")?;
        }
        for name in assigned.keys() {
            if ds.column_index(name).is_none() {
                return Err(Error::ColumnNotFound(name.clone()));
            }
        }
        if let Some(o) = &terms.offset {
            if let Some(auto) = ds
                .columns
                .iter()
                .find(|c| c.role == ColumnRole::Offset && &c.name != o)
            {
                return Err(Error::DuplicateRole {
                    column: auto.name.clone(),
                    detail: format!("an '{AUTO_OFFSET_NAME}' column exists and Offset names {o}"),
                });
            }
        }
        for col in &mut ds.columns {
            col.role = match assigned.get(col.name.as_str()) {
                Some(&"Y") => ColumnRole::Response,
                Some(&"group") => ColumnRole::Group,
                Some(&"panels") => ColumnRole::Panel,
                Some(&"Offset") => ColumnRole::Offset,
                Some(_) => ColumnRole::Excluded,
                None if col.role == ColumnRole::Offset => ColumnRole::Offset,
                None => ColumnRole::Candidate,
            };
            let needs_numeric = matches!(
                col.role,
                ColumnRole::Response | ColumnRole::Offset | ColumnRole::Candidate
            );
            if needs_numeric && matches!(col.data, ColumnData::Categorical(_)) {
                return Err(Error::InvalidData {
                    column: col.name.clone(),
                    message: "categorical column must be encoded numerically or excluded".into(),
                });
            }
        }
        ds.refresh_cache()?;
        Ok(ds)
    }

    fn refresh_cache(&mut self) -> Result<()> {
        self.y = None;
        self.offset = None;
        self.groups = None;
        self.panels = None;
        for col in &self.columns {
            match (col.role, &col.data) {
                (ColumnRole::Response, ColumnData::Numeric(v)) => {
                    let mut y = Vec::with_capacity(v.len());
                    for (i, &x) in v.iter().enumerate() {
                        if x < 0.0 || x.fract() != 0.0 || x > 1e15 {
                            return Err(Error::InvalidData {
                                column: col.name.clone(),
                                message: format!(
                                    "row {}: response must be a non-negative integer, found {x}",
                                    i + 1
                                ),
                            });
                        }
                        y.push(x as u64);
                    }
                    self.y = Some(y);
                }
                (ColumnRole::Offset, ColumnData::Numeric(v)) => self.offset = Some(v.clone()),
                (ColumnRole::Group, d) => self.groups = Some(Labels::from_column(d)),
                (ColumnRole::Panel, d) => self.panels = Some(Labels::from_column(d)),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn role_of(&self, name: &str) -> Option<ColumnRole> {
        self.column_index(name).map(|i| self.columns[i].role)
    }

    /// Response counts; `None` until a response role is assigned.
    pub fn y(&self) -> Option<&[u64]> {
        self.y.as_deref()
    }

    pub fn offset(&self) -> Option<&[f64]> {
        self.offset.as_deref()
    }

    pub fn groups(&self) -> Option<&Labels> {
        self.groups.as_ref()
    }

    pub fn panels(&self) -> Option<&Labels> {
        self.panels.as_ref()
    }

    pub fn has_groups(&self) -> bool {
        self.groups.is_some()
    }

    pub fn candidate_names(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::Candidate)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn n_candidates(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::Candidate)
            .count()
    }

    /// Numeric values of a candidate (or any numeric) column.
    pub fn numeric(&self, name: &str) -> Option<&[f64]> {
        self.column_index(name).and_then(|i| match &self.columns[i].data {
            ColumnData::Numeric(v) => Some(v.as_slice()),
            ColumnData::Categorical(_) => None,
        })
    }

    /// Values of the `k`-th candidate column, in candidate order.
    pub fn candidate(&self, k: usize) -> &[f64] {
        let col = self
            .columns
            .iter()
            .filter(|c| c.role == ColumnRole::Candidate)
            .nth(k)
            .expect("candidate index out of range");
        match &col.data {
            ColumnData::Numeric(v) => v,
            ColumnData::Categorical(_) => unreachable!("candidates are numeric"),
        }
    }

    /// Row subset; group and panel ids keep referring to the full label tables.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    role: c.role,
                    data: c.data.select(rows),
                })
                .collect(),
            n_obs: rows.len(),
            y: self.y.as_ref().map(|y| rows.iter().map(|&r| y[r]).collect()),
            offset: self
                .offset
                .as_ref()
                .map(|o| rows.iter().map(|&r| o[r]).collect()),
            groups: self.groups.as_ref().map(|g| g.select(rows)),
            panels: self.panels.as_ref().map(|p| p.select(rows)),
        }
    }

    /// Mapping of column name to role, in column order.
    pub fn role_map(&self) -> Vec<(String, ColumnRole)> {
        self.columns
            .iter()
            .map(|c| (c.name.clone(), c.role))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitUnit {
    Observation,
    Panel,
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test_fraction: f64,
    pub seed: u64,
    pub unit: SplitUnit,
}

impl SplitPlan {
    /// Default plan: 30% held out, by panel when the data has panels.
    pub fn default_for(ds: &Dataset, seed: u64) -> SplitPlan {
        SplitPlan {
            test_fraction: 0.3,
            seed,
            unit: if ds.panels().is_some() {
                SplitUnit::Panel
            } else {
                SplitUnit::Observation
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Partitions rows by whole units. `round(test_fraction * n_units)` units go to the test set.
pub fn split(ds: &Dataset, plan: &SplitPlan) -> Result<Split> {
    if !(0.0..1.0).contains(&plan.test_fraction) || plan.test_fraction.is_nan() {
        return Err(Error::InvalidSplit(format!(
            "test_fraction must be in [0, 1), got {}",
            plan.test_fraction
        )));
    }
    let unit_of: Vec<usize> = match plan.unit {
        SplitUnit::Observation => (0..ds.n_obs()).collect(),
        SplitUnit::Panel => ds
            .panels()
            .ok_or_else(|| Error::InvalidSplit("split by panel requires a panel column".into()))?
            .ids
            .clone(),
        SplitUnit::Group => ds
            .groups()
            .ok_or_else(|| Error::InvalidSplit("split by group requires a group column".into()))?
            .ids
            .clone(),
    };
    let mut units: Vec<usize> = unit_of.clone();
    units.sort_unstable();
    units.dedup();
    let n_test = (plan.test_fraction * units.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    units.shuffle(&mut rng);
    let test_units: HashSet<usize> = units[..n_test].iter().copied().collect();
    let (test_rows, train_rows): (Vec<usize>, Vec<usize>) =
        (0..ds.n_obs()).partition(|&r| test_units.contains(&unit_of[r]));
    Ok(Split {
        train: ds.select_rows(&train_rows),
        test: ds.select_rows(&test_rows),
        train_rows,
        test_rows,
    })
}

/// Element-wise column transformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transformation {
    No,
    Sqrt,
    Log,
    Arcsinh,
    Exp,
}

impl Transformation {
    pub const ALL: [Transformation; 5] = [
        Transformation::No,
        Transformation::Sqrt,
        Transformation::Log,
        Transformation::Arcsinh,
        Transformation::Exp,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Transformation::No => "no",
            Transformation::Sqrt => "sqrt",
            Transformation::Log => "log",
            Transformation::Arcsinh => "arcsinh",
            Transformation::Exp => "exp",
        }
    }

    fn apply_one(self, x: f64) -> f64 {
        match self {
            Transformation::No => x,
            Transformation::Sqrt => x.sqrt(),
            Transformation::Log => x.ln(),
            Transformation::Arcsinh => x.asinh(),
            Transformation::Exp => x.exp(),
        }
    }

    fn in_domain(self, x: f64) -> bool {
        match self {
            Transformation::Sqrt => x >= 0.0,
            Transformation::Log => x > 0.0,
            _ => true,
        }
    }

    /// True when the transformation yields finite values for every element.
    pub fn is_feasible(self, x: &[f64]) -> bool {
        x.iter()
            .all(|&v| self.in_domain(v) && self.apply_one(v).is_finite())
    }
}

impl fmt::Display for Transformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Transformation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "no" | "nil" | "none" => Ok(Transformation::No),
            "sqrt" => Ok(Transformation::Sqrt),
            "log" | "ln" => Ok(Transformation::Log),
            "arcsinh" | "asinh" => Ok(Transformation::Arcsinh),
            "exp" => Ok(Transformation::Exp),
            other => Err(Error::UnknownTransformation(other.to_string())),
        }
    }
}

/// Applies `tau` to `x`, failing when any element falls outside its domain.
pub fn apply_transformation(x: &[f64], tau: Transformation, column: &str) -> Result<Vec<f64>> {
    if !tau.is_feasible(x) {
        return Err(Error::InfeasibleTransformation {
            column: column.to_string(),
            transformation: tau.code().to_string(),
        });
    }
    Ok(x.iter().map(|&v| tau.apply_one(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        Dataset::from_reader(text.as_bytes())
    }

    #[test]
    fn three_row_file_parses() {
        let ds = parse("FREQ,X1\n1,0.5\n0,1.5\n3,2\n").unwrap();
        assert_eq!(ds.n_obs(), 3);
        assert_eq!(ds.columns().len(), 2);
    }

    #[test]
    fn offset_column_auto_assigned() {
        let ds = parse("FREQ,X1,Offset\n1,0.5,0.1\n0,1.5,0.2\n").unwrap();
        assert_eq!(ds.role_of("Offset"), Some(ColumnRole::Offset));
        let ds = ds.assign_roles(&ModelTerms::response("FREQ")).unwrap();
        assert_eq!(ds.offset(), Some(&[0.1, 0.2][..]));
        assert_eq!(ds.candidate_names(), vec!["X1"]);
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let err = Dataset::from_reader_with_schema("FREQ,X1\n1,abc\n".as_bytes(), Some(&[]))
            .unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, ref column, .. } if column == "X1"));
        let err = parse("FREQ,X1\n2,0.5\n1,abc\n").unwrap_err();
        assert_eq!(
            err,
            Error::Parse {
                row: 2,
                column: "X1".into(),
                message: "'abc' is not numeric".into()
            }
        );
        let ds = parse("FREQ,X1\n1,abc\n").unwrap();
        let err = ds.assign_roles(&ModelTerms::response("FREQ")).unwrap_err();
        assert!(matches!(err, Error::InvalidData { ref column, .. } if column == "X1"));
    }

    #[test]
    fn ragged_and_missing_rejected() {
        assert!(matches!(
            parse("A,B\n1,2\n3\n").unwrap_err(),
            Error::RaggedRow { row: 2, .. }
        ));
        assert_eq!(
            parse("A,B\n1,2\n3,\n").unwrap_err(),
            Error::MissingValue {
                row: 2,
                column: "B".into()
            }
        );
    }

    #[test]
    fn roles_remove_columns_from_candidates() {
        let ds = parse("FREQ,A,B,C,D\n1,1,2,3,4\n").unwrap();
        let ds = ds.assign_roles(&ModelTerms::response("FREQ")).unwrap();
        assert_eq!(ds.n_candidates(), 4);

        let ds = parse("crashes,county,element_ID,X1\n1,a,1,0.1\n2,b,1,0.2\n0,a,2,0.3\n").unwrap();
        let terms = ModelTerms {
            y: "crashes".into(),
            group: Some("county".into()),
            panels: Some("element_ID".into()),
            ..Default::default()
        };
        let ds = ds.assign_roles(&terms).unwrap();
        assert_eq!(ds.candidate_names(), vec!["X1"]);
        assert_eq!(ds.groups().unwrap().ids, vec![0, 1, 0]);
        assert_eq!(ds.panels().unwrap().ids, vec![0, 0, 1]);
    }

    #[test]
    fn missing_and_duplicate_roles() {
        let ds = parse("FREQ,X1\n1,2\n").unwrap();
        assert_eq!(
            ds.assign_roles(&ModelTerms::response("missing_col"))
                .unwrap_err(),
            Error::ColumnNotFound("missing_col".into())
        );
        let terms = ModelTerms {
            y: "FREQ".into(),
            group: Some("FREQ".into()),
            ..Default::default()
        };
        assert!(matches!(
            ds.assign_roles(&terms).unwrap_err(),
            Error::DuplicateRole { .. }
        ));
    }

    #[test]
    fn response_must_be_count() {
        let ds = parse("Y,X\n1.5,2\n").unwrap();
        assert!(ds.assign_roles(&ModelTerms::response("Y")).is_err());
        let ds = parse("Y,X\n-1,2\n").unwrap();
        assert!(ds.assign_roles(&ModelTerms::response("Y")).is_err());
    }

    fn obs_dataset(n: usize) -> Dataset {
        let y = (0..n).map(|i| (i % 3) as f64).collect();
        let x = (0..n).map(|i| i as f64).collect();
        Dataset::from_columns(vec![
            ("Y".into(), ColumnData::Numeric(y)),
            ("X".into(), ColumnData::Numeric(x)),
        ])
        .unwrap()
        .assign_roles(&ModelTerms::response("Y"))
        .unwrap()
    }

    #[test]
    fn split_sizes() {
        let ds = obs_dataset(100);
        let plan = SplitPlan {
            test_fraction: 0.0,
            seed: 1,
            unit: SplitUnit::Observation,
        };
        let s = split(&ds, &plan).unwrap();
        assert!(s.test_rows.is_empty());
        assert_eq!(s.train.n_obs(), 100);

        let plan = SplitPlan {
            test_fraction: 0.3,
            ..plan
        };
        let s = split(&ds, &plan).unwrap();
        assert_eq!(s.test.n_obs(), 30);
        assert_eq!(s.train.n_obs(), 70);
        let again = split(&ds, &plan).unwrap();
        assert_eq!(s.test_rows, again.test_rows);

        for bad in [1.0, -0.1, f64::NAN] {
            let plan = SplitPlan {
                test_fraction: bad,
                ..plan
            };
            assert!(split(&ds, &plan).is_err());
        }
    }

    #[test]
    fn transformations() {
        assert_eq!(
            apply_transformation(&[2.0, 5.0], Transformation::No, "x").unwrap(),
            vec![2.0, 5.0]
        );
        assert_eq!(
            apply_transformation(&[4.0, 9.0], Transformation::Sqrt, "x").unwrap(),
            vec![2.0, 3.0]
        );
        assert_eq!(
            apply_transformation(&[0.0], Transformation::Arcsinh, "x").unwrap(),
            vec![0.0]
        );
        assert!(matches!(
            apply_transformation(&[0.0, 1.0], Transformation::Log, "x"),
            Err(Error::InfeasibleTransformation { .. })
        ));
        assert!(!Transformation::Sqrt.is_feasible(&[1.0, -1.0]));
        assert!(!Transformation::Exp.is_feasible(&[1000.0]));
    }

    #[test]
    fn transformation_tokens() {
        for t in Transformation::ALL {
            assert_eq!(t.code().parse::<Transformation>().unwrap(), t);
        }
        assert!("fact".parse::<Transformation>().is_err());
    }

    #[test]
    fn panel_split_keeps_panels_whole() {
        let sizes = [1usize, 2, 3, 4, 5, 6, 7, 8, 9, 10];
        let mut y = Vec::new();
        let mut x = Vec::new();
        let mut panel = Vec::new();
        for (p, &m) in sizes.iter().enumerate() {
            for i in 0..m {
                y.push((i % 2) as f64);
                x.push(i as f64);
                panel.push(format!("p{p}"));
            }
        }
        let mut terms = ModelTerms::response("Y");
        terms.panels = Some("P".into());
        let ds = Dataset::from_columns(vec![
            ("Y".into(), ColumnData::Numeric(y)),
            ("X".into(), ColumnData::Numeric(x)),
            ("P".into(), ColumnData::Categorical(panel)),
        ])
        .unwrap()
        .assign_roles(&terms)
        .unwrap();
        let plan = SplitPlan::default_for(&ds, 17);
        assert_eq!(plan.unit, SplitUnit::Panel);
        let plan = SplitPlan {
            test_fraction: 0.2,
            ..plan
        };
        let s = split(&ds, &plan).unwrap();
        let ids = &ds.panels().unwrap().ids;
        let test_panels: HashSet<usize> = s.test_rows.iter().map(|&r| ids[r]).collect();
        let train_panels: HashSet<usize> = s.train_rows.iter().map(|&r| ids[r]).collect();
        assert_eq!(test_panels.len(), 2);
        assert!(test_panels.is_disjoint(&train_panels));
        assert_eq!(s.test_rows.len() + s.train_rows.len(), ds.n_obs());
    }

    #[test]
    fn feasibility_mask_ignores_row_order() {
        let x = vec![3.0, 0.0, 2.5, 7.0];
        let mut rev = x.clone();
        rev.reverse();
        for t in Transformation::ALL {
            assert_eq!(t.is_feasible(&x), t.is_feasible(&rev));
        }
    }

    proptest::proptest! {
        #[test]
        fn csv_roundtrip(rows in proptest::collection::vec(
            (0u32..50, -1e6f64..1e6, proptest::sample::select(vec!["a", "b", "c"])), 1..30)) {
            let ds = Dataset::from_columns(vec![
                ("Y".into(), ColumnData::Numeric(rows.iter().map(|r| r.0 as f64).collect())),
                ("X".into(), ColumnData::Numeric(rows.iter().map(|r| r.1).collect())),
                ("G".into(), ColumnData::Categorical(rows.iter().map(|r| r.2.to_string()).collect())),
            ]).unwrap();
            let mut buf = Vec::new();
            ds.write_csv(&mut buf).unwrap();
            let back = Dataset::from_reader_with_schema(buf.as_slice(), Some(&["G"])).unwrap();
            proptest::prop_assert_eq!(back.columns(), ds.columns());
        }
    }
}
