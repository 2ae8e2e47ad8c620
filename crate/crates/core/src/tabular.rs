//! Survey datasets: schema binding, per-cell missingness, and descriptive rates.
//!
//! A [`Dataset`] is column-major. Numeric columns (binary, continuous) hold
//! `f64` with `NaN` in masked cells; categorical and id columns hold strings
//! with an empty string in masked cells. The mask is authoritative.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Binary,
    Continuous,
    Categorical,
    Id,
}

impl ColumnKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnKind::Binary | ColumnKind::Continuous)
    }
}

/// Which unit a column describes. Interviewer-level columns must be constant
/// across the respondents of one interviewer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    #[default]
    Respondent,
    Interviewer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDecl {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub level: Level,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roles {
    pub outcomes: Vec<String>,
    pub focus: String,
    #[serde(default)]
    pub controls: Vec<String>,
    pub interviewer: String,
    pub country: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGroup {
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caliper {
    pub column: String,
    pub width: f64,
}

/// Roster attributes used to match hot-deck donors to recipients.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HotDeckMatching {
    #[serde(default)]
    pub exact: Vec<String>,
    #[serde(default)]
    pub caliper: Vec<Caliper>,
}

fn default_na_token() -> String {
    "NA".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default = "default_na_token")]
    pub na_token: String,
    pub columns: Vec<ColumnDecl>,
    pub roles: Roles,
    pub groups: Vec<CovariateGroup>,
    #[serde(default)]
    pub hot_deck: HotDeckMatching,
}

impl Schema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: Schema = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn decl(&self, name: &str) -> Result<&ColumnDecl> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Focus first, then controls in declaration order.
    pub fn regressors(&self) -> Vec<&str> {
        std::iter::once(self.roles.focus.as_str())
            .chain(self.roles.controls.iter().map(String::as_str))
            .collect()
    }

    pub fn interviewer_columns(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.level == Level::Interviewer && c.kind != ColumnKind::Id)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::DuplicateId(c.name.clone()));
            }
        }
        let r = &self.roles;
        for (role, name, kind) in [
            ("interviewer", &r.interviewer, ColumnKind::Id),
            ("country", &r.country, ColumnKind::Id),
            ("focus", &r.focus, ColumnKind::Binary),
        ] {
            let decl = self.decl(name)?;
            if decl.kind != kind {
                return Err(Error::InvalidSchema(format!(
                    "{role} column `{name}` must be {kind:?}"
                )));
            }
        }
        for name in &r.outcomes {
            if self.decl(name)?.kind != ColumnKind::Binary {
                return Err(Error::InvalidSchema(format!(
                    "outcome `{name}` must be binary"
                )));
            }
        }
        for name in &r.controls {
            if self.decl(name)?.kind == ColumnKind::Id {
                return Err(Error::InvalidSchema(format!(
                    "control `{name}` cannot be an id column"
                )));
            }
        }
        let regressors: Vec<&str> = self.regressors();
        let mut covered: HashMap<&str, &str> = HashMap::new();
        for g in &self.groups {
            for col in &g.columns {
                if !regressors.contains(&col.as_str()) {
                    return Err(Error::InvalidSchema(format!(
                        "group `{}` lists `{col}`, which is not a regressor",
                        g.name
                    )));
                }
                if let Some(prev) = covered.insert(col.as_str(), g.name.as_str()) {
                    return Err(Error::InvalidSchema(format!(
                        "`{col}` appears in groups `{prev}` and `{}`",
                        g.name
                    )));
                }
            }
        }
        if let Some(missing) = regressors.iter().find(|r| !covered.contains_key(*r)) {
            return Err(Error::InvalidSchema(format!(
                "regressor `{missing}` belongs to no covariate group"
            )));
        }
        let match_cols = self
            .hot_deck
            .exact
            .iter()
            .chain(self.hot_deck.caliper.iter().map(|c| &c.column));
        for name in match_cols {
            if self.decl(name)?.level != Level::Interviewer {
                return Err(Error::InvalidSchema(format!(
                    "hot-deck matching column `{name}` must be interviewer-level"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cells {
    Numeric(Vec<f64>),
    Text(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct Column {
    pub decl: ColumnDecl,
    pub cells: Cells,
    /// `true` where the cell is missing.
    pub mask: Vec<bool>,
}

/// Masked cells compare equal regardless of their placeholder contents.
impl PartialEq for Column {
    fn eq(&self, other: &Self) -> bool {
        if self.decl != other.decl || self.mask != other.mask {
            return false;
        }
        match (&self.cells, &other.cells) {
            (Cells::Numeric(a), Cells::Numeric(b)) => a
                .iter()
                .zip(b)
                .zip(&self.mask)
                .all(|((x, y), &m)| m || x.to_bits() == y.to_bits()),
            (Cells::Text(a), Cells::Text(b)) => a
                .iter()
                .zip(b)
                .zip(&self.mask)
                .all(|((x, y), &m)| m || x == y),
            _ => false,
        }
    }
}

impl Column {
    pub fn numeric(decl: ColumnDecl, values: Vec<Option<f64>>) -> Self {
        let mask = values.iter().map(Option::is_none).collect();
        let cells = Cells::Numeric(values.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect());
        Column { decl, cells, mask }
    }

    pub fn text(decl: ColumnDecl, values: Vec<Option<String>>) -> Self {
        let mask = values.iter().map(Option::is_none).collect();
        let cells = Cells::Text(values.into_iter().map(Option::unwrap_or_default).collect());
        Column { decl, cells, mask }
    }

    pub fn name(&self) -> &str {
        &self.decl.name
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Raw numeric slice (`NaN` where masked). Panics on text columns.
    pub fn values(&self) -> &[f64] {
        match &self.cells {
            Cells::Numeric(v) => v,
            Cells::Text(_) => panic!("column `{}` is not numeric", self.decl.name),
        }
    }

    pub fn get(&self, row: usize) -> Option<f64> {
        match &self.cells {
            Cells::Numeric(v) if !self.mask[row] => Some(v[row]),
            _ => None,
        }
    }

    pub fn get_text(&self, row: usize) -> Option<&str> {
        match &self.cells {
            Cells::Text(v) if !self.mask[row] => Some(&v[row]),
            _ => None,
        }
    }

    pub fn set(&mut self, row: usize, value: f64) {
        if let Cells::Numeric(v) = &mut self.cells {
            v[row] = value;
            self.mask[row] = false;
        }
    }

    pub fn set_missing(&mut self, row: usize) {
        match &mut self.cells {
            Cells::Numeric(v) => v[row] = f64::NAN,
            Cells::Text(v) => v[row].clear(),
        }
        self.mask[row] = true;
    }

    fn render(&self, row: usize, na: &str) -> String {
        if self.mask[row] {
            return na.to_string();
        }
        match &self.cells {
            Cells::Numeric(v) => format!("{}", v[row]),
            Cells::Text(v) => v[row].clone(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        let cells = match &self.cells {
            Cells::Numeric(v) => Cells::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Cells::Text(v) => Cells::Text(rows.iter().map(|&r| v[r].clone()).collect()),
        };
        Column {
            decl: self.decl.clone(),
            cells,
            mask: rows.iter().map(|&r| self.mask[r]).collect(),
        }
    }

    /// Distinct observed levels, sorted.
    pub fn levels(&self) -> Vec<String> {
        match &self.cells {
            Cells::Text(v) => {
                let mut set: Vec<String> = v
                    .iter()
                    .zip(&self.mask)
                    .filter(|(_, &m)| !m)
                    .map(|(s, _)| s.clone())
                    .collect::<HashSet<_>>()
                    .into_iter()
                    .collect();
                set.sort();
                set
            }
            Cells::Numeric(_) => Vec::new(),
        }
    }
}

/// Rectangular survey table bound to a [`Schema`].
///
/// Row ids are assigned in file order at load time and travel with rows
/// through every subset, so partitions can be checked against the source.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    columns: Vec<Column>,
    row_ids: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from columns in schema order, checking the invariants.
    pub fn from_columns(schema: Schema, columns: Vec<Column>) -> Result<Self> {
        let n = columns.first().map_or(0, Column::len);
        Self::with_row_ids(schema, columns, (0..n).collect())
    }

    pub fn with_row_ids(schema: Schema, columns: Vec<Column>, row_ids: Vec<usize>) -> Result<Self> {
        schema.validate()?;
        if columns.len() != schema.columns.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns supplied, schema declares {}",
                columns.len(),
                schema.columns.len()
            )));
        }
        for (col, decl) in columns.iter().zip(&schema.columns) {
            if col.decl != *decl {
                return Err(Error::MissingColumn(decl.name.clone()));
            }
            if col.len() != row_ids.len() {
                return Err(Error::DimensionMismatch(format!(
                    "column `{}` has {} rows, expected {}",
                    decl.name,
                    col.len(),
                    row_ids.len()
                )));
            }
            check_column(col)?;
        }
        Ok(Dataset {
            schema,
            columns,
            row_ids,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.decl.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        Ok(&self.columns[self.column_index(name)?])
    }

    pub fn column_mut(&mut self, name: &str) -> Result<&mut Column> {
        let i = self.column_index(name)?;
        Ok(&mut self.columns[i])
    }

    pub fn countries(&self) -> Vec<String> {
        let col = &self.columns[self.column_index(&self.schema.roles.country).unwrap()];
        (0..self.n_rows())
            .map(|r| col.get_text(r).unwrap_or_default().to_string())
            .collect()
    }

    pub fn interviewers(&self) -> Vec<String> {
        let col = &self.columns[self.column_index(&self.schema.roles.interviewer).unwrap()];
        (0..self.n_rows())
            .map(|r| col.get_text(r).unwrap_or_default().to_string())
            .collect()
    }

    /// Subset of rows in the given order; row ids are carried along.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            row_ids: rows.iter().map(|&r| self.row_ids[r]).collect(),
        }
    }

    /// Rows where `outcome` is observed.
    pub fn eligible(&self, outcome: &str) -> Result<Dataset> {
        let col = self.column(outcome)?;
        let rows: Vec<usize> = (0..self.n_rows()).filter(|&r| !col.mask[r]).collect();
        if rows.is_empty() {
            return Err(Error::EmptyEligibleSet(outcome.to_string()));
        }
        Ok(self.select_rows(&rows))
    }

    pub fn masked_cells(&self) -> usize {
        self.columns.iter().map(Column::missing_count).sum()
    }

    pub fn to_csv_string(&self) -> String {
        let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
        wtr.write_record(self.columns.iter().map(Column::name)).unwrap();
        let na = &self.schema.na_token;
        for r in 0..self.n_rows() {
            wtr.write_record(self.columns.iter().map(|c| c.render(r, na)))
                .unwrap();
        }
        String::from_utf8(wtr.into_inner().unwrap()).unwrap()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

fn check_column(col: &Column) -> Result<()> {
    let name = &col.decl.name;
    match (&col.cells, col.decl.kind) {
        (Cells::Numeric(v), ColumnKind::Binary) => {
            for (r, (&x, &m)) in v.iter().zip(&col.mask).enumerate() {
                if !m && x != 0.0 && x != 1.0 {
                    return Err(type_violation(name, r, &x.to_string(), "binary 0/1"));
                }
            }
        }
        (Cells::Numeric(v), ColumnKind::Continuous) => {
            for (r, (&x, &m)) in v.iter().zip(&col.mask).enumerate() {
                if !m && !x.is_finite() {
                    return Err(type_violation(name, r, &x.to_string(), "finite number"));
                }
            }
        }
        (Cells::Text(_), ColumnKind::Id) => {
            if let Some(r) = col.mask.iter().position(|&m| m) {
                return Err(type_violation(name, r, "", "non-missing id"));
            }
        }
        (Cells::Text(_), ColumnKind::Categorical) => {}
        _ => {
            return Err(Error::InvalidSchema(format!(
                "storage of column `{name}` does not match its kind"
            )))
        }
    }
    Ok(())
}

fn type_violation(column: &str, row: usize, value: &str, expected: &'static str) -> Error {
    Error::TypeViolation {
        column: column.to_string(),
        row,
        value: value.to_string(),
        expected,
    }
}

/// Reads a CSV file with a header row and binds it to `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut positions: HashMap<&str, usize> = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        if positions.insert(h.as_str(), i).is_some() {
            return Err(Error::DuplicateId(h.clone()));
        }
    }
    let source: Vec<usize> = schema
        .columns
        .iter()
        .map(|d| {
            positions
                .get(d.name.as_str())
                .copied()
                .ok_or_else(|| Error::MissingColumn(d.name.clone()))
        })
        .collect::<Result<_>>()?;

    let mut raw: Vec<Vec<Option<String>>> = vec![Vec::new(); schema.columns.len()];
    for record in rdr.records() {
        let record = record?;
        for (j, &src) in source.iter().enumerate() {
            let cell = record.get(src).unwrap_or("").trim();
            let value = if cell.is_empty() || cell == schema.na_token {
                None
            } else {
                Some(cell.to_string())
            };
            raw[j].push(value);
        }
    }

    let mut columns = Vec::with_capacity(raw.len());
    for (decl, cells) in schema.columns.iter().zip(raw) {
        let col = if decl.kind.is_numeric() {
            let mut values = Vec::with_capacity(cells.len());
            for (r, cell) in cells.into_iter().enumerate() {
                values.push(match cell {
                    None => None,
                    Some(s) => Some(s.parse::<f64>().map_err(|_| {
                        type_violation(&decl.name, r, &s, "number")
                    })?),
                });
            }
            Column::numeric(decl.clone(), values)
        } else {
            Column::text(decl.clone(), cells)
        };
        columns.push(col);
    }
    Dataset::from_columns(schema.clone(), columns)
}

/// Count of ones over observed cells of a binary column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate {
    pub ones: usize,
    pub eligible: usize,
}

impl Rate {
    pub fn new(ones: usize, eligible: usize) -> Result<Self> {
        if eligible == 0 {
            return Err(Error::EmptyEligibleSet("rate".to_string()));
        }
        Ok(Rate { ones, eligible })
    }

    pub fn value(&self) -> f64 {
        self.ones as f64 / self.eligible as f64
    }

    /// Three-decimal rendering used in text reports.
    pub fn display(&self) -> String {
        format!("{:.3}", self.value())
    }
}

pub fn response_rate(dataset: &Dataset, item: &str) -> Result<Rate> {
    let col = dataset.column(item)?;
    if col.decl.kind != ColumnKind::Binary {
        return Err(Error::InvalidSchema(format!("`{item}` is not a binary indicator")));
    }
    let (ones, eligible) = (0..col.len())
        .filter_map(|r| col.get(r))
        .fold((0, 0), |(o, e), v| (o + (v == 1.0) as usize, e + 1));
    if eligible == 0 {
        return Err(Error::EmptyEligibleSet(item.to_string()));
    }
    Ok(Rate { ones, eligible })
}

/// Partition rows by country, in order of first appearance.
pub fn country_split(dataset: &Dataset) -> Vec<(String, Dataset)> {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (r, c) in dataset.countries().into_iter().enumerate() {
        let slot = *index.entry(c.clone()).or_insert_with(|| {
            groups.push((c, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(r);
    }
    groups
        .into_iter()
        .map(|(c, rows)| (c, dataset.select_rows(&rows)))
        .collect()
}

/// One row per interviewer carrying the interviewer-level columns.
#[derive(Debug, Clone, PartialEq)]
pub struct InterviewerTable {
    pub ids: Vec<String>,
    pub countries: Vec<String>,
    pub columns: Vec<Column>,
}

impl InterviewerTable {
    /// Collapses a respondent dataset; each interviewer takes the values of
    /// their first respondent row.
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let ids = dataset.interviewers();
        let countries = dataset.countries();
        let mut seen: HashSet<&str> = HashSet::new();
        let rows: Vec<usize> = (0..ids.len())
            .filter(|&r| seen.insert(ids[r].as_str()))
            .collect();
        let columns = dataset
            .schema()
            .interviewer_columns()
            .into_iter()
            .map(|name| dataset.column(name).unwrap().select(&rows))
            .collect();
        InterviewerTable {
            ids: rows.iter().map(|&r| ids[r].clone()).collect(),
            countries: rows.iter().map(|&r| countries[r].clone()).collect(),
            columns,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.decl.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn is_complete(&self, row: usize) -> bool {
        self.columns.iter().all(|c| !c.mask[row])
    }

    /// Writes the interviewer values back onto every respondent row.
    pub fn broadcast(&self, dataset: &mut Dataset) -> Result<()> {
        let lookup: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows: Vec<usize> = dataset
            .interviewers()
            .iter()
            .map(|id| {
                lookup
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::MissingColumn(format!("interviewer {id}")))
            })
            .collect::<Result<_>>()?;
        for col in &self.columns {
            let target = dataset.column_mut(col.name())?;
            for (r, &i) in rows.iter().enumerate() {
                if col.mask[i] {
                    target.set_missing(r);
                } else {
                    match (&col.cells, &mut target.cells) {
                        (Cells::Numeric(src), Cells::Numeric(dst)) => dst[r] = src[i],
                        (Cells::Text(src), Cells::Text(dst)) => dst[r] = src[i].clone(),
                        _ => unreachable!("same declaration"),
                    }
                    target.mask[r] = false;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_schema() -> Schema {
        Schema::from_toml_str(
            r#"
            [[columns]]
            name = "iw"
            kind = "id"
            level = "interviewer"
            [[columns]]
            name = "country"
            kind = "id"
            [[columns]]
            name = "y"
            kind = "binary"
            [[columns]]
            name = "focus"
            kind = "binary"
            level = "interviewer"
            [[columns]]
            name = "age"
            kind = "continuous"

            [roles]
            outcomes = ["y"]
            focus = "focus"
            controls = ["age"]
            interviewer = "iw"
            country = "country"

            [[groups]]
            name = "iws"
            columns = ["focus"]
            [[groups]]
            name = "capi"
            columns = ["age"]
            "#,
        )
        .unwrap()
    }

    fn load(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes(), &toy_schema())
    }

    #[test]
    fn all_observed_mask() {
        let ds = load("iw,country,y,focus,age\n1,A,0,1,50\n1,A,1,1,60\n2,B,1,0,70\n").unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.masked_cells(), 0);
        assert_eq!(ds.row_ids(), &[0, 1, 2]);
    }

    #[test]
    fn na_token_and_empty_are_masked() {
        let ds = load("iw,country,y,focus,age\n1,A,0,1,NA\n1,A,1,,60\n").unwrap();
        assert!(ds.column("age").unwrap().mask[0]);
        assert!(!ds.column("age").unwrap().mask[1]);
        assert!(ds.column("focus").unwrap().mask[1]);
        assert_eq!(ds.masked_cells(), 2);
    }

    #[test]
    fn custom_na_token() {
        let mut schema = toy_schema();
        schema.na_token = ".".into();
        let ds = read_csv("iw,country,y,focus,age\n1,A,0,1,.\n".as_bytes(), &schema).unwrap();
        assert!(ds.column("age").unwrap().mask[0]);
    }

    #[test]
    fn non_numeric_continuous_is_type_violation() {
        let err = load("iw,country,y,focus,age\n1,A,0,1,abc\n").unwrap_err();
        assert!(matches!(err, Error::TypeViolation { ref column, .. } if column == "age"));
    }

    #[test]
    fn non_binary_outcome_is_type_violation() {
        let err = load("iw,country,y,focus,age\n1,A,2,1,50\n").unwrap_err();
        assert!(matches!(err, Error::TypeViolation { .. }));
    }

    #[test]
    fn missing_and_duplicate_columns() {
        assert!(matches!(
            load("iw,country,y,focus\n1,A,0,1\n").unwrap_err(),
            Error::MissingColumn(c) if c == "age"
        ));
        assert!(matches!(
            load("iw,country,y,focus,age,age\n1,A,0,1,5,5\n").unwrap_err(),
            Error::DuplicateId(_)
        ));
    }

    #[test]
    fn missing_country_rejected() {
        assert!(load("iw,country,y,focus,age\n1,NA,0,1,5\n").is_err());
    }

    #[test]
    fn schema_partition_enforced() {
        let mut s = toy_schema();
        s.groups.pop();
        assert!(matches!(s.validate(), Err(Error::InvalidSchema(_))));
        let mut s = toy_schema();
        s.groups[1].columns.push("focus".into());
        assert!(matches!(s.validate(), Err(Error::InvalidSchema(_))));
        let mut s = toy_schema();
        s.roles.focus = "nope".into();
        assert!(matches!(s.validate(), Err(Error::MissingColumn(_))));
    }

    #[test]
    fn rates_from_table_counts() {
        // Build a binary column with 51 ones of 70.
        let rows: String = (0..70)
            .map(|i| format!("1,AT,{},1,50\n", (i < 51) as u8))
            .collect();
        let ds = load(&format!("iw,country,y,focus,age\n{rows}")).unwrap();
        let rate = response_rate(&ds, "y").unwrap();
        assert_eq!(rate.display(), "0.729");
        assert_eq!(Rate::new(132, 140).unwrap().display(), "0.943");
        assert_eq!(Rate::new(0, 10).unwrap().display(), "0.000");
    }

    #[test]
    fn rate_ignores_masked_rows_and_errors_when_empty() {
        let ds = load("iw,country,y,focus,age\n1,A,1,1,5\n1,A,NA,1,5\n1,A,0,1,5\n").unwrap();
        let rate = response_rate(&ds, "y").unwrap();
        assert_eq!((rate.ones, rate.eligible), (1, 2));
        let ds = load("iw,country,y,focus,age\n1,A,NA,1,5\n").unwrap();
        assert!(matches!(response_rate(&ds, "y"), Err(Error::EmptyEligibleSet(_))));
    }

    #[test]
    fn country_split_partitions() {
        let ds = load("iw,country,y,focus,age\n1,A,0,1,5\n2,A,1,0,6\n3,B,1,1,7\n").unwrap();
        let parts = country_split(&ds);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].1.n_rows(), 2);
        assert_eq!(parts[1].1.row_ids(), &[2]);

        let single = load("iw,country,y,focus,age\n1,A,0,1,5\n2,A,1,0,6\n").unwrap();
        let parts = country_split(&single);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].1, single);
    }

    #[test]
    fn csv_round_trip() {
        let ds = load("iw,country,y,focus,age\n1,A,0,NA,0.1\n2,B,1,0,65.25\n").unwrap();
        let back = read_csv(ds.to_csv_string().as_bytes(), ds.schema()).unwrap();
        assert_eq!(back.to_csv_string(), ds.to_csv_string());
        assert_eq!(back.column("focus").unwrap().mask, vec![true, false]);
    }

    #[test]
    fn interviewer_table_collapse_and_broadcast() {
        let ds = load("iw,country,y,focus,age\n1,A,0,NA,5\n2,A,1,0,6\n1,A,1,NA,7\n").unwrap();
        let mut table = InterviewerTable::from_dataset(&ds);
        assert_eq!(table.ids, vec!["1", "2"]);
        table.columns[0].set(0, 1.0);
        let mut filled = ds.clone();
        table.broadcast(&mut filled).unwrap();
        let focus = filled.column("focus").unwrap();
        assert_eq!(focus.get(0), Some(1.0));
        assert_eq!(focus.get(2), Some(1.0));
        assert_eq!(focus.get(1), Some(0.0));
    }
}
