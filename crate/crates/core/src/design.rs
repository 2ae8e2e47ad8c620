//! Design matrices from datasets: intercept, focus, then controls, with
//! categorical controls expanded to treatment dummies (first level dropped).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tabular::{ColumnKind, Dataset};

#[derive(Debug, Clone, PartialEq)]
pub enum DesignColumn {
    Intercept,
    Numeric(String),
    Dummy { column: String, level: String },
}

impl DesignColumn {
    pub fn name(&self) -> String {
        match self {
            DesignColumn::Intercept => "(intercept)".to_string(),
            DesignColumn::Numeric(c) => c.clone(),
            DesignColumn::Dummy { column, level } => format!("{column}[{level}]"),
        }
    }
}

/// Column layout of the regressor matrix. Fixed once from a reference
/// dataset so that subsets (complete cases, countries) share dummy levels.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub columns: Vec<DesignColumn>,
}

impl DesignSpec {
    /// Index of the focus regressor; the intercept always comes first.
    pub const FOCUS: usize = 1;

    pub fn from_dataset(dataset: &Dataset) -> Result<Self> {
        let schema = dataset.schema();
        let mut columns = vec![DesignColumn::Intercept];
        for name in schema.regressors() {
            let col = dataset.column(name)?;
            match col.decl.kind {
                ColumnKind::Binary | ColumnKind::Continuous => {
                    columns.push(DesignColumn::Numeric(name.to_string()))
                }
                ColumnKind::Categorical => {
                    for level in col.levels().into_iter().skip(1) {
                        columns.push(DesignColumn::Dummy {
                            column: name.to_string(),
                            level,
                        });
                    }
                }
                ColumnKind::Id => {
                    return Err(Error::InvalidSchema(format!("id column `{name}` as regressor")))
                }
            }
        }
        Ok(DesignSpec { columns })
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(DesignColumn::name).collect()
    }

    /// Regressor matrix for every row of `dataset`; masked cells are an error.
    pub fn matrix(&self, dataset: &Dataset) -> Result<DMatrix<f64>> {
        let n = dataset.n_rows();
        let mut x = DMatrix::zeros(n, self.k());
        for (j, dc) in self.columns.iter().enumerate() {
            match dc {
                DesignColumn::Intercept => x.column_mut(j).fill(1.0),
                DesignColumn::Numeric(name) => {
                    let col = dataset.column(name)?;
                    for r in 0..n {
                        x[(r, j)] = col.get(r).ok_or_else(|| Error::MaskedCell {
                            column: name.clone(),
                            row: dataset.row_ids()[r],
                        })?;
                    }
                }
                DesignColumn::Dummy { column, level } => {
                    let col = dataset.column(column)?;
                    for r in 0..n {
                        let v = col.get_text(r).ok_or_else(|| Error::MaskedCell {
                            column: column.clone(),
                            row: dataset.row_ids()[r],
                        })?;
                        x[(r, j)] = (v == level) as u8 as f64;
                    }
                }
            }
        }
        Ok(x)
    }
}

/// Observed outcome vector; masked outcome cells are an error.
pub fn outcome(dataset: &Dataset, name: &str) -> Result<Vec<f64>> {
    let col = dataset.column(name)?;
    (0..dataset.n_rows())
        .map(|r| {
            col.get(r).ok_or_else(|| Error::MaskedCell {
                column: name.to_string(),
                row: dataset.row_ids()[r],
            })
        })
        .collect()
}
