//! Missingness patterns over covariate groups, the focus median split, and
//! the design matrices of the complete-case and grand models.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::design::{self, DesignSpec};
use crate::error::{Error, Result};
use crate::logit::FocusTerm;
use crate::tabular::{CovariateGroup, Dataset, InterviewerTable};

/// 1 iff the value strictly exceeds its country's median; `None` propagates.
///
/// `values` and `country` are aligned per interviewer, so the median is taken
/// over the interviewer-level distribution.
pub fn build_focus_indicator<S: AsRef<str>>(
    values: &[Option<f64>],
    country: &[S],
) -> Result<Vec<Option<f64>>> {
    if values.len() != country.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values, {} country ids",
            values.len(),
            country.len()
        )));
    }
    if let Some(v) = values.iter().flatten().find(|v| !(0.0..=100.0).contains(*v)) {
        return Err(Error::OutOfRange(format!("expectation {v} outside [0, 100]")));
    }
    let medians = country_medians(values, country)?;
    Ok(values
        .iter()
        .zip(country)
        .map(|(v, c)| v.map(|x| (x > medians[c.as_ref()]) as u8 as f64))
        .collect())
}

/// Median of the observed values in each country.
pub fn country_medians<'a, S: AsRef<str>>(
    values: &[Option<f64>],
    country: &'a [S],
) -> Result<HashMap<&'a str, f64>> {
    let mut by_country: HashMap<&str, Vec<f64>> = HashMap::new();
    for (v, c) in values.iter().zip(country) {
        let entry = by_country.entry(c.as_ref()).or_default();
        if let Some(x) = v {
            entry.push(*x);
        }
    }
    let mut out = HashMap::new();
    for (c, mut xs) in by_country {
        if xs.is_empty() {
            return Err(Error::EmptyCountry(c.to_string()));
        }
        xs.sort_by(f64::total_cmp);
        let m = xs.len();
        let median = if m % 2 == 1 {
            xs[m / 2]
        } else {
            0.5 * (xs[m / 2 - 1] + xs[m / 2])
        };
        out.insert(c, median);
    }
    Ok(out)
}

/// Median split of an interviewer-level expectation column, returned per
/// respondent row of `dataset`.
pub fn focus_for_rows(dataset: &Dataset, expectation: &str) -> Result<Vec<Option<f64>>> {
    let table = InterviewerTable::from_dataset(dataset);
    let col = table.column(expectation)?;
    let values: Vec<Option<f64>> = (0..table.len()).map(|i| col.get(i)).collect();
    let flags = build_focus_indicator(&values, &table.countries)?;
    let index: HashMap<&str, usize> = table
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    Ok(dataset
        .interviewers()
        .iter()
        .map(|id| flags[index[id.as_str()]])
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    /// Per covariate group, `true` where the group is missing.
    pub mask: Vec<bool>,
    pub count: usize,
}

impl Pattern {
    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| !m)
    }

    pub fn label(&self) -> String {
        self.mask.iter().map(|&m| if m { '0' } else { '1' }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Merge {
    pub from: Vec<bool>,
    pub into: usize,
    pub rows: usize,
}

/// Distinct group-level missingness patterns. Pattern 0 is the complete
/// pattern (present even when empty); incomplete patterns follow in order of
/// first occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    pub groups: Vec<String>,
    pub patterns: Vec<Pattern>,
    pub assignment: Vec<usize>,
    pub merges: Vec<Merge>,
}

impl PatternSet {
    /// Number of incomplete patterns.
    pub fn h(&self) -> usize {
        self.patterns.len() - 1
    }

    pub fn complete_count(&self) -> usize {
        self.patterns[0].count
    }

    pub fn rows_in(&self, pattern: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&r| self.assignment[r] == pattern)
            .collect()
    }

    /// Folds incomplete patterns with fewer than `min_rows` rows into the
    /// nearest (Hamming distance over groups) larger incomplete pattern.
    /// Patterns with no larger incomplete neighbour are kept.
    pub fn merge_small(&mut self, min_rows: usize) -> Vec<Merge> {
        let mut events = Vec::new();
        loop {
            let small = (1..self.patterns.len())
                .filter(|&h| self.patterns[h].count < min_rows)
                .min_by_key(|&h| (self.patterns[h].count, h));
            let Some(h) = small else { break };
            let from = &self.patterns[h];
            let target = (1..self.patterns.len())
                .filter(|&t| t != h && self.patterns[t].count > from.count)
                .min_by_key(|&t| {
                    let d = hamming(&from.mask, &self.patterns[t].mask);
                    (d, usize::MAX - self.patterns[t].count, t)
                });
            let Some(t) = target else {
                log::warn!(
                    "pattern {} has {} rows (< {min_rows}) and no larger incomplete neighbour",
                    from.label(),
                    from.count
                );
                break;
            };
            log::warn!(
                "merging pattern {} ({} rows) into {}",
                from.label(),
                from.count,
                self.patterns[t].label()
            );
            let event = Merge {
                from: from.mask.clone(),
                into: t,
                rows: from.count,
            };
            self.patterns[t].count += from.count;
            self.patterns.remove(h);
            for a in self.assignment.iter_mut() {
                if *a == h {
                    *a = t;
                }
            }
            for a in self.assignment.iter_mut() {
                if *a > h {
                    *a -= 1;
                }
            }
            let into = if t > h { t - 1 } else { t };
            events.push(Merge { into, ..event });
        }
        self.merges.extend(events.iter().cloned());
        events
    }

    /// Summary rows `(id, group mask label, count)`; `1` marks an observed group.
    pub fn summary_csv(&self) -> String {
        let mut out = format!("pattern,{},count\n", self.groups.join(","));
        for (id, p) in self.patterns.iter().enumerate() {
            let cells: Vec<&str> = p.mask.iter().map(|&m| if m { "0" } else { "1" }).collect();
            out.push_str(&format!("{id},{},{}\n", cells.join(","), p.count));
        }
        out
    }
}

fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// A group is missing for a row iff any of its columns is masked there.
pub fn detect_patterns(dataset: &Dataset, groups: &[CovariateGroup]) -> Result<PatternSet> {
    let n = dataset.n_rows();
    let masks: Vec<Vec<&[bool]>> = groups
        .iter()
        .map(|g| {
            g.columns
                .iter()
                .map(|c| dataset.column(c).map(|col| col.mask.as_slice()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut patterns = vec![Pattern {
        mask: vec![false; groups.len()],
        count: 0,
    }];
    let mut index: HashMap<Vec<bool>, usize> = HashMap::new();
    index.insert(vec![false; groups.len()], 0);
    let mut assignment = Vec::with_capacity(n);
    for r in 0..n {
        let mask: Vec<bool> = masks.iter().map(|cols| cols.iter().any(|m| m[r])).collect();
        let id = *index.entry(mask.clone()).or_insert_with(|| {
            patterns.push(Pattern { mask, count: 0 });
            patterns.len() - 1
        });
        patterns[id].count += 1;
        assignment.push(id);
    }
    Ok(PatternSet {
        groups: groups.iter().map(|g| g.name.clone()).collect(),
        patterns,
        assignment,
        merges: Vec::new(),
    })
}

fn check_alignment(dataset: &Dataset, patterns: &PatternSet) -> Result<()> {
    if patterns.assignment.len() != dataset.n_rows() {
        return Err(Error::PatternMismatch {
            patterns: patterns.assignment.len(),
            rows: dataset.n_rows(),
        });
    }
    Ok(())
}

pub fn complete_case_subset(dataset: &Dataset, patterns: &PatternSet) -> Result<Dataset> {
    check_alignment(dataset, patterns)?;
    let rows = patterns.rows_in(0);
    if rows.is_empty() {
        return Err(Error::EmptyCompleteCases);
    }
    Ok(dataset.select_rows(&rows))
}

/// Fill-in regressors `W` plus one pattern-interaction block per incomplete
/// pattern. Block `h` equals `W` on the rows of pattern `h` and zero
/// elsewhere, so it carries its own pattern intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct GrandDesign {
    pub w: DMatrix<f64>,
    pub y: Vec<f64>,
    pub names: Vec<String>,
    pub assignment: Vec<usize>,
    pub h: usize,
}

impl GrandDesign {
    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn total_columns(&self) -> usize {
        self.k() * (1 + self.h)
    }

    /// Block for incomplete pattern `h` (1-based).
    pub fn zblock(&self, h: usize) -> DMatrix<f64> {
        let mut z = self.w.clone();
        for (r, &a) in self.assignment.iter().enumerate() {
            if a != h {
                z.row_mut(r).fill(0.0);
            }
        }
        z
    }

    /// `[W | Z_b for b in blocks]`, blocks in the order given.
    pub fn matrix(&self, blocks: &[usize]) -> DMatrix<f64> {
        let (n, k) = (self.n(), self.k());
        let mut x = DMatrix::zeros(n, k * (1 + blocks.len()));
        x.view_mut((0, 0), (n, k)).copy_from(&self.w);
        for (pos, &b) in blocks.iter().enumerate() {
            let off = k * (pos + 1);
            for (r, &a) in self.assignment.iter().enumerate() {
                if a == b {
                    for j in 0..k {
                        x[(r, off + j)] = self.w[(r, j)];
                    }
                }
            }
        }
        x
    }

    pub fn full_matrix(&self) -> DMatrix<f64> {
        let all: Vec<usize> = (1..=self.h).collect();
        self.matrix(&all)
    }

    /// Focus term for `[W | Z_b ...]`: each block's focus column moves with
    /// the block's pattern dummy (its intercept column).
    pub fn focus_term(&self, blocks: &[usize]) -> FocusTerm {
        let k = self.k();
        FocusTerm {
            column: DesignSpec::FOCUS,
            interactions: (0..blocks.len())
                .map(|pos| (k * (pos + 1) + DesignSpec::FOCUS, k * (pos + 1)))
                .collect(),
        }
    }

    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&r| self.assignment[r] == 0).collect()
    }

    /// Rows of `W` belonging to the complete pattern.
    pub fn complete_case_w(&self) -> DMatrix<f64> {
        self.w.select_rows(self.complete_rows().iter())
    }
}

/// `filled` must carry no masked regressors; `patterns` come from the
/// original (pre-imputation) mask.
pub fn assemble_grand_design(
    filled: &Dataset,
    patterns: &PatternSet,
    spec: &DesignSpec,
    outcome: &str,
) -> Result<GrandDesign> {
    check_alignment(filled, patterns)?;
    Ok(GrandDesign {
        w: spec.matrix(filled)?,
        y: design::outcome(filled, outcome)?,
        names: spec.names(),
        assignment: patterns.assignment.clone(),
        h: patterns.h(),
    })
}
