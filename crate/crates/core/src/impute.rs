//! Multiple imputation: hot-deck for interviewer-level variables, chained
//! univariate models (FCS) for respondent variables, and Rubin pooling.
//!
//! Each imputation runs two samplers in sequence. The interviewer sampler
//! works on the collapsed [`InterviewerTable`] and broadcasts its draws to
//! every respondent row, so all respondents of one interviewer share the
//! same imputed interviewer profile. The respondent sampler then cycles
//! through the remaining incomplete columns.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logit::{fit_logit, logistic};
use crate::par;
use crate::rng::{self, Rng};
use crate::tabular::{Cells, ColumnKind, Dataset, HotDeckMatching, InterviewerTable, Level};

pub const DEFAULT_BURN_IN: usize = 10;
pub const DEFAULT_PMM_DONORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    /// Bernoulli draw from a logit fitted on observed rows, with coefficients
    /// drawn from their approximate posterior.
    LogisticDraw,
    /// Predictive mean matching against the `donors` closest observed rows.
    Pmm { donors: usize },
}

impl ModelKind {
    pub fn default_for(kind: ColumnKind) -> Option<Self> {
        match kind {
            ColumnKind::Binary => Some(ModelKind::LogisticDraw),
            ColumnKind::Continuous => Some(ModelKind::Pmm {
                donors: DEFAULT_PMM_DONORS,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputeOptions {
    pub burn_in: usize,
    /// Per-column overrides of the default model kinds.
    pub models: BTreeMap<String, ModelKind>,
    /// Outcome used as an imputation predictor and as the interviewer-level
    /// matching key for hot-deck donors.
    pub outcome: Option<String>,
    /// Restrict hot-deck donors to the `k` matched donors whose respondents'
    /// mean outcome is closest to the recipient's.
    pub donor_neighbours: Option<usize>,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        ImputeOptions {
            burn_in: DEFAULT_BURN_IN,
            models: BTreeMap::new(),
            outcome: None,
            donor_neighbours: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct HotDeckReport {
    pub recipients: usize,
    pub matched: usize,
    pub unmatched: usize,
}

/// Fills every incomplete interviewer from a single same-country donor.
///
/// Donors are interviewers with all interviewer-level columns observed. A
/// recipient draws uniformly among donors agreeing on the observed exact
/// roster attributes and within every observed caliper; with no such donor it
/// falls back to any donor of the country. `aux` optionally supplies one
/// numeric key per interviewer; then only the `k` matched donors closest on
/// that key are eligible.
pub fn hot_deck_interviewers(
    table: &InterviewerTable,
    matching: &HotDeckMatching,
    aux: Option<(&[f64], usize)>,
    rng: &mut Rng,
) -> Result<(InterviewerTable, HotDeckReport)> {
    let n = table.len();
    let donors: Vec<usize> = (0..n).filter(|&i| table.is_complete(i)).collect();
    let mut by_country: HashMap<&str, Vec<usize>> = HashMap::new();
    for &d in &donors {
        by_country.entry(table.countries[d].as_str()).or_default().push(d);
    }
    let exact: Vec<_> = matching
        .exact
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<_>>()?;
    let caliper: Vec<_> = matching
        .caliper
        .iter()
        .map(|c| table.column(&c.column).map(|col| (col, c.width)))
        .collect::<Result<_>>()?;

    let mut out = table.clone();
    let mut report = HotDeckReport::default();
    for r in 0..n {
        if table.is_complete(r) {
            continue;
        }
        report.recipients += 1;
        let pool = by_country
            .get(table.countries[r].as_str())
            .ok_or_else(|| Error::NoDonorsInCountry(table.countries[r].clone()))?;
        let matched: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&d| {
                exact.iter().all(|col| match (col.get(r), col.get(d)) {
                    (Some(a), Some(b)) => a == b,
                    _ => true,
                }) && caliper.iter().all(|(col, w)| match (col.get(r), col.get(d)) {
                    (Some(a), Some(b)) => (a - b).abs() <= *w,
                    _ => true,
                })
            })
            .collect();
        let mut candidates = if matched.is_empty() {
            report.unmatched += 1;
            pool.clone()
        } else {
            report.matched += 1;
            matched
        };
        if let Some((key, k)) = aux {
            candidates.sort_by(|&a, &b| {
                (key[a] - key[r])
                    .abs()
                    .total_cmp(&(key[b] - key[r]).abs())
                    .then(a.cmp(&b))
            });
            candidates.truncate(k.max(1));
        }
        let donor = candidates[rng.random_range(0..candidates.len())];
        for col in out.columns.iter_mut() {
            if !col.mask[r] {
                continue;
            }
            match &mut col.cells {
                Cells::Numeric(v) => v[r] = v[donor],
                Cells::Text(v) => v[r] = v[donor].clone(),
            }
            col.mask[r] = false;
        }
    }
    Ok((out, report))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ChainReport {
    pub iterations: usize,
    /// Imputed cell counts per column.
    pub imputed: BTreeMap<String, usize>,
    /// Univariate fits that failed and fell back to a marginal draw.
    pub fallbacks: usize,
    pub hot_deck: HotDeckReport,
}

struct Target {
    column: String,
    model: ModelKind,
    missing: Vec<usize>,
    observed: Vec<usize>,
}

/// Predictor matrix for `target`: intercept, the other regressors (categoricals
/// as dummies), and fully observed outcomes.
fn predictors(dataset: &Dataset, target: &str, extra: &[String]) -> Result<DMatrix<f64>> {
    let n = dataset.n_rows();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let schema = dataset.schema();
    for name in schema.regressors().into_iter().chain(extra.iter().map(String::as_str)) {
        if name == target {
            continue;
        }
        let col = dataset.column(name)?;
        match &col.cells {
            Cells::Numeric(v) => cols.push(v.clone()),
            Cells::Text(v) => {
                for level in col.levels().into_iter().skip(1) {
                    cols.push(v.iter().map(|s| (*s == level) as u8 as f64).collect());
                }
            }
        }
    }
    let k = cols.len();
    Ok(DMatrix::from_fn(n, k, |i, j| cols[j][i]))
}

/// Greedy selection of linearly independent columns (modified Gram-Schmidt
/// on unit-normalised columns).
fn independent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for j in 0..x.ncols() {
        let mut v: DVector<f64> = x.column(j).into_owned();
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        v /= norm;
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let rest = v.norm();
        if rest > 1e-8 {
            basis.push(v / rest);
            keep.push(j);
        }
    }
    keep
}

fn marginal_draw(values: &[f64], observed: &[usize], rng: &mut Rng) -> f64 {
    values[observed[rng.random_range(0..observed.len())]]
}

fn draw_mvn(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut Rng) -> Option<DVector<f64>> {
    let l = cov.clone().cholesky()?.unpack();
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Some(mean + l * z)
}

fn impute_logistic(
    x: &DMatrix<f64>,
    values: &[f64],
    t: &Target,
    rng: &mut Rng,
) -> Option<Vec<f64>> {
    let xo = x.select_rows(t.observed.iter());
    let yo: Vec<f64> = t.observed.iter().map(|&i| values[i]).collect();
    let fit = fit_logit(&yo, &xo, None).ok()?;
    let beta = draw_mvn(&fit.beta, &fit.cov, rng)?;
    Some(
        t.missing
            .iter()
            .map(|&i| {
                let eta: f64 = x.row(i).iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                (rng.random::<f64>() < logistic(eta)) as u8 as f64
            })
            .collect(),
    )
}

fn impute_pmm(
    x: &DMatrix<f64>,
    values: &[f64],
    t: &Target,
    donors: usize,
    rng: &mut Rng,
) -> Option<Vec<f64>> {
    let xo = x.select_rows(t.observed.iter());
    let (n, k) = xo.shape();
    if n <= k {
        return None;
    }
    let yo = DVector::from_iterator(n, t.observed.iter().map(|&i| values[i]));
    let xtx = xo.tr_mul(&xo);
    let chol = xtx.cholesky()?;
    let beta_hat = chol.solve(&xo.tr_mul(&yo));
    let resid = &yo - &xo * &beta_hat;
    let rss = resid.norm_squared();
    let chi = ChiSquared::new((n - k) as f64).ok()?.sample(rng);
    let sigma = (rss / chi).sqrt();
    // beta* = beta_hat + sigma * L^-T z  where X'X = L L'
    let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let shift = chol.l().transpose().solve_upper_triangular(&z)?;
    let beta_star = &beta_hat + shift * sigma;

    let fitted_obs = &xo * &beta_hat;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fitted_obs[a].total_cmp(&fitted_obs[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| fitted_obs[i]).collect();
    let d = donors.clamp(1, n);
    Some(
        t.missing
            .iter()
            .map(|&i| {
                let target: f64 = x.row(i).iter().zip(beta_star.iter()).map(|(a, b)| a * b).sum();
                let pos = sorted.partition_point(|&v| v < target);
                let (mut lo, mut hi) = (pos, pos);
                while hi - lo < d {
                    let take_low = if lo == 0 {
                        false
                    } else if hi == n {
                        true
                    } else {
                        (target - sorted[lo - 1]) <= (sorted[hi] - target)
                    };
                    if take_low {
                        lo -= 1;
                    } else {
                        hi += 1;
                    }
                }
                let pick = order[lo + rng.random_range(0..(hi - lo))];
                yo[pick]
            })
            .collect(),
    )
}

/// Chained univariate imputation of every incomplete regressor.
///
/// Missing cells start from marginal draws; each sweep visits targets in
/// ascending order of missing fraction. Observed cells are never modified.
pub fn fcs_chain(
    dataset: &Dataset,
    options: &ImputeOptions,
    rng: &mut Rng,
) -> Result<(Dataset, ChainReport)> {
    let schema = dataset.schema();
    let mut targets = Vec::new();
    for name in schema.regressors() {
        let col = dataset.column(name)?;
        let missing: Vec<usize> = (0..col.len()).filter(|&r| col.mask[r]).collect();
        if missing.is_empty() {
            continue;
        }
        let model = options
            .models
            .get(name)
            .copied()
            .or_else(|| ModelKind::default_for(col.decl.kind))
            .ok_or_else(|| Error::NoImputationModel(name.to_string()))?;
        let observed: Vec<usize> = (0..col.len()).filter(|&r| !col.mask[r]).collect();
        if observed.is_empty() {
            return Err(Error::AllMissingColumn(name.to_string()));
        }
        targets.push(Target {
            column: name.to_string(),
            model,
            missing,
            observed,
        });
    }
    let mut report = ChainReport::default();
    if targets.is_empty() {
        return Ok((dataset.clone(), report));
    }
    targets.sort_by_key(|t| t.missing.len());

    let extra: Vec<String> = schema
        .roles
        .outcomes
        .iter()
        .filter(|o| options.outcome.as_deref().is_none_or(|sel| sel == o.as_str()))
        .filter(|o| dataset.column(o).is_ok_and(|c| c.missing_count() == 0))
        .cloned()
        .collect();

    let mut state = dataset.clone();
    for t in &targets {
        let col = state.column_mut(&t.column)?;
        let values = col.values().to_vec();
        for &i in &t.missing {
            col.set(i, marginal_draw(&values, &t.observed, rng));
        }
        report.imputed.insert(t.column.clone(), t.missing.len());
    }

    for _ in 0..options.burn_in {
        for t in &targets {
            let full = predictors(&state, &t.column, &extra)?;
            let keep = independent_columns(&full.select_rows(t.observed.iter()));
            let x = full.select_columns(keep.iter());
            let values = state.column(&t.column)?.values().to_vec();
            let observed_values: Vec<f64> = t.observed.iter().map(|&i| values[i]).collect();
            let constant = observed_values.iter().all(|&v| v == observed_values[0]);
            let draws = if constant {
                Some(vec![observed_values[0]; t.missing.len()])
            } else {
                match t.model {
                    ModelKind::LogisticDraw => impute_logistic(&x, &values, t, rng),
                    ModelKind::Pmm { donors } => impute_pmm(&x, &values, t, donors, rng),
                }
            };
            let draws = draws.unwrap_or_else(|| {
                log::warn!("univariate model for `{}` failed; marginal draw", t.column);
                report.fallbacks += 1;
                t.missing
                    .iter()
                    .map(|_| marginal_draw(&values, &t.observed, rng))
                    .collect()
            });
            let col = state.column_mut(&t.column)?;
            for (&i, v) in t.missing.iter().zip(draws) {
                col.set(i, v);
            }
        }
        report.iterations += 1;
    }
    Ok((state, report))
}

/// Per-interviewer mean of an outcome over that interviewer's respondents,
/// aligned with `table`.
fn cluster_outcome_means(dataset: &Dataset, table: &InterviewerTable, outcome: &str) -> Result<Vec<f64>> {
    let col = dataset.column(outcome)?;
    let mut sums: HashMap<String, (f64, usize)> = HashMap::new();
    for (r, id) in dataset.interviewers().into_iter().enumerate() {
        if let Some(v) = col.get(r) {
            let e = sums.entry(id).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    Ok(table
        .ids
        .iter()
        .map(|id| match sums.get(id) {
            Some((s, c)) if *c > 0 => s / *c as f64,
            _ => f64::NAN,
        })
        .collect())
}

/// One completed dataset: interviewer hot-deck, broadcast, then FCS.
pub fn impute_once(
    dataset: &Dataset,
    options: &ImputeOptions,
    seed: u64,
    index: u64,
) -> Result<(Dataset, ChainReport)> {
    let table = InterviewerTable::from_dataset(dataset);
    let aux = match (&options.outcome, options.donor_neighbours) {
        (Some(outcome), Some(k)) => Some((cluster_outcome_means(dataset, &table, outcome)?, k)),
        _ => None,
    };
    let mut rng_hd = rng::stream(seed, "hot-deck", index);
    let (filled_table, hd) = hot_deck_interviewers(
        &table,
        &dataset.schema().hot_deck,
        aux.as_ref().map(|(v, k)| (v.as_slice(), *k)),
        &mut rng_hd,
    )?;
    let mut stage = dataset.clone();
    filled_table.broadcast(&mut stage)?;
    let mut rng_fcs = rng::stream(seed, "fcs", index);
    let (completed, mut report) = fcs_chain(&stage, options, &mut rng_fcs)?;
    report.hot_deck = hd;
    Ok((completed, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationSet {
    pub m: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub completed: Vec<Dataset>,
    pub diagnostics: Vec<ChainReport>,
}

pub fn multiple_impute(dataset: &Dataset, m: usize, seed: u64, options: &ImputeOptions) -> Result<ImputationSet> {
    if m < 2 {
        return Err(Error::TooFewImputations(m));
    }
    let results = par::map_indexed(m, |i| impute_once(dataset, options, seed, i as u64));
    let mut completed = Vec::with_capacity(m);
    let mut diagnostics = Vec::with_capacity(m);
    for r in results {
        let (d, rep) = r?;
        completed.push(d);
        diagnostics.push(rep);
    }
    Ok(ImputationSet {
        m,
        seed,
        burn_in: options.burn_in,
        completed,
        diagnostics,
    })
}

impl ImputationSet {
    pub fn file_name(i: usize) -> String {
        format!("imputation_{:03}.csv", i + 1)
    }

    /// Manifest text: seed, burn-in, donors, and a fingerprint of the schema.
    pub fn manifest(&self) -> String {
        let schema = self
            .completed
            .first()
            .map(|d| d.schema().to_toml_string())
            .unwrap_or_default();
        let mut s = String::new();
        writeln!(s, "m = {}", self.m).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "burn_in = {}", self.burn_in).unwrap();
        writeln!(s, "pmm_donors = {DEFAULT_PMM_DONORS}").unwrap();
        writeln!(s, "spec_hash = \"{}\"", rng::fingerprint(&schema)).unwrap();
        writeln!(s, "files = [{}]", (0..self.m).map(|i| format!("\"{}\"", Self::file_name(i))).collect::<Vec<_>>().join(", ")).unwrap();
        for (i, d) in self.diagnostics.iter().enumerate() {
            writeln!(s, "\n[[chain]]\nimputation = {}", i + 1).unwrap();
            writeln!(s, "iterations = {}", d.iterations).unwrap();
            writeln!(s, "fallbacks = {}", d.fallbacks).unwrap();
            writeln!(s, "hot_deck_recipients = {}", d.hot_deck.recipients).unwrap();
            writeln!(s, "hot_deck_unmatched = {}", d.hot_deck.unmatched).unwrap();
            for (col, n) in &d.imputed {
                writeln!(s, "imputed.{col} = {n}").unwrap();
            }
        }
        s
    }

    /// In-memory file list: one CSV per imputation plus `manifest.toml`.
    pub fn artifacts(&self) -> Vec<(String, String)> {
        let mut files: Vec<(String, String)> = self
            .completed
            .iter()
            .enumerate()
            .map(|(i, d)| (Self::file_name(i), d.to_csv_string()))
            .collect();
        files.push(("manifest.toml".into(), self.manifest()));
        files
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in self.artifacts() {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Checks that interviewer-level columns are constant within interviewer.
pub fn interviewer_consistent(dataset: &Dataset) -> bool {
    let ids = dataset.interviewers();
    dataset
        .columns()
        .iter()
        .filter(|c| c.decl.level == Level::Interviewer && c.decl.kind != ColumnKind::Id)
        .all(|col| {
            let mut first: HashMap<&str, usize> = HashMap::new();
            (0..dataset.n_rows()).all(|r| {
                let f = *first.entry(ids[r].as_str()).or_insert(r);
                col.mask[f] == col.mask[r]
                    && match &col.cells {
                        Cells::Numeric(v) => col.mask[r] || v[f].to_bits() == v[r].to_bits(),
                        Cells::Text(v) => v[f] == v[r],
                    }
            })
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledEstimate {
    pub qbar: f64,
    pub ubar: f64,
    pub b: f64,
    pub t: f64,
    pub fmi: f64,
    pub df: f64,
    pub m: usize,
}

impl PooledEstimate {
    pub fn se(&self) -> f64 {
        self.t.max(0.0).sqrt()
    }

    /// Degrees-of-freedom adjusted fraction of missing information.
    pub fn fmi_adjusted(&self) -> f64 {
        if self.b == 0.0 || self.ubar == 0.0 {
            return self.fmi;
        }
        let r = (1.0 + 1.0 / self.m as f64) * self.b / self.ubar;
        (r + 2.0 / (self.df + 3.0)) / (r + 1.0)
    }
}

pub fn rubin_pool(estimates: &[f64], variances: &[f64]) -> Result<PooledEstimate> {
    let m = estimates.len();
    if m < 2 {
        return Err(Error::TooFewImputations(m));
    }
    if variances.len() != m {
        return Err(Error::LengthMismatch(format!("{m} estimates, {} variances", variances.len())));
    }
    if variances.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::OutOfRange("negative within-imputation variance".into()));
    }
    let mf = m as f64;
    let qbar = estimates.iter().sum::<f64>() / mf;
    let ubar = variances.iter().sum::<f64>() / mf;
    let b = estimates.iter().map(|q| (q - qbar).powi(2)).sum::<f64>() / (mf - 1.0);
    let between = (1.0 + 1.0 / mf) * b;
    let t = ubar + between;
    let fmi = if t > 0.0 { between / t } else { 0.0 };
    let df = if b > 0.0 {
        (mf - 1.0) * (1.0 + ubar / between).powi(2)
    } else {
        f64::INFINITY
    };
    Ok(PooledEstimate {
        qbar,
        ubar,
        b,
        t,
        fmi,
        df,
        m,
    })
}

/// Smallest number of imputations with `M >= 100 × FMI`, never below 2.
pub fn choose_m(fmi: f64) -> usize {
    let raw = (100.0 * fmi.clamp(0.0, 1.0) - 1e-9).ceil();
    (raw.max(0.0) as usize).max(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rubin_no_between_variance() {
        let p = rubin_pool(&[2.0, 2.0, 2.0], &[0.1, 0.1, 0.1]).unwrap();
        assert_eq!(p.qbar, 2.0);
        assert_eq!(p.b, 0.0);
        assert_relative_eq!(p.t, 0.1, epsilon = 1e-15);
        assert_eq!(p.fmi, 0.0);
        assert!(p.df.is_infinite());
    }

    #[test]
    fn rubin_hand_evaluation() {
        let p = rubin_pool(&[1.0, 2.0, 3.0], &[0.1, 0.1, 0.1]).unwrap();
        assert_relative_eq!(p.qbar, 2.0);
        assert_relative_eq!(p.b, 1.0);
        assert!((p.t - 1.43333).abs() < 1e-5);
        assert!((p.fmi - 0.93023).abs() < 1e-5);
        // (M-1)(1 + ubar/((1+1/M)b))^2 = 2 (1 + 0.1/(4/3))^2
        assert_relative_eq!(p.df, 2.0 * (1.0f64 + 0.075).powi(2), epsilon = 1e-12);
        assert!(p.fmi_adjusted() > 0.0 && p.fmi_adjusted() <= 1.0);
    }

    #[test]
    fn rubin_errors() {
        assert!(matches!(rubin_pool(&[1.0], &[0.1]), Err(Error::TooFewImputations(1))));
        assert!(rubin_pool(&[1.0, 2.0], &[0.1]).is_err());
        assert!(rubin_pool(&[1.0, 2.0], &[0.1, -1.0]).is_err());
    }

    #[test]
    fn choose_m_rule() {
        assert_eq!(choose_m(0.85), 85);
        assert_eq!(choose_m(0.0), 2);
        assert_eq!(choose_m(1.0), 100);
        assert_eq!(choose_m(0.011), 2);
        assert_eq!(choose_m(0.031), 4);
    }

    #[test]
    fn independent_columns_drops_duplicates() {
        let x = DMatrix::from_row_slice(4, 4, &[
            1., 2., 2., 0.,
            1., 3., 3., 0.,
            1., 5., 5., 0.,
            1., 1., 1., 0.,
        ]);
        assert_eq!(independent_columns(&x), vec![0, 1]);
    }
}
