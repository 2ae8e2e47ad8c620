//! Synthetic interviewer/respondent surveys with known truth, two-level MAR
//! missingness, and a Monte Carlo driver for the estimators.
//!
//! Generated variables, by covariate group:
//!
//! | group  | columns                                   | missing when        |
//! |--------|-------------------------------------------|---------------------|
//! | roster | `iw_female`, `iw_age`                     | never               |
//! | iws    | `iw_err_high` (focus), `iw_good_health`   | interviewer I₁ = 0  |
//! | demog  | `r_female`, `r_age`                       | never               |
//! | capi   | `r_numeracy`, `r_bmi`                     | respondent I₂ = 0   |
//!
//! `iw_err` (the heaped 0–100 expectation behind the focus split) is carried
//! as a non-regressor interviewer column and masked with the IWS block.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logit::logistic;
use crate::par;
use crate::patterns::{build_focus_indicator, country_medians, detect_patterns};
use crate::pipeline::{analyse, EstimationOptions, Method};
use crate::rng::{self, Rng};
use crate::tabular::{
    Caliper, Column, ColumnDecl, ColumnKind, CovariateGroup, Dataset, HotDeckMatching, Level, Roles, Schema,
};

pub const INTERVIEWER: &str = "iwid";
pub const COUNTRY: &str = "country";
pub const FOCUS: &str = "iw_err_high";
pub const EXPECTATION: &str = "iw_err";
/// Fewer replications give coverage estimates too coarse to read.
pub const MIN_REPLICATIONS: usize = 50;

/// Country codes in table order; further countries are named `C13`, `C14`, ...
pub const COUNTRY_CODES: [&str; 12] = ["ES", "IT", "GR", "PT", "PL", "SI", "AT", "DE", "BE", "LU", "SE", "EE"];

const ROSTER: [&str; 2] = ["iw_female", "iw_age"];
const IWS: [&str; 2] = [FOCUS, "iw_good_health"];
const DEMOG: [&str; 2] = ["r_female", "r_age"];
const CAPI: [&str; 2] = ["r_numeracy", "r_bmi"];

/// Every generated regressor other than the focus.
pub fn available_controls() -> Vec<String> {
    ROSTER
        .iter()
        .chain(&IWS[1..])
        .chain(&DEMOG)
        .chain(&CAPI)
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Heaping {
    /// Share of expectations rounded to a multiple of 10.
    pub tens: f64,
    /// Share rounded to a multiple of 5 (the rest to an integer).
    pub fives: f64,
}

impl Default for Heaping {
    fn default() -> Self {
        Heaping { tens: 0.7, fives: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeConfig {
    pub name: String,
    /// Probability that a respondent is asked the item.
    #[serde(default = "one")]
    pub eligible: f64,
    /// Logit coefficients keyed by regressor name, plus `intercept`.
    pub beta: BTreeMap<String, f64>,
}

fn one() -> f64 {
    1.0
}

/// Logit of the probability of being MISSING; `-inf` disables the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Propensity {
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
}

impl Default for Propensity {
    fn default() -> Self {
        Propensity {
            intercept: f64::NEG_INFINITY,
            coefficients: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Missingness {
    /// Interviewer-level I₁: masks the IWS block for all of an interviewer's rows.
    pub interviewer: Propensity,
    /// Respondent-level I₂: masks the CAPI block of one row.
    pub respondent: Propensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub countries: usize,
    pub interviewers_per_country: usize,
    /// Mean of the shifted Poisson workload `1 + Poisson(mean - 1)`.
    pub respondents_per_interviewer: f64,
    /// Regressors besides the focus, a subset of [`available_controls`].
    pub controls: Vec<String>,
    pub heaping: Heaping,
    pub outcomes: Vec<OutcomeConfig>,
    pub missingness: Missingness,
}

impl Default for SimConfig {
    fn default() -> Self {
        let beta = [
            ("intercept", 0.6),
            (FOCUS, 0.5),
            ("iw_female", 0.2),
            ("iw_age", -0.01),
            ("iw_good_health", 0.3),
            ("r_female", -0.1),
            ("r_age", 0.01),
            ("r_numeracy", 0.2),
            ("r_bmi", -0.02),
        ];
        SimConfig {
            seed: 1,
            countries: 2,
            interviewers_per_country: 40,
            respondents_per_interviewer: 12.0,
            controls: available_controls(),
            heaping: Heaping::default(),
            outcomes: vec![OutcomeConfig {
                name: "thinc2".into(),
                eligible: 1.0,
                beta: beta.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            }],
            missingness: Missingness {
                interviewer: Propensity {
                    intercept: -2.2,
                    coefficients: [("iw_age".to_string(), 0.02)].into(),
                },
                respondent: Propensity {
                    intercept: -3.7,
                    coefficients: [("r_age".to_string(), 0.03)].into(),
                },
            },
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Regressors in model order.
    pub fn regressors(&self) -> Vec<&str> {
        std::iter::once(FOCUS).chain(self.controls.iter().map(String::as_str)).collect()
    }

    /// Checks counts, names, and that propensities read only columns that
    /// are never masked.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.countries == 0 || self.interviewers_per_country == 0 {
            return bad("countries and interviewers_per_country must be positive".into());
        }
        if !(self.respondents_per_interviewer >= 1.0) || !self.respondents_per_interviewer.is_finite() {
            return bad("respondents_per_interviewer must be at least 1".into());
        }
        let h = &self.heaping;
        if !(h.tens >= 0.0 && h.fives >= 0.0 && h.tens + h.fives <= 1.0) {
            return bad("heaping shares must be non-negative and sum to at most 1".into());
        }
        let available = available_controls();
        for (i, c) in self.controls.iter().enumerate() {
            if !available.contains(c) {
                return bad(format!("unknown control `{c}`"));
            }
            if self.controls[..i].contains(c) {
                return bad(format!("control `{c}` listed twice"));
            }
        }
        if self.outcomes.is_empty() {
            return bad("at least one outcome is required".into());
        }
        let regressors = self.regressors();
        let mut generated: Vec<&str> = vec![INTERVIEWER, COUNTRY, EXPECTATION];
        generated.extend(ROSTER.iter().chain(&IWS).chain(&DEMOG).chain(&CAPI));
        for (i, o) in self.outcomes.iter().enumerate() {
            if generated.contains(&o.name.as_str()) || self.outcomes[..i].iter().any(|p| p.name == o.name) {
                return bad(format!("outcome name `{}` is taken", o.name));
            }
            if !(0.0..=1.0).contains(&o.eligible) || o.eligible == 0.0 {
                return bad(format!("eligible share of `{}` must be in (0, 1]", o.name));
            }
            for (k, v) in &o.beta {
                if k != "intercept" && !regressors.contains(&k.as_str()) {
                    return bad(format!("beta of `{}` names `{k}`, which is not a regressor", o.name));
                }
                if !v.is_finite() {
                    return bad(format!("beta `{k}` of `{}` is not finite", o.name));
                }
            }
        }
        let fully_eligible: Vec<&str> = self
            .outcomes
            .iter()
            .filter(|o| o.eligible == 1.0)
            .map(|o| o.name.as_str())
            .collect();
        let m = &self.missingness;
        for (level, prop, allowed) in [
            ("interviewer", &m.interviewer, ROSTER.to_vec()),
            (
                "respondent",
                &m.respondent,
                ROSTER.iter().chain(&DEMOG).copied().chain(fully_eligible).collect(),
            ),
        ] {
            if prop.intercept.is_nan() || prop.intercept == f64::INFINITY {
                return bad(format!("{level} propensity intercept must be finite or -inf"));
            }
            for (k, v) in &prop.coefficients {
                if !allowed.contains(&k.as_str()) {
                    return bad(format!(
                        "{level} missingness reads `{k}`, which may itself be missing or is unknown"
                    ));
                }
                if !v.is_finite() {
                    return bad(format!("{level} propensity coefficient `{k}` is not finite"));
                }
            }
        }
        Ok(())
    }

    /// Schema of the generated dataset.
    pub fn schema(&self) -> Schema {
        let decl = |name: &str, kind: ColumnKind, level: Level| ColumnDecl {
            name: name.to_string(),
            kind,
            level,
        };
        let mut columns = vec![
            decl(INTERVIEWER, ColumnKind::Id, Level::Interviewer),
            decl(COUNTRY, ColumnKind::Id, Level::Interviewer),
        ];
        for o in &self.outcomes {
            columns.push(decl(&o.name, ColumnKind::Binary, Level::Respondent));
        }
        columns.extend([
            decl("iw_female", ColumnKind::Binary, Level::Interviewer),
            decl("iw_age", ColumnKind::Continuous, Level::Interviewer),
            decl(EXPECTATION, ColumnKind::Continuous, Level::Interviewer),
            decl(FOCUS, ColumnKind::Binary, Level::Interviewer),
            decl("iw_good_health", ColumnKind::Binary, Level::Interviewer),
            decl("r_female", ColumnKind::Binary, Level::Respondent),
            decl("r_age", ColumnKind::Continuous, Level::Respondent),
            decl("r_numeracy", ColumnKind::Continuous, Level::Respondent),
            decl("r_bmi", ColumnKind::Continuous, Level::Respondent),
        ]);
        let regressors = self.regressors();
        let groups = [("roster", &ROSTER), ("iws", &IWS), ("demog", &DEMOG), ("capi", &CAPI)]
            .into_iter()
            .map(|(name, cols)| CovariateGroup {
                name: name.to_string(),
                columns: cols
                    .iter()
                    .filter(|c| regressors.contains(c))
                    .map(|c| c.to_string())
                    .collect(),
            })
            .filter(|g| !g.columns.is_empty())
            .collect();
        Schema {
            na_token: "NA".into(),
            columns,
            roles: Roles {
                outcomes: self.outcomes.iter().map(|o| o.name.clone()).collect(),
                focus: FOCUS.into(),
                controls: self.controls.clone(),
                interviewer: INTERVIEWER.into(),
                country: COUNTRY.into(),
            },
            groups,
            hot_deck: HotDeckMatching {
                exact: vec!["iw_female".into()],
                caliper: vec![Caliper {
                    column: "iw_age".into(),
                    width: 5.0,
                }],
            },
        }
    }
}

pub fn country_code(i: usize) -> String {
    COUNTRY_CODES
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("C{}", i + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTruth {
    pub name: String,
    pub beta: BTreeMap<String, f64>,
    /// Focus AME over the eligible rows of the generated population.
    pub ame: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub outcomes: Vec<OutcomeTruth>,
    /// Country medians of the expectation used for the focus split.
    pub medians: BTreeMap<String, f64>,
}

impl TruthRecord {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("truth serializes")
    }

    pub fn outcome(&self, name: &str) -> Result<&OutcomeTruth> {
        self.outcomes
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }
}

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn bernoulli(rng: &mut Rng, p: f64) -> f64 {
    (rng.random::<f64>() < p) as u8 as f64
}

fn heap(value: f64, heaping: &Heaping, rng: &mut Rng) -> f64 {
    let u: f64 = rng.random();
    let step = if u < heaping.tens {
        10.0
    } else if u < heaping.tens + heaping.fives {
        5.0
    } else {
        1.0
    };
    ((value / step).round() * step).clamp(0.0, 100.0)
}

/// Linear predictor `intercept + Σ beta_j x_j` for one row; `focus`
/// overrides the row's focus value when given.
fn linear_predictor(beta: &BTreeMap<String, f64>, dataset: &Dataset, row: usize, focus: Option<f64>) -> Result<f64> {
    let mut eta = beta.get("intercept").copied().unwrap_or(0.0);
    for (name, b) in beta {
        if name == "intercept" {
            continue;
        }
        let v = match focus {
            Some(f) if name == FOCUS => f,
            _ => dataset.column(name)?.values()[row],
        };
        eta += b * v;
    }
    Ok(eta)
}

/// Focus AME implied by `beta` over `rows` of a complete dataset: the mean
/// of `p(focus = 1) - p(focus = 0)` with the other regressors as observed.
pub fn true_ame(dataset: &Dataset, beta: &BTreeMap<String, f64>, rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyEligibleSet("true AME".into()));
    }
    let mut total = 0.0;
    for &r in rows {
        let p1 = logistic(linear_predictor(beta, dataset, r, Some(1.0))?);
        let p0 = logistic(linear_predictor(beta, dataset, r, Some(0.0))?);
        total += p1 - p0;
    }
    Ok(total / rows.len() as f64)
}

/// Complete population and its truth. Deterministic in `config.seed`.
pub fn gen_population(config: &SimConfig) -> Result<(Dataset, TruthRecord)> {
    gen_population_scaled(config, 1)
}

/// As [`gen_population`] with `scale` times as many interviewers per country.
pub fn gen_population_scaled(config: &SimConfig, scale: usize) -> Result<(Dataset, TruthRecord)> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, "population", scale as u64);
    let workload = Poisson::new((config.respondents_per_interviewer - 1.0).max(1e-9))
        .map_err(|e| Error::Config(e.to_string()))?;

    struct Interviewer {
        id: String,
        country: String,
        female: f64,
        age: f64,
        expectation: f64,
        good_health: f64,
        respondents: usize,
    }
    let mut interviewers = Vec::new();
    for c in 0..config.countries {
        let country = country_code(c);
        let country_mean = 55.0 + 10.0 * normal(&mut rng);
        for j in 0..config.interviewers_per_country * scale {
            let age = (50.0 + 10.0 * normal(&mut rng)).round().clamp(20.0, 80.0);
            let latent = country_mean + 0.4 * (age - 50.0) + 18.0 * normal(&mut rng);
            let expectation = heap(latent.clamp(0.0, 100.0), &config.heaping, &mut rng);
            let good_health = bernoulli(&mut rng, logistic(1.5 - 0.04 * (age - 50.0)));
            let female = bernoulli(&mut rng, 0.7);
            let respondents = 1 + workload.sample(&mut rng) as usize;
            interviewers.push(Interviewer {
                id: format!("{country}-{:04}", j + 1),
                country: country.clone(),
                female,
                age,
                expectation,
                good_health,
                respondents,
            });
        }
    }
    let values: Vec<Option<f64>> = interviewers.iter().map(|i| Some(i.expectation)).collect();
    let countries: Vec<&str> = interviewers.iter().map(|i| i.country.as_str()).collect();
    let flags = build_focus_indicator(&values, &countries)?;
    let medians: BTreeMap<String, f64> = country_medians(&values, &countries)?
        .into_iter()
        .map(|(c, m)| (c.to_string(), m))
        .collect();

    let schema = config.schema();
    let n: usize = interviewers.iter().map(|i| i.respondents).sum();
    let mut cols: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut ids = Vec::with_capacity(n);
    let mut country_col = Vec::with_capacity(n);
    for (iw, flag) in interviewers.iter().zip(&flags) {
        for _ in 0..iw.respondents {
            ids.push(Some(iw.id.clone()));
            country_col.push(Some(iw.country.clone()));
            let female = bernoulli(&mut rng, 0.55);
            let age = 65.8 + 8.1 * normal(&mut rng);
            let numeracy = (3.2 + 0.8 * normal(&mut rng) - 0.03 * (age - 65.8)).round().clamp(1.0, 5.0);
            let bmi = 27.5 + 0.5 * female + 4.5 * normal(&mut rng);
            for (name, v) in [
                ("iw_female", iw.female),
                ("iw_age", iw.age),
                (EXPECTATION, iw.expectation),
                (FOCUS, flag.expect("complete expectation")),
                ("iw_good_health", iw.good_health),
                ("r_female", female),
                ("r_age", age),
                ("r_numeracy", numeracy),
                ("r_bmi", bmi),
            ] {
                cols.entry(name).or_default().push(v);
            }
        }
    }
    let mut columns = vec![
        Column::text(schema.decl(INTERVIEWER)?.clone(), ids),
        Column::text(schema.decl(COUNTRY)?.clone(), country_col),
    ];
    for o in &config.outcomes {
        columns.push(Column::numeric(schema.decl(&o.name)?.clone(), vec![Some(0.0); n]));
    }
    for decl in schema.columns.iter().skip(2 + config.outcomes.len()) {
        let v = cols.remove(decl.name.as_str()).expect("generated column");
        columns.push(Column::numeric(decl.clone(), v.into_iter().map(Some).collect()));
    }
    let mut dataset = Dataset::from_columns(schema, columns)?;

    let mut truths = Vec::new();
    for o in &config.outcomes {
        let mut draws = Vec::with_capacity(n);
        let mut eligible = Vec::new();
        for r in 0..n {
            let p = logistic(linear_predictor(&o.beta, &dataset, r, None)?);
            let y = bernoulli(&mut rng, p);
            let asked = o.eligible >= 1.0 || rng.random::<f64>() < o.eligible;
            if asked {
                eligible.push(r);
            }
            draws.push(asked.then_some(y));
        }
        let col = dataset.column_mut(&o.name)?;
        for (r, v) in draws.into_iter().enumerate() {
            match v {
                Some(y) => col.set(r, y),
                None => col.set_missing(r),
            }
        }
        truths.push(OutcomeTruth {
            name: o.name.clone(),
            beta: o.beta.clone(),
            ame: true_ame(&dataset, &o.beta, &eligible)?,
        });
    }
    Ok((dataset, TruthRecord { outcomes: truths, medians }))
}

fn propensity(prop: &Propensity, dataset: &Dataset, row: usize) -> Result<f64> {
    if prop.intercept == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let mut eta = prop.intercept;
    for (name, c) in &prop.coefficients {
        eta += c * dataset.column(name)?.get(row).unwrap_or(0.0);
    }
    Ok(logistic(eta))
}

/// Probabilities of IWS (per row, constant within interviewer) and CAPI
/// missingness implied by the configured propensities.
pub fn missingness_probabilities(complete: &Dataset, config: &SimConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = complete.n_rows();
    let m = &config.missingness;
    let iws = (0..n).map(|r| propensity(&m.interviewer, complete, r)).collect::<Result<_>>()?;
    let capi = (0..n).map(|r| propensity(&m.respondent, complete, r)).collect::<Result<_>>()?;
    Ok((iws, capi))
}

/// Masks the IWS block per interviewer (I₁) and the CAPI block per row (I₂).
pub fn apply_missingness(complete: &Dataset, config: &SimConfig, rng: &mut Rng) -> Result<Dataset> {
    config.validate()?;
    if complete.masked_cells() > complete.schema().roles.outcomes.iter().map(|o| {
        complete.column(o).map(|c| c.missing_count()).unwrap_or(0)
    }).sum::<usize>() {
        return Err(Error::InvalidSchema("population already carries masked covariates".into()));
    }
    let (p_iws, p_capi) = missingness_probabilities(complete, config)?;
    let ids = complete.interviewers();
    let mut drop_iw: BTreeMap<&str, bool> = BTreeMap::new();
    let mut masked = complete.clone();
    for (r, id) in ids.iter().enumerate() {
        let gone = *drop_iw.entry(id.as_str()).or_insert_with(|| p_iws[r] > 0.0 && rng.random::<f64>() < p_iws[r]);
        if gone {
            for name in IWS.iter().chain(std::iter::once(&EXPECTATION)) {
                masked.column_mut(name)?.set_missing(r);
            }
        }
        if p_capi[r] > 0.0 && rng.random::<f64>() < p_capi[r] {
            for name in CAPI {
                masked.column_mut(name)?.set_missing(r);
            }
        }
    }
    let k = 1 + config.regressors().len();
    let patterns = detect_patterns(&masked, &masked.schema().groups)?;
    if patterns.complete_count() < k + 1 {
        return Err(Error::DegenerateDesign(format!(
            "{} complete cases for {k} coefficients",
            patterns.complete_count()
        )));
    }
    Ok(masked)
}

/// Population and masked sample for one seed.
pub fn generate(config: &SimConfig) -> Result<(Dataset, Dataset, TruthRecord)> {
    let (complete, truth) = gen_population(config)?;
    let mut rng = rng::stream(config.seed, "missingness", 0);
    let masked = apply_missingness(&complete, config, &mut rng)?;
    Ok((complete, masked, truth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct McOptions {
    pub estimation: EstimationOptions,
    /// Outcome analysed; the first configured outcome when `None`.
    pub outcome: Option<String>,
    pub level: f64,
    pub methods: Vec<Method>,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            estimation: EstimationOptions::default(),
            outcome: None,
            level: 0.95,
            methods: Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McRecord {
    pub replication: usize,
    pub method: Method,
    /// `(estimate, se, lower, upper)` or the failure code.
    pub result: std::result::Result<(f64, f64, f64, f64), String>,
    /// AME of the true coefficients over the rows the estimators average over.
    pub truth: f64,
    /// AME of the true coefficients over the whole eligible population.
    pub truth_population: f64,
}

impl McRecord {
    pub fn covered(&self) -> Option<bool> {
        self.result.as_ref().ok().map(|&(_, _, lo, hi)| lo <= self.truth && self.truth <= hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub ok: usize,
    pub failed: usize,
    pub mean_bias: f64,
    /// Monte Carlo standard error of `mean_bias`.
    pub bias_mc_se: f64,
    pub empirical_sd: f64,
    pub mean_se: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub replications: usize,
    pub records: Vec<McRecord>,
    /// Replications whose shared steps (generation, imputation) failed.
    pub failures: Vec<(usize, String)>,
    pub summary: Vec<MethodSummary>,
}

impl McReport {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn records_csv(&self) -> String {
        let mut s = String::from("replication,method,status,estimate,se,lower,upper,truth,truth_population,covered\n");
        for r in &self.records {
            match &r.result {
                Ok((e, se, lo, hi)) => writeln!(
                    s,
                    "{},{},ok,{e},{se},{lo},{hi},{},{},{}",
                    r.replication,
                    r.method,
                    r.truth,
                    r.truth_population,
                    r.covered().unwrap() as u8
                ),
                Err(code) => writeln!(
                    s,
                    "{},{},{code},NA,NA,NA,NA,{},{},NA",
                    r.replication, r.method, r.truth, r.truth_population
                ),
            }
            .unwrap();
        }
        for (rep, code) in &self.failures {
            writeln!(s, "{rep},all,{code},NA,NA,NA,NA,NA,NA,NA").unwrap();
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,ok,failed,mean_bias,bias_mc_se,empirical_sd,mean_se,coverage\n");
        for m in &self.summary {
            writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.4}",
                m.method, m.ok, m.failed, m.mean_bias, m.bias_mc_se, m.empirical_sd, m.mean_se, m.coverage
            )
            .unwrap();
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = format!(
            "Monte Carlo: {} replications, {} failed before estimation\n\n",
            self.replications,
            self.failures.len()
        );
        writeln!(
            s,
            "{:<10} {:>5} {:>6} {:>10} {:>10} {:>10} {:>10} {:>9}",
            "method", "ok", "failed", "bias", "mc_se", "emp_sd", "mean_se", "coverage"
        )
        .unwrap();
        for m in &self.summary {
            writeln!(
                s,
                "{:<10} {:>5} {:>6} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>9.3}",
                m.method.name(),
                m.ok,
                m.failed,
                m.mean_bias,
                m.bias_mc_se,
                m.empirical_sd,
                m.mean_se,
                m.coverage
            )
            .unwrap();
        }
        s
    }
}

fn summarise(method: Method, records: &[&McRecord]) -> MethodSummary {
    let ok: Vec<(f64, f64, bool)> = records
        .iter()
        .filter_map(|r| {
            r.result
                .as_ref()
                .ok()
                .map(|&(e, se, _, _)| (e - r.truth, se, r.covered().unwrap()))
        })
        .collect();
    let n = ok.len() as f64;
    let mean = |f: &dyn Fn(&(f64, f64, bool)) -> f64| ok.iter().map(f).sum::<f64>() / n;
    let mean_bias = mean(&|r| r.0);
    let var = if ok.len() > 1 {
        ok.iter().map(|r| (r.0 - mean_bias).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        f64::NAN
    };
    MethodSummary {
        method,
        ok: ok.len(),
        failed: records.len() - ok.len(),
        mean_bias,
        bias_mc_se: (var / n).sqrt(),
        empirical_sd: var.sqrt(),
        mean_se: mean(&|r| r.1),
        coverage: mean(&|r| r.2 as u8 as f64),
    }
}

/// One replication: generate, mask, estimate every method.
fn replicate(config: &SimConfig, opts: &McOptions, rep: usize) -> std::result::Result<Vec<McRecord>, String> {
    let rep_seed = rng::derive_seed(config.seed, "replication", rep as u64);
    let cfg = SimConfig {
        seed: rep_seed,
        ..config.clone()
    };
    let (complete, masked, truth) = generate(&cfg).map_err(|e| e.code().to_string())?;
    let outcome = opts.outcome.clone().unwrap_or_else(|| config.outcomes[0].name.clone());
    let outcome_truth = truth.outcome(&outcome).map_err(|e| e.code().to_string())?;
    let mut est = opts.estimation.clone();
    est.seed = rng::derive_seed(rep_seed, "impute", 0);
    let analysis = analyse(&masked, &outcome, &opts.methods, &est).map_err(|e| e.code().to_string())?;
    // eligible rows keep their population row ids
    let eligible = masked.eligible(&outcome).map_err(|e| e.code().to_string())?;
    let cc_rows: Vec<usize> = analysis
        .patterns
        .rows_in(0)
        .into_iter()
        .map(|r| eligible.row_ids()[r])
        .collect();
    let truth_cc = true_ame(&complete, &outcome_truth.beta, &cc_rows).map_err(|e| e.code().to_string())?;
    Ok(analysis
        .estimates
        .iter()
        .map(|(m, r)| McRecord {
            replication: rep,
            method: *m,
            result: match r {
                Ok(e) => {
                    let (lo, hi) = e.ame_interval(opts.level);
                    Ok((e.ame.ame, e.ame.se, lo, hi))
                }
                Err(err) => Err(err.code().to_string()),
            },
            truth: truth_cc,
            truth_population: outcome_truth.ame,
        })
        .collect())
}

/// Runs `replications` independent replications (in parallel) and
/// summarises the focus AME per method.
pub fn monte_carlo(config: &SimConfig, replications: usize, opts: &McOptions) -> Result<McReport> {
    config.validate()?;
    if replications < MIN_REPLICATIONS {
        return Err(Error::Config(format!(
            "need at least {MIN_REPLICATIONS} replications, got {replications}"
        )));
    }
    if let Some(o) = &opts.outcome {
        if !config.outcomes.iter().any(|c| &c.name == o) {
            return Err(Error::MissingColumn(o.clone()));
        }
    }
    let results = par::map_indexed(replications, |rep| replicate(config, opts, rep));
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(recs) => records.extend(recs),
            Err(code) => failures.push((rep, code)),
        }
    }
    let summary = opts
        .methods
        .iter()
        .map(|&m| {
            let rs: Vec<&McRecord> = records.iter().filter(|r| r.method == m).collect();
            summarise(m, &rs)
        })
        .collect();
    Ok(McReport {
        replications,
        records,
        failures,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            interviewers_per_country: 15,
            respondents_per_interviewer: 8.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn default_config_round_trips() {
        let c = SimConfig::default();
        c.validate().unwrap();
        let back = SimConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        c.schema().validate().unwrap();
    }

    #[test]
    fn minus_infinity_intercept_parses() {
        let c = SimConfig::from_toml_str("[missingness.interviewer]\nintercept = -inf\n").unwrap();
        assert_eq!(c.missingness.interviewer.intercept, f64::NEG_INFINITY);
    }

    #[test]
    fn propensities_may_not_read_maskable_columns() {
        let mut c = SimConfig::default();
        c.missingness.respondent.coefficients.insert("r_bmi".into(), 0.1);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = SimConfig::default();
        c.missingness.interviewer.coefficients.insert(FOCUS.into(), 0.1);
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.missingness.respondent.coefficients.insert("thinc2".into(), 0.5);
        c.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, ta) = gen_population(&small()).unwrap();
        let (b, tb) = gen_population(&small()).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        assert_eq!(ta, tb);
        let other = SimConfig { seed: 2, ..small() };
        assert_ne!(gen_population(&other).unwrap().0.to_csv_string(), a.to_csv_string());
    }

    #[test]
    fn null_focus_effect_has_zero_ame() {
        let mut c = small();
        c.outcomes[0].beta.insert(FOCUS.into(), 0.0);
        let (_, truth) = gen_population(&c).unwrap();
        assert_eq!(truth.outcomes[0].ame, 0.0);
    }

    #[test]
    fn iws_block_is_masked_per_interviewer() {
        let c = SimConfig {
            missingness: Missingness {
                interviewer: Propensity { intercept: 0.0, coefficients: BTreeMap::new() },
                respondent: Propensity::default(),
            },
            ..small()
        };
        let (complete, masked, _) = generate(&c).unwrap();
        assert_eq!(complete.n_rows(), masked.n_rows());
        let ids = masked.interviewers();
        let focus = masked.column(FOCUS).unwrap();
        let mut any = false;
        for r in 0..masked.n_rows() {
            for name in ["iw_good_health", EXPECTATION] {
                assert_eq!(masked.column(name).unwrap().mask[r], focus.mask[r]);
            }
            for s in 0..masked.n_rows() {
                if ids[r] == ids[s] {
                    assert_eq!(focus.mask[r], focus.mask[s]);
                }
            }
            assert!(!masked.column("r_bmi").unwrap().mask[r]);
            any |= focus.mask[r];
        }
        assert!(any);
    }

    #[test]
    fn disabled_missingness_is_identity() {
        let c = SimConfig {
            missingness: Missingness::default(),
            ..small()
        };
        let (complete, masked, _) = generate(&c).unwrap();
        assert_eq!(complete, masked);
        assert_eq!(masked.masked_cells(), 0);
    }

    #[test]
    fn too_few_complete_cases_is_degenerate() {
        let c = SimConfig {
            missingness: Missingness {
                interviewer: Propensity { intercept: 30.0, coefficients: BTreeMap::new() },
                respondent: Propensity::default(),
            },
            ..small()
        };
        assert!(matches!(generate(&c), Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn heaping_hits_focal_values() {
        let mut rng = rng::stream(3, "test", 0);
        let h = Heaping { tens: 1.0, fives: 0.0 };
        for _ in 0..100 {
            let v = heap(rng.random::<f64>() * 100.0, &h, &mut rng);
            assert_eq!(v % 10.0, 0.0);
        }
    }
}
