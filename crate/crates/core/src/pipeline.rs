//! Per-outcome estimation: complete-case analysis, fill-in by multiple
//! imputation, and block model averaging, sharing one imputation set.

use std::fmt;
use std::str::FromStr;

use crate::averaging::{block_average, fit_cell, pool, BlockAverage, Criterion, MaOrder, SubmodelId};
use crate::design::{self, DesignSpec};
use crate::error::{Error, Result};
use crate::impute::{multiple_impute, ImputationSet, ImputeOptions, PooledEstimate};
use crate::logit::{ame_binary, cluster_codes, fit_logit, AmeResult, FitResult};
use crate::par;
use crate::patterns::{assemble_grand_design, complete_case_subset, detect_patterns, GrandDesign, PatternSet};
use crate::tabular::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Cca,
    FiMi,
    BbmaBic,
    BbmaAic,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cca, Method::FiMi, Method::BbmaBic, Method::BbmaAic];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cca => "cca",
            Method::FiMi => "fi-mi",
            Method::BbmaBic => "bbma-bic",
            Method::BbmaAic => "bbma-aic",
        }
    }

    /// Table caption fragment.
    pub fn caption(self) -> &'static str {
        match self {
            Method::Cca => "CCA",
            Method::FiMi => "FI-MI",
            Method::BbmaBic => "block BMA (BIC)",
            Method::BbmaAic => "block BMA (AIC)",
        }
    }

    pub fn needs_imputation(self) -> bool {
        self != Method::Cca
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationOptions {
    pub m: usize,
    pub seed: u64,
    pub cluster_se: bool,
    pub ma_order: MaOrder,
    /// `outcome` is overwritten per analysed outcome.
    pub impute: ImputeOptions,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            m: 20,
            seed: 0,
            cluster_se: false,
            ma_order: MaOrder::PoolFirst,
            impute: ImputeOptions::default(),
        }
    }
}

/// Focus coefficient and focus AME from one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodEstimate {
    pub method: Method,
    pub coefficient: f64,
    pub coefficient_se: f64,
    pub ame: AmeResult,
    /// Reference degrees of freedom for intervals; infinite for CCA.
    pub df: f64,
    /// Fraction of missing information of the AME, when pooled.
    pub fmi: Option<f64>,
    /// Rows entering the estimation.
    pub n: usize,
}

impl MethodEstimate {
    /// Two-sided interval for the AME at `level`.
    pub fn ame_interval(&self, level: f64) -> (f64, f64) {
        let q = critical_value(level, self.df);
        (self.ame.ame - q * self.ame.se, self.ame.ame + q * self.ame.se)
    }
}

/// Student-t quantile, normal when `df` is infinite or huge.
pub fn critical_value(level: f64, df: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
    let p = 0.5 + level / 2.0;
    if df.is_finite() && df < 1e7 {
        StudentsT::new(0.0, 1.0, df).expect("df > 0").inverse_cdf(p)
    } else {
        Normal::standard().inverse_cdf(p)
    }
}

#[derive(Debug)]
pub struct OutcomeAnalysis {
    pub outcome: String,
    pub n_eligible: usize,
    pub spec: DesignSpec,
    pub patterns: PatternSet,
    pub estimates: Vec<(Method, Result<MethodEstimate>)>,
    pub cca: Option<FitResult>,
    pub averaging: Option<BlockAverage>,
    pub imputations: Option<ImputationSet>,
}

impl OutcomeAnalysis {
    pub fn estimate(&self, method: Method) -> Option<&Result<MethodEstimate>> {
        self.estimates.iter().find(|(m, _)| *m == method).map(|(_, r)| r)
    }
}

fn interviewer_codes(dataset: &Dataset) -> Vec<usize> {
    cluster_codes(&dataset.interviewers())
}

/// Complete-case logit; the AME averages over the complete cases.
pub fn cca(eligible: &Dataset, patterns: &PatternSet, spec: &DesignSpec, outcome: &str, cluster_se: bool) -> Result<(FitResult, MethodEstimate)> {
    let cc = complete_case_subset(eligible, patterns)?;
    let x = spec.matrix(&cc)?;
    let y = design::outcome(&cc, outcome)?;
    let codes = cluster_se.then(|| interviewer_codes(&cc));
    let fit = fit_logit(&y, &x, codes.as_deref())?;
    let ame = ame_binary(&fit, DesignSpec::FOCUS, &x)?;
    let f = DesignSpec::FOCUS;
    let est = MethodEstimate {
        method: Method::Cca,
        coefficient: fit.beta[f],
        coefficient_se: fit.cov[(f, f)].sqrt(),
        ame,
        df: f64::INFINITY,
        fmi: None,
        n: cc.n_rows(),
    };
    Ok((fit, est))
}

fn from_pooled(method: Method, coef: &PooledEstimate, ame: &PooledEstimate, n: usize) -> MethodEstimate {
    MethodEstimate {
        method,
        coefficient: coef.qbar,
        coefficient_se: coef.se(),
        ame: AmeResult::from_estimate(ame.qbar, ame.se()),
        df: ame.df,
        fmi: Some(ame.fmi),
        n,
    }
}

/// Fill-in model pooled across completed datasets.
pub fn fi_mi(designs: &[GrandDesign], cluster: Option<&[usize]>) -> Result<MethodEstimate> {
    let first = designs.first().ok_or(Error::TooFewImputations(0))?;
    let cc = first.complete_rows();
    if cc.is_empty() {
        return Err(Error::EmptyCompleteCases);
    }
    let fill_in = SubmodelId::from_index(0);
    let cells = par::map_slice(designs, |d| fit_cell(&fill_in, d, &d.complete_case_w(), cluster));
    let cells: Vec<_> = cells.into_iter().collect::<Result<_>>()?;
    let coef = pool(
        &cells.iter().map(|c| c.beta).collect::<Vec<_>>(),
        &cells.iter().map(|c| c.beta_var).collect::<Vec<_>>(),
    )?;
    let ame = pool(
        &cells.iter().map(|c| c.ame).collect::<Vec<_>>(),
        &cells.iter().map(|c| c.ame_var).collect::<Vec<_>>(),
    )?;
    Ok(from_pooled(Method::FiMi, &coef, &ame, first.n()))
}

fn from_average(avg: &BlockAverage, criterion: Criterion, method: Method, n: usize) -> MethodEstimate {
    let (coefficient, coefficient_se) = avg.coefficient(criterion);
    let (ame, ame_se) = avg.ame(criterion);
    let (df, fmi) = match &avg.pooled_after {
        Some(p) => {
            let i = if criterion == Criterion::Bic { 2 } else { 3 };
            (p[i].df, Some(p[i].fmi))
        }
        None => (f64::INFINITY, None),
    };
    MethodEstimate {
        method,
        coefficient,
        coefficient_se,
        ame: AmeResult::from_estimate(ame, ame_se),
        df,
        fmi,
        n,
    }
}

/// Runs `methods` for one outcome on the rows eligible for it.
///
/// Patterns with fewer than `K + 1` rows are merged into their nearest
/// larger neighbour first. Failures of shared steps (eligibility, patterns,
/// imputation) abort; per-method estimation failures are returned in place.
pub fn analyse(dataset: &Dataset, outcome: &str, methods: &[Method], opts: &EstimationOptions) -> Result<OutcomeAnalysis> {
    let eligible = dataset.eligible(outcome)?;
    let spec = DesignSpec::from_dataset(&eligible)?;
    let mut patterns = detect_patterns(&eligible, &eligible.schema().groups)?;
    patterns.merge_small(spec.k() + 1);
    let codes = opts.cluster_se.then(|| interviewer_codes(&eligible));

    let mut estimates = Vec::new();
    let mut cca_fit = None;
    if methods.contains(&Method::Cca) {
        match cca(&eligible, &patterns, &spec, outcome, opts.cluster_se) {
            Ok((fit, est)) => {
                cca_fit = Some(fit);
                estimates.push((Method::Cca, Ok(est)));
            }
            Err(e) => estimates.push((Method::Cca, Err(e))),
        }
    }

    let mut imputations = None;
    let mut averaging = None;
    if methods.iter().any(|m| m.needs_imputation()) {
        let mut impute = opts.impute.clone();
        impute.outcome = Some(outcome.to_string());
        let set = multiple_impute(&eligible, opts.m, opts.seed, &impute)?;
        let designs: Vec<GrandDesign> = set
            .completed
            .iter()
            .map(|d| assemble_grand_design(d, &patterns, &spec, outcome))
            .collect::<Result<_>>()?;
        let n = eligible.n_rows();
        if methods.contains(&Method::FiMi) {
            estimates.push((Method::FiMi, fi_mi(&designs, codes.as_deref())));
        }
        let wants_ma: Vec<Method> = methods
            .iter()
            .copied()
            .filter(|m| matches!(m, Method::BbmaBic | Method::BbmaAic))
            .collect();
        if !wants_ma.is_empty() {
            match block_average(&designs, codes.as_deref(), opts.ma_order) {
                Ok(avg) => {
                    for m in wants_ma {
                        let crit = if m == Method::BbmaBic { Criterion::Bic } else { Criterion::Aic };
                        estimates.push((m, Ok(from_average(&avg, crit, m, n))));
                    }
                    averaging = Some(avg);
                }
                Err(e) => {
                    for m in wants_ma {
                        estimates.push((m, Err(e.duplicate())));
                    }
                }
            }
        }
        imputations = Some(set);
    }
    estimates.sort_by_key(|(m, _)| *m);
    Ok(OutcomeAnalysis {
        outcome: outcome.to_string(),
        n_eligible: eligible.n_rows(),
        spec,
        patterns,
        estimates,
        cca: cca_fit,
        averaging,
        imputations,
    })
}
