//! Block model averaging over the submodels of the grand model.
//!
//! With `H` incomplete patterns there are `2^H` submodels, each adding a
//! subset of the pattern-interaction blocks to the fill-in regressors.
//! Submodels are weighted by `exp(-ΔIC/2)` (equal prior model
//! probabilities) and combined with the Buckland et al. (1997)
//! unconditional variance.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::impute::{rubin_pool, ImputationSet, PooledEstimate};
use crate::logit::{ame_with, cluster_robust_cov, fit_logit, FitResult, FocusTerm};
use crate::design::DesignSpec;
use crate::par;
use crate::patterns::{assemble_grand_design, GrandDesign, PatternSet};

pub const MAX_BLOCKS: usize = 20;

/// Subset of pattern blocks; `index` is the binary encoding of the subset
/// (bit `h-1` set iff block `h` is included), so index 0 is the fill-in model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmodelId {
    pub index: usize,
    pub blocks: Vec<usize>,
}

impl SubmodelId {
    pub fn from_index(index: usize) -> Self {
        let blocks = (0..usize::BITS as usize)
            .filter(|b| index >> b & 1 == 1)
            .map(|b| b + 1)
            .collect();
        SubmodelId { index, blocks }
    }

    /// 1-based model number `r`.
    pub fn r(&self) -> usize {
        self.index + 1
    }

    pub fn label(&self) -> String {
        let inner: Vec<String> = self.blocks.iter().map(|b| b.to_string()).collect();
        format!("{{{}}}", inner.join(" "))
    }
}

pub fn enumerate_submodels(h: usize) -> Result<Vec<SubmodelId>> {
    if h > MAX_BLOCKS {
        return Err(Error::ModelSpaceTooLarge(h));
    }
    Ok((0..1usize << h).map(SubmodelId::from_index).collect())
}

/// Logit fit on `[W | Z_b for b in id.blocks]`.
pub fn fit_submodel(id: &SubmodelId, design: &GrandDesign, cluster: Option<&[usize]>) -> Result<FitResult> {
    let x = design.matrix(&id.blocks);
    fit_logit(&design.y, &x, cluster)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Bic,
    Aic,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Bic => "BIC",
            Criterion::Aic => "AIC",
        }
    }
}

/// Normalised `exp(-Δ/2)` weights with `Δ = ic - min(ic)`.
pub fn ic_weights(ics: &[f64]) -> Result<Vec<f64>> {
    if ics.is_empty() {
        return Err(Error::LengthMismatch("no information criteria".into()));
    }
    if let Some(i) = ics.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteIC(i));
    }
    let min = ics.iter().cloned().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = ics.iter().map(|v| (-(v - min) / 2.0).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedEstimate {
    pub estimates: Vec<f64>,
    pub variances: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Information criteria behind `lambda`; empty when weights were supplied.
    pub ics: Vec<f64>,
    pub criterion: Option<Criterion>,
    pub beta_ma: f64,
    pub var_ma: f64,
}

impl AveragedEstimate {
    pub fn se(&self) -> f64 {
        self.var_ma.sqrt()
    }
}

/// Weighted estimate with the unconditional variance
/// `[Σ λ_r sqrt(var_r + (beta_r - beta_ma)^2)]^2`.
pub fn model_average(betas: &[f64], variances: &[f64], lambda: &[f64]) -> Result<AveragedEstimate> {
    if betas.len() != variances.len() || betas.len() != lambda.len() || betas.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} estimates, {} variances, {} weights",
            betas.len(),
            variances.len(),
            lambda.len()
        )));
    }
    let sum: f64 = lambda.iter().sum();
    if lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights);
    }
    let beta_ma: f64 = betas.iter().zip(lambda).map(|(b, l)| l * b).sum();
    let root: f64 = betas
        .iter()
        .zip(variances)
        .zip(lambda)
        .map(|((b, v), l)| l * (v + (b - beta_ma).powi(2)).sqrt())
        .sum();
    Ok(AveragedEstimate {
        estimates: betas.to_vec(),
        variances: variances.to_vec(),
        lambda: lambda.to_vec(),
        ics: Vec::new(),
        criterion: None,
        beta_ma,
        var_ma: root * root,
    })
}

pub fn average_by_ic(
    criterion: Criterion,
    betas: &[f64],
    variances: &[f64],
    ics: &[f64],
) -> Result<AveragedEstimate> {
    let lambda = ic_weights(ics)?;
    let mut avg = model_average(betas, variances, &lambda)?;
    avg.ics = ics.to_vec();
    avg.criterion = Some(criterion);
    Ok(avg)
}

/// Order of combining imputations and submodels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaOrder {
    /// Rubin-pool each submodel across imputations, then average submodels
    /// with ICs averaged across imputations.
    #[default]
    PoolFirst,
    /// Average submodels within each imputation, then Rubin-pool.
    AverageFirst,
}

impl MaOrder {
    pub fn name(self) -> &'static str {
        match self {
            MaOrder::PoolFirst => "pool-first",
            MaOrder::AverageFirst => "average-first",
        }
    }
}

/// Focus quantities from one submodel fit on one completed dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellFit {
    pub k: usize,
    pub n: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub beta: f64,
    pub beta_var: f64,
    pub ame: f64,
    pub ame_var: f64,
}

/// Fits submodel `id` and extracts focus coefficient and AME. The AME is
/// averaged over the complete-case rows, where every block is zero, so it
/// depends on the fill-in coefficients only.
pub fn fit_cell(
    id: &SubmodelId,
    design: &GrandDesign,
    cc_w: &DMatrix<f64>,
    cluster: Option<&[usize]>,
) -> Result<CellFit> {
    let x = design.matrix(&id.blocks);
    let mut fit = fit_logit(&design.y, &x, None)?;
    if let Some(ids) = cluster {
        fit.cov = cluster_robust_cov(&fit, &design.y, &x, ids)?;
    }
    let k = design.k();
    let beta_w: DVector<f64> = fit.beta.rows(0, k).into_owned();
    let cov_w: DMatrix<f64> = fit.cov.view((0, 0), (k, k)).into_owned();
    let ame = ame_with(&beta_w, &cov_w, cc_w, &FocusTerm::plain(DesignSpec::FOCUS))?;
    let f = DesignSpec::FOCUS;
    Ok(CellFit {
        k: fit.k,
        n: fit.n,
        log_likelihood: fit.log_likelihood,
        aic: fit.aic,
        bic: fit.bic,
        beta: fit.beta[f],
        beta_var: fit.cov[(f, f)],
        ame: ame.ame,
        ame_var: ame.se * ame.se,
    })
}

/// Rubin pooling that also accepts a single dataset (no between variance).
pub fn pool(estimates: &[f64], variances: &[f64]) -> Result<PooledEstimate> {
    if estimates.len() == 1 {
        return Ok(PooledEstimate {
            qbar: estimates[0],
            ubar: variances[0],
            b: 0.0,
            t: variances[0],
            fmi: 0.0,
            df: f64::INFINITY,
            m: 1,
        });
    }
    rubin_pool(estimates, variances)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmodelSummary {
    pub id: SubmodelId,
    pub k: usize,
    pub n: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub beta: PooledEstimate,
    pub ame: PooledEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockAverage {
    pub order: MaOrder,
    pub submodels: Vec<SubmodelSummary>,
    pub lambda_aic: Vec<f64>,
    pub lambda_bic: Vec<f64>,
    pub coef_bic: AveragedEstimate,
    pub coef_aic: AveragedEstimate,
    pub ame_bic: AveragedEstimate,
    pub ame_aic: AveragedEstimate,
    /// Present only for average-first: the per-imputation averages pooled.
    pub pooled_after: Option<[PooledEstimate; 4]>,
    /// Submodels whose fit failed on some completed dataset, with the error
    /// code; they get zero weight.
    pub dropped: Vec<(SubmodelId, String)>,
}

impl BlockAverage {
    /// `(estimate, se)` of the averaged AME under `criterion`, respecting the
    /// combination order.
    pub fn ame(&self, criterion: Criterion) -> (f64, f64) {
        match (&self.pooled_after, criterion) {
            (Some(p), Criterion::Bic) => (p[2].qbar, p[2].se()),
            (Some(p), Criterion::Aic) => (p[3].qbar, p[3].se()),
            (None, Criterion::Bic) => (self.ame_bic.beta_ma, self.ame_bic.se()),
            (None, Criterion::Aic) => (self.ame_aic.beta_ma, self.ame_aic.se()),
        }
    }

    pub fn coefficient(&self, criterion: Criterion) -> (f64, f64) {
        match (&self.pooled_after, criterion) {
            (Some(p), Criterion::Bic) => (p[0].qbar, p[0].se()),
            (Some(p), Criterion::Aic) => (p[1].qbar, p[1].se()),
            (None, Criterion::Bic) => (self.coef_bic.beta_ma, self.coef_bic.se()),
            (None, Criterion::Aic) => (self.coef_aic.beta_ma, self.coef_aic.se()),
        }
    }

    /// Per-submodel diagnostics table.
    pub fn diagnostics_csv(&self) -> String {
        let mut s = String::from("r,blocks,k,logL,aic,bic,lambda_aic,lambda_bic,beta_focus,se,ame,ame_se\n");
        for (i, sm) in self.submodels.iter().enumerate() {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                sm.id.r(),
                sm.id.label(),
                sm.k,
                sm.log_likelihood,
                sm.aic,
                sm.bic,
                self.lambda_aic[i],
                self.lambda_bic[i],
                sm.beta.qbar,
                sm.beta.se(),
                sm.ame.qbar,
                sm.ame.se()
            )
            .unwrap();
        }
        s
    }
}

/// Fits the full `submodel × dataset` grid and combines it.
///
/// `designs` holds one grand design per completed dataset (all sharing the
/// original pattern assignment).
pub fn block_average(
    designs: &[GrandDesign],
    cluster: Option<&[usize]>,
    order: MaOrder,
) -> Result<BlockAverage> {
    let first = designs.first().ok_or(Error::TooFewImputations(0))?;
    let ids = enumerate_submodels(first.h)?;
    let cc_rows = first.complete_rows();
    if cc_rows.is_empty() {
        return Err(Error::EmptyCompleteCases);
    }
    let cc: Vec<DMatrix<f64>> = designs.iter().map(GrandDesign::complete_case_w).collect();
    let (m, r) = (designs.len(), ids.len());
    let cells = par::map_indexed(m * r, |c| {
        let (mi, ri) = (c / r, c % r);
        fit_cell(&ids[ri], &designs[mi], &cc[mi], cluster)
    });
    let mut cells: Vec<Option<Result<CellFit>>> = cells.into_iter().map(Some).collect();
    let mut dropped = Vec::new();
    let mut kept = Vec::new();
    for ri in 0..r {
        let failure = (0..m).find(|&mi| matches!(cells[mi * r + ri], Some(Err(_))));
        match failure {
            None => kept.push(ri),
            Some(mi) => {
                let err = cells[mi * r + ri].take().unwrap().unwrap_err();
                if ri == 0 {
                    return Err(err);
                }
                log::warn!("submodel {} not estimable ({}); excluded from the model space", ids[ri].label(), err.code());
                dropped.push((ids[ri].clone(), err.code().to_string()));
            }
        }
    }
    let cells: Vec<Option<CellFit>> = cells.into_iter().map(|c| c.and_then(|r| r.ok())).collect();
    let cell = |mi: usize, ri: usize| cells[mi * r + ri].as_ref().expect("kept submodel");

    let mut submodels = Vec::with_capacity(kept.len());
    for &ri in &kept {
        let id = &ids[ri];
        let column: Vec<&CellFit> = (0..m).map(|mi| cell(mi, ri)).collect();
        let mean = |f: fn(&CellFit) -> f64| column.iter().map(|c| f(c)).sum::<f64>() / m as f64;
        let beta = pool(
            &column.iter().map(|c| c.beta).collect::<Vec<_>>(),
            &column.iter().map(|c| c.beta_var).collect::<Vec<_>>(),
        )?;
        let ame = pool(
            &column.iter().map(|c| c.ame).collect::<Vec<_>>(),
            &column.iter().map(|c| c.ame_var).collect::<Vec<_>>(),
        )?;
        submodels.push(SubmodelSummary {
            id: id.clone(),
            k: column[0].k,
            n: column[0].n,
            log_likelihood: mean(|c| c.log_likelihood),
            aic: mean(|c| c.aic),
            bic: mean(|c| c.bic),
            beta,
            ame,
        });
    }
    let aics: Vec<f64> = submodels.iter().map(|s| s.aic).collect();
    let bics: Vec<f64> = submodels.iter().map(|s| s.bic).collect();
    let avg = |crit: Criterion, ics: &[f64], q: fn(&SubmodelSummary) -> &PooledEstimate| {
        let est: Vec<f64> = submodels.iter().map(|s| q(s).qbar).collect();
        let var: Vec<f64> = submodels.iter().map(|s| q(s).t).collect();
        average_by_ic(crit, &est, &var, ics)
    };
    let coef_bic = avg(Criterion::Bic, &bics, |s| &s.beta)?;
    let coef_aic = avg(Criterion::Aic, &aics, |s| &s.beta)?;
    let ame_bic = avg(Criterion::Bic, &bics, |s| &s.ame)?;
    let ame_aic = avg(Criterion::Aic, &aics, |s| &s.ame)?;

    let pooled_after = match order {
        MaOrder::PoolFirst => None,
        MaOrder::AverageFirst => {
            let mut per: [Vec<f64>; 8] = Default::default();
            for mi in 0..m {
                let row: Vec<&CellFit> = kept.iter().map(|&ri| cell(mi, ri)).collect();
                let b_ic: Vec<f64> = row.iter().map(|c| c.bic).collect();
                let a_ic: Vec<f64> = row.iter().map(|c| c.aic).collect();
                let betas: Vec<f64> = row.iter().map(|c| c.beta).collect();
                let bvars: Vec<f64> = row.iter().map(|c| c.beta_var).collect();
                let ames: Vec<f64> = row.iter().map(|c| c.ame).collect();
                let avars: Vec<f64> = row.iter().map(|c| c.ame_var).collect();
                let results = [
                    average_by_ic(Criterion::Bic, &betas, &bvars, &b_ic)?,
                    average_by_ic(Criterion::Aic, &betas, &bvars, &a_ic)?,
                    average_by_ic(Criterion::Bic, &ames, &avars, &b_ic)?,
                    average_by_ic(Criterion::Aic, &ames, &avars, &a_ic)?,
                ];
                for (j, res) in results.iter().enumerate() {
                    per[2 * j].push(res.beta_ma);
                    per[2 * j + 1].push(res.var_ma);
                }
            }
            Some([
                pool(&per[0], &per[1])?,
                pool(&per[2], &per[3])?,
                pool(&per[4], &per[5])?,
                pool(&per[6], &per[7])?,
            ])
        }
    };

    Ok(BlockAverage {
        order,
        lambda_aic: coef_aic.lambda.clone(),
        lambda_bic: coef_bic.lambda.clone(),
        submodels,
        coef_bic,
        coef_aic,
        ame_bic,
        ame_aic,
        pooled_after,
        dropped,
    })
}

/// Grand designs for every completed dataset, then [`block_average`].
pub fn mi_model_average(
    impset: &ImputationSet,
    patterns: &PatternSet,
    spec: &DesignSpec,
    outcome: &str,
    cluster: Option<&[usize]>,
    order: MaOrder,
) -> Result<BlockAverage> {
    let designs: Vec<GrandDesign> = impset
        .completed
        .iter()
        .map(|d| assemble_grand_design(d, patterns, spec, outcome))
        .collect::<Result<_>>()?;
    block_average(&designs, cluster, order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn enumeration() {
        assert_eq!(enumerate_submodels(3).unwrap().len(), 8);
        let one = enumerate_submodels(0).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].blocks.is_empty());
        let two: Vec<Vec<usize>> = enumerate_submodels(2).unwrap().into_iter().map(|s| s.blocks).collect();
        assert_eq!(two, vec![vec![], vec![1], vec![2], vec![1, 2]]);
        assert!(matches!(enumerate_submodels(21), Err(Error::ModelSpaceTooLarge(21))));
        assert_eq!(SubmodelId::from_index(3).label(), "{1 2}");
    }

    #[test]
    fn weight_examples() {
        assert_eq!(ic_weights(&[5.0; 4]).unwrap(), vec![0.25; 4]);
        let w = ic_weights(&[0.0, 2.0, 4.0]).unwrap();
        for (a, b) in w.iter().zip([0.66524, 0.24473, 0.09003]) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        let shifted = ic_weights(&[1000.0, 1002.0, 1004.0]).unwrap();
        for (a, b) in w.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(ic_weights(&[1.0, f64::NAN]), Err(Error::NonFiniteIC(1))));
    }

    #[test]
    fn averaging_examples() {
        let a = model_average(&[0.5, 9.0], &[0.3, 0.1], &[1.0, 0.0]).unwrap();
        assert_eq!(a.beta_ma, 0.5);
        assert_relative_eq!(a.var_ma, 0.3, epsilon = 1e-15);

        let b = model_average(&[1.0, 3.0], &[0.04, 0.04], &[0.5, 0.5]).unwrap();
        assert_eq!(b.beta_ma, 2.0);
        assert!((b.var_ma - 1.04).abs() < 1e-12);

        let c = model_average(&[2.0, 2.0, 2.0], &[0.01, 0.04, 0.09], &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(c.beta_ma, 2.0);
        assert_relative_eq!(c.var_ma, (0.2 * 0.1 + 0.3 * 0.2 + 0.5 * 0.3f64).powi(2), epsilon = 1e-15);
    }

    #[test]
    fn averaging_errors() {
        assert!(matches!(model_average(&[1.0], &[0.1, 0.2], &[1.0]), Err(Error::LengthMismatch(_))));
        assert!(matches!(model_average(&[1.0, 2.0], &[0.1, 0.2], &[0.7, 0.7]), Err(Error::InvalidWeights)));
        assert!(matches!(model_average(&[1.0, 2.0], &[0.1, 0.2], &[1.5, -0.5]), Err(Error::InvalidWeights)));
    }
}
