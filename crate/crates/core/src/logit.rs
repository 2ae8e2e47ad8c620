//! Binary logit maximum likelihood via IRLS, information criteria,
//! sandwich covariances, and average marginal effects of a binary regressor.

use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Two-sided p-value thresholds for `*` and `**`.
pub const STAR_ONE: f64 = 0.05;
pub const STAR_TWO: f64 = 0.01;

/// Logistic cdf, evaluated without overflow.
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(eta))` without overflow.
pub fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn bernoulli_log_density(y: f64, eta: f64) -> f64 {
    // y*eta - ln(1+e^eta), split so that infinite eta never yields inf - inf.
    let mut ll = 0.0;
    if y != 0.0 {
        ll -= y * log1p_exp(-eta);
    }
    if y != 1.0 {
        ll -= (1.0 - y) * log1p_exp(eta);
    }
    ll
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub score_tolerance: f64,
    pub relative_ll_tolerance: f64,
    /// Largest admissible |beta_j| * sd(x_j) before declaring separation.
    pub separation_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 100,
            score_tolerance: 1e-8,
            relative_ll_tolerance: 1e-12,
            separation_threshold: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: DVector<f64>,
    /// Covariance used for inference: inverse information, or the cluster
    /// sandwich when clusters were supplied.
    pub cov: DMatrix<f64>,
    /// Inverse of the Fisher information at `beta`.
    pub inv_information: DMatrix<f64>,
    pub log_likelihood: f64,
    pub n: usize,
    pub k: usize,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn se(&self, j: usize) -> f64 {
        self.cov[(j, j)].max(0.0).sqrt()
    }

    pub fn information_criteria(&self) -> (f64, f64) {
        information_criteria(self.log_likelihood, self.k, self.n)
    }
}

/// `(aic, bic)` for a fit with `k` parameters on `n` rows.
pub fn information_criteria(log_likelihood: f64, k: usize, n: usize) -> (f64, f64) {
    let base = -2.0 * log_likelihood;
    (base + 2.0 * k as f64, base + k as f64 * (n as f64).ln())
}

pub fn log_likelihood(beta: &DVector<f64>, y: &[f64], x: &DMatrix<f64>) -> Result<f64> {
    if x.ncols() != beta.len() || x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "X is {}x{}, beta has {}, y has {}",
            x.nrows(),
            x.ncols(),
            beta.len(),
            y.len()
        )));
    }
    let eta = x * beta;
    Ok(y.iter().zip(eta.iter()).map(|(&yi, &e)| bernoulli_log_density(yi, e)).sum())
}

/// Numerical rank of `x` after scaling every column to unit norm.
pub fn column_rank(x: &DMatrix<f64>) -> usize {
    let k = x.ncols();
    if k == 0 {
        return 0;
    }
    let mut scaled = x.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let gram = scaled.transpose() * &scaled;
    let eig = gram.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return 0;
    }
    eig.iter().filter(|&&v| v > max * 1e-13).count()
}

fn column_scales(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

struct Iterate {
    score: DVector<f64>,
    information: DMatrix<f64>,
}

fn score_and_information(beta: &DVector<f64>, y: &[f64], x: &DMatrix<f64>) -> Iterate {
    let eta = x * beta;
    let n = x.nrows();
    let mut resid = DVector::zeros(n);
    let mut weighted = x.clone();
    for i in 0..n {
        let p = logistic(eta[i]);
        resid[i] = y[i] - p;
        let sw = (p * (1.0 - p)).sqrt();
        weighted.row_mut(i).scale_mut(sw);
    }
    Iterate {
        score: x.tr_mul(&resid),
        information: weighted.tr_mul(&weighted),
    }
}

fn invert_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = m.clone().cholesky()?.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Logit MLE; `cluster` switches the reported covariance to the cluster sandwich.
pub fn fit_logit(y: &[f64], x: &DMatrix<f64>, cluster: Option<&[usize]>) -> Result<FitResult> {
    let mut fit = fit_logit_with(y, x, &FitOptions::default())?;
    if let Some(ids) = cluster {
        fit.cov = cluster_robust_cov(&fit, y, x, ids)?;
    }
    Ok(fit)
}

pub fn fit_logit_with(y: &[f64], x: &DMatrix<f64>, opts: &FitOptions) -> Result<FitResult> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("y has {}, X has {n} rows", y.len())));
    }
    if n < k {
        return Err(Error::DimensionMismatch(format!("need n >= k, got n={n}, k={k}")));
    }
    if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::DimensionMismatch(format!("y[{i}] = {} is not 0/1", y[i])));
    }
    let rank = column_rank(x);
    if rank < k {
        return Err(Error::RankDeficient { rank, cols: k });
    }
    let scales = column_scales(x);

    let mut beta = DVector::zeros(k);
    let mut ll = log_likelihood(&beta, y, x)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut state = score_and_information(&beta, y, x);

    while iterations < opts.max_iterations {
        if max_abs(&state.score) < opts.score_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let step = match state.information.clone().cholesky() {
            Some(ch) => ch.solve(&state.score),
            None => {
                let index = diverging_index(&beta, &scales).unwrap_or(0);
                return Err(Error::PerfectSeparation { index });
            }
        };
        let mut t = 1.0;
        let mut candidate = &beta + &step * t;
        let mut ll_new = log_likelihood(&candidate, y, x)?;
        let mut halvings = 0;
        while !(ll_new >= ll - 1e-12 * ll.abs()) && halvings < 50 {
            t *= 0.5;
            candidate = &beta + &step * t;
            ll_new = log_likelihood(&candidate, y, x)?;
            halvings += 1;
        }
        beta = candidate;
        if let Some(index) = beta
            .iter()
            .zip(&scales)
            .position(|(b, s)| (b * s).abs() > opts.separation_threshold)
        {
            return Err(Error::PerfectSeparation { index });
        }
        if ll_new > -1e-9 * n as f64 {
            // every fitted probability is (numerically) 0 or 1
            let index = diverging_index(&beta, &scales).unwrap_or(0);
            return Err(Error::PerfectSeparation { index });
        }
        let rel = (ll_new - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        ll = ll_new;
        state = score_and_information(&beta, y, x);
        if rel < opts.relative_ll_tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        if max_abs(&state.score) < opts.score_tolerance {
            converged = true;
        } else {
            return Err(Error::NotConverged(opts.max_iterations));
        }
    }
    let eta = x * &beta;
    if y.iter().zip(eta.iter()).all(|(yi, e)| (yi - logistic(*e)).abs() < 1e-6) {
        // every fitted probability is (numerically) equal to its outcome
        let index = diverging_index(&beta, &scales).unwrap_or(0);
        return Err(Error::PerfectSeparation { index });
    }
    let inv_information = invert_spd(&state.information).ok_or(Error::RankDeficient {
        rank: column_rank(x),
        cols: k,
    })?;
    let (aic, bic) = information_criteria(ll, k, n);
    Ok(FitResult {
        beta,
        cov: inv_information.clone(),
        inv_information,
        log_likelihood: ll,
        n,
        k,
        aic,
        bic,
        converged,
        iterations,
    })
}

fn diverging_index(beta: &DVector<f64>, scales: &[f64]) -> Option<usize> {
    beta.iter()
        .zip(scales)
        .enumerate()
        .max_by(|a, b| (a.1 .0 * a.1 .1).abs().total_cmp(&(b.1 .0 * b.1 .1).abs()))
        .map(|(i, _)| i)
}

fn row_scores(fit: &FitResult, y: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != y.len() || x.ncols() != fit.beta.len() {
        return Err(Error::DimensionMismatch("design does not match fit".into()));
    }
    let eta = x * &fit.beta;
    let mut scores = x.clone();
    for i in 0..x.nrows() {
        scores.row_mut(i).scale_mut(y[i] - logistic(eta[i]));
    }
    Ok(scores)
}

fn sandwich(bread: &DMatrix<f64>, meat: &DMatrix<f64>, factor: f64) -> DMatrix<f64> {
    let v = bread * meat * bread * factor;
    (&v + v.transpose()) * 0.5
}

/// Heteroskedasticity-robust sandwich with the `n/(n-k)` correction.
pub fn robust_cov(fit: &FitResult, y: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scores = row_scores(fit, y, x)?;
    let meat = scores.tr_mul(&scores);
    let (n, k) = (fit.n as f64, fit.k as f64);
    Ok(sandwich(&fit.inv_information, &meat, n / (n - k)))
}

/// Cluster sandwich `A⁻¹BA⁻¹` scaled by `G/(G-1) · (n-1)/(n-k)`.
pub fn cluster_robust_cov<C: Hash + Eq>(
    fit: &FitResult,
    y: &[f64],
    x: &DMatrix<f64>,
    cluster: &[C],
) -> Result<DMatrix<f64>> {
    if cluster.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} cluster ids for {} rows",
            cluster.len(),
            x.nrows()
        )));
    }
    let scores = row_scores(fit, y, x)?;
    let mut slot: HashMap<&C, usize> = HashMap::new();
    for c in cluster {
        let next = slot.len();
        slot.entry(c).or_insert(next);
    }
    let g = slot.len();
    if g < 2 {
        return Err(Error::TooFewClusters(g));
    }
    let mut sums = DMatrix::zeros(g, x.ncols());
    for (i, c) in cluster.iter().enumerate() {
        let mut row = sums.row_mut(slot[c]);
        row += scores.row(i);
    }
    let meat = sums.tr_mul(&sums);
    let (n, k, gf) = (fit.n as f64, fit.k as f64, g as f64);
    let factor = gf / (gf - 1.0) * (n - 1.0) / (n - k);
    Ok(sandwich(&fit.inv_information, &meat, factor))
}

/// Dense integer codes for arbitrary cluster labels, in order of appearance.
pub fn cluster_codes<S: AsRef<str>>(labels: &[S]) -> Vec<usize> {
    let mut map: HashMap<&str, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(l.as_ref()).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stars {
    #[default]
    None,
    One,
    Two,
}

impl Stars {
    pub fn from_p(p: f64) -> Self {
        if p < STAR_TWO {
            Stars::Two
        } else if p < STAR_ONE {
            Stars::One
        } else {
            Stars::None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stars::None => "",
            Stars::One => "*",
            Stars::Two => "**",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "" => Some(Stars::None),
            "*" => Some(Stars::One),
            "**" => Some(Stars::Two),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmeResult {
    pub ame: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub stars: Stars,
}

impl AmeResult {
    /// Normal-theory inference for an estimate with standard error `se`.
    pub fn from_estimate(ame: f64, se: f64) -> Self {
        let z = if se > 0.0 { ame / se } else { 0.0 };
        let p = if se > 0.0 {
            erfc(z.abs() / std::f64::consts::SQRT_2)
        } else {
            1.0
        };
        AmeResult {
            ame,
            se,
            z,
            p,
            stars: Stars::from_p(p),
        }
    }
}

/// Design columns that move when the binary focus regressor switches 0 → 1.
///
/// `interactions` lists `(product, dummy)` column pairs where the product
/// column equals `focus × dummy`, as in pattern-interaction blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FocusTerm {
    pub column: usize,
    pub interactions: Vec<(usize, usize)>,
}

impl FocusTerm {
    pub fn plain(column: usize) -> Self {
        FocusTerm {
            column,
            interactions: Vec::new(),
        }
    }

    fn counterfactual(&self, row: &mut [f64], d: f64) {
        row[self.column] = d;
        for &(product, dummy) in &self.interactions {
            row[product] = d * row[dummy];
        }
    }
}

/// AME point estimate and its gradient with respect to `beta`.
pub fn ame_and_gradient(
    beta: &DVector<f64>,
    x: &DMatrix<f64>,
    focus: &FocusTerm,
) -> Result<(f64, DVector<f64>)> {
    let (n, k) = x.shape();
    if beta.len() != k || focus.column >= k {
        return Err(Error::DimensionMismatch("focus/beta do not match design".into()));
    }
    if n == 0 {
        return Err(Error::DimensionMismatch("empty evaluation set".into()));
    }
    if x.column(focus.column).iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::FocusNotBinary(focus.column));
    }
    let mut total = 0.0;
    let mut grad = DVector::zeros(k);
    let mut r1 = vec![0.0; k];
    let mut r0 = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            r1[j] = x[(i, j)];
        }
        r0.copy_from_slice(&r1);
        focus.counterfactual(&mut r1, 1.0);
        focus.counterfactual(&mut r0, 0.0);
        let e1: f64 = r1.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        let e0: f64 = r0.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        let (p1, p0) = (logistic(e1), logistic(e0));
        total += p1 - p0;
        let (d1, d0) = (p1 * (1.0 - p1), p0 * (1.0 - p0));
        for j in 0..k {
            grad[j] += d1 * r1[j] - d0 * r0[j];
        }
    }
    let nf = n as f64;
    Ok((total / nf, grad / nf))
}

/// AME with delta-method standard error under covariance `cov`.
pub fn ame_with(
    beta: &DVector<f64>,
    cov: &DMatrix<f64>,
    x: &DMatrix<f64>,
    focus: &FocusTerm,
) -> Result<AmeResult> {
    let (ame, grad) = ame_and_gradient(beta, x, focus)?;
    let var = (grad.transpose() * cov * &grad)[(0, 0)];
    Ok(AmeResult::from_estimate(ame, var.max(0.0).sqrt()))
}

/// AME of the binary regressor in column `focus`, averaged over the rows of `x`.
pub fn ame_binary(fit: &FitResult, focus: usize, x: &DMatrix<f64>) -> Result<AmeResult> {
    ame_with(&fit.beta, &fit.cov, x, &FocusTerm::plain(focus))
}
