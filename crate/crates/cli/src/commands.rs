use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{info, warn};
use nonresp_core::averaging::Criterion;
use nonresp_core::design::DesignSpec;
use nonresp_core::impute::{multiple_impute, ImputeOptions};
use nonresp_core::logit::AmeResult;
use nonresp_core::patterns::detect_patterns;
use nonresp_core::pipeline::{analyse, EstimationOptions, Method, OutcomeAnalysis};
use nonresp_core::report::{
    emit_histogram, format_ame_table, interviewer_values, order_countries, order_outcomes, participation_table,
    response_rate_table,
};
use nonresp_core::rng::derive_seed;
use nonresp_core::simulate::{generate, monte_carlo, McOptions, SimConfig};
use nonresp_core::tabular::{country_split, read_csv, Dataset, Schema};
use nonresp_core::{Error, Result};

use crate::artifacts::{Artifacts, Manifest};
use crate::{
    AmeArgs, AverageArgs, Command, DataArgs, EstimationArgs, FitArgs, ImputationArgs, ImputeArgs, MonteCarloArgs,
    ReportArgs, SimulateArgs,
};

/// Scope label used when the sample is not split by country.
const POOLED_SCOPE: &str = "ALL";

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Impute(a) => impute(a),
        Command::Fit(a) => fit(a),
        Command::Average(a) => average(a),
        Command::Ame(a) => ame(a),
        Command::Montecarlo(a) => montecarlo(a),
        Command::Report(a) => report(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_data(args: &DataArgs, manifest: &mut Manifest) -> Result<Dataset> {
    let schema_text = read_text(&args.schema)?;
    let schema = Schema::from_toml_str(&schema_text)?;
    let data_text = read_text(&args.data)?;
    let dataset = read_csv(data_text.as_bytes(), &schema)?;
    manifest.input("schema", &schema_text);
    manifest.input("data", &data_text);
    manifest.setting("rows", dataset.n_rows() as i64);
    Ok(dataset)
}

fn record_imputation(args: &ImputationArgs, manifest: &mut Manifest) {
    manifest.setting("m", args.m as i64);
    manifest.setting("burn_in", args.burn_in as i64);
    if let Some(seed) = args.seed {
        manifest.setting("seed", seed.to_string());
    }
    if let Some(k) = args.donor_neighbours {
        manifest.setting("donor_neighbours", k as i64);
    }
}

fn impute_options(args: &ImputationArgs) -> ImputeOptions {
    ImputeOptions {
        burn_in: args.burn_in,
        donor_neighbours: args.donor_neighbours,
        ..ImputeOptions::default()
    }
}

fn require_seed(args: &ImputationArgs) -> Result<u64> {
    args.seed
        .ok_or_else(|| Error::Config("stochastic steps need an explicit --seed".into()))
}

/// Outcomes to analyse, validated against the schema, in table order.
fn outcomes(dataset: &Dataset, requested: &[String]) -> Result<Vec<String>> {
    let declared = &dataset.schema().roles.outcomes;
    if requested.is_empty() {
        return Ok(order_outcomes(declared.iter().map(String::as_str)));
    }
    for o in requested {
        if !declared.contains(o) {
            return Err(Error::Config(format!("`{o}` is not an outcome of the schema")));
        }
    }
    Ok(order_outcomes(requested.iter().map(String::as_str)))
}

/// `(scope, subset)` pairs: the pooled sample, or one per country in table order.
fn scopes(dataset: &Dataset, by_country: bool) -> Vec<(String, Dataset)> {
    if !by_country {
        return vec![(POOLED_SCOPE.to_string(), dataset.clone())];
    }
    let mut split = country_split(dataset);
    let order = order_countries(split.iter().map(|(c, _)| c.as_str()));
    split.sort_by_key(|(c, _)| order.iter().position(|o| o == c));
    split
}

/// Runs `methods` for every scope and outcome. Shared-step failures abort.
fn run_analyses(
    dataset: &Dataset,
    methods: &[Method],
    args: &EstimationArgs,
    manifest: &mut Manifest,
) -> Result<Vec<(String, OutcomeAnalysis)>> {
    let needs_seed = methods.iter().any(|m| m.needs_imputation());
    let seed = if needs_seed { require_seed(&args.imputation)? } else { 0 };
    let outcomes = outcomes(dataset, &args.outcomes)?;
    record_imputation(&args.imputation, manifest);
    manifest.setting("methods", methods.iter().map(|m| m.name()).collect::<Vec<_>>());
    manifest.setting("outcomes", outcomes.clone());
    manifest.setting("by_country", args.by_country);
    manifest.setting("cluster_se", args.cluster_se);
    let order: nonresp_core::averaging::MaOrder = args.ma_order.into();
    manifest.setting("ma_order", order.name());

    let mut out = Vec::new();
    for (scope, subset) in scopes(dataset, args.by_country) {
        for outcome in &outcomes {
            let opts = EstimationOptions {
                m: args.imputation.m,
                seed: derive_seed(seed, &format!("analysis/{scope}/{outcome}"), 0),
                cluster_se: args.cluster_se,
                ma_order: order,
                impute: impute_options(&args.imputation),
            };
            info!("analysing {outcome} in {scope}");
            let analysis = analyse(&subset, outcome, methods, &opts).map_err(|e| {
                warn!("{scope}/{outcome}: {e}");
                e
            })?;
            out.push((scope.clone(), analysis));
        }
    }
    Ok(out)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut manifest = Manifest::new("simulate");
    let mut config = match &args.config {
        Some(path) => {
            let text = read_text(path)?;
            manifest.input("config", &text);
            SimConfig::from_toml_str(&text)?
        }
        None => SimConfig::default(),
    };
    config.seed = args.seed;
    config.validate()?;
    manifest.setting("seed", args.seed.to_string());
    let (complete, masked, truth) = generate(&config)?;
    manifest.setting("rows", masked.n_rows() as i64);
    let mut files = Artifacts::default();
    files.add("data.csv", masked.to_csv_string());
    files.add("complete.csv", complete.to_csv_string());
    files.add("schema.toml", config.schema().to_toml_string());
    files.add("truth.toml", truth.to_toml_string());
    files.add("config.toml", config.to_toml_string());
    files.write(&args.out.out, manifest)
}

fn impute(args: ImputeArgs) -> Result<()> {
    let mut manifest = Manifest::new("impute");
    let dataset = load_data(&args.data, &mut manifest)?;
    let seed = require_seed(&args.imputation)?;
    record_imputation(&args.imputation, &mut manifest);
    let mut options = impute_options(&args.imputation);
    let dataset = match &args.outcome {
        Some(o) => {
            outcomes(&dataset, std::slice::from_ref(o))?;
            manifest.setting("outcome", o.clone());
            options.outcome = Some(o.clone());
            dataset.eligible(o)?
        }
        None => dataset,
    };
    let spec = DesignSpec::from_dataset(&dataset)?;
    let mut patterns = detect_patterns(&dataset, &dataset.schema().groups)?;
    for merge in patterns.merge_small(spec.k() + 1) {
        info!("merged small pattern: {merge:?}");
    }
    let set = multiple_impute(&dataset, args.imputation.m, seed, &options)?;
    let mut files = Artifacts::default();
    for (name, body) in set.artifacts() {
        files.add(format!("imputations/{name}"), body);
    }
    files.add("patterns.csv", patterns.summary_csv());
    files.write(&args.out.out, manifest)
}

fn fmt_f(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "inf".into()
    }
}

fn fit(args: FitArgs) -> Result<()> {
    let mut manifest = Manifest::new("fit");
    let dataset = load_data(&args.data, &mut manifest)?;
    let mut methods: Vec<Method> = args.methods.iter().map(|&m| m.into()).collect();
    methods.sort();
    methods.dedup();
    let analyses = run_analyses(&dataset, &methods, &args.estimation, &mut manifest)?;

    let mut csv = String::from("country,outcome,method,status,n,coefficient,coefficient_se,ame,ame_se,z,p,stars,df,fmi\n");
    let mut files = Artifacts::default();
    let mut first_error = None;
    let mut successes = 0;
    for (scope, a) in &analyses {
        files.add(format!("patterns/{scope}_{}.csv", a.outcome), a.patterns.summary_csv());
        for (method, r) in &a.estimates {
            match r {
                Ok(e) => {
                    successes += 1;
                    writeln!(
                        csv,
                        "{scope},{},{},ok,{},{},{},{},{},{},{},{},{},{}",
                        a.outcome,
                        method.name(),
                        e.n,
                        e.coefficient,
                        e.coefficient_se,
                        e.ame.ame,
                        e.ame.se,
                        e.ame.z,
                        e.ame.p,
                        e.ame.stars.as_str(),
                        fmt_f(e.df),
                        e.fmi.map(|f| f.to_string()).unwrap_or_default()
                    )
                    .unwrap();
                }
                Err(err) => {
                    warn!("{scope}/{}/{}: {err}", a.outcome, method.name());
                    writeln!(csv, "{scope},{},{},{},,,,,,,,,,", a.outcome, method.name(), err.code()).unwrap();
                    first_error.get_or_insert_with(|| err.duplicate());
                }
            }
        }
    }
    if successes == 0 {
        if let Some(e) = first_error {
            return Err(e);
        }
    }
    files.add("estimates.csv", csv);
    files.write(&args.out.out, manifest)
}

fn average(args: AverageArgs) -> Result<()> {
    let mut manifest = Manifest::new("average");
    let dataset = load_data(&args.data, &mut manifest)?;
    let methods = [Method::BbmaBic, Method::BbmaAic];
    let analyses = run_analyses(&dataset, &methods, &args.estimation, &mut manifest)?;

    let mut files = Artifacts::default();
    let mut csv =
        String::from("country,outcome,criterion,order,submodels,dropped,coefficient,coefficient_se,ame,ame_se\n");
    for (scope, a) in &analyses {
        let avg = match &a.averaging {
            Some(avg) => avg,
            None => {
                // both criteria carry the same failure
                let err = a.estimates.iter().find_map(|(_, r)| r.as_ref().err());
                return Err(err.map(Error::duplicate).unwrap_or_else(|| Error::Config("no averaging result".into())));
            }
        };
        files.add(format!("submodels/{scope}_{}.csv", a.outcome), avg.diagnostics_csv());
        for (label, crit) in [("bic", Criterion::Bic), ("aic", Criterion::Aic)] {
            let (b, bse) = avg.coefficient(crit);
            let (m, mse) = avg.ame(crit);
            writeln!(
                csv,
                "{scope},{},{label},{},{},{},{b},{bse},{m},{mse}",
                a.outcome,
                avg.order.name(),
                avg.submodels.len(),
                avg.dropped.len()
            )
            .unwrap();
        }
        for (id, reason) in &avg.dropped {
            warn!("{scope}/{}: submodel {} dropped: {reason}", a.outcome, id.label());
        }
    }
    files.add("averaged.csv", csv);
    files.write(&args.out.out, manifest)
}

fn ame(args: AmeArgs) -> Result<()> {
    let mut manifest = Manifest::new("ame");
    let dataset = load_data(&args.data, &mut manifest)?;
    let method: Method = args.method.into();
    let analyses = run_analyses(&dataset, &[method], &args.estimation, &mut manifest)?;

    let mut cells: Vec<(String, String, AmeResult)> = Vec::new();
    let mut first_error = None;
    for (scope, a) in &analyses {
        match a.estimate(method) {
            Some(Ok(e)) => cells.push((scope.clone(), a.outcome.clone(), e.ame.clone())),
            Some(Err(err)) => {
                warn!("{scope}/{}: cell left empty: {err}", a.outcome);
                first_error.get_or_insert_with(|| err.duplicate());
            }
            None => {}
        }
    }
    if cells.is_empty() {
        if let Some(e) = first_error {
            return Err(e);
        }
    }
    let caption = format!("Average marginal effect of {} ({})", dataset.schema().roles.focus, method.caption());
    let (text, csv) = format_ame_table(&cells, &caption);
    let mut files = Artifacts::default();
    files.add("ame_table.txt", text);
    files.add("ame_table.csv", csv);
    files.write(&args.out.out, manifest)
}

fn montecarlo(args: MonteCarloArgs) -> Result<()> {
    let mut manifest = Manifest::new("montecarlo");
    let mut config = match &args.config {
        Some(path) => {
            let text = read_text(path)?;
            manifest.input("config", &text);
            SimConfig::from_toml_str(&text)?
        }
        None => SimConfig::default(),
    };
    // the run seed replaces the config seed; replications derive from it
    config.seed = require_seed(&args.imputation)?;
    record_imputation(&args.imputation, &mut manifest);
    manifest.setting("seed", config.seed.to_string());
    manifest.setting("replications", args.replications as i64);
    manifest.setting("level", args.level);
    manifest.setting("cluster_se", args.cluster_se);
    let mut methods: Vec<Method> = if args.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        args.methods.iter().map(|&m| m.into()).collect()
    };
    methods.sort();
    methods.dedup();
    manifest.setting("methods", methods.iter().map(|m| m.name()).collect::<Vec<_>>());
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(Error::Config(format!("level must lie in (0, 1), got {}", args.level)));
    }
    let order: nonresp_core::averaging::MaOrder = args.ma_order.into();
    manifest.setting("ma_order", order.name());
    let opts = McOptions {
        estimation: EstimationOptions {
            m: args.imputation.m,
            seed: config.seed,
            cluster_se: args.cluster_se,
            ma_order: order,
            impute: impute_options(&args.imputation),
        },
        outcome: None,
        level: args.level,
        methods,
    };
    let report = monte_carlo(&config, args.replications, &opts)?;
    for (rep, code) in &report.failures {
        warn!("replication {rep} failed: {code}");
    }
    let mut files = Artifacts::default();
    files.add("records.csv", report.records_csv());
    files.add("summary.csv", report.summary_csv());
    files.add("summary.txt", report.summary_text());
    files.add("config.toml", config.to_toml_string());
    files.write(&args.out.out, manifest)
}

fn report(args: ReportArgs) -> Result<()> {
    let mut manifest = Manifest::new("report");
    let dataset = load_data(&args.data, &mut manifest)?;
    let participation = args
        .participation
        .clone()
        .unwrap_or_else(|| dataset.schema().roles.focus.clone());
    manifest.setting("participation", participation.clone());
    let mut files = Artifacts::default();
    let (rr, _) = response_rate_table(&dataset)?;
    files.add("response_rates.csv", rr);
    let (pr, _) = participation_table(&dataset, &participation)?;
    files.add("participation.csv", pr);
    if let Some(col) = &args.expectation {
        manifest.setting("expectation", col.clone());
        manifest.setting("bin_width", args.bin_width);
        let values = interviewer_values(&dataset, col)?;
        files.add("histogram.csv", emit_histogram(&values, args.bin_width)?);
    }
    files.write(&args.out.out, manifest)
}
