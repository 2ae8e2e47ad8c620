//! Rayon pool against a one-thread pool on the two data-parallel hot paths:
//! drawing imputations and fitting the submodel-by-imputation grid.
//! Build with `--no-default-features` to bench the sequential fallback,
//! where both variants run the plain iterator code.

use criterion::{criterion_group, criterion_main, Criterion};
use nonresp_core::averaging::{block_average, MaOrder};
use nonresp_core::design::DesignSpec;
use nonresp_core::impute::{multiple_impute, ImputeOptions};
use nonresp_core::patterns::{assemble_grand_design, detect_patterns, GrandDesign};
use nonresp_core::simulate::{generate, SimConfig};
use nonresp_core::tabular::Dataset;

const M: usize = 8;

fn setup() -> (Dataset, ImputeOptions, Vec<GrandDesign>) {
    let (_, masked, _) = generate(&SimConfig::default()).unwrap();
    let eligible = masked.eligible("thinc2").unwrap();
    let spec = DesignSpec::from_dataset(&eligible).unwrap();
    let mut patterns = detect_patterns(&eligible, &eligible.schema().groups).unwrap();
    patterns.merge_small(spec.k() + 1);
    let options = ImputeOptions {
        outcome: Some("thinc2".into()),
        ..ImputeOptions::default()
    };
    let set = multiple_impute(&eligible, M, 1, &options).unwrap();
    let designs = set
        .completed
        .iter()
        .map(|d| assemble_grand_design(d, &patterns, &spec, "thinc2").unwrap())
        .collect();
    (eligible, options, designs)
}

fn bench(c: &mut Criterion) {
    let (data, options, designs) = setup();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let label = if nonresp_core::par::is_parallel() { "rayon" } else { "fallback" };

    let mut g = c.benchmark_group("multiple_impute");
    g.sample_size(10);
    g.bench_function(format!("{label}/pool"), |b| b.iter(|| multiple_impute(&data, M, 1, &options).unwrap()));
    g.bench_function(format!("{label}/one-thread"), |b| {
        b.iter(|| single.install(|| multiple_impute(&data, M, 1, &options).unwrap()))
    });
    g.finish();

    let mut g = c.benchmark_group("block_average");
    g.sample_size(10);
    g.bench_function(format!("{label}/pool"), |b| b.iter(|| block_average(&designs, None, MaOrder::PoolFirst).unwrap()));
    g.bench_function(format!("{label}/one-thread"), |b| {
        b.iter(|| single.install(|| block_average(&designs, None, MaOrder::PoolFirst).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
