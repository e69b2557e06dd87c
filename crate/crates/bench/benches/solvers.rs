use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cnsm_core::eval::{scenario_split, SplitSpec};
use cnsm_core::ingest::{generate_trace, GeneratorConfig};
use cnsm_core::models::{
    coordinate_descent, grow_tree, search_combined_weights, train_gbt, train_lasso, train_random_forest, Columns,
    Design, ForestConfig, GbtConfig, LinearConfig, TreeParams,
};
use cnsm_core::pipeline::{build_features, preprocess_table, FeatureConfig, PreprocessConfig};
use cnsm_core::FeatureMatrix;

/// Expanded train/validation matrices from a small synthetic trace.
fn matrices() -> (FeatureMatrix, FeatureMatrix) {
    let trace = generate_trace(&GeneratorConfig::standard(7, 400)).unwrap();
    let clean = preprocess_table(&trace.observed, &PreprocessConfig::default()).unwrap();
    let split = scenario_split(&clean.table, &SplitSpec::default()).unwrap();
    let (_, xt, xv) = build_features(&split.train, &split.validation, &FeatureConfig::default()).unwrap();
    (xt, xv)
}

fn linear(c: &mut Criterion) {
    let (xt, _) = matrices();
    let design = Design::new(&xt, true).unwrap();
    let l1 = 0.01 * design.lambda_max();
    c.bench_function("design_gram", |b| b.iter(|| Design::new(&xt, true).unwrap()));
    c.bench_function("cd_lasso", |b| b.iter(|| coordinate_descent(&design, l1, 0.0, 1e-8, 100_000, None).unwrap()));
    c.bench_function("cd_enet", |b| b.iter(|| coordinate_descent(&design, l1, 0.5 * l1, 1e-8, 100_000, None).unwrap()));
    c.bench_function("lasso_path", |b| b.iter(|| train_lasso(&xt, &LinearConfig::default(), None).unwrap()));
}

fn trees(c: &mut Criterion) {
    let (xt, _) = matrices();
    let cols = Columns::new(&xt, &xt.target);
    let params = TreeParams { max_depth: None, min_leaf: 5, mtry: None };
    c.bench_function("grow_tree", |b| {
        b.iter_batched(
            || (0..xt.rows).collect::<Vec<_>>(),
            |rows| grow_tree(&cols, &xt.target, rows, &params, &mut ChaCha8Rng::seed_from_u64(1)),
            BatchSize::SmallInput,
        )
    });
    let mut g = c.benchmark_group("ensembles");
    g.sample_size(10);
    g.bench_function("forest_20", |b| {
        b.iter(|| train_random_forest(&xt, &ForestConfig { tree_count: 20, ..ForestConfig::default() }, 3).unwrap())
    });
    g.bench_function("gbt_50", |b| b.iter(|| train_gbt(&xt, &GbtConfig { tree_count: 50, ..GbtConfig::default() }).unwrap()));
    g.finish();
}

fn weights(c: &mut Criterion) {
    let (xt, xv) = matrices();
    let lasso = train_lasso(&xt, &LinearConfig::default(), None).unwrap();
    let forest = train_random_forest(&xt, &ForestConfig { tree_count: 10, ..ForestConfig::default() }, 3).unwrap();
    let gbt = train_gbt(&xt, &GbtConfig { tree_count: 30, ..GbtConfig::default() }).unwrap();
    let preds: Vec<Vec<f64>> = vec![
        (0..xv.rows).map(|i| lasso.predict_row(xv.row(i))).collect(),
        (0..xv.rows).map(|i| 0.5 * (lasso.predict_row(xv.row(i)) + gbt.predict_row(xv.row(i)))).collect(),
        (0..xv.rows).map(|i| forest.predict_row(xv.row(i))).collect(),
        (0..xv.rows).map(|i| gbt.predict_row(xv.row(i))).collect(),
    ];
    let mut g = c.benchmark_group("weight_search");
    g.sample_size(10);
    for step in [1u32, 5] {
        g.bench_function(format!("step_{step}"), |b| b.iter(|| search_combined_weights(&preds, &xv.target, step).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, linear, trees, weights);
criterion_main!(benches);
