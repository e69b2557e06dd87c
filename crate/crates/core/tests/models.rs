use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cnsm_core::kb::KnowledgeBase;
use cnsm_core::models::{
    coordinate_descent, search_combined_weights, train_elasticnet, train_gbt, train_lasso, train_random_forest,
    CombinedModel, Design, ForestConfig, GbtConfig, LinearConfig,
};
use cnsm_core::{FeatureMatrix, ModelArtifact, TrainedModel};

fn dataset(seed: u64, n: usize, p: usize) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random::<f64>()).collect()).collect();
    let y = rows
        .iter()
        .map(|r| (1.0 + 10.0 * r[0] + 4.0 * r[1] * r[1] - 3.0 * r[2 % p] + rng.random::<f64>()).clamp(1.0, 15.0))
        .collect();
    FeatureMatrix::new((0..p).map(|j| format!("f{j}")).collect(), rows, y).unwrap()
}

fn all_models(x: &FeatureMatrix) -> Vec<TrainedModel> {
    let lin = LinearConfig::default();
    let lasso = train_lasso(x, &lin, None).unwrap();
    let enet = train_elasticnet(x, &lin, None).unwrap();
    let forest = train_random_forest(x, &ForestConfig { tree_count: 10, ..ForestConfig::default() }, 1).unwrap();
    let gbt = train_gbt(x, &GbtConfig { tree_count: 20, ..GbtConfig::default() }).unwrap();
    let combined = CombinedModel::new(lasso.clone(), enet.clone(), forest.clone(), gbt.clone(), [10, 20, 30, 40]).unwrap();
    vec![
        TrainedModel::Lasso(lasso),
        TrainedModel::Elasticnet(enet),
        TrainedModel::Forest(forest),
        TrainedModel::Gbt(gbt),
        TrainedModel::Combined(Box::new(combined)),
    ]
}

#[test]
fn serialized_models_predict_identically() {
    let x = dataset(1, 120, 4);
    let probe = dataset(2, 10, 4);
    let dir = tempfile::tempdir().unwrap();
    let mut kb = KnowledgeBase::init(dir.path()).unwrap();
    for model in all_models(&x) {
        let art = ModelArtifact {
            id: format!("m-{}", model.kind().as_str()),
            feature_set_id: "fs".into(),
            feature_names: x.names.clone(),
            model,
        };
        let from_json = ModelArtifact::from_json(&art.to_json().unwrap()).unwrap();
        kb.put_model(&art, None).unwrap();
        let from_kb = KnowledgeBase::open(dir.path()).unwrap().get_model(&art.id).unwrap();
        for i in 0..probe.rows {
            let want = art.model.predict(probe.row(i)).unwrap();
            assert_eq!(from_json.model.predict(probe.row(i)).unwrap().to_bits(), want.to_bits());
            assert_eq!(from_kb.model.predict(probe.row(i)).unwrap().to_bits(), want.to_bits());
        }
    }
}

#[test]
fn vertex_weights_reproduce_components() {
    let x = dataset(3, 100, 3);
    let models = all_models(&x);
    let TrainedModel::Combined(c) = &models[4] else { unreachable!() };
    for (k, w) in [[100, 0, 0, 0], [0, 100, 0, 0], [0, 0, 100, 0], [0, 0, 0, 100]].into_iter().enumerate() {
        let mut v = (**c).clone();
        v.weights = w;
        for i in 0..x.rows {
            assert_eq!(v.predict_row(x.row(i)).to_bits(), models[k].predict(x.row(i)).unwrap().to_bits());
        }
    }
}

#[test]
fn linear_at_zero_vector_matches_raw_intercept() {
    let x = dataset(4, 80, 3);
    let m = train_lasso(&x, &LinearConfig::default(), None).unwrap();
    let (_, intercept) = m.raw_coefficients();
    assert!((m.predict_row(&[0.0, 0.0, 0.0]) - intercept).abs() < 1e-9);
}

#[test]
fn training_is_deterministic() {
    let x = dataset(5, 150, 5);
    let a: Vec<_> = all_models(&x).into_iter().map(|m| serde_json::to_string(&m).unwrap()).collect();
    let b: Vec<_> = all_models(&x).into_iter().map(|m| serde_json::to_string(&m).unwrap()).collect();
    assert_eq!(a, b);
}

#[test]
fn combined_validation_rmse_never_exceeds_best_single() {
    let train = dataset(6, 200, 4);
    let val = dataset(7, 60, 4);
    let models = all_models(&train);
    let preds: Vec<Vec<f64>> = models[..4].iter().map(|m| m.predict_matrix(&val).unwrap()).collect();
    let s = search_combined_weights(&preds, &val.target, 1).unwrap();
    assert_eq!(s.weights.iter().sum::<u32>(), 100);
    for p in &preds {
        assert!(s.rmse <= cnsm_core::eval::rmse(&val.target, p).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_nonincreasing_across_sweeps(seed in 0u64..1000, l1 in 0.0f64..0.5, l2 in 0.0f64..1.0) {
        let x = dataset(seed, 60, 6);
        let d = Design::new(&x, true).unwrap();
        let fit = coordinate_descent(&d, l1 * d.lambda_max(), l2, 1e-9, 100_000, None).unwrap();
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
    }

    /// Splits depend only on the order of feature values, so any strictly
    /// increasing re-encoding of a column leaves fitted values unchanged.
    /// Bootstrap is off so that every probed row was seen by every tree; an
    /// out-of-bag row may land on either side of a midpoint threshold.
    #[test]
    fn trees_ignore_monotone_reencoding(seed in 0u64..1000, col in 0usize..3, scale in 0.1f64..10.0) {
        let x = dataset(seed, 60, 3);
        let mut rows: Vec<Vec<f64>> = (0..x.rows).map(|i| x.row(i).to_vec()).collect();
        for r in &mut rows {
            r[col] = (scale * r[col]).exp() + r[col].powi(3);
        }
        let y = FeatureMatrix::new(x.names.clone(), rows, x.target.clone()).unwrap();
        let fcfg = ForestConfig { tree_count: 5, bootstrap: false, ..ForestConfig::default() };
        let gcfg = GbtConfig { tree_count: 10, ..GbtConfig::default() };
        let (fa, fb) = (train_random_forest(&x, &fcfg, seed).unwrap(), train_random_forest(&y, &fcfg, seed).unwrap());
        let (ga, gb) = (train_gbt(&x, &gcfg).unwrap(), train_gbt(&y, &gcfg).unwrap());
        for i in 0..x.rows {
            prop_assert_eq!(fa.predict_row(x.row(i)), fb.predict_row(y.row(i)));
            prop_assert_eq!(ga.predict_row(x.row(i)), gb.predict_row(y.row(i)));
        }
    }
}
