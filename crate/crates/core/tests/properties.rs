//! Property tests and statistical sanity checks across modules.

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use overflow_probe::complexity::compressibility;
use overflow_probe::evaluation::folds::split_fold;
use overflow_probe::evaluation::{roc_auc, run_experiment, stratified_folds, ExperimentConfig, FeatureSet, Stage};
use overflow_probe::labeling::{overflow_label, overflow_label_threshold};
use overflow_probe::probes::logistic::fit_logistic;
use overflow_probe::probes::{Architecture, ProbeConfig};
use overflow_probe::synthetic::{generate_instances, SynthConfig};

fn labeled_scores(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (4..max).prop_flat_map(|n| {
        (
            prop::collection::vec((0i32..20).prop_map(|v| v as f64 / 4.0), n),
            prop::collection::vec(0u8..=1, n),
        )
            .prop_map(|(s, mut y)| {
                y[0] = 0;
                y[1] = 1;
                (s, y)
            })
    })
}

fn brute(s: &[f64], y: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                den += 1.0;
                num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

fn corpus() -> impl Strategy<Value = Vec<u8>> {
    let words = prop::sample::select(vec!["the", "cat", "sat", "on", "a", "mat", "river", "bank", "of", "stone", "quietly"]);
    prop::collection::vec(words, 3..400).prop_map(|w| w.join(" ").into_bytes())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_matches_pair_counting((s, y) in labeled_scores(120)) {
        prop_assert!((roc_auc(&s, &y).unwrap() - brute(&s, &y)).abs() <= 1e-12);
    }

    #[test]
    fn auc_ignores_increasing_transforms((s, y) in labeled_scores(120)) {
        let a = roc_auc(&s, &y).unwrap();
        let t: Vec<f64> = s.iter().map(|v| (v * 3.0).exp() - 7.0).collect();
        prop_assert_eq!(roc_auc(&t, &y).unwrap(), a);
    }

    #[test]
    fn auc_of_negated_scores_is_complementary(n in 4usize..150, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let mut y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
        y[0] = 0;
        y[1] = 1;
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((roc_auc(&s, &y).unwrap() + roc_auc(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn folds_partition_and_balance(n_pos in 5usize..60, n_neg in 5usize..60, k in 2usize..6, seed in any::<u64>()) {
        let mut y = vec![1u8; n_pos];
        y.extend(vec![0u8; n_neg]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..y.len()).rev() {
            y.swap(i, rng.gen_range(0..=i));
        }
        let a = stratified_folds(&y, k, seed).unwrap();
        let mut seen = vec![false; y.len()];
        let mut pos = vec![0usize; k];
        for f in 0..k {
            let (train, test) = split_fold(&a, f);
            prop_assert_eq!(train.len() + test.len(), y.len());
            for &i in &test {
                prop_assert!(!seen[i]);
                seen[i] = true;
                pos[f] += y[i] as usize;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        prop_assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
    }

    #[test]
    fn binary_labels_are_thresholded_labels(r: bool, c: bool, eps in 1e-12f64..=1.0) {
        prop_assert_eq!(
            overflow_label(r, c),
            overflow_label_threshold(f64::from(u8::from(r)), f64::from(u8::from(c)), eps)
        );
    }

    #[test]
    fn duplication_does_not_reduce_compressibility(text in corpus()) {
        let r = compressibility(&text).unwrap();
        let doubled = [text.as_slice(), text.as_slice()].concat();
        let r2 = compressibility(&doubled).unwrap();
        prop_assert!(r2 >= 0.95 * r, "{r2} < 0.95 * {r}");
        if text.len() >= 1024 {
            prop_assert!(r2 > r);
        }
    }

    #[test]
    fn compressibility_is_deterministic(text in corpus()) {
        prop_assert_eq!(compressibility(&text).unwrap(), compressibility(&text).unwrap());
    }
}

fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| rng.sample(rand_distr::StandardNormal))
}

#[test]
fn weaker_regularization_never_shrinks_the_weights() {
    let x = gaussian(300, 5, 1);
    let y: Vec<u8> = x.rows().into_iter().map(|r| u8::from(r[0] - 0.5 * r[3] > 0.0)).collect();
    let mut last = 0.0;
    for c in [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
        let fit = fit_logistic(x.view(), &y, c, 1000, 1e-10).unwrap();
        let norm = fit.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm >= last * (1.0 - 1e-9), "C = {c}: {norm} < {last}");
        last = norm;
    }
}

#[test]
fn random_labels_give_chance_auc() {
    let x = gaussian(600, 8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y: Vec<u8> = (0..600).map(|_| rng.gen_range(0..=1)).collect();
    let cfg = ExperimentConfig::new(Stage::PreInference, FeatureSet::Saturation, Architecture::Logistic, 7);
    let auc = run_experiment(x.view(), &y, &cfg, serde_json::Value::Null).unwrap().mean_auc;
    assert!((auc - 0.5).abs() <= 0.1, "{auc}");
}

#[test]
fn permuted_labels_give_chance_auc() {
    let mut cfg = SynthConfig::preset("paper-mini").unwrap();
    cfg.n_instances = 600;
    let inst = generate_instances(&cfg).unwrap();
    let keys = ["x_preproj", "x_postproj", "q_preproj", "q_postproj"];
    let rows: Vec<Vec<f64>> = inst
        .iter()
        .map(|s| {
            keys.iter()
                .flat_map(|k| s.reps.iter().find(|(n, _)| n == k).unwrap().1.iter().map(|&v| v as f64))
                .collect()
        })
        .collect();
    let x = Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j]);
    let mut y: Vec<u8> = inst.iter().map(|s| u8::from(s.overflow())).collect();
    let linear = ExperimentConfig::new(Stage::PreInference, FeatureSet::RepresentationJoint, Architecture::Linear, 7);
    let real = run_experiment(x.view(), &y, &linear, serde_json::Value::Null).unwrap().mean_auc;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in (1..y.len()).rev() {
        y.swap(i, rng.gen_range(0..=i));
    }
    let null = run_experiment(x.view(), &y, &linear, serde_json::Value::Null).unwrap().mean_auc;
    assert!((0.4..=0.6).contains(&null), "permuted {null}");
    assert!(real > null + 0.2, "real {real}, permuted {null}");
}

#[test]
fn probe_defaults_are_consistent_with_validation() {
    for a in Architecture::ALL {
        let c = ProbeConfig::for_architecture(a);
        c.validate().unwrap();
        assert_eq!(c.architecture.has_hidden(), c.net_spec(3).hidden_dim > 0);
    }
}
