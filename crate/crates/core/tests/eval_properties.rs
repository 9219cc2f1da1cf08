mod common;

use common::fixtures::synth_dump;
use proptest::prelude::*;
use woodpest::audio::ClipLabel;
use woodpest::eval::{
    comparative_report, confusion_from_predictions, crossval_run, kfold_indices, metrics_from_confusion,
    stratified_split, ConfusionMatrix,
};
use woodpest::models::{ModelKind, TrainConfig};
use woodpest::synth::SynthConfig;

fn label_vec() -> impl Strategy<Value = Vec<ClipLabel>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { ClipLabel::Infested } else { ClipLabel::Clean }), 1..200)
}

fn sorted_union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = a.iter().chain(b).copied().collect();
    v.sort_unstable();
    v
}

proptest! {
    #[test]
    fn split_is_a_partition(labels in label_vec(), seed in any::<u64>(), ratio in 0.05f64..0.95) {
        prop_assume!(ClipLabel::ALL.iter().all(|l| labels.contains(l)));
        let s = stratified_split(&labels, ratio, seed).unwrap();
        prop_assert_eq!(sorted_union(&s.train, &s.test), (0..labels.len()).collect::<Vec<_>>());
        for label in ClipLabel::ALL {
            let n = labels.iter().filter(|&&l| l == label).count();
            let want = ((n as f64 * ratio + 0.5).floor() as usize).clamp(1, n);
            prop_assert_eq!(s.test.iter().filter(|&&i| labels[i] == label).count(), want);
        }
        prop_assert_eq!(s, stratified_split(&labels, ratio, seed).unwrap());
    }

    #[test]
    fn folds_partition_and_stratify(labels in label_vec(), seed in any::<u64>(), k in 2usize..7) {
        let counts = ClipLabel::ALL.map(|l| labels.iter().filter(|&&x| x == l).count());
        prop_assume!(counts.iter().all(|&c| c >= k));
        let folds = kfold_indices(&labels, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all_tests: Vec<usize> = folds.iter().flat_map(|f| f.test.iter().copied()).collect();
        all_tests.sort_unstable();
        prop_assert_eq!(&all_tests, &(0..labels.len()).collect::<Vec<_>>());
        for f in &folds {
            prop_assert_eq!(sorted_union(&f.train, &f.test), (0..labels.len()).collect::<Vec<_>>());
            for (label, &n) in ClipLabel::ALL.iter().zip(&counts) {
                let c = f.test.iter().filter(|&&i| labels[i] == *label).count();
                prop_assert!(c == n / k || c == n / k + 1);
            }
        }
    }

    #[test]
    fn confusion_matches_counting_loop(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..300)) {
        let lab = |b: bool| if b { ClipLabel::Infested } else { ClipLabel::Clean };
        let truth: Vec<ClipLabel> = pairs.iter().map(|p| lab(p.0)).collect();
        let pred: Vec<ClipLabel> = pairs.iter().map(|p| lab(p.1)).collect();
        let m = confusion_from_predictions(&truth, &pred).unwrap();
        let mut want = [0usize; 4];
        for (t, p) in &pairs {
            want[match (t, p) { (true, true) => 0, (true, false) => 1, (false, true) => 2, (false, false) => 3 }] += 1;
        }
        prop_assert_eq!([m.tp, m.fn_, m.fp, m.tn], want);
        prop_assert_eq!(m.total(), pairs.len());
        let direct = pairs.iter().filter(|(t, p)| t == p).count() as f64 / pairs.len() as f64;
        prop_assert_eq!(metrics_from_confusion(&m).unwrap().accuracy, direct);
    }

    #[test]
    fn self_prediction_scores_one(labels in label_vec()) {
        prop_assume!(ClipLabel::ALL.iter().all(|l| labels.contains(l)));
        let r = metrics_from_confusion(&confusion_from_predictions(&labels, &labels).unwrap()).unwrap();
        prop_assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
    }
}

#[test]
fn counts_48_2_3_47() {
    let r = metrics_from_confusion(&ConfusionMatrix { tp: 48, fn_: 2, fp: 3, tn: 47 }).unwrap();
    assert!((r.accuracy - 0.95).abs() < 1e-12);
    assert!((r.precision - 0.94118).abs() < 1e-5);
    assert!((r.recall - 0.96).abs() < 1e-12);
    assert!((r.f1 - 0.95050).abs() < 1e-5);
}

#[test]
fn easy_crossval_has_zero_spread() {
    let easy = SynthConfig { snr_db: 30.0, ..Default::default() };
    let dump = synth_dump(10, &easy, 1);
    let cfg = TrainConfig { epochs: 40, seed: 0, ..Default::default() };
    let report = crossval_run(ModelKind::DnnMean, &dump, 5, 3, &cfg).unwrap();
    assert_eq!(report.k, 5);
    assert_eq!(report.folds.len(), 5);
    assert!(report.folds.iter().all(|f| f.test_size == 4 && f.train_size == 16));
    assert_eq!(report.mean_accuracy, 1.0, "{}", report.to_text());
    assert_eq!(report.std_accuracy, 0.0);
    assert_eq!(report, crossval_run(ModelKind::DnnMean, &dump, 5, 3, &cfg).unwrap());
}

#[test]
fn comparison_has_one_row_per_model() {
    let dump = synth_dump(5, &SynthConfig::default(), 2);
    let run = comparative_report(&dump, 1, &TrainConfig { epochs: 1, ..Default::default() }).unwrap();
    assert_eq!(run.report.rows.len(), 4);
    assert_eq!(run.models.len(), 4);
    assert_eq!((run.report.train_size, run.report.test_size), (8, 2));
    let text = run.report.to_text();
    assert!(text.starts_with("Model"));
    assert!(text.lines().next().unwrap().contains("Accuracy") && text.contains("F1 Score"));
    assert_eq!(text.lines().count(), 5);
    for kind in ModelKind::ALL {
        assert!(text.contains(kind.display_name()));
        assert!(run.report.row(kind).is_some());
    }
}
