mod common;

use common::fixtures::{overfit_set, synth_dump};
use woodpest::audio::ClipLabel;
use woodpest::eval::{fit_evaluate, stratified_split};
use woodpest::models::{build_model, predict_set, train, ModelKind, TrainConfig};
use woodpest::nn::Checkpoint;
use woodpest::synth::SynthConfig;

#[test]
fn every_architecture_overfits_eight_samples() {
    let dump = synth_dump(4, &SynthConfig::default(), 21);
    for kind in ModelKind::ALL {
        let data = overfit_set(kind, &dump);
        assert_eq!(data.len(), 8);
        let graph = build_model(kind);
        let cfg = TrainConfig { epochs: 200, seed: 5, ..Default::default() };
        let out = train(&graph, &data, None, &cfg).unwrap();
        let h = &out.history;
        assert_eq!(h.train_loss.len(), 200);
        assert!(h.val_loss.is_empty());
        assert_eq!(*h.train_accuracy.last().unwrap(), 1.0, "{kind}: {:?}", &h.train_accuracy[190..]);
        for e in 5..h.train_loss.len() {
            assert!(
                h.train_loss[e] <= h.train_loss[e - 1] + 1e-3,
                "{kind}: loss rose at epoch {e}: {} -> {}",
                h.train_loss[e - 1],
                h.train_loss[e]
            );
        }
    }
}

#[test]
fn identical_seeds_give_identical_parameters() {
    let dump = synth_dump(4, &SynthConfig::default(), 3);
    let data = overfit_set(ModelKind::CnnLstm, &dump);
    let graph = build_model(ModelKind::CnnLstm);
    let cfg = TrainConfig { epochs: 3, batch_size: 3, seed: 17, ..Default::default() };
    let a = train(&graph, &data, Some(&data), &cfg).unwrap();
    let b = train(&graph, &data, Some(&data), &cfg).unwrap();
    assert_eq!(a.params.to_flat(), b.params.to_flat());
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.val_loss.len(), 3);
    let c = train(&graph, &data, None, &TrainConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(a.params.to_flat(), c.params.to_flat());
}

#[test]
fn checkpoint_roundtrip_predicts_identically() {
    let dump = synth_dump(4, &SynthConfig::default(), 8);
    let dir = tempfile::tempdir().unwrap();
    for kind in ModelKind::ALL {
        let data = overfit_set(kind, &dump);
        let graph = build_model(kind);
        let out = train(&graph, &data, None, &TrainConfig { epochs: 2, seed: 1, ..Default::default() }).unwrap();
        let before = predict_set(&graph, &out.params, &data).unwrap();
        let path = dir.path().join(format!("{kind}.ckpt"));
        Checkpoint::new(&graph, &out.params, 1).unwrap().save(&path).unwrap();
        let loaded = Checkpoint::load_for(&path, &graph).unwrap();
        let after = predict_set(&graph, &loaded.params_as::<f64>(), &data).unwrap();
        assert_eq!(before, after);
        assert_eq!(before, predict_set(&graph, &out.params, &data).unwrap());
        if kind != ModelKind::DnnMean {
            assert!(Checkpoint::load_for(&path, &build_model(ModelKind::DnnMean)).is_err());
        }
    }
}

#[test]
fn trained_model_flags_held_out_obvious_clip() {
    let dump = synth_dump(30, &SynthConfig::default(), 99);
    let split = stratified_split(&dump.labels(), 0.2, 4).unwrap();
    let cfg = TrainConfig { epochs: 50, seed: 2, ..Default::default() };
    let (model, eval) = fit_evaluate(ModelKind::DnnMean, &dump, &split, &cfg).unwrap();
    assert!(eval.metrics.accuracy >= 0.85, "{eval:?}");

    // an unseen clip with twice the usual click density at high SNR
    let loud = SynthConfig { snr_db: 20.0, click_rate: 16.0, ..Default::default() };
    let obvious = synth_dump(1, &loud, 12345);
    let infested = obvious.items.iter().find(|it| it.label == ClipLabel::Infested).unwrap();
    let pred = &model.predict_matrices(&[&infested.matrix]).unwrap()[0];
    assert_eq!(pred.label, ClipLabel::Infested);
    assert!(pred.p_infested() > 0.9, "p = {}", pred.p_infested());
}
