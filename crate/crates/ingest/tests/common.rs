#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use woodpest::dataset::{FeatureDump, LabeledMatrix};
use woodpest::eval::{fit_evaluate, stratified_split};
use woodpest::mfcc::{FeatureConfig, FeatureExtractor};
use woodpest::models::{ModelKind, TrainConfig};
use woodpest::nn::Checkpoint;
use woodpest::synth::{render_dataset, Manifest, SynthConfig};
use woodpest_ingest::Classifier;

/// A small mean-MFCC model trained once per test binary.
pub fn classifier() -> Arc<Classifier> {
    static MODEL: OnceLock<Arc<Classifier>> = OnceLock::new();
    Arc::clone(MODEL.get_or_init(|| {
        let cfg = SynthConfig::default();
        let manifest = Manifest::plan(20, &cfg, 77).unwrap();
        let fx = FeatureExtractor::<f64>::new(FeatureConfig::default(), 16000).unwrap();
        let items = render_dataset(&manifest)
            .unwrap()
            .into_iter()
            .zip(&manifest.clips)
            .map(|((clip, label), e)| LabeledMatrix { id: e.id.clone(), label, matrix: fx.extract_clip(&clip).unwrap() })
            .collect();
        let dump = FeatureDump { feature_config: FeatureConfig::default(), sample_rate: 16000, items };
        let split = stratified_split(&dump.labels(), 0.2, 0).unwrap();
        let tc = TrainConfig { epochs: 40, seed: 3, ..Default::default() };
        let (model, _) = fit_evaluate(ModelKind::DnnMean, &dump, &split, &tc).unwrap();
        let ckpt = Checkpoint::new(&model.graph, &model.params, 3).unwrap().with_features(FeatureConfig::default(), model.stats);
        Arc::new(Classifier::from_checkpoint(&ckpt, "test-model").unwrap())
    }))
}
