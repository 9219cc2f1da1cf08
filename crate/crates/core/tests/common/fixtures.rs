//! Small synthetic datasets shared by the integration and acceptance suites.

#![allow(dead_code)]

use woodpest::audio::ClipLabel;
use woodpest::dataset::{FeatureDump, LabeledMatrix};
use woodpest::mfcc::{fit_standardize, FeatureConfig, FeatureExtractor};
use woodpest::models::{prepare_features, FeatureSet, ModelKind};
use woodpest::synth::{render_dataset, Manifest, SynthConfig};

/// Features of `n_per_class` clips per class, generated in memory.
pub fn synth_dump(n_per_class: usize, cfg: &SynthConfig, seed: u64) -> FeatureDump {
    let manifest = Manifest::plan(n_per_class, cfg, seed).unwrap();
    let extractor = FeatureExtractor::<f64>::new(FeatureConfig::default(), cfg.sample_rate).unwrap();
    let items = render_dataset(&manifest)
        .unwrap()
        .into_iter()
        .zip(&manifest.clips)
        .map(|((clip, label), entry)| LabeledMatrix {
            id: entry.id.clone(),
            label,
            matrix: extractor.extract_clip(&clip).unwrap(),
        })
        .collect();
    FeatureDump { feature_config: FeatureConfig::default(), sample_rate: cfg.sample_rate, items }
}

/// Eight standardized samples (four per class) shaped for `kind`.
pub fn overfit_set(kind: ModelKind, dump: &FeatureDump) -> FeatureSet<f64> {
    let matrices = dump.matrices();
    let labels: Vec<ClipLabel> = dump.labels();
    let stats = fit_standardize(&matrices).unwrap();
    prepare_features(kind, &matrices, &labels, &stats).unwrap()
}
