//! Labeled feature collections and their on-disk dump.
//!
//! A dataset directory holds one subdirectory per class (`clean/`, `infested/`)
//! of 16-bit WAV files. Extraction turns it into a JSON feature dump that the
//! training and evaluation commands consume.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, resample_linear, AudioClip, ClipLabel};
use crate::error::{Error, Result};
use crate::mfcc::{FeatureConfig, FeatureExtractor, MfccMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub id: String,
    pub label: ClipLabel,
    pub matrix: MfccMatrix<f64>,
}

/// Features of a whole dataset plus the settings that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDump {
    pub feature_config: FeatureConfig,
    pub sample_rate: u32,
    pub items: Vec<LabeledMatrix>,
}

impl FeatureDump {
    pub fn labels(&self) -> Vec<ClipLabel> {
        self.items.iter().map(|it| it.label).collect()
    }

    pub fn matrices(&self) -> Vec<&MfccMatrix<f64>> {
        self.items.iter().map(|it| &it.matrix).collect()
    }

    pub fn count(&self, label: ClipLabel) -> usize {
        self.items.iter().filter(|it| it.label == label).count()
    }

    /// Checks that every matrix has the same shape and finite values.
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.items.first() else {
            return Err(Error::InvalidDataset("feature dump is empty".into()));
        };
        let shape = (first.matrix.n_frames, first.matrix.n_coeffs);
        for it in &self.items {
            let m = &it.matrix;
            if (m.n_frames, m.n_coeffs) != shape || m.values.len() != m.n_frames * m.n_coeffs {
                return Err(Error::InvalidDataset(format!("{}: shape differs from {shape:?}", it.id)));
            }
            if !m.is_finite() {
                return Err(Error::InvalidDataset(format!("{}: non-finite features", it.id)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let dump: Self = serde_json::from_slice(&fs::read(path)?)
            .map_err(|e| Error::InvalidDataset(format!("malformed feature dump: {e}")))?;
        dump.validate()?;
        Ok(dump)
    }
}

/// WAV files of `dir/clean` and `dir/infested`, sorted by file name within class.
pub fn list_wavs(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, ClipLabel)>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for label in ClipLabel::ALL {
        let sub = dir.join(label.as_str());
        if !sub.is_dir() {
            return Err(Error::InvalidDataset(format!("missing class directory {}", sub.display())));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&sub)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::InvalidDataset(format!("no WAV files in {}", sub.display())));
        }
        out.extend(files.into_iter().map(|p| (p, label)));
    }
    Ok(out)
}

/// Brings a clip to the extractor's rate and to exactly `samples` samples
/// (zero-padded or truncated).
pub fn conform_clip(clip: &AudioClip, sample_rate: u32, samples: usize) -> Result<AudioClip> {
    let clip = if clip.sample_rate() == sample_rate { clip.clone() } else { resample_linear(clip, sample_rate)? };
    let mut data = clip.samples().to_vec();
    data.resize(samples, 0.0);
    let out = AudioClip::new(data, sample_rate)?;
    Ok(match clip.source_id() {
        Some(id) => out.with_source_id(id),
        None => out,
    })
}

/// Extracts MFCC matrices for every clip of a dataset directory.
///
/// Clips are conformed to `clip_samples` at `sample_rate` first so that all
/// matrices share one shape.
pub fn extract_dir(
    dir: impl AsRef<Path>,
    cfg: &FeatureConfig,
    sample_rate: u32,
    clip_samples: usize,
) -> Result<FeatureDump> {
    let extractor = FeatureExtractor::<f64>::new(cfg.clone(), sample_rate)?;
    let mut items = Vec::new();
    for (path, label) in list_wavs(dir)? {
        let clip = load_wav(&path).map_err(|e| Error::InvalidDataset(format!("{}: {e}", path.display())))?;
        let clip = conform_clip(&clip, sample_rate, clip_samples)?;
        let id = format!("{}/{}", label.as_str(), path.file_stem().and_then(|s| s.to_str()).unwrap_or_default());
        items.push(LabeledMatrix { id, label, matrix: extractor.extract_clip(&clip)? });
        log::debug!("extracted {}", path.display());
    }
    let dump = FeatureDump { feature_config: cfg.clone(), sample_rate, items };
    dump.validate()?;
    Ok(dump)
}
