//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "WPCK" | format version u32 | header length u32 | header (UTF-8 JSON)
//!        | parameter count u64 | parameters as f64, layer order
//! ```
//!
//! The JSON header carries the architecture name, input spec, layer list and
//! seed, plus the feature configuration and standardization statistics needed
//! to featurize raw audio for this model.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{InputSpec, LayerSpec, ModelGraph, ParamSet};
use crate::error::{Error, Result};
use crate::mfcc::{FeatureConfig, StandardizeStats};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub arch: String,
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    #[serde(default)]
    pub feature_config: Option<FeatureConfig>,
    #[serde(default)]
    pub standardize: Option<StandardizeStats<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamSet<f64>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(graph: &ModelGraph, params: &ParamSet<T>, seed: u64) -> Result<Self> {
        if params.count() != graph.param_count() {
            return Err(Error::Checkpoint("parameters do not fit the graph".into()));
        }
        Ok(Self {
            header: CheckpointHeader {
                format_version: CHECKPOINT_VERSION,
                arch: graph.arch().to_string(),
                input: graph.input(),
                layers: graph.layers().to_vec(),
                seed,
                feature_config: None,
                standardize: None,
            },
            params: params.cast(),
        })
    }

    pub fn with_features(mut self, config: FeatureConfig, stats: StandardizeStats<f64>) -> Self {
        self.header.feature_config = Some(config);
        self.header.standardize = Some(stats);
        self
    }

    /// Rebuilds the graph described by the header.
    pub fn graph(&self) -> Result<ModelGraph> {
        ModelGraph::new(self.header.arch.clone(), self.header.input, self.header.layers.clone())
    }

    /// Parameters converted to the requested scalar type.
    pub fn params_as<T: Scalar>(&self) -> ParamSet<T> {
        self.params.cast()
    }

    /// Errors unless the stored architecture equals `expected`.
    pub fn ensure_matches(&self, expected: &ModelGraph) -> Result<()> {
        let stored = self.graph()?;
        if &stored != expected {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint holds {}, expected {}",
                stored.arch(),
                expected.arch()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let values = self.params.to_flat();
        let mut out = Vec::with_capacity(20 + header.len() + 8 * values.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 12 || &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_end = 12usize.checked_add(header_len).filter(|&e| e + 8 <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[12..header_end])?;
        let count = u64::from_le_bytes(bytes[header_end..header_end + 8].try_into().expect("8 bytes")) as usize;
        let payload = &bytes[header_end + 8..];
        if payload.len() != count.saturating_mul(8) {
            return Err(bad("parameter payload length does not match its count"));
        }
        let values: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let graph = ModelGraph::new(header.arch.clone(), header.input, header.layers.clone())?;
        if graph.param_count() != count {
            return Err(Error::Checkpoint(format!(
                "architecture {} needs {} parameters, payload holds {count}",
                graph.arch(),
                graph.param_count()
            )));
        }
        let mut params = graph.init_params::<f64>(0);
        params.load_flat(&values)?;
        Ok(Self { header, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and rejects a checkpoint whose architecture differs from `expected`.
    pub fn load_for(path: impl AsRef<Path>, expected: &ModelGraph) -> Result<Self> {
        let ckpt = Self::load(path)?;
        ckpt.ensure_matches(expected)?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(units: usize) -> ModelGraph {
        ModelGraph::new(
            "tiny",
            InputSpec::Vector { features: 3 },
            vec![LayerSpec::Dense { units }, LayerSpec::Relu, LayerSpec::Dense { units: 2 }, LayerSpec::Softmax],
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let g = graph(4);
        let params = g.init_params::<f64>(9);
        let stats = StandardizeStats { mean: vec![0.1, 0.2], std: vec![1.0, 3.0] };
        let ckpt = Checkpoint::new(&g, &params, 9).unwrap().with_features(FeatureConfig::default(), stats);
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.graph().unwrap(), g);
    }

    #[test]
    fn rejects_mismatch_and_corruption() {
        let g = graph(4);
        let ckpt = Checkpoint::new(&g, &g.init_params::<f64>(1), 1).unwrap();
        assert!(ckpt.ensure_matches(&graph(5)).is_err());
        let bytes = ckpt.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(Checkpoint::new(&graph(5), &g.init_params::<f64>(1), 1).is_err());
    }
}
