//! JSON checkpoint format.
//!
//! ```json
//! {
//!   "format": "wsoftmax-mlp",
//!   "version": 1,
//!   "spec": { "input_dim": 784, "hidden_dims": [64], "feature_dim": 9,
//!             "activation": "prelu", "num_classes": 10 },
//!   "layers": [ { "weight": [[...], ...], "bias": [...] }, ... ],
//!   "prelu_slopes": [[...], ...],
//!   "classifier": [[...], ...]
//! }
//! ```
//!
//! `layers[i].weight` is out×in, `classifier` is M×C (one row per feature
//! unit). Floats are written in shortest round-trip form and parsed exactly,
//! so save → load reproduces every bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dense, MlpSpec, ModelParams};
use crate::tensor::Matrix;

pub const FORMAT: &str = "wsoftmax-mlp";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    spec: MlpSpec,
    layers: Vec<LayerDoc>,
    prelu_slopes: Vec<Vec<f64>>,
    classifier: Vec<Vec<f64>>,
}

pub fn to_json(params: &ModelParams) -> Result<String> {
    let doc = CheckpointDoc {
        format: FORMAT.to_string(),
        version: VERSION,
        spec: params.spec().clone(),
        layers: params.layers.iter().map(|l| LayerDoc { weight: l.weight.to_rows(), bias: l.bias.clone() }).collect(),
        prelu_slopes: params.slopes.clone(),
        classifier: params.classifier.to_rows(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn from_json(text: &str) -> Result<ModelParams> {
    let doc: CheckpointDoc = serde_json::from_str(text)?;
    if doc.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", doc.format)));
    }
    if doc.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", doc.version)));
    }
    let layers = doc
        .layers
        .into_iter()
        .map(|l| Ok(Dense { weight: Matrix::from_rows(&l.weight)?, bias: l.bias }))
        .collect::<Result<Vec<_>>>()?;
    ModelParams::from_parts(doc.spec, layers, doc.prelu_slopes, Matrix::from_rows(&doc.classifier)?)
}

pub fn save(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(params)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Activation};

    fn sample() -> ModelParams {
        let spec = MlpSpec {
            input_dim: 5,
            hidden_dims: vec![4, 3],
            feature_dim: 2,
            activation: Activation::Prelu,
            num_classes: 3,
        };
        let mut p = init_params(&spec, 42).unwrap();
        p.slopes[0][1] = 0.1 + 0.2; // not exactly representable in short decimal
        p.classifier.set(0, 0, 1.0 / 3.0);
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let q = from_json(&to_json(&p).unwrap()).unwrap();
        assert_eq!(
            p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            q.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(p, q);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&sample(), &path).unwrap();
        assert_eq!(load(&path).unwrap(), sample());
    }

    #[test]
    fn rejects_wrong_version_and_shapes() {
        let text = to_json(&sample()).unwrap();
        let bumped = text.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(from_json(&bumped), Err(Error::Checkpoint(_))));

        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["classifier"].as_array_mut().unwrap().pop();
        assert!(from_json(&doc.to_string()).is_err());

        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["prelu_slopes"][0].as_array_mut().unwrap().pop();
        assert!(from_json(&doc.to_string()).is_err());
    }
}
