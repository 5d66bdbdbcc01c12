//! JSON model files.
//!
//! Reals are written in the shortest decimal form that parses back to the same
//! `f64`, so a save/load round trip is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::nn::{AbstainNetwork, DenseLayer, RejectionMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// How many of `layers` belong to the shared body; the rest form the
    /// prediction head.
    pub body_layers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub config: ModelConfig,
    pub layers: Vec<DenseLayer>,
    pub rej_mode: RejectionMode,
    pub aux_head: Option<Vec<DenseLayer>>,
}

impl ModelFile {
    pub fn new(
        net: &AbstainNetwork,
        standardizer: Option<Standardizer>,
        loss: Option<LossConfig>,
    ) -> Self {
        Self {
            config: ModelConfig {
                input_dim: net.input_dim,
                body_layers: net.body.len(),
                standardizer,
                loss,
            },
            layers: net.body.iter().chain(&net.pred_head).cloned().collect(),
            rej_mode: net.rej_mode.clone(),
            aux_head: net.aux_head.clone(),
        }
    }

    pub fn network(&self) -> Result<AbstainNetwork> {
        let k = self.config.body_layers;
        if k >= self.layers.len() {
            return Err(Error::Structure(format!(
                "model lists {} layers but claims {k} body layers and needs a prediction head",
                self.layers.len()
            )));
        }
        let net = AbstainNetwork {
            input_dim: self.config.input_dim,
            body: self.layers[..k].to_vec(),
            pred_head: self.layers[k..].to_vec(),
            rej_mode: self.rej_mode.clone(),
            aux_head: self.aux_head.clone(),
        };
        net.validate()?;
        if let Some(s) = &self.config.standardizer {
            if s.means.len() != net.input_dim || s.stds.len() != net.input_dim {
                return Err(Error::Structure(
                    "standardizer width differs from input_dim".into(),
                ));
            }
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.network()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_network, NetworkSpec, RejectionSpec};

    #[test]
    fn round_trip_is_bit_exact() {
        let mut spec = NetworkSpec::scalar(&[3, 7, 5]);
        spec.pred_hidden = vec![4];
        spec.rejection = RejectionSpec::Instance { hidden: vec![3] };
        spec.aux_hidden = Some(vec![2]);
        let mut net = init_network(&spec, 42).unwrap();
        net.body[0].bias[1] = 0.1 + 0.2;
        net.body[1].weights[0] = f64::MIN_POSITIVE;
        let std = Standardizer {
            means: vec![0.5, -1.0, 1e-300],
            stds: vec![1.0, 3.0, 0.0],
        };
        let file = ModelFile::new(&net, Some(std), None);
        let text = file.to_json().unwrap();
        let back = ModelFile::from_json(&text).unwrap();
        assert_eq!(back, file);
        let a: Vec<u64> = net.params_to_vec().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back
            .network()
            .unwrap()
            .params_to_vec()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(a, b);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn structure_errors() {
        let net = init_network(&NetworkSpec::scalar(&[2, 3]), 1).unwrap();
        let mut file = ModelFile::new(&net, None, None);
        file.config.body_layers = 2;
        assert!(matches!(file.network(), Err(Error::Structure(_))));
        assert!(ModelFile::from_json("{\"config\": 1}").is_err());
    }
}
