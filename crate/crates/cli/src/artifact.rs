//! Model persistence. The artifact file is everything the target side needs:
//! architecture, parameters, batch-norm running statistics, the feature
//! normalizer, the power bin edges, and the selected feature set. Adaptation
//! and evaluation read this one file plus target CSVs — no source data.
//!
//! Serialization is canonical JSON: fixed field order (struct order), floats
//! in shortest round-trip decimal form, two-space indentation, trailing
//! newline. Saving a loaded artifact reproduces the input byte for byte.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use helioadapt::data::{BinEdges, BinScheme, Normalizer};
use helioadapt::nn::{LayerSpec, Mode, Network, RunningStats};
use helioadapt::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::errors::CliError;

/// Bumped whenever the on-disk layout changes.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerDoc {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    BatchNorm1d {
        features: usize,
    },
    Relu,
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

impl From<LayerSpec> for LayerDoc {
    fn from(spec: LayerSpec) -> Self {
        match spec {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => LayerDoc::Conv1d {
                in_channels,
                out_channels,
                kernel,
                padding,
            },
            LayerSpec::BatchNorm1d { features } => LayerDoc::BatchNorm1d { features },
            LayerSpec::Relu => LayerDoc::Relu,
            LayerSpec::Flatten => LayerDoc::Flatten,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => LayerDoc::Dense {
                in_features,
                out_features,
            },
        }
    }
}

impl From<&LayerDoc> for LayerSpec {
    fn from(doc: &LayerDoc) -> Self {
        match *doc {
            LayerDoc::Conv1d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                padding,
            },
            LayerDoc::BatchNorm1d { features } => LayerSpec::BatchNorm1d { features },
            LayerDoc::Relu => LayerSpec::Relu,
            LayerDoc::Flatten => LayerSpec::Flatten,
            LayerDoc::Dense {
                in_features,
                out_features,
            } => LayerSpec::Dense {
                in_features,
                out_features,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorDoc {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunningDoc {
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizerDoc {
    mean: Vec<f64>,
    std: Vec<f64>,
    clamped: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinEdgesDoc {
    scheme: String,
    edges: Vec<f64>,
}

impl BinEdgesDoc {
    pub fn from_edges(edges: &BinEdges) -> Self {
        Self {
            scheme: match edges.scheme {
                BinScheme::ZeroPlusQuantile => "zero_plus_quantile".into(),
                BinScheme::EqualWidth => "equal_width".into(),
            },
            edges: edges.edges.clone(),
        }
    }

    pub fn to_edges(&self) -> Result<BinEdges> {
        let scheme = match self.scheme.as_str() {
            "zero_plus_quantile" => BinScheme::ZeroPlusQuantile,
            "equal_width" => BinScheme::EqualWidth,
            other => {
                return Err(CliError::Data(format!("unknown bin scheme '{other}'")).into());
            }
        };
        Ok(BinEdges {
            edges: self.edges.clone(),
            scheme,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionDoc {
    pub indices: Vec<usize>,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProvenanceDoc {
    pub seed: u64,
    pub config_hash: String,
    pub source_profile: String,
}

/// The transferable model: weights plus every preprocessing decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    format_version: u32,
    input_features: usize,
    layers: Vec<LayerDoc>,
    parameters: Vec<Vec<TensorDoc>>,
    running_stats: Vec<Option<RunningDoc>>,
    normalizer: NormalizerDoc,
    bin_edges: BinEdgesDoc,
    pub selected_features: SelectionDoc,
    pub provenance: ProvenanceDoc,
}

impl ModelArtifact {
    pub fn from_parts(
        net: &Network,
        normalizer: &Normalizer,
        edges: &BinEdges,
        selection: SelectionDoc,
        provenance: ProvenanceDoc,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            input_features: net.input_features(),
            layers: net.specs().iter().map(|&s| LayerDoc::from(s)).collect(),
            parameters: net
                .params()
                .iter()
                .map(|group| {
                    group
                        .iter()
                        .map(|t| TensorDoc {
                            shape: t.shape().to_vec(),
                            data: t.data().to_vec(),
                        })
                        .collect()
                })
                .collect(),
            running_stats: net
                .running()
                .iter()
                .map(|r| {
                    r.as_ref().map(|s| RunningDoc {
                        mean: s.mean.clone(),
                        var: s.var.clone(),
                    })
                })
                .collect(),
            normalizer: NormalizerDoc {
                mean: normalizer.mean.clone(),
                std: normalizer.std.clone(),
                clamped: normalizer.clamped.clone(),
            },
            bin_edges: BinEdgesDoc::from_edges(edges),
            selected_features: selection,
            provenance,
        }
    }

    /// Reconstructs the network in eval mode.
    pub fn to_network(&self) -> Result<Network> {
        let specs: Vec<LayerSpec> = self.layers.iter().map(LayerSpec::from).collect();
        let mut net = Network::new(specs, self.input_features, 0)
            .context("artifact architecture is invalid")?;
        if net.params().len() != self.parameters.len() {
            return Err(CliError::Data("artifact parameter group count mismatch".into()).into());
        }
        for (layer, group) in self.parameters.iter().enumerate() {
            if net.params()[layer].len() != group.len() {
                return Err(CliError::Data(format!(
                    "artifact layer {layer}: expected {} tensors, found {}",
                    net.params()[layer].len(),
                    group.len()
                ))
                .into());
            }
            for (pi, doc) in group.iter().enumerate() {
                let tensor = Tensor::new(doc.shape.clone(), doc.data.clone())
                    .with_context(|| format!("artifact tensor at layer {layer} slot {pi}"))?;
                if tensor.shape() != net.params()[layer][pi].shape() {
                    return Err(CliError::Data(format!(
                        "artifact layer {layer} slot {pi}: shape {:?} does not fit {:?}",
                        tensor.shape(),
                        net.params()[layer][pi].shape()
                    ))
                    .into());
                }
                net.params_mut()[layer][pi] = tensor;
            }
        }
        for (layer, doc) in self.running_stats.iter().enumerate() {
            match (doc, &mut net.running_mut()[layer]) {
                (Some(d), Some(slot)) => {
                    if d.mean.len() != slot.mean.len() || d.var.len() != slot.var.len() {
                        return Err(CliError::Data(format!(
                            "artifact running stats at layer {layer} have the wrong width"
                        ))
                        .into());
                    }
                    *slot = RunningStats {
                        mean: d.mean.clone(),
                        var: d.var.clone(),
                    };
                }
                (None, None) => {}
                _ => {
                    return Err(CliError::Data(format!(
                        "artifact running stats at layer {layer} do not match the architecture"
                    ))
                    .into())
                }
            }
        }
        net.set_mode(Mode::Eval);
        Ok(net)
    }

    pub fn normalizer(&self) -> Normalizer {
        Normalizer {
            mean: self.normalizer.mean.clone(),
            std: self.normalizer.std.clone(),
            clamped: self.normalizer.clamped.clone(),
        }
    }

    pub fn bin_edges(&self) -> Result<BinEdges> {
        self.bin_edges.to_edges()
    }

    /// Number of power classes the model predicts.
    pub fn classes(&self) -> usize {
        self.bin_edges.edges.len() + 1
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).context("encoding artifact")?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("model artifact {}: {e}", path.display())))?;
        let artifact: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("model artifact {}: {e}", path.display())))?;
        if artifact.format_version != FORMAT_VERSION {
            return Err(CliError::Data(format!(
                "artifact format version {} unsupported (expected {FORMAT_VERSION})",
                artifact.format_version
            ))
            .into());
        }
        Ok(artifact)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use helioadapt::nn::ArchConfig;

    fn sample_artifact() -> ModelArtifact {
        let net = Network::classifier(&ArchConfig::default(), 6, 3).unwrap();
        let normalizer = Normalizer {
            mean: vec![0.5; 6],
            std: vec![2.0; 6],
            clamped: vec![false; 6],
        };
        let edges = BinEdges {
            edges: vec![1e-6, 0.2, 0.45, 0.7],
            scheme: BinScheme::ZeroPlusQuantile,
        };
        ModelArtifact::from_parts(
            &net,
            &normalizer,
            &edges,
            SelectionDoc {
                indices: vec![0, 1, 2, 3, 4, 5],
                names: (0..6).map(|i| format!("f{i}")).collect(),
            },
            ProvenanceDoc {
                seed: 3,
                config_hash: "cafe".into(),
                source_profile: "sunny-dry".into(),
            },
        )
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("model.json");
        let p2 = dir.path().join("model2.json");
        let artifact = sample_artifact();
        artifact.save(&p1).unwrap();
        ModelArtifact::load(&p1).unwrap().save(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn network_round_trips_bit_exactly() {
        let artifact = sample_artifact();
        let net = artifact.to_network().unwrap();
        let rebuilt = ModelArtifact::from_parts(
            &net,
            &artifact.normalizer(),
            &artifact.bin_edges().unwrap(),
            artifact.selected_features.clone(),
            artifact.provenance.clone(),
        );
        for (a, b) in artifact
            .parameters
            .iter()
            .flatten()
            .zip(rebuilt.parameters.iter().flatten())
        {
            assert_eq!(a.data, b.data);
        }
        assert_eq!(artifact.classes(), 5);
        assert_eq!(net.mode(), Mode::Eval);
    }

    #[test]
    fn version_and_shape_mismatches_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let artifact = sample_artifact();
        artifact.save(&path).unwrap();

        let mut text = fs::read_to_string(&path).unwrap();
        text = text.replace("\"format_version\": 1", "\"format_version\": 99");
        fs::write(&path, text).unwrap();
        let err = ModelArtifact::load(&path).unwrap_err();
        assert_eq!(crate::errors::exit_code(&err), crate::errors::EXIT_DATA);

        let mut broken = artifact.clone();
        broken.parameters[0][0].data.pop();
        assert!(broken.to_network().is_err());
    }
}
