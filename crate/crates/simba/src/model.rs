//! The full model: encoder plus affine classifier, with checkpoint I/O.

use crate::autodiff::{NodeId, Tape};
use crate::data::Graph;
use crate::encoder::{encode_graph, BoundEncoder, EncoderConfig, EncoderParams};
use crate::error::{Result, SimbaError};
use crate::params::{glorot_uniform, read_checkpoint, write_checkpoint, ParamSet};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct SimbaModel {
    pub params: ParamSet,
    encoder: EncoderParams,
    clf_w: usize,
    clf_b: usize,
    num_classes: usize,
}

/// Tape handles for one forward pass.
pub struct BoundModel {
    pub encoder: BoundEncoder,
    pub clf_w: NodeId,
    pub clf_b: NodeId,
}

impl SimbaModel {
    pub fn new(
        config: &EncoderConfig,
        input_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(SimbaError::Argument(
                "classifier needs at least two classes".into(),
            ));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = EncoderParams::build(&mut params, config, input_dim, &mut rng)?;
        let clf_w = params.add(
            "clf.w",
            glorot_uniform(config.hidden_dim, num_classes, &mut rng),
        )?;
        let clf_b = params.add("clf.b", Tensor::zeros(1, num_classes))?;
        Ok(SimbaModel {
            params,
            encoder,
            clf_w,
            clf_b,
            num_classes,
        })
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        self.bind_with(tape, &self.params)
    }

    /// Bind against an external parameter set with the same layout; used by
    /// gradient checkers that perturb a copy of the parameters.
    pub fn bind_with(&self, tape: &mut Tape, params: &ParamSet) -> BoundModel {
        BoundModel {
            encoder: self.encoder.bind(tape, params),
            clf_w: tape.param(params, self.clf_w),
            clf_b: tape.param(params, self.clf_b),
        }
    }

    /// Encode one graph without keeping a tape around.
    pub fn encode_value(&self, graph: &Graph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.encoder.bind(&mut tape, &self.params);
        let id = encode_graph(&mut tape, &bound, graph)?;
        Ok(tape.value(id).clone())
    }

    /// Encode many graphs into a stacked (N x r) matrix, value-only.
    pub fn encode_all_value<'a>(
        &self,
        graphs: impl IntoIterator<Item = &'a Graph>,
    ) -> Result<Tensor> {
        let mut rows = Vec::new();
        for g in graphs {
            rows.push(self.encode_value(g)?);
        }
        let refs: Vec<&Tensor> = rows.iter().collect();
        Tensor::concat_rows(&refs)
    }

    /// Value-level logits for a batch of embeddings.
    pub fn classify_value(&self, embeddings: &Tensor) -> Result<Tensor> {
        embeddings
            .matmul(&self.params.get(self.clf_w).value)?
            .add_row_broadcast(&self.params.get(self.clf_b).value)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let c = self.encoder.config();
        let meta = vec![
            ("backbone".to_string(), c.backbone.to_string()),
            ("layers".to_string(), c.layers.to_string()),
            ("hidden_dim".to_string(), c.hidden_dim.to_string()),
            ("attention_dim".to_string(), c.attention_dim.to_string()),
            ("mlp_hidden".to_string(), c.mlp_hidden.to_string()),
            ("input_dim".to_string(), self.encoder.input_dim().to_string()),
            ("num_classes".to_string(), self.num_classes.to_string()),
        ];
        write_checkpoint(path, &meta, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors) = read_checkpoint(path)?;
        let lookup = |key: &str| -> Result<String> {
            meta.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| SimbaError::Checkpoint(format!("missing meta key {key}")))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            lookup(key)?
                .parse()
                .map_err(|_| SimbaError::Checkpoint(format!("bad meta value for {key}")))
        };
        let config = EncoderConfig {
            backbone: lookup("backbone")?.parse()?,
            layers: parse_usize("layers")?,
            hidden_dim: parse_usize("hidden_dim")?,
            attention_dim: parse_usize("attention_dim")?,
            mlp_hidden: parse_usize("mlp_hidden")?,
        };
        let input_dim = parse_usize("input_dim")?;
        let num_classes = parse_usize("num_classes")?;
        let mut model = SimbaModel::new(&config, input_dim, num_classes, 0)?;
        if tensors.len() != model.params.len() {
            return Err(SimbaError::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                tensors.len(),
                model.params.len()
            )));
        }
        for (name, tensor) in tensors {
            let idx = model.params.index_of(&name).ok_or_else(|| {
                SimbaError::Checkpoint(format!("unknown parameter {name:?} in checkpoint"))
            })?;
            let slot = model.params.get_mut(idx);
            if slot.value.shape() != tensor.shape() {
                return Err(SimbaError::Checkpoint(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    slot.value.shape()
                )));
            }
            slot.value = tensor;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Backbone;

    fn tiny_graph() -> Graph {
        Graph::new(
            3,
            vec![(0, 1), (1, 2)],
            Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap(),
            0,
        )
        .unwrap()
    }

    #[test]
    fn save_load_round_trip_preserves_outputs() {
        let cfg = EncoderConfig {
            backbone: Backbone::Gin,
            layers: 2,
            hidden_dim: 5,
            attention_dim: 4,
            mlp_hidden: 7,
        };
        let model = SimbaModel::new(&cfg, 2, 2, 42).unwrap();
        let g = tiny_graph();
        let before = model.encode_value(&g).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        let loaded = SimbaModel::load(&path).unwrap();
        let after = loaded.encode_value(&g).unwrap();
        assert_eq!(before, after);
        assert_eq!(loaded.num_classes(), 2);
        assert_eq!(loaded.encoder_config(), &cfg);
    }

    #[test]
    fn load_rejects_shape_drift() {
        let cfg = EncoderConfig {
            backbone: Backbone::Gcn,
            layers: 1,
            hidden_dim: 4,
            attention_dim: 4,
            mlp_hidden: 4,
        };
        let model = SimbaModel::new(&cfg, 3, 2, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        // corrupt the input_dim meta so shapes disagree
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("meta input_dim 3", "meta input_dim 4")).unwrap();
        assert!(SimbaModel::load(&path).is_err());
    }
}
