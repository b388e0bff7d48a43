//! Run configuration: defaults, the flat key=value config file, and the
//! dataset specifier (a TUDataset directory or a synthetic recipe).

use crate::data::SynthConfig;
use crate::encoder::EncoderConfig;
use crate::energy::RewConfig;
use crate::error::{Result, SimbaError};
use crate::optim::AdamConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    /// A TUDataset directory; `name` prefixes the data files.
    Dir { path: PathBuf, name: String },
    /// A generated power-law set.
    Synth(SynthConfig),
}

impl DatasetSpec {
    /// Parse `--dataset` strings: either a directory path (the dataset name
    /// is the directory's basename) or a `synth:key=value,...` recipe.
    pub fn parse(spec: &str) -> Result<DatasetSpec> {
        if let Some(rest) = spec.strip_prefix("synth:") {
            let mut cfg = SynthConfig::default();
            for pair in rest.split(',').filter(|p| !p.trim().is_empty()) {
                let (key, value) = pair.split_once('=').ok_or_else(|| {
                    SimbaError::Argument(format!("bad synth option {pair:?} (want key=value)"))
                })?;
                let key = key.trim();
                let value = value.trim();
                let bad =
                    |k: &str| SimbaError::Argument(format!("bad value for synth option {k}"));
                match key {
                    "n" => cfg.n_graphs = value.parse().map_err(|_| bad(key))?,
                    "alpha" => cfg.size_exponent = value.parse().map_err(|_| bad(key))?,
                    "min" => cfg.size_range.0 = value.parse().map_err(|_| bad(key))?,
                    "max" => cfg.size_range.1 = value.parse().map_err(|_| bad(key))?,
                    "classes" => cfg.num_classes = value.parse().map_err(|_| bad(key))?,
                    "motif" => cfg.motif_size = value.parse().map_err(|_| bad(key))?,
                    "extra" => cfg.extra_edge_factor = value.parse().map_err(|_| bad(key))?,
                    "noise_dims" => cfg.feature_noise_dims = value.parse().map_err(|_| bad(key))?,
                    "noise_std" => cfg.feature_noise_std = value.parse().map_err(|_| bad(key))?,
                    "confusers" => cfg.confuser_fraction = value.parse().map_err(|_| bad(key))?,
                    "seed" => cfg.seed = value.parse().map_err(|_| bad(key))?,
                    other => {
                        return Err(SimbaError::Argument(format!(
                            "unknown synth option {other:?}"
                        )))
                    }
                }
            }
            return Ok(DatasetSpec::Synth(cfg));
        }
        let path = PathBuf::from(spec);
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| SimbaError::Argument(format!("cannot infer dataset name from {spec:?}")))?
            .to_string();
        Ok(DatasetSpec::Dir { path, name })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RebuildSchedule {
    /// Rebuild the kNN abstraction from fresh embeddings once per epoch.
    PerEpoch,
    /// Rebuild on every optimization step (identical under full-batch
    /// training, which takes one step per epoch).
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2GConfig {
    /// Neighbors per graph in the kNN abstraction.
    pub k: usize,
    /// Propagation hops over the abstraction.
    pub hops: usize,
    /// Evaluate with a joint train+eval abstraction instead of the default
    /// inductive rule (eval graphs pick neighbors from the train set only).
    pub transductive: bool,
    pub rebuild: RebuildSchedule,
}

impl Default for G2GConfig {
    fn default() -> Self {
        G2GConfig {
            k: 2,
            hops: 2,
            transductive: false,
            rebuild: RebuildSchedule::PerEpoch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// The full pipeline.
    None,
    /// Drop graphs-to-graph propagation and re-weighting: the encoder feeds
    /// the classifier directly and the loss is unweighted.
    NoG2g,
    /// Keep propagation, drop the energy-based re-weighting.
    NoRew,
}

impl std::str::FromStr for Ablation {
    type Err = SimbaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Ablation::None),
            "no-g2g" => Ok(Ablation::NoG2g),
            "no-rew" => Ok(Ablation::NoRew),
            other => Err(SimbaError::Argument(format!(
                "unknown ablation {other:?} (expected no-g2g or no-rew)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub encoder: EncoderConfig,
    pub g2g: G2GConfig,
    pub rew: RewConfig,
    pub optim: AdamConfig,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub ratios: (u32, u32, u32),
    pub head_fraction: f64,
    /// Overrides the Pareto cut with an explicit head count.
    pub head_count: Option<usize>,
    pub ablation: Ablation,
    /// Per-epoch energy trace CSV (epoch, graph, e0, et, rank, weight).
    pub energy_trace: Option<PathBuf>,
    /// Edge dump of the last abstraction built (graph_i, graph_j, similarity).
    pub g2g_dump: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSpec::Synth(SynthConfig::default()),
            encoder: EncoderConfig::default(),
            g2g: G2GConfig::default(),
            rew: RewConfig::default(),
            optim: AdamConfig::default(),
            epochs: 200,
            patience: 50,
            seed: 0,
            ratios: (6, 2, 2),
            head_fraction: 0.2,
            head_count: None,
            ablation: Ablation::None,
            energy_trace: None,
            g2g_dump: None,
        }
    }
}

impl RunConfig {
    /// Overlay values from a flat `key = value` config file. Lines starting
    /// with `#` and blank lines are ignored; unknown keys are errors.
    pub fn apply_config_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| SimbaError::MissingFile(path.to_path_buf()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SimbaError::Config(format!("{}:{}: expected key = value", path.display(), lineno + 1))
            })?;
            self.set_key(key.trim(), value.trim()).map_err(|e| {
                SimbaError::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    /// Apply a single configuration key. The key set mirrors the CLI flags.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| SimbaError::Config(format!("bad value {v:?} for key {k}"));
        match key {
            "dataset" => self.dataset = DatasetSpec::parse(value)?,
            "backbone" => self.encoder.backbone = value.parse()?,
            "layers" => self.encoder.layers = value.parse().map_err(|_| bad(key, value))?,
            "hidden_dim" => self.encoder.hidden_dim = value.parse().map_err(|_| bad(key, value))?,
            "attention_dim" => {
                self.encoder.attention_dim = value.parse().map_err(|_| bad(key, value))?
            }
            "mlp_hidden" => self.encoder.mlp_hidden = value.parse().map_err(|_| bad(key, value))?,
            "k" => self.g2g.k = value.parse().map_err(|_| bad(key, value))?,
            "g2g_hops" => self.g2g.hops = value.parse().map_err(|_| bad(key, value))?,
            "transductive" => {
                self.g2g.transductive = value.parse().map_err(|_| bad(key, value))?
            }
            "rebuild" => {
                self.g2g.rebuild = match value {
                    "per-epoch" => RebuildSchedule::PerEpoch,
                    "per-step" => RebuildSchedule::PerStep,
                    _ => return Err(bad(key, value)),
                }
            }
            "lambda" => self.rew.lambda = value.parse().map_err(|_| bad(key, value))?,
            "t_steps" => self.rew.steps = value.parse().map_err(|_| bad(key, value))?,
            "eps_min" => self.rew.eps_min = value.parse().map_err(|_| bad(key, value))?,
            "eps_max" => self.rew.eps_max = value.parse().map_err(|_| bad(key, value))?,
            "lr" => self.optim.lr = value.parse().map_err(|_| bad(key, value))?,
            "beta1" => self.optim.beta1 = value.parse().map_err(|_| bad(key, value))?,
            "beta2" => self.optim.beta2 = value.parse().map_err(|_| bad(key, value))?,
            "adam_eps" => self.optim.eps = value.parse().map_err(|_| bad(key, value))?,
            "weight_decay" => {
                self.optim.weight_decay = value.parse().map_err(|_| bad(key, value))?
            }
            "epochs" => self.epochs = value.parse().map_err(|_| bad(key, value))?,
            "patience" => self.patience = value.parse().map_err(|_| bad(key, value))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "ratios" => {
                let parts: Vec<&str> = value.split(':').collect();
                if parts.len() != 3 {
                    return Err(bad(key, value));
                }
                self.ratios = (
                    parts[0].parse().map_err(|_| bad(key, value))?,
                    parts[1].parse().map_err(|_| bad(key, value))?,
                    parts[2].parse().map_err(|_| bad(key, value))?,
                );
            }
            "head_fraction" => self.head_fraction = value.parse().map_err(|_| bad(key, value))?,
            "head_count" => self.head_count = Some(value.parse().map_err(|_| bad(key, value))?),
            "ablate" => self.ablation = value.parse()?,
            "energy_trace" => self.energy_trace = Some(PathBuf::from(value)),
            "g2g_dump" => self.g2g_dump = Some(PathBuf::from(value)),
            other => {
                return Err(SimbaError::Config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.rew.validate()?;
        if !(self.head_fraction > 0.0 && self.head_fraction < 1.0) {
            return Err(SimbaError::Argument(format!(
                "head fraction must lie in (0,1), got {}",
                self.head_fraction
            )));
        }
        if self.epochs == 0 {
            return Err(SimbaError::Argument("epochs must be positive".into()));
        }
        if self.g2g.k == 0 {
            return Err(SimbaError::Argument("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_spec_from_dir() {
        let spec = DatasetSpec::parse("data/PTC_MR").unwrap();
        assert_eq!(
            spec,
            DatasetSpec::Dir {
                path: PathBuf::from("data/PTC_MR"),
                name: "PTC_MR".to_string()
            }
        );
    }

    #[test]
    fn dataset_spec_synth_recipe() {
        let spec = DatasetSpec::parse("synth:n=100,alpha=1.5,min=6,max=40,seed=9").unwrap();
        match spec {
            DatasetSpec::Synth(cfg) => {
                assert_eq!(cfg.n_graphs, 100);
                assert_eq!(cfg.size_exponent, 1.5);
                assert_eq!(cfg.size_range, (6, 40));
                assert_eq!(cfg.seed, 9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synth_recipe_rejects_unknown_keys() {
        assert!(DatasetSpec::parse("synth:frobnicate=1").is_err());
    }

    #[test]
    fn config_file_overlay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# comment\nbackbone = gcn\nk = 3\nlambda = 0.7\nratios = 8:1:1\nepochs= 77\n",
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_config_file(&path).unwrap();
        assert_eq!(cfg.encoder.backbone, crate::encoder::Backbone::Gcn);
        assert_eq!(cfg.g2g.k, 3);
        assert_eq!(cfg.rew.lambda, 0.7);
        assert_eq!(cfg.ratios, (8, 1, 1));
        assert_eq!(cfg.epochs, 77);
    }

    #[test]
    fn config_file_unknown_key_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        std::fs::write(&path, "zzz = 1\n").unwrap();
        let mut cfg = RunConfig::default();
        let err = cfg.apply_config_file(&path).unwrap_err().to_string();
        assert!(err.contains("zzz"), "{err}");
    }
}
