//! TOML run configuration.
//!
//! ```toml
//! [model]
//! kind = "transformer"
//! vocab_size = 16
//! weight_seed = 3
//!
//! [decode]
//! strategy = "soft_thinking"
//! max_total_tokens = 256
//! [decode.sampling]
//! top_n = 5
//! [decode.cold_stop]
//! tau = 0.1
//! k_consecutive = 4
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::DecodeConfig;
use crate::error::{Error, Result};
use crate::metrics::{Problem, SweepGrid};
use crate::model::{
    MarkovLm, MarkovLmSpec, ReferenceModel, ReferenceTransformer, ReferenceTransformerSpec,
    SpecialTokens, Vocabulary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkovFamily {
    /// Flat-Dirichlet rows; answers are read from a second random matrix.
    Random,
    /// See [`MarkovLmSpec::reasoning_task`].
    #[default]
    ReasoningTask,
    /// `transition` and `answer_head` given in the file.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarkovModelConfig {
    pub family: MarkovFamily,
    pub vocab_size: usize,
    pub seed: u64,
    pub transition: Option<Vec<Vec<f64>>>,
    pub answer_head: Option<Vec<Vec<f64>>>,
}

impl Default for MarkovModelConfig {
    fn default() -> Self {
        Self {
            family: MarkovFamily::default(),
            vocab_size: 11,
            seed: 0,
            transition: None,
            answer_head: None,
        }
    }
}

impl MarkovModelConfig {
    pub fn spec(&self) -> Result<MarkovLmSpec> {
        match self.family {
            MarkovFamily::Random => Ok(MarkovLmSpec::random(self.vocab_size, self.seed)),
            MarkovFamily::ReasoningTask => MarkovLmSpec::reasoning_task(self.vocab_size, self.seed),
            MarkovFamily::Explicit => match (&self.transition, &self.answer_head) {
                (Some(t), Some(h)) => Ok(MarkovLmSpec {
                    transition: t.clone(),
                    answer_head: h.clone(),
                }),
                (Some(t), None) => Ok(MarkovLmSpec::chain(t.clone())),
                _ => Err(Error::InvalidConfig(
                    "explicit markov model needs a transition matrix".into(),
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Transformer(ReferenceTransformerSpec),
    Markov(MarkovModelConfig),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Transformer(ReferenceTransformerSpec::default())
    }
}

/// A constructed model with its vocabulary.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: ReferenceModel,
    pub special: SpecialTokens,
    pub vocab: Vocabulary,
}

impl ModelConfig {
    pub fn build(&self) -> Result<LoadedModel> {
        let (model, special) = match self {
            ModelConfig::Transformer(spec) => (
                ReferenceModel::Transformer(ReferenceTransformer::new(spec.clone())?),
                spec.special,
            ),
            ModelConfig::Markov(cfg) => (
                ReferenceModel::Markov(MarkovLm::new(&cfg.spec()?)?),
                SpecialTokens::default(),
            ),
        };
        let vocab = Vocabulary::synthetic(crate::model::LanguageModel::vocab_size(&model), special)?;
        Ok(LoadedModel {
            model,
            special,
            vocab,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub grid: SweepGrid,
    pub samples_per_problem: usize,
    /// Explicit problems; when absent, `synthetic_count` problems are generated.
    pub problems: Option<Vec<Problem>>,
    pub synthetic_count: usize,
    pub prompt_len: usize,
    /// Thought length used to derive synthetic references.
    pub reference_thought_length: usize,
    pub problem_seed: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            grid: SweepGrid::default(),
            samples_per_problem: 4,
            problems: None,
            synthetic_count: 8,
            prompt_len: 2,
            reference_thought_length: 4,
            problem_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub model: ModelConfig,
    pub decode: DecodeConfig,
    pub sweep: SweepSection,
    pub output: OutputConfig,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            context: "run config".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                context: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            context: "run config".into(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::Strategy;

    #[test]
    fn doc_example_parses() {
        let text = r#"
[model]
kind = "transformer"
vocab_size = 16
weight_seed = 3

[decode]
strategy = "soft_thinking"
max_total_tokens = 256
[decode.sampling]
top_n = 5
[decode.cold_stop]
tau = 0.1
k_consecutive = 4
"#;
        let cfg = RunConfigFile::parse(text).unwrap();
        assert_eq!(cfg.decode.strategy, Strategy::SoftThinking);
        assert_eq!(cfg.decode.sampling.top_n, 5);
        assert_eq!(cfg.decode.sampling.top_k, 30);
        assert_eq!(cfg.decode.cold_stop.k_consecutive, 4);
        match &cfg.model {
            ModelConfig::Transformer(s) => assert_eq!(s.weight_seed, 3),
            other => panic!("{other:?}"),
        }
        cfg.model.build().unwrap();
    }

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(RunConfigFile::parse("").unwrap(), RunConfigFile::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "bogus = 1",
            "[decode]\nmax_total = 3",
            "[decode.sampling]\ntopn = 3",
            "[model]\nkind = \"markov\"\nwidth = 3",
            "[model]\nkind = \"transformer\"\nwidth = 3",
        ] {
            assert!(
                matches!(RunConfigFile::parse(text), Err(Error::Parse { .. })),
                "{text}"
            );
        }
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfigFile {
            model: ModelConfig::Markov(MarkovModelConfig::default()),
            ..Default::default()
        };
        cfg.decode.max_thinking_tokens = Some(40);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfigFile::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn markov_families_build() {
        for family in [MarkovFamily::Random, MarkovFamily::ReasoningTask] {
            let cfg = ModelConfig::Markov(MarkovModelConfig {
                family,
                ..Default::default()
            });
            assert_eq!(cfg.build().unwrap().vocab.len(), 11);
        }
        let explicit = ModelConfig::Markov(MarkovModelConfig {
            family: MarkovFamily::Explicit,
            ..Default::default()
        });
        assert!(explicit.build().is_err());
    }
}
