//! TOML experiment configuration.
//!
//! Every key is optional. The top-level `seed` feeds every stage that does not
//! set its own. Unknown keys are rejected so typos surface as errors.

use std::path::Path;

use rfadv::attacks::{BoxBounds, CwConfig};
use rfadv::blackbox::CampaignConfig;
use rfadv::models::{ArchitectureSpec, Family, MlpSpec, TrainConfig};
use rfadv::sigkit::GeneratorConfig;
use rfadv::tensor::OptimizerKind;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub generator: GeneratorSection,
    pub split: SplitSection,
    pub victim: VictimSection,
    pub campaign: CampaignSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub frames_per_class_per_snr: Option<usize>,
    pub samples_per_symbol: Option<usize>,
    pub rrc_rolloff: Option<f64>,
    pub rrc_span_symbols: Option<usize>,
    pub snr_list: Option<Vec<i32>>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: f64,
    pub seed: Option<u64>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            test_fraction: 0.5,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    /// `adam` or `sgd`.
    pub optimizer: Option<String>,
    pub learning_rate: Option<f32>,
    pub momentum: Option<f32>,
    pub validation_fraction: Option<f64>,
    /// Gradient norm cap; 0 disables clipping.
    pub grad_clip: Option<f32>,
    pub seed: Option<u64>,
}

impl TrainSection {
    fn apply(&self, base: TrainConfig, seed: u64, prefix: &str) -> Result<TrainConfig, CliError> {
        let lr = self.learning_rate.unwrap_or(base.optimizer.learning_rate());
        let name = match (&self.optimizer, base.optimizer) {
            (Some(name), _) => name.as_str(),
            (None, OptimizerKind::Adam { .. }) => "adam",
            (None, OptimizerKind::Sgd { .. }) => "sgd",
        };
        let optimizer = match (name, self.momentum) {
            ("adam", None) => OptimizerKind::Adam { lr },
            ("adam", Some(_)) => {
                return Err(CliError::Config(format!(
                    "{prefix}.momentum only applies to optimizer = \"sgd\""
                )))
            }
            ("sgd", m) => OptimizerKind::Sgd {
                lr,
                momentum: m.unwrap_or(0.0),
            },
            (other, _) => {
                return Err(CliError::Config(format!(
                    "{prefix}.optimizer: unknown optimizer {other:?} (expected adam or sgd)"
                )))
            }
        };
        let config = TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            optimizer,
            seed: self.seed.unwrap_or(seed),
            validation_fraction: self.validation_fraction.unwrap_or(base.validation_fraction),
            grad_clip: match self.grad_clip {
                Some(0.0) => None,
                Some(c) => Some(c),
                None => base.grad_clip,
            },
        };
        config
            .validate()
            .map_err(|e| CliError::Config(format!("{prefix}: {e}")))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VictimSection {
    /// `cnn`, `lstm` or `mlp`.
    pub family: String,
    /// Seeds parameter initialization.
    pub init_seed: Option<u64>,
    pub train: TrainSection,
}

impl Default for VictimSection {
    fn default() -> Self {
        Self {
            family: "cnn".into(),
            init_seed: None,
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSection {
    pub hidden: Option<Vec<usize>>,
    pub dropout: Option<f32>,
    pub train: TrainSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CwSection {
    pub initial_c: Option<f64>,
    pub binary_search_steps: Option<usize>,
    pub max_iterations: Option<usize>,
    pub learning_rate: Option<f64>,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub query_budget_fraction: Option<f64>,
    /// Evaluation frames per (class, SNR) cell; 0 uses every unqueried test frame.
    pub eval_per_cell: Option<usize>,
    pub high_snr_threshold: Option<i32>,
    pub seed: Option<u64>,
    pub surrogate: SurrogateSection,
    pub cw: CwSection,
}

impl ExperimentConfig {
    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::missing(path),
            _ => CliError::Config(format!("{}: {e}", path.display())),
        })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.generator()?;
        config.victim_train()?;
        Ok(config)
    }

    pub fn generator(&self) -> Result<GeneratorConfig, CliError> {
        let g = &self.generator;
        let base = GeneratorConfig::default();
        let config = GeneratorConfig {
            frames_per_class_per_snr: g.frames_per_class_per_snr.unwrap_or(base.frames_per_class_per_snr),
            samples_per_symbol: g.samples_per_symbol.unwrap_or(base.samples_per_symbol),
            rrc_rolloff: g.rrc_rolloff.unwrap_or(base.rrc_rolloff),
            rrc_span_symbols: g.rrc_span_symbols.unwrap_or(base.rrc_span_symbols),
            seed: g.seed.unwrap_or(self.seed),
            snr_list: g.snr_list.clone().unwrap_or(base.snr_list),
        };
        config
            .validate()
            .map_err(|e| CliError::Config(format!("generator: {e}")))?;
        Ok(config)
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(self.seed)
    }

    pub fn family(&self) -> Result<Family, CliError> {
        self.victim
            .family
            .parse()
            .map_err(|e| CliError::Config(format!("victim.family: {e}")))
    }

    pub fn victim_spec(&self) -> Result<ArchitectureSpec, CliError> {
        Ok(ArchitectureSpec::default_for(self.family()?))
    }

    pub fn victim_init_seed(&self) -> u64 {
        self.victim.init_seed.unwrap_or(self.seed)
    }

    pub fn victim_train(&self) -> Result<TrainConfig, CliError> {
        let base = TrainConfig::victim_default(self.family()?);
        self.victim.train.apply(base, self.seed, "victim.train")
    }

    pub fn campaign(&self, bounds: BoxBounds) -> Result<CampaignConfig, CliError> {
        let c = &self.campaign;
        let mut config = CampaignConfig::new(bounds);
        config.test_fraction = self.split.test_fraction;
        config.split_seed = self.split_seed();
        config.seed = c.seed.unwrap_or(self.seed);
        if let Some(f) = c.query_budget_fraction {
            config.query_budget_fraction = f;
        }
        if let Some(n) = c.eval_per_cell {
            config.eval_per_cell = (n > 0).then_some(n);
        }
        if let Some(t) = c.high_snr_threshold {
            config.high_snr_threshold = t;
        }
        let default_mlp = MlpSpec::default();
        config.surrogate = ArchitectureSpec::Mlp(MlpSpec {
            hidden: c.surrogate.hidden.clone().unwrap_or(default_mlp.hidden),
            dropout: c.surrogate.dropout.unwrap_or(default_mlp.dropout),
        });
        config.surrogate_train =
            c.surrogate
                .train
                .apply(config.surrogate_train.clone(), config.seed, "campaign.surrogate.train")?;
        let cw = &c.cw;
        config.cw = CwConfig {
            initial_c: cw.initial_c.unwrap_or(config.cw.initial_c),
            binary_search_steps: cw.binary_search_steps.unwrap_or(config.cw.binary_search_steps),
            max_iterations: cw.max_iterations.unwrap_or(config.cw.max_iterations),
            learning_rate: cw.learning_rate.unwrap_or(config.cw.learning_rate),
            confidence: cw.confidence.unwrap_or(config.cw.confidence),
            bounds,
        };
        config.victim_id = self.victim.family.to_ascii_lowercase();
        config
            .validate()
            .map_err(|e| CliError::Config(format!("campaign: {e}")))?;
        Ok(config)
    }
}
