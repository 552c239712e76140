//! TOML experiment configuration. One file fixes the data source, network,
//! training objective, split plan, grid and output directory; see
//! `configs/` at the repository root for complete files.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::{adult_preset, load_csv, synthesize_biased, synthetic_schema, DatasetSchema, RawTable, SplitPlan, SynthParams};
use crate::engine::{GridSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::losses::{DenominatorMode, FairnessTerm, Objective, SoftVariant};
use crate::metrics::MeasureKind;
use crate::nn::{Activation, AdamConfig, HiddenSpec, NetworkConfig};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_label")]
    pub label: String,
    pub data: DataSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub split: SplitPlan,
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_label() -> String {
    "this work".into()
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// `adult` for the census file layout.
    pub preset: Option<String>,
    pub schema: Option<DatasetSchema>,
    /// Generate data instead of reading a file.
    pub synthetic: Option<SynthParams>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Per-layer override of `activation`.
    pub activations: Option<Vec<Activation>>,
    pub dropout: f64,
    pub batch_norm: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden: vec![108, 108],
            activation: Activation::Relu,
            activations: None,
            dropout: 0.1,
            batch_norm: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub mode: DenominatorMode,
    /// `measure:variant:alpha:k[:beta]` strings.
    pub terms: Vec<String>,
    pub seed: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainingSection {
            batch_size: 256,
            epochs: 100,
            learning_rate: adam.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            mode: DenominatorMode::default(),
            terms: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Measure sets, e.g. `[["STP"], ["FPR", "FNR"]]`.
    pub templates: Vec<Vec<String>>,
    /// `continuous` and/or `sigmoided`.
    pub variants: Vec<String>,
    /// Sharpness used by sigmoided variants.
    pub beta: f64,
    pub powers: Vec<u32>,
    pub alphas: Vec<f64>,
    /// Extra cells as lists of term strings.
    pub cells: Vec<Vec<String>>,
    pub include_baseline: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridSpec::default();
        GridSection {
            templates: Vec::new(),
            variants: vec!["continuous".into()],
            beta: 1.0,
            powers: g.powers,
            alphas: g.alphas,
            cells: Vec::new(),
            include_baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

fn parse_terms(terms: &[String]) -> Result<Vec<FairnessTerm>> {
    terms.iter().map(|t| t.parse()).collect()
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn from_toml(text: &str, base_dir: PathBuf) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let d = &self.data;
        match (&d.path, &d.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Config("data: give either `path` or `synthetic`, not both".into())),
            (None, None) => return Err(Error::Config("data: one of `path` or `synthetic` is required".into())),
            _ => {}
        }
        if d.path.is_some() && d.preset.is_none() && d.schema.is_none() {
            return Err(Error::Config("data: a file source needs `preset` or `schema`".into()));
        }
        if let Some(p) = &d.preset {
            if p != "adult" {
                return Err(Error::Config(format!("data: unknown preset `{p}`")));
            }
        }
        self.train_config()?;
        if self.grid.is_some() {
            self.grid_spec()?;
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// File the data is read from (`override_path` wins), if any.
    pub fn data_path(&self, override_path: Option<&Path>) -> Option<PathBuf> {
        override_path.map(Path::to_path_buf).or_else(|| self.data.path.as_deref().map(|p| self.resolve(p)))
    }

    pub fn schema(&self) -> DatasetSchema {
        match (&self.data.schema, &self.data.synthetic) {
            (Some(s), _) => s.clone(),
            (None, Some(p)) => synthetic_schema(p.feature_dim),
            (None, None) => adult_preset(),
        }
    }

    pub fn load_table(&self, override_path: Option<&Path>) -> Result<RawTable> {
        match (self.data_path(override_path), &self.data.synthetic) {
            (Some(path), _) => load_csv(path, &self.schema()),
            (None, Some(p)) => synthesize_biased(p),
            (None, None) => unreachable!("validated"),
        }
    }

    /// Training settings with `input_dim` left at 0 for the engine to fill.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let n = &self.network;
        let activations = match &n.activations {
            Some(a) if a.len() != n.hidden.len() => {
                return Err(Error::Config("network: `activations` must list one entry per hidden layer".into()))
            }
            Some(a) => a.clone(),
            None => vec![n.activation; n.hidden.len()],
        };
        let t = &self.training;
        let network = NetworkConfig {
            input_dim: 0,
            hidden: n.hidden.iter().zip(activations).map(|(&width, activation)| HiddenSpec { width, activation }).collect(),
            dropout_rate: n.dropout,
            use_batch_norm: n.batch_norm,
            seed: t.seed,
        };
        let config = TrainConfig {
            network,
            objective: Objective::new(parse_terms(&t.terms)?, t.mode)?,
            batch_size: t.batch_size,
            epochs: t.epochs,
            adam: AdamConfig { lr: t.learning_rate, beta1: t.adam_beta1, beta2: t.adam_beta2, eps: t.adam_eps },
            seed: t.seed,
            keep_trace: true,
        };
        // input width is only known after encoding
        let mut probe = config.clone();
        probe.network.input_dim = 1;
        probe.validate()?;
        Ok(config)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let g = self.grid.as_ref().ok_or_else(|| Error::Config("config has no [grid] section".into()))?;
        let templates = g
            .templates
            .iter()
            .map(|t| t.iter().map(|m| m.parse::<MeasureKind>()).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let variants = g
            .variants
            .iter()
            .map(|v| match v.trim().to_ascii_lowercase().as_str() {
                "continuous" => Ok(SoftVariant::Continuous),
                "sigmoided" => Ok(SoftVariant::Sigmoided { beta: g.beta }),
                other => Err(Error::Config(format!("grid: unknown variant `{other}`"))),
            })
            .collect::<Result<_>>()?;
        let spec = GridSpec {
            templates,
            variants,
            powers: g.powers.clone(),
            alphas: g.alphas.clone(),
            extra_cells: g.cells.iter().map(|c| parse_terms(c)).collect::<Result<_>>()?,
            include_baseline: g.include_baseline,
        };
        spec.cells()?;
        Ok(spec)
    }

    pub fn output_dir(&self, override_dir: Option<&Path>) -> Result<PathBuf> {
        override_dir
            .map(Path::to_path_buf)
            .or_else(|| self.output.dir.as_deref().map(|p| self.resolve(p)))
            .ok_or_else(|| Error::Config("no output directory: pass --out or set [output] dir".into()))
    }

    /// Replaces the split and training seeds.
    pub fn override_seed(&mut self, seed: u64) {
        self.split.base_seed = seed;
        self.training.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
label = "Architecture 2"

[data]
path = "adult.csv"
preset = "adult"

[network]
hidden = [108, 324]
activation = "leaky_relu"
dropout = 0.1
batch_norm = true

[training]
batch_size = 256
epochs = 100
mode = "as-written"
terms = ["STP:continuous:0.84:4"]
seed = 3

[split]
iterations = 10
train_fraction = 0.7
validation_fraction = 0.1
base_seed = 3

[grid]
templates = [["STP"], ["FPR", "FNR"]]
variants = ["continuous", "sigmoided"]
beta = 2.0
powers = [4]
alphas = [0.0, 0.5, 0.84]
cells = [["FPR:sigmoided:0.1:3", "FNR:sigmoided:0.125:3"]]

[output]
dir = "runs/arch2"
"#;

    #[test]
    fn parses_a_full_config() {
        let cfg = ExperimentConfig::from_toml(FULL, PathBuf::from("/cfg")).unwrap();
        assert_eq!(cfg.label, "Architecture 2");
        assert_eq!(cfg.data_path(None).unwrap(), PathBuf::from("/cfg/adult.csv"));
        assert_eq!(cfg.schema(), adult_preset());
        let t = cfg.train_config().unwrap();
        assert_eq!(t.network.widths(), vec![108, 324]);
        assert_eq!(t.network.hidden[1].activation, Activation::LeakyRelu);
        assert_eq!(t.objective.terms.len(), 1);
        assert_eq!(t.objective.terms[0].alpha, 0.84);
        let g = cfg.grid_spec().unwrap();
        assert_eq!(g.variants[1], SoftVariant::Sigmoided { beta: 2.0 });
        // 2 templates x 2 variants x {0, 0.5, 0.84} + zeroed extra + extra
        assert_eq!(g.cells().unwrap().len(), 14);
        assert_eq!(cfg.output_dir(None).unwrap(), PathBuf::from("/cfg/runs/arch2"));
        assert_eq!(cfg.split.iterations, 10);
    }

    #[test]
    fn defaults_and_synthetic_source() {
        let cfg = ExperimentConfig::from_toml("[data.synthetic]\nn = 500\nfeature_dim = 3\n", PathBuf::new()).unwrap();
        assert_eq!(cfg.network.hidden, vec![108, 108]);
        assert_eq!(cfg.training.batch_size, 256);
        assert_eq!(cfg.split, SplitPlan::default());
        let t = cfg.load_table(None).unwrap();
        assert_eq!(t.len(), 500);
        assert_eq!(t.features.len(), 3);
        assert!(cfg.grid_spec().is_err());
        assert!(cfg.output_dir(None).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            "[data]\n",
            "[data]\npath = \"x.csv\"\n",
            "[data]\npath = \"x.csv\"\npreset = \"iris\"\n",
            "[data.synthetic]\n[training]\nterms = [\"FPR:bogus:1:1\"]\n",
            "[data.synthetic]\n[training]\nbatch_size = 1\n",
            "[data.synthetic]\n[network]\nhidden = [4, 4]\nactivations = [\"relu\"]\n",
            "[data.synthetic]\nunknown_key = 1\n",
            "[data.synthetic]\n[grid]\ntemplates = [[\"XYZ\"]]\n",
        ];
        for text in bad {
            assert!(matches!(ExperimentConfig::from_toml(text, PathBuf::new()), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn seed_override() {
        let mut cfg = ExperimentConfig::from_toml(FULL, PathBuf::new()).unwrap();
        cfg.override_seed(42);
        assert_eq!(cfg.split.base_seed, 42);
        assert_eq!(cfg.train_config().unwrap().seed, 42);
    }
}
