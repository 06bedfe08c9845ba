//! Experiment configuration files (TOML).
//!
//! ```toml
//! master_seed = 7
//! seeds = 3
//! workers = 1
//! output_dir = "out"
//! attacks = ["gap", "confidence", "entropy", "modified_entropy", "nn"]
//! headline_attack = "confidence"
//!
//! [dataset]
//! synthetic = { classes = 100, per_class = 150, dim = 600, cluster_tightness = 0.98, flip_prob = 0.1 }
//! seed = 1
//! # or: path = "purchase100.csv", label_base = 1, binary = true
//!
//! [split]
//! n_train = 5000
//! n_reference = 5000
//! n_test = 5000
//! n_attacker = 0
//!
//! [model]            # defaults for every defense
//! hidden_layers = [256, 128]
//! epochs = 20
//! batch_size = 128
//!
//! [[defense]]
//! kind = "werm"
//! w = [0.0, 0.1, 0.3, 0.5]
//!
//! [[defense]]
//! kind = "mmd"
//! lambda = [0.1, 1.0]
//! batch_size = 512
//! ```
//!
//! Per-defense keys override `[model]`, which overrides the kind's defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, NnAttackConfig};
use crate::datasets::{load_tabular, synthesize, LabeledDataset, SyntheticParams, TabularFormat};
use crate::defenses::{DefenseKind, DefenseSpec, DpParams};
use crate::error::{Error, Result};
use crate::numeric::OptimizerKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub label_base: Option<usize>,
    #[serde(default)]
    pub binary: Option<bool>,
    #[serde(default)]
    pub synthetic: Option<SyntheticParams>,
    /// Seed of the synthetic generator; defaults to the master seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub n_train: usize,
    pub n_reference: usize,
    pub n_test: usize,
    #[serde(default)]
    pub n_attacker: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_layers: Option<Vec<usize>>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSection {
    pub kind: DefenseKind,
    pub w: Option<OneOrMany>,
    pub lambda: Option<OneOrMany>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub hidden_layers: Option<Vec<usize>>,
    pub attack_hidden: Option<Vec<usize>>,
    pub update_ratio: Option<usize>,
    pub kernel_variance: Option<f64>,
    pub warmup_epochs: Option<usize>,
    pub dp: Option<DpParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    #[serde(default = "default_epsilon_0")]
    pub epsilon_0: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Defaults to the classifier's parameter count.
    pub vc_dim: Option<f64>,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
}

fn default_epsilon_0() -> f64 {
    1000.0
}
fn default_delta() -> f64 {
    1e-5
}
fn default_grid() -> usize {
    101
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            epsilon_0: default_epsilon_0(),
            delta: default_delta(),
            vc_dim: None,
            grid_points: default_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    master_seed: u64,
    #[serde(default = "default_seeds")]
    seeds: usize,
    #[serde(default = "default_workers")]
    workers: usize,
    #[serde(default = "default_output")]
    output_dir: PathBuf,
    attacks: Vec<AttackKind>,
    #[serde(default = "default_headline")]
    headline_attack: AttackKind,
    dataset: DatasetSection,
    split: SplitSizes,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    nn_attack: NnAttackConfig,
    #[serde(default)]
    theory: TheorySection,
    #[serde(default)]
    defense: Vec<DefenseSection>,
}

fn default_seeds() -> usize {
    10
}
fn default_workers() -> usize {
    1
}
fn default_output() -> PathBuf {
    PathBuf::from("report")
}
fn default_headline() -> AttackKind {
    AttackKind::ConfidenceThreshold
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    File { path: PathBuf, format: TabularFormat },
    Synthetic { params: SyntheticParams, seed: u64 },
}

impl DatasetSource {
    pub fn load(&self) -> Result<LabeledDataset> {
        match self {
            DatasetSource::File { path, format } => load_tabular(path, *format),
            DatasetSource::Synthetic { params, seed } => synthesize(params, *seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub split: SplitSizes,
    pub defenses: Vec<DefenseSpec>,
    pub attacks: Vec<AttackKind>,
    /// Attack summarized as `mia_train` / `mia_ref`.
    pub headline_attack: AttackKind,
    pub nn_attack: NnAttackConfig,
    pub seeds: usize,
    pub workers: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub theory: TheorySection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_raw(raw, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn from_raw(raw: RawConfig, base_dir: &Path) -> Result<Self> {
        let dataset = match (&raw.dataset.path, &raw.dataset.synthetic) {
            (Some(p), None) => DatasetSource::File {
                path: if p.is_absolute() { p.clone() } else { base_dir.join(p) },
                format: TabularFormat {
                    label_base: raw.dataset.label_base.unwrap_or(0),
                    binary: raw.dataset.binary.unwrap_or(false),
                },
            },
            (None, Some(params)) => DatasetSource::Synthetic {
                params: *params,
                seed: raw.dataset.seed.unwrap_or(raw.master_seed),
            },
            _ => {
                return Err(Error::Config(
                    "[dataset] needs exactly one of `path` or `synthetic`".into(),
                ))
            }
        };
        let mut defenses = Vec::new();
        for d in &raw.defense {
            defenses.extend(expand_defense(d, &raw.model)?);
        }
        let output_dir = if raw.output_dir.is_absolute() {
            raw.output_dir
        } else {
            base_dir.join(raw.output_dir)
        };
        let config = ExperimentConfig {
            dataset,
            split: raw.split,
            defenses,
            attacks: raw.attacks,
            headline_attack: raw.headline_attack,
            nn_attack: raw.nn_attack,
            seeds: raw.seeds,
            workers: raw.workers,
            master_seed: raw.master_seed,
            output_dir,
            theory: raw.theory,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.defenses.is_empty() {
            return Err(Error::Config("at least one [[defense]] is required".into()));
        }
        if self.attacks.is_empty() {
            return Err(Error::Config("at least one attack is required".into()));
        }
        if !self.attacks.contains(&self.headline_attack) {
            return Err(Error::Config(format!(
                "headline attack {} is not in the attack list",
                self.headline_attack
            )));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let s = self.split;
        if s.n_train == 0 || s.n_reference == 0 || s.n_test == 0 {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        if self.attacks.contains(&AttackKind::NeuralNetwork) && s.n_attacker < 2 {
            return Err(Error::Config(
                "the nn attack needs split.n_attacker >= 2 for the shadow model".into(),
            ));
        }
        if !(self.theory.epsilon_0 > 0.0) || !(self.theory.delta > 0.0 && self.theory.delta < 1.0) {
            return Err(Error::Config("theory needs epsilon_0 > 0 and delta in (0, 1)".into()));
        }
        for d in &self.defenses {
            d.validate()?;
        }
        Ok(())
    }

    /// Parameter count of the first defense's classifier, given input width
    /// and class count.
    pub fn parameter_count(&self, dim: usize, classes: usize) -> usize {
        let mut sizes = vec![dim];
        sizes.extend(&self.defenses[0].hidden_layers);
        sizes.push(classes);
        sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

fn expand_defense(d: &DefenseSection, model: &ModelSection) -> Result<Vec<DefenseSpec>> {
    let mut base = DefenseSpec::new(d.kind);
    macro_rules! layer {
        ($field:ident) => {
            if let Some(v) = d.$field.clone().or(model.$field.clone()) {
                base.$field = v;
            }
        };
    }
    layer!(epochs);
    layer!(batch_size);
    layer!(learning_rate);
    layer!(optimizer);
    layer!(hidden_layers);
    if let Some(v) = d.attack_hidden.clone() {
        base.attack_hidden = v;
    }
    if let Some(v) = d.update_ratio {
        base.update_ratio = v;
    }
    if let Some(v) = d.kernel_variance {
        base.kernel_variance = v;
    }
    if let Some(v) = d.warmup_epochs {
        base.warmup_epochs = v;
    }
    base.dp = d.dp;

    let kind = d.kind;
    match (kind.uses_weight(), kind.uses_lambda(), &d.w, &d.lambda) {
        (true, _, Some(ws), None) => Ok(ws
            .values()
            .into_iter()
            .map(|w| DefenseSpec { w, ..base.clone() })
            .collect()),
        (_, true, None, Some(ls)) => Ok(ls
            .values()
            .into_iter()
            .map(|lambda| DefenseSpec { lambda, ..base.clone() })
            .collect()),
        (false, false, None, None) => Ok(vec![base]),
        (true, _, None, _) => Err(Error::Config(format!("{kind} needs `w`"))),
        (_, true, _, None) => Err(Error::Config(format!("{kind} needs `lambda`"))),
        _ => Err(Error::Config(format!("{kind} does not take that parameter"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        master_seed = 3
        seeds = 2
        attacks = ["confidence", "gap"]
        [dataset]
        synthetic = { classes = 4, per_class = 30, dim = 12, cluster_tightness = 0.2, flip_prob = 0.1 }
        [split]
        n_train = 30
        n_reference = 30
        n_test = 30
        [model]
        hidden_layers = [8]
        epochs = 3
    "#;

    #[test]
    fn expands_parameter_arrays() {
        let text = format!(
            "{BASE}\n[[defense]]\nkind = \"werm\"\nw = [0.0, 0.5]\n[[defense]]\nkind = \"mmd\"\nlambda = 2.0\nepochs = 1\n[[defense]]\nkind = \"werm_es\"\nw = 0.2\n"
        );
        let c = ExperimentConfig::from_toml_str(&text, Path::new("/tmp")).unwrap();
        assert_eq!(c.defenses.len(), 4);
        assert_eq!(c.defenses[1].w, 0.5);
        assert_eq!(c.defenses[0].hidden_layers, vec![8]);
        assert_eq!((c.defenses[2].lambda, c.defenses[2].epochs, c.defenses[2].batch_size), (2.0, 1, 512));
        assert_eq!(c.defenses[3].epochs, 3);
        assert_eq!(c.output_dir, PathBuf::from("/tmp/report"));
        assert_eq!(c.headline_attack, AttackKind::ConfidenceThreshold);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            format!("{BASE}"),
            format!("{BASE}\n[[defense]]\nkind = \"werm\"\n"),
            format!("{BASE}\n[[defense]]\nkind = \"werm\"\nlambda = 1.0\nw = 0.1\n"),
            format!("{BASE}\n[[defense]]\nkind = \"werm\"\nw = 1.5\n"),
            format!("{BASE}\n[[defense]]\nkind = \"erm\"\nbogus = 1\n"),
            format!("{BASE}\nseeds = 0\n[[defense]]\nkind = \"erm\"\n").replace("seeds = 2\n", ""),
            format!("{BASE}\n[[defense]]\nkind = \"erm\"\n").replace("\"gap\"", "\"nn\""),
            format!("{BASE}\n[[defense]]\nkind = \"erm\"\n").replace("attacks = [\"confidence\", \"gap\"]", "attacks = [\"gap\"]"),
        ];
        for (i, text) in cases.iter().enumerate() {
            let err = ExperimentConfig::from_toml_str(text, Path::new(".")).unwrap_err();
            assert!(err.is_config(), "case {i}: {err}");
        }
    }
}
