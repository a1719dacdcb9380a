//! Experiment configuration: TOML with `[experiment]`, `[training]`,
//! repeated `[[expert]]`, `[preprocess]`, `[gradcheck]` and `[gate_report]`
//! tables. Every default is filled in so the echo is self-describing.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use amalgam_core::fusion::{GateActivation, COOP_TAU, DEFAULT_K, WTA_TAU};
use amalgam_core::numeric::AdamConfig;
use amalgam_core::preprocess::Step;
use amalgam_core::training::TrainingConfig;
use serde::{Deserialize, Serialize};
use toml::Spanned;

#[derive(Debug, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Variant {
    Sigmoid,
    Coop,
    Wta,
    Concat,
    Single(String),
}

impl Variant {
    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "SIGMOID" => Some(Variant::Sigmoid),
            "COOP" => Some(Variant::Coop),
            "WTA" => Some(Variant::Wta),
            "CONCAT" => Some(Variant::Concat),
            _ => s
                .strip_prefix("SINGLE(")
                .and_then(|r| r.strip_suffix(')'))
                .filter(|name| !name.is_empty())
                .map(|name| Variant::Single(name.to_string())),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Sigmoid => f.write_str("SIGMOID"),
            Variant::Coop => f.write_str("COOP"),
            Variant::Wta => f.write_str("WTA"),
            Variant::Concat => f.write_str("CONCAT"),
            Variant::Single(name) => write!(f, "SINGLE({name})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertKind {
    File,
    Stub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovKind {
    Zero,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub variant: Spanned<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Spanned<f64>>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        TrainingSection {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            val_fraction: t.val_fraction,
            learning_rate: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            epsilon: t.adam.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertSection {
    pub name: Spanned<String>,
    pub kind: ExpertKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oov: Option<OovKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oov_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Shipped dictionary when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<PathBuf>,
    pub steps: Spanned<Vec<String>>,
    pub elongation_threshold: usize,
    pub foreign_script_filter: bool,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            input: None,
            output: None,
            dictionary: None,
            steps: Spanned::new(0..0, Step::ALL.iter().map(|s| s.name().to_string()).collect()),
            elongation_threshold: 3,
            foreign_script_filter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub h: f64,
    pub tol: f64,
    /// Index into the training set.
    pub example: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_coords: Option<usize>,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            h: 1e-5,
            tol: 1e-4,
            example: 0,
            max_coords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateReportSection {
    pub taus: Vec<f64>,
    pub bins: usize,
}

impl Default for GateReportSection {
    fn default() -> Self {
        GateReportSection {
            taus: vec![0.01, 0.1, 10.0, 100.0],
            bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default, rename = "expert")]
    pub experts: Vec<ExpertSection>,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
    #[serde(default)]
    pub gate_report: GateReportSection,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    pub fn variant(&self) -> Variant {
        Variant::parse(self.experiment.variant.get_ref()).expect("validated at load")
    }

    pub fn activation(&self) -> Option<GateActivation> {
        let tau = self.experiment.tau.as_ref().map(|t| *t.get_ref());
        match self.variant() {
            Variant::Sigmoid => Some(GateActivation::Sigmoid),
            Variant::Coop | Variant::Wta => Some(GateActivation::Softmax {
                tau: tau.expect("filled at load"),
            }),
            Variant::Concat | Variant::Single(_) => None,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.training;
        TrainingConfig {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: self.experiment.seed,
            val_fraction: t.val_fraction,
            adam: AdamConfig {
                lr: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.epsilon,
            },
        }
    }

    pub fn steps(&self) -> Vec<Step> {
        let mut steps: Vec<Step> = self
            .preprocess
            .steps
            .get_ref()
            .iter()
            .map(|s| Step::parse(s).expect("validated at load"))
            .collect();
        if !self.preprocess.foreign_script_filter {
            steps.retain(|&s| s != Step::LanguageFilter);
        }
        steps
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.experiment
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.experiment.out.join("model.ckpt"))
    }

    /// TOML echo of the resolved configuration; parses back to `self`.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn set_out(&mut self, out: PathBuf) {
        self.experiment.out = out;
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.experiment.seed = seed;
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        message: format!("cannot read config: {e}"),
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_config(&text, path, base)
}

/// Parses and validates `text`; relative paths are resolved against `base`.
pub fn parse_config(text: &str, path: &Path, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let err = |line: usize, message: String| ConfigError {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(1, |s| line_of(text, s.start));
        err(line, e.message().to_string())
    })?;

    let variant_span = cfg.experiment.variant.span();
    let variant = Variant::parse(cfg.experiment.variant.get_ref()).ok_or_else(|| {
        err(
            line_of(text, variant_span.start),
            format!(
                "variant: expected SIGMOID, COOP, WTA, CONCAT or SINGLE(<expert>), found {:?}",
                cfg.experiment.variant.get_ref()
            ),
        )
    })?;
    match (&variant, &cfg.experiment.tau) {
        (Variant::Coop | Variant::Wta, Some(t)) => {
            if !(*t.get_ref() > 0.0 && t.get_ref().is_finite()) {
                return Err(err(line_of(text, t.span().start), format!("tau: must be positive, got {}", t.get_ref())));
            }
        }
        (Variant::Coop, None) => cfg.experiment.tau = Some(Spanned::new(0..0, COOP_TAU)),
        (Variant::Wta, None) => cfg.experiment.tau = Some(Spanned::new(0..0, WTA_TAU)),
        (_, Some(t)) => {
            return Err(err(line_of(text, t.span().start), format!("tau: only COOP and WTA take a temperature, variant is {variant}")));
        }
        (_, None) => {}
    }
    if cfg.experiment.k == 0 {
        return Err(err(line_of(text, variant_span.start), "k: must be at least 1".into()));
    }

    let t = &cfg.training;
    if t.batch_size == 0 || t.max_epochs == 0 || t.patience == 0 {
        return Err(err(1, "training: batch_size, max_epochs and patience must be at least 1".into()));
    }
    if !(t.val_fraction > 0.0 && t.val_fraction < 1.0) {
        return Err(err(1, format!("training.val_fraction: must lie in (0, 1), got {}", t.val_fraction)));
    }

    let mut names = HashSet::new();
    for e in &cfg.experts {
        let line = line_of(text, e.name.span().start);
        let name = e.name.get_ref();
        if !names.insert(name.clone()) {
            return Err(err(line, format!("name: duplicate expert name {name:?}")));
        }
        match e.kind {
            ExpertKind::File => {
                if e.path.is_none() {
                    return Err(err(line, format!("path: file expert {name:?} needs a path")));
                }
                if e.seed.is_some() {
                    return Err(err(line, format!("seed: file expert {name:?} takes oov_seed, not seed")));
                }
                if e.oov == Some(OovKind::Stub) && e.oov_seed.is_none() {
                    return Err(err(line, format!("oov_seed: expert {name:?} uses stub fallback and needs oov_seed")));
                }
            }
            ExpertKind::Stub => {
                if e.seed.is_none() || e.dim.is_none() {
                    return Err(err(line, format!("seed/dim: stub expert {name:?} needs both seed and dim")));
                }
                if e.path.is_some() || e.oov.is_some() || e.oov_seed.is_some() {
                    return Err(err(line, format!("path/oov: stub expert {name:?} takes neither")));
                }
            }
        }
        if e.dim == Some(0) {
            return Err(err(line, format!("dim: expert {name:?} needs dim at least 1")));
        }
    }
    if let Variant::Single(name) = &variant {
        if !names.contains(name) {
            return Err(err(line_of(text, variant_span.start), format!("variant: SINGLE names unknown expert {name:?}")));
        }
    }
    for e in cfg.experts.iter_mut() {
        if e.kind == ExpertKind::File && e.oov.is_none() {
            e.oov = Some(OovKind::Zero);
        }
    }

    let steps = &cfg.preprocess.steps;
    for s in steps.get_ref() {
        if Step::parse(s).is_none() {
            return Err(err(line_of(text, steps.span().start), format!("steps: unknown step {s:?}")));
        }
    }
    if cfg.preprocess.elongation_threshold < 2 {
        return Err(err(1, "preprocess.elongation_threshold: must be at least 2".into()));
    }
    if !(cfg.gradcheck.h > 0.0) || !(cfg.gradcheck.tol > 0.0) {
        return Err(err(1, "gradcheck: h and tol must be positive".into()));
    }
    if cfg.gate_report.bins == 0 || cfg.gate_report.taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(err(1, "gate_report: bins must be at least 1 and every tau positive".into()));
    }

    let resolve = |p: &mut Option<PathBuf>| {
        if let Some(p) = p {
            *p = base.join(&*p);
        }
    };
    resolve(&mut cfg.experiment.train);
    resolve(&mut cfg.experiment.test);
    resolve(&mut cfg.experiment.checkpoint);
    cfg.experiment.out = base.join(&cfg.experiment.out);
    for e in cfg.experts.iter_mut() {
        resolve(&mut e.path);
    }
    resolve(&mut cfg.preprocess.input);
    resolve(&mut cfg.preprocess.output);
    resolve(&mut cfg.preprocess.dictionary);
    Ok(cfg)
}
