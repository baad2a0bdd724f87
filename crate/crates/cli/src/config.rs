//! Run configuration: one TOML file per run, sections mirroring the library
//! modules. Unknown keys are hard errors — every section derives
//! `deny_unknown_fields`, so silent misconfiguration cannot happen.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use fredlab::attacks::TriggerSpec;
use fredlab::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub data: Option<DataSection>,
    pub trigger: Option<toml::Value>,
    pub poison: Option<PoisonSection>,
    pub train: Option<TrainSection>,
    pub gan: Option<GanSection>,
    pub invert: Option<InvertSection>,
    pub defend: Option<DefendSection>,
    pub diagnose: Option<DiagnoseSection>,
    pub audit_eq: Option<AuditSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub per_class_aux: usize,
    #[serde(default = "d32")]
    pub height: usize,
    #[serde(default = "d32")]
    pub width: usize,
    #[serde(default = "d_aux_shift")]
    pub aux_palette_shift: f64,
    #[serde(default = "d_one")]
    pub jitter: f64,
    #[serde(default = "d_noise")]
    pub noise: f64,
    pub seed: u64,
}

fn d32() -> usize {
    32
}
fn d_aux_shift() -> f64 {
    0.07
}
fn d_one() -> f64 {
    1.0
}
fn d_noise() -> f64 {
    0.02
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoisonSection {
    pub dataset: PathBuf,
    pub target_class: usize,
    pub rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub dataset: PathBuf,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    pub seed: u64,
    /// Number of classes of the desk architecture.
    pub classes: usize,
}

fn d_epochs() -> usize {
    30
}
fn d_batch() -> usize {
    64
}
fn d_lr() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanSection {
    pub dataset: PathBuf,
    #[serde(default = "d_gan_steps")]
    pub steps: usize,
    #[serde(default = "d_gan_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr_g")]
    pub lr_g: f64,
    #[serde(default = "d_lr_d")]
    pub lr_d: f64,
    pub seed: u64,
    #[serde(default = "d_band")]
    pub fidelity_band: f64,
    #[serde(default = "d_floor")]
    pub collapse_floor: f64,
}

fn d_gan_steps() -> usize {
    1200
}
fn d_gan_batch() -> usize {
    16
}
fn d_lr_g() -> f64 {
    2e-3
}
fn d_lr_d() -> f64 {
    1e-3
}
fn d_band() -> f64 {
    3.0
}
fn d_floor() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvertMethod {
    Naive,
    Gmi,
    Fred,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertSection {
    pub method: InvertMethod,
    pub classifier: PathBuf,
    /// Generative prior checkpoint; required for gmi and fred.
    pub gan: Option<PathBuf>,
    /// Classes to synthesize; empty means all.
    #[serde(default)]
    pub classes: Vec<usize>,
    /// Clean reference samples for the consistency term.
    pub refs_dataset: Option<PathBuf>,
    /// References drawn per class from refs_dataset.
    #[serde(default = "d_one_usize")]
    pub refs_per_class: usize,
    #[serde(default = "d_l1")]
    pub lambda1: f64,
    #[serde(default = "d_l2")]
    pub lambda2: f64,
    #[serde(default)]
    pub lambda3: f64,
    #[serde(default = "d_l4")]
    pub lambda4: f64,
    #[serde(default = "d_bsyn")]
    pub batch_syn: usize,
    #[serde(default = "d_iters")]
    pub max_iterations: usize,
    #[serde(default = "d_a1")]
    pub alpha1: f64,
    #[serde(default = "d_a2")]
    pub alpha2: f64,
    #[serde(default = "d_npc")]
    pub samples_per_class: usize,
    pub seed: u64,
}

fn d_one_usize() -> usize {
    1
}
fn d_l1() -> f64 {
    1000.0
}
fn d_l2() -> f64 {
    10.0
}
fn d_l4() -> f64 {
    10.0
}
fn d_bsyn() -> usize {
    24
}
fn d_iters() -> usize {
    120
}
fn d_a1() -> f64 {
    0.05
}
fn d_a2() -> f64 {
    2e-3
}
fn d_npc() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Clean,
    Ood,
    Naive,
    Gmi,
    Fred,
    Booster,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefendSection {
    pub base: BaseKind,
    pub classifier: PathBuf,
    /// Synthesized base set (dataset container) for naive/gmi/fred/booster.
    pub base_dataset: Option<PathBuf>,
    /// Clean pool for the clean and booster bases.
    pub clean_dataset: Option<PathBuf>,
    /// Auxiliary pool for the ood base (pseudo-labeled by the classifier).
    pub aux_dataset: Option<PathBuf>,
    /// Held-out evaluation set (harness ground truth).
    pub eval_dataset: PathBuf,
    pub target_class: usize,
    #[serde(default = "d_npc")]
    pub clean_per_class: usize,
    #[serde(default = "d_inner_steps")]
    pub inner_steps: usize,
    #[serde(default = "d_inner_step_size")]
    pub inner_step_size: f64,
    #[serde(default = "d_inner_budget")]
    pub inner_budget: f64,
    #[serde(default = "d_rounds")]
    pub outer_rounds: usize,
    #[serde(default = "d_outer_lr")]
    pub outer_lr: f64,
    #[serde(default = "d_outer_epochs")]
    pub outer_epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    pub seed: u64,
}

fn d_inner_steps() -> usize {
    20
}
fn d_inner_step_size() -> f64 {
    12.0
}
fn d_inner_budget() -> f64 {
    16.0 / 255.0
}
fn d_rounds() -> usize {
    8
}
fn d_outer_lr() -> f64 {
    5e-4
}
fn d_outer_epochs() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    pub classifier: PathBuf,
    pub gan: Option<PathBuf>,
    pub uap: Option<UapBlock>,
    pub gradnorm: Option<GradNormBlock>,
    pub landscape: Option<LandscapeBlock>,
    pub detector: Option<DetectorBlock>,
    pub latent_probe: Option<LatentProbeBlock>,
    pub mse_push: Option<MsePushBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UapBlock {
    /// (name, dataset path) pairs.
    pub bases: Vec<(String, PathBuf)>,
    pub scales: Vec<f64>,
    #[serde(default = "d_inner_steps")]
    pub inner_steps: usize,
    #[serde(default = "d_inner_step_size")]
    pub inner_step_size: f64,
    #[serde(default = "d_inner_budget")]
    pub inner_budget: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradNormBlock {
    pub sets: Vec<(String, PathBuf)>,
    pub bins: Vec<f64>,
    /// Cap on samples read per set (0 = all).
    #[serde(default)]
    pub max_per_set: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeBlock {
    pub dataset: PathBuf,
    #[serde(default = "d_one_usize")]
    pub samples: usize,
    #[serde(default = "d_half_width")]
    pub half_width: usize,
    #[serde(default = "d_step")]
    pub step: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_half_width() -> usize {
    5
}
fn d_step() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorBlock {
    /// Clean training images for the detector.
    pub clean_dataset: PathBuf,
    /// Additional clean-side images (decoded prior samples).
    pub extra_clean: Option<PathBuf>,
    /// Datasets to score after the gate passes.
    pub score: Vec<(String, PathBuf)>,
    #[serde(default = "d_det_epochs")]
    pub epochs: usize,
    #[serde(default = "d_gate")]
    pub accuracy_gate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_det_epochs() -> usize {
    60
}
fn d_gate() -> f64 {
    0.99
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentProbeBlock {
    pub scales: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsePushBlock {
    pub synthesis: PathBuf,
    #[serde(default = "d_push_steps")]
    pub steps: usize,
    #[serde(default = "d_push_lr")]
    pub lr: f64,
    /// Latents pushed per class (0 = all).
    #[serde(default)]
    pub max_per_class: usize,
}

fn d_push_steps() -> usize {
    150
}
fn d_push_lr() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    /// JSON file holding the audit instance.
    pub instance: PathBuf,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The trigger block, decoded with the typed unknown-kind error.
    pub fn trigger_spec(&self) -> Result<TriggerSpec> {
        let Some(value) = &self.trigger else {
            return Err(Error::Config("missing [trigger] section".into()));
        };
        let json = serde_json::to_value(value.clone())
            .map_err(|e| Error::Config(format!("trigger section: {e}")))?;
        TriggerSpec::parse_json(&json)
    }

    pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
        section
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing [{name}] section")))
    }
}
