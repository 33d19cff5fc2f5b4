//! Experiment configuration schema (`lrdwm bench --config exp.json`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{digest_words, mix64};
use crate::vocab::WatermarkKey;

pub const EXP_SCHEMA: &str = "lrdwm-exp";
pub const EXP_VERSION: u32 = 1;

fn default_schema() -> String {
    EXP_SCHEMA.to_string()
}
fn default_version() -> u32 {
    EXP_VERSION
}
fn default_gamma() -> f64 {
    0.5
}
fn default_methods() -> Vec<String> {
    vec!["lr".into(), "left".into(), "dmark".into(), "none".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub vocab_size: usize,
    pub sequences: usize,
    pub seq_len: usize,
    #[serde(default = "CorpusSection::default_branching")]
    pub branching: usize,
    #[serde(default = "CorpusSection::default_dominance")]
    pub dominance: f64,
}

impl CorpusSection {
    fn default_branching() -> usize {
        8
    }
    fn default_dominance() -> f64 {
        0.65
    }
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            sequences: 400,
            seq_len: 400,
            branching: Self::default_branching(),
            dominance: Self::default_dominance(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "ModelSection::default_order")]
    pub order: usize,
    #[serde(default = "ModelSection::default_smoothing")]
    pub smoothing: f64,
}

impl ModelSection {
    fn default_order() -> usize {
        3
    }
    fn default_smoothing() -> f64 {
        5e-2
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            order: Self::default_order(),
            smoothing: Self::default_smoothing(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    #[serde(default = "GenSection::default_prompt_len")]
    pub prompt_len: usize,
    #[serde(default = "GenSection::default_gen_len")]
    pub gen_len: usize,
    /// Denoising steps; defaults to one position per step.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "GenSection::default_schedule")]
    pub schedule: String,
    #[serde(default)]
    pub block_len: Option<usize>,
    #[serde(default)]
    pub temperature: f64,
}

impl GenSection {
    fn default_prompt_len() -> usize {
        8
    }
    fn default_gen_len() -> usize {
        300
    }
    fn default_schedule() -> String {
        "random".into()
    }

    pub fn steps_or_default(&self) -> usize {
        self.steps.unwrap_or(self.gen_len)
    }
}

impl Default for GenSection {
    fn default() -> Self {
        Self {
            prompt_len: Self::default_prompt_len(),
            gen_len: Self::default_gen_len(),
            steps: None,
            schedule: Self::default_schedule(),
            block_len: None,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectabilitySection {
    /// Watermarked generations per (method, delta) grid point.
    #[serde(default = "DetectabilitySection::default_count")]
    pub count: usize,
    /// Null sequences for calibration, and again for the disjoint
    /// sanity-eval set.
    #[serde(default = "DetectabilitySection::default_null_count")]
    pub null_count: usize,
    #[serde(default = "DetectabilitySection::default_fprs")]
    pub target_fprs: Vec<f64>,
    #[serde(default = "DetectabilitySection::default_deltas")]
    pub deltas: Vec<f64>,
}

impl DetectabilitySection {
    fn default_count() -> usize {
        200
    }
    fn default_null_count() -> usize {
        2000
    }
    fn default_fprs() -> Vec<f64> {
        vec![0.05, 0.01]
    }
    fn default_deltas() -> Vec<f64> {
        vec![0.0, 0.5, 1.0, 2.0, 4.0, 6.0]
    }
}

impl Default for DetectabilitySection {
    fn default() -> Self {
        Self {
            count: Self::default_count(),
            null_count: Self::default_null_count(),
            target_fprs: Self::default_fprs(),
            deltas: Self::default_deltas(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualitySection {
    #[serde(default = "QualitySection::default_enabled")]
    pub enabled: bool,
    #[serde(default = "QualitySection::default_count")]
    pub count: usize,
    /// Detection rates anchoring the tradeoff table.
    #[serde(default = "QualitySection::default_tprs")]
    pub tradeoff_tprs: Vec<f64>,
}

impl QualitySection {
    fn default_enabled() -> bool {
        true
    }
    fn default_count() -> usize {
        150
    }
    fn default_tprs() -> Vec<f64> {
        vec![0.90, 0.99, 0.995]
    }
}

impl Default for QualitySection {
    fn default() -> Self {
        Self {
            enabled: Self::default_enabled(),
            count: Self::default_count(),
            tradeoff_tprs: Self::default_tprs(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencySection {
    #[serde(default = "EfficiencySection::default_enabled")]
    pub enabled: bool,
    /// Efficiency runs use their own (larger) vocabulary.
    #[serde(default = "EfficiencySection::default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "EfficiencySection::default_sequences")]
    pub sequences: usize,
    #[serde(default = "EfficiencySection::default_warmup")]
    pub warmup: usize,
    #[serde(default = "EfficiencySection::default_delta")]
    pub delta: f64,
    /// Timing loops run on one thread unless explicitly disabled.
    #[serde(default = "EfficiencySection::default_single_thread")]
    pub single_thread: bool,
}

impl EfficiencySection {
    fn default_enabled() -> bool {
        true
    }
    fn default_vocab_size() -> usize {
        4096
    }
    fn default_sequences() -> usize {
        50
    }
    fn default_warmup() -> usize {
        5
    }
    fn default_delta() -> f64 {
        2.0
    }
    fn default_single_thread() -> bool {
        true
    }
}

impl Default for EfficiencySection {
    fn default() -> Self {
        Self {
            enabled: Self::default_enabled(),
            vocab_size: Self::default_vocab_size(),
            sequences: Self::default_sequences(),
            warmup: Self::default_warmup(),
            delta: Self::default_delta(),
            single_thread: Self::default_single_thread(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSection {
    #[serde(default = "RobustnessSection::default_enabled")]
    pub enabled: bool,
    #[serde(default = "RobustnessSection::default_count")]
    pub count: usize,
    #[serde(default = "RobustnessSection::default_kinds")]
    pub kinds: Vec<String>,
    #[serde(default = "RobustnessSection::default_intensities")]
    pub intensities: Vec<f64>,
    /// Candidate operating deltas, searched in order for ~100% clean TPR.
    #[serde(default = "RobustnessSection::default_operating_deltas")]
    pub operating_deltas: Vec<f64>,
}

impl RobustnessSection {
    fn default_enabled() -> bool {
        true
    }
    fn default_count() -> usize {
        300
    }
    fn default_kinds() -> Vec<String> {
        vec!["delete".into(), "substitute".into()]
    }
    fn default_intensities() -> Vec<f64> {
        vec![0.1, 0.2, 0.3, 0.4, 0.5]
    }
    fn default_operating_deltas() -> Vec<f64> {
        vec![2.0, 3.0, 4.0, 6.0]
    }
}

impl Default for RobustnessSection {
    fn default() -> Self {
        Self {
            enabled: Self::default_enabled(),
            count: Self::default_count(),
            kinds: Self::default_kinds(),
            intensities: Self::default_intensities(),
            operating_deltas: Self::default_operating_deltas(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    /// Drop generated sequences where any single token exceeds this
    /// frequency (degenerate-repetition filter).
    #[serde(default = "FilterSection::default_max_token_frequency")]
    pub max_token_frequency: f64,
}

impl FilterSection {
    fn default_max_token_frequency() -> f64 {
        0.5
    }
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            max_token_frequency: Self::default_max_token_frequency(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct KeysSection {
    /// 16 hex digits; derived from the experiment seed when omitted.
    #[serde(default)]
    pub left: Option<String>,
    #[serde(default)]
    pub right: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default = "default_version")]
    pub version: u32,
    pub seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub keys: KeysSection,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default, rename = "gen")]
    pub generation: GenSection,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub detectability: DetectabilitySection,
    #[serde(default)]
    pub quality: QualitySection,
    #[serde(default)]
    pub efficiency: EfficiencySection,
    #[serde(default)]
    pub robustness: RobustnessSection,
    #[serde(default)]
    pub filter: FilterSection,
}

impl ExperimentConfig {
    /// A small self-contained default keyed by a seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            schema: default_schema(),
            version: default_version(),
            seed,
            gamma: default_gamma(),
            keys: KeysSection::default(),
            corpus: CorpusSection::default(),
            model: ModelSection::default(),
            generation: GenSection::default(),
            methods: default_methods(),
            detectability: DetectabilitySection::default(),
            quality: QualitySection::default(),
            efficiency: EfficiencySection::default(),
            robustness: RobustnessSection::default(),
            filter: FilterSection::default(),
        }
    }

    pub fn key_left(&self) -> Result<WatermarkKey> {
        match &self.keys.left {
            Some(h) => WatermarkKey::from_hex(h),
            None => Ok(WatermarkKey(mix64(self.seed ^ 0x4C45_4654_4B45_59AA))),
        }
    }

    pub fn key_right(&self) -> Result<WatermarkKey> {
        match &self.keys.right {
            Some(h) => WatermarkKey::from_hex(h),
            None => Ok(WatermarkKey(mix64(self.seed ^ 0x5249_4748_544B_4559))),
        }
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        if self.schema != EXP_SCHEMA {
            return Err(Error::Config(format!(
                "expected schema {EXP_SCHEMA:?}, got {:?}",
                self.schema
            )));
        }
        if self.version != EXP_VERSION {
            return Err(Error::Config(format!(
                "unsupported experiment version {}",
                self.version
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::GammaOutOfRange { gamma: self.gamma });
        }
        self.key_left()?;
        self.key_right()?;
        for m in &self.methods {
            super::Method::parse(m)?;
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        self.generation.schedule.parse::<crate::schedule::ScheduleKind>()?;
        if self.generation.gen_len < 3 {
            return Err(Error::Config("gen_len must be at least 3".into()));
        }
        if self.generation.prompt_len == 0 {
            return Err(Error::Config("prompt_len must be positive".into()));
        }
        let steps = self.generation.steps_or_default();
        if steps == 0 || steps > self.generation.gen_len {
            return Err(Error::Config(format!(
                "steps {steps} must be in [1, gen_len = {}]",
                self.generation.gen_len
            )));
        }
        for f in &self.detectability.target_fprs {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(Error::Config(format!("target FPR {f} outside (0, 1)")));
            }
        }
        for d in self
            .detectability
            .deltas
            .iter()
            .chain(&self.robustness.operating_deltas)
            .chain([&self.efficiency.delta])
        {
            if !(*d >= 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("bad delta {d}")));
            }
        }
        for p in &self.robustness.intensities {
            if !(*p >= 0.0 && *p < 1.0) {
                return Err(Error::Config(format!("bad attack intensity {p}")));
            }
        }
        for k in &self.robustness.kinds {
            if k != "delete" && k != "substitute" {
                return Err(Error::Config(format!("unknown attack kind {k:?}")));
            }
        }
        if !(self.filter.max_token_frequency > 0.0 && self.filter.max_token_frequency <= 1.0) {
            return Err(Error::Config("max_token_frequency outside (0, 1]".into()));
        }

        let mut warnings = Vec::new();
        let min_fpr = self
            .detectability
            .target_fprs
            .iter()
            .cloned()
            .fold(f64::MAX, f64::min);
        if (self.detectability.null_count as f64) < 10.0 / min_fpr {
            warnings.push(format!(
                "null_count {} is small for FPR {min_fpr}; thresholds will be noisy",
                self.detectability.null_count
            ));
        }
        if self.key_left()? == self.key_right()? {
            warnings.push("left and right keys are equal".into());
        }
        Ok(warnings)
    }

    /// Stable digest over the canonical JSON encoding, carried by every
    /// report row.
    pub fn digest(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        format!(
            "{:016x}",
            digest_words(canon.as_bytes().iter().map(|&b| b as u64))
        )
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}
