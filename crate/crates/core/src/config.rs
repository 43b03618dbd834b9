//! Run configuration: the flat `key = value` config format, paper-default
//! values, and validation.
//!
//! One file drives both training and evaluation. Lines are `key = value`,
//! `#` starts a comment, blank lines are ignored. Every key is optional;
//! absent keys fall back to the defaults listed on the struct fields, so an
//! empty file is a complete, valid configuration.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Training paradigm for the student run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Paradigm {
    /// High guidance: the KD weight jumps from `lambda_base` to `lambda_high`
    /// at `lambda_switch_iteration`.
    Hg,
    /// Low guidance: the KD weight stays at `lambda_base` throughout.
    Lg,
    /// No distillation: the KD weight is zero everywhere (mask-augmented
    /// classification only).
    NoKd,
}

impl Paradigm {
    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Hg => "HG",
            Paradigm::Lg => "LG",
            Paradigm::NoKd => "NO_KD",
        }
    }
}

/// How the student backbone is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudentInit {
    /// Fresh random initialization (default).
    Random,
    /// Copy the teacher's parameters (requires matching architecture).
    TeacherCopy,
}

impl StudentInit {
    pub fn as_str(self) -> &'static str {
        match self {
            StudentInit::Random => "random",
            StudentInit::TeacherCopy => "teacher_copy",
        }
    }
}

/// Optimizer, schedule, and augmentation settings for a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Mini-batch size N. Default 512.
    pub batch_size: usize,
    /// Total SGD iterations. Default 295000.
    pub total_iterations: usize,
    /// Initial learning rate. Default 0.1.
    pub lr_initial: f64,
    /// Iterations at which the learning rate is divided by
    /// `lr_decay_factor`. Default [80000, 140000, 210000].
    pub lr_milestones: Vec<usize>,
    /// Divisor applied at each milestone. Default 10.
    pub lr_decay_factor: f64,
    /// SGD momentum. Default 0.9.
    pub momentum: f64,
    /// L2 weight decay, applied to every trainable tensor. Default 5e-4.
    pub weight_decay: f64,
    /// KD weight before the switch (and throughout for LG). Default 100.
    pub lambda_base: f64,
    /// KD weight from the switch onward (HG only). Default 3000.
    pub lambda_high: f64,
    /// Iteration from which `lambda_high` applies. Meaningful only for the
    /// HG paradigm; defaults to 227000 there and must be absent otherwise.
    pub lambda_switch_iteration: Option<usize>,
    /// Probability of masking a student-side training image. Default 0.5.
    pub p_mask: f64,
    /// Training paradigm. Default HG.
    pub paradigm: Paradigm,
    /// Seed for every labeled random stream. Default 42.
    pub seed: i64,
    /// Max per-vertex mask jitter in pixels during training. Default 2.0.
    pub jitter_px: f64,
    /// Channel widths of the four downsampling stages of the default
    /// backbone. Default [8, 16, 32, 64].
    pub backbone_widths: [usize; 4],
    /// Student initialization. Default random.
    pub student_init: StudentInit,
    /// Checkpoint every this many iterations; absent means every 10% of
    /// `total_iterations`. Milestone checkpoints are always written.
    pub checkpoint_interval: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 512,
            total_iterations: 295_000,
            lr_initial: 0.1,
            lr_milestones: vec![80_000, 140_000, 210_000],
            lr_decay_factor: 10.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            lambda_base: 100.0,
            lambda_high: 3000.0,
            lambda_switch_iteration: Some(227_000),
            p_mask: 0.5,
            paradigm: Paradigm::Hg,
            seed: 42,
            jitter_px: 2.0,
            backbone_widths: [8, 16, 32, 64],
            student_init: StudentInit::Random,
            checkpoint_interval: None,
        }
    }
}

/// Margin-head hyperparameters: scale, margin, margin spread, and the
/// prototype matrix shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginHeadConfig {
    /// Logit scale s. Default 64.
    pub scale: f64,
    /// Margin mean m. Default 0.5.
    pub margin: f64,
    /// Margin standard deviation sigma. Default 0.5.
    pub sigma: f64,
    /// Number of identity classes c. Default 85000; training adopts the
    /// dataset's identity count (the resolved config records it).
    pub num_classes: usize,
    /// Embedding dimension D. Default 512.
    pub embedding_dim: usize,
}

impl Default for MarginHeadConfig {
    fn default() -> Self {
        MarginHeadConfig {
            scale: 64.0,
            margin: 0.5,
            sigma: 0.5,
            num_classes: 85_000,
            embedding_dim: 512,
        }
    }
}

/// The pair of configs one file resolves to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Configs {
    pub training: TrainingConfig,
    pub head: MarginHeadConfig,
}

fn validation(field: &'static str, msg: impl Into<String>) -> Error {
    Error::Validation { field, msg: msg.into() }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(validation("batch_size", "must be positive"));
        }
        if self.total_iterations == 0 {
            return Err(validation("total_iterations", "must be positive"));
        }
        if !(self.lr_initial > 0.0) {
            return Err(validation("lr_initial", "must be positive"));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(validation("lr_decay_factor", "must be positive"));
        }
        if !self.lr_milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(validation("lr_milestones", "not ascending"));
        }
        if self.lr_milestones.iter().any(|&m| m >= self.total_iterations) {
            return Err(validation("lr_milestones", "must all be < total_iterations"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(validation("momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(validation("weight_decay", "must be non-negative"));
        }
        if !(self.lambda_base >= 0.0) {
            return Err(validation("lambda_base", "must be non-negative"));
        }
        if !(self.lambda_high >= 0.0) {
            return Err(validation("lambda_high", "must be non-negative"));
        }
        match (self.paradigm, self.lambda_switch_iteration) {
            (Paradigm::Hg, None) => {
                return Err(validation(
                    "lambda_switch_iteration",
                    "required for paradigm HG",
                ));
            }
            (Paradigm::Hg, Some(sw)) => {
                if sw >= self.total_iterations {
                    return Err(validation(
                        "lambda_switch_iteration",
                        "must be < total_iterations",
                    ));
                }
            }
            (_, Some(_)) => {
                return Err(validation(
                    "lambda_switch_iteration",
                    "only meaningful for paradigm HG",
                ));
            }
            (_, None) => {}
        }
        if !(0.0..=1.0).contains(&self.p_mask) {
            return Err(validation("p_mask", "must be in [0, 1]"));
        }
        if !(self.jitter_px >= 0.0) {
            return Err(validation("jitter_px", "must be non-negative"));
        }
        if self.backbone_widths.iter().any(|&w| w == 0) {
            return Err(validation("backbone_widths", "widths must be positive"));
        }
        if self.checkpoint_interval == Some(0) {
            return Err(validation("checkpoint_interval", "must be positive"));
        }
        Ok(())
    }
}

impl MarginHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(validation("scale", "must be positive"));
        }
        if !self.margin.is_finite() {
            return Err(validation("margin", "must be finite"));
        }
        if !(self.sigma >= 0.0) {
            return Err(validation("sigma", "must be non-negative"));
        }
        if self.num_classes < 2 {
            return Err(validation("num_classes", "must be >= 2"));
        }
        if self.embedding_dim == 0 {
            return Err(validation("embedding_dim", "must be positive"));
        }
        Ok(())
    }
}

impl Configs {
    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.head.validate()
    }
}

/// Loads and validates a config file.
pub fn load_config(path: &Path) -> Result<Configs> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Parses config text into validated configs, filling absent keys with the
/// documented defaults.
pub fn parse_config(text: &str) -> Result<Configs> {
    let mut cfg = Configs::default();
    // The switch default only applies when the resolved paradigm is HG, so
    // track whether the file set it explicitly.
    let mut switch_set = false;
    let mut seen: Vec<String> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
            line: lineno,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|k| k == key) {
            return Err(Error::ConfigParse {
                line: lineno,
                msg: format!("duplicate key `{key}`"),
            });
        }
        seen.push(key.to_string());
        apply_key(&mut cfg, key, value, lineno, &mut switch_set)?;
    }

    if !switch_set {
        cfg.training.lambda_switch_iteration = match cfg.training.paradigm {
            Paradigm::Hg => Some(227_000),
            _ => None,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_key(
    cfg: &mut Configs,
    key: &str,
    value: &str,
    line: usize,
    switch_set: &mut bool,
) -> Result<()> {
    let bad = |what: &str| Error::ConfigParse {
        line,
        msg: format!("key `{key}`: expected {what}, got `{value}`"),
    };
    let t = &mut cfg.training;
    let h = &mut cfg.head;
    match key {
        "batch_size" => t.batch_size = value.parse().map_err(|_| bad("positive integer"))?,
        "total_iterations" => {
            t.total_iterations = value.parse().map_err(|_| bad("positive integer"))?
        }
        "lr_initial" => t.lr_initial = value.parse().map_err(|_| bad("real"))?,
        "lr_milestones" => t.lr_milestones = parse_list(value).ok_or_else(|| bad("integer list"))?,
        "lr_decay_factor" => t.lr_decay_factor = value.parse().map_err(|_| bad("real"))?,
        "momentum" => t.momentum = value.parse().map_err(|_| bad("real"))?,
        "weight_decay" => t.weight_decay = value.parse().map_err(|_| bad("real"))?,
        "lambda_base" => t.lambda_base = value.parse().map_err(|_| bad("real"))?,
        "lambda_high" => t.lambda_high = value.parse().map_err(|_| bad("real"))?,
        "lambda_switch_iteration" => {
            t.lambda_switch_iteration = Some(value.parse().map_err(|_| bad("integer"))?);
            *switch_set = true;
        }
        "p_mask" => t.p_mask = value.parse().map_err(|_| bad("real in [0,1]"))?,
        "paradigm" => {
            t.paradigm = match value {
                "HG" => Paradigm::Hg,
                "LG" => Paradigm::Lg,
                "NO_KD" => Paradigm::NoKd,
                _ => return Err(bad("one of HG, LG, NO_KD")),
            }
        }
        "seed" => t.seed = value.parse().map_err(|_| bad("integer"))?,
        "jitter_px" => t.jitter_px = value.parse().map_err(|_| bad("real"))?,
        "backbone_widths" => {
            let list = parse_list(value).ok_or_else(|| bad("integer list of length 4"))?;
            let arr: [usize; 4] = list
                .try_into()
                .map_err(|_| bad("integer list of length 4"))?;
            t.backbone_widths = arr;
        }
        "student_init" => {
            t.student_init = match value {
                "random" => StudentInit::Random,
                "teacher_copy" => StudentInit::TeacherCopy,
                _ => return Err(bad("one of random, teacher_copy")),
            }
        }
        "checkpoint_interval" => {
            t.checkpoint_interval = Some(value.parse().map_err(|_| bad("integer"))?)
        }
        "scale" => h.scale = value.parse().map_err(|_| bad("real"))?,
        "margin" => h.margin = value.parse().map_err(|_| bad("real"))?,
        "sigma" => h.sigma = value.parse().map_err(|_| bad("real"))?,
        "num_classes" => h.num_classes = value.parse().map_err(|_| bad("integer >= 2"))?,
        "embedding_dim" => h.embedding_dim = value.parse().map_err(|_| bad("positive integer"))?,
        _ => {
            return Err(Error::ConfigParse {
                line,
                msg: format!("unknown key `{key}`"),
            })
        }
    }
    Ok(())
}

fn parse_list(value: &str) -> Option<Vec<usize>> {
    let inner = value.strip_prefix('[')?.strip_suffix(']')?;
    let inner = inner.trim();
    if inner.is_empty() {
        return Some(Vec::new());
    }
    inner
        .split(',')
        .map(|tok| tok.trim().parse::<usize>().ok())
        .collect()
}

/// Serializes configs back to the `key = value` format; `parse_config` of
/// the result yields an equal value.
pub fn serialize_config(cfg: &Configs) -> String {
    let t = &cfg.training;
    let h = &cfg.head;
    let mut out = String::new();
    let _ = writeln!(out, "batch_size = {}", t.batch_size);
    let _ = writeln!(out, "total_iterations = {}", t.total_iterations);
    let _ = writeln!(out, "lr_initial = {}", t.lr_initial);
    let milestones: Vec<String> = t.lr_milestones.iter().map(|m| m.to_string()).collect();
    let _ = writeln!(out, "lr_milestones = [{}]", milestones.join(", "));
    let _ = writeln!(out, "lr_decay_factor = {}", t.lr_decay_factor);
    let _ = writeln!(out, "momentum = {}", t.momentum);
    let _ = writeln!(out, "weight_decay = {}", t.weight_decay);
    let _ = writeln!(out, "lambda_base = {}", t.lambda_base);
    let _ = writeln!(out, "lambda_high = {}", t.lambda_high);
    if let Some(sw) = t.lambda_switch_iteration {
        let _ = writeln!(out, "lambda_switch_iteration = {sw}");
    }
    let _ = writeln!(out, "p_mask = {}", t.p_mask);
    let _ = writeln!(out, "paradigm = {}", t.paradigm.as_str());
    let _ = writeln!(out, "seed = {}", t.seed);
    let _ = writeln!(out, "jitter_px = {}", t.jitter_px);
    let widths: Vec<String> = t.backbone_widths.iter().map(|w| w.to_string()).collect();
    let _ = writeln!(out, "backbone_widths = [{}]", widths.join(", "));
    let _ = writeln!(out, "student_init = {}", t.student_init.as_str());
    if let Some(ci) = t.checkpoint_interval {
        let _ = writeln!(out, "checkpoint_interval = {ci}");
    }
    let _ = writeln!(out, "scale = {}", h.scale);
    let _ = writeln!(out, "margin = {}", h.margin);
    let _ = writeln!(out, "sigma = {}", h.sigma);
    let _ = writeln!(out, "num_classes = {}", h.num_classes);
    let _ = writeln!(out, "embedding_dim = {}", h.embedding_dim);
    out
}

/// SHA-256 of the serialized config, used to tie checkpoints to the run
/// configuration.
pub fn config_hash(cfg: &Configs) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(serialize_config(cfg).as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_paper_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.training.batch_size, 512);
        assert_eq!(cfg.training.total_iterations, 295_000);
        assert_eq!(cfg.training.lr_initial, 0.1);
        assert_eq!(cfg.training.lr_milestones, vec![80_000, 140_000, 210_000]);
        assert_eq!(cfg.training.lr_decay_factor, 10.0);
        assert_eq!(cfg.training.momentum, 0.9);
        assert_eq!(cfg.training.weight_decay, 5e-4);
        assert_eq!(cfg.training.lambda_base, 100.0);
        assert_eq!(cfg.training.lambda_high, 3000.0);
        assert_eq!(cfg.training.lambda_switch_iteration, Some(227_000));
        assert_eq!(cfg.training.p_mask, 0.5);
        assert_eq!(cfg.training.paradigm, Paradigm::Hg);
        assert_eq!(cfg.head.scale, 64.0);
        assert_eq!(cfg.head.margin, 0.5);
        assert_eq!(cfg.head.sigma, 0.5);
        assert_eq!(cfg.head.embedding_dim, 512);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = parse_config("# full defaults\n\nbatch_size = 16 # small\n").unwrap();
        assert_eq!(cfg.training.batch_size, 16);
    }

    #[test]
    fn non_ascending_milestones_rejected() {
        let err = parse_config("lr_milestones = [140000, 80000]").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lr_milestones"), "{msg}");
        assert!(msg.contains("not ascending"), "{msg}");
    }

    #[test]
    fn switch_with_lg_rejected() {
        let err =
            parse_config("paradigm = LG\nlambda_switch_iteration = 227000").unwrap_err();
        assert!(err.to_string().contains("lambda_switch_iteration"));
    }

    #[test]
    fn lg_without_switch_is_valid() {
        let cfg = parse_config("paradigm = LG").unwrap();
        assert_eq!(cfg.training.lambda_switch_iteration, None);
    }

    #[test]
    fn no_kd_without_switch_is_valid() {
        let cfg = parse_config("paradigm = NO_KD").unwrap();
        assert_eq!(cfg.training.lambda_switch_iteration, None);
    }

    #[test]
    fn unknown_key_names_line() {
        let err = parse_config("batch_size = 4\nnot_a_key = 1").unwrap_err();
        match err {
            Error::ConfigParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = parse_config("seed = 1\nseed = 2").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn switch_must_come_before_total() {
        let err = parse_config("total_iterations = 1000").unwrap_err();
        // default switch 227000 >= 1000
        assert!(err.to_string().contains("lambda_switch_iteration"));
    }

    #[test]
    fn round_trip_default() {
        let cfg = Configs::default();
        let text = serialize_config(&cfg);
        let back = parse_config(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn round_trip_modified() {
        let text = "paradigm = LG\nbatch_size = 32\nweight_decay = 0.0005\nseed = -3\n\
                    backbone_widths = [2, 4, 4, 8]\nstudent_init = teacher_copy";
        let cfg = parse_config(text).unwrap();
        let back = parse_config(&serialize_config(&cfg)).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn config_hash_stable_and_sensitive() {
        let a = parse_config("seed = 1").unwrap();
        let b = parse_config("seed = 2").unwrap();
        assert_eq!(config_hash(&a), config_hash(&a));
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
