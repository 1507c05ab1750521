//! Run configuration as flat `key = value` text.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::coherence::StatMode;
use crate::dataset::NoiseMode;
use crate::optimizer::WinsorConfig;

use super::learned::LearnedRule;
use super::HarnessError;

/// Directory searched for the four MNIST files when no paths are given.
pub const MNIST_DIR_ENV: &str = "GRADLAB_MNIST_DIR";

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// `$GRADLAB_MNIST_DIR`, else `data/mnist` under the workspace root.
pub fn default_data_dir() -> PathBuf {
    match std::env::var_os(MNIST_DIR_ENV) {
        Some(dir) => PathBuf::from(dir),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (f32|f64)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub widths: Vec<usize>,
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub total_steps: usize,
    pub noise_fraction: f64,
    pub noise_mode: NoiseMode,
    pub winsor_c: f64,
    pub seed: u64,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// First `n` training examples; `None` uses all of them.
    pub train_subset: Option<usize>,
    /// First `n` test examples; `None` uses all of them.
    pub test_subset: Option<usize>,
    pub precision: Precision,
    /// Log every step up to and including this one.
    pub eval_first: usize,
    /// Then every `eval_every` steps, and at the last step.
    pub eval_every: usize,
    pub coherence: bool,
    pub stat_mode: StatMode,
    pub coords_per_layer: usize,
    pub stat_examples: usize,
    pub null_replicas: usize,
    /// `i_p`/`i_c` are accumulated over steps `0..cumulative_steps`.
    pub cumulative_steps: usize,
    pub learned_rule: LearnedRule,
}

impl Default for TrainConfig {
    /// Desk-scale noise-study baseline.
    fn default() -> Self {
        TrainConfig::with_data_dir(&default_data_dir())
    }
}

impl TrainConfig {
    pub fn with_data_dir(dir: &Path) -> Self {
        TrainConfig {
            widths: vec![784, 256, 10],
            learning_rate: 0.1,
            minibatch_size: 100,
            total_steps: 10_000,
            noise_fraction: 0.0,
            noise_mode: NoiseMode::Permute,
            winsor_c: 0.0,
            seed: 0,
            train_images: dir.join(TRAIN_IMAGES),
            train_labels: dir.join(TRAIN_LABELS),
            test_images: dir.join(TEST_IMAGES),
            test_labels: dir.join(TEST_LABELS),
            train_subset: Some(10_000),
            test_subset: None,
            precision: Precision::F64,
            eval_first: 10,
            eval_every: 100,
            coherence: true,
            stat_mode: StatMode::Minibatch,
            coords_per_layer: 300,
            stat_examples: 400,
            null_replicas: 3,
            cumulative_steps: 10,
            learned_rule: LearnedRule::FirstCorrect,
        }
    }

    pub fn set_data_dir(&mut self, dir: &Path) {
        self.train_images = dir.join(TRAIN_IMAGES);
        self.train_labels = dir.join(TRAIN_LABELS);
        self.test_images = dir.join(TEST_IMAGES);
        self.test_labels = dir.join(TEST_LABELS);
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return fail(format!("architecture {:?} needs at least two positive widths", self.widths));
        }
        if self.total_steps == 0 {
            return fail("total_steps must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return fail(format!("noise_fraction {} outside [0, 1]", self.noise_fraction));
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1".into());
        }
        if self.train_subset == Some(0) || self.test_subset == Some(0) {
            return fail("subset sizes must be positive".into());
        }
        WinsorConfig::new(self.winsor_c, self.learning_rate, self.minibatch_size).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| HarnessError::Config(format!("{key} = {value}: {e}")))
        }
        fn subset(key: &str, value: &str) -> Result<Option<usize>, HarnessError> {
            if value == "all" {
                Ok(None)
            } else {
                parse(key, value).map(Some)
            }
        }
        match key {
            "widths" => {
                self.widths = value
                    .split(',')
                    .map(|w| parse(key, w.trim()))
                    .collect::<Result<_, _>>()?
            }
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "minibatch_size" => self.minibatch_size = parse(key, value)?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "noise_fraction" => self.noise_fraction = parse(key, value)?,
            "noise_mode" => self.noise_mode = parse(key, value)?,
            "winsor_c" => self.winsor_c = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "data_dir" => self.set_data_dir(Path::new(value)),
            "train_images" => self.train_images = value.into(),
            "train_labels" => self.train_labels = value.into(),
            "test_images" => self.test_images = value.into(),
            "test_labels" => self.test_labels = value.into(),
            "train_subset" => self.train_subset = subset(key, value)?,
            "test_subset" => self.test_subset = subset(key, value)?,
            "precision" => self.precision = parse(key, value)?,
            "eval_first" => self.eval_first = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "coherence" => self.coherence = parse(key, value)?,
            "stat_mode" => self.stat_mode = parse(key, value)?,
            "coords_per_layer" => self.coords_per_layer = parse(key, value)?,
            "stat_examples" => self.stat_examples = parse(key, value)?,
            "null_replicas" => self.null_replicas = parse(key, value)?,
            "cumulative_steps" => self.cumulative_steps = parse(key, value)?,
            "learned_rule" => self.learned_rule = parse(key, value)?,
            "minibatch_order" if value == "epoch_shuffle" => {}
            "minibatch_order" => return Err(HarnessError::Config(format!("unsupported minibatch_order `{value}`"))),
            other => return Err(HarnessError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = TrainConfig::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<(), HarnessError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        TrainConfig::parse(&text)
    }

    /// Every key in a fixed order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let subset = |s: Option<usize>| s.map_or_else(|| "all".to_string(), |n| n.to_string());
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        line("widths", widths.join(","));
        line("learning_rate", self.learning_rate.to_string());
        line("minibatch_size", self.minibatch_size.to_string());
        line("total_steps", self.total_steps.to_string());
        line("noise_fraction", self.noise_fraction.to_string());
        line("noise_mode", self.noise_mode.as_str().into());
        line("winsor_c", self.winsor_c.to_string());
        line("seed", self.seed.to_string());
        line("train_images", self.train_images.display().to_string());
        line("train_labels", self.train_labels.display().to_string());
        line("test_images", self.test_images.display().to_string());
        line("test_labels", self.test_labels.display().to_string());
        line("train_subset", subset(self.train_subset));
        line("test_subset", subset(self.test_subset));
        line("precision", self.precision.as_str().into());
        line("minibatch_order", "epoch_shuffle".into());
        line("eval_first", self.eval_first.to_string());
        line("eval_every", self.eval_every.to_string());
        line("coherence", self.coherence.to_string());
        line("stat_mode", self.stat_mode.as_str().into());
        line("coords_per_layer", self.coords_per_layer.to_string());
        line("stat_examples", self.stat_examples.to_string());
        line("null_replicas", self.null_replicas.to_string());
        line("cumulative_steps", self.cumulative_steps.to_string());
        line("learned_rule", self.learned_rule.as_str().into());
        out
    }

    /// Steps after whose update metrics are logged.
    pub fn is_eval_step(&self, updates: usize) -> bool {
        updates >= 1 && (updates <= self.eval_first || updates.is_multiple_of(self.eval_every) || updates == self.total_steps)
    }

    /// Steps whose pre-update gradient feeds the coherence statistics.
    pub fn is_coherence_step(&self, step: usize) -> bool {
        step < self.total_steps && (step < self.eval_first.max(self.cumulative_steps) || step.is_multiple_of(self.eval_every))
    }
}
