//! The training loop and its logs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::coherence::{CoherenceStats, CoherenceTracker, CoordinateSample, StatMode};
use crate::dataset::{inject_label_noise_with, load_idx, NoisyDataset, RawDataset};
use crate::net::{evaluate, per_example_gradients, save_checkpoint, Batch, MlpParams, NetError, Real};
use crate::optimizer::{sgd_step, winsorized_sgd_step, WinsorConfig};
use crate::rng::{Rng, Stream};

use super::config::{Precision, TrainConfig};
use super::format::{fmt_g9, fmt_opt};
use super::learned::LearnedTracker;
use super::HarnessError;

pub const METRICS_HEADER: &str = "step,train_loss,ta,va,pristine_frac,corrupt_frac,overfit";
pub const COHERENCE_HEADER: &str = "step,world,f_p,f_c,i_p,i_c";
pub const LEARNED_HEADER: &str = "example,first_learned_step,pristine";

/// Written for examples never learned.
pub const NEVER_LEARNED: i64 = -1;

/// `ta - [eps / K + (1 - eps) va]`.
pub fn overfit(ta: f64, va: f64, noise_fraction: f64, num_classes: usize) -> f64 {
    ta - (noise_fraction / num_classes as f64 + (1.0 - noise_fraction) * va)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    /// Number of updates applied before this evaluation.
    pub step: usize,
    pub train_loss: f64,
    pub ta: f64,
    pub va: f64,
    /// Share of pristine (corrupt) examples predicted as labelled; `None`
    /// for an empty group.
    pub pristine_frac: Option<f64>,
    pub corrupt_frac: Option<f64>,
    pub overfit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
    pub first_learned: Vec<Option<usize>>,
    pub pristine: Vec<bool>,
    pub noise_fraction: f64,
    pub num_classes: usize,
}

impl MetricsLog {
    pub fn last(&self) -> &MetricsRow {
        self.rows.last().expect("at least one evaluation")
    }

    /// First logged step with `ta >= threshold`.
    pub fn steps_to_train_accuracy(&self, threshold: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.ta >= threshold).map(|r| r.step)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step,
                fmt_g9(r.train_loss),
                fmt_g9(r.ta),
                fmt_g9(r.va),
                fmt_opt(r.pristine_frac),
                fmt_opt(r.corrupt_frac),
                fmt_g9(r.overfit)
            )
            .unwrap();
        }
        out
    }

    pub fn learned_csv(&self) -> String {
        let mut out = format!("{LEARNED_HEADER}\n");
        for (e, (step, &p)) in self.first_learned.iter().zip(&self.pristine).enumerate() {
            let step = step.map_or(NEVER_LEARNED, |s| s as i64);
            writeln!(out, "{e},{step},{}", u8::from(p)).unwrap();
        }
        out
    }
}

pub fn coherence_csv(stats: &CoherenceStats) -> String {
    let mut out = format!("{COHERENCE_HEADER}\n");
    for r in stats.rows() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step,
            r.world,
            fmt_opt(r.f_p),
            fmt_opt(r.f_c),
            fmt_opt(r.i_p),
            fmt_opt(r.i_c)
        )
        .unwrap();
    }
    out
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: TrainConfig,
    pub metrics: MetricsLog,
    pub coherence: Option<CoherenceStats>,
    pub params: MlpParams<f64>,
}

impl RunOutput {
    /// Writes `metrics.csv`, `coherence.csv` (when enabled), `learned.csv`,
    /// `config.resolved` and `final.ckpt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let io = |path: PathBuf| move |source| HarnessError::Io { path, source };
        fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        let mut files = vec![
            ("metrics.csv", self.metrics.to_csv()),
            ("learned.csv", self.metrics.learned_csv()),
            ("config.resolved", self.config.to_text()),
        ];
        if let Some(stats) = &self.coherence {
            files.push(("coherence.csv", coherence_csv(stats)));
        }
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io(path))?;
        }
        let path = dir.join("final.ckpt");
        save_checkpoint(&self.params, &path).map_err(io(path))
    }
}

/// Training and test sets, loaded once and shared between runs.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: RawDataset,
    pub test: RawDataset,
}

impl ExperimentData {
    pub fn load(config: &TrainConfig) -> Result<Self, HarnessError> {
        Ok(ExperimentData {
            train: load_idx(&config.train_images, &config.train_labels)?,
            test: load_idx(&config.test_images, &config.test_labels)?,
        })
    }
}

pub fn run_experiment(config: &TrainConfig) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let data = ExperimentData::load(config)?;
    run_with_data(config, &data)
}

pub fn run_with_data(config: &TrainConfig, data: &ExperimentData) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    match config.precision {
        Precision::F64 => Trainer::<f64>::new(config, data)?.run(),
        Precision::F32 => Trainer::<f32>::new(config, data)?.run(),
    }
}

fn convert<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::of(x)).collect()
}

struct Trainer<'a, T> {
    config: &'a TrainConfig,
    noisy: NoisyDataset,
    train_x: Vec<T>,
    test_x: Vec<T>,
    test_labels: &'a [usize],
    dim: usize,
    params: MlpParams<T>,
}

impl<'a, T: Real> Trainer<'a, T> {
    fn new(config: &'a TrainConfig, data: &'a ExperimentData) -> Result<Self, HarnessError> {
        for (what, want, have) in [("train", config.train_subset, data.train.len()), ("test", config.test_subset, data.test.len())] {
            if let Some(n) = want.filter(|&n| n > have) {
                return Err(HarnessError::Config(format!("{what}_subset {n} exceeds the {have} available examples")));
            }
        }
        let train = match config.train_subset {
            Some(n) => data.train.head(n),
            None => data.train.clone(),
        };
        let test_n = config.test_subset.unwrap_or(data.test.len());
        let dim = train.dim();
        let widths = &config.widths;
        if widths[0] != dim || data.test.dim() != dim {
            return Err(HarnessError::Config(format!(
                "input width {} but data has {} (train) / {} (test) features",
                widths[0],
                dim,
                data.test.dim()
            )));
        }
        let k = *widths.last().unwrap();
        if train.num_classes() > k || data.test.num_classes() > k {
            return Err(HarnessError::Config(format!("output width {k} below the number of classes")));
        }
        let train = train.with_num_classes(k)?;
        let noisy = inject_label_noise_with(&train, config.noise_fraction, config.seed, config.noise_mode)?;
        Ok(Trainer {
            config,
            train_x: convert(noisy.base.feature_matrix()),
            test_x: convert(&data.test.feature_matrix()[..test_n * dim]),
            test_labels: &data.test.labels()[..test_n],
            dim,
            params: MlpParams::xavier(widths, config.seed)?,
            noisy,
        })
    }

    fn run(mut self) -> Result<RunOutput, HarnessError> {
        let cfg = self.config;
        let n = self.noisy.len();
        let m = cfg.minibatch_size;
        let d = self.dim;
        let winsor = WinsorConfig::new(cfg.winsor_c, cfg.learning_rate, m).map_err(|e| HarnessError::Config(e.to_string()))?;
        let labels = self.noisy.assigned_labels.clone();
        let pristine = self.noisy.pristine_mask.clone();

        let sample = CoordinateSample::draw(&self.params, cfg.coords_per_layer, n, cfg.stat_examples, cfg.seed);
        let exact_x: Vec<T>;
        let exact_y: Vec<usize>;
        let mut tracker = None;
        if cfg.coherence {
            let designation = match cfg.stat_mode {
                StatMode::Minibatch => pristine.clone(),
                StatMode::Exact => sample.examples.iter().map(|&i| pristine[i]).collect(),
            };
            tracker = Some(CoherenceTracker::new(
                sample.coordinates.clone(),
                designation,
                cfg.null_replicas,
                cfg.seed,
                cfg.cumulative_steps,
                cfg.stat_mode,
            ));
        }
        if cfg.coherence && cfg.stat_mode == StatMode::Exact {
            exact_x = sample.examples.iter().flat_map(|&i| self.train_x[i * d..(i + 1) * d].iter().copied()).collect();
            exact_y = sample.examples.iter().map(|&i| labels[i]).collect();
        } else {
            exact_x = Vec::new();
            exact_y = Vec::new();
        }
        let exact_ids: Vec<usize> = (0..exact_y.len()).collect();

        let order_rng = Rng::for_stream(cfg.seed, Stream::MinibatchOrder);
        let steps_per_epoch = n.div_ceil(m);
        let mut order = Vec::new();
        let mut learned = LearnedTracker::new(n, cfg.learned_rule);
        let mut rows = Vec::new();
        let mut xb: Vec<T> = Vec::with_capacity(m * d);
        let mut yb: Vec<usize> = Vec::with_capacity(m);

        for step in 0..cfg.total_steps {
            let pos = step % steps_per_epoch;
            if pos == 0 {
                order = order_rng.derive((step / steps_per_epoch) as u64).permutation(n);
            }
            let ids = &order[pos * m..((pos + 1) * m).min(n)];
            xb.clear();
            yb.clear();
            for &i in ids {
                xb.extend_from_slice(&self.train_x[i * d..(i + 1) * d]);
                yb.push(labels[i]);
            }
            let batch = Batch::new(&xb, d, &yb)?;
            let grads = per_example_gradients(&self.params, &batch).map_err(|e| at_step(step, e))?;
            let loss = grads.total_loss();
            if !loss.is_finite() {
                return Err(HarnessError::NonFiniteLoss { step, loss });
            }
            if let Some(tracker) = tracker.as_mut().filter(|_| cfg.is_coherence_step(step)) {
                match cfg.stat_mode {
                    StatMode::Minibatch => tracker.observe(step, &grads, ids)?,
                    StatMode::Exact => {
                        let sample_batch = Batch::new(&exact_x, d, &exact_y)?;
                        let g = per_example_gradients(&self.params, &sample_batch).map_err(|e| at_step(step, e))?;
                        tracker.observe(step, &g, &exact_ids)?;
                    }
                }
            }
            if cfg.winsor_c > 0.0 {
                winsorized_sgd_step(&mut self.params, &grads, &winsor)?;
            } else {
                sgd_step(&mut self.params, &grads, cfg.learning_rate)?;
            }
            let updates = step + 1;
            if cfg.is_eval_step(updates) {
                let row = self.evaluate(updates, &labels, &pristine, &mut learned)?;
                rows.push(row);
            }
        }

        let metrics = MetricsLog {
            rows,
            first_learned: learned.into_steps(),
            pristine,
            noise_fraction: cfg.noise_fraction,
            num_classes: self.params.num_classes(),
        };
        Ok(RunOutput {
            config: cfg.clone(),
            metrics,
            coherence: tracker.map(CoherenceTracker::into_stats),
            params: self.params.cast(),
        })
    }

    fn evaluate(&self, step: usize, labels: &[usize], pristine: &[bool], learned: &mut LearnedTracker) -> Result<MetricsRow, HarnessError> {
        let train = evaluate(&self.params, &Batch::new(&self.train_x, self.dim, labels)?).map_err(|e| at_step(step, e))?;
        let test = evaluate(&self.params, &Batch::new(&self.test_x, self.dim, self.test_labels)?).map_err(|e| at_step(step, e))?;
        if !train.mean_loss.is_finite() {
            return Err(HarnessError::NonFiniteLoss {
                step,
                loss: train.mean_loss,
            });
        }
        learned.update(step, &train.correct);
        let group = |want: bool| {
            let (mut hits, mut size) = (0usize, 0usize);
            for (&c, &p) in train.correct.iter().zip(pristine) {
                if p == want {
                    size += 1;
                    hits += usize::from(c);
                }
            }
            (size > 0).then(|| hits as f64 / size as f64)
        };
        Ok(MetricsRow {
            step,
            train_loss: train.mean_loss,
            ta: train.accuracy,
            va: test.accuracy,
            pristine_frac: group(true),
            corrupt_frac: group(false),
            overfit: overfit(train.accuracy, test.accuracy, self.config.noise_fraction, self.params.num_classes()),
        })
    }
}

fn at_step(step: usize, e: NetError) -> HarnessError {
    match e {
        NetError::NonFinite(what) => HarnessError::NonFinite { step, what },
        other => other.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overfit_formula() {
        assert_eq!(overfit(1.0, 1.0, 0.0, 10), 0.0);
        assert!((overfit(0.8, 0.9, 0.5, 10) - (0.8 - 0.05 - 0.45)).abs() < 1e-15);
        assert!((overfit(1.0, 0.1, 1.0, 10) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn learned_csv_uses_sentinel() {
        let log = MetricsLog {
            rows: vec![],
            first_learned: vec![Some(3), None],
            pristine: vec![true, false],
            noise_fraction: 0.5,
            num_classes: 10,
        };
        assert_eq!(log.learned_csv(), "example,first_learned_step,pristine\n0,3,1\n1,-1,0\n");
    }
}
