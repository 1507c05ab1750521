use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gradlab::coherence::StatMode;
use gradlab::harness::{
    default_data_dir, noise_grid, run_with_data, verify, winsor_grid, ExperimentData, HarnessError, Precision, Preset, Scale, TrainConfig,
};

#[derive(Parser)]
#[command(name = "gradlab", version, about = "Label-noise and winsorized-SGD experiments with per-example gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write the logs.
    Run {
        #[command(flatten)]
        opts: RunOpts,
        #[arg(long, default_value = "runs/latest")]
        out_dir: PathBuf,
    },
    /// Run every preset of a study, one sub-directory each.
    Grid {
        #[arg(value_enum)]
        study: Study,
        /// Reduced-scale presets.
        #[arg(long)]
        desk: bool,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
        /// Seeds to repeat each preset with.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Only presets whose name contains this string.
        #[arg(long)]
        only: Option<String>,
        /// Print the presets without running them.
        #[arg(long)]
        list: bool,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Gradient and invariant self-checks on small fixtures.
    Verify,
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    Noise,
    Winsor,
}

#[derive(Args)]
struct RunOpts {
    /// `key = value` file applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Label-noise fraction.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    winsor_c: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Comma-separated layer widths, input first.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// Number of training examples, or `all`.
    #[arg(long)]
    train_subset: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    stat_mode: Option<StatMode>,
    #[arg(long)]
    precision: Option<Precision>,
    /// Any other config key, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl RunOpts {
    fn resolve(&self) -> Result<TrainConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        if let Some(dir) = &self.data_dir {
            cfg.set_data_dir(dir);
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("--set expects key=value, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.noise {
            cfg.noise_fraction = v;
        }
        if let Some(v) = self.winsor_c {
            cfg.winsor_c = v;
        }
        if let Some(v) = self.steps {
            cfg.total_steps = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.minibatch_size = v;
        }
        if let Some(v) = &self.widths {
            cfg.widths = v.clone();
        }
        if let Some(v) = &self.train_subset {
            cfg.set("train_subset", v)?;
        }
        if let Some(v) = self.stat_mode {
            cfg.stat_mode = v;
        }
        if let Some(v) = self.precision {
            cfg.precision = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_one(cfg: &TrainConfig, data: &ExperimentData, out_dir: &std::path::Path) -> Result<(), HarnessError> {
    let start = Instant::now();
    let out = run_with_data(cfg, data)?;
    out.write(out_dir)?;
    let last = out.metrics.last();
    println!(
        "{}: step {} ta {:.4} va {:.4} overfit {:.4} ({:.1}s)",
        out_dir.display(),
        last.step,
        last.ta,
        last.va,
        last.overfit,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn grid(study: Study, scale: Scale, data_dir: &std::path::Path) -> Vec<Preset> {
    match study {
        Study::Noise => noise_grid(scale, data_dir),
        Study::Winsor => winsor_grid(scale, data_dir),
    }
}

fn main_inner(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Run { opts, out_dir } => {
            let cfg = opts.resolve()?;
            let data = ExperimentData::load(&cfg)?;
            run_one(&cfg, &data, &out_dir)?;
            Ok(true)
        }
        Command::Grid {
            study,
            desk,
            out_dir,
            seeds,
            only,
            list,
            data_dir,
        } => {
            let scale = if desk { Scale::Desk } else { Scale::Paper };
            let dir = data_dir.unwrap_or_else(default_data_dir);
            let presets: Vec<Preset> = grid(study, scale, &dir)
                .into_iter()
                .filter(|p| only.as_deref().is_none_or(|s| p.name.contains(s)))
                .collect();
            if list {
                println!("name,noise_fraction,winsor_c,widths,total_steps,proper_accuracy");
                for p in &presets {
                    let widths: Vec<String> = p.config.widths.iter().map(|w| w.to_string()).collect();
                    println!(
                        "{},{},{},{},{},{}",
                        p.name,
                        p.config.noise_fraction,
                        p.config.winsor_c,
                        widths.join(" "),
                        p.config.total_steps,
                        p.proper_accuracy
                    );
                }
                return Ok(true);
            }
            let Some(first) = presets.first() else {
                return Err(HarnessError::Config("no preset matches".into()));
            };
            let data = ExperimentData::load(&first.config)?;
            for p in &presets {
                for &seed in &seeds {
                    let mut cfg = p.config.clone();
                    cfg.seed = seed;
                    run_one(&cfg, &data, &out_dir.join(format!("{}_seed{seed}", p.name)))?;
                }
            }
            Ok(true)
        }
        Command::Verify => {
            let checks = verify::run_all();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
