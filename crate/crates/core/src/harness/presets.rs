//! Named configurations for the noise and winsorization studies.

use std::path::Path;

use crate::dataset::proper_accuracy;

use super::config::TrainConfig;

pub const NOISE_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const WINSOR_LEVELS: [f64; 5] = [0.0, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// 60k examples, full step budgets.
    Paper,
    /// 10k-example subset, narrower layers, 10k steps.
    Desk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub config: TrainConfig,
    pub proper_accuracy: f64,
}

fn base(scale: Scale, data_dir: &Path) -> TrainConfig {
    let mut cfg = TrainConfig::with_data_dir(data_dir);
    cfg.learning_rate = 0.1;
    cfg.minibatch_size = 100;
    if scale == Scale::Paper {
        cfg.train_subset = None;
    }
    cfg
}

fn preset(name: String, config: TrainConfig) -> Preset {
    let k = *config.widths.last().unwrap();
    Preset {
        name,
        proper_accuracy: proper_accuracy(config.noise_fraction, k).expect("level in [0, 1]"),
        config,
    }
}

/// One hidden layer (2048 units at paper scale, 256 at desk scale),
/// 10^5 or 10^4 steps, one run per noise level.
pub fn noise_grid(scale: Scale, data_dir: &Path) -> Vec<Preset> {
    NOISE_LEVELS
        .iter()
        .map(|&eps| {
            let mut cfg = base(scale, data_dir);
            match scale {
                Scale::Paper => {
                    cfg.widths = vec![784, 2048, 10];
                    cfg.total_steps = 100_000;
                }
                Scale::Desk => {
                    cfg.widths = vec![784, 256, 10];
                    cfg.total_steps = 10_000;
                }
            }
            cfg.noise_fraction = eps;
            preset(format!("noise_eps{eps:.2}"), cfg)
        })
        .collect()
}

/// Three hidden layers (256 units at paper scale, 64 at desk scale) for
/// every (noise level, c) pair.
pub fn winsor_grid(scale: Scale, data_dir: &Path) -> Vec<Preset> {
    let mut out = Vec::new();
    for &c in &WINSOR_LEVELS {
        for &eps in &NOISE_LEVELS {
            let mut cfg = base(scale, data_dir);
            match scale {
                Scale::Paper => {
                    cfg.widths = vec![784, 256, 256, 256, 10];
                    cfg.total_steps = 60_000;
                }
                Scale::Desk => {
                    cfg.widths = vec![784, 64, 64, 64, 10];
                    cfg.total_steps = 10_000;
                }
            }
            cfg.noise_fraction = eps;
            cfg.winsor_c = c;
            cfg.coherence = false;
            out.push(preset(format!("winsor_eps{eps:.2}_c{c}"), cfg));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_grid_shape() {
        for scale in [Scale::Paper, Scale::Desk] {
            let g = noise_grid(scale, Path::new("."));
            assert_eq!(g.len(), 5);
            for p in &g {
                assert_eq!(p.proper_accuracy, (1.0 - p.config.noise_fraction) + p.config.noise_fraction / 10.0);
                assert!(p.config.validate().is_ok());
                assert_eq!((p.config.learning_rate, p.config.minibatch_size), (0.1, 100));
            }
        }
        let desk = &noise_grid(Scale::Desk, Path::new("."))[1];
        assert_eq!(desk.config.train_subset, Some(10_000));
        assert_eq!(desk.config.widths, vec![784, 256, 10]);
        assert_eq!(desk.proper_accuracy, 0.775);
        assert_eq!(noise_grid(Scale::Paper, Path::new("."))[0].config.widths, vec![784, 2048, 10]);
    }

    #[test]
    fn winsor_grid_shape() {
        let g = winsor_grid(Scale::Paper, Path::new("."));
        assert_eq!(g.len(), 25);
        let mut cs: Vec<f64> = g.iter().map(|p| p.config.winsor_c).collect();
        cs.dedup();
        assert_eq!(cs, WINSOR_LEVELS.to_vec());
        assert!(g.iter().all(|p| p.config.widths == vec![784, 256, 256, 256, 10] && p.config.total_steps == 60_000));
        let desk = winsor_grid(Scale::Desk, Path::new("."));
        assert!(desk.iter().all(|p| p.config.widths == vec![784, 64, 64, 64, 10] && p.config.validate().is_ok()));
        let mut names: Vec<&str> = desk.iter().map(|p| p.name.as_str()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 25);
    }
}
