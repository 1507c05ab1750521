//! Small synthetic IDX dataset: four classes of 6x6 images, each a noisy
//! copy of a class prototype.

#![allow(dead_code)]

use std::path::Path;

use gradlab::dataset::{encode_idx, IMAGES_MAGIC, LABELS_MAGIC};
use gradlab::harness::{TrainConfig, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
use gradlab::rng::Rng;

pub const SIDE: usize = 6;
pub const CLASSES: usize = 4;

fn write_split(dir: &Path, images: &str, labels: &str, n: usize, seed: u64) {
    let mut rng = Rng::new(seed);
    let mut pixels = Vec::with_capacity(n * SIDE * SIDE);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % CLASSES;
        for p in 0..SIDE * SIDE {
            let on = (p + y * 2) % CLASSES == 0;
            let base = if on { 200.0 } else { 20.0 };
            let v = base + rng.next_f64() * 50.0 - 25.0;
            pixels.push(v.clamp(0.0, 255.0) as u8);
        }
        ys.push(y as u8);
    }
    std::fs::write(dir.join(images), encode_idx(IMAGES_MAGIC, &[n, SIDE, SIDE], &pixels)).unwrap();
    std::fs::write(dir.join(labels), encode_idx(LABELS_MAGIC, &[n], &ys)).unwrap();
}

/// Writes the four files under their MNIST names.
pub fn write_fixture(dir: &Path, train: usize, test: usize) {
    write_split(dir, TRAIN_IMAGES, TRAIN_LABELS, train, 1);
    write_split(dir, TEST_IMAGES, TEST_LABELS, test, 2);
}

/// A fast configuration over the fixture in `dir`.
pub fn small_config(dir: &Path) -> TrainConfig {
    let mut cfg = TrainConfig::with_data_dir(dir);
    cfg.widths = vec![SIDE * SIDE, 12, CLASSES];
    cfg.train_subset = None;
    cfg.minibatch_size = 16;
    cfg.total_steps = 60;
    cfg.eval_first = 5;
    cfg.eval_every = 10;
    cfg.learning_rate = 0.2;
    cfg.noise_fraction = 0.25;
    cfg.coords_per_layer = 20;
    cfg.stat_examples = 40;
    cfg.cumulative_steps = 4;
    cfg
}
