use super::{histogram, DatasetError, RawDataset};
use crate::rng::{Rng, Stream};

/// How the labels of the selected examples are replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// Shuffle the selected examples' labels among themselves. Preserves
    /// the class histogram exactly.
    #[default]
    Permute,
    /// Draw a fresh uniform label for each selected example.
    Resample,
}

impl NoiseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseMode::Permute => "permute",
            NoiseMode::Resample => "resample",
        }
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "permute" => Ok(NoiseMode::Permute),
            "resample" => Ok(NoiseMode::Resample),
            other => Err(format!("unknown noise mode `{other}` (permute|resample)")),
        }
    }
}

/// Training data with assigned labels and the pristine/corrupt split.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    pub base: RawDataset,
    pub assigned_labels: Vec<usize>,
    pub pristine_mask: Vec<bool>,
    pub noise_fraction: f64,
    pub seed: u64,
    pub mode: NoiseMode,
}

impl NoisyDataset {
    /// Wraps a dataset with no noise applied.
    pub fn clean(base: RawDataset) -> Self {
        let n = base.len();
        NoisyDataset {
            assigned_labels: base.labels().to_vec(),
            pristine_mask: vec![true; n],
            base,
            noise_fraction: 0.0,
            seed: 0,
            mode: NoiseMode::Permute,
        }
    }

    pub fn len(&self) -> usize {
        self.assigned_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assigned_labels.is_empty()
    }

    pub fn pristine_count(&self) -> usize {
        self.pristine_mask.iter().filter(|&&p| p).count()
    }

    pub fn corrupt_count(&self) -> usize {
        self.len() - self.pristine_count()
    }

    pub fn assigned_histogram(&self) -> Vec<usize> {
        histogram(&self.assigned_labels, self.base.num_classes())
    }
}

/// Number of examples whose labels are redrawn: `round(eps * n)`, ties to even.
pub fn selected_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round_ties_even() as usize
}

pub fn inject_label_noise(base: &RawDataset, fraction: f64, seed: u64) -> Result<NoisyDataset, DatasetError> {
    inject_label_noise_with(base, fraction, seed, NoiseMode::Permute)
}

/// Picks `round(eps * N)` examples uniformly without replacement and either
/// permutes their labels among themselves or redraws them uniformly.
pub fn inject_label_noise_with(
    base: &RawDataset,
    fraction: f64,
    seed: u64,
    mode: NoiseMode,
) -> Result<NoisyDataset, DatasetError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DatasetError::NoiseFraction(fraction));
    }
    let n = base.len();
    let mut rng = Rng::for_stream(seed, Stream::LabelNoise);
    let selected = rng.sample_indices(n, selected_count(fraction, n));

    let mut assigned = base.labels().to_vec();
    match mode {
        NoiseMode::Permute => {
            let mut moved: Vec<usize> = selected.iter().map(|&i| assigned[i]).collect();
            rng.shuffle(&mut moved);
            for (&i, label) in selected.iter().zip(moved) {
                assigned[i] = label;
            }
        }
        NoiseMode::Resample => {
            let k = base.num_classes() as u64;
            for &i in &selected {
                assigned[i] = rng.below(k) as usize;
            }
        }
    }

    let pristine_mask = assigned.iter().zip(base.labels()).map(|(a, o)| a == o).collect();
    Ok(NoisyDataset {
        base: base.clone(),
        assigned_labels: assigned,
        pristine_mask,
        noise_fraction: fraction,
        seed,
        mode,
    })
}

/// Expected share of unchanged labels after noise: `(1 - eps) + eps / K`.
pub fn proper_accuracy(fraction: f64, num_classes: usize) -> Result<f64, DatasetError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DatasetError::NoiseFraction(fraction));
    }
    if num_classes < 2 {
        return Err(DatasetError::ClassCount(num_classes));
    }
    Ok((1.0 - fraction) + fraction / num_classes as f64)
}
