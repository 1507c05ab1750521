//! Vanilla and winsorized SGD updates.
//!
//! Both rules apply `w <- w - (alpha / m) * g` where `g` is a sum over the
//! minibatch, so a learning rate of 0.1 with `m = 100` is ordinary
//! mean-loss SGD.

use thiserror::Error;

use crate::net::{GradientBuffer, Layer, MlpParams, ParamIndex, Real};

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("gradient and parameter shapes differ")]
    Shape,
    #[error("non-finite gradient at {0:?}")]
    NonFinite(ParamIndex),
    #[error("learning rate must be positive and finite, got {0}")]
    LearningRate(f64),
    #[error("winsorization level {0} outside [0, 50]")]
    Level(f64),
    #[error("minibatch size must be at least 1")]
    EmptyBatch,
    #[error("clipping {k} per side leaves nothing of a minibatch of {m}")]
    ClipCount { k: usize, m: usize },
}

/// Winsorization level `c`, learning rate and nominal minibatch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WinsorConfig {
    pub c: f64,
    pub learning_rate: f64,
    pub minibatch_size: usize,
}

impl WinsorConfig {
    pub fn new(c: f64, learning_rate: f64, minibatch_size: usize) -> Result<Self, OptimError> {
        let cfg = WinsorConfig {
            c,
            learning_rate,
            minibatch_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        check_level(self.c)?;
        check_rate(self.learning_rate)?;
        if self.minibatch_size == 0 {
            return Err(OptimError::EmptyBatch);
        }
        let k = clip_count(self.c, self.minibatch_size);
        if 2 * k >= self.minibatch_size {
            return Err(OptimError::ClipCount {
                k,
                m: self.minibatch_size,
            });
        }
        Ok(())
    }
}

fn check_level(c: f64) -> Result<(), OptimError> {
    if (0.0..=50.0).contains(&c) {
        Ok(())
    } else {
        Err(OptimError::Level(c))
    }
}

fn check_rate(lr: f64) -> Result<(), OptimError> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(OptimError::LearningRate(lr))
    }
}

/// Values clipped on each side: `floor(c * m / 100)`.
pub fn clip_count(c: f64, m: usize) -> usize {
    (c * m as f64 / 100.0).floor() as usize
}

#[inline]
fn clip<T: Real>(v: T, lo: T, hi: T) -> T {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

fn by_value<T: Real>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).expect("winsorize requires non-NaN values")
}

/// Clip bounds `(l, u)`: the values at ranks `k` and `m - 1 - k` of the
/// sorted input. `k` saturates at `(m - 1) / 2` so that `l <= u`.
pub fn winsor_bounds<T: Real>(values: &[T], c: f64) -> (T, T) {
    let m = values.len();
    assert!(m > 0, "winsorize needs at least one value");
    let k = clip_count(c, m).min((m - 1) / 2);
    let mut sorted = values.to_vec();
    sorted.sort_by(by_value);
    (sorted[k], sorted[m - 1 - k])
}

/// `sum_e clip(v_e, l, u)` with rank-based bounds, summed in input order.
/// `c = 0` returns the plain sum.
pub fn winsorize<T: Real>(values: &[T], c: f64) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let (lo, hi) = winsor_bounds(values, c);
    let mut sum = T::zero();
    for &v in values {
        sum += clip(v, lo, hi);
    }
    sum
}

/// Integer key with the same order as the (non-NaN) value.
#[inline]
fn order_key<T: Real>(v: T) -> u64 {
    let bits = v.f64().to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | 1 << 63
    }
}

#[inline]
fn from_order_key<T: Real>(key: u64) -> T {
    let bits = if key >> 63 == 1 { key & !(1 << 63) } else { !key };
    T::of(f64::from_bits(bits))
}

/// Winsorized sum for one coordinate whose `m` values are zero except at
/// the listed `(row, value)` pairs (rows ascending). Produces exactly the
/// same result as [`winsorize`] on the dense vector.
fn winsorize_sparse<T: Real>(nonzero: &[(usize, T)], m: usize, k: usize, scratch: &mut Vec<u64>) -> T {
    if nonzero.is_empty() {
        return T::zero();
    }
    if k == 0 {
        let mut sum = T::zero();
        for &(_, v) in nonzero {
            sum += v;
        }
        return sum;
    }
    let negatives = nonzero.iter().filter(|&&(_, v)| v < T::zero()).count();
    let positives = nonzero.iter().filter(|&&(_, v)| v > T::zero()).count();
    let zeros = m - negatives - positives;
    // Ranks below `negatives` hold negative values, the next `zeros` ranks
    // hold zero (listed or not) and the rest hold positive values.
    let mut at_rank = |r: usize| -> T {
        let (r, keep_negative) = if r < negatives {
            (r, true)
        } else if r < negatives + zeros {
            return T::zero();
        } else {
            (r - negatives - zeros, false)
        };
        scratch.clear();
        scratch.extend(
            nonzero
                .iter()
                .filter(|&&(_, v)| if keep_negative { v < T::zero() } else { v > T::zero() })
                .map(|&(_, v)| order_key(v)),
        );
        from_order_key(*scratch.select_nth_unstable(r).1)
    };
    let (lo, hi) = (at_rank(k), at_rank(m - 1 - k));
    let mut sum = T::zero();
    if lo <= T::zero() && hi >= T::zero() {
        for &(_, v) in nonzero {
            sum += clip(v, lo, hi);
        }
    } else {
        // Zeros are clipped to a nonzero bound; walk every row in order.
        let mut next = nonzero.iter().peekable();
        for e in 0..m {
            let v = match next.peek() {
                Some(&&(row, v)) if row == e => {
                    next.next();
                    v
                }
                _ => T::zero(),
            };
            sum += clip(v, lo, hi);
        }
    }
    sum
}

/// `g_w^c` for every trainable coordinate, computed layer by layer from the
/// buffer's delta/input factors with bounds taken over the minibatch only.
pub fn winsorized_gradient<T: Real>(grads: &GradientBuffer<T>, c: f64) -> Result<MlpParams<T>, OptimError> {
    check_level(c)?;
    let m = grads.m();
    if m == 0 {
        return Err(OptimError::EmptyBatch);
    }
    let k = clip_count(c, m).min((m - 1) / 2);
    let mut out = grads.batch_sum().clone();
    let mut nonzero = vec![(0usize, T::zero()); m];
    let mut scratch = Vec::with_capacity(m);
    for l in 0..grads.num_layers() {
        let (fan_in, fan_out) = grads.layer_fan(l);
        let deltas = grads.layer_deltas(l);
        let inputs = grads.layer_inputs(l);
        // Nonzero inputs per input unit, rows ascending.
        let mut columns: Vec<Vec<(usize, T)>> = vec![Vec::new(); fan_in];
        for e in 0..m {
            for (j, &x) in inputs[e * fan_in..(e + 1) * fan_in].iter().enumerate() {
                if x != T::zero() {
                    columns[j].push((e, x));
                }
            }
        }
        let Layer { weights, bias, .. } = &mut out.layers_mut()[l];
        for (j, column) in columns.iter().enumerate() {
            for i in 0..fan_out {
                // Branch-free filtering: about half the deltas are zero, in
                // no predictable pattern.
                let mut n = 0;
                for &(e, x) in column {
                    let d = deltas[e * fan_out + i];
                    nonzero[n] = (e, d * x);
                    n += usize::from(d != T::zero());
                }
                weights[i * fan_in + j] = winsorize_sparse(&nonzero[..n], m, k, &mut scratch);
            }
        }
        for (i, b) in bias.iter_mut().enumerate() {
            let mut n = 0;
            for e in 0..m {
                let d = deltas[e * fan_out + i];
                nonzero[n] = (e, d);
                n += usize::from(d != T::zero());
            }
            *b = winsorize_sparse(&nonzero[..n], m, k, &mut scratch);
        }
    }
    Ok(out)
}

/// `w <- w - (learning_rate / m) * g` for every coordinate.
pub fn apply_update<T: Real>(params: &mut MlpParams<T>, gradient: &MlpParams<T>, learning_rate: f64, m: usize) -> Result<(), OptimError> {
    check_rate(learning_rate)?;
    if m == 0 {
        return Err(OptimError::EmptyBatch);
    }
    if !params.same_shape(gradient) {
        return Err(OptimError::Shape);
    }
    if let Some(bad) = gradient.param_indices().find(|&p| !gradient.get(p).is_finite()) {
        return Err(OptimError::NonFinite(bad));
    }
    let scale = T::of(learning_rate / m as f64);
    for (layer, g) in params.layers_mut().iter_mut().zip(gradient.layers()) {
        for (w, &gw) in layer.weights.iter_mut().zip(&g.weights) {
            *w -= scale * gw;
        }
        for (b, &gb) in layer.bias.iter_mut().zip(&g.bias) {
            *b -= scale * gb;
        }
    }
    Ok(())
}

/// Vanilla SGD with the summed minibatch gradient.
pub fn sgd_step<T: Real>(params: &mut MlpParams<T>, grads: &GradientBuffer<T>, learning_rate: f64) -> Result<(), OptimError> {
    if !grads.shaped_like(params) {
        return Err(OptimError::Shape);
    }
    apply_update(params, grads.batch_sum(), learning_rate, grads.m())
}

/// SGD with each coordinate's gradient replaced by its `c`-winsorized sum.
pub fn winsorized_sgd_step<T: Real>(params: &mut MlpParams<T>, grads: &GradientBuffer<T>, config: &WinsorConfig) -> Result<(), OptimError> {
    check_level(config.c)?;
    if !grads.shaped_like(params) {
        return Err(OptimError::Shape);
    }
    let g = winsorized_gradient(grads, config.c)?;
    apply_update(params, &g, config.learning_rate, grads.m())
}
