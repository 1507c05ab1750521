use super::{Batch, Layer, MlpParams, NetError, Real};

/// Outputs of one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    /// `m x K`, row-major.
    pub logits: Vec<T>,
    pub losses: Vec<T>,
    pub mean_loss: T,
    /// Post-ReLU output of each hidden layer, `m x width`.
    pub activations: Vec<Vec<T>>,
}

/// Layer inputs recorded during the forward pass: `inputs[l]` is the
/// `m x fan_in` input of layer `l` (the batch features for `l = 0`).
pub(crate) struct Trace<T> {
    pub inputs: Vec<Vec<T>>,
    pub logits: Vec<T>,
}

#[inline]
pub(crate) fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `out[e] = bias + sum_j x[e][j] * W[:, j]`, accumulated in ascending `j`
/// and skipping zero inputs.
fn affine<T: Real>(layer: &Layer<T>, wt: &[T], input: &[T], m: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m * layer.fan_out);
    for x in input.chunks_exact(layer.fan_in) {
        let start = out.len();
        out.extend_from_slice(&layer.bias);
        let row = &mut out[start..];
        for (j, &v) in x.iter().enumerate() {
            if v != T::zero() {
                axpy(row, v, &wt[j * layer.fan_out..(j + 1) * layer.fan_out]);
            }
        }
    }
    out
}

pub(crate) fn run_layers<T: Real>(params: &MlpParams<T>, batch: &Batch<'_, T>) -> Result<Trace<T>, NetError> {
    batch.check_against(params)?;
    let m = batch.len();
    let n_layers = params.layers().len();
    let mut inputs = Vec::with_capacity(n_layers);
    inputs.push(batch.features.to_vec());
    let mut logits = Vec::new();
    for (l, layer) in params.layers().iter().enumerate() {
        let wt = layer.transposed();
        let mut out = affine(layer, &wt, &inputs[l], m);
        if l + 1 == n_layers {
            logits = out;
        } else {
            for v in &mut out {
                if *v <= T::zero() {
                    *v = T::zero();
                } else if !v.is_finite() {
                    return Err(NetError::NonFinite(format!("activations of layer {l}")));
                }
            }
            inputs.push(out);
        }
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonFinite("logits".into()));
    }
    Ok(Trace { inputs, logits })
}

/// Softmax cross-entropy of one logit row, max-subtracted.
pub(crate) fn cross_entropy<T: Real>(logits: &[T], label: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    max + sum.ln() - logits[label]
}

pub(crate) fn softmax_into<T: Real>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

/// Lowest index among the maximal entries.
pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn mean<T: Real>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    values.iter().copied().sum::<T>() / T::of(values.len() as f64)
}

pub fn forward<T: Real>(params: &MlpParams<T>, batch: &Batch<'_, T>) -> Result<ForwardPass<T>, NetError> {
    let Trace { mut inputs, logits } = run_layers(params, batch)?;
    let k = params.num_classes();
    let losses: Vec<T> = logits
        .chunks_exact(k)
        .zip(batch.labels)
        .map(|(z, &y)| cross_entropy(z, y))
        .collect();
    inputs.remove(0);
    Ok(ForwardPass {
        mean_loss: mean(&losses),
        logits,
        losses,
        activations: inputs,
    })
}

/// Accuracy, mean loss and per-example correctness over a labelled set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub correct: Vec<bool>,
    pub accuracy: f64,
    pub mean_loss: f64,
}

const EVAL_CHUNK: usize = 500;

/// Evaluates in fixed-size chunks so memory stays bounded for large sets.
pub fn evaluate<T: Real>(params: &MlpParams<T>, batch: &Batch<'_, T>) -> Result<Evaluation, NetError> {
    let m = batch.len();
    let k = params.num_classes();
    let mut correct = Vec::with_capacity(m);
    let mut loss_sum = 0.0f64;
    for start in (0..m).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(m);
        let chunk = Batch {
            features: &batch.features[start * batch.dim..end * batch.dim],
            dim: batch.dim,
            labels: &batch.labels[start..end],
        };
        let trace = run_layers(params, &chunk)?;
        for (z, &y) in trace.logits.chunks_exact(k).zip(chunk.labels) {
            correct.push(argmax(z) == y);
            loss_sum += cross_entropy(z, y).f64();
        }
    }
    let hits = correct.iter().filter(|&&c| c).count();
    let denom = m.max(1) as f64;
    Ok(Evaluation {
        accuracy: hits as f64 / denom,
        mean_loss: loss_sum / denom,
        correct,
    })
}

/// Fraction of examples whose argmax (ties to the lowest class) equals the
/// given label, plus the per-example correctness mask.
pub fn accuracy<T: Real>(params: &MlpParams<T>, batch: &Batch<'_, T>) -> Result<(f64, Vec<bool>), NetError> {
    let eval = evaluate(params, batch)?;
    Ok((eval.accuracy, eval.correct))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_set(n: usize, d: usize, k: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let x = (0..n * d).map(|_| rng.next_f64()).collect();
        let y = (0..n).map(|_| rng.below(k as u64) as usize).collect();
        (x, y)
    }

    #[test]
    fn zero_network_loss_is_ln_k() {
        let p = MlpParams::<f64>::zeros(&[6, 5, 10]).unwrap();
        let (x, y) = random_set(7, 6, 10, 1);
        let out = forward(&p, &Batch::new(&x, 6, &y).unwrap()).unwrap();
        for l in &out.losses {
            assert!((l - 10f64.ln()).abs() < 1e-15);
        }
        assert!((out.mean_loss - 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn duplicate_examples_get_identical_losses() {
        let p = MlpParams::<f64>::xavier(&[4, 8, 3], 3).unwrap();
        let (x1, _) = random_set(1, 4, 3, 2);
        let x: Vec<f64> = x1.iter().chain(&x1).copied().collect();
        let out = forward(&p, &Batch::new(&x, 4, &[2, 2]).unwrap()).unwrap();
        assert_eq!(out.losses[0], out.losses[1]);
    }

    /// 2-4-3 network with hand-chosen parameters; the oracle below is a
    /// straight-line evaluation of the same formula.
    #[test]
    fn tiny_network_matches_manual_forward() {
        let l0 = Layer {
            fan_in: 2,
            fan_out: 4,
            weights: vec![0.5, -0.25, -1.0, 0.75, 0.3, 0.3, -0.6, -0.2],
            bias: vec![0.1, 0.0, -0.2, 0.05],
        };
        let l1 = Layer {
            fan_in: 4,
            fan_out: 3,
            weights: vec![1.0, -1.0, 0.5, 0.0, -0.5, 0.25, 1.5, 2.0, 0.2, 0.4, -0.3, 1.0],
            bias: vec![0.0, 0.1, -0.1],
        };
        let p = MlpParams::from_layers(vec![l0, l1]).unwrap();
        let x = [0.8, -0.4];
        let out = forward(&p, &Batch::new(&x, 2, &[1]).unwrap()).unwrap();

        // h = relu(W0 x + b0)
        let h0 = (0.5f64 * 0.8 + -0.25 * -0.4 + 0.1).max(0.0); // 0.6
        let h1 = (-1.0f64 * 0.8 + 0.75 * -0.4 + 0.0).max(0.0); // -1.1 -> 0
        let h2 = (0.3f64 * 0.8 + 0.3 * -0.4 - 0.2).max(0.0); // -0.08 -> 0
        let h3 = (-0.6f64 * 0.8 + -0.2 * -0.4 + 0.05).max(0.0); // -0.35 -> 0
        let z0 = 1.0 * h0 - 1.0 * h1 + 0.5 * h2 + 0.0 * h3;
        let z1 = -0.5 * h0 + 0.25 * h1 + 1.5 * h2 + 2.0 * h3 + 0.1;
        let z2 = 0.2 * h0 + 0.4 * h1 - 0.3 * h2 + 1.0 * h3 - 0.1;
        let lse = (z0.exp() + z1.exp() + z2.exp()).ln();
        let expected = lse - z1;
        assert!((out.losses[0] - expected).abs() < 1e-14, "{} vs {expected}", out.losses[0]);
        assert_eq!(out.activations[0], vec![h0, h1, h2, h3]);
        // Only h0 = 0.6 survives the ReLU; value computed independently.
        assert!((out.losses[0] - 1.497750235569812).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_predict_class_zero() {
        let p = MlpParams::<f64>::zeros(&[5, 3, 4]).unwrap();
        let (x, y) = random_set(40, 5, 4, 9);
        let (acc, mask) = accuracy(&p, &Batch::new(&x, 5, &y).unwrap()).unwrap();
        let zeros = y.iter().filter(|&&l| l == 0).count();
        assert_eq!(acc, zeros as f64 / 40.0);
        assert!(mask.iter().zip(&y).all(|(&c, &l)| c == (l == 0)));
    }

    #[test]
    fn accuracy_matches_brute_force_recount() {
        let p = MlpParams::<f64>::xavier(&[8, 16, 5], 12).unwrap();
        let (x, y) = random_set(100, 8, 5, 13);
        let (acc, mask) = accuracy(&p, &Batch::new(&x, 8, &y).unwrap()).unwrap();
        // Recount from per-example forward passes.
        let mut hits = 0;
        for e in 0..100 {
            let out = forward(&p, &Batch::new(&x[e * 8..(e + 1) * 8], 8, &y[e..e + 1]).unwrap()).unwrap();
            let z = &out.logits;
            let mut best = 0;
            for c in 1..5 {
                if z[c] > z[best] {
                    best = c;
                }
            }
            let ok = best == y[e];
            assert_eq!(mask[e], ok);
            hits += usize::from(ok);
        }
        assert_eq!(acc, hits as f64 / 100.0);
    }

    #[test]
    fn memorized_fixture_scores_one() {
        // Identity-like network: logits copy one-hot inputs.
        let l0 = Layer {
            fan_in: 3,
            fan_out: 3,
            weights: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            bias: vec![0.0; 3],
        };
        let p = MlpParams::from_layers(vec![l0]).unwrap();
        let x = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let (acc, _) = accuracy(&p, &Batch::new(&x, 3, &[0, 2, 1]).unwrap()).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn shape_and_label_errors() {
        let p = MlpParams::<f64>::zeros(&[4, 3]).unwrap();
        let x = [0.0; 6];
        let b = Batch::new(&x, 3, &[0, 1]).unwrap();
        assert!(matches!(forward(&p, &b), Err(NetError::Shape(_))));
        let x = [0.0; 8];
        let b = Batch::new(&x, 4, &[0, 5]).unwrap();
        assert!(matches!(forward(&p, &b), Err(NetError::Label { label: 5, classes: 3 })));
        assert!(Batch::new(&x, 3, &[0, 1]).is_err());
    }

    #[test]
    fn non_finite_input_is_reported() {
        let p = MlpParams::<f64>::xavier(&[2, 3, 2], 1).unwrap();
        let x = [f64::INFINITY, 1.0];
        let err = forward(&p, &Batch::new(&x, 2, &[0]).unwrap()).unwrap_err();
        assert!(matches!(err, NetError::NonFinite(_)));
    }
}
