use super::forward::{axpy, cross_entropy, run_layers, softmax_into, Trace};
use super::{Batch, Layer, MlpParams, NetError, ParamIndex, Real};

/// Per-example gradients of one minibatch and their sum.
///
/// A dense layer's per-example weight gradient is the outer product of the
/// example's upstream delta and its layer input, so the buffer stores those
/// two factors per layer and forms `g_we` on access. Every value returned
/// by [`GradientBuffer::per_example`] is bit-identical to what a
/// single-example backward pass produces. `batch_sum` is accumulated in
/// ascending example order for every coordinate.
#[derive(Debug, Clone)]
pub struct GradientBuffer<T> {
    examples: Vec<usize>,
    /// Per layer, `m x fan_out`.
    deltas: Vec<Vec<T>>,
    /// Per layer, `m x fan_in`.
    inputs: Vec<Vec<T>>,
    fan: Vec<(usize, usize)>,
    batch_sum: MlpParams<T>,
    losses: Vec<T>,
}

impl<T: Real> GradientBuffer<T> {
    /// Minibatch size `m`.
    pub fn m(&self) -> usize {
        self.losses.len()
    }

    /// Caller-facing ids of the batch rows (defaults to `0..m`).
    pub fn examples(&self) -> &[usize] {
        &self.examples
    }

    pub fn with_examples(mut self, ids: &[usize]) -> Self {
        assert_eq!(ids.len(), self.m(), "one id per batch row");
        self.examples = ids.to_vec();
        self
    }

    /// `g_w = sum_e g_we` for every coordinate.
    pub fn batch_sum(&self) -> &MlpParams<T> {
        &self.batch_sum
    }

    /// Per-example losses at the parameters the gradients were taken at.
    pub fn losses(&self) -> &[T] {
        &self.losses
    }

    pub fn total_loss(&self) -> f64 {
        self.losses.iter().map(|l| l.f64()).sum()
    }

    pub fn num_layers(&self) -> usize {
        self.fan.len()
    }

    /// `g_we` for coordinate `p` and batch row `e`.
    #[inline]
    pub fn per_example(&self, p: ParamIndex, e: usize) -> T {
        let (fan_in, fan_out) = self.fan[p.layer];
        let nw = fan_in * fan_out;
        let deltas = &self.deltas[p.layer];
        if p.index < nw {
            let (i, j) = (p.index / fan_in, p.index % fan_in);
            deltas[e * fan_out + i] * self.inputs[p.layer][e * fan_in + j]
        } else {
            deltas[e * fan_out + (p.index - nw)]
        }
    }

    /// The `m` per-example values of one coordinate, in batch order.
    pub fn coordinate_values(&self, p: ParamIndex) -> Vec<T> {
        (0..self.m()).map(|e| self.per_example(p, e)).collect()
    }

    /// Full gradient of one example, shaped like the parameters.
    pub fn example_gradient(&self, e: usize) -> MlpParams<T> {
        let mut g = self.batch_sum.clone();
        for (l, layer) in g.layers_mut().iter_mut().enumerate() {
            let (fan_in, fan_out) = self.fan[l];
            let delta = &self.deltas[l][e * fan_out..(e + 1) * fan_out];
            let input = &self.inputs[l][e * fan_in..(e + 1) * fan_in];
            for (i, &d) in delta.iter().enumerate() {
                for (j, &x) in input.iter().enumerate() {
                    layer.weights[i * fan_in + j] = d * x;
                }
            }
            layer.bias.copy_from_slice(delta);
        }
        g
    }

    /// Upstream deltas of layer `l`, `m x fan_out`.
    pub fn layer_deltas(&self, l: usize) -> &[T] {
        &self.deltas[l]
    }

    /// Inputs of layer `l`, `m x fan_in`.
    pub fn layer_inputs(&self, l: usize) -> &[T] {
        &self.inputs[l]
    }

    pub fn layer_fan(&self, l: usize) -> (usize, usize) {
        self.fan[l]
    }

    pub fn shaped_like(&self, params: &MlpParams<T>) -> bool {
        self.batch_sum.same_shape(params)
    }
}

impl<T: Real> GradientBuffer<T> {
    /// Builds a buffer directly from per-layer `(deltas, inputs)` factors,
    /// shaped `m x fan_out` and `m x fan_in`. Layers must chain. Used for
    /// synthetic per-example gradients.
    pub fn from_factors(layers: Vec<(usize, usize, Vec<T>, Vec<T>)>) -> Result<Self, NetError> {
        let m = match layers.first() {
            Some((fan_in, _, _, inputs)) if *fan_in > 0 => inputs.len() / fan_in,
            _ => return Err(NetError::Architecture(vec![])),
        };
        let mut fan = Vec::new();
        let mut deltas = Vec::new();
        let mut inputs = Vec::new();
        let mut sums = Vec::new();
        for (fan_in, fan_out, d, x) in layers {
            if d.len() != m * fan_out || x.len() != m * fan_in {
                return Err(NetError::Shape(format!("factors do not match {m} examples of {fan_out}x{fan_in}")));
            }
            sums.push(accumulate_layer(&d, &x, fan_in, fan_out));
            fan.push((fan_in, fan_out));
            deltas.push(d);
            inputs.push(x);
        }
        Ok(GradientBuffer {
            examples: (0..m).collect(),
            deltas,
            inputs,
            fan,
            batch_sum: MlpParams::from_layers(sums)?,
            losses: vec![T::zero(); m],
        })
    }
}

/// `sum_e x_e (outer) delta_e` accumulated in `fan_in x fan_out` layout,
/// then transposed to the parameter layout.
fn accumulate_layer<T: Real>(delta: &[T], input: &[T], fan_in: usize, fan_out: usize) -> Layer<T> {
    let mut wt = vec![T::zero(); fan_in * fan_out];
    let mut bias = vec![T::zero(); fan_out];
    for (d, x) in delta.chunks_exact(fan_out).zip(input.chunks_exact(fan_in)) {
        for (j, &xj) in x.iter().enumerate() {
            if xj != T::zero() {
                axpy(&mut wt[j * fan_out..(j + 1) * fan_out], xj, d);
            }
        }
        for (b, &di) in bias.iter_mut().zip(d) {
            *b += di;
        }
    }
    let mut weights = vec![T::zero(); fan_in * fan_out];
    for j in 0..fan_in {
        for i in 0..fan_out {
            weights[i * fan_in + j] = wt[j * fan_out + i];
        }
    }
    Layer {
        fan_in,
        fan_out,
        weights,
        bias,
    }
}

/// Backpropagates every example of the batch separately. Gradients are of
/// the per-example loss; `batch_sum` is their sum (not the mean).
pub fn per_example_gradients<T: Real>(params: &MlpParams<T>, batch: &Batch<'_, T>) -> Result<GradientBuffer<T>, NetError> {
    let Trace { inputs, logits } = run_layers(params, batch)?;
    let m = batch.len();
    let k = params.num_classes();
    let layers = params.layers();

    let mut losses = Vec::with_capacity(m);
    let mut delta = vec![T::zero(); m * k];
    for (e, (z, &y)) in logits.chunks_exact(k).zip(batch.labels).enumerate() {
        losses.push(cross_entropy(z, y));
        let d = &mut delta[e * k..(e + 1) * k];
        softmax_into(z, d);
        d[y] -= T::one();
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(NetError::NonFinite("per-example loss".into()));
    }

    let mut deltas: Vec<Vec<T>> = vec![Vec::new(); layers.len()];
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        if l > 0 {
            // delta_prev[e] = relu'(input) * W^T delta[e], summed in ascending row order.
            let mut prev = vec![T::zero(); m * layer.fan_in];
            for e in 0..m {
                let row = &mut prev[e * layer.fan_in..(e + 1) * layer.fan_in];
                let d = &delta[e * layer.fan_out..(e + 1) * layer.fan_out];
                for (i, &di) in d.iter().enumerate() {
                    if di != T::zero() {
                        axpy(row, di, &layer.weights[i * layer.fan_in..(i + 1) * layer.fan_in]);
                    }
                }
                let act = &inputs[l][e * layer.fan_in..(e + 1) * layer.fan_in];
                for (r, &a) in row.iter_mut().zip(act) {
                    if a <= T::zero() {
                        *r = T::zero();
                    }
                }
            }
            deltas[l] = std::mem::replace(&mut delta, prev);
        } else {
            deltas[l] = std::mem::take(&mut delta);
        }
    }

    let sum_layers = layers
        .iter()
        .enumerate()
        .map(|(l, layer)| accumulate_layer(&deltas[l], &inputs[l], layer.fan_in, layer.fan_out))
        .collect();
    let batch_sum = MlpParams::from_layers(sum_layers)?;
    if !batch_sum.is_finite() {
        return Err(NetError::NonFinite("batch gradient".into()));
    }

    Ok(GradientBuffer {
        examples: (0..m).collect(),
        fan: layers.iter().map(|l| (l.fan_in, l.fan_out)).collect(),
        deltas,
        inputs,
        batch_sum,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::forward;
    use crate::rng::Rng;

    fn random_batch(m: usize, d: usize, k: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let x = (0..m * d).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
        let y = (0..m).map(|_| rng.below(k as u64) as usize).collect();
        (x, y)
    }

    fn example_loss(p: &MlpParams<f64>, x: &[f64], y: usize) -> f64 {
        forward(p, &Batch::new(x, x.len(), &[y]).unwrap()).unwrap().losses[0]
    }

    #[test]
    fn matches_central_differences_on_2_4_3() {
        let mut p = MlpParams::<f64>::xavier(&[2, 4, 3], 21).unwrap();
        for (l, layer) in p.layers_mut().iter_mut().enumerate() {
            for (i, b) in layer.bias.iter_mut().enumerate() {
                *b = 0.05 * (i as f64 + 1.0) * if l == 0 { 1.0 } else { -1.0 };
            }
        }
        let (x, y) = random_batch(5, 2, 3, 22);
        let grads = per_example_gradients(&p, &Batch::new(&x, 2, &y).unwrap()).unwrap();
        let h = 1e-5;
        let coords: Vec<ParamIndex> = p.param_indices().collect();
        for e in 0..5 {
            let xe = &x[e * 2..(e + 1) * 2];
            for &c in &coords {
                let mut plus = p.clone();
                *plus.get_mut(c) += h;
                let mut minus = p.clone();
                *minus.get_mut(c) -= h;
                let fd = (example_loss(&plus, xe, y[e]) - example_loss(&minus, xe, y[e])) / (2.0 * h);
                let an = grads.per_example(c, e);
                let tol = (1e-5 * fd.abs().max(an.abs())).max(1e-8);
                assert!((fd - an).abs() <= tol, "example {e} coord {c:?}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn single_example_sum_is_that_gradient() {
        let p = MlpParams::<f64>::xavier(&[5, 6, 4], 1).unwrap();
        let (x, y) = random_batch(1, 5, 4, 2);
        let g = per_example_gradients(&p, &Batch::new(&x, 5, &y).unwrap()).unwrap();
        assert_eq!(g.batch_sum(), &g.example_gradient(0));
    }

    #[test]
    fn batch_sum_equals_ordered_per_example_sum_bitwise() {
        let p = MlpParams::<f64>::xavier(&[6, 7, 5, 3], 3).unwrap();
        let (x, y) = random_batch(9, 6, 3, 4);
        let g = per_example_gradients(&p, &Batch::new(&x, 6, &y).unwrap()).unwrap();
        for c in p.param_indices() {
            let mut s = 0.0;
            for e in 0..g.m() {
                s += g.per_example(c, e);
            }
            assert_eq!(s, g.batch_sum().get(c), "{c:?}");
        }
    }

    #[test]
    fn duplicated_example_doubles_its_contribution() {
        let p = MlpParams::<f64>::xavier(&[4, 5, 3], 8).unwrap();
        let (x, y) = random_batch(1, 4, 3, 9);
        let single = per_example_gradients(&p, &Batch::new(&x, 4, &y).unwrap()).unwrap();
        let xx: Vec<f64> = x.iter().chain(&x).copied().collect();
        let yy = [y[0], y[0]];
        let double = per_example_gradients(&p, &Batch::new(&xx, 4, &yy).unwrap()).unwrap();
        for c in p.param_indices() {
            assert_eq!(double.batch_sum().get(c), 2.0 * single.batch_sum().get(c));
        }
    }

    #[test]
    fn squared_norm_decomposes_into_pairwise_inner_products() {
        let p = MlpParams::<f64>::xavier(&[5, 8, 4], 30).unwrap();
        let (x, y) = random_batch(7, 5, 4, 31);
        let g = per_example_gradients(&p, &Batch::new(&x, 5, &y).unwrap()).unwrap();
        let per: Vec<_> = (0..7).map(|e| g.example_gradient(e)).collect();
        let direct = g.batch_sum().squared_norm();
        let diag: f64 = per.iter().map(|v| v.squared_norm()).sum();
        let mut cross = 0.0;
        for a in 0..7 {
            for b in 0..7 {
                if a != b {
                    cross += per[a].dot(&per[b]);
                }
            }
        }
        assert!((direct - (diag + cross)).abs() <= 1e-8 * direct, "{direct} vs {}", diag + cross);
    }

    #[test]
    fn orthogonal_examples_on_linear_toy_add_in_quadrature() {
        // Softmax targets picked so that the two output deltas are
        // orthogonal: p_a = (q, r, s, s), p_b = (r, q, s, s) with
        // q r + s^2 = r, q + r + 2 s = 1.
        let r: f64 = 0.1;
        let s = (0.2 + (0.08f64).sqrt()) / 2.0;
        let q = 1.0 - r - 2.0 * s;
        let pa = [q, r, s, s];
        let pb = [r, q, s, s];
        let mut layer = Layer::zeros(2, 4);
        for c in 0..4 {
            layer.weights[c * 2] = pa[c].ln();
            layer.weights[c * 2 + 1] = pb[c].ln();
        }
        let p = MlpParams::from_layers(vec![layer]).unwrap();
        let x = [1.0, 0.0, 0.0, 1.0];
        let g = per_example_gradients(&p, &Batch::new(&x, 2, &[0, 1]).unwrap()).unwrap();
        let (ga, gb) = (g.example_gradient(0), g.example_gradient(1));
        assert!(ga.dot(&gb).abs() < 1e-15);
        let lhs = g.batch_sum().squared_norm();
        let rhs = ga.squared_norm() + gb.squared_norm();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs, "{lhs} vs {rhs}");
    }

    #[test]
    fn small_step_loss_change_is_first_order() {
        let p = MlpParams::<f64>::xavier(&[6, 10, 4], 40).unwrap();
        let (x, y) = random_batch(12, 6, 4, 41);
        let batch = Batch::new(&x, 6, &y).unwrap();
        let g = per_example_gradients(&p, &batch).unwrap();
        let alpha = 1e-4;
        let mut stepped = p.clone();
        for c in p.param_indices() {
            *stepped.get_mut(c) -= alpha * g.batch_sum().get(c);
        }
        let before: f64 = g.losses().iter().sum();
        let after: f64 = forward(&stepped, &batch).unwrap().losses.iter().sum();
        let predicted = -alpha * g.batch_sum().squared_norm();
        let realized = after - before;
        assert!((realized - predicted).abs() <= 0.1 * predicted.abs(), "{realized} vs {predicted}");
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        // Hidden pre-activation exactly zero: weight row and bias zero.
        let l0 = Layer {
            fan_in: 1,
            fan_out: 1,
            weights: vec![0.0],
            bias: vec![0.0],
        };
        let l1 = Layer {
            fan_in: 1,
            fan_out: 2,
            weights: vec![1.0, -1.0],
            bias: vec![0.0, 0.0],
        };
        let p = MlpParams::from_layers(vec![l0, l1]).unwrap();
        let g = per_example_gradients(&p, &Batch::new(&[1.0], 1, &[0]).unwrap()).unwrap();
        assert_eq!(g.batch_sum().layers()[0].weights[0], 0.0);
        assert_eq!(g.batch_sum().layers()[0].bias[0], 0.0);
    }

    #[test]
    fn f32_gradients_track_f64() {
        let p64 = MlpParams::<f64>::xavier(&[5, 6, 3], 50).unwrap();
        let p32: MlpParams<f32> = p64.cast();
        let (x, y) = random_batch(4, 5, 3, 51);
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let g64 = per_example_gradients(&p64, &Batch::new(&x, 5, &y).unwrap()).unwrap();
        let g32 = per_example_gradients(&p32, &Batch::new(&x32, 5, &y).unwrap()).unwrap();
        for c in p64.param_indices() {
            let a = g64.batch_sum().get(c);
            let b = f64::from(g32.batch_sum().get(c));
            assert!((a - b).abs() < 1e-5, "{c:?}: {a} vs {b}");
        }
    }
}
