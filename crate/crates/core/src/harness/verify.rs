//! Quick self-checks runnable from the command line.

use crate::coherence::{null_worlds, restrict, split_gradient, CoordinateSample, InnerProducts};
use crate::net::{forward, per_example_gradients, Batch, MlpParams, ParamIndex};
use crate::optimizer::{sgd_step, winsorize, winsorized_sgd_step, WinsorConfig};
use crate::rng::{Rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn fixture(widths: &[usize], m: usize, seed: u64) -> (MlpParams<f64>, Vec<f64>, Vec<usize>) {
    let params = MlpParams::<f64>::xavier(widths, seed).expect("valid widths");
    let mut rng = Rng::for_stream(seed, Stream::Fixture);
    let x = (0..m * widths[0]).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
    let k = *widths.last().unwrap() as u64;
    let y = (0..m).map(|_| rng.below(k) as usize).collect();
    (params, x, y)
}

/// Largest violation of `|analytic - fd| <= 1e-5 * max(|fd|, |analytic|)`
/// with a 1e-8 absolute floor, over every coordinate and example.
pub fn finite_difference_gap(widths: &[usize], m: usize, seed: u64) -> f64 {
    let (mut params, x, y) = fixture(widths, m, seed);
    let d = widths[0];
    let grads = per_example_gradients(&params, &Batch::new(&x, d, &y).unwrap()).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let indices: Vec<ParamIndex> = params.param_indices().collect();
    for e in 0..m {
        let xe = &x[e * d..(e + 1) * d];
        let ye = &y[e..e + 1];
        for &p in &indices {
            let orig = params.get(p);
            *params.get_mut(p) = orig + h;
            let up = forward(&params, &Batch::new(xe, d, ye).unwrap()).unwrap().losses[0];
            *params.get_mut(p) = orig - h;
            let down = forward(&params, &Batch::new(xe, d, ye).unwrap()).unwrap().losses[0];
            *params.get_mut(p) = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads.per_example(p, e);
            let err = (an - fd).abs();
            let allowed = (1e-5 * fd.abs().max(an.abs())).max(1e-8);
            worst = worst.max(err / allowed);
        }
    }
    worst
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

pub fn run_all() -> Vec<Check> {
    let mut out = Vec::new();

    let gap = finite_difference_gap(&[2, 4, 3], 5, 1);
    out.push(check("finite differences (2-4-3, 5 examples)", gap <= 1.0, format!("worst error / tolerance = {gap:.3}")));

    let (params, x, y) = fixture(&[6, 8, 5, 3], 12, 2);
    let grads = per_example_gradients(&params, &Batch::new(&x, 6, &y).unwrap()).unwrap();
    let mut worst: f64 = 0.0;
    for p in params.param_indices() {
        let direct: f64 = grads.coordinate_values(p).iter().sum();
        let sum = grads.batch_sum().get(p);
        worst = worst.max((direct - sum).abs() / direct.abs().max(1e-300));
    }
    out.push(check("batch sum equals per-example sum", worst <= 1e-10, format!("max relative gap {worst:.2e}")));

    let clipped = winsorize(&[-10.0, 1.0, 2.0, 3.0, 100.0], 20.0);
    out.push(check("winsorize {-10,1,2,3,100} at c=20", clipped == 10.0, format!("got {clipped}")));

    let mut a = params.clone();
    let mut b = params.clone();
    sgd_step(&mut a, &grads, 0.1).unwrap();
    winsorized_sgd_step(&mut b, &grads, &WinsorConfig::new(0.0, 0.1, 12).unwrap()).unwrap();
    out.push(check("c=0 winsorized step equals SGD", a == b, "bitwise comparison".into()));

    let coords = CoordinateSample::all_weights(&params);
    let rows = restrict(&grads, &coords);
    let mask: Vec<bool> = (0..12).map(|e| e % 3 != 0).collect();
    let (gp, gc) = split_gradient(&rows, &mask).unwrap();
    let g: Vec<f64> = gp.iter().zip(&gc).map(|(p, c)| p + c).collect();
    let ip = InnerProducts::of(&g, &gp, &gc);
    let rel = (ip.pristine + ip.corrupt - ip.total).abs() / ip.total;
    out.push(check("pristine + corrupt inner products equal <g,g>", rel <= 1e-9, format!("relative gap {rel:.2e}")));

    let worlds = null_worlds(&mask, 3, 5);
    let p = mask.iter().filter(|&&b| b).count();
    let ok = worlds.iter().all(|w| w.iter().filter(|&&b| b).count() == p);
    out.push(check("null replicas keep group sizes", ok, format!("|p| = {p} of {}", mask.len())));

    out
}
