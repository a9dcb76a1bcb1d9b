//! Central finite-difference checks of the layer backward passes.
//!
//! Each check contracts a layer's output with a random tensor `r`, so the
//! scalar `sum(out * r)` has the backward pass applied to `r` as its
//! gradient.

use super::layers::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, cross_entropy, dense, dense_backward, maxpool2x2,
    maxpool2x2_backward, relu, relu_backward, BnMode, RunningStats,
};
use super::{CnnError, Tensor};
use crate::rng::Rng;

/// Step used by [`check_layers`].
pub const STEP: f64 = 1e-6;

/// `|a - n| / (|a| + |n|)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn numeric_gradient(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let v = x.data()[i];
            probe.data_mut()[i] = v + h;
            let up = f(&probe);
            probe.data_mut()[i] = v - h;
            let down = f(&probe);
            probe.data_mut()[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst relative error of one layer type over its random shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub cases: usize,
    pub worst: f64,
}

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

fn vector(v: &[f64]) -> Tensor {
    Tensor::new(&[v.len()], v.to_vec()).expect("1-d shape")
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn dim(rng: &mut Rng, lo: u64, hi: u64) -> usize {
    (lo + rng.below(hi - lo + 1)) as usize
}

/// Checks conv, ReLU, max-pool, batch norm (training mode), dense and
/// softmax cross-entropy on `cases` random shapes each, with respect to
/// every input and parameter.
pub fn check_layers(cases: usize, seed: u64) -> Result<Vec<LayerCheck>, CnnError> {
    let mut rng = Rng::new(seed);
    let h = STEP;
    let mut out = Vec::new();
    let mut record = |layer, errors: Vec<f64>| out.push(LayerCheck { layer, cases, worst: errors.into_iter().fold(0.0, f64::max) });

    let mut errs = Vec::new();
    for _ in 0..cases {
        let (n, c, hh, w, oc) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 4), dim(&mut rng, 2, 8), dim(&mut rng, 2, 8), dim(&mut rng, 1, 4));
        let x = randn(&[n, c, hh, w], &mut rng);
        let k = randn(&[oc, c, 3, 3], &mut rng);
        let b: Vec<f64> = (0..oc).map(|_| rng.normal()).collect();
        let r = randn(&[n, oc, hh, w], &mut rng);
        let (dx, dk, db) = conv2d_backward(&x, &k, &r)?;
        errs.push(relative_error(dx.data(), &numeric_gradient(&x, h, |x| dot(&conv2d(x, &k, &b).unwrap(), &r))));
        errs.push(relative_error(dk.data(), &numeric_gradient(&k, h, |k| dot(&conv2d(&x, k, &b).unwrap(), &r))));
        errs.push(relative_error(&db, &numeric_gradient(&vector(&b), h, |b| dot(&conv2d(&x, &k, b.data()).unwrap(), &r))));
    }
    record("conv2d", std::mem::take(&mut errs));

    for _ in 0..cases {
        let shape = [dim(&mut rng, 1, 3), dim(&mut rng, 1, 3), dim(&mut rng, 1, 6), dim(&mut rng, 1, 6)];
        // Inputs at least 0.01 away from the kink.
        let x = Tensor::from_fn(&shape, |_| {
            let v = rng.normal();
            if v.abs() < 0.01 { 0.5 } else { v }
        });
        let r = randn(&shape, &mut rng);
        errs.push(relative_error(relu_backward(&x, &r).data(), &numeric_gradient(&x, h, |x| dot(&relu(x), &r))));
    }
    record("relu", std::mem::take(&mut errs));

    for _ in 0..cases {
        let shape = [dim(&mut rng, 1, 3), dim(&mut rng, 1, 3), 2 * dim(&mut rng, 1, 4), 2 * dim(&mut rng, 1, 4)];
        let count: usize = shape.iter().product();
        // Distinct values 0.01 apart keep every window's maximum stable.
        let mut values: Vec<f64> = (0..count).map(|i| i as f64 * 0.01).collect();
        rng.shuffle(&mut values);
        let x = Tensor::new(&shape, values)?;
        let (y, arg) = maxpool2x2(&x)?;
        let r = randn(y.shape(), &mut rng);
        let dx = maxpool2x2_backward(&r, &arg, x.shape());
        errs.push(relative_error(dx.data(), &numeric_gradient(&x, h, |x| dot(&maxpool2x2(x).unwrap().0, &r))));
    }
    record("maxpool2x2", std::mem::take(&mut errs));

    for _ in 0..cases {
        let shape = [dim(&mut rng, 2, 5), dim(&mut rng, 1, 4), dim(&mut rng, 1, 4), dim(&mut rng, 1, 4)];
        let c = shape[1];
        let x = Tensor::from_fn(&shape, |_| 2.0 * rng.normal() + 0.5);
        let gamma: Vec<f64> = (0..c).map(|_| rng.uniform(0.5, 1.5)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
        let r = randn(&shape, &mut rng);
        let fwd = |x: &Tensor, g: &[f64], b: &[f64]| {
            batchnorm(x, g, b, &mut RunningStats::new(c), BnMode::Train).unwrap()
        };
        let cache = fwd(&x, &gamma, &beta).1.expect("training mode caches");
        let (dx, dg, db) = batchnorm_backward(&r, &cache, &gamma);
        errs.push(relative_error(dx.data(), &numeric_gradient(&x, h, |x| dot(&fwd(x, &gamma, &beta).0, &r))));
        errs.push(relative_error(&dg, &numeric_gradient(&vector(&gamma), h, |g| dot(&fwd(&x, g.data(), &beta).0, &r))));
        errs.push(relative_error(&db, &numeric_gradient(&vector(&beta), h, |b| dot(&fwd(&x, &gamma, b.data()).0, &r))));
    }
    record("batchnorm", std::mem::take(&mut errs));

    for _ in 0..cases {
        let (n, d, o) = (dim(&mut rng, 1, 5), dim(&mut rng, 1, 9), dim(&mut rng, 1, 6));
        let x = randn(&[n, d], &mut rng);
        let w = randn(&[o, d], &mut rng);
        let b: Vec<f64> = (0..o).map(|_| rng.normal()).collect();
        let r = randn(&[n, o], &mut rng);
        let (dx, dw, db) = dense_backward(&x, &w, &r)?;
        errs.push(relative_error(dx.data(), &numeric_gradient(&x, h, |x| dot(&dense(x, &w, &b).unwrap(), &r))));
        errs.push(relative_error(dw.data(), &numeric_gradient(&w, h, |w| dot(&dense(&x, w, &b).unwrap(), &r))));
        errs.push(relative_error(&db, &numeric_gradient(&vector(&b), h, |b| dot(&dense(&x, &w, b.data()).unwrap(), &r))));
    }
    record("dense", std::mem::take(&mut errs));

    for _ in 0..cases {
        let (n, k) = (dim(&mut rng, 1, 6), dim(&mut rng, 2, 7));
        let logits = Tensor::from_fn(&[n, k], |_| 3.0 * rng.normal());
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k as u64) as usize).collect();
        let (_, g) = cross_entropy(&logits, &labels)?;
        errs.push(relative_error(g.data(), &numeric_gradient(&logits, h, |l| cross_entropy(l, &labels).unwrap().0)));
    }
    record("softmax_cross_entropy", errs);
    Ok(out)
}
