//! Central finite-difference checks of every backward pass.
//!
//! Each check contracts the layer output with a fixed random tensor `r`, so
//! the scalar loss is `sum(out * r)` and its input gradient is the layer's
//! backward applied to `r`. Errors are `|a - n| / (|a| + |n|)` in the
//! Euclidean norm over all checked coordinates.

use layerscope::cnn::layers::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, cross_entropy, dense, dense_backward, maxpool2x2,
    maxpool2x2_backward, relu, relu_backward, BnMode, RunningStats,
};
use layerscope::cnn::{ModelSpec, Network, Tensor};
use layerscope::rng::Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nn == 0.0 {
        0.0
    } else {
        diff / (na + nn)
    }
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Numerical gradient of `f` at `x`.
fn numeric(x: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let v = x.data()[i];
            probe.data_mut()[i] = v + H;
            let up = f(&probe);
            probe.data_mut()[i] = v - H;
            let down = f(&probe);
            probe.data_mut()[i] = v;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn vec_tensor(v: &[f64]) -> Tensor {
    Tensor::new(&[v.len()], v.to_vec()).unwrap()
}

#[test]
fn conv2d_gradients() {
    let mut rng = Rng::new(1);
    let mut shapes = vec![(2, 3, 8, 8, 4)];
    for _ in 0..9 {
        shapes.push((
            1 + rng.below(3) as usize,
            1 + rng.below(4) as usize,
            2 + rng.below(6) as usize,
            2 + rng.below(6) as usize,
            1 + rng.below(4) as usize,
        ));
    }
    for (idx, &(n, c, h, w, oc)) in shapes.iter().enumerate() {
        let x = randn(&[n, c, h, w], &mut rng);
        let k = randn(&[oc, c, 3, 3], &mut rng);
        let b: Vec<f64> = (0..oc).map(|_| rng.normal()).collect();
        let r = randn(&[n, oc, h, w], &mut rng);
        let (dx, dk, db) = conv2d_backward(&x, &k, &r).unwrap();
        let nx = numeric(&x, |x| dot(&conv2d(x, &k, &b).unwrap(), &r));
        let nk = numeric(&k, |k| dot(&conv2d(&x, k, &b).unwrap(), &r));
        let nb = numeric(&vec_tensor(&b), |b| dot(&conv2d(&x, &k, b.data()).unwrap(), &r));
        // The named 2x3x8x8 case is held to 1e-6.
        let tol = if idx == 0 { 1e-6 } else { TOL };
        for (name, a, num) in [("x", dx.data(), &nx), ("w", dk.data(), &nk), ("b", &db[..], &nb)] {
            let e = rel_error(a, num);
            assert!(e < tol, "shape {:?} d{name}: {e:e}", (n, c, h, w, oc));
        }
    }
}

/// Values spaced at least 0.01 apart, so a perturbation of `H` never
/// changes a window's maximum.
fn distinct(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    rng.shuffle(&mut v);
    Tensor::new(shape, v).unwrap()
}

#[test]
fn maxpool_gradients() {
    let mut rng = Rng::new(2);
    for _ in 0..10 {
        let shape = [1 + rng.below(3) as usize, 1 + rng.below(3) as usize, 2 * (1 + rng.below(4) as usize), 2 * (1 + rng.below(4) as usize)];
        let x = distinct(&shape, &mut rng);
        let (y, arg) = maxpool2x2(&x).unwrap();
        let r = randn(y.shape(), &mut rng);
        let dx = maxpool2x2_backward(&r, &arg, x.shape());
        let nx = numeric(&x, |x| dot(&maxpool2x2(x).unwrap().0, &r));
        let e = rel_error(dx.data(), &nx);
        assert!(e < TOL, "shape {shape:?}: {e:e}");
    }
}

#[test]
fn batchnorm_gradients() {
    let mut rng = Rng::new(3);
    let mut shapes = vec![[4, 3, 4, 4]];
    for _ in 0..9 {
        shapes.push([2 + rng.below(4) as usize, 1 + rng.below(4) as usize, 1 + rng.below(4) as usize, 1 + rng.below(4) as usize]);
    }
    for shape in shapes {
        let c = shape[1];
        let x = Tensor::from_fn(&shape, |_| 2.0 * rng.normal() + 0.5);
        let gamma: Vec<f64> = (0..c).map(|_| rng.uniform(0.5, 1.5)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
        let r = randn(&shape, &mut rng);
        let fwd = |x: &Tensor, g: &[f64], b: &[f64]| {
            let mut st = RunningStats::new(c);
            batchnorm(x, g, b, &mut st, BnMode::Train).unwrap()
        };
        let (_, cache) = fwd(&x, &gamma, &beta);
        let (dx, dg, db) = batchnorm_backward(&r, &cache.unwrap(), &gamma);
        let nx = numeric(&x, |x| dot(&fwd(x, &gamma, &beta).0, &r));
        let ng = numeric(&vec_tensor(&gamma), |g| dot(&fwd(&x, g.data(), &beta).0, &r));
        let nb = numeric(&vec_tensor(&beta), |b| dot(&fwd(&x, &gamma, b.data()).0, &r));
        for (name, a, num) in [("x", dx.data(), &nx), ("gamma", &dg[..], &ng), ("beta", &db[..], &nb)] {
            let e = rel_error(a, num);
            assert!(e < TOL, "shape {shape:?} d{name}: {e:e}");
        }
    }
}

#[test]
fn dense_gradients() {
    let mut rng = Rng::new(4);
    for _ in 0..10 {
        let (n, d, o) = (1 + rng.below(5) as usize, 1 + rng.below(9) as usize, 1 + rng.below(6) as usize);
        let x = randn(&[n, d], &mut rng);
        let w = randn(&[o, d], &mut rng);
        let b: Vec<f64> = (0..o).map(|_| rng.normal()).collect();
        let r = randn(&[n, o], &mut rng);
        let (dx, dw, db) = dense_backward(&x, &w, &r).unwrap();
        let nx = numeric(&x, |x| dot(&dense(x, &w, &b).unwrap(), &r));
        let nw = numeric(&w, |w| dot(&dense(&x, w, &b).unwrap(), &r));
        let nb = numeric(&vec_tensor(&b), |b| dot(&dense(&x, &w, b.data()).unwrap(), &r));
        for (name, a, num) in [("x", dx.data(), &nx), ("w", dw.data(), &nw), ("b", &db[..], &nb)] {
            let e = rel_error(a, num);
            assert!(e < TOL, "shape {:?} d{name}: {e:e}", (n, d, o));
        }
    }
}

#[test]
fn relu_gradients() {
    let mut rng = Rng::new(5);
    for _ in 0..10 {
        let shape = [1 + rng.below(3) as usize, 1 + rng.below(3) as usize, 1 + rng.below(5) as usize, 1 + rng.below(5) as usize];
        // Keep inputs away from the kink.
        let x = Tensor::from_fn(&shape, |_| {
            let v: f64 = rng.normal();
            if v.abs() < 0.01 { 0.5 } else { v }
        });
        let r = randn(&shape, &mut rng);
        let dx = relu_backward(&x, &r);
        let nx = numeric(&x, |x| dot(&relu(x), &r));
        let e = rel_error(dx.data(), &nx);
        assert!(e < TOL, "shape {shape:?}: {e:e}");
    }
}

#[test]
fn softmax_cross_entropy_gradients() {
    let mut rng = Rng::new(6);
    for _ in 0..10 {
        let (n, k) = (1 + rng.below(6) as usize, 2 + rng.below(6) as usize);
        let logits = Tensor::from_fn(&[n, k], |_| 3.0 * rng.normal());
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k as u64) as usize).collect();
        let (_, g) = cross_entropy(&logits, &labels).unwrap();
        let ng = numeric(&logits, |l| cross_entropy(l, &labels).unwrap().0);
        let e = rel_error(g.data(), &ng);
        assert!(e < TOL, "shape {:?}: {e:e}", (n, k));
    }
}

#[test]
fn whole_network_gradients() {
    let mut rng = Rng::new(7);
    let spec = ModelSpec {
        input_size: 64,
        conv_channels: vec![2, 2, 3, 3, 3, 3],
        dense_hidden: 4,
        class_names: vec!["a".into(), "b".into(), "c".into()],
    };
    let mut net = Network::init(&spec, &mut rng).unwrap();
    let x = Tensor::from_fn(&[3, 1, 64, 64], |_| rng.uniform(0.0, 255.0));
    let labels = [0, 2, 1];
    let (logits, cache) = net.forward(&x, BnMode::Train).unwrap();
    let (_, dl) = cross_entropy(&logits, &labels).unwrap();
    let grads = net.backward(&cache.unwrap(), &dl).unwrap();

    let loss = |net: &mut Network| {
        let (l, _) = net.forward(&x, BnMode::Train).unwrap();
        cross_entropy(&l, &labels).unwrap().0
    };
    for p in 0..net.params().len() {
        let len = net.params()[p].len();
        // Up to 12 coordinates per tensor.
        let picks: Vec<usize> = (0..len.min(12)).map(|_| rng.below(len as u64) as usize).collect();
        let (mut a, mut num) = (Vec::new(), Vec::new());
        for &i in &picks {
            let v = net.params()[p].data()[i];
            net.params_mut()[p].data_mut()[i] = v + H;
            let up = loss(&mut net);
            net.params_mut()[p].data_mut()[i] = v - H;
            let down = loss(&mut net);
            net.params_mut()[p].data_mut()[i] = v;
            a.push(grads[p].data()[i]);
            num.push((up - down) / (2.0 * H));
        }
        let e = rel_error(&a, &num);
        assert!(e < TOL, "{}: {e:e}", net.param_names()[p]);
    }
}
