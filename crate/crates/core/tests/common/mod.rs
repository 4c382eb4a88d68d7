#![allow(dead_code)]

use tightprop::bounds::propagate_blockwise_trace;
use tightprop::{init_network, InitScheme, InputBox, ReluNetwork, RngState, Vector};

/// Triple-loop evaluation with no shared code paths.
pub fn naive_forward(net: &ReluNetwork, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let layers = net.layers();
    for (l, layer) in layers.iter().enumerate() {
        let w = layer.weights();
        let mut out = vec![0.0; w.rows()];
        for i in 0..w.rows() {
            let mut s = layer.bias()[i];
            for j in 0..w.cols() {
                s += w.get(i, j) * h[j];
            }
            out[i] = if l + 1 < layers.len() && s < 0.0 { 0.0 } else { s };
        }
        h = out;
    }
    h
}

pub fn random_vector(rng: &mut RngState, n: usize) -> Vector {
    (0..n).map(|_| rng.standard_normal()).collect()
}

/// Paper-random net with `depth` affine layers of random widths.
pub fn random_net(rng: &mut RngState, depth: usize) -> ReluNetwork {
    let mut dims = vec![1 + rng.below(6)];
    for _ in 1..depth {
        dims.push(1 + rng.below(10));
    }
    dims.push(1 + rng.below(3));
    init_network(rng, &dims, InitScheme::PaperRandom).unwrap()
}

pub fn random_box(rng: &mut RngState, n: usize) -> InputBox {
    InputBox::new(random_vector(rng, n), rng.uniform_in(0.0, 1.0)).unwrap()
}

/// Which parameter a finite-difference probe perturbs.
#[derive(Clone, Copy, Debug)]
pub enum Param {
    Weight(usize, usize, usize),
    Bias(usize, usize),
}

pub fn all_params(net: &ReluNetwork) -> Vec<Param> {
    let mut out = Vec::new();
    for (l, layer) in net.layers().iter().enumerate() {
        for i in 0..layer.out_dim() {
            for j in 0..layer.in_dim() {
                out.push(Param::Weight(l, i, j));
            }
            out.push(Param::Bias(l, i));
        }
    }
    out
}

pub fn perturbed(net: &ReluNetwork, p: Param, delta: f64) -> ReluNetwork {
    let mut n = net.clone();
    match p {
        Param::Weight(l, i, j) => {
            let w = n.layers_mut()[l].weights_mut();
            let v = w.get(i, j);
            w.set(i, j, v + delta);
        }
        Param::Bias(l, i) => n.layers_mut()[l].bias_mut()[i] += delta,
    }
    n
}

pub fn central_difference(f: impl Fn(&ReluNetwork) -> f64, net: &ReluNetwork, p: Param, h: f64) -> f64 {
    (f(&perturbed(net, p, h)) - f(&perturbed(net, p, -h))) / (2.0 * h)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Signs of every pre-activation at `x` together with the bound masks over
/// `input`; equal signatures mean no ReLU kink or mask flip lies between
/// two parameter settings.
pub fn activation_signature(net: &ReluNetwork, input: &InputBox) -> Vec<bool> {
    let mut sig: Vec<bool> = net
        .pre_activations(input.center())
        .unwrap()
        .iter()
        .flat_map(|z| z.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
        .collect();
    for m in propagate_blockwise_trace(net, input, false).unwrap().masks {
        sig.extend((0..m.len()).map(|i| m.is_active(i)));
    }
    sig
}
