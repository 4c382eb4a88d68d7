mod common;

use common::*;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use tightprop::{init_network, InitScheme, RngState};

#[test]
fn forward_agrees_with_naive_evaluator() {
    let mut rng = RngState::new(31);
    for _ in 0..20 {
        let net = init_network(&mut rng, &[7, 12, 9, 4], InitScheme::PaperRandom).unwrap();
        let x = random_vector(&mut rng, 7);
        let fast = net.forward(&x).unwrap();
        for (a, b) in fast.iter().zip(naive_forward(&net, &x)) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn backward_matches_central_differences() {
    let mut rng = RngState::new(17);
    let mut checked = 0;
    for _ in 0..5 {
        let net = init_network(&mut rng, &[10, 8, 6, 3], InitScheme::PaperRandom).unwrap();
        let x = random_vector(&mut rng, 10);
        let up = random_vector(&mut rng, 3);
        let tape = net.backward(&x, &up).unwrap();
        let f = |n: &tightprop::ReluNetwork| n.forward(&x).unwrap().iter().zip(up.iter()).map(|(a, b)| a * b).sum();
        let sig = |n: &tightprop::ReluNetwork| {
            n.pre_activations(&x)
                .unwrap()
                .iter()
                .flat_map(|z| z.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        let h = 1e-5;
        for p in all_params(&net) {
            if sig(&perturbed(&net, p, h)) != sig(&net) || sig(&perturbed(&net, p, -h)) != sig(&net) {
                continue;
            }
            let analytic = match p {
                Param::Weight(l, i, j) => tape.weights[l].get(i, j),
                Param::Bias(l, i) => tape.biases[l][i],
            };
            let fd = central_difference(f, &net, p, h);
            assert!(relative_error(analytic, fd) <= 1e-4, "{p:?}: {analytic} vs {fd}");
            checked += 1;
        }
        for j in 0..10 {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let g = |v: &[f64]| -> f64 { net.forward(v).unwrap().iter().zip(up.iter()).map(|(a, b)| a * b).sum() };
            let fd = (g(&xp) - g(&xm)) / (2.0 * h);
            assert!(relative_error(tape.input[j], fd) <= 1e-4);
        }
    }
    assert!(checked > 700, "only {checked} parameters away from kinks");
}

#[test]
fn unit_gaussian_weights_pass_chi_square() {
    let mut rng = RngState::new(2024);
    // fan_in = 1 gives unit standard deviation.
    let net = init_network(&mut rng, &[1, 100_000], InitScheme::PaperRandom).unwrap();
    let hist = &net.export_weight_histogram(50).unwrap()[0];
    let total: u64 = hist.counts.iter().sum();
    assert_eq!(total, 100_000);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (mut stat, mut cells) = (0.0, 0);
    for (b, &obs) in hist.counts.iter().enumerate() {
        let p = normal.cdf(hist.edges[b + 1]) - normal.cdf(hist.edges[b]);
        let expected = p * total as f64;
        if expected >= 5.0 {
            stat += (obs as f64 - expected).powi(2) / expected;
            cells += 1;
        }
    }
    let p_value = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat);
    assert!(p_value > 1e-3, "chi2 = {stat} over {cells} cells, p = {p_value}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_affine_within_an_activation_region(seed in any::<u64>(), alpha in 0.0f64..1.0) {
        let mut rng = RngState::new(seed);
        let net = init_network(&mut rng, &[4, 9, 7, 2], InitScheme::PaperRandom).unwrap();
        let x = random_vector(&mut rng, 4);
        let dir = random_vector(&mut rng, 4);
        let xp: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + 1e-4 * d).collect();
        let pattern = |v: &[f64]| {
            net.pre_activations(v).unwrap()[..2]
                .iter()
                .flat_map(|z| z.iter().map(|&u| u > 0.0).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        prop_assume!(pattern(&x) == pattern(&xp));
        let mid: Vec<f64> = x.iter().zip(&xp).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        prop_assume!(pattern(&mid) == pattern(&x));
        let (fa, fb, fm) = (net.forward(&x).unwrap(), net.forward(&xp).unwrap(), net.forward(&mid).unwrap());
        for i in 0..2 {
            prop_assert!((fm[i] - (alpha * fa[i] + (1.0 - alpha) * fb[i])).abs() < 1e-10);
        }
    }
}
