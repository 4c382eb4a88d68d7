mod common;

use common::*;
use tightprop::data::{split, synthetic_blobs};
use tightprop::robust::*;
use tightprop::{init_network, InitScheme, InputBox, ReluNetwork, RngState};

fn cfg(kappa: f64, eps: f64, temperature: f64) -> TrainConfig {
    TrainConfig {
        kappa,
        eps_train: eps,
        learning_rate: 0.1,
        epochs: 1,
        batch_size: 1,
        temperature,
        momentum: 0.0,
        seed: 0,
    }
}

#[test]
fn robust_loss_gradient_matches_central_differences() {
    let mut rng = RngState::new(90);
    let (mut checked, mut skipped) = (0, 0);
    for trial in 0..20 {
        let net = init_network(&mut rng, &[10, 8, 8, 3], InitScheme::PaperRandom).unwrap();
        let x = random_vector(&mut rng, 10);
        let bx = InputBox::new(x, 0.05).unwrap();
        let label = trial % 3;
        let c = cfg(0.5, 0.05, if trial % 2 == 0 { 1.0 } else { 0.2 });
        let analytic = robust_loss(&net, &bx, label, &c).unwrap().grads;
        let f = |n: &ReluNetwork| robust_loss(n, &bx, label, &c).unwrap().loss;
        let sig = activation_signature(&net, &bx);
        let h = 1e-5;
        for p in all_params(&net) {
            if activation_signature(&perturbed(&net, p, h), &bx) != sig
                || activation_signature(&perturbed(&net, p, -h), &bx) != sig
            {
                skipped += 1;
                continue;
            }
            let a = match p {
                Param::Weight(l, i, j) => analytic.weights[l].get(i, j),
                Param::Bias(l, i) => analytic.biases[l][i],
            };
            let fd = central_difference(f, &net, p, h);
            assert!(relative_error(a, fd) <= 1e-3, "trial {trial} {p:?}: {a} vs {fd}");
            checked += 1;
        }
    }
    assert!(checked > 20 * 150, "checked {checked}, skipped {skipped}");
}

fn blobs_twins(eps: f64) -> ((f64, f64), (f64, f64)) {
    let mut rng = RngState::new(5);
    let data = synthetic_blobs(&mut rng, 2, 500, 4, 4.0).unwrap();
    let (train_set, test_set) = split(&data, 0.8, &mut rng).unwrap();
    let init = init_network(&mut rng, &[4, 16, 16, 2], InitScheme::TrainedDefault).unwrap();
    let run = |kappa: f64| {
        let c = TrainConfig {
            kappa,
            eps_train: eps,
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 16,
            temperature: 1.0,
            momentum: 0.0,
            seed: 11,
        };
        let (net, _) = train(&init, &train_set, Some(&test_set), &c).unwrap();
        let acc = accuracy(&net, &test_set).unwrap();
        let rob = pgd_robustness(&net, &test_set, &PgdConfig::with_defaults(eps, 3)).unwrap();
        (acc, rob)
    };
    (run(0.0), run(0.5))
}

#[test]
fn blobs_training_at_small_radius() {
    // Unit-variance blobs four apart are already almost perfectly robust at
    // radius 0.1, so only non-degradation can be asked of the robust twin.
    let ((acc_nom, rob_nom), (acc_rob, rob_rob)) = blobs_twins(0.1);
    assert!(acc_nom >= 0.95 && acc_rob >= 0.95, "{acc_nom} {acc_rob}");
    assert!(rob_rob >= rob_nom, "{rob_rob} vs {rob_nom}");
}

#[test]
fn blobs_training_at_large_radius() {
    // Calibrated on this seed: 0.885 nominal against 0.925 robust. Points
    // within the radius of the Bayes boundary flip under either model, which
    // caps the attainable gain.
    let ((_, rob_nom), (acc_rob, rob_rob)) = blobs_twins(0.5);
    assert!(acc_rob >= 0.95, "{acc_rob}");
    assert!(rob_rob >= rob_nom + 0.02, "{rob_rob} vs {rob_nom}");
}
