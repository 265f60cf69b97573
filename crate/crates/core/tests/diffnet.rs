mod common;

use ndarray::{array, Array2};
use rand::Rng as _;

use common::{fd_check, normal_matrix, REL_TOL};
use plas::diffnet::{polyak_update, Activation, AdamState, Gradients, Layer, Mlp};
use plas::rng;

fn single(weight: Array2<f64>, bias: Vec<f64>, activation: Activation) -> Mlp {
    Mlp::from_layers(vec![Layer {
        weight,
        bias: bias.into(),
        activation,
    }])
    .unwrap()
}

#[test]
fn identity_layer_passes_input_through() {
    let net = single(array![[1.0]], vec![0.0], Activation::Identity);
    assert_eq!(net.forward(&[3.0]).unwrap(), vec![3.0]);
}

#[test]
fn tanh_of_zero_weight_is_zero() {
    let net = single(array![[0.0]], vec![0.0], Activation::Tanh);
    assert_eq!(net.forward(&[5.0]).unwrap(), vec![0.0]);
}

#[test]
fn two_layer_forward_matches_hand_evaluation() {
    let mut r = rng::stream(4, 0);
    let net = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Tanh, &mut r).unwrap();
    let x = [0.3, -1.2, 0.7];
    let (l0, l1) = (&net.layers()[0], &net.layers()[1]);
    let mut hidden = [0.0; 4];
    for (i, h) in hidden.iter_mut().enumerate() {
        let mut acc = l0.bias[i];
        for (j, xj) in x.iter().enumerate() {
            acc += l0.weight[[i, j]] * xj;
        }
        *h = acc.max(0.0);
    }
    let mut expected = [0.0; 2];
    for (i, e) in expected.iter_mut().enumerate() {
        let mut acc = l1.bias[i];
        for (j, hj) in hidden.iter().enumerate() {
            acc += l1.weight[[i, j]] * hj;
        }
        *e = acc.tanh();
    }
    let got = net.forward(&x).unwrap();
    for (g, e) in got.iter().zip(expected) {
        assert!((g - e).abs() < 1e-15, "{g} vs {e}");
    }
}

#[test]
fn forward_is_pure() {
    let net = Mlp::new(
        &[2, 5, 1],
        Activation::Relu,
        Activation::Identity,
        &mut rng::stream(1, 0),
    )
    .unwrap();
    let x = normal_matrix(16, 2, &mut rng::stream(2, 0));
    assert_eq!(
        net.forward_batch(x.view()).unwrap(),
        net.forward_batch(x.view()).unwrap()
    );
}

#[test]
fn identity_backward_is_the_input() {
    let net = single(array![[1.0]], vec![0.0], Activation::Identity);
    let (grads, input_grad) = net.backward_single(&[3.0], &[1.0]).unwrap();
    assert_eq!(input_grad, vec![1.0]);
    assert_eq!(grads.to_flat(), vec![3.0, 1.0]);
}

#[test]
fn zero_output_gradient_gives_zero_gradients() {
    let net = Mlp::new(
        &[3, 6, 6, 2],
        Activation::Relu,
        Activation::Tanh,
        &mut rng::stream(3, 0),
    )
    .unwrap();
    let (grads, input_grad) = net.backward_single(&[0.1, 0.2, -0.3], &[0.0, 0.0]).unwrap();
    assert!(grads.iter().all(|g| g == 0.0));
    assert!(input_grad.iter().all(|&g| g == 0.0));
}

/// Weighted sum of the outputs, so every output gets a distinct gradient.
fn random_net_error(seed: u64, hidden: Activation) -> f64 {
    let mut r = rng::stream(seed, 2000);
    let sizes = [
        r.random_range(1..5),
        r.random_range(2..8),
        r.random_range(2..8),
        r.random_range(1..4),
    ];
    let output = [Activation::Identity, Activation::Tanh][r.random_range(0..2)];
    let mut net = Mlp::new(&sizes, hidden, output, &mut r).unwrap();
    let n = r.random_range(1..6);
    let x = normal_matrix(n, sizes[0], &mut r);
    let w = normal_matrix(n, sizes[3], &mut r);
    let trace = net.forward_trace(x.view()).unwrap();
    let (grads, input_grad) = net.backward(&trace, w.view()).unwrap();
    let base = net.params_flat();
    let params_err = fd_check(&base, &grads.to_flat(), |p| {
        net.set_params_flat(p).unwrap();
        (net.forward_batch(x.view()).unwrap() * &w).sum()
    });
    net.set_params_flat(&base).unwrap();
    let input_err = fd_check(x.as_slice().unwrap(), input_grad.as_slice().unwrap(), |v| {
        let xi = Array2::from_shape_vec(x.dim(), v.to_vec()).unwrap();
        (net.forward_batch(xi.view()).unwrap() * &w).sum()
    });
    params_err.worst.max(input_err.worst)
}

#[test]
fn backward_matches_finite_differences_on_random_nets() {
    for hidden in [Activation::Relu, Activation::Tanh] {
        for seed in 0..100 {
            let err = random_net_error(seed, hidden);
            assert!(err < REL_TOL, "seed {seed}, {hidden:?}: {err:e}");
        }
    }
}

fn scalar_net(w: f64) -> Mlp {
    single(array![[w]], vec![0.0], Activation::Identity)
}

fn grads_of(net: &Mlp, g: f64) -> Gradients {
    net.backward_single(&[1.0], &[g]).unwrap().0
}

#[test]
fn adam_zero_gradient_leaves_parameters_and_decays_moments() {
    let mut net = scalar_net(0.5);
    let mut opt = AdamState::new(&net, 1e-3);
    let g = grads_of(&net, 1.0);
    opt.step(&mut net, &g).unwrap();
    let after_first = net.params_flat();
    let m0 = opt.first_moment().to_flat();
    let v0 = opt.second_moment().to_flat();

    let mut still = Mlp::zeros(&[1, 1], Activation::Identity, Activation::Identity).unwrap();
    still.set_params_flat(&after_first).unwrap();
    let mut zero_opt = AdamState::new(&still, 1e-3);
    let g = grads_of(&still, 0.0);
    zero_opt.step(&mut still, &g).unwrap();
    assert_eq!(still.params_flat(), after_first);

    let g = grads_of(&net, 0.0);
    opt.step(&mut net, &g).unwrap();
    for (m, m_prev) in opt.first_moment().to_flat().iter().zip(&m0) {
        assert_eq!(*m, 0.9 * m_prev);
    }
    for (v, v_prev) in opt.second_moment().to_flat().iter().zip(&v0) {
        assert_eq!(*v, 0.999 * v_prev);
    }
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let lr = 1e-3;
    for g in [0.37, -2.5, 1e-3, 40.0] {
        let mut net = scalar_net(0.2);
        let grads = grads_of(&net, g);
        let before = net.params_flat();
        AdamState::new(&net, lr).step(&mut net, &grads).unwrap();
        for ((p, b), gi) in net.params_flat().iter().zip(&before).zip(grads.to_flat()) {
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert!(
                (p - b - expected).abs() < 1e-15,
                "g {gi}: {} vs {expected}",
                p - b
            );
            assert!(((p - b) + lr * gi.signum()).abs() < lr * 1e-5);
        }
    }
}

#[test]
fn adam_descends_a_quadratic_monotonically() {
    // Output at x = 1 is w + b; loss (w + b - 0.5)^2.
    let mut net = scalar_net(2.0);
    let mut opt = AdamState::new(&net, 0.005);
    let output = |net: &Mlp| net.forward(&[1.0]).unwrap()[0];
    let mut prev = (output(&net) - 0.5).powi(2);
    for _ in 0..100 {
        let g = grads_of(&net, 2.0 * (output(&net) - 0.5));
        opt.step(&mut net, &g).unwrap();
        let now = (output(&net) - 0.5).powi(2);
        assert!(now < prev, "{now} >= {prev}");
        prev = now;
    }
}

#[test]
fn polyak_with_tau_one_copies() {
    let mut r = rng::stream(5, 0);
    let online = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Tanh, &mut r).unwrap();
    let mut target = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Tanh, &mut r).unwrap();
    polyak_update(&mut target, &online, 1.0).unwrap();
    assert_eq!(target, online);
}

#[test]
fn polyak_small_tau_from_zero_to_one() {
    let mut target = Mlp::zeros(&[2, 3, 1], Activation::Relu, Activation::Identity).unwrap();
    let mut online = target.clone();
    online
        .set_params_flat(&vec![1.0; online.param_count()])
        .unwrap();
    polyak_update(&mut target, &online, 0.005).unwrap();
    assert!(target.params_flat().iter().all(|&p| p == 0.005));
}

#[test]
fn polyak_gap_decays_geometrically() {
    let mut r = rng::stream(6, 0);
    let online = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut r).unwrap();
    let mut target = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut r).unwrap();
    let gap0: Vec<f64> = target
        .params_flat()
        .iter()
        .zip(online.params_flat())
        .map(|(t, o)| t - o)
        .collect();
    let tau = 0.05;
    for n in 1..=200 {
        polyak_update(&mut target, &online, tau).unwrap();
        let factor = (1.0 - tau).powi(n);
        for ((t, o), g0) in target
            .params_flat()
            .iter()
            .zip(online.params_flat())
            .zip(&gap0)
        {
            assert!(((t - o) - g0 * factor).abs() < 1e-12, "step {n}");
        }
    }
}

#[test]
fn polyak_rejects_bad_tau_and_shapes() {
    let a = Mlp::zeros(&[2, 1], Activation::Identity, Activation::Identity).unwrap();
    let mut b = a.clone();
    assert!(polyak_update(&mut b, &a, 0.0).is_err());
    assert!(polyak_update(&mut b, &a, 1.5).is_err());
    let c = Mlp::zeros(&[3, 1], Activation::Identity, Activation::Identity).unwrap();
    assert!(polyak_update(&mut b, &c, 0.5).is_err());
}
