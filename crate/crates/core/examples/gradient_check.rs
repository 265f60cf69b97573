//! Reverse-mode gradients of a small MLP against central differences, then
//! a short Adam fit of `sin` on `[-2, 2]`.

use ndarray::{Array1, Array2};
use plas::diffnet::{Activation, AdamState, Mlp};
use plas::rng;
use rand::Rng;

fn loss(net: &Mlp, x: &Array2<f64>, y: &Array1<f64>) -> f64 {
    let out = net.forward_batch(x.view()).unwrap();
    out.column(0)
        .iter()
        .zip(y)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / y.len() as f64
}

fn main() {
    let mut r = rng::stream(0, 0);
    let mut net = Mlp::new(
        &[1, 32, 32, 1],
        Activation::Tanh,
        Activation::Identity,
        &mut r,
    )
    .unwrap();
    let x = Array2::from_shape_simple_fn((64, 1), || r.random_range(-2.0..2.0));
    let y = x.column(0).mapv(f64::sin);

    let grads = |net: &Mlp| {
        let trace = net.forward_trace(x.view()).unwrap();
        let out = trace.output();
        let n = y.len() as f64;
        let g = Array2::from_shape_fn(out.dim(), |(i, _)| 2.0 * (out[[i, 0]] - y[i]) / n);
        net.backward(&trace, g.view()).unwrap().0
    };

    let analytic = grads(&net).to_flat();
    let params = net.params_flat();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in (0..params.len()).step_by(7) {
        let mut p = params.clone();
        p[i] += h;
        net.set_params_flat(&p).unwrap();
        let up = loss(&net, &x, &y);
        p[i] -= 2.0 * h;
        net.set_params_flat(&p).unwrap();
        let down = loss(&net, &x, &y);
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / (fd.abs() + analytic[i].abs()).max(1e-8));
    }
    net.set_params_flat(&params).unwrap();
    println!(
        "{} parameters, worst relative gradient error {worst:.2e}",
        params.len()
    );

    let mut adam = AdamState::new(&net, 1e-2);
    for step in 0..=2000 {
        if step % 400 == 0 {
            println!("step {step:4}  mse {:.5}", loss(&net, &x, &y));
        }
        let g = grads(&net);
        adam.step(&mut net, &g).unwrap();
    }
}
