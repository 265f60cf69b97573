mod common;

use std::sync::Arc;

use ndarray::{array, Array1, Array2};

use common::{bimodal_dataset, normal_matrix};
use plas::agent::{
    train_plas, AgentConfig, CriticPair, LatentActor, LatentPolicy, PlasAgent, PolicyHead,
};
use plas::cvae::{train_cvae, BehaviorCvae, CvaeConfig};
use plas::diffnet::{Activation, Layer, Mlp};
use plas::envs::{Batch, ToyEnv};
use plas::rng;

fn layer(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Layer {
    Layer {
        weight,
        bias,
        activation,
    }
}

fn small_cvae(state_dim: usize, action_dim: usize, seed: u64) -> Arc<BehaviorCvae> {
    let config = CvaeConfig {
        hidden: vec![8, 8],
        ..CvaeConfig::default()
    };
    Arc::new(BehaviorCvae::new(state_dim, action_dim, &config, &mut rng::stream(seed, 0)).unwrap())
}

#[test]
fn zero_actor_decodes_the_origin() {
    let cvae = small_cvae(3, 2, 1);
    let actor = LatentActor {
        net: Mlp::zeros(
            &[3, 5, cvae.latent_dim()],
            Activation::Relu,
            Activation::Tanh,
        )
        .unwrap(),
        max_latent_action: 2.0,
    };
    let policy = LatentPolicy::from_parts(cvae.clone(), actor, None).unwrap();
    let states = normal_matrix(20, 3, &mut rng::stream(2, 0));
    let actions = policy.act_batch(states.view()).unwrap();
    let origin = vec![0.0; cvae.latent_dim()];
    for (s, a) in states.rows().into_iter().zip(actions.rows()) {
        assert_eq!(a.to_vec(), cvae.decode(&s.to_vec(), &origin).unwrap());
    }
}

/// One transition repeated; the targets never move, so each critic regresses
/// onto the constant `r + gamma * y`.
#[test]
fn critic_converges_to_a_fixed_target() {
    let mut critics =
        CriticPair::new(2, 1, &[32, 32], 1e-3, 1.0, 0.99, &mut rng::stream(3, 0)).unwrap();
    let n = 10;
    let row = |v: &[f64]| Array2::from_shape_fn((n, v.len()), |(_, j)| v[j]);
    let batch = Batch {
        states: row(&[0.2, -0.4]),
        actions: row(&[0.5]),
        rewards: Array1::from_elem(n, 0.7),
        next_states: row(&[0.3, 0.1]),
        dones: Array1::zeros(n),
    };
    let next_actions = row(&[-0.3]);
    let target = critics
        .targets(
            batch.rewards.view(),
            batch.next_states.view(),
            next_actions.view(),
            batch.dones.view(),
        )
        .unwrap()[0];
    for _ in 0..2000 {
        critics.update(&batch, next_actions.view()).unwrap();
    }
    let x = CriticPair::state_action(batch.states.view(), batch.actions.view());
    for net in [&critics.q1, &critics.q2] {
        let q = net.forward_batch(x.view()).unwrap()[[0, 0]];
        assert!((q - target).abs() < 1e-2, "{q} vs {target}");
    }
}

/// Relu critic equal to minus the piecewise-linear interpolant of `a^2` at
/// the knots `0, ±0.25, ±0.5, ±0.75, ±1`; it ignores the state.
fn quadratic_critic() -> Mlp {
    Mlp::from_layers(vec![
        layer(
            array![[0.0, 1.0], [0.0, -1.0]],
            array![0.0, 0.0],
            Activation::Relu,
        ),
        layer(
            Array2::ones((4, 2)),
            array![0.0, -0.25, -0.5, -0.75],
            Activation::Relu,
        ),
        layer(
            array![[-0.25, -0.5, -0.5, -0.5]],
            array![0.0],
            Activation::Identity,
        ),
    ])
    .unwrap()
}

#[test]
fn quadratic_critic_matches_its_knots() {
    let q = quadratic_critic();
    for a in [-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0] {
        let v = q.forward(&[0.9, a]).unwrap()[0];
        assert!((v + a * a).abs() < 1e-12, "a {a}: {v}");
    }
}

/// With the decoder reduced to `tanh(z)` and the critic maximal at `a = 0`,
/// the actor must drive the decoded action to zero.
#[test]
fn actor_climbs_an_analytic_critic() {
    let encoder = Mlp::zeros(&[2, 2], Activation::Identity, Activation::Identity).unwrap();
    let decoder = Mlp::from_layers(vec![layer(
        array![[0.0, 1.0]],
        array![0.0],
        Activation::Tanh,
    )])
    .unwrap();
    let cvae = Arc::new(BehaviorCvae::from_parts(encoder, decoder, (-4.0, 15.0)).unwrap());
    let config = AgentConfig {
        hidden: vec![8],
        actor_lr: 1e-3,
        ..AgentConfig::default()
    };
    let policy = LatentPolicy::new(
        cvae,
        &config.hidden,
        config.max_latent_action,
        None,
        &mut rng::stream(4, 1),
        &mut rng::stream(4, 2),
    )
    .unwrap();
    let critics =
        CriticPair::from_networks(quadratic_critic(), quadratic_critic(), 1e-3, 1.0, 0.99).unwrap();
    let mut agent = PlasAgent::with_critics(policy, critics, config, 4).unwrap();
    let mut r = rng::stream(4, 3);
    let start = agent
        .policy()
        .act_batch(normal_matrix(200, 1, &mut r).view())
        .unwrap();
    let start_worst = start.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    for _ in 0..2000 {
        let states = normal_matrix(100, 1, &mut r);
        agent.actor_update(states.view()).unwrap();
    }
    let probe = normal_matrix(200, 1, &mut r);
    let actions = agent.policy().act_batch(probe.view()).unwrap();
    let worst = actions.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let mean = actions.iter().map(|a| a.abs()).sum::<f64>() / actions.len() as f64;
    assert!(
        mean < 0.01 && worst < 0.1,
        "mean |a| {mean}, max {worst}, started at {start_worst}"
    );
}

fn trained_cvae(data: &plas::envs::TransitionDataset) -> Arc<BehaviorCvae> {
    let config = CvaeConfig {
        hidden: vec![32, 32],
        steps: 300,
        ..CvaeConfig::default()
    };
    Arc::new(train_cvae(data, &config, 0).unwrap().0)
}

#[test]
fn decoder_is_frozen_under_actor_updates() {
    let data = bimodal_dataset(&[-0.5, 0.5], 0.02, 1000, 0);
    let cvae = trained_cvae(&data);
    let before = cvae.content_hash();
    let config = AgentConfig {
        hidden: vec![16, 16],
        epsilon: Some(0.1),
        ..AgentConfig::default()
    };
    let mut agent = PlasAgent::build(cvae.clone(), config, 0).unwrap();
    for _ in 0..1000 {
        let batch = agent.sample_batch(&data).unwrap();
        agent.actor_update(batch.states.view()).unwrap();
    }
    assert_eq!(agent.policy().cvae().content_hash(), before);
    assert_eq!(cvae.content_hash(), before);
}

#[test]
fn decoder_is_frozen_through_training() {
    let data = bimodal_dataset(&[-0.5, 0.5], 0.02, 1000, 1);
    let cvae = trained_cvae(&data);
    let before = cvae.content_hash();
    let config = AgentConfig {
        hidden: vec![16, 16],
        steps: 300,
        eval_interval: 100,
        eval_episodes: 2,
        ..AgentConfig::default()
    };
    let agent = train_plas(&data, cvae, &ToyEnv::edge_following(), &config, 0).unwrap();
    assert_eq!(agent.policy().cvae().content_hash(), before);
    assert_eq!(agent.iteration(), 300);
    assert!(agent.log().iter().any(|e| e.eval_return_mean.is_some()));
}

#[test]
fn mismatched_cvae_is_rejected() {
    let data = bimodal_dataset(&[-0.5, 0.5], 0.02, 200, 0);
    let cvae = small_cvae(4, 2, 0);
    let config = AgentConfig {
        steps: 10,
        ..AgentConfig::default()
    };
    assert!(train_plas(&data, cvae, &ToyEnv::edge_following(), &config, 0).is_err());
}

#[test]
fn invalid_lambda_is_rejected_before_training() {
    let cvae = small_cvae(2, 1, 0);
    for lambda in [-0.1, 1.5] {
        let config = AgentConfig {
            lambda,
            ..AgentConfig::default()
        };
        let err = PlasAgent::build(cvae.clone(), config, 0).unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
    }
}
