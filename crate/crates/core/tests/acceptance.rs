//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to also see the
//! per-seed detail.

mod common;

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;

use common::{
    bimodal_dataset, fd_check, normal_matrix, random_hidden, report, uniform_matrix, FdCheck,
    REL_TOL,
};
use plas::agent::{
    train_plas, ActorObjective, AgentConfig, CriticPair, DirectAgent, PlasAgent, PolicyHead,
};
use plas::baselines::{train_bc, train_unconstrained, BcConfig};
use plas::cvae::{train_cvae, BehaviorCvae, CvaeConfig};
use plas::diagnostics::{learner_q_error_report, QErrorReport};
use plas::diffnet::Mlp;
use plas::envs::generate::{generate_dataset, generate_with, GeneratorConfig};
use plas::envs::{evaluate, Batch, GeneratorKind, ToyEnv, TransitionDataset};
use plas::experiment::{
    diagnose_learner, run_sweep, DiagnosticsConfig, ExperimentConfig, SweepAxis,
};
use plas::mmd::{self, KernelFamily, MmdScenario};
use plas::rng;

const SEEDS: [u64; 3] = [0, 1, 2];
/// Stream for drawing test configurations, apart from every library stream.
const CONFIG_STREAM: u64 = 1000;

fn verdict(n: u32, pass: bool, detail: &str) {
    report(&format!(
        "criterion {n}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    ));
}

fn toy_cvae(steps: usize) -> CvaeConfig {
    CvaeConfig {
        steps,
        kl_weight: 0.005,
        ..CvaeConfig::default()
    }
}

fn random_batch(sd: usize, ad: usize, n: usize, rng: &mut rng::Rng) -> Batch {
    Batch {
        states: normal_matrix(n, sd, rng),
        actions: uniform_matrix(n, ad, -1.0, 1.0, rng),
        rewards: Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..1.0)),
        next_states: normal_matrix(n, sd, rng),
        dones: Array1::from_shape_simple_fn(n, || if rng.random_bool(0.3) { 1.0 } else { 0.0 }),
    }
}

fn random_cvae(sd: usize, ad: usize, rng: &mut rng::Rng) -> BehaviorCvae {
    let config = CvaeConfig {
        hidden: random_hidden(rng),
        ..CvaeConfig::default()
    };
    BehaviorCvae::new(sd, ad, &config, rng).unwrap()
}

fn critic_loss_error(seed: u64) -> FdCheck {
    let mut rng = rng::stream(seed, CONFIG_STREAM);
    let (sd, ad) = (rng.random_range(1..5), rng.random_range(1..4));
    let hidden = random_hidden(&mut rng);
    let lambda = rng.random_range(0.0..=1.0);
    let mut critics = CriticPair::new(sd, ad, &hidden, 1e-3, lambda, 0.99, &mut rng).unwrap();
    let mut sizes = vec![sd + ad];
    sizes.extend(&hidden);
    sizes.push(1);
    let relu = plas::diffnet::Activation::Relu;
    let id = plas::diffnet::Activation::Identity;
    critics.q1_target = Mlp::new(&sizes, relu, id, &mut rng).unwrap();
    critics.q2_target = Mlp::new(&sizes, relu, id, &mut rng).unwrap();
    let n = rng.random_range(2..9);
    let batch = random_batch(sd, ad, n, &mut rng);
    let next = uniform_matrix(n, ad, -1.0, 1.0, &mut rng);

    let grads = critics.loss_gradients(&batch, next.view()).unwrap();
    let mut worst = FdCheck::default();
    for (which, (_, g)) in grads.iter().enumerate() {
        let base = if which == 0 { &critics.q1 } else { &critics.q2 }.params_flat();
        let mut probe = critics.clone();
        worst = worst.merge(fd_check(&base, &g.to_flat(), |p| {
            let net = if which == 0 {
                &mut probe.q1
            } else {
                &mut probe.q2
            };
            net.set_params_flat(p).unwrap();
            probe.loss_gradients(&batch, next.view()).unwrap()[which].0
        }));
    }
    worst
}

fn actor_chain_error(seed: u64) -> FdCheck {
    let mut rng = rng::stream(seed, CONFIG_STREAM);
    let (sd, ad) = (rng.random_range(1..5), rng.random_range(1..4));
    let cvae = Arc::new(random_cvae(sd, ad, &mut rng));
    let config = AgentConfig {
        hidden: random_hidden(&mut rng),
        lambda: rng.random_range(0.0..=1.0),
        max_latent_action: rng.random_range(0.5..3.0),
        epsilon: if rng.random_bool(0.5) {
            Some(rng.random_range(0.01..0.5))
        } else {
            None
        },
        actor_objective: if rng.random_bool(0.5) {
            ActorObjective::Q1
        } else {
            ActorObjective::SoftMix
        },
        ..AgentConfig::default()
    };
    let mut agent = PlasAgent::build(cvae, config, seed).unwrap();
    let states = normal_matrix(rng.random_range(2..9), sd, &mut rng);
    let (_, grads) = agent.actor_loss_gradients(states.view()).unwrap();
    let mut worst = FdCheck::default();
    for (k, g) in grads.iter().enumerate() {
        let base = agent.policy().trainable()[k].params_flat();
        worst = worst.merge(fd_check(&base, &g.to_flat(), |p| {
            agent.policy_mut().trainable_mut()[k]
                .set_params_flat(p)
                .unwrap();
            agent.actor_loss_gradients(states.view()).unwrap().0
        }));
        agent.policy_mut().trainable_mut()[k]
            .set_params_flat(&base)
            .unwrap();
    }
    worst
}

fn direct_actor_error(seed: u64) -> FdCheck {
    let mut rng = rng::stream(seed, CONFIG_STREAM + 1);
    let (sd, ad) = (rng.random_range(1..5), rng.random_range(1..4));
    let config = AgentConfig {
        hidden: random_hidden(&mut rng),
        ..AgentConfig::default()
    };
    let mut agent = DirectAgent::build(sd, ad, config, seed).unwrap();
    let states = normal_matrix(rng.random_range(2..9), sd, &mut rng);
    let (_, grads) = agent.actor_loss_gradients(states.view()).unwrap();
    let base = agent.policy().trainable()[0].params_flat();
    fd_check(&base, &grads[0].to_flat(), |p| {
        agent.policy_mut().trainable_mut()[0]
            .set_params_flat(p)
            .unwrap();
        agent.actor_loss_gradients(states.view()).unwrap().0
    })
}

fn elbo_error(seed: u64) -> FdCheck {
    let mut rng = rng::stream(seed, CONFIG_STREAM + 2);
    let (sd, ad) = (rng.random_range(1..5), rng.random_range(1..4));
    let cvae = random_cvae(sd, ad, &mut rng);
    let n = rng.random_range(2..9);
    let states = normal_matrix(n, sd, &mut rng);
    let actions = uniform_matrix(n, ad, -1.0, 1.0, &mut rng);
    let noise = normal_matrix(n, cvae.latent_dim(), &mut rng);
    let kl_weight = rng.random_range(0.0..1.0);
    let (_, grads) = cvae
        .elbo(states.view(), actions.view(), noise.view(), kl_weight)
        .unwrap();
    let total = |enc: &Mlp, dec: &Mlp| {
        BehaviorCvae::from_parts(enc.clone(), dec.clone(), cvae.log_std_bounds())
            .unwrap()
            .elbo(states.view(), actions.view(), noise.view(), kl_weight)
            .unwrap()
            .0
            .total
    };
    let (enc, dec) = (cvae.encoder().clone(), cvae.decoder().clone());
    let e = fd_check(&enc.params_flat(), &grads.encoder.to_flat(), |p| {
        let mut net = enc.clone();
        net.set_params_flat(p).unwrap();
        total(&net, &dec)
    });
    let d = fd_check(&dec.params_flat(), &grads.decoder.to_flat(), |p| {
        let mut net = dec.clone();
        net.set_params_flat(p).unwrap();
        total(&enc, &net)
    });
    e.merge(d)
}

#[test]
fn criterion_1_gradient_oracle() {
    let start = Instant::now();
    let configs = 100u64;
    type Check = fn(u64) -> FdCheck;
    let checks: [(&str, Check); 4] = [
        ("critic loss", critic_loss_error),
        ("actor-decoder-Q chain", actor_chain_error),
        ("unconstrained actor-Q chain", direct_actor_error),
        ("cvae elbo", elbo_error),
    ];
    let mut detail = Vec::new();
    let mut pass = true;
    for (name, check) in checks {
        let r = (0..configs)
            .map(check)
            .fold(FdCheck::default(), FdCheck::merge);
        pass &= r.worst < REL_TOL;
        detail.push(format!(
            "{name} worst rel err {:.2e} ({} kink re-checks)",
            r.worst, r.kinks
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    verdict(
        1,
        pass,
        &format!("{configs} configs each; {}; {secs:.1}s", detail.join("; ")),
    );
    assert!(pass, "{detail:?}");
}

#[test]
fn criterion_2_constraint_invariants() {
    let env = ToyEnv::point_mass();
    let dataset = generate_dataset(&env, GeneratorKind::Expert, 2000, 0).unwrap();
    let (cvae, _) = train_cvae(&dataset, &toy_cvae(1000), 0).unwrap();
    let cvae = Arc::new(cvae);
    let base = AgentConfig {
        steps: 1000,
        eval_interval: 0,
        ..AgentConfig::default()
    };
    let with = |epsilon: Option<f64>| AgentConfig {
        epsilon,
        ..base.clone()
    };
    let perturbed = train_plas(&dataset, cvae.clone(), &env, &with(Some(0.05)), 0).unwrap();
    let zero = train_plas(&dataset, cvae.clone(), &env, &with(Some(0.0)), 0).unwrap();
    let plain = train_plas(&dataset, cvae.clone(), &env, &with(None), 0).unwrap();

    let states = uniform_matrix(10_000, 4, -2.0, 2.0, &mut rng::stream(0, CONFIG_STREAM));
    let mut latent_violations = 0usize;
    for agent in [&perturbed, &zero, &plain] {
        let z = agent.policy().latent_actions(states.view()).unwrap();
        latent_violations += z.iter().filter(|v| v.abs() > 2.0).count();
    }

    // The difference is recomputed in floating point, so allow a few ulps.
    let eps_slack = 0.05 + 1e-12;
    let acts = perturbed.policy().act_batch(states.view()).unwrap();
    let decoded = perturbed.policy().decoded_actions(states.view()).unwrap();
    let perturbation_violations = acts
        .iter()
        .zip(&decoded)
        .filter(|(a, d)| (*a - *d).abs() > eps_slack || a.abs() > 1.0)
        .count();

    let zero_acts = zero.policy().act_batch(states.view()).unwrap();
    let no_head = zero
        .policy()
        .without_perturbation()
        .act_batch(states.view())
        .unwrap();
    let plain_acts = plain.policy().act_batch(states.view()).unwrap();
    let identity_violations = zero_acts
        .iter()
        .zip(&no_head)
        .zip(&plain_acts)
        .filter(|((a, b), c)| a.to_bits() != b.to_bits() || a.to_bits() != c.to_bits())
        .count();
    let logs_match = zero.log() == plain.log();

    let pass = latent_violations == 0
        && perturbation_violations == 0
        && identity_violations == 0
        && logs_match;
    verdict(
        2,
        pass,
        &format!(
            "10^4 states: latent bound violations {latent_violations}, \
             perturbation bound violations {perturbation_violations}, \
             eps=0 vs no-head mismatches {identity_violations}, training logs equal {logs_match}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_support_property() {
    let start = Instant::now();
    let env = ToyEnv::edge_following();
    let agent_config = AgentConfig {
        steps: 5000,
        ..AgentConfig::default()
    };
    let diag = DiagnosticsConfig::default();
    let mut pass = true;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let dataset = bimodal_dataset(&[-0.5, 0.5], 0.02, 5000, seed);
        let (cvae, _) = train_cvae(&dataset, &toy_cvae(3000), seed).unwrap();
        let plas = train_plas(&dataset, Arc::new(cvae), &env, &agent_config, seed).unwrap();
        let unc = train_unconstrained(&dataset, &env, &agent_config, seed).unwrap();
        let p = diagnose_learner(&plas, &dataset, &env, &diag, seed)
            .unwrap()
            .support;
        let u = diagnose_learner(&unc, &dataset, &env, &diag, seed)
            .unwrap()
            .support;
        let ok = p.violation_rate <= 0.05
            && u.violation_rate >= 3.0 * p.violation_rate
            && u.violation_rate > p.violation_rate;
        pass &= ok;
        detail.push(format!(
            "seed {seed}: threshold {:.4}, plas within {:.1}%, violations plas {:.3} vs unconstrained {:.3}",
            p.threshold,
            100.0 * (1.0 - p.violation_rate),
            p.violation_rate,
            u.violation_rate
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 600.0;
    verdict(3, pass, &format!("{}; {secs:.0}s", detail.join("; ")));
    assert!(pass);
}

/// Everything criteria 4 and 5 need from one edge-following run.
struct EdgeRun {
    seed: u64,
    plas_return: f64,
    bc_return: f64,
    unc_return: f64,
    plas_mean_q: f64,
    unc_mean_q: f64,
    bound: f64,
    plas_q_error: QErrorReport,
    unc_q_error: QErrorReport,
}

fn final_return<P: PolicyHead>(agent: &plas::agent::OffPolicyLearner<P>) -> f64 {
    agent
        .log()
        .last()
        .and_then(|e| e.eval_return_mean)
        .expect("final evaluation")
}

fn mean_q(q: Array1<f64>) -> f64 {
    q.mean().unwrap()
}

fn edge_run(seed: u64) -> EdgeRun {
    let env = ToyEnv::edge_following();
    let dataset: TransitionDataset = generate_with(
        &env,
        GeneratorKind::MediumExpert,
        10_000,
        seed,
        &GeneratorConfig::default(),
    )
    .unwrap();
    let (cvae, _) = train_cvae(&dataset, &toy_cvae(3000), seed).unwrap();
    let bc_config = BcConfig {
        steps: 3000,
        ..BcConfig::default()
    };
    let (bc, _) = train_bc(&dataset, &bc_config, seed).unwrap();
    let config = AgentConfig::default();
    let plas = train_plas(&dataset, Arc::new(cvae), &env, &config, seed).unwrap();
    let unc = train_unconstrained(&dataset, &env, &config, seed).unwrap();

    let states: Array2<f64> = dataset.states();
    let bound = states
        .axis_iter(Axis(0))
        .map(|s| env.value_upper_bound(s.as_slice().unwrap(), config.gamma))
        .sum::<f64>()
        / states.nrows() as f64;
    EdgeRun {
        seed,
        plas_return: final_return(&plas),
        bc_return: evaluate(&env, &bc, config.eval_episodes, seed)
            .unwrap()
            .mean,
        unc_return: final_return(&unc),
        plas_mean_q: mean_q(plas.q_values(states.view()).unwrap()),
        unc_mean_q: mean_q(unc.q_values(states.view()).unwrap()),
        bound,
        plas_q_error: learner_q_error_report(&plas, &env, 10, seed).unwrap(),
        unc_q_error: learner_q_error_report(&unc, &env, 10, seed).unwrap(),
    }
}

static EDGE_RUNS: OnceLock<(Vec<EdgeRun>, f64)> = OnceLock::new();

fn edge_runs() -> &'static (Vec<EdgeRun>, f64) {
    EDGE_RUNS.get_or_init(|| {
        let start = Instant::now();
        let runs = SEEDS.iter().map(|&s| edge_run(s)).collect();
        (runs, start.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_4_performance_ordering() {
    let (runs, secs) = edge_runs();
    let mut pass = *secs < 1200.0;
    let mut detail = Vec::new();
    for r in runs {
        let ok = r.plas_return > r.bc_return
            && r.plas_return > r.unc_return
            && r.unc_mean_q > r.bound
            && r.plas_mean_q <= r.bound;
        pass &= ok;
        detail.push(format!(
            "seed {}: return plas {:.2} bc {:.2} unconstrained {:.2}; mean Q plas {:.2} unconstrained {:.2} vs bound {:.2}",
            r.seed, r.plas_return, r.bc_return, r.unc_return, r.plas_mean_q, r.unc_mean_q, r.bound
        ));
    }
    verdict(4, pass, &format!("{}; {secs:.0}s", detail.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_5_q_error_diagnostics() {
    let hand = QErrorReport::from_errors(&[1.0, -1.0], 1).unwrap();
    let hand_ok = hand.mse == 1.0
        && hand.positive_error_pct == 0.5
        && hand.positive_error_mean == 1.0
        && hand.negative_error_mean == -1.0;
    let (runs, _) = edge_runs();
    let mut pass = hand_ok;
    let mut detail = vec![format!("two-point case exact {hand_ok}")];
    for r in runs {
        let (p, u) = (&r.plas_q_error, &r.unc_q_error);
        pass &= p.mse < u.mse && p.positive_error_pct < u.positive_error_pct;
        detail.push(format!(
            "seed {}: mse plas {:.3} vs unconstrained {:.3}, positive pct {:.2} vs {:.2}",
            r.seed, p.mse, u.mse, p.positive_error_pct, u.positive_error_pct
        ));
    }
    verdict(5, pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_6_mmd_lab() {
    let start = Instant::now();
    let kernels = mmd::default_kernels();
    let tol = 0.1 + 1e-9;
    let matched = mmd::run_scenario(&MmdScenario::matched_normal(), &kernels, 0).unwrap();
    let bimodal = mmd::run_scenario(&MmdScenario::bimodal_hole(), &kernels, 0).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for k in &kernels {
        let x1 = mmd::argmin(&mmd::curve(&matched, k)).unwrap();
        let c2 = mmd::curve(&bimodal, k);
        let x2 = mmd::argmin(&c2).unwrap();
        let matched_ok = (0.8 - tol..=1.2 + tol).contains(&x1);
        let hole_ok = !(k.family == KernelFamily::Gaussian && k.sigma >= 3.0) || x2.abs() <= tol;
        let not_exclusive = !mmd::minima_exclusively_at(&c2, 1.5, tol);
        pass &= matched_ok && hole_ok && not_exclusive;
        detail.push(format!("{k}: argmin s1 {x1:.1} s2 {x2:.1}"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    verdict(6, pass, &format!("{}; {secs:.0}s", detail.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_7_determinism_and_formats() {
    let dir = tempfile::tempdir().unwrap();
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let edge = ToyEnv::edge_following();
    let pm = ToyEnv::point_mass();
    let bytes = |ds: &TransitionDataset, name: &str| {
        let path = dir.path().join(name);
        ds.write(&path).unwrap();
        let sidecar = TransitionDataset::sidecar_path(&path);
        (
            std::fs::read(&path).unwrap(),
            std::fs::read(sidecar).unwrap(),
        )
    };
    let gen = |env: &ToyEnv, kind| generate_dataset(env, kind, 800, 7).unwrap();
    let same_data = [
        (&pm, GeneratorKind::Random),
        (&edge, GeneratorKind::MediumExpert),
    ]
    .iter()
    .all(|(env, kind)| bytes(&gen(env, *kind), "a.jsonl") == bytes(&gen(env, *kind), "b.jsonl"));
    checks.push(("datasets byte-identical", same_data));

    let dataset = gen(&edge, GeneratorKind::MediumExpert);
    let cvae_run = || train_cvae(&dataset, &toy_cvae(500), 3).unwrap();
    let ((cvae, log_a), (_, log_b)) = (cvae_run(), cvae_run());
    let cvae_logs =
        serde_json::to_string(&log_a).unwrap() == serde_json::to_string(&log_b).unwrap();
    checks.push(("cvae logs identical", cvae_logs));

    let cvae = Arc::new(cvae);
    let config = AgentConfig {
        steps: 1000,
        ..AgentConfig::default()
    };
    let plas_run = || train_plas(&dataset, cvae.clone(), &edge, &config, 3).unwrap();
    let (plas, plas_b) = (plas_run(), plas_run());
    let log_text = |log: &[plas::agent::TrainLogEntry]| serde_json::to_string(log).unwrap();
    checks.push((
        "plas logs identical",
        log_text(plas.log()) == log_text(plas_b.log()),
    ));
    let unc_run = || train_unconstrained(&dataset, &edge, &config, 3).unwrap();
    let (unc, unc_b) = (unc_run(), unc_run());
    checks.push((
        "unconstrained logs identical",
        log_text(unc.log()) == log_text(unc_b.log()),
    ));

    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    let cvae_path = dir.path().join("cvae.ckpt.json");
    cvae.save(&cvae_path, Some("h")).unwrap();
    let (cvae_back, _) = BehaviorCvae::load(&cvae_path).unwrap();
    checks.push((
        "cvae checkpoint bit-exact",
        cvae_back == *cvae && cvae_back.content_hash() == cvae.content_hash(),
    ));
    let plas_path = dir.path().join("plas.ckpt.json");
    plas.save(&plas_path, 3, Some("h")).unwrap();
    let (plas_back, _) = PlasAgent::load(&plas_path, cvae.clone()).unwrap();
    checks.push((
        "plas checkpoint bit-exact",
        plas_back.snapshot(3) == plas.snapshot(3)
            && bits(plas_back.policy().actor.net.params_flat())
                == bits(plas.policy().actor.net.params_flat()),
    ));
    let unc_path = dir.path().join("unc.ckpt.json");
    unc.save(&unc_path, 3, None).unwrap();
    let (unc_back, _) = DirectAgent::load(&unc_path).unwrap();
    checks.push((
        "unconstrained checkpoint bit-exact",
        unc_back.snapshot(3) == unc.snapshot(3),
    ));

    let held_out = generate_dataset(&edge, GeneratorKind::Random, 1000, 99).unwrap();
    let batch = held_out.batch(&(0..held_out.len()).collect::<Vec<_>>());
    let critics = plas.critics();
    let next = plas.next_actions(batch.next_states.view()).unwrap();
    let y = critics
        .targets(
            batch.rewards.view(),
            batch.next_states.view(),
            next.view(),
            batch.dones.view(),
        )
        .unwrap();
    let x = CriticPair::state_action(batch.next_states.view(), next.view());
    let t1 = critics.q1_target.forward_batch(x.view()).unwrap();
    let t2 = critics.q2_target.forward_batch(x.view()).unwrap();
    let exact_min = (0..batch.len()).all(|i| {
        let expected =
            batch.rewards[i] + critics.gamma * (1.0 - batch.dones[i]) * t1[[i, 0]].min(t2[[i, 0]]);
        y[i].to_bits() == expected.to_bits()
    });
    checks.push((
        "lambda=1 target is the exact twin minimum",
        critics.lambda == 1.0 && exact_min,
    ));

    let pass = checks.iter().all(|(_, ok)| *ok);
    let detail: Vec<String> = checks.iter().map(|(n, ok)| format!("{n} {ok}")).collect();
    verdict(7, pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_8_sweep_harness() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::default()
        .with_overrides(&[
            "dataset.kind=random",
            "dataset.size=2000",
            "dataset.generator.random_action_scale=0.5",
            "cvae.steps=3000",
            "cvae.kl_weight=0.005",
            "agent.steps=5000",
            "checkpoint_interval=5000",
            "seeds=[0, 1, 2]",
        ])
        .unwrap();
    let base = ExperimentConfig {
        output_dir: dir.path().to_path_buf(),
        ..base
    };
    let axis = SweepAxis::Epsilon;
    let report = run_sweep(&base, axis, &axis.default_values()).unwrap();
    let scores = report.mean_scores();
    let peak = scores
        .iter()
        .filter_map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let at_half = scores.iter().find(|(v, _)| *v == 0.5).and_then(|(_, s)| *s);
    let secs = start.elapsed().as_secs_f64();
    let pass = report.failures.is_empty() && at_half.is_some_and(|s| s < peak);
    let detail: Vec<String> = scores
        .iter()
        .map(|(v, s)| format!("eps {v}: {}", s.map_or("n/a".into(), |s| format!("{s:.1}"))))
        .collect();
    verdict(
        8,
        pass,
        &format!(
            "mean normalized score over 3 seeds: {}; peak {peak:.1}; {secs:.0}s",
            detail.join(", ")
        ),
    );
    assert!(pass);
}
