use super::*;
use crate::env::EpisodeConfig;
use crate::rigid_body::{RobotModel, RobotVariant};
use crate::tracking::{ControllerKind, GainSet};
use approx::assert_abs_diff_eq;

fn small_cfg() -> PpoConfig {
    PpoConfig {
        workers: 1,
        steps_per_iter: 64,
        minibatch: 32,
        epochs: 2,
        seed: 5,
        ..PpoConfig::default()
    }
}

// ---------------------------------------------------------------- networks

#[test]
fn zero_final_layer_gives_midpoint_mean() {
    let net = Mlp::new(&[5, 16, 16, 3], OutputActivation::SigmoidSymmetric, 0);
    let y = net.forward(&DVector::from_vec(vec![0.3, -1.0, 2.0, 0.0, 5.0]));
    // sigmoid(0) = 0.5 of the range → the midpoint of [-1, 1]
    for v in y.iter() {
        assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-15);
    }
}

#[test]
fn policy_outputs_stay_in_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let mut net = Mlp::new(&[4, 8, 8, 3], OutputActivation::SigmoidSymmetric, trial);
        // randomize the (zero-initialized) final layer too, with big weights
        let last = net.layers.last_mut().unwrap();
        last.w.iter_mut().for_each(|w| *w = rng.random_range(-30.0..30.0));
        last.b.iter_mut().for_each(|b| *b = rng.random_range(-30.0..30.0));
        let x = DVector::from_fn(4, |_, _| rng.random_range(-50.0..50.0));
        let y = net.forward(&x);
        for v in y.iter() {
            assert!(v.is_finite() && v.abs() <= 1.0);
        }
    }
}

/// Central finite differences of a scalar loss wrt a slice of parameters.
#[test]
fn backward_matches_finite_differences() {
    for out in [OutputActivation::SigmoidSymmetric, OutputActivation::Linear] {
        let mut net = Mlp::new(&[3, 8, 8, 2], out, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let last = net.layers.last_mut().unwrap();
        last.w.iter_mut().for_each(|w| *w = rng.random_range(-0.5..0.5));
        last.b.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        let x = DVector::from_vec(vec![0.4, -0.7, 1.2]);
        let c = DVector::from_vec(vec![0.9, -1.3]);
        // L = c·y
        let loss = |net: &Mlp| net.forward(&x).dot(&c);

        let (_, cache) = net.forward_cached(&x);
        let mut grads = Grads::zeros_like(&net);
        net.backward(&cache, &c, &mut grads);

        // probe ≥ 10 parameters across all layers
        let probes: [(usize, usize); 12] = [
            (0, 0), (0, 5), (0, 13), (0, 23),
            (1, 0), (1, 17), (1, 40), (1, 63),
            (2, 0), (2, 5), (2, 10), (2, 15),
        ];
        let h = 1e-6;
        for (layer, idx) in probes {
            let base = net.layers[layer].w[idx];
            net.layers[layer].w[idx] = base + h;
            let lp = loss(&net);
            net.layers[layer].w[idx] = base - h;
            let lm = loss(&net);
            net.layers[layer].w[idx] = base;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.0[layer].w[idx];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                (fd - an).abs() / denom < 1e-4,
                "{out:?} layer {layer} idx {idx}: fd {fd} vs analytic {an}"
            );
        }
    }
}

#[test]
fn adam_descends_a_quadratic() {
    // regression of y = W x toward a fixed target must reduce the loss
    let mut net = Mlp::new(&[2, 4, 4, 1], OutputActivation::Linear, 7);
    let mut opt = Adam::new(&net);
    let x = DVector::from_vec(vec![1.0, -0.5]);
    let target = 0.7;
    let loss = |net: &Mlp| {
        let e = net.forward(&x)[0] - target;
        e * e
    };
    let l0 = loss(&net);
    for _ in 0..200 {
        let (y, cache) = net.forward_cached(&x);
        let mut grads = Grads::zeros_like(&net);
        net.backward(&cache, &DVector::from_element(1, 2.0 * (y[0] - target)), &mut grads);
        opt.step(&mut net, &grads, 1e-2);
    }
    assert!(loss(&net) < 1e-4, "loss {l0} → {}", loss(&net));
}

// ---------------------------------------------------------------- sampling

#[test]
fn sample_action_zero_sigma_is_mean() {
    let mean = DVector::from_vec(vec![0.2, -0.4, 0.9]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (a, _) = sample_action(&mean, 0.0, &mut rng);
    for i in 0..3 {
        assert_abs_diff_eq!(a[i], mean[i], epsilon = 1e-15);
    }
}

#[test]
fn logprob_at_mean() {
    let mean = DVector::from_vec(vec![0.1, 0.2, 0.3]);
    let sigma = 0.15;
    let lp = log_prob(&mean, sigma, &mean);
    let expect = -3.0 * (sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln());
    assert_abs_diff_eq!(lp, expect, epsilon = 1e-12);
}

#[test]
fn empirical_std_matches_sigma() {
    let mean = DVector::zeros(1);
    let sigma = 0.15;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 100_000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        // wide bounds are irrelevant here: draws stay well inside ±1
        let (a, _) = sample_action(&mean, sigma, &mut rng);
        sum += a[0];
        sumsq += a[0] * a[0];
    }
    let m = sum / n as f64;
    let std = (sumsq / n as f64 - m * m).sqrt();
    assert!((std - sigma).abs() / sigma < 0.02, "std {std}");
}

#[test]
fn entropy_is_constant_in_everything_but_sigma() {
    let e = entropy(0.15, 3);
    assert_abs_diff_eq!(e, 3.0 * (0.5 + 0.5 * (2.0 * std::f64::consts::PI).ln() + 0.15f64.ln()), epsilon = 1e-14);
    assert!(entropy(0.3, 3) > e);
}

// --------------------------------------------------------------------- gae

#[test]
fn gae_lambda_zero_is_td_error() {
    let rewards = [1.0, -0.5, 2.0];
    let values = [0.3, 0.7, -0.2, 0.9];
    let flags = [false, false, false];
    let (adv, ret) = gae(&rewards, &values, &flags, 0.99, 0.0);
    for t in 0..3 {
        let delta = rewards[t] + 0.99 * values[t + 1] - values[t];
        assert_abs_diff_eq!(adv[t], delta, epsilon = 1e-14);
        assert_abs_diff_eq!(ret[t], adv[t] + values[t], epsilon = 1e-14);
    }
}

#[test]
fn gae_lambda_one_two_step_hand_value() {
    // λ = 1 → A_t = Σ γ^k r_{t+k} + γ^T V_T − V_t (Monte-Carlo with bootstrap)
    let rewards = [1.0, 2.0];
    let values = [0.5, -0.3, 0.25];
    let flags = [false, false];
    let g = 0.9;
    let (adv, _) = gae(&rewards, &values, &flags, g, 1.0);
    let a1 = 2.0 + g * 0.25 - (-0.3);
    let a0 = 1.0 + g * 2.0 + g * g * 0.25 - 0.5;
    assert_abs_diff_eq!(adv[1], a1, epsilon = 1e-14);
    assert_abs_diff_eq!(adv[0], a0, epsilon = 1e-14);
}

#[test]
fn terminal_flag_cuts_bootstrap() {
    let rewards = [1.0];
    let flags = [true];
    let (a1, _) = gae(&rewards, &[0.2, 100.0], &flags, 0.99, 0.95);
    let (a2, _) = gae(&rewards, &[0.2, -77.0], &flags, 0.99, 0.95);
    assert_eq!(a1[0].to_bits(), a2[0].to_bits());
    assert_abs_diff_eq!(a1[0], 1.0 - 0.2, epsilon = 1e-15);
}

// ------------------------------------------------------------------ update

#[test]
fn surrogate_identities() {
    // ratio ≡ 1 → loss = −advantage, gradient −advantage (clip inactive)
    for adv in [-2.0, -0.3, 0.0, 0.7, 3.0] {
        let (l, g) = surrogate(1.0, adv, 0.2);
        assert_abs_diff_eq!(l, -adv, epsilon = 1e-15);
        assert_abs_diff_eq!(g, -adv, epsilon = 1e-15);
    }
    // positive advantage, ratio beyond 1+ε → flat (clipped)
    let (l, g) = surrogate(1.5, 2.0, 0.2);
    assert_abs_diff_eq!(l, -1.2 * 2.0, epsilon = 1e-15);
    assert_eq!(g, 0.0);
    // negative advantage, ratio below 1−ε → flat
    let (_, g) = surrogate(0.5, -1.0, 0.2);
    assert_eq!(g, 0.0);
    // pessimism: the loss is never below the unclipped surrogate
    for ratio in [0.3, 0.9, 1.0, 1.4, 2.0] {
        for adv in [-1.0, 1.0] {
            let (l, _) = surrogate(ratio, adv, 0.2);
            assert!(l >= -(ratio * adv) - 1e-15);
        }
    }
}

fn synthetic_batch(policy: &Mlp, n: usize, sigma: f64, seed: u64) -> RolloutBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = RolloutBatch::default();
    for _ in 0..n {
        let obs = DVector::from_fn(policy.input_dim(), |_, _| rng.random_range(-1.0..1.0));
        let mean = policy.forward(&obs);
        let (a, logp) = sample_action(&mean, sigma, &mut rng);
        batch.obs.push(obs);
        batch.actions.push(a);
        batch.logps.push(logp);
        batch.rewards.push(rng.random_range(0.0..1.0));
        batch.values.push(0.0);
        batch.flags.push(false);
        batch.advantages.push(rng.random_range(-1.0..1.0));
        batch.returns.push(rng.random_range(0.0..1.0));
    }
    batch
}

#[test]
fn single_transition_gradient_matches_finite_differences() {
    // the update direction on one sample equals the analytic gradient of the
    // clipped objective; verify the backprop against finite differences of
    // the full per-sample loss as a function of the parameters
    let mut policy = Mlp::new(&[3, 8, 8, 2], OutputActivation::SigmoidSymmetric, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let last = policy.layers.last_mut().unwrap();
    last.w.iter_mut().for_each(|w| *w = rng.random_range(-0.5..0.5));
    let sigma = 0.2;
    let mut batch = synthetic_batch(&policy, 1, sigma, 17);
    batch.advantages[0] = 0.8;
    // make the stored log-probability slightly off-policy so ratio ≠ 1
    batch.logps[0] += 0.03;

    let (_, grads, _, _) = policy_loss_grad(&policy, &batch, &[0], sigma, 0.2);
    let loss_of = |p: &Mlp| {
        let mean = p.forward(&batch.obs[0]);
        let ratio = (log_prob(&mean, sigma, &batch.actions[0]) - batch.logps[0]).exp();
        surrogate(ratio, batch.advantages[0], 0.2).0
    };
    let h = 1e-6;
    for (layer, idx) in [(0usize, 3usize), (0, 10), (1, 7), (1, 20), (2, 1), (2, 9)] {
        let base = policy.layers[layer].w[idx];
        policy.layers[layer].w[idx] = base + h;
        let lp = loss_of(&policy);
        policy.layers[layer].w[idx] = base - h;
        let lm = loss_of(&policy);
        policy.layers[layer].w[idx] = base;
        let fd = (lp - lm) / (2.0 * h);
        let an = grads.0[layer].w[idx];
        let denom = fd.abs().max(an.abs()).max(1e-8);
        assert!((fd - an).abs() / denom < 1e-4, "layer {layer} idx {idx}: {fd} vs {an}");
    }
}

#[test]
fn zero_advantages_leave_policy_unchanged() {
    let cfg = small_cfg();
    let mut policy = Mlp::new(&[3, 8, 8, 2], OutputActivation::SigmoidSymmetric, 2);
    let mut value = Mlp::new(&[3, 8, 8, 1], OutputActivation::Linear, 3);
    let mut batch = synthetic_batch(&policy, 64, cfg.sigma, 6);
    for a in &mut batch.advantages {
        *a = 0.0;
    }
    let before = policy.clone();
    let mut opt_p = Adam::new(&policy);
    let mut opt_v = Adam::new(&value);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    ppo_update(
        &mut policy,
        &mut value,
        &mut opt_p,
        &mut opt_v,
        &batch,
        &cfg,
        &mut rng,
        0,
    )
    .unwrap();
    // the value net trains, the policy sees exactly zero gradient
    assert_eq!(policy, before);
}

#[test]
fn on_policy_first_minibatch_loss_is_minus_mean_advantage() {
    let cfg = PpoConfig { minibatch: 64, epochs: 1, ..small_cfg() };
    let policy = Mlp::new(&[3, 8, 8, 2], OutputActivation::SigmoidSymmetric, 2);
    let batch = synthetic_batch(&policy, 64, cfg.sigma, 8);
    let idx: Vec<usize> = (0..64).collect();
    let (loss, _, kl, clip_frac) = policy_loss_grad(&policy, &batch, &idx, cfg.sigma, cfg.clip);
    let mean_adv = batch.advantages.iter().sum::<f64>() / 64.0;
    assert_abs_diff_eq!(loss, -mean_adv, epsilon = 1e-12);
    assert_abs_diff_eq!(kl, 0.0, epsilon = 1e-12);
    assert_eq!(clip_frac, 0.0);
}

#[test]
fn non_finite_loss_is_flagged() {
    let cfg = small_cfg();
    let mut policy = Mlp::new(&[3, 8, 8, 2], OutputActivation::SigmoidSymmetric, 2);
    let mut value = Mlp::new(&[3, 8, 8, 1], OutputActivation::Linear, 3);
    let mut batch = synthetic_batch(&policy, 8, cfg.sigma, 1);
    batch.logps[3] = f64::NEG_INFINITY; // ratio overflows
    let mut opt_p = Adam::new(&policy);
    let mut opt_v = Adam::new(&value);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = ppo_update(
        &mut policy,
        &mut value,
        &mut opt_p,
        &mut opt_v,
        &batch,
        &cfg,
        &mut rng,
        7,
    );
    assert!(matches!(err, Err(PpoError::NonFiniteLoss { iteration: 7 })));
}

#[test]
fn config_validation() {
    assert!(PpoConfig::default().validate().is_ok());
    assert!(PpoConfig { gamma: 1.0, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { clip: 0.6, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { clip: 0.0, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { workers: 0, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { steps_per_iter: 100, workers: 8, ..PpoConfig::default() }
        .validate()
        .is_err());
}

// -------------------------------------------------------------- checkpoint

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = PpoConfig { seed: 33, ..PpoConfig::default() };
    let mut agent = Agent::new(5, 3, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // non-trivial weights and statistics
    for layer in agent.policy.layers.iter_mut().chain(agent.value.layers.iter_mut()) {
        layer.w.iter_mut().for_each(|w| *w += rng.random_range(-0.3..0.3));
        layer.b.iter_mut().for_each(|b| *b += rng.random_range(-0.3..0.3));
    }
    for _ in 0..57 {
        agent
            .normalizer
            .update(&DVector::from_fn(5, |_, _| rng.random_range(-2.0..2.0)));
    }
    agent.iteration = 17;
    agent.env_steps = 139264;

    let dir = std::env::temp_dir().join(format!("ppo_ckpt_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("round_trip.ckpt");
    agent.save(&path).unwrap();
    let loaded = Agent::load(&path).unwrap();
    assert_eq!(loaded.iteration, 17);
    assert_eq!(loaded.env_steps, 139264);
    for _ in 0..100 {
        let x = DVector::from_fn(5, |_, _| rng.random_range(-3.0..3.0));
        let z = agent.normalizer.normalize(&x);
        let zl = loaded.normalizer.normalize(&x);
        let (ya, yb) = (agent.policy.forward(&z), loaded.policy.forward(&zl));
        let (va, vb) = (agent.value.forward(&z), loaded.value.forward(&zl));
        for i in 0..3 {
            assert_eq!(ya[i].to_bits(), yb[i].to_bits());
        }
        assert_eq!(va[0].to_bits(), vb[0].to_bits());
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn checkpoint_rejects_garbage() {
    let dir = std::env::temp_dir().join(format!("ppo_bad_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.ckpt");
    std::fs::write(&path, b"definitely not a checkpoint").unwrap();
    assert!(Agent::load(&path).is_err());
    std::fs::remove_dir_all(&dir).ok();
}

// ------------------------------------------------------------------- train

fn tiny_train(seed: u64) -> (Agent, Vec<CurvePoint>) {
    let cfg = PpoConfig {
        workers: 2,
        steps_per_iter: 60,
        minibatch: 30,
        epochs: 2,
        seed,
        ..PpoConfig::default()
    };
    let opts = TrainOptions { iterations: 2, checkpoint_path: None, checkpoint_every: 0 };
    train(
        |k| {
            WalkEnv::new(
                RobotModel::named(RobotVariant::Rabbit),
                ControllerKind::Fl,
                GainSet::NOMINAL,
                EpisodeConfig::constant_speed(0.2, seed.wrapping_add(k as u64)),
            )
        },
        &cfg,
        &opts,
        None,
    )
    .unwrap()
}

#[test]
fn resume_continues_to_the_total_iteration_target() {
    let cfg = PpoConfig {
        workers: 1,
        steps_per_iter: 40,
        minibatch: 40,
        epochs: 1,
        seed: 3,
        ..PpoConfig::default()
    };
    let make = |k: usize| {
        WalkEnv::new(
            RobotModel::named(RobotVariant::Rabbit),
            ControllerKind::Fl,
            GainSet::NOMINAL,
            EpisodeConfig::constant_speed(0.2, 3 + k as u64),
        )
    };
    let opts1 = TrainOptions { iterations: 1, checkpoint_path: None, checkpoint_every: 0 };
    let (agent, _) = train(make, &cfg, &opts1, None).unwrap();
    assert_eq!(agent.iteration, 1);
    let steps = agent.env_steps;
    let opts2 = TrainOptions { iterations: 3, checkpoint_path: None, checkpoint_every: 0 };
    let (resumed, curve) = train(make, &cfg, &opts2, Some(agent)).unwrap();
    assert_eq!(resumed.iteration, 3);
    assert_eq!(resumed.env_steps, steps + 80);
    assert_eq!(curve.len(), 2);
    assert_eq!(curve[0].iteration, 2);
}

#[test]
fn training_is_deterministic_for_fixed_seed() {
    let (a1, c1) = tiny_train(123);
    let (a2, c2) = tiny_train(123);
    assert_eq!(a1.policy, a2.policy);
    assert_eq!(a1.value, a2.value);
    assert_eq!(c1.len(), c2.len());
    for (p, q) in c1.iter().zip(&c2) {
        assert_eq!(p.mean_reward.to_bits(), q.mean_reward.to_bits());
        assert_eq!(p.policy_loss.to_bits(), q.policy_loss.to_bits());
        assert_eq!(p.value_loss.to_bits(), q.value_loss.to_bits());
        assert_eq!(p.kl.to_bits(), q.kl.to_bits());
    }
    // and a different seed actually changes the outcome
    let (a3, _) = tiny_train(124);
    assert_ne!(a1.policy, a3.policy);
}
