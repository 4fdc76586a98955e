//! Command-line surface: training, evaluation, the model-based baseline,
//! prediction-error tables, and robustness sweeps. Every command honors
//! `--seed` and writes plain CSV (a `#` metadata line, then a header row)
//! for offline plotting.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

mod config;
mod run;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use planarwalk::env::{Disturbance, EpisodeConfig, WalkEnv};
use planarwalk::ppo::{self, Agent, PpoError, TrainOptions};
use planarwalk::rigid_body::RobotModel;

use config::{ConfigError, RunConfig};
use run::{Actor, EpisodeLog};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "planarwalk", version, about = "Planar bipedal locomotion: train, evaluate, and analyze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Robot variant: rabbit | rabbit_ideal | walker2d
    #[arg(long, default_value = "rabbit")]
    robot: String,
    /// Low-level controller: fl | idqp
    #[arg(long, default_value = "fl")]
    controller: String,
    /// PD gain set: nominal | high
    #[arg(long, default_value = "nominal")]
    gains: String,
    /// TOML run configuration (flags override its fields)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master random seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (default: $PLANARWALK_LOG_DIR or ./runs)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy with PPO and write a checkpoint plus learning curve
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Total number of PPO iterations
        #[arg(long, default_value_t = 300)]
        iters: usize,
        /// Resume from an existing checkpoint in the output directory,
        /// continuing until --iters total iterations
        #[arg(long, default_value_t = false)]
        resume: bool,
    },
    /// Evaluate a checkpoint on a piecewise-constant speed profile
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Policy checkpoint to evaluate
        #[arg(long)]
        checkpoint: PathBuf,
        /// Speed profile "t0:v0,t1:v1,…" (seconds : m/s)
        #[arg(long, default_value = "0:0,2:0.5,4:1.0,6:-0.5")]
        profile: String,
        /// Terrain slope in degrees
        #[arg(long, default_value_t = 0.0)]
        slope_deg: f64,
        /// Number of evaluation episodes (seeds seed, seed+1, …)
        #[arg(long, default_value_t = 1)]
        episodes: usize,
    },
    /// Run the model-based ALIP planner on a speed profile
    AlipBaseline {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "0:0.3")]
        profile: String,
        #[arg(long, default_value_t = 0.0)]
        slope_deg: f64,
    },
    /// Reduced-model prediction-error table over consecutive steps
    Fig2 {
        #[command(flatten)]
        common: CommonArgs,
        /// ideal (thin-link robot, high-gain FL) or nonideal (real geometry, ID-QP)
        #[arg(long, default_value = "ideal")]
        variant: String,
        /// Commanded walking speed (m/s)
        #[arg(long, default_value_t = 0.3)]
        v: f64,
    },
    /// Disturbance-rejection table: pulses on the base during walking
    Perturb {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Pulse magnitudes in newtons
        #[arg(long, default_value = "-40,-20,20,40")]
        forces: String,
        /// Pulse duration (s)
        #[arg(long, default_value_t = 0.15)]
        duration: f64,
        /// Commanded speed during the pulse (m/s)
        #[arg(long, default_value_t = 0.5)]
        v: f64,
        /// Seeded trials per cell
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// RMSE grid over commanded speed × terrain slope
    SlopeGrid {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Commanded speeds (m/s)
        #[arg(long, default_value = "-0.5,0,0.5,1.0")]
        vs: String,
        /// Slopes (degrees)
        #[arg(long, default_value = "-5,0,5,10")]
        alphas_deg: String,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<PpoError> for CliError {
    fn from(e: PpoError) -> CliError {
        match e {
            PpoError::InvalidConfig(m) => CliError::Config(ConfigError::Invalid(m)),
            PpoError::Env(m) => CliError::Config(ConfigError::Invalid(m.to_string())),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Numerical(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train { common, iters, resume } => cmd_train(&common, iters, resume),
        Command::Eval { common, checkpoint, profile, slope_deg, episodes } => {
            cmd_eval(&common, &checkpoint, &profile, slope_deg, episodes)
        }
        Command::AlipBaseline { common, profile, slope_deg } => {
            cmd_alip_baseline(&common, &profile, slope_deg)
        }
        Command::Fig2 { common, variant, v } => cmd_fig2(&common, &variant, v),
        Command::Perturb { common, checkpoint, forces, duration, v, trials } => {
            cmd_perturb(&common, &checkpoint, &forces, duration, v, trials)
        }
        Command::SlopeGrid { common, checkpoint, vs, alphas_deg } => {
            cmd_slope_grid(&common, &checkpoint, &vs, &alphas_deg)
        }
    }
}

/// Resolve the run config from the optional TOML file plus flag overrides.
fn resolve_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    // flags always win over the file
    cfg.robot = common.robot.clone();
    cfg.controller = common.controller.clone();
    cfg.gains = common.gains.clone();
    cfg.ppo.seed = common.seed;
    cfg.validate()?;
    // fail early on bad names
    run::parse_robot(&cfg.robot)?;
    run::parse_controller(&cfg.controller)?;
    run::parse_gains(&cfg.gains)?;
    Ok(cfg)
}

fn out_dir(common: &CommonArgs) -> Result<PathBuf, CliError> {
    let dir = common
        .out
        .clone()
        .or_else(|| std::env::var_os("PLANARWALK_LOG_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn meta_line(cfg: &RunConfig, seed: u64) -> String {
    format!("planarwalk v{VERSION} config_hash={:016x} seed={seed}", cfg.hash())
}

// ------------------------------------------------------------------- train

fn cmd_train(common: &CommonArgs, iters: usize, resume: bool) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    let ckpt_path = dir.join("checkpoint.ckpt");
    let curve_path = dir.join("curve.csv");
    let init = if resume {
        let agent = load_agent(&ckpt_path)?;
        println!("resuming from iteration {}", agent.iteration);
        Some(agent)
    } else {
        None
    };

    let model = run::parse_robot(&cfg.robot)?;
    let base_controller = run::parse_controller(&cfg.controller)?;
    let gains = run::parse_gains(&cfg.gains)?;
    let mixed = cfg.mixed_controllers;
    let seed = cfg.ppo.seed;
    let curriculum_v = cfg.curriculum_velocity;
    let curriculum_s = cfg.curriculum_slope;
    let reward_weights = planarwalk::env::RewardWeights(cfg.reward_weights);

    let make_env = |k: usize| {
        let mut episode = EpisodeConfig::training(seed.wrapping_add(1000 * k as u64 + 1));
        episode.curriculum_velocity = curriculum_v;
        episode.curriculum_slope = curriculum_s;
        if !curriculum_v {
            episode.v_profile = vec![(0.0, 0.0)];
        }
        let controller = if mixed && k % 2 == 1 {
            planarwalk::tracking::ControllerKind::Idqp
        } else {
            base_controller
        };
        let mut env = WalkEnv::new(RobotModel::named(model.variant), controller, gains, episode)?;
        env.reward_weights = reward_weights;
        Ok(env)
    };

    let opts = TrainOptions {
        iterations: iters,
        checkpoint_path: Some(&ckpt_path),
        checkpoint_every: 25,
    };
    println!("training {} until iteration {iters} ({} steps each) ...", cfg.robot, cfg.ppo.steps_per_iter);
    let result = ppo::train(make_env, &cfg.ppo, &opts, init);
    let (agent, curve) = match result {
        Ok(v) => v,
        Err(e) => {
            // a partial checkpoint was already written by the trainer
            return Err(e.into());
        }
    };
    append_curve(&curve_path, &meta_line(&cfg, seed), &curve, resume)?;
    println!(
        "done: {} iterations, {} env steps, final mean reward {:.2}",
        agent.iteration,
        agent.env_steps,
        curve.last().map(|p| p.mean_reward).unwrap_or(f64::NAN)
    );
    println!("checkpoint: {}", ckpt_path.display());
    println!("curve: {}", curve_path.display());
    Ok(())
}

fn append_curve(path: &Path, meta: &str, curve: &[ppo::CurvePoint], resume: bool) -> Result<(), CliError> {
    let mut f = if resume && path.exists() {
        std::fs::OpenOptions::new().append(true).open(path)?
    } else {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "# {meta}")?;
        writeln!(f, "iteration,env_steps,mean_reward,mean_ep_len,policy_loss,value_loss,kl")?;
        f
    };
    for p in curve {
        writeln!(
            f,
            "{},{},{:.6},{:.3},{:.8},{:.8},{:.8}",
            p.iteration, p.env_steps, p.mean_reward, p.mean_ep_len, p.policy_loss, p.value_loss, p.kl
        )?;
    }
    Ok(())
}

// -------------------------------------------------------------------- eval

fn load_agent(path: &Path) -> Result<Agent, CliError> {
    Agent::load(path).map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))
}

fn cmd_eval(
    common: &CommonArgs,
    checkpoint: &Path,
    profile: &str,
    slope_deg: f64,
    episodes: usize,
) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    let agent = load_agent(checkpoint)?;
    let profile = run::parse_profile(profile)?;
    let mut falls = 0usize;
    let mut all_errors: Vec<Vec<(f64, f64)>> = Vec::new();
    for ep in 0..episodes.max(1) {
        let mut episode = EpisodeConfig::constant_speed(0.0, cfg.ppo.seed.wrapping_add(ep as u64));
        episode.v_profile = profile.clone();
        episode.alpha = slope_deg.to_radians();
        let mut env = run::build_env(&cfg.robot, &cfg.controller, &cfg.gains, episode)?;
        let log = run::run_episode(&mut env, &Actor::Policy(&agent));
        if log.fell {
            falls += 1;
        }
        let path = dir.join(format!("eval_ep{ep}.csv"));
        run::write_episode_csv(&path, &meta_line(&cfg, cfg.ppo.seed.wrapping_add(ep as u64)), &log)?;
        all_errors.push(run::segment_errors(&log, &profile, 1.5, 9.0));
        println!(
            "episode {ep}: {} steps, rmse {:.4} m/s, fell={}  → {}",
            log.rows.len(),
            run::rmse(&log, 1.0),
            log.fell,
            path.display()
        );
    }
    // aggregate per-segment steady-state errors
    println!("segment steady-state mean |error| (m/s):");
    for (k, &(_, v)) in profile.iter().enumerate() {
        let vals: Vec<f64> = all_errors
            .iter()
            .filter_map(|e| e.get(k).map(|&(_, err)| err))
            .collect();
        if !vals.is_empty() {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            println!("  v_d={v:+.2}: {mean:.4}");
        }
    }
    println!("falls: {falls}/{episodes}");
    Ok(())
}

fn cmd_alip_baseline(common: &CommonArgs, profile: &str, slope_deg: f64) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    let profile = run::parse_profile(profile)?;
    let mut episode = EpisodeConfig::constant_speed(0.0, cfg.ppo.seed);
    episode.v_profile = profile.clone();
    episode.alpha = slope_deg.to_radians();
    let mut env = run::build_env(&cfg.robot, &cfg.controller, &cfg.gains, episode)?;
    let log = run::run_episode(&mut env, &Actor::Baseline);
    let path = dir.join("alip_baseline.csv");
    run::write_episode_csv(&path, &meta_line(&cfg, cfg.ppo.seed), &log)?;
    println!(
        "{} steps, rmse {:.4} m/s, fell={}  → {}",
        log.rows.len(),
        run::rmse(&log, 1.0),
        log.fell,
        path.display()
    );
    for (v, err) in run::segment_errors(&log, &profile, 1.5, 9.0) {
        println!("  v_d={v:+.2}: steady-state mean |error| {err:.4} m/s");
    }
    if log.fell {
        return Err(CliError::Numerical("baseline fell".into()));
    }
    Ok(())
}

// -------------------------------------------------------------------- fig2

fn cmd_fig2(common: &CommonArgs, variant: &str, v: f64) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    let (robot, controller, gains) = match variant {
        "ideal" => ("rabbit_ideal", "fl", "high"),
        "nonideal" => ("rabbit", "idqp", "nominal"),
        other => {
            return Err(CliError::Config(ConfigError::Invalid(format!(
                "unknown variant '{other}' (ideal|nonideal)"
            ))))
        }
    };
    let episode = EpisodeConfig::constant_speed(v, cfg.ppo.seed);
    let mut env = run::build_env(robot, controller, gains, episode)?;
    let log = run::run_episode(&mut env, &Actor::Baseline);
    if log.fell {
        return Err(CliError::Numerical("walker fell during the prediction run".into()));
    }
    let preds = planarwalk::alip::prediction_error_study(&env.step_records, &env.alip)
        .map_err(|_| CliError::Numerical("no completed steps recorded".into()))?;
    let path = dir.join(format!("fig2_{variant}.csv"));
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "# {} variant={variant} v={v}", meta_line(&cfg, cfg.ppo.seed))?;
    writeln!(f, "step_index,predicted_v,actual_v,abs_error")?;
    for p in &preds {
        writeln!(f, "{},{:.6},{:.6},{:.6}", p.step_index, p.predicted, p.actual, p.error())?;
    }
    let mean = preds.iter().map(|p| p.error()).sum::<f64>() / preds.len() as f64;
    let tail: Vec<f64> = preds.iter().rev().take(20).map(|p| p.error()).collect();
    let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    println!(
        "{variant}: {} steps, mean |error| {mean:.4} m/s (last 20: {tail_mean:.4})  → {}",
        preds.len(),
        path.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ perturb

fn cmd_perturb(
    common: &CommonArgs,
    checkpoint: &Path,
    forces: &str,
    duration: f64,
    v: f64,
    trials: usize,
) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    let agent = load_agent(checkpoint)?;
    let forces = run::parse_floats(forces)?;
    let t_start = 3.0;
    let path = dir.join("perturb.csv");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "# {} v={v} duration={duration} t_start={t_start}", meta_line(&cfg, cfg.ppo.seed))?;
    writeln!(f, "f_x,duration,trials,survived,recovered,mean_recovery_s")?;
    for &fx in &forces {
        let mut survived = 0usize;
        let mut recovered = 0usize;
        let mut rec_times = Vec::new();
        for trial in 0..trials {
            let mut episode = EpisodeConfig::constant_speed(v, cfg.ppo.seed.wrapping_add(trial as u64));
            episode.disturbances = vec![Disturbance { t_start, duration, f_x: fx }];
            let mut env = run::build_env(&cfg.robot, &cfg.controller, &cfg.gains, episode)?;
            let log = run::run_episode(&mut env, &Actor::Policy(&agent));
            if !log.fell {
                survived += 1;
            }
            // recovery: first time after the pulse where tracking is restored
            let pulse_end = t_start + duration;
            let rec = log
                .rows
                .iter()
                .filter(|r| r.diag.t >= pulse_end)
                .find(|r| (r.diag.v_bar - r.diag.v_des).abs() < 0.15)
                .map(|r| r.diag.t - pulse_end);
            if let Some(t) = rec {
                if !log.fell && t <= 2.0 {
                    recovered += 1;
                    rec_times.push(t);
                }
            }
        }
        let mean_rec = if rec_times.is_empty() {
            f64::NAN
        } else {
            rec_times.iter().sum::<f64>() / rec_times.len() as f64
        };
        writeln!(f, "{fx},{duration},{trials},{survived},{recovered},{mean_rec:.3}")?;
        println!("F_x={fx:+.0} N: survived {survived}/{trials}, recovered {recovered}/{trials}, mean recovery {mean_rec:.2} s");
    }
    println!("table: {}", path.display());
    Ok(())
}

// --------------------------------------------------------------- slope-grid

fn cmd_slope_grid(
    common: &CommonArgs,
    checkpoint: &Path,
    vs: &str,
    alphas_deg: &str,
) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    let agent = load_agent(checkpoint)?;
    let vs = run::parse_floats(vs)?;
    let alphas = run::parse_floats(alphas_deg)?;
    let path = dir.join("slope_grid.csv");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "# {}", meta_line(&cfg, cfg.ppo.seed))?;
    writeln!(f, "v_x_d,alpha_deg,mean_abs_err,rmse,fell")?;
    for &alpha in &alphas {
        for &v in &vs {
            let mut episode = EpisodeConfig::constant_speed(v, cfg.ppo.seed);
            episode.alpha = alpha.to_radians();
            let mut env = run::build_env(&cfg.robot, &cfg.controller, &cfg.gains, episode)?;
            let log = run::run_episode(&mut env, &Actor::Policy(&agent));
            let mean_err = mean_abs_error(&log, 2.0);
            writeln!(f, "{v},{alpha},{mean_err:.4},{:.4},{}", run::rmse(&log, 2.0), log.fell as u8)?;
            println!("v={v:+.2} α={alpha:+.0}°: mean |err| {mean_err:.4} m/s, fell={}", log.fell);
        }
    }
    println!("table: {}", path.display());
    Ok(())
}

fn mean_abs_error(log: &EpisodeLog, skip: f64) -> f64 {
    let vals: Vec<f64> = log
        .rows
        .iter()
        .filter(|r| r.diag.t >= skip)
        .map(|r| (r.diag.v_bar - r.diag.v_des).abs())
        .collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}
