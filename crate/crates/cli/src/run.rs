//! Episode execution and logging shared by the evaluation-style commands.

use std::io::Write;
use std::path::Path;

use planarwalk::env::{Diagnostics, EpisodeConfig, WalkEnv};
use planarwalk::ppo::Agent;
use planarwalk::rigid_body::{RobotModel, RobotVariant};
use planarwalk::tracking::{ControllerKind, GainSet};

use crate::config::ConfigError;

/// Where the actions come from during an episode.
pub enum Actor<'a> {
    /// Model-based ALIP planner.
    Baseline,
    /// Deterministic policy mean.
    Policy(&'a Agent),
}

/// One logged planner step.
#[derive(Debug, Clone, Copy)]
pub struct Row {
    pub diag: Diagnostics,
    pub reward: f64,
    pub terminated: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeLog {
    pub rows: Vec<Row>,
    pub fell: bool,
}

pub fn parse_robot(name: &str) -> Result<RobotModel, ConfigError> {
    RobotVariant::parse(name)
        .map(RobotModel::named)
        .ok_or_else(|| ConfigError::Invalid(format!("unknown robot '{name}'")))
}

pub fn parse_controller(name: &str) -> Result<ControllerKind, ConfigError> {
    ControllerKind::parse(name).ok_or_else(|| ConfigError::Invalid(format!("unknown controller '{name}'")))
}

pub fn parse_gains(name: &str) -> Result<GainSet, ConfigError> {
    GainSet::parse(name).ok_or_else(|| ConfigError::Invalid(format!("unknown gain set '{name}'")))
}

/// Parse "t0:v0,t1:v1,…" into a piecewise-constant speed profile.
pub fn parse_profile(text: &str) -> Result<Vec<(f64, f64)>, ConfigError> {
    let mut profile = Vec::new();
    for part in text.split(',') {
        let (t, v) = part
            .split_once(':')
            .ok_or_else(|| ConfigError::Invalid(format!("bad profile segment '{part}'")))?;
        let t: f64 = t
            .trim()
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("bad profile time '{t}'")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("bad profile speed '{v}'")))?;
        profile.push((t, v));
    }
    if profile.is_empty() {
        return Err(ConfigError::Invalid("empty speed profile".into()));
    }
    Ok(profile)
}

/// Comma-separated float list ("-40,-20,20,40").
pub fn parse_floats(text: &str) -> Result<Vec<f64>, ConfigError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| ConfigError::Invalid(format!("bad number '{s}'")))
        })
        .collect()
}

pub fn build_env(
    robot: &str,
    controller: &str,
    gains: &str,
    episode: EpisodeConfig,
) -> Result<WalkEnv, ConfigError> {
    WalkEnv::new(
        parse_robot(robot)?,
        parse_controller(controller)?,
        parse_gains(gains)?,
        episode,
    )
    .map_err(|e| ConfigError::Invalid(e.to_string()))
}

/// Roll one episode to termination/truncation and collect the log.
pub fn run_episode(env: &mut WalkEnv, actor: &Actor) -> EpisodeLog {
    let mut obs = env.reset();
    let mut log = EpisodeLog::default();
    loop {
        let action = match actor {
            Actor::Baseline => env.baseline_action().to_normalized(),
            Actor::Policy(agent) => agent.act(&obs),
        };
        let r = env.hl_step(action);
        log.rows.push(Row { diag: r.diagnostics, reward: r.reward, terminated: r.terminated });
        obs = r.observation;
        if r.terminated {
            log.fell = true;
            break;
        }
        if r.truncated {
            break;
        }
    }
    log
}

/// Write the per-step episode log with a metadata comment line.
pub fn write_episode_csv(path: &Path, meta: &str, log: &EpisodeLog) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# {meta}")?;
    writeln!(
        f,
        "t,v_x_d,v_bar_x,r_total,r_vx,r_vy,r_lcom,r_a,p_sw_x,q_phi_cmd,h_d,q_phi,h,l_y,l_com,terminated"
    )?;
    for row in &log.rows {
        let d = &row.diag;
        writeln!(
            f,
            "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            d.t,
            d.v_des,
            d.v_bar,
            row.reward,
            d.reward_terms[0],
            d.reward_terms[1],
            d.reward_terms[2],
            d.reward_terms[3],
            d.action.p_sw_x,
            d.action.q_phi,
            d.action.h_d,
            d.q_phi,
            d.h,
            d.l_y,
            d.l_com,
            row.terminated as u8
        )?;
    }
    Ok(())
}

/// Mean |v̄ − v_d| over the steady-state tail of each profile segment
/// (skipping `settle` seconds after each command change).
pub fn segment_errors(log: &EpisodeLog, profile: &[(f64, f64)], settle: f64, t_end: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (k, &(t0, v)) in profile.iter().enumerate() {
        let t1 = profile.get(k + 1).map(|&(t, _)| t).unwrap_or(t_end);
        let mut sum = 0.0;
        let mut n = 0usize;
        for row in &log.rows {
            if row.diag.t >= t0 + settle && row.diag.t < t1 {
                sum += (row.diag.v_bar - v).abs();
                n += 1;
            }
        }
        if n > 0 {
            out.push((v, sum / n as f64));
        }
    }
    out
}

/// Root-mean-square velocity tracking error over rows with t ≥ skip.
pub fn rmse(log: &EpisodeLog, skip: f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for row in &log.rows {
        if row.diag.t >= skip {
            let e = row.diag.v_bar - row.diag.v_des;
            sum += e * e;
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}
