//! Python bindings: the walking environment, trained-policy inference, and
//! the reduced-model (ALIP) helpers, enough to drive rollouts and analysis
//! from Python.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use planarwalk::alip::{alip_flow, alip_planner_step, orbital_energy, AlipParams, AlipState};
use planarwalk::env::{EpisodeConfig, WalkEnv};
use planarwalk::ppo::Agent;
use planarwalk::rigid_body::{RobotModel, RobotVariant};
use planarwalk::tracking::{ControllerKind, GainSet};

fn value_err(msg: impl Into<String>) -> PyErr {
    PyValueError::new_err(msg.into())
}

/// The walking MDP: 5-dim observation, 3-dim normalized action in [-1, 1].
#[pyclass(name = "WalkEnv")]
struct PyWalkEnv {
    inner: WalkEnv,
}

#[pymethods]
impl PyWalkEnv {
    /// WalkEnv(robot="rabbit", controller="fl", gains="nominal", v=0.3,
    ///         seed=0, slope_deg=0.0)
    #[new]
    #[pyo3(signature = (robot="rabbit", controller="fl", gains="nominal", v=0.3, seed=0, slope_deg=0.0))]
    fn new(
        robot: &str,
        controller: &str,
        gains: &str,
        v: f64,
        seed: u64,
        slope_deg: f64,
    ) -> PyResult<Self> {
        let variant = RobotVariant::parse(robot)
            .ok_or_else(|| value_err(format!("unknown robot '{robot}'")))?;
        let controller = ControllerKind::parse(controller)
            .ok_or_else(|| value_err(format!("unknown controller '{controller}'")))?;
        let gains = GainSet::parse(gains)
            .ok_or_else(|| value_err(format!("unknown gain set '{gains}'")))?;
        let mut cfg = EpisodeConfig::constant_speed(v, seed);
        cfg.alpha = slope_deg.to_radians();
        let inner = WalkEnv::new(RobotModel::named(variant), controller, gains, cfg)
            .map_err(|e| value_err(e.to_string()))?;
        Ok(PyWalkEnv { inner })
    }

    /// Start a new episode; returns the 5-dim observation.
    fn reset(&mut self) -> [f64; 5] {
        self.inner.reset().to_array()
    }

    /// Advance one planner step (30 ms). Returns
    /// (observation, reward, terminated, truncated).
    fn step(&mut self, action: [f64; 3]) -> ([f64; 5], f64, bool, bool) {
        let r = self.inner.hl_step(action);
        (r.observation.to_array(), r.reward, r.terminated, r.truncated)
    }

    /// Normalized action the model-based ALIP planner would take now.
    fn baseline_action(&self) -> [f64; 3] {
        self.inner.baseline_action().to_normalized()
    }

    /// Mean base velocity over the last completed step (m/s).
    fn average_velocity(&self) -> f64 {
        self.inner.average_velocity()
    }

    #[getter]
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }

    #[getter]
    fn action_dim(&self) -> usize {
        3
    }

    #[getter]
    fn last_error(&self) -> Option<String> {
        self.inner.last_error.clone()
    }
}

/// A trained policy checkpoint (policy + value nets + input statistics).
#[pyclass(name = "Agent")]
struct PyAgent {
    inner: Agent,
}

#[pymethods]
impl PyAgent {
    /// Load a binary checkpoint written by the trainer.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Agent::load(std::path::Path::new(path))
            .map(|inner| PyAgent { inner })
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Deterministic (mean) action for a raw 5-dim observation.
    fn act(&self, obs: [f64; 5]) -> PyResult<[f64; 3]> {
        let o = planarwalk::env::Observation {
            x: obs[0],
            l_y: obs[1],
            e_vx: obs[2],
            v_x_d: obs[3],
            alpha: obs[4],
        };
        Ok(self.inner.act(&o))
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.inner.iteration
    }

    #[getter]
    fn env_steps(&self) -> u64 {
        self.inner.env_steps
    }
}

/// Closed-form flow of the pendulum model: (p, l) after `t` seconds.
#[pyfunction]
#[pyo3(signature = (p, l, t, m, h, t_step=0.4))]
fn alip_flow_py(p: f64, l: f64, t: f64, m: f64, h: f64, t_step: f64) -> (f64, f64) {
    let params = AlipParams::new(m, h, t_step);
    let s = alip_flow(AlipState { p, l }, t, &params);
    (s.p, s.l)
}

/// Dead-beat foot placement for a desired average speed.
#[pyfunction]
#[pyo3(signature = (p, l, t_elapsed, v_des, m, h, t_step=0.4, bound=0.6))]
#[allow(clippy::too_many_arguments)]
fn alip_planner_step_py(
    p: f64,
    l: f64,
    t_elapsed: f64,
    v_des: f64,
    m: f64,
    h: f64,
    t_step: f64,
    bound: f64,
) -> f64 {
    let params = AlipParams::new(m, h, t_step);
    alip_planner_step(AlipState { p, l }, t_elapsed, v_des, &params, bound)
}

/// Conserved orbital energy of the pendulum model.
#[pyfunction]
#[pyo3(signature = (p, l, m, h, t_step=0.4))]
fn orbital_energy_py(p: f64, l: f64, m: f64, h: f64, t_step: f64) -> f64 {
    let params = AlipParams::new(m, h, t_step);
    orbital_energy(AlipState { p, l }, &params)
}

#[pymodule]
fn planarwalk_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWalkEnv>()?;
    m.add_class::<PyAgent>()?;
    m.add_function(wrap_pyfunction!(alip_flow_py, m)?)?;
    m.add_function(wrap_pyfunction!(alip_planner_step_py, m)?)?;
    m.add_function(wrap_pyfunction!(orbital_energy_py, m)?)?;
    Ok(())
}
