//! Torque-driven pendulum with the classic control-benchmark constants.
//! Observation is `(cos theta, sin theta, theta_dot)`; the model input is
//! the observation plus the applied torque and the target is the next
//! observation.

use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;

use super::sinusoid::TEST_GRID_SEED;
use super::{linspace, task_rng, Samples, TaskError, TaskInstance, TaskParams, TestLayout, TestSet};

pub const MAX_SPEED: f64 = 8.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PendulumConfig {
    pub mass_range: (f64, f64),
    pub length_range: (f64, f64),
    pub dt: f64,
    pub gravity: f64,
    pub torque_range: (f64, f64),
    pub transitions_per_task: usize,
    pub k_shot: usize,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            mass_range: (0.4, 1.6),
            length_range: (0.4, 1.6),
            dt: 0.05,
            gravity: 10.0,
            torque_range: (-2.0, 2.0),
            transitions_per_task: 200,
            k_shot: 10,
        }
    }
}

impl PendulumConfig {
    pub fn with_shots(k_shot: usize) -> Self {
        Self {
            k_shot,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    pub fn observation(&self) -> [f64; 3] {
        [self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

/// One explicit step: the velocity is updated first and clipped to
/// `[-8, 8]`, then the angle advances with the new velocity.
pub fn pendulum_step(
    state: PendulumState,
    torque: f64,
    m: f64,
    l: f64,
    dt: f64,
    g: f64,
    torque_range: (f64, f64),
) -> Result<PendulumState, TaskError> {
    if !(m > 0.0 && l > 0.0) {
        return Err(TaskError::Physics { m, l });
    }
    let u = torque.clamp(torque_range.0, torque_range.1);
    let accel = 3.0 * g / (2.0 * l) * state.theta.sin() + 3.0 / (m * l * l) * u;
    let theta_dot = (state.theta_dot + accel * dt).clamp(-MAX_SPEED, MAX_SPEED);
    Ok(PendulumState {
        theta: state.theta + theta_dot * dt,
        theta_dot,
    })
}

/// Rolls out one task under uniformly random torques.
pub(crate) fn pendulum_task(
    config: &PendulumConfig,
    seed: u64,
    id: u64,
    physics: Option<(f64, f64)>,
) -> TaskInstance {
    let mut rng = task_rng(seed, id);
    let (m, l) = physics.unwrap_or_else(|| {
        (
            rng.random_range(config.mass_range.0..=config.mass_range.1),
            rng.random_range(config.length_range.0..=config.length_range.1),
        )
    });
    let mut state = PendulumState {
        theta: rng.random_range(-PI..=PI),
        theta_dot: rng.random_range(-1.0..=1.0),
    };
    let n = config.transitions_per_task;
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random_range(config.torque_range.0..=config.torque_range.1);
        let next = pendulum_step(state, u, m, l, config.dt, config.gravity, config.torque_range)
            .expect("sampled physics are positive");
        let o = state.observation();
        inputs.push([o[0], o[1], o[2], u]);
        targets.push(next.observation());
        state = next;
    }
    let k = config.k_shot.min(n.saturating_sub(1));
    let mut picked = vec![false; n];
    for i in index::sample(&mut rng, n, k) {
        picked[i] = true;
    }
    let mut support = Samples::new(4, 3);
    let mut query = Samples::new(4, 3);
    // both sets stay in time order
    for i in 0..n {
        let dst = if picked[i] { &mut support } else { &mut query };
        dst.push(&inputs[i], &targets[i]);
    }
    TaskInstance {
        id,
        params: TaskParams::Pendulum { mass: m, length: l },
        support,
        query,
    }
}

pub fn sample_pendulum(config: &PendulumConfig, seed: u64, count: usize) -> Vec<TaskInstance> {
    (0..count as u64)
        .map(|id| pendulum_task(config, seed, id, None))
        .collect()
}

/// `side x side` grid over `(mass, length)` (23 x 23 for `n = 529`); seeded
/// sampling when `n` is not a perfect square.
pub fn test_grid_pendulum(config: &PendulumConfig, n: usize) -> TestSet {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n || n == 0 {
        return TestSet {
            tasks: sample_pendulum(config, TEST_GRID_SEED, n),
            layout: TestLayout::SampledFallback,
        };
    }
    let masses = linspace(config.mass_range.0, config.mass_range.1, side);
    let lengths = linspace(config.length_range.0, config.length_range.1, side);
    let mut tasks = Vec::with_capacity(n);
    for &m in &masses {
        for &l in &lengths {
            let id = tasks.len() as u64;
            tasks.push(pendulum_task(config, TEST_GRID_SEED, id, Some((m, l))));
        }
    }
    TestSet {
        tasks,
        layout: TestLayout::Grid { rows: side, cols: side },
    }
}

/// Largest deviation between a task's recorded targets and a replay of each
/// transition through [`pendulum_step`].
pub fn replay_error(task: &TaskInstance, config: &PendulumConfig) -> Result<f64, TaskError> {
    let TaskParams::Pendulum { mass, length } = task.params else {
        return Err(TaskError::Config(format!("task {} is not a pendulum task", task.id)));
    };
    let mut worst: f64 = 0.0;
    for s in [&task.support, &task.query] {
        for i in 0..s.len() {
            let x = s.input(i);
            let state = PendulumState {
                theta: x[1].atan2(x[0]),
                theta_dot: x[2],
            };
            let next = pendulum_step(
                state,
                x[3],
                mass,
                length,
                config.dt,
                config.gravity,
                config.torque_range,
            )?;
            for (a, b) in next.observation().iter().zip(s.target(i)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}
