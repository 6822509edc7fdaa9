use std::f64::consts::PI;

use rand::Rng;

use super::{linspace, task_rng, Samples, TaskInstance, TaskParams, TestLayout, TestSet};

/// Seed used for the `x` draws of the fixed test grids.
pub(crate) const TEST_GRID_SEED: u64 = 0x7e57_6e1d;

#[derive(Clone, Debug, PartialEq)]
pub struct SinusoidConfig {
    pub easy_amplitude: (f64, f64),
    pub hard_amplitude: (f64, f64),
    pub hard_fraction: f64,
    pub phase: (f64, f64),
    pub k_shot: usize,
    pub query_size: usize,
    pub x_range: (f64, f64),
}

impl Default for SinusoidConfig {
    fn default() -> Self {
        Self {
            easy_amplitude: (0.1, 1.05),
            hard_amplitude: (4.95, 5.0),
            hard_fraction: 0.1,
            phase: (0.0, PI),
            k_shot: 5,
            query_size: 10,
            x_range: (-5.0, 5.0),
        }
    }
}

impl SinusoidConfig {
    pub fn with_shots(k_shot: usize) -> Self {
        Self {
            k_shot,
            ..Self::default()
        }
    }

    /// Amplitude range of the evaluation distribution.
    pub fn test_amplitude(&self) -> (f64, f64) {
        (self.easy_amplitude.0, self.hard_amplitude.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SinusoidMode {
    /// Mostly easy amplitudes with a `hard_fraction` of hard ones.
    TrainMixture,
    /// Amplitude uniform over the whole range.
    TestUniform,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn build(
    config: &SinusoidConfig,
    id: u64,
    amplitude: f64,
    phase: f64,
    rng: &mut impl Rng,
) -> TaskInstance {
    let mut draw = |n| {
        let mut s = Samples::new(1, 1);
        for _ in 0..n {
            let x = uniform(rng, config.x_range);
            s.push(&[x], &[amplitude * (x - phase).sin()]);
        }
        s
    };
    let support = draw(config.k_shot);
    let query = draw(config.query_size);
    TaskInstance {
        id,
        params: TaskParams::Sinusoid { amplitude, phase },
        support,
        query,
    }
}

/// Task `id` of the stream keyed by `seed`.
pub fn sinusoid_task(config: &SinusoidConfig, seed: u64, id: u64, mode: SinusoidMode) -> TaskInstance {
    let mut rng = task_rng(seed, id);
    let amplitude = match mode {
        SinusoidMode::TrainMixture => {
            if rng.random::<f64>() < config.hard_fraction {
                uniform(&mut rng, config.hard_amplitude)
            } else {
                uniform(&mut rng, config.easy_amplitude)
            }
        }
        SinusoidMode::TestUniform => uniform(&mut rng, config.test_amplitude()),
    };
    let phase = uniform(&mut rng, config.phase);
    build(config, id, amplitude, phase, &mut rng)
}

pub fn sample_sinusoid(
    config: &SinusoidConfig,
    seed: u64,
    count: usize,
    mode: SinusoidMode,
) -> Vec<TaskInstance> {
    (0..count as u64)
        .map(|id| sinusoid_task(config, seed, id, mode))
        .collect()
}

/// Deterministic evaluation set: amplitudes × 10 phases over the test
/// ranges (49 × 10 for `n = 490`), the interval midpoints for `n = 1`, and
/// seeded uniform sampling when `n` is not a multiple of 10.
pub fn test_grid_sinusoid(config: &SinusoidConfig, n: usize) -> TestSet {
    const PHASES: usize = 10;
    let (rows, cols) = if n == 1 {
        (1, 1)
    } else if n.is_multiple_of(PHASES) && n >= 2 * PHASES {
        (n / PHASES, PHASES)
    } else {
        let tasks = sample_sinusoid(config, TEST_GRID_SEED, n, SinusoidMode::TestUniform);
        return TestSet {
            tasks,
            layout: TestLayout::SampledFallback,
        };
    };
    let (a_lo, a_hi) = config.test_amplitude();
    let amps = linspace(a_lo, a_hi, rows);
    let phases = linspace(config.phase.0, config.phase.1, cols);
    let mut tasks = Vec::with_capacity(n);
    for &a in &amps {
        for &b in &phases {
            let id = tasks.len() as u64;
            let mut rng = task_rng(TEST_GRID_SEED, id);
            tasks.push(build(config, id, a, b, &mut rng));
        }
    }
    TestSet {
        tasks,
        layout: TestLayout::Grid { rows, cols },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(t: &TaskInstance) -> f64 {
        let TaskParams::Sinusoid { amplitude, phase } = t.params else {
            panic!("not a sinusoid")
        };
        let mut worst: f64 = 0.0;
        for s in [&t.support, &t.query] {
            for i in 0..s.len() {
                let r = s.target(i)[0] - amplitude * (s.input(i)[0] - phase).sin();
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    #[test]
    fn target_formula_examples() {
        assert!((1.0 * (PI / 2.0 - 0.0).sin() - 1.0).abs() < 1e-15);
        assert!((5.0 * (PI - PI).sin()).abs() < 1e-15);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let c = SinusoidConfig::default();
        let a = sample_sinusoid(&c, 42, 490, SinusoidMode::TestUniform);
        let b = sample_sinusoid(&c, 42, 490, SinusoidMode::TestUniform);
        assert_eq!(a, b);
        assert_ne!(a, sample_sinusoid(&c, 43, 490, SinusoidMode::TestUniform));
    }

    #[test]
    fn targets_obey_generator() {
        let c = SinusoidConfig::default();
        for t in sample_sinusoid(&c, 1, 200, SinusoidMode::TrainMixture) {
            assert!(residual(&t) < 1e-12);
            assert_eq!(t.support.len(), 5);
            assert_eq!(t.query.len(), 10);
        }
    }

    #[test]
    fn hard_fraction_is_respected() {
        let c = SinusoidConfig::default();
        let hard = sample_sinusoid(&c, 9, 10_000, SinusoidMode::TrainMixture)
            .iter()
            .filter(|t| matches!(t.params, TaskParams::Sinusoid { amplitude, .. } if amplitude >= 4.95))
            .count();
        assert!((hard as f64 / 10_000.0 - 0.1).abs() <= 0.02, "{hard}");
    }

    #[test]
    fn grid_layout() {
        let c = SinusoidConfig::default();
        let g = test_grid_sinusoid(&c, 490);
        assert_eq!(g.layout, TestLayout::Grid { rows: 49, cols: 10 });
        assert_eq!(g.tasks.len(), 490);
        assert_eq!(
            g.tasks[0].params,
            TaskParams::Sinusoid { amplitude: 0.1, phase: 0.0 }
        );
        let TaskParams::Sinusoid { amplitude, phase } = g.tasks[489].params else { panic!() };
        assert!((amplitude - 5.0).abs() < 1e-12 && (phase - PI).abs() < 1e-12);

        let one = test_grid_sinusoid(&c, 1);
        assert_eq!(
            one.tasks[0].params,
            TaskParams::Sinusoid { amplitude: 2.55, phase: PI / 2.0 }
        );
        let odd = test_grid_sinusoid(&c, 37);
        assert_eq!(odd.layout, TestLayout::SampledFallback);
        assert_eq!(odd.tasks.len(), 37);
    }

    #[test]
    fn generation_is_order_independent() {
        let c = SinusoidConfig::default();
        let all = sample_sinusoid(&c, 5, 50, SinusoidMode::TrainMixture);
        let single = sinusoid_task(&c, 5, 33, SinusoidMode::TrainMixture);
        assert_eq!(all[33], single);
    }
}
