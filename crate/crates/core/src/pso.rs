//! Particle swarm optimiser with reflective bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cost substituted for non-finite evaluations.
pub const NON_FINITE_PENALTY: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    pub w: f64,
    pub c1: f64,
    pub c2: f64,
    /// Draw r1, r2 per dimension instead of once per particle.
    pub per_dimension_random: bool,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 5,
            iterations: 100,
            w: 0.729,
            c1: 1.494,
            c2: 1.494,
            per_dimension_random: false,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::config("pso.swarm_size must be at least 2"));
        }
        if self.iterations == 0 {
            return Err(Error::config("pso.iterations must be positive"));
        }
        if !(0.0..1.0).contains(&self.w) {
            return Err(Error::config("pso.w must lie in [0, 1)"));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::config("pso.c1 and pso.c2 must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub pbest: Vec<f64>,
    pub pbest_cost: f64,
}

impl Particle {
    pub fn at_rest(x: Vec<f64>) -> Self {
        let n = x.len();
        Self {
            pbest: x.clone(),
            x,
            v: vec![0.0; n],
            pbest_cost: f64::INFINITY,
        }
    }
}

/// Reflects `x` back into `[lo, hi]`, flipping `v` on each bounce.
pub fn reflect(x: &mut f64, v: &mut f64, lo: f64, hi: f64) {
    for _ in 0..4 {
        if *x > hi {
            *x = 2.0 * hi - *x;
            *v = -*v;
        } else if *x < lo {
            *x = 2.0 * lo - *x;
            *v = -*v;
        } else {
            return;
        }
    }
    *x = x.clamp(lo, hi);
}

/// One velocity/position update of every particle with the given random
/// factors `(r1, r2)` per particle and dimension.
pub fn pso_update(swarm: &mut [Particle], gbest: &[f64], cfg: &PsoConfig, bounds: &[(f64, f64)], r: &[Vec<(f64, f64)>]) {
    for (p, rp) in swarm.iter_mut().zip(r) {
        for d in 0..p.x.len() {
            let (r1, r2) = rp[d];
            p.v[d] = cfg.w * p.v[d] + cfg.c1 * r1 * (p.pbest[d] - p.x[d]) + cfg.c2 * r2 * (gbest[d] - p.x[d]);
            p.x[d] += p.v[d];
            reflect(&mut p.x[d], &mut p.v[d], bounds[d].0, bounds[d].1);
        }
    }
}

pub fn pso_step<R: Rng>(swarm: &mut [Particle], gbest: &[f64], cfg: &PsoConfig, bounds: &[(f64, f64)], rng: &mut R) {
    let dim = bounds.len();
    let r: Vec<Vec<(f64, f64)>> = swarm
        .iter()
        .map(|_| {
            if cfg.per_dimension_random {
                (0..dim).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect()
            } else {
                let pair = (rng.random::<f64>(), rng.random::<f64>());
                vec![pair; dim]
            }
        })
        .collect();
    pso_update(swarm, gbest, cfg, bounds, &r);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub gbest_cost: f64,
    pub mean_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub gbest: Vec<f64>,
    pub gbest_cost: f64,
    /// One record per iteration; record 0 is the initial swarm.
    pub history: Vec<IterationRecord>,
    pub evaluations: usize,
}

/// Minimises `cost` inside `bounds`. Evaluations within an iteration run in
/// parallel; everything order-dependent happens sequentially afterwards.
pub fn optimize<F>(cost: F, bounds: &[(f64, f64)], cfg: &PsoConfig) -> Result<PsoResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if bounds.is_empty() || bounds.iter().any(|(lo, hi)| !(hi > lo)) {
        return Err(Error::config("pso bounds must be non-empty with lo < hi"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut swarm: Vec<Particle> = (0..cfg.swarm_size)
        .map(|_| Particle::at_rest(bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect()))
        .collect();
    let mut gbest = swarm[0].x.clone();
    let mut gbest_cost = f64::INFINITY;
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut evaluations = 0;

    for iteration in 0..cfg.iterations {
        let costs: Vec<f64> = swarm
            .par_iter()
            .map(|p| {
                let c = cost(&p.x);
                if c.is_finite() {
                    c
                } else {
                    log::warn!("non-finite cost at {:?}; substituting penalty", p.x);
                    NON_FINITE_PENALTY
                }
            })
            .collect();
        evaluations += costs.len();
        for (p, &c) in swarm.iter_mut().zip(&costs) {
            if c < p.pbest_cost {
                p.pbest_cost = c;
                p.pbest = p.x.clone();
            }
            if c < gbest_cost {
                gbest_cost = c;
                gbest = p.x.clone();
            }
        }
        history.push(IterationRecord {
            iteration,
            gbest_cost,
            mean_cost: costs.iter().sum::<f64>() / costs.len() as f64,
        });
        if iteration + 1 < cfg.iterations {
            pso_step(&mut swarm, &gbest, cfg, bounds, &mut rng);
        }
    }
    Ok(PsoResult {
        gbest,
        gbest_cost,
        history,
        evaluations,
    })
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

pub fn write_history_csv<W: std::io::Write>(history: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "gbest_cost", "mean_cost"])?;
    for r in history {
        w.write_record([
            r.iteration.to_string(),
            format!("{:.12e}", r.gbest_cost),
            format!("{:.12e}", r.mean_cost),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv<R: std::io::Read>(input: R) -> Result<Vec<IterationRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn fixed_point_when_everything_coincides() {
        let mut swarm = vec![Particle {
            x: vec![0.3, -0.2],
            v: vec![0.0; 2],
            pbest: vec![0.3, -0.2],
            pbest_cost: 1.0,
        }];
        let before = swarm.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        pso_step(&mut swarm, &[0.3, -0.2], &PsoConfig::default(), &[(-1.0, 1.0); 2], &mut rng);
        assert_eq!(swarm, before);
    }

    #[test]
    fn one_dimensional_hand_update() {
        let cfg = PsoConfig {
            w: 0.5,
            c1: 1.0,
            c2: 1.0,
            ..PsoConfig::default()
        };
        let mut swarm = vec![Particle {
            x: vec![0.0],
            v: vec![0.0],
            pbest: vec![0.0],
            pbest_cost: 0.0,
        }];
        pso_update(&mut swarm, &[1.0], &cfg, &[(-5.0, 5.0)], &[vec![(0.5, 0.5)]]);
        assert_abs_diff_eq!(swarm[0].v[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(swarm[0].x[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn reflection_flips_velocity() {
        let (mut x, mut v) = (1.2, 0.5);
        reflect(&mut x, &mut v, -1.0, 1.0);
        assert_abs_diff_eq!(x, 0.8, epsilon = 1e-15);
        assert_eq!(v, -0.5);
        let (mut x, mut v) = (-7.5, -9.0);
        reflect(&mut x, &mut v, -1.0, 1.0);
        assert!((-1.0..=1.0).contains(&x));
    }

    #[test]
    fn constant_cost_keeps_an_initial_point() {
        let cfg = PsoConfig { iterations: 10, seed: 4, ..PsoConfig::default() };
        let r = optimize(|_| 3.5, &[(0.0, 1.0); 3], &cfg).unwrap();
        assert_eq!(r.gbest_cost, 3.5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let first: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        assert_eq!(r.gbest, first);
    }

    #[test]
    fn non_finite_costs_become_penalties() {
        let cfg = PsoConfig { iterations: 5, ..PsoConfig::default() };
        let r = optimize(|x| if x[0] > 0.0 { f64::NAN } else { x[0].abs() }, &[(-1.0, 1.0)], &cfg).unwrap();
        assert!(r.gbest_cost.is_finite());
        assert!(r.history.iter().all(|h| h.mean_cost.is_finite()));
    }

    #[test]
    fn evaluation_budget() {
        let r = optimize(sphere, &[(-5.0, 5.0); 5], &PsoConfig::default()).unwrap();
        assert_eq!(r.evaluations, 500);
        assert_eq!(r.history.len(), 100);
    }

    #[test]
    fn history_csv_round_trips() {
        let r = optimize(rosenbrock, &[(-5.0, 5.0); 2], &PsoConfig { iterations: 20, ..PsoConfig::default() }).unwrap();
        let mut buf = Vec::new();
        write_history_csv(&r.history, &mut buf).unwrap();
        let back = read_history_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), r.history.len());
        for (a, b) in back.iter().zip(&r.history) {
            assert_eq!(a.iteration, b.iteration);
            assert!((a.gbest_cost - b.gbest_cost).abs() <= 1e-11 * b.gbest_cost.abs().max(1e-300));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn positions_stay_in_bounds_and_gbest_never_rises(seed in 0u64..10_000, per_dim in any::<bool>()) {
            let bounds = [(-2.0, 1.0), (0.0, 3.0), (-0.5, 0.5)];
            let cfg = PsoConfig { iterations: 1, seed, per_dimension_random: per_dim, ..PsoConfig::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut swarm: Vec<Particle> = (0..5)
                .map(|_| Particle::at_rest(bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect()))
                .collect();
            let gbest = vec![0.9, 2.9, 0.4];
            for p in &mut swarm {
                p.pbest = bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
            }
            for _ in 0..30 {
                pso_step(&mut swarm, &gbest, &cfg, &bounds, &mut rng);
                for p in &swarm {
                    for (x, (lo, hi)) in p.x.iter().zip(&bounds) {
                        prop_assert!(x >= lo && x <= hi);
                    }
                }
            }

            let r = optimize(rosenbrock, &[(-5.0, 5.0); 2], &PsoConfig { iterations: 30, seed, ..PsoConfig::default() }).unwrap();
            prop_assert!(r.history.windows(2).all(|w| w[1].gbest_cost <= w[0].gbest_cost));
        }
    }

    #[test]
    fn same_seed_same_history() {
        let cfg = PsoConfig { seed: 99, ..PsoConfig::default() };
        let a = optimize(rosenbrock, &[(-5.0, 5.0); 2], &cfg).unwrap();
        let b = optimize(rosenbrock, &[(-5.0, 5.0); 2], &cfg).unwrap();
        assert_eq!(a, b);
    }
}
