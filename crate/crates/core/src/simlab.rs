//! Agent-based simulation of the steady-state attack.
//!
//! Every round each of `n` agents draws fresh noise around the current state
//! `(θ, Â)`, applies its cutoff rule, and the attacking fraction becomes the
//! next `Â` (optionally damped). The loop stops at an empirical fixed point.
//!
//! Randomness comes from ChaCha8 keyed by the run seed: round `r` uses stream
//! `r`, and agent `i` reads the words starting at `i * stride`, so a run is
//! reproducible bit for bit whatever the block scheduling. Noise is drawn by
//! inverse transform; for cutoff rules the comparison `G⁻¹(u) ≥ s` is done as
//! `u ≥ G(s)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::ErrorDistribution;
use crate::parallel::{default_workers, ordered_map};
use crate::twosignal::AttackSet;
use crate::{Error, Result};

const BLOCK: usize = 16_384;

/// Agent decision rule.
#[derive(Clone, Debug)]
pub enum Strategy {
    /// Attack when `z = Â - θ + ρ` is at or above `cutoff`.
    Cutoff {
        cutoff: f64,
        noise: ErrorDistribution,
    },
    /// Attack when `(θ + εˣ, Â + εʸ)` lies in the attack set.
    SignalPair {
        set: Arc<AttackSet>,
        dist_x: ErrorDistribution,
        dist_y: ErrorDistribution,
    },
}

impl Strategy {
    /// Cutoff rule with normal noise of the given precision.
    pub fn normal_cutoff(cutoff: f64, precision: f64) -> Result<Self> {
        Ok(Strategy::Cutoff {
            cutoff,
            noise: ErrorDistribution::normal(precision)?,
        })
    }

    fn stride(&self) -> u128 {
        match self {
            Strategy::Cutoff { .. } => 2,
            Strategy::SignalPair { .. } => 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n_agents: usize,
    pub theta: f64,
    pub strategy: Strategy,
    pub seed: u64,
    /// `Â` before the first round.
    pub init: f64,
    pub min_rounds: usize,
    pub max_rounds: usize,
    /// Weight on the new attacking fraction, in `(0, 1]`.
    pub damping: f64,
    /// Declared convergence threshold on `|Âⁿ - Âⁿ⁻¹|`; defaults to `3/√n`.
    pub tol: Option<f64>,
    /// Threads for the agent blocks; `0` means the default.
    pub workers: usize,
}

impl SimConfig {
    pub fn new(n_agents: usize, theta: f64, strategy: Strategy, seed: u64) -> Self {
        Self {
            n_agents,
            theta,
            strategy,
            seed,
            init: 0.5,
            min_rounds: 50,
            max_rounds: 500,
            damping: 1.0,
            tol: None,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::domain("n_agents must be at least 1"));
        }
        if !self.theta.is_finite() {
            return Err(Error::domain("theta must be finite"));
        }
        if !(0.0..=1.0).contains(&self.init) {
            return Err(Error::domain(format!("init must lie in [0, 1], got {}", self.init)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::domain(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.max_rounds == 0 || self.min_rounds > self.max_rounds {
            return Err(Error::domain("need 0 < max_rounds and min_rounds <= max_rounds"));
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0) {
                return Err(Error::domain("tol must be positive"));
            }
        }
        if let Strategy::Cutoff { cutoff, .. } = self.strategy {
            if !cutoff.is_finite() {
                return Err(Error::domain("cutoff must be finite"));
            }
        }
        Ok(())
    }

    pub fn tolerance(&self) -> f64 {
        self.tol.unwrap_or(3.0 / (self.n_agents as f64).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    /// `Â` per round, starting with the initial value at round 0.
    pub path: Vec<f64>,
    pub converged: bool,
    /// Rounds played.
    pub rounds: usize,
    pub terminal: f64,
    /// `terminal > θ`; a tie counts as failure.
    pub success: bool,
    pub damping: f64,
}

fn count_block(cfg: &SimConfig, round: u64, start: usize, len: usize, a_prev: f64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(round);
    rng.set_word_pos(start as u128 * cfg.strategy.stride());
    match &cfg.strategy {
        Strategy::Cutoff { cutoff, noise } => {
            let p = noise.cdf(cutoff - a_prev + cfg.theta);
            (0..len).filter(|_| rng.random::<f64>() >= p).count() as u64
        }
        Strategy::SignalPair { set, dist_x, dist_y } => (0..len)
            .filter(|_| {
                let (ux, uy) = (rng.random::<f64>(), rng.random::<f64>());
                let ex = dist_x.quantile(ux.max(f64::MIN_POSITIVE)).unwrap_or(0.0);
                let ey = dist_y.quantile(uy.max(f64::MIN_POSITIVE)).unwrap_or(0.0);
                set.contains(cfg.theta + ex, a_prev + ey)
            })
            .count() as u64,
    }
}

fn attack_count(cfg: &SimConfig, round: u64, a_prev: f64, workers: usize) -> u64 {
    let blocks: Vec<(usize, usize)> = (0..cfg.n_agents)
        .step_by(BLOCK)
        .map(|s| (s, BLOCK.min(cfg.n_agents - s)))
        .collect();
    ordered_map(&blocks, workers, |&(s, len)| count_block(cfg, round, s, len, a_prev))
        .into_iter()
        .sum()
}

fn play(cfg: &SimConfig, damping: f64) -> SimTrace {
    let workers = if cfg.workers == 0 { default_workers() } else { cfg.workers };
    let n = cfg.n_agents as f64;
    let tol = cfg.tolerance();
    let mut path = Vec::with_capacity(cfg.max_rounds + 1);
    path.push(cfg.init);
    let mut a = cfg.init;
    let mut converged = false;
    for round in 1..=cfg.max_rounds {
        let frac = attack_count(cfg, round as u64, a, workers) as f64 / n;
        let next = (damping * frac + (1.0 - damping) * a).clamp(0.0, 1.0);
        let step = (next - a).abs();
        a = next;
        path.push(a);
        if round >= cfg.min_rounds && step < tol {
            converged = true;
            break;
        }
    }
    SimTrace {
        rounds: path.len() - 1,
        converged,
        terminal: a,
        success: a > cfg.theta,
        damping,
        path,
    }
}

/// Runs until consecutive rounds differ by less than the tolerance. Without
/// convergence the run is repeated once at half damping; a second failure is
/// a convergence error carrying the last path.
pub fn run_steady_state(cfg: &SimConfig) -> Result<SimTrace> {
    let trace = run_unchecked(cfg)?;
    if trace.converged {
        return Ok(trace);
    }
    let last = trace.path.windows(2).last().map_or(f64::NAN, |w| (w[1] - w[0]).abs());
    Err(Error::Convergence {
        iterations: trace.rounds,
        last_delta: last,
        trace: trace.path,
    })
}

/// [`run_steady_state`] without turning a second failure into an error.
pub fn run_unchecked(cfg: &SimConfig) -> Result<SimTrace> {
    cfg.validate()?;
    let first = play(cfg, cfg.damping);
    if first.converged || cfg.damping <= 0.5 {
        return Ok(first);
    }
    Ok(play(cfg, 0.5))
}

/// One row of a sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    pub init: f64,
    pub replication: usize,
    pub seed: u64,
    pub terminal: f64,
    pub success: bool,
    pub converged: bool,
    pub rounds: usize,
}

/// Runs the template at every `(θ, init, replication)`; replication `r` uses
/// seed `template.seed + r` at every `θ`. Rows are sorted by `θ`, then
/// `init`, then replication; a non-convergent run is a flagged row.
pub fn sweep(
    template: &SimConfig,
    thetas: &[f64],
    inits: &[f64],
    replications: usize,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    template.validate()?;
    let mut thetas = thetas.to_vec();
    thetas.sort_by(f64::total_cmp);
    let mut inits = inits.to_vec();
    inits.sort_by(f64::total_cmp);
    let mut jobs = Vec::with_capacity(thetas.len() * inits.len() * replications);
    for &theta in &thetas {
        for &init in &inits {
            for r in 0..replications {
                jobs.push((theta, init, r));
            }
        }
    }
    let workers = if workers == 0 { default_workers() } else { workers };
    ordered_map(&jobs, workers, |&(theta, init, replication)| {
        let seed = template.seed.wrapping_add(replication as u64);
        let cfg = SimConfig {
            theta,
            init,
            seed,
            workers: 1,
            ..template.clone()
        };
        let trace = run_unchecked(&cfg)?;
        Ok(SweepRow {
            theta,
            init,
            replication,
            seed,
            terminal: trace.terminal,
            success: trace.success,
            converged: trace.converged,
            rounds: trace.rounds,
        })
    })
    .into_iter()
    .collect()
}

/// Per `θ`, the spread between the largest and smallest mean terminal attack
/// across initial values.
pub fn hysteresis_gaps(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let theta = rows[i].theta;
        let mut j = i;
        let mut means: Vec<f64> = Vec::new();
        while j < rows.len() && rows[j].theta == theta {
            let init = rows[j].init;
            let (mut sum, mut k) = (0.0, 0);
            while j < rows.len() && rows[j].theta == theta && rows[j].init == init {
                sum += rows[j].terminal;
                k += 1;
                j += 1;
            }
            means.push(sum / k as f64);
        }
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        out.push((theta, hi - lo));
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsignal::attack_fixed_points;

    fn net(theta: f64, n: usize, seed: u64) -> SimConfig {
        SimConfig::new(n, theta, Strategy::normal_cutoff(0.25, 16.0).unwrap(), seed)
    }

    #[test]
    fn hopeless_fundamental_fails() {
        let mut cfg = net(10.0, 5000, 1);
        cfg.init = 1.0;
        let trace = run_steady_state(&cfg).unwrap();
        assert_eq!(trace.terminal, 0.0);
        assert!(!trace.success);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let cfg = net(0.25, 40_000, 7);
        let a = run_steady_state(&cfg).unwrap();
        let b = run_steady_state(&SimConfig { workers: 3, ..cfg.clone() }).unwrap();
        assert_eq!(a, b);
        let c = run_steady_state(&SimConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.path, c.path);
    }

    #[test]
    fn lands_near_upper_fixed_point() {
        let n = 200_000;
        let fp = attack_fixed_points(0.25, 0.25, 16.0).unwrap();
        let upper = fp.solutions.last().unwrap().attack;
        let mut cfg = net(0.25, n, 3);
        cfg.init = (upper - 0.02).max(0.0);
        let trace = run_steady_state(&cfg).unwrap();
        assert!((trace.terminal - upper).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn middle_fixed_point_repels() {
        let fp = attack_fixed_points(0.25, 0.25, 16.0).unwrap();
        let (lo, mid, hi) = (fp.solutions[0].attack, fp.solutions[1].attack, fp.solutions[2].attack);
        let tol = 4.0 / (100_000f64).sqrt();
        for (shift, target) in [(0.01, hi), (-0.01, lo)] {
            let mut cfg = net(0.25, 100_000, 11);
            cfg.init = mid + shift;
            let trace = run_steady_state(&cfg).unwrap();
            assert!((trace.terminal - target).abs() < tol, "{shift}: {}", trace.terminal);
        }
    }

    #[test]
    fn tie_counts_as_failure() {
        let cfg = SimConfig {
            min_rounds: 1,
            max_rounds: 1,
            ..net(1.0, 10, 0)
        };
        let mut cfg = cfg;
        cfg.strategy = Strategy::normal_cutoff(-1e9, 16.0).unwrap();
        let trace = run_steady_state(&cfg).unwrap();
        assert_eq!(trace.terminal, 1.0);
        assert!(!trace.success);
    }

    #[test]
    fn sweep_is_sorted_and_empty_range_is_empty() {
        let cfg = net(0.0, 2000, 5);
        assert!(sweep(&cfg, &[], &[0.0, 1.0], 3, 1).unwrap().is_empty());
        let rows = sweep(&cfg, &[0.4, 0.1], &[1.0, 0.0], 2, 2).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!((rows[0].theta, rows[0].init, rows[0].replication), (0.1, 0.0, 0));
        assert_eq!((rows[7].theta, rows[7].init, rows[7].replication), (0.4, 1.0, 1));
        assert_eq!(rows, sweep(&cfg, &[0.1, 0.4], &[0.0, 1.0], 2, 1).unwrap());
        assert_eq!(hysteresis_gaps(&rows).len(), 2);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(run_steady_state(&net(0.0, 0, 1)).is_err());
        let mut cfg = net(0.0, 10, 1);
        cfg.damping = 0.0;
        assert!(run_steady_state(&cfg).unwrap_err().is_domain());
    }
}
