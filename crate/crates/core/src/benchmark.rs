//! Benchmark game without any signal on actions.
//!
//! Agents see only `x = θ + σ_x ε` and attack below a signal threshold `x*`.
//! The attack mass at fundamental `θ` is `Φ(√α_x (x* - θ))`, the regime
//! switches at the `θ*` where that mass equals `θ*`, and the marginal agent is
//! indifferent when `Φ(√α_x (θ* - x*)) = c`. The pair has the closed form
//! `θ* = Φ(-Φ⁻¹(c)) = 1 - c` and `x* = θ* - Φ⁻¹(c)/√α_x`.

use serde::{Deserialize, Serialize};

use crate::dist::{normal_cdf, normal_quantile};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSolution {
    pub x_star: f64,
    pub theta_star: f64,
    pub c: f64,
    pub alpha_x: f64,
}

impl BenchmarkSolution {
    /// Mass of agents attacking at fundamental `theta`.
    pub fn attack_mass(&self, theta: f64) -> f64 {
        normal_cdf(self.alpha_x.sqrt() * (self.x_star - theta))
    }

    /// Residual of the regime-switch condition `A(θ*) = θ*`.
    pub fn switch_residual(&self) -> f64 {
        self.attack_mass(self.theta_star) - self.theta_star
    }

    /// Residual of the indifference condition `P(θ < θ* | x*) = c`.
    pub fn indifference_residual(&self) -> f64 {
        normal_cdf(self.alpha_x.sqrt() * (self.theta_star - self.x_star)) - self.c
    }
}

fn check_domain(c: f64, alpha_x: f64) -> Result<()> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::domain(format!("cost c must lie in (0, 1), got {c}")));
    }
    if !(alpha_x.is_finite() && alpha_x > 0.0) {
        return Err(Error::domain(format!(
            "precision alpha_x must be positive, got {alpha_x}"
        )));
    }
    Ok(())
}

/// Closed-form equilibrium.
///
/// ```
/// let s = coordlab::benchmark::solve_benchmark(0.8, 4.0).unwrap();
/// assert!((s.theta_star - 0.2).abs() < 1e-12);
/// assert!((s.x_star + 0.2208).abs() < 1e-4);
/// ```
pub fn solve_benchmark(c: f64, alpha_x: f64) -> Result<BenchmarkSolution> {
    check_domain(c, alpha_x)?;
    let q = normal_quantile(c)?;
    let theta_star = normal_cdf(-q);
    Ok(BenchmarkSolution {
        x_star: theta_star - q / alpha_x.sqrt(),
        theta_star,
        c,
        alpha_x,
    })
}

/// Output of the closed-form-free solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericalBenchmark {
    pub solution: BenchmarkSolution,
    /// Midpoints of the outer θ bracket, one per bisection step.
    pub trace: Vec<f64>,
    pub inner_iterations: usize,
}

const BISECTION_TOL: f64 = 1e-12;

fn bisect_decreasing(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64, steps: &mut usize) -> f64 {
    while hi - lo > BISECTION_TOL * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        *steps += 1;
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves the two equilibrium conditions by nested bisection, using neither
/// `Φ⁻¹` nor the closed form.
///
/// For a candidate `θ` the inner loop finds the signal threshold `x(θ)` that
/// makes the indifference condition hold; the outer loop drives the switch
/// residual `Φ(√α_x (x(θ) - θ)) - θ`, which is strictly decreasing, to zero on
/// `[1e-12, 1 - 1e-12]`.
pub fn verify_benchmark_numerically(c: f64, alpha_x: f64) -> Result<NumericalBenchmark> {
    check_domain(c, alpha_x)?;
    let root = alpha_x.sqrt();
    let mut inner_iterations = 0usize;
    let mut trace = Vec::new();

    let threshold_for = |theta: f64, steps: &mut usize| -> f64 {
        let span = 40.0 / root;
        bisect_decreasing(
            theta - span,
            theta + span,
            |x| normal_cdf(root * (theta - x)) - c,
            steps,
        )
    };

    let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
    let switch = |theta: f64, steps: &mut usize| {
        let x = threshold_for(theta, steps);
        normal_cdf(root * (x - theta)) - theta
    };
    let (f_lo, f_hi) = (
        switch(lo, &mut inner_iterations),
        switch(hi, &mut inner_iterations),
    );
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::Convergence {
            iterations: 0,
            last_delta: f_lo.min(-f_hi),
            trace,
        });
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        trace.push(mid);
        if switch(mid, &mut inner_iterations) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if trace.len() > 200 {
            return Err(Error::Convergence {
                iterations: trace.len(),
                last_delta: hi - lo,
                trace,
            });
        }
    }
    let theta_star = 0.5 * (lo + hi);
    let x_star = threshold_for(theta_star, &mut inner_iterations);
    Ok(NumericalBenchmark {
        solution: BenchmarkSolution {
            x_star,
            theta_star,
            c,
            alpha_x,
        },
        trace,
        inner_iterations,
    })
}

/// Number of sign changes of `θ ↦ A(θ) - θ` on an `n`-point grid over
/// `[lo, hi]`. A single change witnesses uniqueness of the switch point.
pub fn switch_sign_changes(solution: &BenchmarkSolution, lo: f64, hi: f64, n: usize) -> usize {
    let mut changes = 0;
    let mut prev: Option<bool> = None;
    for i in 0..n {
        let theta = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let r = solution.attack_mass(theta) - theta;
        if r == 0.0 {
            continue;
        }
        let positive = r > 0.0;
        if prev.is_some_and(|p| p != positive) {
            changes += 1;
        }
        prev = Some(positive);
    }
    changes
}
