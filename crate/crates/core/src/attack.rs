//! Attack functions on a grid of fundamentals, and iteration reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discontinuity of an attack function at a grid node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub at: f64,
    /// Limit from the left, `A(t⁻)`.
    pub left: f64,
    /// Limit from the right, equal to the value at `t`.
    pub right: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RawAttackFunction {
    theta: Vec<f64>,
    values: Vec<f64>,
    jump: Option<Jump>,
}

/// Aggregate attack `A(θ)` sampled on a strictly increasing grid.
///
/// Between nodes the function is linear, beyond the grid it is constant. An
/// optional jump sits on a grid node; the node value is the right limit and
/// the left limit is stored separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAttackFunction", into = "RawAttackFunction")]
pub struct AttackFunction {
    theta: Vec<f64>,
    values: Vec<f64>,
    jump: Option<(usize, f64)>,
}

impl TryFrom<RawAttackFunction> for AttackFunction {
    type Error = Error;

    fn try_from(raw: RawAttackFunction) -> Result<Self> {
        match raw.jump {
            None => Self::new(raw.theta, raw.values),
            Some(j) => {
                let index = raw
                    .theta
                    .iter()
                    .position(|&x| x == j.at)
                    .ok_or_else(|| Error::domain("jump location must be a grid node"))?;
                if raw.values.get(index) != Some(&j.right) {
                    return Err(Error::domain("jump right limit must equal the node value"));
                }
                Self::with_jump(raw.theta, raw.values, index, j.left)
            }
        }
    }
}

impl From<AttackFunction> for RawAttackFunction {
    fn from(a: AttackFunction) -> Self {
        let jump = a.jump();
        RawAttackFunction {
            theta: a.theta,
            values: a.values,
            jump,
        }
    }
}

fn check_unit(v: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must lie in [0, 1], got {v}")))
    }
}

/// `points` equally spaced nodes on `[center - half_width, center + half_width]`.
/// For odd `points` the middle node is exactly `center`.
pub fn centered_grid(center: f64, half_width: f64, points: usize) -> Vec<f64> {
    let m = (points - 1) as f64;
    (0..points)
        .map(|i| {
            let u = 2.0 * i as f64 / m - 1.0;
            if 2 * i == points - 1 {
                center
            } else {
                center + half_width * u
            }
        })
        .collect()
}

/// Linear piece of an attack function on `[t0, t1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub t0: f64,
    pub t1: f64,
    pub a0: f64,
    pub a1: f64,
    /// `A(θ) > θ` inside the cell.
    pub success: bool,
}

/// Trapezoid node: location, attack value used there, and weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadNode {
    pub theta: f64,
    pub attack: f64,
    pub weight: f64,
}

impl AttackFunction {
    pub fn new(theta: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if theta.len() < 2 || theta.len() != values.len() {
            return Err(Error::domain(
                "attack function needs at least two nodes and one value per node",
            ));
        }
        if theta.iter().any(|t| !t.is_finite()) || theta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("theta grid must be finite and strictly increasing"));
        }
        for &v in &values {
            check_unit(v, "attack value")?;
        }
        Ok(Self {
            theta,
            values,
            jump: None,
        })
    }

    /// Function with a jump at `theta[index]`; `values[index]` is the right
    /// limit and `left` the left limit.
    pub fn with_jump(theta: Vec<f64>, values: Vec<f64>, index: usize, left: f64) -> Result<Self> {
        let mut a = Self::new(theta, values)?;
        if index == 0 || index + 1 >= a.theta.len() {
            return Err(Error::domain("jump must sit on an interior grid node"));
        }
        check_unit(left, "left limit")?;
        a.jump = Some((index, left));
        Ok(a)
    }

    /// `left` below `t`, `right` from `t` on, on a grid centred at `t`.
    pub fn step(t: f64, left: f64, right: f64, half_width: f64, points: usize) -> Result<Self> {
        if points < 3 || points % 2 == 0 {
            return Err(Error::domain("step grid needs an odd number of points, at least 3"));
        }
        if !(t.is_finite() && half_width.is_finite() && half_width > 0.0) {
            return Err(Error::domain("step location and half-width must be finite"));
        }
        let theta = centered_grid(t, half_width, points);
        let values = theta.iter().map(|&x| if x < t { left } else { right }).collect();
        Self::with_jump(theta, values, points / 2, left)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.theta[0]
    }

    pub fn hi(&self) -> f64 {
        self.theta[self.theta.len() - 1]
    }

    pub fn jump(&self) -> Option<Jump> {
        self.jump.map(|(i, left)| Jump {
            at: self.theta[i],
            left,
            right: self.values[i],
        })
    }

    pub fn jump_index(&self) -> Option<usize> {
        self.jump.map(|(i, _)| i)
    }

    /// Same grid and jump node, new values.
    pub fn with_values(&self, values: Vec<f64>, left: Option<f64>) -> Result<Self> {
        match (self.jump, left) {
            (Some((i, _)), Some(l)) => Self::with_jump(self.theta.clone(), values, i, l),
            (None, None) => Self::new(self.theta.clone(), values),
            _ => Err(Error::domain("left limit must be given exactly when the grid has a jump")),
        }
    }

    fn value_at(&self, i: usize, from_left: bool) -> f64 {
        match self.jump {
            Some((j, left)) if j == i && from_left => left,
            _ => self.values[i],
        }
    }

    fn interpolate(&self, theta: f64, from_left: bool) -> f64 {
        let n = self.theta.len();
        if theta <= self.theta[0] {
            return self.values[0];
        }
        if theta >= self.theta[n - 1] {
            return self.values[n - 1];
        }
        // First node strictly above theta.
        let k = self.theta.partition_point(|&x| x <= theta);
        let i = k - 1;
        if self.theta[i] == theta {
            return self.value_at(i, from_left);
        }
        let (t0, t1) = (self.theta[i], self.theta[k]);
        let (v0, v1) = (self.value_at(i, false), self.value_at(k, true));
        v0 + (v1 - v0) * (theta - t0) / (t1 - t0)
    }

    /// `A(θ)`, right-continuous at the jump.
    pub fn eval(&self, theta: f64) -> f64 {
        self.interpolate(theta, false)
    }

    /// `A(θ⁻)`; differs from [`eval`](Self::eval) only at the jump.
    pub fn eval_left(&self, theta: f64) -> f64 {
        self.interpolate(theta, true)
    }

    /// Node values with the jump node listed twice, left limit first.
    pub fn samples(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.theta.len() + 1);
        for (i, (&t, &v)) in self.theta.iter().zip(&self.values).enumerate() {
            if let Some((j, left)) = self.jump {
                if i == j {
                    out.push((t, left));
                }
            }
            out.push((t, v));
        }
        out
    }

    /// Trapezoid nodes over the grid. Each side of the jump is integrated
    /// separately, so the jump node appears twice.
    pub fn quadrature_nodes(&self) -> Vec<QuadNode> {
        let n = self.theta.len();
        let mut out = Vec::with_capacity(n + 1);
        let mut push_side = |range: std::ops::RangeInclusive<usize>, left_end: bool| {
            let (a, b) = (*range.start(), *range.end());
            for i in a..=b {
                let mut w = 0.0;
                if i > a {
                    w += 0.5 * (self.theta[i] - self.theta[i - 1]);
                }
                if i < b {
                    w += 0.5 * (self.theta[i + 1] - self.theta[i]);
                }
                let attack = if i == b && left_end {
                    self.value_at(i, true)
                } else {
                    self.values[i]
                };
                out.push(QuadNode {
                    theta: self.theta[i],
                    attack,
                    weight: w,
                });
            }
        };
        match self.jump {
            Some((j, _)) => {
                push_side(0..=j, true);
                push_side(j..=n - 1, false);
            }
            None => push_side(0..=n - 1, false),
        }
        out
    }

    /// Linear pieces of the function, split at the jump and at every zero of
    /// `A(θ) - θ`, each tagged with whether the attack succeeds on it.
    pub fn cells(&self) -> Vec<Cell> {
        let samples = self.samples();
        let sides: Vec<&[(f64, f64)]> = match self.jump {
            Some((j, _)) => vec![&samples[..=j], &samples[j + 1..]],
            None => vec![&samples[..]],
        };
        let mut out = Vec::with_capacity(samples.len() + 4);
        for side in sides {
            for seg in side.windows(2) {
                let ((t0, a0), (t1, a1)) = (seg[0], seg[1]);
                let (d0, d1) = (a0 - t0, a1 - t1);
                let mut push = |t0: f64, a0: f64, d0: f64, t1: f64, a1: f64, d1: f64| {
                    if t1 > t0 {
                        out.push(Cell {
                            t0,
                            t1,
                            a0,
                            a1,
                            success: d0 + d1 > 0.0,
                        });
                    }
                };
                if d0 * d1 < 0.0 {
                    let s = t0 + d0 / (d0 - d1) * (t1 - t0);
                    push(t0, a0, d0, s, s, 0.0);
                    push(s, s, 0.0, t1, a1, d1);
                } else {
                    push(t0, a0, d0, t1, a1, d1);
                }
            }
        }
        out
    }

    /// Largest pointwise distance, comparing both one-sided values at every
    /// node of either grid.
    pub fn sup_distance(&self, other: &AttackFunction) -> f64 {
        let mut worst: f64 = 0.0;
        for &t in self.theta.iter().chain(&other.theta) {
            worst = worst
                .max((self.eval(t) - other.eval(t)).abs())
                .max((self.eval_left(t) - other.eval_left(t)).abs());
        }
        worst
    }

    /// First sample breaking `A ≥ 1 - δ` left of `t` or `A ≤ δ` from `t` on.
    pub fn bounds_violation(&self, t: f64, delta: f64) -> Option<(f64, f64)> {
        const SLACK: f64 = 1e-12;
        let mut samples = self.samples().into_iter();
        let mut seen_t = false;
        samples.find(|&(theta, a)| {
            let left_side = if theta == t && self.jump.is_some() && !seen_t {
                seen_t = true;
                true
            } else {
                theta < t
            };
            if left_side {
                a < 1.0 - delta - SLACK
            } else {
                a > delta + SLACK
            }
        })
    }

    /// Smallest and largest finite-difference slope, skipping the jump cell.
    pub fn slope_range(&self) -> (f64, f64) {
        let s = self.samples();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for w in s.windows(2) {
            let dt = w[1].0 - w[0].0;
            if dt <= 0.0 {
                continue;
            }
            let slope = (w[1].1 - w[0].1) / dt;
            lo = lo.min(slope);
            hi = hi.max(slope);
        }
        (lo, hi)
    }

    /// Nonincreasing on each side of the jump, up to `tol`.
    pub fn is_nonincreasing(&self, tol: f64) -> bool {
        self.samples().windows(2).all(|w| w[1].1 <= w[0].1 + tol)
    }
}

/// Diagnostics recorded after each best response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iteration: usize,
    pub sup_delta: f64,
    /// Smallest value left of the jump.
    pub min_left: f64,
    /// Largest value from the jump on.
    pub max_right: f64,
    pub min_slope: f64,
    pub max_slope: f64,
    pub nonincreasing: bool,
    /// Signal cutoff used for this best response, when there is one.
    pub cutoff: Option<f64>,
}

impl IterateRecord {
    pub fn new(iteration: usize, sup_delta: f64, a: &AttackFunction, cutoff: Option<f64>) -> Self {
        let t = a.jump().map_or(f64::INFINITY, |j| j.at);
        let (mut min_left, mut max_right) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut seen_t = false;
        for (theta, v) in a.samples() {
            let left = if theta == t && !seen_t {
                seen_t = true;
                true
            } else {
                theta < t
            };
            if left {
                min_left = min_left.min(v);
            } else {
                max_right = max_right.max(v);
            }
        }
        let (min_slope, max_slope) = a.slope_range();
        Self {
            iteration,
            sup_delta,
            min_left,
            max_right,
            min_slope,
            max_slope,
            nonincreasing: a.is_nonincreasing(1e-12),
            cutoff,
        }
    }
}

/// Outcome of a best-response iteration started from a step at `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub t: f64,
    pub converged: bool,
    pub iterations: usize,
    pub sup_tol: f64,
    pub records: Vec<IterateRecord>,
    /// Last iterate; the equilibrium when `converged`.
    pub limit: AttackFunction,
}

impl EquilibriumReport {
    pub fn sup_deltas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.sup_delta).collect()
    }

    /// Whether the limit is nonincreasing on each side of `t`. Reported, not
    /// enforced.
    pub fn monotone(&self) -> bool {
        self.limit.is_nonincreasing(1e-9)
    }

    /// `Ok` when converged, otherwise a convergence error carrying the deltas.
    pub fn into_result(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::Convergence {
                iterations: self.iterations,
                last_delta: self.records.last().map_or(f64::NAN, |r| r.sup_delta),
                trace: self.sup_deltas(),
            })
        }
    }
}
