//! One private signal over the net size of the attack.
//!
//! Each agent sees `z = A - θ + ε/√α_z` with standard normal `ε` and attacks
//! when `z` exceeds a cutoff `z*`. The attack mass then solves
//!
//! ```text
//! A = 1 - Φ(√α_z (z* - A + θ))
//! ```
//!
//! The right-hand side is an S-curve in `A` with maximal slope `√(α_z/2π)`.
//! Below `α_z = 2π` it is a contraction and the equation has one root; above
//! it the curve crosses the diagonal three times on a window of fundamentals
//! bounded by the two fold (tangency) points.
//!
//! Everything depends on `θ` and `z*` only through `w = θ + z*`, which the
//! branch solvers use as their coordinate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dist::{normal_cdf, normal_pdf, Quadrature};
use crate::error::{Error, Result};
use crate::parallel::ordered_map;

/// Number of cells in the root-bracketing scan over `A ∈ [0, 1]`.
/// Roots closer together than `1/SCAN_CELLS` are not separated.
pub const SCAN_CELLS: usize = 4096;

const ROOT_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub attack: f64,
    /// Slope of the best-response map at the root.
    pub slope: f64,
    pub stability: Stability,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSet {
    pub theta: f64,
    pub z_star: f64,
    pub alpha_z: f64,
    /// Sorted by attack mass.
    pub solutions: Vec<FixedPoint>,
}

impl FixedPointSet {
    pub fn count(&self) -> usize {
        self.solutions.len()
    }

    pub fn max_residual(&self) -> f64 {
        self.solutions
            .iter()
            .map(|s| (s.attack - response(self.theta + self.z_star, self.alpha_z, s.attack)).abs())
            .fold(0.0, f64::max)
    }
}

/// Best response `1 - Φ(√α (w - A))`, written as `Φ(-√α (w - A))`.
fn response(w: f64, alpha: f64, attack: f64) -> f64 {
    normal_cdf(-alpha.sqrt() * (w - attack))
}

fn response_slope(w: f64, alpha: f64, attack: f64) -> f64 {
    let s = alpha.sqrt();
    s * normal_pdf(s * (w - attack))
}

fn residual(w: f64, alpha: f64, attack: f64) -> f64 {
    attack - response(w, alpha, attack)
}

fn check_inputs(alpha_z: f64, values: &[f64]) -> Result<()> {
    if !(alpha_z.is_finite() && alpha_z > 0.0) {
        return Err(Error::domain(format!("alpha_z must be positive, got {alpha_z}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("theta and z_star must be finite"));
    }
    Ok(())
}

/// Root of an increasing function on `[lo, hi]` with `f(lo) <= 0 <= f(hi)`.
fn bisect_increasing(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn classify(w: f64, alpha: f64, attack: f64) -> FixedPoint {
    let slope = response_slope(w, alpha, attack);
    FixedPoint {
        attack,
        slope,
        stability: if slope < 1.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        },
    }
}

/// All attack masses consistent with cutoff `z_star` at fundamental `theta`.
///
/// The residual is scanned on [`SCAN_CELLS`] equal cells of `[0, 1]` and
/// every sign change is bisected.
///
/// ```
/// use coordlab::netsignal::attack_fixed_points;
///
/// let set = attack_fixed_points(0.25, 0.25, 16.0).unwrap();
/// assert_eq!(set.count(), 3);
/// assert_eq!(set.solutions[1].attack, 0.5);
/// ```
pub fn attack_fixed_points(theta: f64, z_star: f64, alpha_z: f64) -> Result<FixedPointSet> {
    check_inputs(alpha_z, &[theta, z_star])?;
    let w = theta + z_star;
    let node = |i: usize| i as f64 / SCAN_CELLS as f64;
    let values: Vec<f64> = (0..=SCAN_CELLS)
        .map(|i| residual(w, alpha_z, node(i)))
        .collect();
    let mut roots = Vec::new();
    for i in 0..=SCAN_CELLS {
        if values[i] == 0.0 {
            roots.push(node(i));
            continue;
        }
        if i < SCAN_CELLS && values[i + 1] != 0.0 && (values[i] < 0.0) != (values[i + 1] < 0.0) {
            let (lo, hi) = (node(i), node(i + 1));
            let root = if values[i] < 0.0 {
                bisect_increasing(lo, hi, |a| residual(w, alpha_z, a))
            } else {
                bisect_increasing(lo, hi, |a| -residual(w, alpha_z, a))
            };
            roots.push(root);
        }
    }
    Ok(FixedPointSet {
        theta,
        z_star,
        alpha_z,
        solutions: roots.into_iter().map(|a| classify(w, alpha_z, a)).collect(),
    })
}

/// Fundamentals with three equilibrium attack masses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityRegion {
    pub z_star: f64,
    pub alpha_z: f64,
    /// Fold points `(θ̌, θ̂)`; `None` below the `2π` threshold.
    pub bounds: Option<(f64, f64)>,
}

impl MultiplicityRegion {
    /// Empty when there is no fold, or when both folds coincide at `α_z = 2π`.
    pub fn is_empty(&self) -> bool {
        self.bounds.is_none_or(|(lo, hi)| hi <= lo)
    }

    pub fn contains_strictly(&self, theta: f64) -> bool {
        self.bounds.is_some_and(|(lo, hi)| theta > lo && theta < hi)
    }
}

/// Distance in `A` from `w` to the fold points, `u₀/√α` with
/// `u₀ = √ln(α/2π)` the root of the unit-slope condition `√α φ(u) = 1`.
fn fold_offset(alpha: f64) -> Option<f64> {
    (alpha >= 2.0 * PI).then(|| (alpha / (2.0 * PI)).ln().max(0.0).sqrt() / alpha.sqrt())
}

/// Tangency window of the S-curve.
///
/// At a fold the best response has unit slope, `√α φ(u) = 1` with
/// `u = √α (w - A)`, so `u = ±u₀`; the fixed-point condition then gives
/// `A = Φ(∓u₀)` and `θ = ±u₀/√α + Φ(∓u₀) - z*`. For the normal law both
/// equations solve in closed form, so no iterative tangency search is needed.
pub fn multiplicity_region(z_star: f64, alpha_z: f64) -> Result<MultiplicityRegion> {
    check_inputs(alpha_z, &[z_star])?;
    let bounds = fold_offset(alpha_z).map(|d| {
        let u0 = d * alpha_z.sqrt();
        let low = d + normal_cdf(-u0) - z_star;
        let high = -d + normal_cdf(u0) - z_star;
        (low, high)
    });
    Ok(MultiplicityRegion {
        z_star,
        alpha_z,
        bounds,
    })
}

/// One row of a bifurcation diagram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BifurcationRow {
    pub theta: f64,
    pub attack: f64,
    pub stability: Stability,
}

/// Fixed points over a grid of fundamentals, evaluated on `workers` threads.
/// Rows come back ordered by `theta`, then by attack mass.
pub fn bifurcation(
    z_star: f64,
    alpha_z: f64,
    thetas: &[f64],
    workers: usize,
) -> Result<Vec<BifurcationRow>> {
    let sets = ordered_map(thetas, workers, |&theta| {
        attack_fixed_points(theta, z_star, alpha_z)
    });
    let mut rows = Vec::new();
    for set in sets {
        let set = set?;
        rows.extend(set.solutions.iter().map(|s| BifurcationRow {
            theta: set.theta,
            attack: s.attack,
            stability: s.stability,
        }));
    }
    rows.sort_by(|a, b| a.theta.total_cmp(&b.theta).then(a.attack.total_cmp(&b.attack)));
    Ok(rows)
}

/// Largest root (high-attack branch) at `w = θ + z*`, if it exists.
pub fn upper_branch(w: f64, alpha: f64) -> Option<f64> {
    match fold_offset(alpha) {
        None => Some(unique_root(w, alpha)),
        Some(d) => {
            let left = (w + d).clamp(0.0, 1.0);
            (residual(w, alpha, left) <= 0.0)
                .then(|| bisect_increasing(left, 1.0, |a| residual(w, alpha, a)))
        }
    }
}

/// Smallest root (low-attack branch) at `w = θ + z*`, if it exists.
pub fn lower_branch(w: f64, alpha: f64) -> Option<f64> {
    match fold_offset(alpha) {
        None => Some(unique_root(w, alpha)),
        Some(d) => {
            let right = (w - d).clamp(0.0, 1.0);
            (residual(w, alpha, right) >= 0.0)
                .then(|| bisect_increasing(0.0, right, |a| residual(w, alpha, a)))
        }
    }
}

fn unique_root(w: f64, alpha: f64) -> f64 {
    bisect_increasing(0.0, 1.0, |a| residual(w, alpha, a))
}

/// Where the equilibrium attack function jumps from the high to the low
/// branch inside the multiplicity window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Branch {
    /// Switch at a fraction `s ∈ [0, 1]` of the window measured in
    /// `w = θ + z*`; the switch moves with the cutoff.
    Relative(f64),
    /// Switch at a fixed fundamental `θ = t`, clamped into the window.
    Absolute(f64),
}

impl Default for Branch {
    fn default() -> Self {
        Branch::Relative(0.5)
    }
}

/// Downward-sloping attack function `A_t(θ; z*)` glued from the high and low
/// branches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompositeBranch {
    pub z_star: f64,
    pub alpha_z: f64,
    /// Switch location in `w`; `None` when the root is unique everywhere.
    pub switch_w: Option<f64>,
}

impl CompositeBranch {
    pub fn new(z_star: f64, alpha_z: f64, branch: Branch) -> Result<Self> {
        check_inputs(alpha_z, &[z_star])?;
        let window = multiplicity_region(0.0, alpha_z)?;
        let switch_w = match (window.bounds, branch) {
            (None, _) => None,
            (Some((lo, hi)), Branch::Relative(s)) => {
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::domain(format!(
                        "relative branch switch must lie in [0, 1], got {s}"
                    )));
                }
                Some(lo + s * (hi - lo))
            }
            (Some((lo, hi)), Branch::Absolute(t)) => {
                if !t.is_finite() {
                    return Err(Error::domain("branch switch must be finite"));
                }
                Some((t + z_star).clamp(lo, hi))
            }
        };
        Ok(Self {
            z_star,
            alpha_z,
            switch_w,
        })
    }

    /// Switch location as a fundamental.
    pub fn switch_theta(&self) -> Option<f64> {
        self.switch_w.map(|w| w - self.z_star)
    }

    /// Attack mass; for `θ` equal to the switch the low branch is used.
    pub fn attack(&self, theta: f64) -> f64 {
        let w = theta + self.z_star;
        let picked = match self.switch_w {
            None => Some(unique_root(w, self.alpha_z)),
            Some(s) if w < s => upper_branch(w, self.alpha_z),
            Some(_) => lower_branch(w, self.alpha_z),
        };
        // Both branches exist on their side of any admissible switch.
        picked.unwrap_or_else(|| unique_root(w, self.alpha_z))
    }

    /// Net attack `y(θ) = A(θ) - θ`, strictly decreasing on each side of the
    /// switch.
    pub fn net_attack(&self, theta: f64) -> f64 {
        self.attack(theta) - theta
    }

    /// Analytic slope `∂A/∂θ = -√α φ / (1 - √α φ)` on the selected branch.
    pub fn slope(&self, theta: f64) -> f64 {
        let a = self.attack(theta);
        let g = response_slope(theta + self.z_star, self.alpha_z, a);
        -g / (1.0 - g)
    }
}

/// Posterior quadrature tolerance.
const POSTERIOR_TOL: f64 = 1e-12;

/// `P(A_t(θ, z*) - θ > 0 | z = z*)` under an improper uniform prior on `θ`.
///
/// The prior is realised as uniform on the window of fundamentals whose net
/// attack lies within `W = 50/√α_z` of `z*`, and `W` is doubled until the
/// probability moves by less than `1e-8`. The integrals run over `θ`, split at
/// the branch switch and at the zero of the net attack, so each piece is
/// smooth. Integrating in `θ` absorbs the `dθ/dy = 1/(A_θ - 1)` Jacobian of the
/// change of variables to the net attack.
pub fn posterior_success_prob(z_star: f64, alpha_z: f64, branch: Branch) -> Result<f64> {
    let composite = CompositeBranch::new(z_star, alpha_z, branch)?;
    let mut half_width = 50.0 / alpha_z.sqrt();
    let mut previous = posterior_on_window(&composite, half_width)?;
    for _ in 0..6 {
        half_width *= 2.0;
        let next = posterior_on_window(&composite, half_width)?;
        if (next - previous).abs() < 1e-8 {
            return Ok(next);
        }
        previous = next;
    }
    Err(Error::Numerical(format!(
        "posterior at z*={z_star} did not stabilise as the prior window widened"
    )))
}

fn posterior_on_window(branch: &CompositeBranch, half_width: f64) -> Result<f64> {
    let z = branch.z_star;
    let alpha = branch.alpha_z;
    // y ∈ [z - W, z + W] needs θ ∈ [-z - W, 1 - z + W] since A ∈ [0, 1].
    let (lo, hi) = (-z - half_width, 1.0 - z + half_width);

    let mut pieces = Vec::new();
    if let Some(s) = branch.switch_theta().filter(|s| *s > lo && *s < hi) {
        pieces.push((lo, s));
        pieces.push((s, hi));
    } else {
        pieces.push((lo, hi));
    }
    // Split each monotone piece at the zero of the net attack.
    let mut smooth = Vec::new();
    for &(a, b) in &pieces {
        let (ya, yb) = (branch.net_attack(a), branch.net_attack(b));
        if ya > 0.0 && yb < 0.0 {
            let root = bisect_increasing(a, b, |t| -branch.net_attack(t));
            smooth.push((a, root));
            smooth.push((root, b));
        } else {
            smooth.push((a, b));
        }
    }

    // Shift the Gaussian exponent by the squared distance from z to the
    // closure of the attained net attacks, so the weights cannot all underflow.
    let attained_gap = pieces
        .iter()
        .map(|&(a, b)| {
            let (top, bottom) = (branch.net_attack(a), branch.net_attack(b));
            if z > top {
                z - top
            } else if z < bottom {
                bottom - z
            } else {
                0.0
            }
        })
        .fold(f64::INFINITY, f64::min);
    let shift = 0.5 * alpha * attained_gap * attained_gap;
    let weight = |theta: f64| {
        let d = z - branch.net_attack(theta);
        (-0.5 * alpha * d * d + shift).exp()
    };

    let quad = Quadrature {
        tol: POSTERIOR_TOL,
        max_depth: 60,
        panels: 32,
        ..Quadrature::default()
    };
    let (mut success, mut total) = (0.0, 0.0);
    for &(a, b) in &smooth {
        let mid = 0.5 * (a + b);
        let part = match quad.integrate(weight, a, b) {
            Ok(v) => v,
            Err(Error::Integration { partial }) => partial,
            Err(e) => return Err(e),
        };
        total += part;
        if branch.net_attack(mid) > 0.0 {
            success += part;
        }
    }
    if !(total > 0.0) {
        return Err(Error::Numerical(format!(
            "posterior normaliser vanished at z*={z}"
        )));
    }
    Ok((success / total).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingKind {
    Root,
    Discontinuity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub z: f64,
    pub kind: CrossingKind,
    /// Function values at the two ends of the final bracket.
    pub below: f64,
    pub above: f64,
}

/// Grid and refinement settings for the cutoff search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffScan {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Bracket width at which jumps are classified.
    pub jump_spacing: f64,
    /// Change across `jump_spacing` that counts as a discontinuity.
    pub jump_threshold: f64,
}

impl Default for CutoffScan {
    fn default() -> Self {
        Self {
            lo: -12.0,
            hi: 12.0,
            points: 241,
            jump_spacing: 1e-8,
            jump_threshold: 0.1,
        }
    }
}

/// Every crossing of `level` by `f` on the scan grid.
///
/// Sign changes of `f - level` between neighbouring grid points are bisected
/// down to `jump_spacing`. If `f` still moves by more than `jump_threshold`
/// across that bracket the crossing is a discontinuity; otherwise bisection
/// continues to `1e-12` and the crossing is a root.
pub fn scan_level_crossings(
    f: impl Fn(f64) -> Result<f64>,
    level: f64,
    scan: &CutoffScan,
) -> Result<Vec<Crossing>> {
    if !(scan.hi > scan.lo) || scan.points < 2 {
        return Err(Error::domain("cutoff scan needs hi > lo and at least two points"));
    }
    let grid: Vec<f64> = (0..scan.points)
        .map(|i| scan.lo + (scan.hi - scan.lo) * i as f64 / (scan.points - 1) as f64)
        .collect();
    let values = grid.iter().map(|&z| f(z)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for i in 0..grid.len() {
        let d = values[i] - level;
        if d == 0.0 {
            out.push(Crossing {
                z: grid[i],
                kind: CrossingKind::Root,
                below: values[i],
                above: values[i],
            });
            continue;
        }
        if i + 1 == grid.len() {
            break;
        }
        let d_next = values[i + 1] - level;
        if d_next == 0.0 || (d < 0.0) == (d_next < 0.0) {
            continue;
        }
        let rising = d < 0.0;
        let (mut lo, mut hi) = (grid[i], grid[i + 1]);
        let (mut f_lo, mut f_hi) = (values[i], values[i + 1]);
        let mut kind = None;
        while hi - lo > 1e-12 {
            if kind.is_none() && hi - lo <= scan.jump_spacing {
                if (f_hi - f_lo).abs() > scan.jump_threshold {
                    kind = Some(CrossingKind::Discontinuity);
                    break;
                }
                kind = Some(CrossingKind::Root);
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let fm = f(mid)?;
            if fm == level {
                lo = mid;
                hi = mid;
                f_lo = fm;
                f_hi = fm;
                break;
            }
            if ((fm - level) < 0.0) == rising {
                lo = mid;
                f_lo = fm;
            } else {
                hi = mid;
                f_hi = fm;
            }
        }
        out.push(Crossing {
            z: 0.5 * (lo + hi),
            kind: kind.unwrap_or(CrossingKind::Root),
            below: f_lo,
            above: f_hi,
        });
    }
    Ok(out)
}

/// Result of [`find_equilibrium_cutoffs`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSearch {
    pub c: f64,
    pub alpha_z: f64,
    pub branch: Branch,
    pub window: (f64, f64),
    pub cutoffs: Vec<Crossing>,
}

/// Cutoffs `z*` at which the posterior success probability meets the cost.
/// An empty list is a valid answer; `window` reports where it looked.
pub fn find_equilibrium_cutoffs(
    c: f64,
    alpha_z: f64,
    branch: Branch,
    scan: &CutoffScan,
) -> Result<CutoffSearch> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::domain(format!("cost c must lie in (0, 1), got {c}")));
    }
    check_inputs(alpha_z, &[])?;
    let cutoffs = scan_level_crossings(
        |z| posterior_success_prob(z, alpha_z, branch),
        c,
        scan,
    )?;
    Ok(CutoffSearch {
        c,
        alpha_z,
        branch,
        window: (scan.lo, scan.hi),
        cutoffs,
    })
}
