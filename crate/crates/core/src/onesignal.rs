//! Single net-size signal `z = A - θ + ρ` with a general symmetric error law.
//!
//! Agents attack when `z` is at or above a cutoff. Given a conjectured
//! aggregate attack `A_n`, the cutoff `z_n` solves `P[success | z] = c`, and
//! the induced attack is `A_{n+1}(θ) = 1 - G(z_n - A_n(θ) + θ)`.

use serde::{Deserialize, Serialize};

use crate::attack::{AttackFunction, Cell, EquilibriumReport, IterateRecord};
use crate::dist::{ln_sum_exp, ErrorDistribution};
use crate::twosignal::{ln_density_ratio, sub_grid, ConditionGrid};
use crate::{Error, Result};

/// Parameters of the sufficient conditions for the one-signal iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneSignalParams {
    pub delta: f64,
    pub gamma: f64,
    pub c: f64,
    pub dist_rho: ErrorDistribution,
}

impl OneSignalParams {
    /// `δ = 0.2`, `γ = 0.1`, `c = 1/2`, normal noise with precision `10⁴`.
    pub fn example() -> Self {
        Self {
            delta: 0.2,
            gamma: 0.1,
            c: 0.5,
            dist_rho: ErrorDistribution::Normal { precision: 1e4 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Self { delta, gamma, c, .. } = *self;
        if !(delta > 0.0 && gamma > 0.0) {
            return Err(Error::domain("delta and gamma must be positive"));
        }
        if !(delta + gamma < 0.5) {
            return Err(Error::domain(format!(
                "delta + gamma must be below 1/2, got {}",
                delta + gamma
            )));
        }
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::domain(format!("cost c must lie in (0, 1), got {c}")));
        }
        if !self.dist_rho.is_symmetric() {
            return Err(Error::domain("signal noise law must be symmetric"));
        }
        Ok(())
    }

    /// Admissible jump locations `[δ + γ, 1 - δ - γ]`.
    pub fn t_range(&self) -> (f64, f64) {
        (self.delta + self.gamma, 1.0 - self.delta - self.gamma)
    }

    /// Default upper end of the `ξ` scan.
    pub fn default_xi_max(&self) -> f64 {
        1.0 + 10.0 * self.dist_rho.std_dev()
    }

    /// `g(γ - δ) / (1 - g(γ - δ))`, the bound on `|dA/dθ|` along the
    /// iteration. Infinite when `g(γ - δ) >= 1`.
    pub fn slope_bound(&self) -> f64 {
        let g = self.dist_rho.pdf(self.gamma - self.delta);
        if g < 1.0 {
            g / (1.0 - g)
        } else {
            f64::INFINITY
        }
    }

    /// Cutoff band `(1/2 - t - γ, 1/2 - t + γ)` for a jump at `t`.
    pub fn cutoff_band(&self, t: f64) -> (f64, f64) {
        let center = 0.5 - t;
        (center - self.gamma, center + self.gamma)
    }

    fn check_t(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.t_range();
        if t >= lo && t <= hi {
            Ok(())
        } else {
            Err(Error::domain(format!("t={t} outside the admissible range [{lo}, {hi}]")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneSignalCheck {
    /// `ln((1-c)/c) - max_ξ ln κ(ξ)`, where `κ(ξ)` is the largest ratio
    /// `[1 - G(ξ-α)] / G(ξ-β)`; non-negative when the odds bound holds.
    pub odds_margin: f64,
    /// `G(γ) - (1 - δ)`.
    pub mass_margin: f64,
    /// `1 - g(δ - γ)`; must be positive.
    pub density_margin: f64,
    pub satisfied: bool,
    pub worst_xi: f64,
    pub xi_max: f64,
}

/// Evaluates the odds condition over a `ξ` grid on `[1-δ-γ, xi_max]` with
/// `α ∈ [0, δ]`, `β ∈ [1-δ, 1]`, and the other two conditions directly.
pub fn check_one_signal_conditions(
    p: &OneSignalParams,
    xi_max: f64,
    grid: &ConditionGrid,
) -> Result<OneSignalCheck> {
    p.validate()?;
    let xi_min = 1.0 - p.delta - p.gamma;
    if !(xi_max >= xi_min) {
        return Err(Error::domain(format!(
            "xi_max {xi_max} is below 1 - delta - gamma = {xi_min}"
        )));
    }
    let g = &p.dist_rho;
    let low_a = sub_grid(0.0, p.delta, grid.a_points);
    let high_a = sub_grid(1.0 - p.delta, 1.0, grid.a_points);
    let xis = sub_grid(xi_min, xi_max, grid.eta_points);
    let (mut worst, mut worst_xi) = (f64::NEG_INFINITY, xis[0]);
    for &xi in &xis {
        let sup = low_a
            .iter()
            .map(|&a| g.ln_sf(xi - a))
            .fold(f64::NEG_INFINITY, f64::max);
        let inf = high_a
            .iter()
            .map(|&b| g.ln_cdf(xi - b))
            .fold(f64::INFINITY, f64::min);
        let v = ln_density_ratio(sup, inf);
        if v > worst {
            worst = v;
            worst_xi = xi;
        }
    }
    let odds_margin = ((1.0 - p.c) / p.c).ln() - worst;
    let mass_margin = g.cdf(p.gamma) - (1.0 - p.delta);
    let density_margin = 1.0 - g.pdf(p.delta - p.gamma);
    Ok(OneSignalCheck {
        satisfied: odds_margin >= 0.0 && mass_margin >= 0.0 && density_margin > 0.0,
        odds_margin,
        mass_margin,
        density_margin,
        worst_xi,
        xi_max,
    })
}

/// `ln` of the success and total posterior weight of a signal `z`. The
/// conjecture is held constant outside its grid.
fn ln_weights(a: &AttackFunction, g: &ErrorDistribution, z: f64, cells: &[Cell]) -> (f64, f64) {
    let mut num = Vec::with_capacity(cells.len() + 2);
    let mut den = Vec::with_capacity(cells.len() + 2);
    let tiny = 1e-9 * g.std_dev();
    for cell in cells {
        let h = cell.t1 - cell.t0;
        let u0 = z - cell.a0 + cell.t0;
        let u1 = z - cell.a1 + cell.t1;
        let du = u1 - u0;
        let w = if du.abs() <= tiny {
            g.ln_pdf(0.5 * (u0 + u1)) + h.ln()
        } else {
            g.ln_mass_between(u0.min(u1), u0.max(u1)) - (du.abs() / h).ln()
        };
        den.push(w);
        if cell.success {
            num.push(w);
        }
    }
    let (t_lo, a_lo) = (a.lo(), a.values()[0]);
    let left = z - a_lo + t_lo;
    den.push(g.ln_cdf(left));
    num.push(g.ln_cdf(z - a_lo + t_lo.min(a_lo)));
    let (t_hi, a_hi) = (a.hi(), a.values()[a.len() - 1]);
    den.push(g.ln_sf(z - a_hi + t_hi));
    if a_hi > t_hi {
        num.push(g.ln_mass_between(z - a_hi + t_hi, z));
    }
    (ln_sum_exp(num.iter().copied()), ln_sum_exp(den.iter().copied()))
}

/// Posterior probability of a successful attack given signal `z`, under a
/// flat prior on `θ`. `None` when the signal has zero likelihood.
pub fn posterior_success_1s(a: &AttackFunction, dist: &ErrorDistribution, z: f64) -> Option<f64> {
    let (num, den) = ln_weights(a, dist, z, &a.cells());
    if den == f64::NEG_INFINITY {
        None
    } else {
        Some((num - den).exp().min(1.0))
    }
}

/// Cutoff located by [`attack_cutoff`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub z: f64,
    /// `z - (1 - δ - t)`.
    pub offset_from_upper: f64,
    /// `z - (1/2 - t)`; inside `(-γ, γ)` when the cutoff lies in the band.
    pub centered: f64,
    pub in_band: bool,
}

const CUTOFF_TOL: f64 = 1e-13;

fn bisect(mut lo: f64, mut hi: f64, attack: impl Fn(f64) -> bool) -> f64 {
    while hi - lo > CUTOFF_TOL * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if attack(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Signal at which the posterior success probability reaches `c`, for a
/// conjecture with a jump at `t`. Searched on `[1/2-t-γ-1, 1/2-t+γ+1]`;
/// signals with zero likelihood are resolved by bisecting both ways and
/// taking the midpoint.
pub fn attack_cutoff(a: &AttackFunction, p: &OneSignalParams, t: f64) -> Result<Cutoff> {
    p.validate()?;
    if let Some((theta, v)) = a.bounds_violation(t, p.delta) {
        return Err(Error::domain(format!(
            "conjecture leaves the delta band at theta={theta} (A={v})"
        )));
    }
    let cells = a.cells();
    let c = p.c;
    let post = |z: f64| {
        let (num, den) = ln_weights(a, &p.dist_rho, z, &cells);
        (den > f64::NEG_INFINITY).then(|| (num - den).exp())
    };
    let center = 0.5 - t;
    let (lo, hi) = (center - p.gamma - 1.0, center + p.gamma + 1.0);
    let at = |z: f64, undefined: bool| post(z).map_or(undefined, |q| q >= c);
    if at(lo, true) || !at(hi, false) {
        return Err(Error::Numerical(format!(
            "posterior does not cross c={c} on [{lo}, {hi}]"
        )));
    }
    let z1 = bisect(lo, hi, |z| at(z, false));
    let z2 = bisect(lo, hi, |z| at(z, true));
    let z = 0.5 * (z1 + z2);
    let (band_lo, band_hi) = p.cutoff_band(t);
    Ok(Cutoff {
        z,
        offset_from_upper: z - (1.0 - p.delta - t),
        centered: z - center,
        in_band: z > band_lo && z < band_hi,
    })
}

/// `A_{n+1}(θ) = 1 - G(z - A_n(θ) + θ)` on the grid of `a_n`, including the
/// left limit at the jump.
pub fn induced_attack_1s(a_n: &AttackFunction, dist: &ErrorDistribution, z: f64) -> Result<AttackFunction> {
    let values = a_n
        .theta()
        .iter()
        .zip(a_n.values())
        .map(|(&theta, &v)| dist.sf(z - v + theta))
        .collect();
    let left = a_n.jump().map(|j| dist.sf(z - j.left + j.at));
    a_n.with_values(values, left)
}

/// One best response to `a_n` at the given cutoff; the result must stay in
/// the `δ` band around the step at `t`.
pub fn best_response_1s(
    a_n: &AttackFunction,
    z: f64,
    p: &OneSignalParams,
    t: f64,
) -> Result<AttackFunction> {
    p.validate()?;
    let next = induced_attack_1s(a_n, &p.dist_rho, z)?;
    if let Some((theta, v)) = next.bounds_violation(t, p.delta) {
        return Err(Error::InvariantViolation(format!(
            "best response leaves the [1-delta, 1] / [0, delta] band at theta={theta} (A={v})"
        )));
    }
    Ok(next)
}

/// Resolution of the `θ` grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OneSignalGrid {
    pub theta_points: usize,
    /// Half-width in standard deviations of the noise.
    pub half_width_sd: f64,
    /// Lower bound on the half-width.
    pub min_half_width: f64,
}

impl Default for OneSignalGrid {
    fn default() -> Self {
        Self {
            theta_points: 2001,
            half_width_sd: 5.0,
            min_half_width: 1.0,
        }
    }
}

impl OneSignalGrid {
    fn validate(&self) -> Result<()> {
        if self.theta_points < 5 || self.theta_points % 2 == 0 {
            return Err(Error::domain("theta_points must be odd and at least 5"));
        }
        if !(self.half_width_sd > 0.0 && self.min_half_width >= 0.0) {
            return Err(Error::domain("grid half-widths must be positive"));
        }
        Ok(())
    }
}

/// Starting conjecture: `1 - δ` left of `t`, `δ` from `t` on.
pub fn initial_step_1s(t: f64, p: &OneSignalParams, grid: &OneSignalGrid) -> Result<AttackFunction> {
    grid.validate()?;
    let half_width = (grid.half_width_sd * p.dist_rho.std_dev()).max(grid.min_half_width);
    AttackFunction::step(t, 1.0 - p.delta, p.delta, half_width, grid.theta_points)
}

/// Largest change produced by one more cutoff-and-respond step.
pub fn consistency_residual_1s(a: &AttackFunction, p: &OneSignalParams, t: f64) -> Result<f64> {
    let cutoff = attack_cutoff(a, p, t)?;
    let next = induced_attack_1s(a, &p.dist_rho, cutoff.z)?;
    Ok(next.sup_distance(a))
}

/// Iterates cutoff and best response from the initial step until the
/// sup-norm change drops below `sup_tol`, returning the report even without
/// convergence. Each record carries the cutoff it used.
pub fn run_iteration_1s(
    t: f64,
    p: &OneSignalParams,
    max_iter: usize,
    sup_tol: f64,
    grid: &OneSignalGrid,
) -> Result<EquilibriumReport> {
    p.validate()?;
    p.check_t(t)?;
    let check = check_one_signal_conditions(p, p.default_xi_max(), &ConditionGrid::default())?;
    if !check.satisfied {
        return Err(Error::domain(format!(
            "sufficient conditions fail (odds margin {:e}, mass margin {:e}, density margin {:e})",
            check.odds_margin, check.mass_margin, check.density_margin
        )));
    }
    let mut current = initial_step_1s(t, p, grid)?;
    let mut records = Vec::new();
    let mut converged = false;
    for n in 1..=max_iter {
        let cutoff = attack_cutoff(&current, p, t)?;
        let next = best_response_1s(&current, cutoff.z, p, t)?;
        let delta = next.sup_distance(&current);
        records.push(IterateRecord::new(n, delta, &next, Some(cutoff.z)));
        current = next;
        if delta < sup_tol {
            converged = true;
            break;
        }
    }
    Ok(EquilibriumReport {
        t,
        converged,
        iterations: records.len(),
        sup_tol,
        records,
        limit: current,
    })
}

/// [`run_iteration_1s`], failing with a convergence error when `max_iter` is
/// exhausted.
pub fn iterate_to_equilibrium_1s(
    t: f64,
    p: &OneSignalParams,
    max_iter: usize,
    sup_tol: f64,
    grid: &OneSignalGrid,
) -> Result<EquilibriumReport> {
    run_iteration_1s(t, p, max_iter, sup_tol, grid)?.into_result()
}
