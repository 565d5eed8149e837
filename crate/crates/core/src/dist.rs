//! Error laws and numerical integration.
//!
//! Every solver in the crate describes its noise terms with an
//! [`ErrorDistribution`]: a normal law parameterised by its precision, a
//! uniform law on `[-σ, σ]`, or a user-tabulated piecewise-linear density.
//! The standard normal helpers ([`normal_cdf`], [`normal_quantile`], ...) are
//! exposed separately because the closed forms use them directly.
//!
//! Log-domain variants (`ln_cdf`, `ln_mass_between`, ...) stay finite far into
//! the tails. The posterior computations rely on this when the noise is very
//! precise and every likelihood underflows in linear scale.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Standard normal density φ.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

pub fn normal_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal cumulative distribution Φ.
///
/// Evaluated through the complementary error function so that the lower
/// tail keeps full relative precision down to the subnormal range.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn normal_ln_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-normal_cdf(-x)).ln_1p()
    } else if x > -20.0 {
        normal_cdf(x).ln()
    } else {
        // Asymptotic Mills-ratio series; at |x| = 20 the truncation error is
        // below 1e-15 relative.
        let r = 1.0 / (x * x);
        let series = 1.0
            + r * (-1.0
                + r * (3.0
                    + r * (-15.0 + r * (105.0 + r * (-945.0 + r * (10395.0 - r * 135135.0))))));
        normal_ln_pdf(x) - (-x).ln() + series.ln()
    }
}

/// Inverse of [`normal_cdf`].
///
/// Newton steps on `ln Φ(x) - ln p`, safeguarded by a shrinking bisection
/// bracket. Upper-half probabilities are mapped through symmetry so the
/// iteration always runs in the lower tail, where `p` carries full precision.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "normal quantile needs p in (0, 1), got {p}"
        )));
    }
    if p > 0.5 {
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

fn lower_quantile(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let ln_p = p.ln();
    // Abramowitz & Stegun 26.2.23 as the starting point (error < 4.5e-4).
    let t = (-2.0 * ln_p).sqrt();
    let mut x = -(t
        - (2.515517 + 0.802853 * t + 0.010328 * t * t)
            / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t));
    let (mut lo, mut hi) = (-40.0_f64, 0.0_f64);
    for _ in 0..200 {
        let f = normal_ln_cdf(x) - ln_p;
        if f > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        // d/dx ln Φ(x) = φ(x) / Φ(x), computed in log space.
        let slope = (normal_ln_pdf(x) - normal_ln_cdf(x)).exp();
        let mut next = x - f / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            return next;
        }
        x = next;
    }
    x
}

/// Raw (unvalidated) description of an error law as it appears in
/// configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistSpec {
    Normal { precision: f64 },
    Uniform { half_width: f64 },
    Tabulated { x: Vec<f64>, density: Vec<f64> },
}

/// A piecewise-linear density on a strictly increasing node set, zero
/// outside the nodes and normalised to unit mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Tabulated {
    x: Vec<f64>,
    density: Vec<f64>,
    cumulative: Vec<f64>,
    symmetric: bool,
}

impl Tabulated {
    pub fn new(x: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if x.len() < 2 || x.len() != density.len() {
            return Err(Error::domain(
                "tabulated density needs at least two nodes and one value per node",
            ));
        }
        if x.iter().any(|v| !v.is_finite()) || x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("tabulated nodes must be finite and strictly increasing"));
        }
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::domain("tabulated density values must be finite and non-negative"));
        }
        let mut cumulative = Vec::with_capacity(x.len());
        cumulative.push(0.0);
        for i in 1..x.len() {
            let area = 0.5 * (density[i] + density[i - 1]) * (x[i] - x[i - 1]);
            cumulative.push(cumulative[i - 1] + area);
        }
        let total = *cumulative.last().unwrap();
        if total <= 0.0 {
            return Err(Error::domain("tabulated density has zero mass"));
        }
        let density: Vec<f64> = density.iter().map(|d| d / total).collect();
        let cumulative: Vec<f64> = cumulative.iter().map(|c| c / total).collect();
        let n = x.len();
        let scale = x[n - 1].abs().max(x[0].abs());
        let symmetric = (0..n).all(|i| {
            let j = n - 1 - i;
            (x[i] + x[j]).abs() <= 1e-12 * scale
                && (density[i] - density[j]).abs() <= 1e-12 * density[i].abs().max(1.0)
        });
        Ok(Self {
            x,
            density,
            cumulative,
            symmetric,
        })
    }

    fn cell(&self, v: f64) -> usize {
        // Index i with x[i] <= v < x[i+1], clamped to a valid cell.
        let i = self.x.partition_point(|&node| node <= v);
        i.saturating_sub(1).min(self.x.len() - 2)
    }

    fn pdf(&self, v: f64) -> f64 {
        let n = self.x.len();
        if v < self.x[0] || v > self.x[n - 1] {
            return 0.0;
        }
        let i = self.cell(v);
        let h = self.x[i + 1] - self.x[i];
        let w = (v - self.x[i]) / h;
        self.density[i] * (1.0 - w) + self.density[i + 1] * w
    }

    fn cdf(&self, v: f64) -> f64 {
        let n = self.x.len();
        if v <= self.x[0] {
            return 0.0;
        }
        if v >= self.x[n - 1] {
            return 1.0;
        }
        let i = self.cell(v);
        let h = self.x[i + 1] - self.x[i];
        let u = v - self.x[i];
        let slope = (self.density[i + 1] - self.density[i]) / h;
        (self.cumulative[i] + self.density[i] * u + 0.5 * slope * u * u).clamp(0.0, 1.0)
    }

    fn partial_mean(&self, a: f64, b: f64) -> f64 {
        let n = self.x.len();
        let (a, b) = (a.max(self.x[0]), b.min(self.x[n - 1]));
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        for i in self.cell(a)..=self.cell(b) {
            let (x0, x1) = (self.x[i], self.x[i + 1]);
            let (p, q) = (a.max(x0), b.min(x1));
            if q <= p {
                continue;
            }
            let slope = (self.density[i + 1] - self.density[i]) / (x1 - x0);
            let d0 = self.density[i] - slope * x0;
            // ∫ u (d0 + slope u) du
            total += d0 * (q * q - p * p) / 2.0 + slope * (q * q * q - p * p * p) / 3.0;
        }
        total
    }

    fn second_moment(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.x.len() - 1 {
            let (p, q) = (self.x[i], self.x[i + 1]);
            let slope = (self.density[i + 1] - self.density[i]) / (q - p);
            let d0 = self.density[i] - slope * p;
            total += d0 * (q.powi(3) - p.powi(3)) / 3.0 + slope * (q.powi(4) - p.powi(4)) / 4.0;
        }
        total
    }
}

/// Noise law for the signal error terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistSpec", into = "DistSpec")]
pub enum ErrorDistribution {
    /// Centred normal with precision `1/σ²`.
    Normal { precision: f64 },
    /// Uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
    Tabulated(Tabulated),
}

impl TryFrom<DistSpec> for ErrorDistribution {
    type Error = Error;

    fn try_from(spec: DistSpec) -> Result<Self> {
        match spec {
            DistSpec::Normal { precision } => Self::normal(precision),
            DistSpec::Uniform { half_width } => Self::uniform(half_width),
            DistSpec::Tabulated { x, density } => Ok(Self::Tabulated(Tabulated::new(x, density)?)),
        }
    }
}

impl From<ErrorDistribution> for DistSpec {
    fn from(d: ErrorDistribution) -> Self {
        match d {
            ErrorDistribution::Normal { precision } => DistSpec::Normal { precision },
            ErrorDistribution::Uniform { half_width } => DistSpec::Uniform { half_width },
            ErrorDistribution::Tabulated(t) => {
                // Normalised values re-normalise to themselves.
                DistSpec::Tabulated {
                    x: t.x,
                    density: t.density,
                }
            }
        }
    }
}

impl ErrorDistribution {
    pub fn normal(precision: f64) -> Result<Self> {
        if !(precision.is_finite() && precision > 0.0) {
            return Err(Error::domain(format!(
                "normal precision must be positive and finite, got {precision}"
            )));
        }
        Ok(Self::Normal { precision })
    }

    pub fn uniform(half_width: f64) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::domain(format!(
                "uniform half-width must be positive and finite, got {half_width}"
            )));
        }
        Ok(Self::Uniform { half_width })
    }

    pub fn tabulated(x: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        Ok(Self::Tabulated(Tabulated::new(x, density)?))
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            Self::Normal { .. } | Self::Uniform { .. } => true,
            Self::Tabulated(t) => t.symmetric,
        }
    }

    /// Closed support; unbounded ends are infinite.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Self::Uniform { half_width } => (-half_width, *half_width),
            Self::Tabulated(t) => (t.x[0], t.x[t.x.len() - 1]),
        }
    }

    pub fn std_dev(&self) -> f64 {
        match self {
            Self::Normal { precision } => 1.0 / precision.sqrt(),
            Self::Uniform { half_width } => half_width / 3f64.sqrt(),
            Self::Tabulated(t) => {
                let n = t.x.len();
                let mean = t.partial_mean(t.x[0], t.x[n - 1]);
                (t.second_moment() - mean * mean).max(0.0).sqrt()
            }
        }
    }

    /// Finite window holding the law: its support when bounded, otherwise
    /// `±width_sd` standard deviations.
    pub fn window(&self, width_sd: f64) -> (f64, f64) {
        let (lo, hi) = self.support();
        let w = width_sd * self.std_dev();
        (lo.max(-w), hi.min(w))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::Normal { precision } => {
                let s = precision.sqrt();
                s * normal_pdf(s * x)
            }
            Self::Uniform { half_width } => {
                if x.abs() <= *half_width {
                    0.5 / half_width
                } else {
                    0.0
                }
            }
            Self::Tabulated(t) => t.pdf(x),
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match self {
            Self::Normal { precision } => {
                let s = precision.sqrt();
                s.ln() + normal_ln_pdf(s * x)
            }
            _ => self.pdf(x).ln(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Normal { precision } => normal_cdf(precision.sqrt() * x),
            Self::Uniform { half_width } => ((x + half_width) / (2.0 * half_width)).clamp(0.0, 1.0),
            Self::Tabulated(t) => t.cdf(x),
        }
    }

    /// Survival function `1 - cdf(x)` without cancellation in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        match self {
            Self::Normal { precision } => normal_cdf(-precision.sqrt() * x),
            Self::Uniform { half_width } => ((half_width - x) / (2.0 * half_width)).clamp(0.0, 1.0),
            Self::Tabulated(t) => 1.0 - t.cdf(x),
        }
    }

    pub fn ln_cdf(&self, x: f64) -> f64 {
        match self {
            Self::Normal { precision } => normal_ln_cdf(precision.sqrt() * x),
            _ => self.cdf(x).ln(),
        }
    }

    pub fn ln_sf(&self, x: f64) -> f64 {
        match self {
            Self::Normal { precision } => normal_ln_cdf(-precision.sqrt() * x),
            _ => self.sf(x).ln(),
        }
    }

    /// Probability of `[a, b]`; zero when `b <= a`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        if a >= 0.0 {
            (self.sf(a) - self.sf(b)).max(0.0)
        } else {
            (self.cdf(b) - self.cdf(a)).max(0.0)
        }
    }

    /// `ln` of [`mass_between`](Self::mass_between), accurate when both ends
    /// sit deep in the same tail.
    pub fn ln_mass_between(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return f64::NEG_INFINITY;
        }
        match self {
            Self::Normal { .. } if b <= 0.0 => {
                let (la, lb) = (self.ln_cdf(a), self.ln_cdf(b));
                lb + ln_one_minus_exp(la - lb)
            }
            Self::Normal { .. } if a >= 0.0 => {
                let (la, lb) = (self.ln_sf(a), self.ln_sf(b));
                la + ln_one_minus_exp(lb - la)
            }
            _ => self.mass_between(a, b).ln(),
        }
    }

    /// First partial moment `∫_a^b u f(u) du`.
    pub fn partial_mean(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match self {
            Self::Normal { precision } => {
                let s = precision.sqrt();
                (normal_pdf(s * a) - normal_pdf(s * b)) / s
            }
            Self::Uniform { half_width } => {
                let (a, b) = (a.max(-half_width), b.min(*half_width));
                if b <= a {
                    0.0
                } else {
                    (b * b - a * a) / (4.0 * half_width)
                }
            }
            Self::Tabulated(t) => t.partial_mean(a, b),
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("quantile needs p in (0, 1), got {p}")));
        }
        match self {
            Self::Normal { precision } => Ok(normal_quantile(p)? / precision.sqrt()),
            Self::Uniform { half_width } => Ok(half_width * (2.0 * p - 1.0)),
            Self::Tabulated(t) => {
                let (mut lo, mut hi) = (t.x[0], t.x[t.x.len() - 1]);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if t.cdf(mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }
}

/// `ln(1 - e^x)` for `x <= 0`.
pub(crate) fn ln_one_minus_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln Σ exp(v)` over the finite entries; `-∞` when all are `-∞`.
pub(crate) fn ln_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Adaptive Simpson quadrature settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    /// Absolute tolerance on the whole integral.
    pub tol: f64,
    pub max_depth: u32,
    /// Infinite limits are replaced by `±truncation`.
    pub truncation: f64,
    /// Number of equal panels refined independently.
    pub panels: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_depth: 48,
            truncation: 8.0,
            panels: 16,
        }
    }
}

impl Quadrature {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, lo: f64, hi: f64) -> Result<f64> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::domain(format!("invalid integration limits [{lo}, {hi}]")));
        }
        let lo = if lo.is_infinite() { -self.truncation } else { lo };
        let hi = if hi.is_infinite() { self.truncation } else { hi };
        if hi <= lo {
            return Ok(0.0);
        }
        let panels = self.panels.max(1);
        let width = (hi - lo) / panels as f64;
        let mut state = SimpsonState {
            global_tol: self.tol,
            failed: false,
        };
        let mut total = 0.0;
        for k in 0..panels {
            let a = lo + width * k as f64;
            let b = if k + 1 == panels { hi } else { a + width };
            let m = 0.5 * (a + b);
            let (fa, fm, fb) = (f(a), f(m), f(b));
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            total += state.refine(
                &f,
                [a, m, b],
                [fa, fm, fb],
                whole,
                self.tol / panels as f64,
                self.max_depth,
            );
        }
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "integrand not finite on [{lo}, {hi}]"
            )));
        }
        if state.failed {
            return Err(Error::Integration { partial: total });
        }
        Ok(total)
    }
}

struct SimpsonState {
    global_tol: f64,
    failed: bool,
}

impl SimpsonState {
    fn refine<F: Fn(f64) -> f64>(
        &mut self,
        f: &F,
        [a, m, b]: [f64; 3],
        [fa, fm, fb]: [f64; 3],
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        if depth == 0 || lm <= a || rm >= b {
            // A jump inside a tiny segment is harmless; only a segment whose
            // own error exceeds the global budget counts as a failure.
            if delta.abs() > self.global_tol {
                self.failed = true;
            }
            return left + right + delta / 15.0;
        }
        self.refine(f, [a, lm, m], [fa, flm, fm], left, tol / 2.0, depth - 1)
            + self.refine(f, [m, rm, b], [fm, frm, fb], right, tol / 2.0, depth - 1)
    }
}

/// Adaptive Simpson integral of `f` over `[lo, hi]` to absolute tolerance
/// `tol`. Infinite limits are truncated at `±8`; use [`Quadrature`] to change
/// the truncation for laws that are not unit-scaled.
///
/// ```
/// use coordlab::dist::{integrate, normal_pdf};
///
/// let mass = integrate(normal_pdf, -8.0, 8.0, 1e-10).unwrap();
/// assert!((mass - 1.0).abs() < 1e-10);
/// ```
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    Quadrature::with_tol(tol).integrate(f, lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// erf from its Maclaurin series (|x| <= 3) or the Laplace continued
    /// fraction for erfc (|x| > 3). Independent of libm.
    fn erf_oracle(x: f64) -> f64 {
        let ax = x.abs();
        let v = if ax <= 3.0 {
            let mut term = ax;
            let mut sum = ax;
            let mut n = 0.0;
            loop {
                n += 1.0;
                term *= -ax * ax / n;
                let add = term / (2.0 * n + 1.0);
                sum += add;
                if add.abs() <= 1e-18 * sum.abs() {
                    break;
                }
            }
            2.0 / std::f64::consts::PI.sqrt() * sum
        } else {
            // erfc(x) = exp(-x²)/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
            let mut frac = ax;
            for k in (1..200).rev() {
                frac = ax + (k as f64 / 2.0) / frac;
            }
            1.0 - (-ax * ax).exp() / std::f64::consts::PI.sqrt() / frac
        };
        v.copysign(x)
    }

    fn cdf_oracle(x: f64) -> f64 {
        0.5 * (1.0 + erf_oracle(x / 2f64.sqrt()))
    }

    #[test]
    fn normal_cdf_matches_series_oracle() {
        for i in -600..=600 {
            let x = i as f64 / 100.0;
            let diff = (normal_cdf(x) - cdf_oracle(x)).abs();
            assert!(diff <= 1e-12, "x={x} diff={diff:e}");
        }
    }

    #[test]
    fn normal_cdf_examples() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.3) + normal_cdf(-1.3) - 1.0).abs() < 1e-15);
        let oracle = cdf_oracle(1.6449);
        assert!((oracle - 0.95).abs() < 1e-4);
        assert!((normal_cdf(1.6449) - oracle).abs() < 1e-12);
    }

    #[test]
    fn ln_cdf_is_continuous_across_branch_points() {
        for x in [-20.0f64, 0.0] {
            let below = normal_ln_cdf(x - 1e-9);
            let above = normal_ln_cdf(x + 1e-9);
            assert!((below - above).abs() < 1e-6 * below.abs().max(1.0));
        }
        // deep tail: ln Φ(-40) ≈ -804.608
        let v = normal_ln_cdf(-40.0);
        assert!((v + 804.608_442_013_753_8).abs() < 1e-9, "{v}");
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        let q = normal_quantile(0.8).unwrap();
        assert!((q + normal_quantile(0.2).unwrap()).abs() < 1e-14);
        // bisection against the cdf
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if normal_cdf(mid) < 0.8 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((q - lo).abs() < 1e-10);
        assert!((q - 0.8416).abs() < 1e-4);
    }

    #[test]
    fn quantile_rejects_boundary() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(normal_quantile(p).unwrap_err().is_domain());
        }
    }

    #[test]
    fn integrate_examples() {
        assert!((integrate(|_| 1.0, 0.0, 3.0, 1e-10).unwrap() - 3.0).abs() < 1e-12);
        let mass = integrate(normal_pdf, -8.0, 8.0, 1e-10).unwrap();
        assert!((mass - 1.0).abs() < 1e-10);
        let part = integrate(normal_pdf, 0.0, 1.6449, 1e-10).unwrap();
        assert!((part - (cdf_oracle(1.6449) - 0.5)).abs() < 1e-10);
        assert!((part - 0.45).abs() < 1e-4);
    }

    #[test]
    fn integrate_is_deterministic_and_truncates_infinite_limits() {
        let a = integrate(normal_pdf, f64::NEG_INFINITY, f64::INFINITY, 1e-10).unwrap();
        let b = integrate(normal_pdf, f64::NEG_INFINITY, f64::INFINITY, 1e-10).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!((a - 1.0).abs() < 1e-10);
    }

    #[test]
    fn integrate_reports_failure_with_partial_estimate() {
        let quad = Quadrature {
            tol: 1e-14,
            max_depth: 2,
            ..Quadrature::default()
        };
        match quad.integrate(|x: f64| (50.0 * x).sin().abs(), 0.0, 3.0) {
            Err(Error::Integration { partial }) => assert!(partial > 0.0),
            other => panic!("expected integration failure, got {other:?}"),
        }
    }

    #[test]
    fn uniform_cdf_is_exact_piecewise_linear() {
        let d = ErrorDistribution::uniform(0.4).unwrap();
        assert_eq!(d.cdf(-0.4), 0.0);
        assert_eq!(d.cdf(-3.0), 0.0);
        assert_eq!(d.cdf(0.4), 1.0);
        assert_eq!(d.cdf(7.0), 1.0);
        assert_eq!(d.cdf(0.0), 0.5);
        assert!((d.cdf(0.2) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(ErrorDistribution::normal(0.0).is_err());
        assert!(ErrorDistribution::uniform(-1.0).is_err());
        assert!(ErrorDistribution::tabulated(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(ErrorDistribution::tabulated(vec![0.0, 1.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn config_round_trip() {
        let d: ErrorDistribution =
            serde_json::from_str(r#"{"kind": "normal", "precision": 16.0}"#).unwrap();
        assert_eq!(d, ErrorDistribution::Normal { precision: 16.0 });
        let u: ErrorDistribution =
            serde_json::from_str(r#"{"kind": "uniform", "half_width": 0.4}"#).unwrap();
        assert_eq!(u.support(), (-0.4, 0.4));
        let back: ErrorDistribution =
            serde_json::from_str(&serde_json::to_string(&u).unwrap()).unwrap();
        assert_eq!(back, u);
        assert!(serde_json::from_str::<ErrorDistribution>(r#"{"kind": "normal", "precision": -1}"#)
            .is_err());
    }

    fn laws() -> Vec<ErrorDistribution> {
        vec![
            ErrorDistribution::normal(1.0).unwrap(),
            ErrorDistribution::normal(16.0).unwrap(),
            ErrorDistribution::normal(1e4).unwrap(),
            ErrorDistribution::uniform(0.4).unwrap(),
            ErrorDistribution::tabulated(vec![-1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]).unwrap(),
            ErrorDistribution::tabulated(
                vec![-2.0, -0.5, 0.0, 0.5, 2.0],
                vec![0.1, 0.4, 0.6, 0.4, 0.1],
            )
            .unwrap(),
        ]
    }

    #[test]
    fn densities_integrate_to_one_and_cdfs_are_monotone() {
        for d in laws() {
            let (lo, hi) = d.window(8.0);
            let quad = Quadrature {
                tol: 1e-10,
                ..Quadrature::default()
            };
            let mass = quad.integrate(|x| d.pdf(x), lo, hi).unwrap();
            assert!((mass - 1.0).abs() < 1e-8, "{d:?}: mass {mass}");
            let mut prev = 0.0;
            for i in 0..=10_000 {
                let x = lo + (hi - lo) * i as f64 / 10_000.0;
                let c = d.cdf(x);
                assert!(c >= prev, "{d:?} not monotone at {x}");
                prev = c;
            }
            assert!(d.is_symmetric());
        }
    }

    #[test]
    fn partial_mean_matches_quadrature() {
        for d in laws() {
            let (lo, hi) = d.window(6.0);
            let (a, b) = (lo * 0.3, hi * 0.7);
            let quad = Quadrature::with_tol(1e-12);
            let num = quad.integrate(|x| x * d.pdf(x), a, b).unwrap();
            assert!((d.partial_mean(a, b) - num).abs() < 1e-9, "{d:?}");
        }
    }

    #[test]
    fn ln_mass_between_survives_deep_tails() {
        let d = ErrorDistribution::normal(1e4).unwrap();
        // 40 to 41 standard deviations: underflows in linear scale.
        let v = d.ln_mass_between(0.40, 0.41);
        assert!(v.is_finite() && v < -790.0);
        let w = d.ln_mass_between(-0.41, -0.40);
        assert!((v - w).abs() < 1e-9);
        let mid = d.ln_mass_between(-0.01, 0.01);
        assert!((mid.exp() - (normal_cdf(1.0) - normal_cdf(-1.0))).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn symmetric_laws_reflect(x in -3.0f64..3.0, which in 0usize..6) {
            let d = &laws()[which];
            prop_assert!((d.pdf(-x) - d.pdf(x)).abs() <= 1e-12 * d.pdf(x).max(1.0));
            prop_assert!((d.cdf(-x) - (1.0 - d.cdf(x))).abs() <= 1e-12);
        }

        #[test]
        fn quantile_inverts_cdf(u in 0.001f64..0.999, which in 0usize..6) {
            let d = &laws()[which];
            let (lo, hi) = d.window(6.0);
            let x = lo + (hi - lo) * u;
            let c = d.cdf(x);
            prop_assume!(c > 1e-12 && c < 1.0 - 1e-12 && d.pdf(x) > 1e-6);
            let back = d.quantile(c).unwrap();
            prop_assert!((back - x).abs() < 1e-8 * (hi - lo).max(1.0), "x={} back={}", x, back);
        }

        #[test]
        fn normal_quantile_round_trip(p in 1e-300f64..1.0) {
            prop_assume!(p < 1.0 - 1e-12);
            let q = normal_quantile(p).unwrap();
            prop_assert!((normal_cdf(q) - p).abs() <= 1e-10);
            if p < 0.5 {
                // relative accuracy in the lower tail
                prop_assert!(((normal_cdf(q) - p) / p).abs() < 1e-9);
            }
        }
    }
}
