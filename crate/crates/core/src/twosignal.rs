//! Two private signals: `x = θ + εˣ` about the fundamental and
//! `y = A(θ) + εʸ` about the aggregate attack.
//!
//! Under an improper uniform prior the posterior that the attack succeeds is
//!
//! ```text
//! P(x, y) = ∫ 1[A(θ) > θ] f_x(x-θ) f_y(y-A(θ)) dθ / ∫ f_x(x-θ) f_y(y-A(θ)) dθ
//! ```
//!
//! and an agent attacks when `P ≥ c`. The set Γ of attacking signal pairs
//! induces a new attack function
//! `A'(θ) = ∬_Γ f_x(x-θ) f_y(y-A(θ)) dx dy`; equilibria are fixed points.
//!
//! The θ-integrals use the trapezoid rule on the attack function's grid, split
//! at its jump and at every zero of `A(θ) - θ`, plus exact tails for the
//! constant extrapolation. Γ is classified on an `x × y` grid with two matrix
//! products, its `x`-boundaries are refined against the exact posterior, and
//! changes in its shape between `y` nodes are located by bisection. The outer
//! `y`-integral is done exactly per `y`-piece, with the inner `x`-mass
//! interpolated linearly in `y`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::attack::{AttackFunction, EquilibriumReport, IterateRecord};
use crate::dist::ErrorDistribution;
use crate::error::{Error, Result};
use crate::parallel::{default_workers, ordered_map};

/// Cost and noise laws shared by every two-signal computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameParams {
    pub c: f64,
    pub dist_x: ErrorDistribution,
    pub dist_y: ErrorDistribution,
}

impl GameParams {
    pub fn new(c: f64, dist_x: ErrorDistribution, dist_y: ErrorDistribution) -> Result<Self> {
        let p = Self { c, dist_x, dist_y };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::domain(format!("cost c must lie in (0, 1), got {}", self.c)));
        }
        Ok(())
    }

    fn max_sd(&self) -> f64 {
        self.dist_x.std_dev().max(self.dist_y.std_dev())
    }
}

/// Resolution knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalGrid {
    /// Odd number of θ nodes; the middle node is the jump.
    pub theta_points: usize,
    /// θ grid half-width in units of the larger signal standard deviation.
    pub half_width_sd: f64,
    pub x_points: usize,
    pub y_points: usize,
    /// Signal grids extend this many standard deviations past the θ grid
    /// (or to the support of a bounded law).
    pub window_sd: f64,
    /// Refine Γ boundaries against the exact posterior.
    pub refine: bool,
    /// Threads for per-θ work; 0 picks the default.
    pub workers: usize,
}

impl Default for SignalGrid {
    fn default() -> Self {
        Self {
            theta_points: 2001,
            half_width_sd: 5.0,
            x_points: 1201,
            y_points: 1201,
            window_sd: 6.0,
            refine: true,
            workers: 0,
        }
    }
}

impl SignalGrid {
    fn validate(&self) -> Result<()> {
        if self.theta_points < 3 || self.theta_points % 2 == 0 {
            return Err(Error::domain("theta_points must be odd and at least 3"));
        }
        if self.x_points < 2 || self.y_points < 2 {
            return Err(Error::domain("x_points and y_points must be at least 2"));
        }
        if !(self.half_width_sd >= 5.0 && self.half_width_sd.is_finite()) {
            return Err(Error::domain("half_width_sd must be at least 5"));
        }
        if !(self.window_sd > 0.0 && self.window_sd.is_finite()) {
            return Err(Error::domain("window_sd must be positive"));
        }
        Ok(())
    }

    fn workers(&self) -> usize {
        if self.workers == 0 {
            default_workers()
        } else {
            self.workers
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Streaming `ln Σ exp`.
#[derive(Clone, Copy)]
struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    theta: f64,
    attack: f64,
    ln_weight: f64,
    success: bool,
}

/// The conjectured attack function as seen by the posterior: trapezoid nodes
/// plus the two constant tails.
struct ThetaModel<'a> {
    params: &'a GameParams,
    nodes: Vec<Node>,
    lo: (f64, f64),
    hi: (f64, f64),
}

impl<'a> ThetaModel<'a> {
    fn new(a: &AttackFunction, params: &'a GameParams) -> Self {
        let samples = a.samples();
        // Split the samples into the two sides of the jump.
        let split = a.jump_index().map(|j| j + 1);
        let sides: Vec<&[(f64, f64)]> = match split {
            Some(s) => vec![&samples[..s], &samples[s..]],
            None => vec![&samples[..]],
        };
        let mut nodes: Vec<Node> = Vec::with_capacity(samples.len() + 8);
        let mut push = |theta: f64, attack: f64, w: f64, success: bool| {
            if let Some(last) = nodes.last_mut() {
                if last.theta == theta && last.attack == attack && last.success == success {
                    last.ln_weight = (last.ln_weight.exp() + w).ln();
                    return;
                }
            }
            nodes.push(Node {
                theta,
                attack,
                ln_weight: w.ln(),
                success,
            });
        };
        for side in sides {
            for seg in side.windows(2) {
                let ((t0, a0), (t1, a1)) = (seg[0], seg[1]);
                let (d0, d1) = (a0 - t0, a1 - t1);
                let mut cuts = vec![(t0, a0, d0)];
                if d0 * d1 < 0.0 {
                    let s = t0 + d0 / (d0 - d1) * (t1 - t0);
                    cuts.push((s, s, 0.0));
                }
                cuts.push((t1, a1, d1));
                for w in cuts.windows(2) {
                    let ((ta, aa, da), (tb, ab, db)) = (w[0], w[1]);
                    let h = tb - ta;
                    if h <= 0.0 {
                        continue;
                    }
                    let success = da + db > 0.0;
                    push(ta, aa, 0.5 * h, success);
                    push(tb, ab, 0.5 * h, success);
                }
            }
        }
        let first = samples[0];
        let last = samples[samples.len() - 1];
        Self {
            params,
            nodes,
            lo: first,
            hi: last,
        }
    }

    /// Columns are the nodes followed by the left and right tails.
    fn columns(&self) -> usize {
        self.nodes.len() + 2
    }

    fn column_attack(&self, k: usize) -> f64 {
        match k.checked_sub(self.nodes.len()) {
            None => self.nodes[k].attack,
            Some(0) => self.lo.1,
            Some(_) => self.hi.1,
        }
    }

    /// `(ln den, ln num)` contributions of column `k` at signal `x`, before the
    /// `f_y` factor.
    fn ln_x_term(&self, k: usize, x: f64) -> (f64, f64) {
        let dx = &self.params.dist_x;
        match k.checked_sub(self.nodes.len()) {
            None => {
                let n = &self.nodes[k];
                let v = n.ln_weight + dx.ln_pdf(x - n.theta);
                (v, if n.success { v } else { f64::NEG_INFINITY })
            }
            Some(0) => {
                let (t, a) = self.lo;
                (dx.ln_sf(x - t), dx.ln_sf(x - t.min(a)))
            }
            Some(_) => {
                let (t, a) = self.hi;
                let num = if a > t {
                    dx.ln_mass_between(x - a, x - t)
                } else {
                    f64::NEG_INFINITY
                };
                (dx.ln_cdf(x - t), num)
            }
        }
    }

    fn ln_fy(&self, y: f64) -> Vec<f64> {
        (0..self.columns())
            .map(|k| self.params.dist_y.ln_pdf(y - self.column_attack(k)))
            .collect()
    }

    /// `(ln num, ln den)` of the success posterior.
    fn ln_posterior(&self, x: f64, ln_fy: &[f64]) -> (f64, f64) {
        let (mut num, mut den) = (LogSum::new(), LogSum::new());
        for (k, &g) in ln_fy.iter().enumerate() {
            if g == f64::NEG_INFINITY {
                continue;
            }
            let (d, n) = self.ln_x_term(k, x);
            den.add(d + g);
            num.add(n + g);
        }
        (num.value(), den.value())
    }

    /// `P - c`, with impossible signals scored as non-attack.
    fn excess(&self, x: f64, ln_fy: &[f64]) -> f64 {
        let (n, d) = self.ln_posterior(x, ln_fy);
        if d == f64::NEG_INFINITY || d.is_nan() {
            return -self.params.c;
        }
        (n - d).exp() - self.params.c
    }
}

/// Posterior probability of success given signals `(x, y)` under the
/// conjecture `a`; `None` for signals the conjecture cannot produce.
pub fn posterior_success(a: &AttackFunction, params: &GameParams, x: f64, y: f64) -> Option<f64> {
    let model = ThetaModel::new(a, params);
    let (n, d) = model.ln_posterior(x, &model.ln_fy(y));
    (d > f64::NEG_INFINITY).then(|| (n - d).exp().clamp(0.0, 1.0))
}

/// Γ restricted to one band of `y`. Each end carries its own list of
/// `x`-intervals; in between, the `x`-mass is interpolated linearly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YPiece {
    pub lo: f64,
    pub hi: f64,
    pub at_lo: Vec<(f64, f64)>,
    pub at_hi: Vec<(f64, f64)>,
}

/// Signal pairs that attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSet {
    pub pieces: Vec<YPiece>,
    /// Γ below the first piece and above the last.
    pub below: Vec<(f64, f64)>,
    pub above: Vec<(f64, f64)>,
}

fn x_mass(intervals: &[(f64, f64)], theta: f64, dx: &ErrorDistribution) -> f64 {
    intervals
        .iter()
        .map(|&(a, b)| dx.mass_between(a - theta, b - theta))
        .sum()
}

fn inside(intervals: &[(f64, f64)], x: f64) -> bool {
    intervals.iter().any(|&(a, b)| x >= a && x <= b)
}

impl AttackSet {
    /// Whether an agent with signals `(x, y)` attacks.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (first, last) = (&self.pieces[0], &self.pieces[self.pieces.len() - 1]);
        if y < first.lo {
            return inside(&self.below, x);
        }
        if y > last.hi {
            return inside(&self.above, x);
        }
        let k = self.pieces.partition_point(|p| p.hi < y).min(self.pieces.len() - 1);
        let p = &self.pieces[k];
        let u = if p.hi > p.lo { (y - p.lo) / (p.hi - p.lo) } else { 0.0 };
        if p.at_lo.len() != p.at_hi.len() {
            return inside(if u < 0.5 { &p.at_lo } else { &p.at_hi }, x);
        }
        let lerp = |a: f64, b: f64| {
            if a.is_finite() && b.is_finite() {
                a + (b - a) * u
            } else if u < 0.5 {
                a
            } else {
                b
            }
        };
        p.at_lo
            .iter()
            .zip(&p.at_hi)
            .any(|(&(a0, b0), &(a1, b1))| x >= lerp(a0, a1) && x <= lerp(b0, b1))
    }

    /// `∬_Γ f_x(x-θ) f_y(y-A) dx dy`: the attack mass at fundamental `theta`
    /// when the signal about the attack is centred at `attack`.
    pub fn induced_attack(&self, theta: f64, attack: f64, params: &GameParams) -> f64 {
        let (dx, dy) = (&params.dist_x, &params.dist_y);
        let (wl, wh) = dy.window(12.0);
        let (ylo, yhi) = (attack + wl, attack + wh);
        let first = self.pieces[0].lo;
        let last = self.pieces[self.pieces.len() - 1].hi;
        let mut total = 0.0;
        if ylo < first {
            let m = dy.cdf(first - attack);
            if m > 0.0 {
                total += m * x_mass(&self.below, theta, dx);
            }
        }
        if yhi > last {
            let m = dy.sf(last - attack);
            if m > 0.0 {
                total += m * x_mass(&self.above, theta, dx);
            }
        }
        let start = self.pieces.partition_point(|p| p.hi <= ylo);
        for p in self.pieces[start..].iter().take_while(|p| p.lo < yhi) {
            let (a, b) = (p.lo - attack, p.hi - attack);
            let m0 = dy.mass_between(a, b);
            if m0 == 0.0 {
                continue;
            }
            let i_lo = x_mass(&p.at_lo, theta, dx);
            let i_hi = x_mass(&p.at_hi, theta, dx);
            total += i_lo * m0;
            if i_hi != i_lo {
                // ∫ (y - lo) f_y(y - A) dy over the piece.
                let m1 = dy.partial_mean(a, b) - a * m0;
                total += (i_hi - i_lo) / (p.hi - p.lo) * m1;
            }
        }
        total.clamp(0.0, 1.0)
    }
}

type Signature = (usize, bool, bool);

fn runs(bits: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &b) in bits.iter().enumerate() {
        match (b, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, bits.len() - 1));
    }
    out
}

fn signature(bits: &[bool]) -> Signature {
    (runs(bits).len(), bits[0], bits[bits.len() - 1])
}

/// Boundary of `{g ≥ 0}` between `a` and `b`, where `g` changes sign.
/// Illinois false position with a bisection safeguard.
fn refine_boundary(g: impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut ga: f64, mut gb: f64) -> f64 {
    let tol = 1e-12 * (1.0 + a.abs().max(b.abs()));
    let mut side = 0i8;
    for step in 0..80 {
        if b - a <= tol {
            break;
        }
        let mut m = (a * gb - b * ga) / (gb - ga);
        if step % 4 == 3 || !(m > a && m < b) {
            m = 0.5 * (a + b);
        }
        let gm = g(m);
        if (gm >= 0.0) == (ga >= 0.0) {
            a = m;
            ga = gm;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = m;
            gb = gm;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (a + b)
}

struct Classifier<'a> {
    model: ThetaModel<'a>,
    xs: Vec<f64>,
    fx: Array2<f64>,
    fxs: Array2<f64>,
    refine: bool,
}

impl<'a> Classifier<'a> {
    fn new(a: &AttackFunction, params: &'a GameParams, grid: &SignalGrid) -> Self {
        let model = ThetaModel::new(a, params);
        let (wl, wh) = params.dist_x.window(grid.window_sd);
        let xs = linspace(a.lo() + wl, a.hi() + wh, grid.x_points);
        let kc = model.columns();
        let mut fx = Array2::<f64>::zeros((xs.len(), kc));
        let mut fxs = Array2::<f64>::zeros((xs.len(), kc));
        let mut terms = vec![(0.0, 0.0); kc];
        for (i, &x) in xs.iter().enumerate() {
            let mut scale = f64::NEG_INFINITY;
            for (k, t) in terms.iter_mut().enumerate() {
                *t = model.ln_x_term(k, x);
                scale = scale.max(t.0);
            }
            if scale == f64::NEG_INFINITY {
                continue;
            }
            for (k, &(d, n)) in terms.iter().enumerate() {
                fx[[i, k]] = (d - scale).exp();
                fxs[[i, k]] = (n - scale).exp();
            }
        }
        Self {
            model,
            xs,
            fx,
            fxs,
            refine: grid.refine,
        }
    }

    fn fy_column(&self, y: f64) -> Array1<f64> {
        let ln = self.model.ln_fy(y);
        let scale = ln.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if scale == f64::NEG_INFINITY {
            return Array1::zeros(ln.len());
        }
        ln.iter().map(|v| (v - scale).exp()).collect()
    }

    fn classify(&self, num: f64, den: f64) -> (bool, f64) {
        if den > 0.0 {
            let p = num / den;
            (num >= self.model.params.c * den, p)
        } else {
            (false, f64::NAN)
        }
    }

    /// Attack flags and matrix posteriors on the `x` grid at one `y`.
    fn column(&self, y: f64) -> Result<(Vec<bool>, Vec<f64>)> {
        let g = self.fy_column(y);
        let num = self.fxs.dot(&g);
        let den = self.fx.dot(&g);
        let mut bits = Vec::with_capacity(self.xs.len());
        let mut post = Vec::with_capacity(self.xs.len());
        for i in 0..self.xs.len() {
            if num[i].is_nan() || den[i].is_nan() {
                return Err(Error::Numerical(format!(
                    "posterior undefined at signal pair (x={}, y={y})",
                    self.xs[i]
                )));
            }
            let (b, p) = self.classify(num[i], den[i]);
            bits.push(b);
            post.push(p);
        }
        Ok((bits, post))
    }

    fn intervals(&self, y: f64, bits: &[bool], post: &[f64]) -> Vec<(f64, f64)> {
        let ln_fy = self.model.ln_fy(y);
        let c = self.model.params.c;
        let boundary = |i: usize| -> f64 {
            // Sign change of P - c between xs[i] and xs[i + 1].
            let (xa, xb) = (self.xs[i], self.xs[i + 1]);
            let (pa, pb) = (post[i] - c, post[i + 1] - c);
            let fallback = if pa.is_finite() && pb.is_finite() && pa != pb {
                (xa + (xb - xa) * pa / (pa - pb)).clamp(xa, xb)
            } else {
                0.5 * (xa + xb)
            };
            if !self.refine {
                return fallback;
            }
            let g = |x: f64| self.model.excess(x, &ln_fy);
            let (ga, gb) = (g(xa), g(xb));
            if (ga >= 0.0) == (gb >= 0.0) {
                return fallback;
            }
            refine_boundary(g, xa, xb, ga, gb)
        };
        let last = self.xs.len() - 1;
        runs(bits)
            .into_iter()
            .map(|(s, e)| {
                let a = if s == 0 { f64::NEG_INFINITY } else { boundary(s - 1) };
                let b = if e == last { f64::INFINITY } else { boundary(e) };
                (a, b)
            })
            .collect()
    }

    /// Γ as `y`-pieces between consecutive grid nodes, split where its shape
    /// changes.
    fn attack_set(&self, ys: &[f64]) -> Result<AttackSet> {
        let mut g = Array2::<f64>::zeros((self.model.columns(), ys.len()));
        for (j, &y) in ys.iter().enumerate() {
            g.column_mut(j).assign(&self.fy_column(y));
        }
        let num = self.fxs.dot(&g);
        let den = self.fx.dot(&g);
        let mut columns = Vec::with_capacity(ys.len());
        for j in 0..ys.len() {
            let mut bits = Vec::with_capacity(self.xs.len());
            let mut post = Vec::with_capacity(self.xs.len());
            for i in 0..self.xs.len() {
                let (n, d) = (num[[i, j]], den[[i, j]]);
                if n.is_nan() || d.is_nan() {
                    return Err(Error::Numerical(format!(
                        "posterior undefined at signal pair (x={}, y={})",
                        self.xs[i], ys[j]
                    )));
                }
                let (b, p) = self.classify(n, d);
                bits.push(b);
                post.push(p);
            }
            columns.push((bits, post));
        }
        let node_intervals: Vec<Vec<(f64, f64)>> = ys
            .iter()
            .zip(&columns)
            .map(|(&y, (bits, post))| self.intervals(y, bits, post))
            .collect();

        let mut pieces = Vec::with_capacity(ys.len());
        for j in 0..ys.len() - 1 {
            let target = signature(&columns[j + 1].0);
            let mut cur_y = ys[j];
            let mut cur_bits = columns[j].0.clone();
            let mut cur_int = node_intervals[j].clone();
            let mut guard = 0;
            while signature(&cur_bits) != target && guard < 8 {
                guard += 1;
                let s0 = signature(&cur_bits);
                let (mut lo, mut hi) = (cur_y, ys[j + 1]);
                let (mut lo_col, mut hi_col) = ((cur_bits.clone(), Vec::new()), columns[j + 1].clone());
                let mut lo_fresh = false;
                while hi - lo > 1e-12 * (1.0 + hi.abs()) {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    let col = self.column(mid)?;
                    if signature(&col.0) == s0 {
                        lo = mid;
                        lo_col = col;
                        lo_fresh = true;
                    } else {
                        hi = mid;
                        hi_col = col;
                    }
                }
                let lo_int = if lo_fresh {
                    self.intervals(lo, &lo_col.0, &lo_col.1)
                } else {
                    cur_int.clone()
                };
                if lo > cur_y {
                    pieces.push(YPiece {
                        lo: cur_y,
                        hi: lo,
                        at_lo: cur_int,
                        at_hi: lo_int,
                    });
                }
                cur_y = lo;
                cur_int = self.intervals(hi, &hi_col.0, &hi_col.1);
                cur_bits = hi_col.0;
            }
            pieces.push(YPiece {
                lo: cur_y,
                hi: ys[j + 1],
                at_lo: cur_int,
                at_hi: node_intervals[j + 1].clone(),
            });
        }
        Ok(AttackSet {
            below: node_intervals[0].clone(),
            above: node_intervals[ys.len() - 1].clone(),
            pieces,
        })
    }
}

/// Γ for the conjecture `a`.
pub fn attack_set(a: &AttackFunction, params: &GameParams, grid: &SignalGrid) -> Result<AttackSet> {
    params.validate()?;
    grid.validate()?;
    let classifier = Classifier::new(a, params, grid);
    let (amin, amax) = a
        .samples()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| (lo.min(v), hi.max(v)));
    let (wl, wh) = params.dist_y.window(grid.window_sd);
    let ys = linspace(amin + wl, amax + wh, grid.y_points);
    classifier.attack_set(&ys)
}

/// Attack function induced by best responses to `a`, on `a`'s grid.
fn respond(a: &AttackFunction, params: &GameParams, grid: &SignalGrid) -> Result<AttackFunction> {
    let set = attack_set(a, params, grid)?;
    let samples = a.samples();
    let induced = ordered_map(&samples, grid.workers(), |&(theta, attack)| {
        set.induced_attack(theta, attack, params)
    });
    match a.jump_index() {
        Some(j) => {
            let mut values = induced.clone();
            let left = values.remove(j);
            a.with_values(values, Some(left))
        }
        None => a.with_values(induced, None),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub theta: f64,
    pub attack: f64,
    pub induced: f64,
    pub residual: f64,
    /// Row for the left limit at the jump.
    pub left_limit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
    pub max_residual: f64,
    pub worst_theta: f64,
    pub tol: f64,
    pub passed: bool,
}

impl ConsistencyReport {
    /// Largest residual over rows with `theta` in `[lo, hi]`.
    pub fn max_residual_on(&self, lo: f64, hi: f64) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.theta >= lo && r.theta <= hi)
            .map(|r| r.residual)
            .fold(0.0, f64::max)
    }
}

/// Compares `a` with the attack it induces, node by node (both limits at the
/// jump).
pub fn verify_consistency(
    a: &AttackFunction,
    params: &GameParams,
    grid: &SignalGrid,
    tol: f64,
) -> Result<ConsistencyReport> {
    let induced = respond(a, params, grid)?;
    let jump = a.jump_index().map(|j| a.theta()[j]);
    let mut seen_jump = false;
    let rows: Vec<ConsistencyRow> = a
        .samples()
        .into_iter()
        .zip(induced.samples())
        .map(|((theta, attack), (_, new))| {
            let left_limit = Some(theta) == jump && !seen_jump;
            if left_limit {
                seen_jump = true;
            }
            ConsistencyRow {
                theta,
                attack,
                induced: new,
                residual: (attack - new).abs(),
                left_limit,
            }
        })
        .collect();
    let (worst_theta, max_residual) = rows
        .iter()
        .fold((f64::NAN, 0.0), |(t, m), r| if r.residual > m { (r.theta, r.residual) } else { (t, m) });
    Ok(ConsistencyReport {
        passed: max_residual <= tol,
        rows,
        max_residual,
        worst_theta,
        tol,
    })
}

/// Half-width used by [`build_step_equilibrium`].
pub const STEP_HALF_WIDTH: f64 = 2.0;

/// Indicator step `A(θ) = 1` for `θ < t`, `0` otherwise, which is an
/// equilibrium whenever the action noise is bounded by `σ < 1/2`: signals
/// `y` then fall above or below `1/2` according to the side of `t`.
///
/// ```
/// use coordlab::twosignal::build_step_equilibrium;
///
/// let a = build_step_equilibrium(0.5, 0.4).unwrap();
/// assert_eq!(a.eval(0.2), 1.0);
/// assert_eq!(a.eval(0.5), 0.0);
/// assert!(build_step_equilibrium(0.5, 0.6).unwrap_err().is_domain());
/// ```
pub fn build_step_equilibrium(t: f64, sigma: f64) -> Result<AttackFunction> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(format!("step location t must lie in [0, 1], got {t}")));
    }
    if !(sigma > 0.0 && sigma < 0.5) {
        return Err(Error::domain(format!(
            "bounded action noise needs 0 < sigma < 1/2, got {sigma}"
        )));
    }
    AttackFunction::step(t, 1.0, 0.0, STEP_HALF_WIDTH, SignalGrid::default().theta_points)
}

/// Parameters of the sufficient conditions for the iterated equilibria.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoSignalParams {
    pub delta: f64,
    pub gamma: f64,
    pub xi: f64,
    pub c: f64,
    pub dist_x: ErrorDistribution,
    pub dist_y: ErrorDistribution,
}

impl TwoSignalParams {
    /// `δ = 0.2`, `γ = 0.1`, `ξ = 1`, `c = 1/2`, unit-precision `x` noise and
    /// precision `10⁴` for `y`.
    pub fn example() -> Self {
        Self {
            delta: 0.2,
            gamma: 0.1,
            xi: 1.0,
            c: 0.5,
            dist_x: ErrorDistribution::Normal { precision: 1.0 },
            dist_y: ErrorDistribution::Normal { precision: 1e4 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Self { delta, gamma, xi, c, .. } = *self;
        if !(delta > 0.0 && gamma > 0.0 && xi > 0.0) {
            return Err(Error::domain("delta, gamma and xi must be positive"));
        }
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::domain(format!("cost c must lie in (0, 1), got {c}")));
        }
        if 1.0 - delta < gamma {
            return Err(Error::domain("side condition 1 - delta >= gamma fails"));
        }
        if 1.0 <= 3.0 * delta + 2.0 * gamma {
            return Err(Error::domain("side condition 1 > 3 delta + 2 gamma fails"));
        }
        if !(self.dist_x.is_symmetric() && self.dist_y.is_symmetric()) {
            return Err(Error::domain("signal noise laws must be symmetric"));
        }
        Ok(())
    }

    pub fn game(&self) -> GameParams {
        GameParams {
            c: self.c,
            dist_x: self.dist_x.clone(),
            dist_y: self.dist_y.clone(),
        }
    }

    /// Admissible jump locations `[δ + γ, 1 - δ - γ]`.
    pub fn t_range(&self) -> (f64, f64) {
        (self.delta + self.gamma, 1.0 - self.delta - self.gamma)
    }

    /// Default upper end of the `η` scan for the odds condition.
    pub fn default_eta_max(&self) -> f64 {
        1.0 + 10.0 * self.dist_y.std_dev()
    }
}

/// Resolution of the condition scans.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionGrid {
    pub eta_points: usize,
    pub a_points: usize,
}

impl Default for ConditionGrid {
    fn default() -> Self {
        Self {
            eta_points: 2001,
            a_points: 201,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSignalCheck {
    /// `ln((1-c)/c) - max_η ln(LHS)`; non-negative when the odds bound holds.
    pub odds_margin: f64,
    /// `F_x(ξ) F_y(γ) - (1 - δ)`.
    pub mass_margin: f64,
    pub satisfied: bool,
    /// `η` at which the odds bound is tightest.
    pub worst_eta: f64,
    pub eta_max: f64,
    /// Whether the scanned left-hand side is nonincreasing near `eta_max`,
    /// which suggests the bound keeps holding beyond the scan.
    pub tail_monotone: bool,
}

/// `ln` of the sup/inf density ratio, with `0/0` read as no evidence.
pub(crate) fn ln_density_ratio(sup: f64, inf: f64) -> f64 {
    match (sup == f64::NEG_INFINITY, inf == f64::NEG_INFINITY) {
        (true, _) => f64::NEG_INFINITY,
        (false, true) => f64::INFINITY,
        _ => sup - inf,
    }
}

pub(crate) fn sub_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo, hi, n.max(2))
}

/// Evaluates the odds condition over an `η` grid on `[1-δ-γ, eta_max]` and
/// the mass condition directly.
pub fn check_two_signal_conditions(
    p: &TwoSignalParams,
    eta_max: f64,
    grid: &ConditionGrid,
) -> Result<TwoSignalCheck> {
    p.validate()?;
    let eta_min = 1.0 - p.delta - p.gamma;
    if !(eta_max >= eta_min) {
        return Err(Error::domain(format!(
            "eta_max {eta_max} is below 1 - delta - gamma = {eta_min}"
        )));
    }
    let (dx, dy) = (&p.dist_x, &p.dist_y);
    let ln_x_odds = dx.ln_cdf(p.xi) - dx.ln_sf(p.xi);
    let low_a = sub_grid(0.0, p.delta, grid.a_points);
    let high_a = sub_grid(1.0 - p.delta, 1.0, grid.a_points);
    let etas = sub_grid(eta_min, eta_max, grid.eta_points);
    let lhs: Vec<f64> = etas
        .iter()
        .map(|&eta| {
            let sup = low_a
                .iter()
                .map(|&a| dy.ln_pdf(eta - a))
                .fold(f64::NEG_INFINITY, f64::max);
            let inf = high_a
                .iter()
                .map(|&a| dy.ln_pdf(eta - a))
                .fold(f64::INFINITY, f64::min);
            ln_x_odds + ln_density_ratio(sup, inf)
        })
        .collect();
    let (worst_idx, worst) = lhs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let tail_start = lhs.len() - (lhs.len() / 10).max(2);
    let tail_monotone = lhs[tail_start..].windows(2).all(|w| w[1] <= w[0] || w[1] == w[0]);
    let odds_margin = ((1.0 - p.c) / p.c).ln() - worst;
    let mass_margin = dx.cdf(p.xi) * dy.cdf(p.gamma) - (1.0 - p.delta);
    Ok(TwoSignalCheck {
        satisfied: odds_margin >= 0.0 && mass_margin >= 0.0,
        odds_margin,
        mass_margin,
        worst_eta: etas[worst_idx],
        eta_max,
        tail_monotone,
    })
}

fn check_bounds(a: &AttackFunction, t: f64, delta: f64, what: &str) -> Result<()> {
    match a.bounds_violation(t, delta) {
        None => Ok(()),
        Some((theta, v)) => Err(Error::InvariantViolation(format!(
            "{what} leaves the [1-delta, 1] / [0, delta] band at theta={theta} (A={v})"
        ))),
    }
}

/// Starting conjecture: `1 - δ` left of `t`, `δ` from `t` on.
pub fn initial_step(t: f64, p: &TwoSignalParams, grid: &SignalGrid) -> Result<AttackFunction> {
    let half_width = grid.half_width_sd * p.game().max_sd();
    AttackFunction::step(t, 1.0 - p.delta, p.delta, half_width, grid.theta_points)
}

/// One best response. Input and output must stay in the `δ` band around the
/// step at `t`.
pub fn best_response(
    a_n: &AttackFunction,
    p: &TwoSignalParams,
    t: f64,
    grid: &SignalGrid,
) -> Result<AttackFunction> {
    p.validate()?;
    if let Some((theta, v)) = a_n.bounds_violation(t, p.delta) {
        return Err(Error::domain(format!(
            "conjecture leaves the delta band at theta={theta} (A={v})"
        )));
    }
    let next = respond(a_n, &p.game(), grid)?;
    check_bounds(&next, t, p.delta, "best response")?;
    Ok(next)
}

/// Iterates best responses from the initial step until the sup-norm change
/// drops below `sup_tol`, returning the report even without convergence.
pub fn run_iteration(
    t: f64,
    p: &TwoSignalParams,
    max_iter: usize,
    sup_tol: f64,
    grid: &SignalGrid,
) -> Result<EquilibriumReport> {
    p.validate()?;
    grid.validate()?;
    let (lo, hi) = p.t_range();
    if !(t >= lo && t <= hi) {
        return Err(Error::domain(format!("t={t} outside the admissible range [{lo}, {hi}]")));
    }
    let check = check_two_signal_conditions(p, p.default_eta_max(), &ConditionGrid::default())?;
    if !check.satisfied {
        return Err(Error::domain(format!(
            "sufficient conditions fail (odds margin {:e}, mass margin {:e})",
            check.odds_margin, check.mass_margin
        )));
    }
    let mut current = initial_step(t, p, grid)?;
    let mut records = Vec::new();
    let mut converged = false;
    for n in 1..=max_iter {
        let next = best_response(&current, p, t, grid)?;
        let delta = next.sup_distance(&current);
        records.push(IterateRecord::new(n, delta, &next, None));
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

/// [`run_iteration`], failing with a convergence error (carrying the deltas)
/// when `max_iter` is exhausted.
pub fn iterate_to_equilibrium(
    t: f64,
    p: &TwoSignalParams,
    max_iter: usize,
    sup_tol: f64,
    grid: &SignalGrid,
) -> Result<EquilibriumReport> {
    run_iteration(t, p, max_iter, sup_tol, grid)?.into_result()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Quadrature;

    fn coarse() -> SignalGrid {
        SignalGrid {
            theta_points: 401,
            x_points: 241,
            y_points: 241,
            workers: 1,
            ..SignalGrid::default()
        }
    }

    fn step_game(sigma: f64, c: f64) -> GameParams {
        GameParams::new(
            c,
            ErrorDistribution::normal(1.0).unwrap(),
            ErrorDistribution::uniform(sigma).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn step_is_exact_with_small_noise() {
        let a = build_step_equilibrium(0.5, 0.4).unwrap();
        let r = verify_consistency(&a, &step_game(0.4, 0.5), &coarse(), 1e-10).unwrap();
        assert!(r.passed, "max residual {:e} at {}", r.max_residual, r.worst_theta);
    }

    #[test]
    fn step_fails_with_overlapping_noise() {
        assert!(build_step_equilibrium(0.5, 0.6).unwrap_err().is_domain());
        let a = AttackFunction::step(0.5, 1.0, 0.0, STEP_HALF_WIDTH, 401).unwrap();
        let r = verify_consistency(&a, &step_game(0.6, 0.5), &coarse(), 1e-10).unwrap();
        assert!(r.max_residual_on(0.3, 0.7) > 0.01);
        // Overlapping action signals hurt most right at the jump.
        assert!((r.worst_theta - 0.5).abs() < 0.2, "worst at {}", r.worst_theta);
    }

    #[test]
    fn degenerate_steps() {
        for (t, v) in [(0.0, 0.0), (1.0, 1.0)] {
            let a = build_step_equilibrium(t, 0.25).unwrap();
            for theta in [0.0, 0.3, 0.7, 0.99] {
                assert_eq!(a.eval(theta), v);
            }
            let r = verify_consistency(&a, &step_game(0.25, 0.5), &coarse(), 1e-10).unwrap();
            assert!(r.max_residual_on(0.0, 1.0) < 1e-10);
        }
    }

    #[test]
    fn no_attack_against_analytic_response() {
        // With A ≡ 0, y carries no information and success means θ < 0, so an
        // agent attacks iff F_x(-x) ≥ c and A'(θ) = F_x(F_x⁻¹(1-c) - θ).
        let dx = ErrorDistribution::normal(1.0).unwrap();
        let params = GameParams::new(0.95, dx.clone(), ErrorDistribution::normal(1.0).unwrap()).unwrap();
        let theta = crate::attack::centered_grid(0.0, 5.0, 2001);
        let a = AttackFunction::new(theta, vec![0.0; 2001]).unwrap();
        let r = verify_consistency(&a, &params, &coarse(), 1e-4).unwrap();
        let q = dx.quantile(0.05).unwrap();
        for row in &r.rows {
            let oracle = dx.cdf(q - row.theta);
            // Trapezoid error in the posterior is about h²/12 max|f_x'| ≈ 4e-7.
            assert!((row.induced - oracle).abs() < 1e-5, "theta={} {} vs {}", row.theta, row.induced, oracle);
        }
        assert!(r.max_residual_on(2.0, 5.0) < 1e-3);
    }

    #[test]
    fn example_conditions() {
        let p = TwoSignalParams::example();
        let check = check_two_signal_conditions(&p, p.default_eta_max(), &ConditionGrid::default()).unwrap();
        assert!(check.satisfied, "{check:?}");
        assert!(check.tail_monotone);
        let weak = TwoSignalParams {
            dist_y: ErrorDistribution::normal(1.0).unwrap(),
            ..p.clone()
        };
        let check = check_two_signal_conditions(&weak, weak.default_eta_max(), &ConditionGrid::default()).unwrap();
        assert!(!check.satisfied);
        assert!(check.mass_margin < 0.0);
        assert!(check_two_signal_conditions(&p, 0.5, &ConditionGrid::default()).unwrap_err().is_domain());
    }

    #[test]
    fn side_conditions() {
        let mut p = TwoSignalParams::example();
        assert!(1.0 > 3.0 * p.delta + 2.0 * p.gamma);
        p.delta = 0.3;
        assert!(p.validate().unwrap_err().is_domain());
    }

    #[test]
    fn posterior_spot_checks_on_initial_step() {
        let p = TwoSignalParams::example();
        let t = 0.5;
        let a = initial_step(t, &p, &coarse()).unwrap();
        let game = p.game();
        for (x, y) in [(t + p.xi, 0.7), (t - 2.0, 0.9), (t + 0.5, 1.2)] {
            assert!(posterior_success(&a, &game, x, y).unwrap() >= p.c);
        }
        for (x, y) in [(t - p.xi, 0.3), (t + 2.0, 0.1), (t - 0.5, -0.2)] {
            assert!(1.0 - posterior_success(&a, &game, x, y).unwrap() >= p.c);
        }
    }

    #[test]
    fn posterior_matches_adaptive_quadrature() {
        // Independent evaluation of both θ-integrals on a smooth conjecture.
        let theta = crate::attack::centered_grid(0.5, 5.0, 801);
        let values: Vec<f64> = theta.iter().map(|&t| 0.2 + 0.6 * crate::dist::normal_cdf(-(t - 0.5) * 3.0)).collect();
        let a = AttackFunction::new(theta, values).unwrap();
        let game = GameParams::new(
            0.5,
            ErrorDistribution::normal(1.0).unwrap(),
            ErrorDistribution::normal(25.0).unwrap(),
        )
        .unwrap();
        let quad = Quadrature { tol: 1e-12, ..Quadrature::default() };
        for (x, y) in [(0.3, 0.5), (1.0, 0.35), (-0.5, 0.7)] {
            let w = |t: f64| game.dist_x.pdf(x - t) * game.dist_y.pdf(y - a.eval(t));
            let den = quad.integrate(w, -30.0, 30.0).unwrap();
            let num = quad
                .integrate(|t| if a.eval(t) > t { w(t) } else { 0.0 }, -30.0, 30.0)
                .unwrap();
            let direct = posterior_success(&a, &game, x, y).unwrap();
            assert!((direct - num / den).abs() < 1e-4, "({x},{y}) {direct} vs {}", num / den);
        }
    }

    #[test]
    fn refine_boundary_finds_root() {
        let r = refine_boundary(|x| 0.3 - x * x, 0.0, 1.0, 0.3, -0.7);
        assert!((r - 0.3f64.sqrt()).abs() < 1e-11);
        let r = refine_boundary(|x| (x - 0.25).signum(), 0.0, 1.0, -1.0, 1.0);
        assert!((r - 0.25).abs() < 1e-11);
    }

    #[test]
    fn runs_and_signature() {
        let bits = [true, true, false, true, false, false, true];
        assert_eq!(runs(&bits), vec![(0, 1), (3, 3), (6, 6)]);
        assert_eq!(signature(&bits), (3, true, true));
    }

    #[test]
    fn best_response_keeps_bounds_and_tightens() {
        let p = TwoSignalParams::example();
        let grid = coarse();
        let a0 = initial_step(0.5, &p, &grid).unwrap();
        let a1 = best_response(&a0, &p, 0.5, &grid).unwrap();
        assert!(a1.bounds_violation(0.5, p.delta).is_none());
        let j = a1.jump().unwrap();
        assert!(j.left > 0.8 && j.right < 0.2);
    }

    #[test]
    fn attack_set_lookup_agrees_with_posterior() {
        let p = TwoSignalParams::example();
        let grid = coarse();
        let a = initial_step(0.5, &p, &grid).unwrap();
        let game = p.game();
        let set = attack_set(&a, &game, &grid).unwrap();
        for (x, y) in [(0.0, 0.8), (3.0, 0.8), (0.5, 0.2), (-3.0, 0.2), (0.2, 0.5), (0.8, 0.5)] {
            let post = posterior_success(&a, &game, x, y).unwrap();
            if (post - game.c).abs() > 1e-3 {
                assert_eq!(set.contains(x, y), post >= game.c, "({x}, {y}) post={post}");
            }
        }
    }

    #[test]
    fn rejects_out_of_range_t() {
        let p = TwoSignalParams::example();
        let err = run_iteration(0.2, &p, 5, 1e-6, &coarse()).unwrap_err();
        assert!(err.is_domain());
    }
}
