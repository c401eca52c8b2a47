//! Invariant curves: the vertical family on the critical region and its
//! first-return graph transform, local stable and unstable manifolds of
//! points of the invariant set, their bracket, and the order of contact at
//! the tangency.
//!
//! Local manifolds are built pointwise. At a node of the graph the point of
//! `W^u_loc(M)` is the one whose backward orbit follows the columns of `M`,
//! the point of `W^s_loc(M)` the one whose forward orbit follows the rows of
//! `M`. Both are found by alternating sweeps (abscissae forward, heights
//! backward) started from the edges of the outermost column or row band,
//! which gives the left/right and lower/upper brackets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basemap::{
    admissible, branch, column_left, row_bottom, Branch, Mapped, Point, RectangleId, Row,
    SymbolWord,
};
use crate::cones::{inverse2, stable_cone, tube_context, unstable_cone};
use crate::critmap::{critical_forward_word, cubic_jacobian, PerturbedMap};
use crate::error::{LabError, Result};
use crate::hyper::line_angle;
use crate::params::ParamSet;
use crate::real::{Real, DD};
use crate::symbolic::Decoded;

pub const CHEB_NODES: usize = 33;
/// Convergence of the manifold brackets, relative to `beta_max` for unstable
/// graphs and to the band height for stable ones.
pub const MANIFOLD_TOL: f64 = 1e-10;
/// Derivatives of the scaled difference curve below this count as zero.
pub const ORDER_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 60;
const SWEEP_TOL: f64 = 1e-30;
const ROOT_ITERS: usize = 300;

/// Chebyshev points of the second kind on `[a, b]`, ascending.
pub fn chebyshev_nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "need at least two nodes");
    (0..n)
        .map(|j| {
            let t = -(std::f64::consts::PI * j as f64 / (n - 1) as f64).cos();
            0.5 * (a + b) + 0.5 * (b - a) * t
        })
        .collect()
}

fn bary_weight(j: usize, n: usize) -> f64 {
    let w = if j % 2 == 0 { 1.0 } else { -1.0 };
    if j == 0 || j == n - 1 {
        0.5 * w
    } else {
        w
    }
}

/// Barycentric interpolation through Chebyshev samples.
pub fn barycentric(nodes: &[f64], values: &[f64], t: f64) -> f64 {
    let n = nodes.len();
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..n {
        let diff = t - nodes[j];
        if diff == 0.0 {
            return values[j];
        }
        let w = bary_weight(j, n) / diff;
        num += w * values[j];
        den += w;
    }
    num / den
}

fn midpoints(nodes: &[f64]) -> Vec<f64> {
    nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn row_of_symbol(s: u8) -> Row {
    RectangleId::new(s).expect("symbols are validated").band()
}

fn col_of_symbol(s: u8) -> u8 {
    RectangleId::new(s).expect("symbols are validated").col()
}

// ---------------------------------------------------------------------------
// The vertical family on the critical region

/// Graph `x(y)` across the critical region, in offsets from the critical
/// point, sampled at Chebyshev nodes of `[-beta_max, beta_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerticalCurve {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub dx: Vec<f64>,
    pub ddx: Vec<f64>,
}

/// Worst values of the family bounds over nodes and midpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyCheck {
    /// Largest `|x'| 6 beta / (3 y^2 + x)`; at most one inside the family.
    pub slope_ratio: f64,
    pub curvature: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub violations: usize,
}

impl FamilyCheck {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

impl VerticalCurve {
    pub fn from_fn(p: &ParamSet, f: impl Fn(f64) -> (f64, f64, f64)) -> VerticalCurve {
        let y = chebyshev_nodes(-p.beta_max, p.beta_max, CHEB_NODES);
        let vals: Vec<_> = y.iter().map(|&t| f(t)).collect();
        VerticalCurve {
            x: vals.iter().map(|v| v.0).collect(),
            dx: vals.iter().map(|v| v.1).collect(),
            ddx: vals.iter().map(|v| v.2).collect(),
            y,
        }
    }

    pub fn left_edge(p: &ParamSet) -> VerticalCurve {
        Self::from_fn(p, |_| (0.0, 0.0, 0.0))
    }

    pub fn right_edge(p: &ParamSet) -> VerticalCurve {
        Self::from_fn(p, |_| (p.alpha_max, 0.0, 0.0))
    }

    /// A random member of the family: `x0 + mu y + gamma y^3 / (6 beta)`,
    /// redrawn until it passes [`VerticalCurve::check`].
    pub fn random(p: &ParamSet, rng: &mut impl Rng) -> VerticalCurve {
        let (a, b) = (p.alpha_max, p.beta_max);
        let gamma_max = 0.5 * (3.0 * a / (b * b)).min(1.0);
        loop {
            let x0 = a * rng.gen_range(0.3..0.7);
            let mu = 0.5 * x0 / (6.0 * b) * rng.gen_range(-1.0..1.0);
            let gamma = gamma_max * rng.gen_range(-1.0..1.0);
            let curve = Self::from_fn(p, |y| {
                (
                    x0 + mu * y + gamma * y.powi(3) / (6.0 * b),
                    mu + gamma * y * y / (2.0 * b),
                    gamma * y / b,
                )
            });
            if curve.check(p).pass() {
                return curve;
            }
        }
    }

    pub fn eval(&self, y: f64) -> (f64, f64, f64) {
        (
            barycentric(&self.y, &self.x, y),
            barycentric(&self.y, &self.dx, y),
            barycentric(&self.y, &self.ddx, y),
        )
    }

    /// Family bounds at every node and every midpoint between nodes.
    pub fn check(&self, p: &ParamSet) -> FamilyCheck {
        let mut out = FamilyCheck {
            slope_ratio: 0.0,
            curvature: 0.0,
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            violations: 0,
        };
        let at_nodes = (0..self.y.len()).map(|j| (self.y[j], self.x[j], self.dx[j], self.ddx[j]));
        let at_mids = midpoints(&self.y).into_iter().map(|t| {
            let (x, dx, ddx) = self.eval(t);
            (t, x, dx, ddx)
        });
        for (y, x, dx, ddx) in at_nodes.chain(at_mids) {
            let room = (3.0 * y * y + x) / (6.0 * p.beta_max);
            let ratio = if dx == 0.0 { 0.0 } else { dx.abs() / room };
            out.slope_ratio = out.slope_ratio.max(ratio);
            out.curvature = out.curvature.max(ddx.abs());
            out.x_min = out.x_min.min(x);
            out.x_max = out.x_max.max(x);
            // interpolation of a constant may round a few ulps outside the region
            let inside = x >= -4.0 * f64::EPSILON * p.alpha_max
                && x <= p.alpha_max * (1.0 + 4.0 * f64::EPSILON);
            if !(ratio <= 1.0 && ddx.abs() <= p.curv_bound && inside) {
                out.violations += 1;
            }
        }
        out
    }

    /// CSV rows `t,x,y,slope` in absolute coordinates, slope `dx/dy`.
    pub fn to_csv(&self, xi2: f64) -> String {
        let mut s = String::from("t,x,y,slope\n");
        for j in 0..self.y.len() {
            s.push_str(&format!(
                "{:e},{:e},{:.17e},{:e}\n",
                self.y[j],
                self.x[j],
                xi2 + self.y[j],
                self.dx[j]
            ));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// First returns to the critical region

/// Symbols forced right after a visit: the visit and the first `k_c + 1`
/// symbols of the critical cycle.
pub fn critical_prefix(p: &ParamSet) -> Vec<u8> {
    critical_forward_word(p.k_c as usize + 2)
}

fn visits_at(p: &ParamSet, word: &[u8], i: usize) -> bool {
    let run = p.n_c as usize;
    word[i] == 4 && i >= run && word[i - run..i].iter().all(|&s| s == 7)
}

/// Accepts `4, <critical prefix>, ..., 7^n_c, 4` with no visit in between.
pub fn is_first_return(p: &ParamSet, word: &[u8]) -> Result<()> {
    let fail = |why: &str| Err(LabError::NotFirstReturn(why.to_string()));
    let prefix = critical_prefix(p);
    if word.iter().any(|&s| !(1..=9).contains(&s)) {
        return fail("symbols must lie in 1..=9");
    }
    if !word.starts_with(&prefix) {
        return fail("does not start with the forced post-critical symbols");
    }
    if word.len() <= prefix.len() || !visits_at(p, word, word.len() - 1) {
        return fail("does not end with the approach run and a visit");
    }
    if let Some(i) = word.windows(2).position(|w| !admissible(w[0], w[1])) {
        return fail(&format!("inadmissible transition at {}", i + 1));
    }
    if (1..word.len() - 1).any(|i| visits_at(p, word, i)) {
        return fail("visits the critical region before the end");
    }
    Ok(())
}

/// Every first-return word with at most `max_free` symbols between the
/// forced prefix and the approach run `7^n_c`.
pub fn first_return_words(p: &ParamSet, max_free: usize) -> Vec<Vec<u8>> {
    let prefix = critical_prefix(p);
    let forced = prefix.len();
    let tail: Vec<u8> = std::iter::repeat_n(7, p.n_c as usize).chain(std::iter::once(4)).collect();
    let mut out = Vec::new();
    let mut stack = vec![prefix];
    while let Some(w) = stack.pop() {
        let free = w.len() - forced;
        let last = *w.last().expect("nonempty");
        if free > 0 && row_of_symbol(last) == Row::Bottom {
            let mut full = w.clone();
            full.extend_from_slice(&tail);
            if is_first_return(p, &full).is_ok() {
                out.push(full);
            }
        }
        if free < max_free {
            for s in (1..=9).rev().filter(|&s| admissible(last, s)) {
                let mut next = w.clone();
                next.push(s);
                stack.push(next);
            }
        }
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

/// Result of one graph transform across a first return.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformOutcome {
    pub curve: VerticalCurve,
    /// Offset `y` on the input curve whose orbit lands on the middle of the
    /// region at the return.
    pub root: f64,
    /// Largest ratio of the two sides of the derivative-bound inequality
    /// over the samples; at most one when it holds.
    pub derivative_ratio: f64,
}

fn linear_branches(p: &ParamSet, symbols: &[u8]) -> Vec<Branch> {
    symbols
        .iter()
        .map(|&s| branch(p, row_of_symbol(s)))
        .collect()
}

/// Image of a curve of the vertical family under the return map coded by
/// `word` (see [`is_first_return`]), restricted to the component crossing
/// the region again.
///
/// The vertical expansion along a return is at least `sigma^(n_c + 4)`, so
/// the preimage of the region on the input curve is an interval of height
/// below `1e-20`. The output is the second-order Taylor expansion of the
/// exact image around its middle, with the derivatives given by the inverse
/// function formulas.
pub fn unstable_graph_transform(
    map: &PerturbedMap,
    curve: &VerticalCurve,
    word: &[u8],
) -> Result<TransformOutcome> {
    let p = &map.params;
    is_first_return(p, word)?;
    let linear = linear_branches(p, &word[1..word.len() - 1]);
    let (b, c, eps, theta) = (p.b, p.c, p.eps1, map.theta);
    let f_xi = map.frame.f_xi;

    // height needed right after the visit to land on the middle of the region
    let mut target = DD::lit(map.frame.xi.y);
    for br in linear.iter().rev() {
        target = br.vertical.invert(target);
    }
    let target = target - DD::lit(f_xi.y);

    let v_of = |y: DD| -> DD {
        let x = DD::lit(curve.eval(y.approx()).0);
        DD::lit(b) * x - DD::lit(c) * y * (y * y + x + DD::lit(theta))
    };
    let beta = p.beta_max;
    let (mut lo, mut hi) = (DD::lit(-beta), DD::lit(beta));
    // v decreases along every curve of the family
    let (v_lo, v_hi) = (v_of(lo), v_of(hi));
    if !(v_hi <= target && target <= v_lo) {
        return Err(LabError::NotFirstReturn(
            "the curve does not reach the return cylinder".into(),
        ));
    }
    let mut y = DD::lit(0.5 * (lo.approx() + hi.approx()));
    for _ in 0..ROOT_ITERS {
        let g = v_of(y) - target;
        if g.approx() == 0.0 {
            break;
        }
        if g > DD::zero() {
            lo = y;
        } else {
            hi = y;
        }
        let (x, dx, _) = curve.eval(y.approx());
        let ya = y.approx();
        let slope = (b - c * ya) * dx - c * (3.0 * ya * ya + x + theta);
        let mut next = y - g / DD::lit(slope);
        if !(next > lo && next < hi) || slope == 0.0 {
            next = (lo + hi) * DD::lit(0.5);
        }
        if (next - y).abs().approx() <= 1e-34 || (hi - lo).approx() <= 1e-34 {
            y = next;
            break;
        }
        y = next;
    }

    let yc = y.approx();
    let (x, dx, ddx) = curve.eval(yc);
    let v1 = (b - c * yc) * dx - c * (3.0 * yc * yc + x + theta);
    let v2 = (b - c * yc) * ddx - 2.0 * c * dx - 6.0 * c * yc;
    let h_scale: f64 = linear.iter().map(|br| br.horizontal.scale).product();
    let v_scale: f64 = linear.iter().map(|br| br.vertical.scale).product();
    let s1 = -h_scale * eps / (v_scale * v1);
    let s2 = h_scale * eps * v2 / (v_scale * v_scale * v1.powi(3));

    let mut xn = DD::lit(f_xi.x) - DD::lit(eps) * y;
    for br in &linear {
        xn = br.horizontal.apply(xn);
    }
    let xc = xn.approx();

    let out = VerticalCurve::from_fn(p, |t| (xc + s1 * t + 0.5 * s2 * t * t, s1 + s2 * t, s2));
    let lhs = 2.0 * h_scale.abs() * eps / (v_scale.abs() * c * (3.0 * yc * yc + x));
    let derivative_ratio = out
        .y
        .iter()
        .zip(&out.x)
        .map(|(&t, &xt)| lhs / ((3.0 * t * t + xt) / (6.0 * beta)))
        .fold(0.0, f64::max);
    Ok(TransformOutcome {
        curve: out,
        root: yc,
        derivative_ratio,
    })
}

// ---------------------------------------------------------------------------
// Nested-cylinder sweeps

/// Height `y` in the band of `row` with `F(x, y).y = target`.
fn preimage_height(map: &PerturbedMap, x: DD, target: DD, row: Row) -> Option<DD> {
    let p = &map.params;
    let g = |y: DD| match map.apply(Point::new(x, y)) {
        Mapped::Point(q) => Some(q.y - target),
        Mapped::Escaped => None,
    };
    let guess = branch(p, row).vertical.invert(target);
    let bottom = DD::lit(row_bottom(p, row));
    if guess >= bottom && guess <= bottom + DD::lit(p.l0) {
        let gg = g(guess)?;
        if gg.abs().approx() <= 1e-32 {
            return Some(guess);
        }
    }
    // the band ends that map onto the bottom and top of the square, where
    // the map is affine; evaluating there would round out of the square
    let br = branch(p, row);
    let (y0, y1) = (br.vertical.invert(DD::zero()), br.vertical.invert(DD::one()));
    let (f0, f1) = (-target, DD::one() - target);
    let (mut a, mut b, mut fa, mut fb) = if y0 < y1 {
        (y0, y1, f0, f1)
    } else {
        (y1, y0, f1, f0)
    };
    if (fa > DD::zero()) == (fb > DD::zero()) {
        return None;
    }
    let mut side = 0i8;
    for i in 0..ROOT_ITERS {
        let mut m = (a * fb - b * fa) / (fb - fa);
        if i % 8 == 7 || !(m > a && m < b) {
            m = (a + b) * DD::lit(0.5);
        }
        let fm = g(m)?;
        if fm.approx() == 0.0 || (b - a).approx() <= 4e-32 {
            return Some(m);
        }
        if (fm > DD::zero()) == (fa > DD::zero()) {
            a = m;
            fa = fm;
            if side == -1 {
                fb = fb * DD::lit(0.5);
            }
            side = -1;
        } else {
            b = m;
            fb = fm;
            if side == 1 {
                fa = fa * DD::lit(0.5);
            }
            side = 1;
        }
    }
    Some((a + b) * DD::lit(0.5))
}

/// Orbit of length `rows.len()` starting at abscissa `x_start`, following
/// the bands `rows[0..n-1]`, with height `y_end` at the last point.
fn sweep(map: &PerturbedMap, x_start: DD, rows: &[Row], y_end: DD) -> Result<Vec<Point<DD>>> {
    let p = &map.params;
    let n = rows.len() - 1;
    let mut xs = vec![x_start; n + 1];
    let mut ys: Vec<DD> = rows
        .iter()
        .map(|&r| DD::lit(row_bottom(p, r) + 0.5 * p.l0))
        .collect();
    ys[n] = y_end;
    for _ in 0..MAX_SWEEPS {
        let mut change = 0.0f64;
        for k in 0..n {
            let next = match map.apply(Point::new(xs[k], ys[k])) {
                Mapped::Point(q) => q.x,
                Mapped::Escaped => return Err(LabError::Escaped(k + 1)),
            };
            change = change.max((next - xs[k + 1]).abs().approx());
            xs[k + 1] = next;
        }
        for k in (0..n).rev() {
            let prev = preimage_height(map, xs[k], ys[k + 1], rows[k])
                .ok_or_else(|| LabError::NoConvergence(format!("no preimage height at step {k}")))?;
            change = change.max((prev - ys[k]).abs().approx());
            ys[k] = prev;
        }
        if change <= SWEEP_TOL {
            return Ok(xs.into_iter().zip(ys).map(|(x, y)| Point::new(x, y)).collect());
        }
    }
    Err(LabError::NoConvergence("manifold sweep".into()))
}

fn step_jacobian(map: &PerturbedMap, pt: Point<DD>) -> Result<[[f64; 2]; 2]> {
    match map.critical_offsets(pt) {
        Some((x, y)) => Ok(cubic_jacobian(&map.params, x.approx(), y.approx(), map.theta)),
        None => map.jacobian(pt.approx()),
    }
}

fn apply2(m: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    let w = [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]];
    let n = w[0].abs().max(w[1].abs());
    [w[0] / n, w[1] / n]
}

/// Tangent of the unstable curve at the last point of `orbit`.
fn unstable_tangent(map: &PerturbedMap, orbit: &[Point<DD>]) -> Result<[f64; 2]> {
    let mut v = [0.0, 1.0];
    for pt in &orbit[..orbit.len() - 1] {
        v = apply2(&step_jacobian(map, *pt)?, v);
    }
    Ok(v)
}

/// Tangent of the stable curve at the first point of `orbit`.
fn stable_tangent(map: &PerturbedMap, orbit: &[Point<DD>]) -> Result<[f64; 2]> {
    let mut v = [1.0, 0.0];
    for pt in orbit[..orbit.len() - 1].iter().rev() {
        v = apply2(&inverse2(&step_jacobian(map, *pt)?), v);
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// Local manifolds

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldKind {
    Unstable,
    Stable,
}

/// Sampled local manifold. Unstable graphs are `x(y)` over `[0, 1]`,
/// stable graphs `y(x)` over `[0, 1]`; `slopes` are `dx/dy` and `dy/dx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalManifold {
    pub kind: ManifoldKind,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Left/right (unstable) or lower/upper (stable) brackets.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Largest bracket width after each depth.
    pub gaps: Vec<f64>,
    /// Band index: the column of an unstable graph or the row of a stable one.
    pub band: u8,
    pub cone_violations: usize,
}

impl LocalManifold {
    pub fn eval(&self, t: f64) -> f64 {
        barycentric(&self.nodes, &self.values, t)
    }

    pub fn point(&self, j: usize) -> Point {
        match self.kind {
            ManifoldKind::Unstable => Point::new(self.values[j], self.nodes[j]),
            ManifoldKind::Stable => Point::new(self.nodes[j], self.values[j]),
        }
    }

    pub fn gap(&self) -> f64 {
        self.gaps.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Whether every sample stays inside its column or row band.
    pub fn within_band(&self, p: &ParamSet) -> bool {
        let (lo, hi) = match self.kind {
            ManifoldKind::Unstable => {
                let l = column_left(p, self.band);
                (l, l + p.l0)
            }
            ManifoldKind::Stable => {
                let row = match self.band {
                    1 => Row::Top,
                    2 => Row::Middle,
                    _ => Row::Bottom,
                };
                let b = row_bottom(p, row);
                (b, b + p.l0)
            }
        };
        self.values.iter().all(|v| (lo..=hi).contains(v))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,x,y,slope\n");
        for j in 0..self.nodes.len() {
            let pt = self.point(j);
            s.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:e}\n",
                self.nodes[j], pt.x, pt.y, self.slopes[j]
            ));
        }
        s
    }
}

fn check_word(word: &SymbolWord) -> Result<()> {
    if word.forward.is_empty() {
        return Err(LabError::Parse("the word needs a current symbol".into()));
    }
    if let Some(i) = word.first_inadmissible() {
        return Err(LabError::Inadmissible(i));
    }
    Ok(())
}

/// Backward bracket at height `y`: `(left, right, orbit from the left edge)`
/// using the last `depth` backward symbols.
fn unstable_at(
    map: &PerturbedMap,
    word: &SymbolWord,
    depth: usize,
    y: DD,
) -> Result<(DD, DD, Vec<Point<DD>>)> {
    let p = &map.params;
    let back = &word.backward[word.backward.len() - depth..];
    let mut rows: Vec<Row> = back.iter().map(|&s| row_of_symbol(s)).collect();
    rows.push(row_of_symbol(word.forward[0]));
    let left = DD::lit(column_left(p, col_of_symbol(back[0])));
    let a = sweep(map, left, &rows, y)?;
    let b = sweep(map, left + DD::lit(p.l0), &rows, y)?;
    let (xa, xb) = (a[depth].x, b[depth].x);
    Ok((xa.min(xb), xa.max(xb), a))
}

/// Forward bracket at abscissa `x`: `(lower, upper, orbit from the bottom
/// edge)` using the first `depth + 1` forward symbols.
fn stable_at(
    map: &PerturbedMap,
    word: &SymbolWord,
    depth: usize,
    x: DD,
) -> Result<(DD, DD, Vec<Point<DD>>)> {
    let p = &map.params;
    let rows: Vec<Row> = word.forward[..=depth]
        .iter()
        .map(|&s| row_of_symbol(s))
        .collect();
    let bottom = DD::lit(row_bottom(p, rows[depth]));
    let a = sweep(map, x, &rows, bottom)?;
    let b = sweep(map, x, &rows, bottom + DD::lit(p.l0))?;
    let (ya, yb) = (a[0].y, b[0].y);
    Ok((ya.min(yb), ya.max(yb), a))
}

/// Local unstable manifold of the point coded by `word`, as a graph over
/// the full height of the square inside the column of the current symbol.
/// Depth grows until the left/right bracket is below `MANIFOLD_TOL *
/// beta_max`.
pub fn unstable_manifold_local(map: &PerturbedMap, word: &SymbolWord) -> Result<LocalManifold> {
    check_word(word)?;
    let p = &map.params;
    let nodes = chebyshev_nodes(0.0, 1.0, CHEB_NODES);
    let tol = MANIFOLD_TOL * p.beta_max;
    let mut gaps = Vec::new();
    for depth in 1..=word.backward.len() {
        let mut brackets = Vec::with_capacity(nodes.len());
        for &t in &nodes {
            brackets.push(unstable_at(map, word, depth, DD::lit(t))?);
        }
        let gap = brackets
            .iter()
            .map(|(l, r, _)| (*r - *l).approx())
            .fold(0.0, f64::max);
        gaps.push(gap);
        if gap < tol {
            let mut slopes = Vec::with_capacity(nodes.len());
            let mut cone_violations = 0;
            for (_, _, orbit) in &brackets {
                let v = unstable_tangent(map, orbit)?;
                slopes.push(v[0] / v[1]);
                let here = orbit[depth];
                if let Ok(cone) = unstable_cone(map, &tube_context(map, here)) {
                    if !cone.contains(v) {
                        cone_violations += 1;
                    }
                }
            }
            return Ok(LocalManifold {
                kind: ManifoldKind::Unstable,
                values: brackets
                    .iter()
                    .map(|(l, r, _)| ((*l + *r) * DD::lit(0.5)).approx())
                    .collect(),
                lower: brackets.iter().map(|b| b.0.approx()).collect(),
                upper: brackets.iter().map(|b| b.1.approx()).collect(),
                nodes,
                slopes,
                gaps,
                band: col_of_symbol(word.forward[0]),
                cone_violations,
            });
        }
    }
    Err(LabError::NoConvergence(format!(
        "backward word of length {} leaves a bracket of {:e}",
        word.backward.len(),
        gaps.last().copied().unwrap_or(f64::INFINITY)
    )))
}

/// Local stable manifold of the point coded by `word`, as a graph over
/// `[0, 1]` inside the row band of the current symbol. Depth grows until
/// the lower/upper bracket is below `MANIFOLD_TOL * l0`.
pub fn stable_manifold_local(map: &PerturbedMap, word: &SymbolWord) -> Result<LocalManifold> {
    check_word(word)?;
    let p = &map.params;
    let nodes = chebyshev_nodes(0.0, 1.0, CHEB_NODES);
    let tol = MANIFOLD_TOL * p.l0;
    let mut gaps = Vec::new();
    for depth in 1..word.forward.len() {
        let mut brackets = Vec::with_capacity(nodes.len());
        for &t in &nodes {
            brackets.push(stable_at(map, word, depth, DD::lit(t))?);
        }
        let gap = brackets
            .iter()
            .map(|(l, u, _)| (*u - *l).approx())
            .fold(0.0, f64::max);
        gaps.push(gap);
        if gap < tol {
            let mut slopes = Vec::with_capacity(nodes.len());
            let mut cone_violations = 0;
            for (_, _, orbit) in &brackets {
                let v = stable_tangent(map, orbit)?;
                slopes.push(v[1] / v[0]);
                if let Ok(cone) = stable_cone(map, &tube_context(map, orbit[0])) {
                    if !cone.contains(v) {
                        cone_violations += 1;
                    }
                }
            }
            return Ok(LocalManifold {
                kind: ManifoldKind::Stable,
                values: brackets
                    .iter()
                    .map(|(l, u, _)| ((*l + *u) * DD::lit(0.5)).approx())
                    .collect(),
                lower: brackets.iter().map(|b| b.0.approx()).collect(),
                upper: brackets.iter().map(|b| b.1.approx()).collect(),
                nodes,
                slopes,
                gaps,
                band: row_of_symbol(word.forward[0]).index(),
                cone_violations,
            });
        }
    }
    Err(LabError::NoConvergence(format!(
        "forward word of length {} leaves a bracket of {:e}",
        word.forward.len(),
        gaps.last().copied().unwrap_or(f64::INFINITY)
    )))
}

/// Intersection of `W^u_loc(M)` with `W^s_loc(M')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub point: Point,
    #[serde(skip)]
    pub exact: Option<Point<DD>>,
    /// Angle between the two manifolds at the intersection.
    pub angle: f64,
    /// The same angle carried back to the step after the last visit to the
    /// critical region and measured in the chart scaled by
    /// `(eps1 beta, c beta^3)`, when the backward window has a visit.
    pub chart_angle: Option<f64>,
    /// Both directions coincide: the intersection is a tangency.
    pub tangential: bool,
    pub iterations: usize,
}

/// Angles below this are reported as tangential intersections.
pub const TANGENCY_ANGLE: f64 = 1e-12;

/// Angle between `u_orbit`'s unstable tangent and the stable direction
/// `s_end` (given at the end of the orbit), right after the last visit and
/// in the critical chart.
fn chart_angle(map: &PerturbedMap, u_orbit: &[Point<DD>], s_end: [f64; 2]) -> Result<Option<f64>> {
    let p = &map.params;
    let last = u_orbit.len() - 1;
    let Some(v) = (0..last).rev().find(|&k| map.critical_offsets(u_orbit[k]).is_some()) else {
        return Ok(None);
    };
    let u = unstable_tangent(map, &u_orbit[..=v + 1])?;
    let mut s = s_end;
    for pt in u_orbit[v + 1..last].iter().rev() {
        s = apply2(&inverse2(&step_jacobian(map, *pt)?), s);
    }
    let (sx, sy) = (p.eps1 * p.beta_max, p.c * p.beta_max.powi(3));
    Ok(Some(line_angle([u[0] / sx, u[1] / sy], [s[0] / sx, s[1] / sy])))
}

/// `[M, M']` by fixed-point iteration of `y -> h(g(y))`, where `x = g(y)`
/// parametrizes `W^u_loc(M)` and `y = h(x)` parametrizes `W^s_loc(M')`,
/// both evaluated pointwise at full word depth.
pub fn bracket(map: &PerturbedMap, m: &SymbolWord, mp: &SymbolWord) -> Result<Bracket> {
    check_word(m)?;
    check_word(mp)?;
    if m.backward.is_empty() || mp.forward.len() < 2 {
        return Err(LabError::NoConvergence("words too short for a bracket".into()));
    }
    let p = &map.params;
    let (du, ds) = (m.backward.len(), mp.forward.len() - 1);
    let mut y = DD::lit(row_bottom(p, row_of_symbol(mp.forward[0])) + 0.5 * p.l0);
    for it in 1..=MAX_SWEEPS {
        let (l, r, _) = unstable_at(map, m, du, y)?;
        let x = (l + r) * DD::lit(0.5);
        let (lo, hi, _) = stable_at(map, mp, ds, x)?;
        let next = (lo + hi) * DD::lit(0.5);
        let change = (next - y).abs().approx();
        y = next;
        if change <= 1e-28 {
            let (l, r, u_orbit) = unstable_at(map, m, du, y)?;
            let x = (l + r) * DD::lit(0.5);
            let (_, _, s_orbit) = stable_at(map, mp, ds, x)?;
            let s_dir = stable_tangent(map, &s_orbit)?;
            let angle = line_angle(unstable_tangent(map, &u_orbit)?, s_dir);
            let chart_angle = chart_angle(map, &u_orbit, s_dir)?;
            let tangential = match chart_angle {
                Some(a) => a < ORDER_TOL,
                None => angle < TANGENCY_ANGLE,
            };
            let exact = Point::new(x, y);
            return Ok(Bracket {
                point: exact.approx(),
                exact: Some(exact),
                angle,
                chart_angle,
                tangential,
                iterations: it,
            });
        }
    }
    Err(LabError::NoConvergence("bracket iteration".into()))
}

// ---------------------------------------------------------------------------
// Order of contact at the tangency

/// Contact between `F(W^u_loc(xi))` and `W^s_loc(F(xi))`, measured in the
/// chart `X = (x - x_F) / (eps1 beta)`, `Y = (y - y_leaf) / (c beta^3)` in
/// which the difference curve at `theta = 0` is `Y = X^3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangencyReport {
    pub theta: f64,
    pub order: u32,
    /// Cubic coefficient in physical units.
    pub a3: f64,
    pub a3_expected: f64,
    /// Extrapolated first, second and third derivatives in the chart.
    pub derivatives: [f64; 3],
    /// Residuals of the cubic fit at the sample abscissae, in the chart.
    pub residuals: Vec<f64>,
    /// Angle between the curves at the contact point, in the chart.
    pub angle: f64,
    /// Largest deviation of the sampled stable leaf from the height of `F(xi)`.
    pub leaf_deviation: f64,
}

impl TangencyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

const LEAF_DEPTH: usize = 24;
const XI_DEPTH: usize = 24;
const CONTACT_STEP: f64 = 0.02;

pub fn tangency_order(map: &PerturbedMap) -> Result<TangencyReport> {
    let p = &map.params;
    let f_xi = map.frame.f_xi;
    let leaf_word = SymbolWord::new(vec![], critical_forward_word(LEAF_DEPTH + 1)[1..].to_vec());
    let leaf = stable_manifold_local(map, &leaf_word)?;
    let leaf_deviation = leaf
        .values
        .iter()
        .map(|v| (v - f_xi.y).abs())
        .fold(0.0, f64::max);
    if leaf_deviation > MANIFOLD_TOL * p.l0 {
        return Err(LabError::Degenerate(format!(
            "stable leaf of F(xi) is not resolved ({leaf_deviation:e})"
        )));
    }
    let xi_word = SymbolWord::new(vec![7; XI_DEPTH], critical_forward_word(1));
    let ds = leaf_word.forward.len() - 1;
    let (sx, sy) = (p.eps1 * p.beta_max, p.c * p.beta_max.powi(3));

    // difference curve at chart abscissa X, evaluated pointwise
    let diff = |big_x: f64| -> Result<f64> {
        let y = DD::lit(map.frame.xi.y) - DD::lit(big_x) * DD::lit(p.beta_max);
        let (l, r, _) = unstable_at(map, &xi_word, XI_DEPTH, y)?;
        let x = (l + r) * DD::lit(0.5);
        let img = match map.apply(Point::new(x, y)) {
            Mapped::Point(q) => q,
            Mapped::Escaped => return Err(LabError::Escaped(1)),
        };
        let (lo, hi, _) = stable_at(map, &leaf_word, ds, img.x)?;
        let leaf_y = (lo + hi) * DD::lit(0.5);
        Ok(((img.y - leaf_y) / DD::lit(sy)).approx())
    };

    let h = CONTACT_STEP;
    let mut samples = std::collections::BTreeMap::new();
    for k in [-4i32, -2, -1, 0, 1, 2, 4] {
        let t = 0.5 * h * k as f64;
        samples.insert(k, diff(t)?);
    }
    let at = |k: i32| samples[&k];
    // differences at steps h and h/2, then one Richardson step each
    let d1 = |s: i32, step: f64| (at(s) - at(-s)) / (2.0 * step);
    let d2 = |s: i32, step: f64| (at(s) - 2.0 * at(0) + at(-s)) / (step * step);
    let first = (4.0 * d1(1, 0.5 * h) - d1(2, h)) / 3.0;
    let second = (4.0 * d2(1, 0.5 * h) - d2(2, h)) / 3.0;
    let d3 = |s: i32, step: f64| (at(2 * s) - 2.0 * at(s) + 2.0 * at(-s) - at(-2 * s)) / (2.0 * step.powi(3));
    let third = (4.0 * d3(1, 0.5 * h) - d3(2, h)) / 3.0;
    let derivatives = [first, second, third];
    let order = derivatives
        .iter()
        .position(|d| d.abs() > ORDER_TOL)
        .map(|i| i as u32 + 1)
        .unwrap_or(0);
    if order == 0 {
        return Err(LabError::Degenerate("contact of order above 3".into()));
    }

    let a3_chart = third / 6.0;
    let a3 = a3_chart * sy / sx.powi(3);
    let residuals = samples
        .iter()
        .map(|(&k, &v)| {
            let t = 0.5 * h * k as f64;
            v - (first * t + 0.5 * second * t * t + a3_chart * t.powi(3))
        })
        .collect();
    Ok(TangencyReport {
        theta: map.theta,
        order,
        a3,
        a3_expected: p.c / p.eps1.powi(3),
        derivatives,
        residuals,
        angle: first.abs().atan(),
        leaf_deviation,
    })
}

// ---------------------------------------------------------------------------
// Separation of itineraries

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparationRecord {
    /// The two orbits stay closer than `d` over the whole horizon.
    pub close: bool,
    /// The two forward words agree over the whole horizon.
    pub agree: bool,
}

impl SeparationRecord {
    pub fn violated(&self) -> bool {
        self.close && !self.agree
    }
}

/// For each pair of decoded windows, compare the closeness of the orbits
/// over `0..=horizon` with the agreement of the forward words.
pub fn separation_check(pairs: &[(Decoded, Decoded)], horizon: usize, d: f64) -> Result<Vec<SeparationRecord>> {
    pairs
        .iter()
        .map(|(a, b)| {
            if a.word.forward.len() <= horizon || b.word.forward.len() <= horizon {
                return Err(LabError::InsufficientSamples(format!(
                    "forward windows shorter than the horizon {horizon}"
                )));
            }
            let (ia, ib) = (a.current(), b.current());
            let close = (0..=horizon).all(|k| {
                let (pa, pb) = (a.orbit[ia + k], b.orbit[ib + k]);
                let dx = (pa.x - pb.x).abs().approx();
                let dy = (pa.y - pb.y).abs().approx();
                dx.max(dy) < d
            });
            let agree = a.word.forward[..=horizon] == b.word.forward[..=horizon];
            Ok(SeparationRecord { close, agree })
        })
        .collect()
}

#[cfg(test)]
mod tests;
