//! Unstable and stable cone fields with the critical-tube bookkeeping.
//!
//! Every point of the square is classified relative to the critical region:
//! free, on the approach to a visit (pre-critical), in the region itself, or
//! shortly after a visit (post-critical). The unstable cone is
//! `{|v_y| >= s |v_x|}` with a slope `s` depending on that phase, and the
//! stable cone is the closure of its complement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basemap::{rectangle_of, row_rate, Mapped, Point, RectangleId, Row, CRITICAL_CYCLE};
use crate::critmap::{cubic_jacobian, det2, PerturbedMap};
use crate::error::{LabError, Result};
use crate::params::ParamSet;
use crate::real::{Real, DD};

/// Backward steps searched for the visit that a post-critical point follows.
const POST_SEARCH: usize = 24;
/// Forward steps searched along R7 for the visit a pre-critical point precedes.
const PRE_SEARCH: usize = 256;
/// Factor by which tube cones narrow per step relative to the exact
/// push-forward, so that containment along a tube is strict.
pub const TUBE_SLACK: f64 = 2.0;

/// A count that may be unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extent {
    Finite(u32),
    Infinite,
}

impl Extent {
    pub fn finite(self) -> Option<u32> {
        match self {
            Extent::Finite(n) => Some(n),
            Extent::Infinite => None,
        }
    }

    /// Whether `j` is within the extent.
    pub fn covers(self, j: u32) -> bool {
        match self {
            Extent::Finite(n) => j <= n,
            Extent::Infinite => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Free,
    /// `j` steps before a visit to the critical region.
    PreCritical(u32),
    AtCritical,
    /// `j` steps after a visit to the critical region.
    PostCritical(u32),
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Free => "free",
            Phase::PreCritical(_) => "pre-critical",
            Phase::AtCritical => "at-critical",
            Phase::PostCritical(_) => "post-critical",
        }
    }
}

/// Position of a point relative to its critical tube.
///
/// For points in a tube, `n_minus`, `n_plus` and `anchor` describe the visit
/// `M` of the tube (offsets from the critical point). For free points the two
/// counts are evaluated on the point's own offsets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeContext {
    pub n_minus: Extent,
    pub n_plus: Extent,
    pub phase: Phase,
    pub anchor: Option<(f64, f64)>,
}

/// `sup{k >= 0 : x <= d lambda^k}`, infinite at `x = 0`.
pub fn n_minus(p: &ParamSet, x: f64) -> Extent {
    if x <= 0.0 {
        return Extent::Infinite;
    }
    let mut k = 0;
    let mut bound = p.d;
    while x <= bound * p.lambda {
        bound *= p.lambda;
        k += 1;
    }
    Extent::Finite(k)
}

/// Vertical rate applied after the `i`-th post-critical point (one-based).
pub fn cycle_rate(p: &ParamSet, i: u32) -> f64 {
    let s = CRITICAL_CYCLE[(i as usize - 1) % CRITICAL_CYCLE.len()];
    row_rate(p, RectangleId::new(s).expect("valid").band())
}

/// Vertical offset of `F(M)` from `F(xi)` for offsets `(x, y)` of `M`.
pub fn post_offset(p: &ParamSet, x: f64, y: f64, theta: f64) -> f64 {
    p.b * x - p.c * y * (y * y + x + theta)
}

/// Number of post-critical points of a visit at offsets `(x, y)`: the
/// largest `k >= 1` with `V_{k-1} |v| <= d`, where `v` is the vertical
/// offset of the image from `F(xi)` and `V_j` the product of the first `j`
/// vertical rates along the critical cycle.
pub fn n_plus(p: &ParamSet, x: f64, y: f64, theta: f64) -> Extent {
    let v = post_offset(p, x, y, theta).abs();
    if v == 0.0 {
        return Extent::Infinite;
    }
    let mut k = 1;
    let mut growth = 1.0;
    loop {
        let next = growth * cycle_rate(p, k);
        if next * v > p.d || k == u32::MAX {
            return Extent::Finite(k);
        }
        growth = next;
        k += 1;
    }
}

fn visit_context(map: &PerturbedMap, x: f64, y: f64, phase: Phase) -> TubeContext {
    let p = &map.params;
    TubeContext {
        n_minus: n_minus(p, x),
        n_plus: n_plus(p, x, y, map.theta),
        phase,
        anchor: Some((x, y)),
    }
}

/// Classify `pt` relative to the critical tubes of its orbit.
pub fn tube_context<R: Real>(map: &PerturbedMap, pt: Point<R>) -> TubeContext {
    let p = &map.params;
    if let Some((x, y)) = map.critical_offsets(pt) {
        return visit_context(map, x.approx(), y.approx(), Phase::AtCritical);
    }
    let mut q = pt;
    for j in 1..=POST_SEARCH as u32 {
        match map.inverse(q) {
            Mapped::Point(prev) => q = prev,
            Mapped::Escaped => break,
        }
        if let Some((x, y)) = map.critical_offsets(q) {
            let ctx = visit_context(map, x.approx(), y.approx(), Phase::PostCritical(j));
            if ctx.n_plus.covers(j) {
                return ctx;
            }
            break;
        }
    }
    let mut q = pt;
    for j in 1..=PRE_SEARCH as u32 {
        if rectangle_of(p, q).map(RectangleId::get) != Some(7) {
            break;
        }
        match map.apply(q) {
            Mapped::Point(next) => q = next,
            Mapped::Escaped => break,
        }
        if let Some((x, y)) = map.critical_offsets(q) {
            let ctx = visit_context(map, x.approx(), y.approx(), Phase::PreCritical(j));
            if ctx.n_minus.covers(j) {
                return ctx;
            }
            break;
        }
    }
    let x = pt.x.approx();
    let y = (pt.y - R::lit(map.frame.xi.y)).approx();
    TubeContext {
        n_minus: n_minus(p, x),
        n_plus: n_plus(p, x, y, map.theta),
        phase: Phase::Free,
        anchor: None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeKind {
    Unstable,
    Stable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Aperture {
    Slope(f64),
    /// The unstable cone degenerates to the vertical line.
    VerticalLine,
}

/// Unstable cones are `{|v_y| >= s |v_x|}`; stable cones are
/// `{|v_y| <= s |v_x|}`, the whole plane when the unstable cone is a line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub kind: ConeKind,
    pub aperture: Aperture,
}

impl Cone {
    pub fn slope(&self) -> f64 {
        match self.aperture {
            Aperture::Slope(s) => s,
            Aperture::VerticalLine => f64::INFINITY,
        }
    }

    pub fn complement(&self) -> Cone {
        Cone {
            kind: match self.kind {
                ConeKind::Unstable => ConeKind::Stable,
                ConeKind::Stable => ConeKind::Unstable,
            },
            aperture: self.aperture,
        }
    }

    pub fn contains(&self, v: [f64; 2]) -> bool {
        match (self.kind, self.aperture) {
            (ConeKind::Unstable, Aperture::Slope(s)) => v[1].abs() >= s * v[0].abs(),
            (ConeKind::Unstable, Aperture::VerticalLine) => v[0] == 0.0,
            (ConeKind::Stable, Aperture::Slope(s)) => v[1].abs() <= s * v[0].abs(),
            (ConeKind::Stable, Aperture::VerticalLine) => true,
        }
    }
}

/// Only the unperturbed map has a degenerate cone there; `theta > 0` keeps
/// the post-critical slope positive.
fn on_critical_orbit(ctx: &TubeContext, theta: f64) -> bool {
    theta == 0.0 && ctx.phase != Phase::Free && ctx.anchor == Some((0.0, 0.0))
}

/// Slope of the unstable cone for a classified point; infinite for the
/// vertical line.
pub fn unstable_slope(map: &PerturbedMap, ctx: &TubeContext) -> Result<f64> {
    let p = &map.params;
    if on_critical_orbit(ctx, map.theta) {
        return Err(LabError::OnCriticalOrbit);
    }
    let free = p.free_slope();
    let pre_gain = row_rate(p, Row::Bottom) / (TUBE_SLACK * p.lambda);
    let pre = |steps_left: Option<u32>| match steps_left {
        None => f64::INFINITY,
        Some(k) => free * pre_gain.powi(k as i32),
    };
    Ok(match ctx.phase {
        Phase::Free => free,
        Phase::AtCritical => pre(ctx.n_minus.finite()),
        Phase::PreCritical(j) => pre(ctx.n_minus.finite().map(|n| n.saturating_sub(j))),
        Phase::PostCritical(j) => {
            let (x, y) = ctx.anchor.expect("tube points carry their visit");
            let q = 3.0 * y * y + x + map.theta;
            if q <= 0.0 {
                return Err(LabError::OnCriticalOrbit);
            }
            (1..j).fold(p.a_cone * q, |s, i| s * cycle_rate(p, i) / (TUBE_SLACK * p.lambda))
        }
    })
}

fn cone_from_slope(kind: ConeKind, s: f64) -> Cone {
    Cone {
        kind,
        aperture: if s.is_finite() {
            Aperture::Slope(s)
        } else {
            Aperture::VerticalLine
        },
    }
}

pub fn unstable_cone(map: &PerturbedMap, ctx: &TubeContext) -> Result<Cone> {
    Ok(cone_from_slope(ConeKind::Unstable, unstable_slope(map, ctx)?))
}

pub fn stable_cone(map: &PerturbedMap, ctx: &TubeContext) -> Result<Cone> {
    Ok(unstable_cone(map, ctx)?.complement())
}

/// Slope `|v_y / v_x|`, infinite for vertical vectors.
pub fn slope_of(v: [f64; 2]) -> f64 {
    if v[0] == 0.0 {
        f64::INFINITY
    } else {
        (v[1] / v[0]).abs()
    }
}

/// `ln(num / den)` with the conventions `inf / inf = inf / finite = +inf`
/// and `finite / inf = -inf`.
fn log_ratio(num: f64, den: f64) -> f64 {
    match (num.is_infinite(), den.is_infinite()) {
        (true, _) => f64::INFINITY,
        (false, true) => f64::NEG_INFINITY,
        _ => (num / den).ln(),
    }
}

fn mat_vec(m: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

pub fn inverse2(m: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = det2(m);
    [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ]
}

/// Derivative at a classified point, using the exact cubic offsets inside
/// the critical region.
pub fn jacobian_at<R: Real>(
    map: &PerturbedMap,
    pt: Point<R>,
    ctx: &TubeContext,
) -> Result<[[f64; 2]; 2]> {
    match (ctx.phase, ctx.anchor) {
        (Phase::AtCritical, Some((x, y))) => Ok(cubic_jacobian(&map.params, x, y, map.theta)),
        _ => map.jacobian(pt.approx()),
    }
}

fn boundary_vectors(s: f64) -> Vec<[f64; 2]> {
    if s.is_finite() {
        vec![[1.0, s], [1.0, -s]]
    } else {
        vec![[0.0, 1.0]]
    }
}

fn require_rectangle<R: Real>(map: &PerturbedMap, pt: Point<R>) -> Result<()> {
    rectangle_of(&map.params, pt)
        .map(|_| ())
        .ok_or(LabError::GapPoint)
}

/// Margin of `DF(pt) C^u(pt)` inside `C^u(F(pt))`: the minimum over the
/// boundary vectors of `ln(image slope / required slope)`. Positive means
/// strict containment.
pub fn check_unstable_invariance<R: Real>(map: &PerturbedMap, pt: Point<R>) -> Result<f64> {
    require_rectangle(map, pt)?;
    let ctx = tube_context(map, pt);
    let s = unstable_slope(map, &ctx)?;
    let next = match map.apply(pt) {
        Mapped::Point(q) => q,
        Mapped::Escaped => return Err(LabError::Escaped(1)),
    };
    let required = unstable_slope(map, &tube_context(map, next))?;
    let j = jacobian_at(map, pt, &ctx)?;
    Ok(boundary_vectors(s)
        .into_iter()
        .map(|v| log_ratio(slope_of(mat_vec(&j, v)), required))
        .fold(f64::INFINITY, f64::min))
}

/// Margin of `DF^{-1} C^s(pt)` inside `C^s(F^{-1}(pt))`, as a log ratio of
/// the allowed slope to the pulled-back boundary slopes.
pub fn check_stable_invariance<R: Real>(map: &PerturbedMap, pt: Point<R>) -> Result<f64> {
    require_rectangle(map, pt)?;
    let ctx = tube_context(map, pt);
    let s = unstable_slope(map, &ctx)?;
    let prev = match map.inverse(pt) {
        Mapped::Point(q) => q,
        Mapped::Escaped => return Err(LabError::Escaped(1)),
    };
    let prev_ctx = tube_context(map, prev);
    let allowed = unstable_slope(map, &prev_ctx)?;
    if !s.is_finite() {
        // the whole plane pulls back to the whole plane
        return Ok(if allowed.is_finite() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        });
    }
    let inv = inverse2(&jacobian_at(map, prev, &prev_ctx)?);
    Ok(boundary_vectors(s)
        .into_iter()
        .map(|v| log_ratio(allowed, slope_of(mat_vec(&inv, v))))
        .fold(f64::INFINITY, f64::min))
}

/// Push-forward of the post-critical cone to the first point after the tube,
/// without the tube slack, together with the lower bound `A d / (lambda^n
/// 3 c beta_max)`. Returns `None` when the tube never ends.
pub fn tube_exit_slope(map: &PerturbedMap, x: f64, y: f64) -> Option<(f64, f64)> {
    let p = &map.params;
    let n = n_plus(p, x, y, map.theta).finite()?;
    let q = 3.0 * y * y + x + map.theta;
    let growth: f64 = (1..=n).map(|i| cycle_rate(p, i)).product();
    let slope = p.a_cone * q * growth / p.lambda.powi(n as i32);
    let bound = p.free_slope() / p.lambda.powi(n as i32);
    Some((slope, bound))
}

/// Synthetic first return to the critical region: a visit at offsets
/// `(x, y)`, its post-critical stretch, a free stretch through `free_rows`,
/// and `k0` steps along R7 into the next visit at offsets `(alpha, beta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnConfig {
    pub x: f64,
    pub y: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k0: u32,
    pub free_rows: Vec<Row>,
}

impl ReturnConfig {
    /// Vertical separation at the exit exceeds `d` and the approach starts
    /// more than `d` away horizontally.
    pub fn satisfies_return_constraints(&self, map: &PerturbedMap) -> bool {
        let p = &map.params;
        let Some(n) = n_plus(p, self.x, self.y, map.theta).finite() else {
            return false;
        };
        let growth: f64 = (1..=n).map(|i| cycle_rate(p, i)).product();
        let exit_gap = growth * post_offset(p, self.x, self.y, map.theta).abs();
        let approach_gap = self.alpha / p.lambda.powi(self.k0 as i32);
        exit_gap > p.d && approach_gap > p.d && self.k0 >= 1
    }

    /// `V_{n+} (3y^2 + x) > d / (3 c beta_max)` at the exit of the tube.
    pub fn exit_inequality(&self, map: &PerturbedMap) -> bool {
        let p = &map.params;
        let Some(n) = n_plus(p, self.x, self.y, map.theta).finite() else {
            return false;
        };
        let growth: f64 = (1..=n).map(|i| cycle_rate(p, i)).product();
        growth * (3.0 * self.y * self.y + self.x) > p.d / (3.0 * p.c * p.beta_max)
    }
}

/// Random first-return configurations satisfying the return constraints.
pub fn sample_returns(map: &PerturbedMap, count: usize, seed: u64) -> Vec<ReturnConfig> {
    let p = &map.params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_offset = |rng: &mut ChaCha8Rng| p.alpha_max * 10f64.powf(-rng.gen_range(0.0..8.0));
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = log_offset(&mut rng);
        let y = rng.gen_range(-1.0..=1.0) * p.beta_max;
        let alpha = log_offset(&mut rng);
        let beta = rng.gen_range(-1.0..=1.0) * p.beta_max;
        let base = n_minus(p, alpha).finite().unwrap_or(0);
        let k0 = base + rng.gen_range(1..=4);
        let len = rng.gen_range(0..8);
        let free_rows = (0..len)
            .map(|_| Row::ALL[rng.gen_range(0..3)])
            .collect();
        let cfg = ReturnConfig {
            x,
            y,
            alpha,
            beta,
            k0,
            free_rows,
        };
        if cfg.satisfies_return_constraints(map) {
            out.push(cfg);
        }
    }
    out
}

fn step_margin(j: &[[f64; 2]; 2], s: f64, required: f64) -> f64 {
    boundary_vectors(s)
        .into_iter()
        .map(|v| log_ratio(slope_of(mat_vec(j, v)), required))
        .fold(f64::INFINITY, f64::min)
}

/// Smallest cone margin along the whole return, computed from the phase
/// rules without iterating the map.
pub fn return_margin(map: &PerturbedMap, cfg: &ReturnConfig) -> Result<f64> {
    let p = &map.params;
    let at = |x: f64, y: f64| visit_context(map, x, y, Phase::AtCritical);
    let start = at(cfg.x, cfg.y);
    let n_out = start
        .n_plus
        .finite()
        .ok_or_else(|| LabError::NotFirstReturn("tube never ends".into()))?;
    let mut margin = f64::INFINITY;
    let mut s = unstable_slope(map, &start)?;
    let mut ctx_post = TubeContext {
        phase: Phase::PostCritical(1),
        ..start
    };
    let mut req = unstable_slope(map, &ctx_post)?;
    margin = margin.min(step_margin(&cubic_jacobian(p, cfg.x, cfg.y, map.theta), s, req));
    let free_ctx = TubeContext {
        n_minus: Extent::Finite(0),
        n_plus: Extent::Finite(1),
        phase: Phase::Free,
        anchor: None,
    };
    for j in 1..=n_out {
        s = req;
        let diag = [[p.lambda, 0.0], [0.0, cycle_rate(p, j)]];
        let next = if j < n_out {
            ctx_post.phase = Phase::PostCritical(j + 1);
            ctx_post
        } else {
            free_ctx
        };
        req = unstable_slope(map, &next)?;
        margin = margin.min(step_margin(&diag, s, req));
    }
    let free = unstable_slope(map, &free_ctx)?;
    for row in &cfg.free_rows {
        let diag = [[p.lambda, 0.0], [0.0, row_rate(p, *row)]];
        margin = margin.min(step_margin(&diag, free, free));
    }
    let target = at(cfg.alpha, cfg.beta);
    let bottom = [[p.lambda, 0.0], [0.0, row_rate(p, Row::Bottom)]];
    let mut s = free;
    for j in (0..cfg.k0).rev() {
        let ctx = if j == 0 {
            target
        } else if target.n_minus.covers(j) {
            TubeContext {
                phase: Phase::PreCritical(j),
                ..target
            }
        } else {
            free_ctx
        };
        let req = unstable_slope(map, &ctx)?;
        margin = margin.min(step_margin(&bottom, s, req));
        s = req;
    }
    Ok(margin)
}

/// One row of a cone invariance sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub x: f64,
    pub y: f64,
    pub phase: String,
    pub margin_u: f64,
    pub margin_s: f64,
}

impl SweepRow {
    pub fn csv_header() -> &'static str {
        "x,y,phase,margin_u,margin_s"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.17e},{:.17e},{},{:.6e},{:.6e}",
            self.x, self.y, self.phase, self.margin_u, self.margin_s
        )
    }
}

/// Both invariance margins at every point, in input order.
pub fn cones_sweep(map: &PerturbedMap, points: &[Point<DD>]) -> Vec<Result<SweepRow>> {
    points
        .par_iter()
        .map(|&pt| {
            let ctx = tube_context(map, pt);
            Ok(SweepRow {
                x: pt.x.approx(),
                y: pt.y.approx(),
                phase: ctx.phase.label().to_string(),
                margin_u: check_unstable_invariance(map, pt)?,
                margin_s: check_stable_invariance(map, pt)?,
            })
        })
        .collect()
}
