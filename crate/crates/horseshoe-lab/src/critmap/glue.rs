//! Diffeomorphism joining the cubic chart to the affine branch.
//!
//! Works in scaled offsets `X = x / alpha_max`, `Y = (y - xi2) / beta_max`
//! around the critical point. The perturbed map on the neighbourhood
//! `N = [0, X_R] x [-H, H]` is the affine branch composed with
//! `Phi = V o U o T o Pi`:
//!
//! * `Pi` squeezes `[0,1]` horizontally into `[X_c - delta, X_c + delta]`,
//! * `T` rotates an inner ellipse about `(X_c, 0)` by a quarter turn and is
//!   the identity outside an outer ellipse (area preserving),
//! * `U` rescales the new horizontal coordinate to `1/2 + kappa Y`,
//! * `V` replaces the vertical coordinate by the cubic.
//!
//! `U`, `V` and `Pi` are monotone in the coordinate they move, so `Phi` is
//! injective, and on the critical region it equals the cubic chart exactly.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::params::ChartScales;

const RAMP: f64 = 0.15;
const TWIST_AXIS: f64 = 0.6;
const TWIST_OUTER: f64 = 1.7;
const TWIST_INNER: f64 = 1.06;
const TWIST_CLEARANCE: f64 = 0.05;
const SQUEEZE_FILL: f64 = 0.98;
const SQUEEZE_END: f64 = 3.0;
const TILT_EXTRA: f64 = 0.4;
const CORE_PAD: f64 = 0.1;
const EDGE: f64 = 0.3;
const EDGE_FADE: f64 = 0.15;
const SATURATION: f64 = 0.05;

/// Shape of the glue neighbourhood in scaled offsets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlueSpec {
    /// Right edge `X_R` of the neighbourhood, in units of `alpha_max`.
    pub collar_x: f64,
    /// Half height `H` of the neighbourhood, in units of `beta_max`.
    pub collar_y: f64,
    pub profile: BlendProfile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlendProfile {
    /// Squeeze, quarter twist, then two monotone shears.
    FactoredTwist,
}

impl BlendProfile {
    pub fn id(self) -> &'static str {
        match self {
            BlendProfile::FactoredTwist => "factored-twist",
        }
    }
}

/// Quintic smoothstep and its derivative, clamped to `[0,1]`.
fn smoothstep(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        let v = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        let d = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        (v, d)
    }
}

/// Cut-off equal to one for `|w| <= inner` and zero for `|w| >= outer`.
fn cutoff(w: f64, inner: f64, outer: f64) -> (f64, f64) {
    let width = outer - inner;
    let (s, ds) = smoothstep((w.abs() - inner) / width);
    (1.0 - s, -ds * w.signum() / width)
}

/// Monotone C1 interpolant from `(x0, y0)` with slope `s0` to `(x1, y1)` with
/// slope `s1`: the slope ramps to a plateau and back.
#[derive(Clone, Copy, Debug)]
struct Connector {
    x0: f64,
    len: f64,
    y0: f64,
    s0: f64,
    s1: f64,
    plateau: f64,
}

impl Connector {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64, s0: f64, s1: f64) -> Option<Connector> {
        let len = x1 - x0;
        let mean = (y1 - y0) / len;
        let plateau = (mean - (s0 + s1) * RAMP / 2.0) / (1.0 - RAMP);
        (len > 0.0 && plateau >= 0.0 && s0 >= 0.0 && s1 >= 0.0).then_some(Connector {
            x0,
            len,
            y0,
            s0,
            s1,
            plateau,
        })
    }

    fn eval(&self, x: f64) -> (f64, f64) {
        let t = ((x - self.x0) / self.len).clamp(0.0, 1.0);
        let ramp = |u: f64| 3.0 * u * u - 2.0 * u * u * u;
        let ramp_int = |u: f64| u * u * u - u * u * u * u / 2.0;
        let u1 = t.min(RAMP) / RAMP;
        let u2 = (t - (1.0 - RAMP)).max(0.0) / RAMP;
        let head = RAMP * (u1 - ramp_int(u1));
        let tail = RAMP * ramp_int(u2);
        let p = self.plateau;
        let value = self.y0 + self.len * (p * t + (self.s0 - p) * head + (self.s1 - p) * tail);
        let slope = p + (self.s0 - p) * (1.0 - ramp(u1)) + (self.s1 - p) * ramp(u2);
        (value, slope)
    }

    fn max_slope(&self) -> f64 {
        self.s0.max(self.s1).max(self.plateau)
    }
}

/// Scaled glue map with all derived constants precomputed.
#[derive(Clone, Debug)]
pub struct Glue {
    pub spec: GlueSpec,
    scales: ChartScales,
    centre: f64,
    half_squeeze: f64,
    squeeze_base: f64,
    squeeze_slope: f64,
    squeeze_tail: Connector,
    tilt_tail: Connector,
    tilt_end: f64,
    core_lo: f64,
    core_hi: f64,
}

impl Glue {
    pub fn new(spec: GlueSpec, scales: ChartScales) -> Result<Glue> {
        let (x_r, h) = (spec.collar_x, spec.collar_y);
        let centre = TWIST_AXIS * TWIST_OUTER + TWIST_CLEARANCE;
        let half_squeeze = SQUEEZE_FILL * TWIST_AXIS * (TWIST_INNER * TWIST_INNER - 1.0).sqrt();
        let squeeze_base = centre - half_squeeze;
        let squeeze_slope = 2.0 * half_squeeze;
        if h < TWIST_OUTER + EDGE_FADE || x_r < SQUEEZE_END + 1.0 {
            return Err(LabError::Degenerate(format!(
                "glue neighbourhood too small (X_R = {x_r:.3}, H = {h:.3})"
            )));
        }
        if scales.kappa <= 0.0 || scales.eta <= 0.0 || scales.cubic <= 0.0 {
            return Err(LabError::Degenerate("non-positive chart scales".into()));
        }
        let squeeze_tail = Connector::new(
            1.0,
            SQUEEZE_END,
            squeeze_base + squeeze_slope,
            SQUEEZE_END,
            squeeze_slope,
            1.0,
        )
        .ok_or_else(|| LabError::Degenerate("squeeze connector not monotone".into()))?;
        let tilt_start = centre + TWIST_AXIS + TILT_EXTRA;
        let tilt_end = x_r - EDGE;
        let tilt_slope = scales.kappa / TWIST_AXIS;
        let tilt_tail = Connector::new(
            tilt_start,
            tilt_end,
            0.5 + scales.kappa * (tilt_start - centre) / TWIST_AXIS,
            tilt_end,
            tilt_slope,
            1.0,
        )
        .ok_or_else(|| LabError::Degenerate("tilt connector not monotone".into()))?;
        let reach = half_squeeze / TWIST_AXIS + CORE_PAD;
        let glue = Glue {
            spec,
            scales,
            centre,
            half_squeeze,
            squeeze_base,
            squeeze_slope,
            squeeze_tail,
            tilt_tail,
            tilt_end,
            core_lo: -reach,
            core_hi: reach,
        };
        let top = 1.0 + SATURATION;
        for y in [-top, -1.0, -0.5, 0.0, 0.5, 1.0, top] {
            glue.cubic_connectors(y)
                .ok_or_else(|| LabError::Degenerate("cubic connector not monotone".into()))?;
        }
        Ok(glue)
    }

    pub fn scales(&self) -> &ChartScales {
        &self.scales
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.spec.collar_x).contains(&x) && y.abs() <= self.spec.collar_y
    }

    /// Cubic chart in scaled offsets: the target of `Phi` on the critical region.
    pub fn chart(&self, x: f64, y: f64) -> (f64, f64) {
        let s = &self.scales;
        (
            0.5 + s.kappa * y,
            s.cubic * y * (y * y + s.eta * x + s.shift) - s.linear * x,
        )
    }

    fn squeeze_core(&self, x: f64) -> (f64, f64) {
        if x <= 1.0 {
            (self.squeeze_base + self.squeeze_slope * x, self.squeeze_slope)
        } else if x >= SQUEEZE_END {
            (x, 1.0)
        } else {
            self.squeeze_tail.eval(x)
        }
    }

    fn squeeze_weight(&self, y: f64) -> (f64, f64) {
        cutoff(y, 1.0, self.spec.collar_y - EDGE_FADE)
    }

    /// `Pi` and its horizontal derivative.
    fn squeeze(&self, x: f64, y: f64) -> (f64, f64) {
        let (core, dcore) = self.squeeze_core(x);
        let (w, _) = self.squeeze_weight(y);
        (x + w * (core - x), 1.0 + w * (dcore - 1.0))
    }

    fn twist_angle(&self, r: f64) -> f64 {
        let (s, _) = smoothstep((r - TWIST_INNER) / (TWIST_OUTER - TWIST_INNER));
        -std::f64::consts::FRAC_PI_2 * (1.0 - s)
    }

    fn twist(&self, x: f64, y: f64, sign: f64) -> (f64, f64) {
        let xt = (x - self.centre) / TWIST_AXIS;
        let r = xt.hypot(y);
        let (sin, cos) = (sign * self.twist_angle(r)).sin_cos();
        (
            self.centre + TWIST_AXIS * (cos * xt - sin * y),
            sin * xt + cos * y,
        )
    }

    fn tilt_core(&self, u: f64) -> (f64, f64) {
        let start = self.tilt_tail.x0;
        if u <= start {
            let k = self.scales.kappa / TWIST_AXIS;
            (0.5 + k * (u - self.centre), k)
        } else if u >= self.tilt_end {
            (u, 1.0)
        } else {
            self.tilt_tail.eval(u)
        }
    }

    /// `U` and its horizontal derivative.
    fn tilt(&self, u: f64, w: f64) -> (f64, f64) {
        let h = self.spec.collar_y;
        let (weight, _) = cutoff(w, h - EDGE, h - EDGE_FADE);
        let (core, dcore) = self.tilt_core(u);
        (u + weight * (core - u), 1.0 + weight * (dcore - 1.0))
    }

    /// Height recovered from the tilted coordinate, saturated smoothly just
    /// beyond the critical region so the shear stays C1 and bounded.
    fn cubic_height(&self, up: f64) -> f64 {
        let y = (up - 0.5) / self.scales.kappa;
        if y.abs() <= 1.0 {
            y
        } else {
            y.signum() * (1.0 + SATURATION * ((y.abs() - 1.0) / SATURATION).tanh())
        }
    }

    fn core_x(&self, w: f64) -> f64 {
        (self.centre - TWIST_AXIS * w - self.squeeze_base) / self.squeeze_slope
    }

    fn core_slope(&self, y: f64) -> f64 {
        let s = &self.scales;
        TWIST_AXIS / self.squeeze_slope * (s.linear - s.cubic * s.eta * y)
    }

    fn cubic_connectors(&self, y: f64) -> Option<(Connector, Connector)> {
        let top = self.spec.collar_y - EDGE;
        let slope = self.core_slope(y);
        let at_hi = self.chart(self.core_x(self.core_hi), y).1;
        let at_lo = self.chart(self.core_x(self.core_lo), y).1;
        let upper = Connector::new(self.core_hi, top, at_hi, top, slope, 1.0)?;
        let lower = Connector::new(-top, self.core_lo, -top, at_lo, 1.0, slope)?;
        Some((upper, lower))
    }

    fn shear_core(&self, up: f64, w: f64) -> (f64, f64) {
        let y = self.cubic_height(up);
        let top = self.spec.collar_y - EDGE;
        if (self.core_lo..=self.core_hi).contains(&w) {
            return (self.chart(self.core_x(w), y).1, self.core_slope(y));
        }
        if w.abs() >= top {
            return (w, 1.0);
        }
        let (upper, lower) = self
            .cubic_connectors(y)
            .expect("connectors validated at construction");
        if w > self.core_hi {
            upper.eval(w)
        } else {
            lower.eval(w)
        }
    }

    fn shear_weight(&self, up: f64) -> f64 {
        let k = self.scales.kappa;
        let start = 0.5 + k;
        let width = k * TILT_EXTRA / TWIST_AXIS;
        1.0 - smoothstep((up - start) / width).0
    }

    /// `V` and its vertical derivative.
    fn shear(&self, up: f64, w: f64) -> (f64, f64) {
        let weight = self.shear_weight(up);
        let (core, dcore) = self.shear_core(up, w);
        (w + weight * (core - w), 1.0 + weight * (dcore - 1.0))
    }

    /// `Phi` on scaled offsets. Identity outside the neighbourhood.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        self.apply_with_det(x, y).0
    }

    /// `Phi` together with its Jacobian determinant.
    pub fn apply_with_det(&self, x: f64, y: f64) -> ((f64, f64), f64) {
        if !self.contains(x, y) {
            return ((x, y), 1.0);
        }
        let (x1, d1) = self.squeeze(x, y);
        let (u, w) = self.twist(x1, y, 1.0);
        let (up, d2) = self.tilt(u, w);
        let (wp, d3) = self.shear(up, w);
        ((up, wp), d1 * d2 * d3)
    }

    /// Jacobian of `Phi` by central differences in scaled offsets.
    pub fn jacobian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        let h = 1e-6;
        let (xp, xm) = (self.apply(x + h, y), self.apply((x - h).max(0.0), y));
        let hx = x + h - (x - h).max(0.0);
        let (yp, ym) = (self.apply(x, y + h), self.apply(x, y - h));
        [
            [(xp.0 - xm.0) / hx, (yp.0 - ym.0) / (2.0 * h)],
            [(xp.1 - xm.1) / hx, (yp.1 - ym.1) / (2.0 * h)],
        ]
    }

    /// Inverse of `Phi`, or `None` off its image.
    pub fn inverse(&self, up: f64, wp: f64) -> Option<(f64, f64)> {
        if !self.contains(up, wp) {
            return Some((up, wp));
        }
        let h = self.spec.collar_y;
        let x_r = self.spec.collar_x;
        let w = monotone_solve(|w| self.shear(up, w).0, wp, -h, h)?;
        let u = monotone_solve(|u| self.tilt(u, w).0, up, 0.0, x_r)?;
        let (x1, y) = self.twist(u, w, -1.0);
        let x = monotone_solve(|x| self.squeeze(x, y).0, x1, 0.0, x_r)?;
        Some((x, y))
    }

    /// Supremum of `|det DPhi|` sampled on a uniform grid over the neighbourhood.
    pub fn det_bound(&self) -> f64 {
        let (lo, hi) = self.det_range(480, 320);
        lo.abs().max(hi.abs())
    }

    /// Minimum and maximum of `det DPhi` on a `nx` by `ny` grid.
    pub fn det_range(&self, nx: usize, ny: usize) -> (f64, f64) {
        let (x_r, h) = (self.spec.collar_x, self.spec.collar_y);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..=nx {
            let x = x_r * i as f64 / nx as f64;
            for j in 0..=ny {
                let y = -h + 2.0 * h * j as f64 / ny as f64;
                let (_, det) = self.apply_with_det(x, y);
                lo = lo.min(det);
                hi = hi.max(det);
            }
        }
        (lo, hi)
    }

    /// Largest slope of any one-dimensional profile; a crude Lipschitz bound.
    pub fn max_profile_slope(&self) -> f64 {
        let mut m = self
            .squeeze_tail
            .max_slope()
            .max(self.tilt_tail.max_slope())
            .max(1.0);
        for y in [-1.0 - SATURATION, 0.0, 1.0 + SATURATION] {
            if let Some((a, b)) = self.cubic_connectors(y) {
                m = m.max(a.max_slope()).max(b.max_slope());
            }
        }
        m
    }

    pub fn half_squeeze(&self) -> f64 {
        self.half_squeeze
    }
}

/// Solve `f(t) = target` for increasing `f` on `[lo, hi]` by bisection.
fn monotone_solve(f: impl Fn(f64) -> f64, target: f64, lo: f64, hi: f64) -> Option<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    let slack = 1e-13 * (1.0 + target.abs());
    if target < flo - slack || target > fhi + slack {
        return None;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if f(m) < target {
            a = m;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}
