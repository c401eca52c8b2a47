//! Expansion and contraction certificates along orbits of the invariant set:
//! critical-tube expansion, growth on complete pieces, Lyapunov exponents,
//! invariant directions and the doubling time of the perturbed family.

use serde::{Deserialize, Serialize};

use crate::basemap::{branch, Mapped, Point, RectangleId};
use crate::cones::{self, n_minus, n_plus, Extent, Phase, TubeContext};
use crate::critmap::{cubic_jacobian, PerturbedMap};
use crate::error::{LabError, Result};
use crate::real::{Real, DD};
use crate::symbolic::Decoded;

pub type Mat2 = [[f64; 2]; 2];

pub fn mat_vec(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

pub fn sup_norm(v: [f64; 2]) -> f64 {
    v[0].abs().max(v[1].abs())
}

fn normalized(v: [f64; 2]) -> [f64; 2] {
    let n = sup_norm(v);
    [v[0] / n, v[1] / n]
}

/// A visit to the critical region inside an orbit window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub index: usize,
    /// Offsets from the critical point.
    pub x: f64,
    pub y: f64,
}

/// Orbit window with the derivative of every step; `jacobians[i]` maps the
/// tangent space at `points[i]` to the one at `points[i + 1]`.
#[derive(Clone, Debug)]
pub struct OrbitWindow {
    pub points: Vec<Point<DD>>,
    pub jacobians: Vec<Mat2>,
    pub visits: Vec<Visit>,
    pub current: usize,
}

impl OrbitWindow {
    /// Derivatives read off the symbols: diagonal on the affine stripes, the
    /// cubic chart at recorded visits.
    pub fn from_decoded(map: &PerturbedMap, dec: &Decoded) -> OrbitWindow {
        let p = &map.params;
        let xi2 = DD::lit(map.frame.xi.y);
        let visits: Vec<Visit> = dec
            .visits
            .iter()
            .map(|&i| Visit {
                index: i,
                x: dec.orbit[i].x.approx(),
                y: (dec.orbit[i].y - xi2).approx(),
            })
            .collect();
        let symbols: Vec<u8> = dec.word.symbols().collect();
        let jacobians = (0..symbols.len().saturating_sub(1))
            .map(|i| match visits.iter().find(|v| v.index == i) {
                Some(v) => cubic_jacobian(p, v.x, v.y, map.theta),
                None => {
                    let row = RectangleId::new(symbols[i]).expect("valid").band();
                    let (h, v) = branch(p, row).diagonal();
                    [[h, 0.0], [0.0, v]]
                }
            })
            .collect();
        OrbitWindow {
            points: dec.orbit.clone(),
            jacobians,
            visits,
            current: dec.current(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Product of the derivatives at indices `from..to`.
    pub fn product(&self, from: usize, to: usize) -> Mat2 {
        self.jacobians[from..to]
            .iter()
            .fold([[1.0, 0.0], [0.0, 1.0]], |acc, j| mat_mul(j, &acc))
    }
}

/// Critical tube around a visit: `n_minus` steps before, `n_plus` after.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub visit: Visit,
    pub n_minus: u32,
    pub n_plus: u32,
}

impl Tube {
    pub fn start(&self) -> i64 {
        self.visit.index as i64 - self.n_minus as i64
    }

    /// Index of the last post-critical point.
    pub fn end(&self) -> i64 {
        (self.visit.index + self.n_plus as usize) as i64
    }

    /// Derivatives applied along the tube.
    pub fn steps(&self) -> u32 {
        self.n_minus + 1 + self.n_plus
    }
}

/// Tubes of every visit in the window; `None` for a visit on the critical orbit.
pub fn tubes(map: &PerturbedMap, w: &OrbitWindow) -> Vec<Option<Tube>> {
    let p = &map.params;
    w.visits
        .iter()
        .map(|v| match (n_minus(p, v.x), n_plus(p, v.x, v.y, map.theta)) {
            (Extent::Finite(a), Extent::Finite(b)) => Some(Tube {
                visit: *v,
                n_minus: a,
                n_plus: b,
            }),
            _ => None,
        })
        .collect()
}

/// Tubes whose derivatives all lie inside the window.
pub fn harvest_tubes(map: &PerturbedMap, w: &OrbitWindow) -> Vec<Tube> {
    tubes(map, w)
        .into_iter()
        .flatten()
        .filter(|t| t.start() >= 0 && t.end() < w.jacobians.len() as i64)
        .collect()
}

/// Exportable outcome of one finite-time check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: String,
    pub point: [f64; 2],
    pub window: [usize; 2],
    pub bound: f64,
    pub measured: f64,
    pub pass: bool,
}

impl Certificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data")
    }
}

/// Boundary vectors of an unstable cone of slope `s`.
pub fn cone_boundary(s: f64) -> Vec<[f64; 2]> {
    if s.is_finite() {
        vec![[1.0, s], [1.0, -s]]
    } else {
        vec![[0.0, 1.0]]
    }
}

/// Smallest sup-norm growth over `vectors` under `m`.
fn min_growth(m: &Mat2, vectors: &[[f64; 2]]) -> f64 {
    vectors
        .iter()
        .map(|&v| sup_norm(mat_vec(m, v)) / sup_norm(v))
        .fold(f64::INFINITY, f64::min)
}

fn entry_slope(map: &PerturbedMap, tube: &Tube) -> Result<f64> {
    let ctx = TubeContext {
        n_minus: Extent::Finite(tube.n_minus),
        n_plus: Extent::Finite(tube.n_plus),
        phase: if tube.n_minus == 0 {
            Phase::AtCritical
        } else {
            Phase::PreCritical(tube.n_minus)
        },
        anchor: Some((tube.visit.x, tube.visit.y)),
    };
    cones::unstable_slope(map, &ctx)
}

/// Expansion across a whole tube against `rho^{(n + 1 + m) / 5}`, for the
/// boundary vectors of the unstable cone at the tube's entry.
pub fn tube_expansion_check(
    map: &PerturbedMap,
    w: &OrbitWindow,
    tube: &Tube,
) -> Result<Certificate> {
    if tube.start() < 0 || tube.end() >= w.jacobians.len() as i64 {
        return Err(LabError::NotATube(format!(
            "steps {}..={} outside the window",
            tube.start(),
            tube.end()
        )));
    }
    if !w.visits.contains(&tube.visit) {
        return Err(LabError::NotATube("no visit at the tube centre".into()));
    }
    let (a, b) = (tube.start() as usize, tube.end() as usize);
    let vectors = cone_boundary(entry_slope(map, tube)?);
    let measured = min_growth(&w.product(a, b + 1), &vectors);
    let bound = map.params.rho.powf(tube.steps() as f64 / 5.0);
    Ok(Certificate {
        kind: "tube-expansion".into(),
        point: [tube.visit.x, tube.visit.y],
        window: [a, b],
        bound,
        measured,
        pass: measured >= bound,
    })
}

/// Per-step growth of a tracked vector over a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRecord {
    pub window: [usize; 2],
    pub factors: Vec<f64>,
    pub complete: bool,
    pub total: f64,
    pub bound: f64,
}

impl GrowthRecord {
    pub fn pass(&self) -> bool {
        self.complete && self.total >= self.bound
    }
}

/// Whether `from..=to` cuts no tube of the window.
pub fn is_complete(map: &PerturbedMap, w: &OrbitWindow, from: usize, to: usize) -> bool {
    let (from, to) = (from as i64, to as i64);
    tubes(map, w).iter().all(|t| match t {
        Some(t) => t.end() < from || t.start() > to || (t.start() >= from && t.end() <= to),
        None => false,
    })
}

/// Growth of the unstable cone over `n + 1` steps from `start`, against
/// `rho^{n / 5}`; only defined on complete windows.
pub fn complete_piece_growth(
    map: &PerturbedMap,
    w: &OrbitWindow,
    start: usize,
    n: usize,
) -> Result<GrowthRecord> {
    let end = start + n;
    if end >= w.jacobians.len() {
        return Err(LabError::IncompleteWindow);
    }
    if !is_complete(map, w, start, end) {
        return Err(LabError::IncompleteWindow);
    }
    let vectors = cone_boundary(map.params.free_slope());
    let mut worst: Option<(f64, Vec<f64>)> = None;
    for v0 in vectors {
        let mut v = normalized(v0);
        let mut factors = Vec::with_capacity(n + 1);
        let mut log_total = 0.0;
        for j in &w.jacobians[start..=end] {
            let next = mat_vec(j, v);
            let g = sup_norm(next);
            factors.push(g);
            log_total += g.ln();
            v = normalized(next);
        }
        if worst.as_ref().is_none_or(|(t, _)| log_total < *t) {
            worst = Some((log_total, factors));
        }
    }
    let (log_total, factors) = worst.expect("at least one vector");
    Ok(GrowthRecord {
        window: [start, end],
        factors,
        complete: true,
        total: log_total.exp(),
        bound: map.params.rho.powf(n as f64 / 5.0),
    })
}

/// Finite-time unstable exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lyapunov {
    pub exponent: f64,
    /// Smallest block average over ten consecutive blocks.
    pub liminf: f64,
    pub steps: usize,
}

fn exponent_from_logs(logs: &[f64]) -> Lyapunov {
    let n = logs.len();
    let block = (n / 10).max(1);
    let liminf = logs
        .chunks(block)
        .filter(|c| c.len() == block)
        .map(|c| c.iter().sum::<f64>() / block as f64)
        .fold(f64::INFINITY, f64::min);
    Lyapunov {
        exponent: logs.iter().sum::<f64>() / n as f64,
        liminf,
        steps: n,
    }
}

fn track(jacobians: &[Mat2], v0: [f64; 2]) -> Vec<f64> {
    let mut v = normalized(v0);
    jacobians
        .iter()
        .map(|j| {
            let next = mat_vec(j, v);
            let g = sup_norm(next);
            v = normalized(next);
            g.ln()
        })
        .collect()
}

/// Exponent of the vertical vector over `steps` derivatives from `from`.
pub fn lyapunov_unstable(w: &OrbitWindow, from: usize, steps: usize) -> Result<Lyapunov> {
    if steps == 0 || from + steps > w.jacobians.len() {
        return Err(LabError::Escaped(w.jacobians.len().saturating_sub(from)));
    }
    Ok(exponent_from_logs(&track(
        &w.jacobians[from..from + steps],
        [0.0, 1.0],
    )))
}

/// Same along the orbit of a point under the map itself.
pub fn lyapunov_at_point(map: &PerturbedMap, pt: Point<DD>, steps: usize) -> Result<Lyapunov> {
    if steps == 0 {
        return Err(LabError::Degenerate("zero steps".into()));
    }
    let mut z = pt;
    let mut jacobians = Vec::with_capacity(steps);
    for i in 0..steps {
        jacobians.push(map.jacobian(z.approx())?);
        z = match map.apply(z) {
            Mapped::Point(q) => q,
            Mapped::Escaped => return Err(LabError::Escaped(i + 1)),
        };
    }
    Ok(exponent_from_logs(&track(&jacobians, [0.0, 1.0])))
}

/// Invariant direction estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionEstimate {
    /// Unit vector in the Euclidean norm, first nonzero coordinate positive.
    pub vector: [f64; 2],
    /// Angle between the estimates at `depth` and `depth - 1`.
    pub residual: f64,
    pub depth: usize,
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    let s = if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) { -1.0 } else { 1.0 };
    [s * v[0] / n, s * v[1] / n]
}

/// Unsigned angle between two lines.
pub fn line_angle(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (a, b) = (unit(a), unit(b));
    let cross = (a[0] * b[1] - a[1] * b[0]).abs();
    let dot = (a[0] * b[0] + a[1] * b[1]).abs();
    cross.atan2(dot)
}

fn push(jacobians: &[Mat2], v0: [f64; 2]) -> [f64; 2] {
    jacobians
        .iter()
        .fold(normalized(v0), |v, j| normalized(mat_vec(j, v)))
}

fn pull(jacobians: &[Mat2], v0: [f64; 2]) -> [f64; 2] {
    jacobians
        .iter()
        .rev()
        .fold(normalized(v0), |v, j| normalized(mat_vec(&cones::inverse2(j), v)))
}

fn check_off_critical(w: &OrbitWindow, theta: f64) -> Result<()> {
    if w
        .visits
        .iter()
        .any(|v| 3.0 * v.y * v.y + v.x + theta == 0.0)
    {
        return Err(LabError::OnCriticalOrbit);
    }
    Ok(())
}

/// Unstable direction at `index`: the vertical vector pushed from
/// `index - depth`.
pub fn unstable_direction(
    map: &PerturbedMap,
    w: &OrbitWindow,
    index: usize,
    depth: usize,
) -> Result<DirectionEstimate> {
    check_off_critical(w, map.theta)?;
    if depth == 0 || depth > index {
        return Err(LabError::Escaped(index));
    }
    let deep = push(&w.jacobians[index - depth..index], [0.0, 1.0]);
    let shallow = push(&w.jacobians[index - depth + 1..index], [0.0, 1.0]);
    Ok(DirectionEstimate {
        vector: unit(deep),
        residual: line_angle(deep, shallow),
        depth,
    })
}

/// Stable direction at `index`: the horizontal vector pulled back from
/// `index + depth`.
pub fn stable_direction(
    map: &PerturbedMap,
    w: &OrbitWindow,
    index: usize,
    depth: usize,
) -> Result<DirectionEstimate> {
    check_off_critical(w, map.theta)?;
    if depth == 0 || index + depth > w.jacobians.len() {
        return Err(LabError::Escaped(index + depth));
    }
    let deep = pull(&w.jacobians[index..index + depth], [1.0, 0.0]);
    let shallow = pull(&w.jacobians[index..index + depth - 1], [1.0, 0.0]);
    Ok(DirectionEstimate {
        vector: unit(deep),
        residual: line_angle(deep, shallow),
        depth,
    })
}

/// One-step sup-norm contraction of the stable direction at every index of
/// the window, with the direction pulled back from the window's end.
pub fn stable_factors(w: &OrbitWindow) -> Vec<f64> {
    let n = w.jacobians.len();
    let mut dirs = vec![[1.0, 0.0]; n + 1];
    for i in (0..n).rev() {
        dirs[i] = normalized(mat_vec(&cones::inverse2(&w.jacobians[i]), dirs[i + 1]));
    }
    (0..n)
        .map(|i| sup_norm(mat_vec(&w.jacobians[i], dirs[i])))
        .collect()
}

/// `Delta^n rho^{-n/5}`.
pub fn stable_rate(map: &PerturbedMap, n: usize) -> f64 {
    let p = &map.params;
    (p.delta * p.rho.powf(-0.2)).powi(n as i32)
}

/// Stable contraction over `from..=to` against `c * Delta^n rho^{-n/5}`.
pub fn stable_contraction_check(
    map: &PerturbedMap,
    w: &OrbitWindow,
    factors: &[f64],
    from: usize,
    to: usize,
    c: f64,
) -> Certificate {
    let n = to + 1 - from;
    let measured: f64 = factors[from..=to].iter().map(|f| f.ln()).sum::<f64>().exp();
    let bound = c * stable_rate(map, n);
    let pt = w.points[from].approx();
    Certificate {
        kind: "stable-contraction".into(),
        point: [pt.x, pt.y],
        window: [from, to],
        bound,
        measured,
        pass: measured <= bound,
    }
}

/// Relative residual of `|det M| |u x w| = |Mu x Mw|` for the product of
/// the derivatives at `from..to`.
pub fn det_angle_residual(w: &OrbitWindow, from: usize, to: usize, u: [f64; 2], v: [f64; 2]) -> f64 {
    let m = w.product(from, to);
    let det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).abs();
    let (mu, mv) = (mat_vec(&m, u), mat_vec(&m, v));
    let norm = |a: [f64; 2]| a[0].hypot(a[1]);
    let sin = |a: [f64; 2], b: [f64; 2]| (a[0] * b[1] - a[1] * b[0]).abs() / (norm(a) * norm(b));
    let lhs = det;
    let rhs = sin(mu, mv) / sin(u, v) * norm(mu) * norm(mv) / (norm(u) * norm(v));
    (lhs - rhs).abs() / lhs
}

/// Smallest `N' >= 1` with `A theta rho^{N'} > 2`.
pub fn doubling_n_prime(map: &PerturbedMap) -> Option<u32> {
    let p = &map.params;
    let at = p.a_cone * map.theta;
    if at <= 0.0 {
        return None;
    }
    (1..=10_000).find(|&n| at * p.rho.powi(n as i32) > 2.0)
}

/// Search cap `10 ceil(log 2 / (min(theta A, 1) log rho))`.
pub fn doubling_cap(map: &PerturbedMap) -> Option<usize> {
    let p = &map.params;
    let s = (map.theta * p.a_cone).min(1.0);
    (s > 0.0).then(|| 10 * (std::f64::consts::LN_2 / (s * p.rho.ln())).ceil() as usize)
}

/// Cap used when the formula gives none.
pub const FALLBACK_DOUBLING_CAP: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum Doubling {
    Success {
        n: usize,
        n_prime: u32,
        n_cap: usize,
    },
    Failure {
        witness: [f64; 2],
        reason: String,
    },
}

/// First step at which every boundary vector of the unstable cone at `pt`
/// has doubled in sup norm.
pub fn doubling_time(map: &PerturbedMap, pt: Point<DD>, cap: usize) -> Result<Option<usize>> {
    let ctx = cones::tube_context(map, pt);
    let vectors = cone_boundary(cones::unstable_slope(map, &ctx)?);
    let mut tracked: Vec<([f64; 2], f64, bool)> = vectors.iter().map(|&v| (v, 1.0, false)).collect();
    let mut z = pt;
    for n in 1..=cap {
        let j = map.jacobian(z.approx())?;
        for (v, growth, done) in tracked.iter_mut() {
            let before = sup_norm(*v);
            let next = mat_vec(&j, *v);
            *growth *= sup_norm(next) / before;
            *v = normalized(next);
            *done |= *growth >= 2.0;
        }
        if tracked.iter().all(|t| t.2) {
            return Ok(Some(n));
        }
        z = match map.apply(z) {
            Mapped::Point(q) => q,
            Mapped::Escaped => return Ok(None),
        };
    }
    Ok(None)
}

/// Uniform doubling time over a sample of points of the invariant set.
pub fn uniform_doubling_time(map: &PerturbedMap, sample: &[Point<DD>]) -> Doubling {
    let cap = doubling_cap(map).unwrap_or(FALLBACK_DOUBLING_CAP);
    let mut worst = 0;
    for &pt in sample {
        let a = pt.approx();
        let witness = [a.x, a.y];
        match doubling_time(map, pt, cap) {
            Ok(Some(n)) => worst = worst.max(n),
            Ok(None) => {
                return Doubling::Failure {
                    witness,
                    reason: format!("no doubling within {cap} steps"),
                }
            }
            Err(e) => {
                return Doubling::Failure {
                    witness,
                    reason: e.to_string(),
                }
            }
        }
    }
    match doubling_n_prime(map) {
        Some(n_prime) => Doubling::Success {
            n: worst,
            n_prime,
            n_cap: cap,
        },
        None => Doubling::Failure {
            witness: [f64::NAN, f64::NAN],
            reason: "no finite N' at theta = 0".into(),
        },
    }
}

/// The critical point's image, the critical point, then `rest`.
pub fn doubling_sample(map: &PerturbedMap, rest: &[Point<DD>]) -> Vec<Point<DD>> {
    let xi = Point::new(DD::zero(), DD::lit(map.frame.xi.y));
    let image = map.cubic(DD::zero(), DD::zero());
    let mut out = vec![image, xi];
    out.extend_from_slice(rest);
    out
}

/// Margin of unstable-cone invariance at the critical point of the
/// perturbed map, used to fit the linear-in-theta security angle.
pub fn critical_cone_margin(map: &PerturbedMap) -> Result<f64> {
    let xi = Point::new(DD::zero(), DD::lit(map.frame.xi.y));
    cones::check_unstable_invariance(map, xi)
}
