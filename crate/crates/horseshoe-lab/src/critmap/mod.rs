//! The perturbed horseshoe: cubic chart near the critical point, the glue
//! collar around it, and the affine map everywhere else.

mod cubic;
pub mod glue;

pub use cubic::solve_cubic_real;
pub use glue::{BlendProfile, Glue, GlueSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basemap::{
    self, branch, f0_apply, f0_inverse, gen_rectangle, rectangle_of, Mapped, Point,
    RectangleId, Row, SymbolWord, CRITICAL_CYCLE,
};
use crate::error::{LabError, Result};
use crate::params::{Orientation, ParamSet};
use crate::real::Real;

/// Share of the free room to neighbouring strips that the glue may use.
const COLLAR_FILL_X: f64 = 0.9;
const COLLAR_FILL_Y: f64 = 0.95;

/// Forward word of the critical point: R4 followed by the image cycle.
pub fn critical_forward_word(len: usize) -> Vec<u8> {
    std::iter::once(4)
        .chain(CRITICAL_CYCLE.iter().copied().cycle())
        .take(len)
        .collect()
}

/// Glue extent derived from the distance to the nearest strips and stripes
/// of the next generation.
pub fn glue_spec(p: &ParamSet) -> Result<GlueSpec> {
    // next strip of generation n_c to the right of the critical one starts at
    // the scaled position (l0 + d) / l0
    let collar_x = 1.0 + COLLAR_FILL_X * p.d / p.l0;
    let k = p.k_c as usize;
    let parent = critical_forward_word(k + 1);
    let last = *parent.last().expect("non-empty");
    let col = RectangleId::new(last)
        .expect("valid symbol")
        .band()
        .target_column();
    let own = critical_forward_word(k + 2);
    let own_last = *own.last().expect("non-empty");
    let mut room = f64::INFINITY;
    for row in 1..=3u8 {
        let sym = RectangleId::from_row_col(row, col).expect("valid").get();
        if sym == own_last {
            continue;
        }
        let mut word = parent.clone();
        word.push(sym);
        let g = gen_rectangle(p, &SymbolWord::new(Vec::new(), word))
            .ok_or_else(|| LabError::Degenerate("sibling stripe inadmissible".into()))?;
        let gap = if g.y0 > p.xi2 {
            g.y0 - p.xi2
        } else {
            p.xi2 - g.y1
        };
        room = room.min(gap);
    }
    Ok(GlueSpec {
        collar_x,
        collar_y: COLLAR_FILL_Y * room / p.beta_max,
        profile: BlendProfile::FactoredTwist,
    })
}

impl Glue {
    pub fn for_params(p: &ParamSet) -> Result<Glue> {
        Self::for_params_theta(p, p.theta)
    }

    pub fn for_params_theta(p: &ParamSet, theta: f64) -> Result<Glue> {
        if p.orientation != Orientation::default() {
            return Err(LabError::Degenerate(
                "the glue is built for the default branch orientations".into(),
            ));
        }
        Glue::new(glue_spec(p)?, p.scales_with(theta))
    }
}

/// Geometry attached to the critical point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalFrame {
    pub xi: Point,
    /// Image of the critical point under the affine map.
    pub xi_image: Point,
    /// Image of the critical point under the perturbed map.
    pub f_xi: Point,
    pub alpha: f64,
    pub beta: f64,
    pub image_cycle: [u8; 3],
    pub cycle_heights: [f64; 3],
    pub glue: GlueSpec,
}

impl CriticalFrame {
    pub fn new(p: &ParamSet) -> Result<CriticalFrame> {
        let heights = basemap::critical_cycle_heights(p)?;
        let middle = branch(p, Row::Middle);
        let xi = Point::new(0.0, p.xi2);
        let xi_image = Point::new(middle.horizontal.apply(0.0), heights[0]);
        let f_xi = Point::new(
            xi_image.x + 0.5 * middle.horizontal.scale * p.alpha_max,
            xi_image.y,
        );
        Ok(CriticalFrame {
            xi,
            xi_image,
            f_xi,
            alpha: p.alpha_max,
            beta: p.beta_max,
            image_cycle: CRITICAL_CYCLE,
            cycle_heights: heights,
            glue: glue_spec(p)?,
        })
    }

    /// Critical region as `(x0, x1, y0, y1)`.
    pub fn region(&self) -> (f64, f64, f64, f64) {
        (
            0.0,
            self.alpha,
            self.xi.y - self.beta,
            self.xi.y + self.beta,
        )
    }

    pub fn in_region(&self, pt: Point) -> bool {
        let (x0, x1, y0, y1) = self.region();
        (x0..=x1).contains(&pt.x) && (y0..=y1).contains(&pt.y)
    }

    /// Scaled offsets `(x / alpha, (y - xi2) / beta)`.
    pub fn scaled(&self, pt: Point) -> (f64, f64) {
        (pt.x / self.alpha, (pt.y - self.xi.y) / self.beta)
    }

    pub fn unscaled(&self, x: f64, y: f64) -> Point {
        Point::new(x * self.alpha, self.xi.y + y * self.beta)
    }
}

/// Which formula defines the perturbed map at a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Zone {
    Critical,
    Glue,
    Linear(Row),
    Gap,
}

/// The map `F_theta` with its cached frame and glue.
#[derive(Clone, Debug)]
pub struct PerturbedMap {
    pub params: ParamSet,
    pub theta: f64,
    pub frame: CriticalFrame,
    pub glue: Glue,
    h_scale: f64,
    v_scale: f64,
}

impl PerturbedMap {
    pub fn new(p: &ParamSet) -> Result<PerturbedMap> {
        Self::with_theta(p, p.theta)
    }

    pub fn with_theta(p: &ParamSet, theta: f64) -> Result<PerturbedMap> {
        let frame = CriticalFrame::new(p)?;
        let glue = Glue::for_params_theta(p, theta)?;
        let middle = branch(p, Row::Middle);
        Ok(PerturbedMap {
            params: p.with_theta(theta),
            theta,
            frame,
            glue,
            h_scale: middle.horizontal.scale,
            v_scale: middle.vertical.scale,
        })
    }

    pub fn zone(&self, pt: Point) -> Zone {
        if self.frame.in_region(pt) {
            return Zone::Critical;
        }
        let (x, y) = self.frame.scaled(pt);
        if self.glue.contains(x, y) {
            return Zone::Glue;
        }
        match basemap::row_of(&self.params, pt.y) {
            Some(r) if (0.0..=1.0).contains(&pt.x) => Zone::Linear(r),
            _ => Zone::Gap,
        }
    }

    /// Offsets `(x, y - xi2)` when `pt` lies in the critical region.
    pub fn critical_offsets<R: Real>(&self, pt: Point<R>) -> Option<(R, R)> {
        let x = pt.x;
        let y = pt.y - R::lit(self.frame.xi.y);
        let (a, b) = (R::lit(self.frame.alpha), R::lit(self.frame.beta));
        (x >= R::zero() && x <= a && y.abs() <= b).then_some((x, y))
    }

    /// Image under the cubic chart of the offsets `(x, y)` from the critical point.
    pub fn cubic<R: Real>(&self, x: R, y: R) -> Point<R> {
        let p = &self.params;
        let (u, v) = local_cubic_generic(p, x, y, self.theta);
        Point::new(R::lit(self.frame.f_xi.x) + u, R::lit(self.frame.f_xi.y) + v)
    }

    pub fn apply<R: Real>(&self, pt: Point<R>) -> Mapped<Point<R>> {
        if let Some((x, y)) = self.critical_offsets(pt) {
            return Mapped::Point(self.cubic(x, y));
        }
        let xs = (pt.x / R::lit(self.frame.alpha)).approx();
        let ys = ((pt.y - R::lit(self.frame.xi.y)) / R::lit(self.frame.beta)).approx();
        if self.glue.contains(xs, ys) {
            let (xp, yp) = self.glue.apply(xs, ys);
            let hx = R::lit(self.h_scale * self.frame.alpha);
            let vy = R::lit(self.v_scale * self.frame.beta);
            return Mapped::Point(Point::new(
                R::lit(self.frame.xi_image.x) + hx * R::lit(xp),
                R::lit(self.frame.xi_image.y) + vy * R::lit(yp),
            ));
        }
        f0_apply(&self.params, pt)
    }

    pub fn inverse<R: Real>(&self, q: Point<R>) -> Mapped<Point<R>> {
        let p = &self.params;
        let u = q.x - R::lit(self.frame.f_xi.x);
        let v = q.y - R::lit(self.frame.f_xi.y);
        if let Some((x, y)) = local_cubic_inverse_generic(p, u, v, self.theta) {
            return Mapped::Point(Point::new(x, R::lit(self.frame.xi.y) + y));
        }
        let hx = R::lit(self.h_scale * self.frame.alpha);
        let vy = R::lit(self.v_scale * self.frame.beta);
        let xs = ((q.x - R::lit(self.frame.xi_image.x)) / hx).approx();
        let ys = ((q.y - R::lit(self.frame.xi_image.y)) / vy).approx();
        if self.glue.contains(xs, ys) {
            return match self.glue.inverse(xs, ys) {
                Some((x, y)) => Mapped::Point(Point::new(
                    R::lit(self.frame.alpha) * R::lit(x),
                    R::lit(self.frame.xi.y) + R::lit(self.frame.beta) * R::lit(y),
                )),
                None => Mapped::Escaped,
            };
        }
        f0_inverse(p, q)
    }

    /// Derivative of the map: analytic in the affine and cubic zones,
    /// central differences of the glue in the collar.
    pub fn jacobian(&self, pt: Point) -> Result<[[f64; 2]; 2]> {
        let p = &self.params;
        if !(0.0..=1.0).contains(&pt.x) || !(0.0..=1.0).contains(&pt.y) {
            return Err(LabError::OutOfDomain(format!("({}, {})", pt.x, pt.y)));
        }
        match self.zone(pt) {
            Zone::Critical => {
                let y = pt.y - self.frame.xi.y;
                Ok(cubic_jacobian(p, pt.x, y, self.theta))
            }
            Zone::Glue => {
                let (xs, ys) = self.frame.scaled(pt);
                let d = self.glue.jacobian(xs, ys);
                let out = [self.h_scale * self.frame.alpha, self.v_scale * self.frame.beta];
                let inn = [self.frame.alpha, self.frame.beta];
                let mut j = [[0.0; 2]; 2];
                for r in 0..2 {
                    for c in 0..2 {
                        j[r][c] = out[r] * d[r][c] / inn[c];
                    }
                }
                Ok(j)
            }
            Zone::Linear(row) => {
                let (h, v) = branch(p, row).diagonal();
                Ok([[h, 0.0], [0.0, v]])
            }
            Zone::Gap => Err(LabError::GapPoint),
        }
    }

    /// Forward orbit of `pt` for `steps` steps, or the step at which it escaped.
    pub fn orbit<R: Real>(&self, pt: Point<R>, steps: usize) -> Result<Vec<Point<R>>> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(pt);
        let mut z = pt;
        for k in 0..steps {
            match self.apply(z) {
                Mapped::Point(next) => {
                    z = next;
                    out.push(z);
                }
                Mapped::Escaped => return Err(LabError::Escaped(k + 1)),
            }
        }
        Ok(out)
    }
}

fn local_cubic_generic<R: Real>(p: &ParamSet, x: R, y: R, theta: f64) -> (R, R) {
    let (b, c, e) = (R::lit(p.b), R::lit(p.c), R::lit(p.eps1));
    let u = -e * y;
    let v = b * x - c * y * (y * y + x + R::lit(theta));
    (u, v)
}

fn local_cubic_inverse_generic<R: Real>(p: &ParamSet, u: R, v: R, theta: f64) -> Option<(R, R)> {
    let (b, c, e) = (R::lit(p.b), R::lit(p.c), R::lit(p.eps1));
    let y = -u / e;
    let (alpha, beta) = (R::lit(p.alpha_max), R::lit(p.beta_max));
    // admit rounding of the forward map at the edges of the region
    let slack = R::lit(1e-9);
    if y.abs() > beta * (R::one() + slack) {
        return None;
    }
    let y = y.max(-beta).min(beta);
    let x = (v + c * y * (y * y + R::lit(theta))) / (b - c * y);
    if x < -alpha * slack || x > alpha * (R::one() + slack) {
        return None;
    }
    Some((x.max(R::zero()).min(alpha), y))
}

fn check_offsets(p: &ParamSet, x: f64, y: f64) -> Result<()> {
    if !(0.0..=p.alpha_max).contains(&x) || y.abs() > p.beta_max {
        return Err(LabError::OutOfDomain(format!(
            "offset ({x:e}, {y:e}) outside the critical region"
        )));
    }
    Ok(())
}

/// Cubic chart `(-eps1 y, b x - c y (y^2 + x + theta))` on offsets from the
/// critical point.
pub fn local_cubic(p: &ParamSet, x: f64, y: f64, theta: f64) -> Result<(f64, f64)> {
    check_offsets(p, x, y)?;
    Ok(local_cubic_generic(p, x, y, theta))
}

/// Closed-form inverse of [`local_cubic`].
pub fn local_cubic_inverse(p: &ParamSet, u: f64, v: f64, theta: f64) -> Result<(f64, f64)> {
    local_cubic_inverse_generic(p, u, v, theta)
        .ok_or_else(|| LabError::OutOfDomain(format!("({u:e}, {v:e}) is not in the chart image")))
}

pub fn cubic_jacobian(p: &ParamSet, x: f64, y: f64, theta: f64) -> [[f64; 2]; 2] {
    [
        [0.0, -p.eps1],
        [p.b - p.c * y, -p.c * (3.0 * y * y + x + theta)],
    ]
}

pub fn det2(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn apply(p: &ParamSet, pt: Point, theta: f64) -> Result<Mapped<Point>> {
    Ok(PerturbedMap::with_theta(p, theta)?.apply(pt))
}

pub fn inverse(p: &ParamSet, pt: Point, theta: f64) -> Result<Mapped<Point>> {
    Ok(PerturbedMap::with_theta(p, theta)?.inverse(pt))
}

pub fn jacobian(p: &ParamSet, pt: Point, theta: f64) -> Result<[[f64; 2]; 2]> {
    PerturbedMap::with_theta(p, theta)?.jacobian(pt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitPoint {
    pub k: i64,
    pub point: Point,
    pub rectangle: Option<RectangleId>,
}

/// Points `F^k(xi)` for `-n_back <= k <= n_fwd`. Forward heights are taken
/// from the exact periodic cycle rather than iterated, since iteration in
/// floating point drifts off the repelling cycle within a few periods.
pub fn critical_orbit(p: &ParamSet, n_back: usize, n_fwd: usize) -> Result<Vec<OrbitPoint>> {
    let frame = CriticalFrame::new(p)?;
    let bottom = branch(p, Row::Bottom);
    let mut back = Vec::with_capacity(n_back);
    let mut y = frame.xi.y;
    for k in 1..=n_back {
        y = bottom.vertical.invert(y);
        let point = Point::new(0.0, y);
        back.push(OrbitPoint {
            k: -(k as i64),
            point,
            rectangle: rectangle_of(p, point),
        });
    }
    back.reverse();
    let mut out = back;
    out.push(OrbitPoint {
        k: 0,
        point: frame.xi,
        rectangle: rectangle_of(p, frame.xi),
    });
    let mut x = frame.f_xi.x;
    for k in 1..=n_fwd {
        let phase = (k - 1) % 3;
        if k > 1 {
            let prev = RectangleId::new(CRITICAL_CYCLE[(k - 2) % 3])
                .expect("valid")
                .band();
            x = branch(p, prev).horizontal.apply(x);
        }
        let point = Point::new(x, frame.cycle_heights[phase]);
        out.push(OrbitPoint {
            k: k as i64,
            point,
            rectangle: rectangle_of(p, point),
        });
    }
    Ok(out)
}

/// Random admissible forward word for the critical image that avoids R4 and
/// R7, has a symbol of R5 or R6 at position `k_c`, and keeps visiting both
/// the middle and the top rows.
pub fn aperiodic_itinerary(k_c: u32, len: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut word = vec![8u8];
    let mut since_middle = 0usize;
    let mut since_top = 0usize;
    while word.len() < len {
        let last = *word.last().expect("non-empty");
        let col = RectangleId::new(last).expect("valid").band().target_column();
        let mut options: Vec<u8> = (1..=3u8)
            .map(|row| RectangleId::from_row_col(row, col).expect("valid").get())
            .filter(|s| *s != 4 && *s != 7)
            .collect();
        let pos = word.len();
        if pos + 1 == k_c as usize {
            options.retain(|s| (1..=3).contains(s));
        } else if pos == k_c as usize {
            options.retain(|s| *s == 5 || *s == 6);
        } else if since_middle > 6 {
            options.retain(|s| (4..=6).contains(s));
        } else if since_top > 6 {
            options.retain(|s| (1..=3).contains(s));
        }
        // column one only offers R1 once R4 and R7 are excluded
        let next = if options.is_empty() {
            RectangleId::from_row_col(1, col).expect("valid").get()
        } else {
            options[rng.gen_range(0..options.len())]
        };
        since_middle = if (4..=6).contains(&next) { 0 } else { since_middle + 1 };
        since_top = if (1..=3).contains(&next) { 0 } else { since_top + 1 };
        word.push(next);
    }
    word
}

#[cfg(test)]
mod tests;
