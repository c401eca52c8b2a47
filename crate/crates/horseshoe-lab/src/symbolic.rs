//! Coding and decoding between points of the invariant set and finite
//! windows of admissible symbol sequences.
//!
//! Decoding runs two sweeps over the window until they agree: horizontal
//! positions are pushed forward from the past, vertical positions are pulled
//! back from the future. Away from the critical region the two coordinates
//! decouple; at a visit the cubic chart couples them and the vertical
//! position is recovered by solving the cubic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basemap::{
    branch, column_left, rectangle_of, row_bottom, Affine1, Mapped, Point,
    RectangleId, SymbolWord, CRITICAL_CYCLE,
};
use crate::critmap::{solve_cubic_real, PerturbedMap};
use crate::error::{LabError, Result};
use crate::real::{Interval, Real, DD};

const MAX_SWEEPS: usize = 40;
const SWEEP_TOL: f64 = 1e-30;
/// Relative widening of cubic roots in the enclosure pass.
const ROOT_PAD: f64 = 1e-12;

fn band(s: u8) -> crate::basemap::Row {
    RectangleId::new(s).expect("validated symbol").band()
}

/// A decoded window: the point for the current symbol, its orbit across the
/// window, and a box enclosing the set of points with the same window.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub word: SymbolWord,
    pub point: Point<DD>,
    /// Orbit points for every symbol of the window, oldest first.
    pub orbit: Vec<Point<DD>>,
    /// Window indices (oldest is 0) at which the orbit is in the critical region.
    pub visits: Vec<usize>,
    pub x_box: Interval,
    pub y_box: Interval,
}

impl Decoded {
    /// Index of the current symbol in `orbit`.
    pub fn current(&self) -> usize {
        self.word.backward.len()
    }

    pub fn diameter(&self) -> (f64, f64) {
        (self.x_box.width(), self.y_box.width())
    }
}

fn cubic_value<R: Real>(map: &PerturbedMap, x: R, y: R) -> R {
    let p = &map.params;
    R::lit(p.b) * x - R::lit(p.c) * y * (y * y + x + R::lit(map.theta))
}

/// Offset `y` with `b x - c y (y^2 + x + theta) = v`, refined in double-double.
fn solve_visit_height(map: &PerturbedMap, x: DD, v: DD) -> Option<DD> {
    let p = &map.params;
    let xf = x.approx();
    let roots = solve_cubic_real(-p.c, 0.0, -p.c * (xf + map.theta), p.b * xf - v.approx()).ok()?;
    let mut y = DD::from(*roots.first()?);
    let mut last_step = f64::INFINITY;
    for _ in 0..80 {
        let f = cubic_value(map, x, y) - v;
        let df = -(DD::lit(p.c) * (DD::lit(3.0) * y * y + x + DD::lit(map.theta)));
        if df.approx() == 0.0 {
            break;
        }
        let step = f / df;
        y = y - step;
        let s = step.approx().abs();
        if s <= 1e-34 * p.beta_max || s >= last_step {
            break;
        }
        last_step = s;
    }
    Some(y)
}

fn column_centre(map: &PerturbedMap, s: u8) -> f64 {
    let p = &map.params;
    column_left(p, RectangleId::new(s).expect("valid").col()) + 0.5 * p.l0
}

fn row_centre(map: &PerturbedMap, s: u8) -> f64 {
    row_bottom(&map.params, band(s)) + 0.5 * map.params.l0
}

/// The window after a visit is too short to pin the height and is
/// consistent with the forced continuation of every visit.
fn truncated_visit_tail(tail: &[u8]) -> bool {
    tail.len() <= 2 && tail.iter().zip(CRITICAL_CYCLE.iter()).all(|(a, b)| a == b)
}

/// Point of the perturbed invariant set whose orbit follows `word`.
pub fn decode(map: &PerturbedMap, word: &SymbolWord) -> Result<Decoded> {
    if let Some(i) = word.first_inadmissible() {
        return Err(LabError::Inadmissible(i));
    }
    if word.forward.is_empty() {
        return Err(LabError::Parse("decoding needs a current symbol".into()));
    }
    let p = &map.params;
    let s: Vec<u8> = word.symbols().collect();
    let len = s.len();
    let alpha = DD::lit(p.alpha_max);
    let (fx, fy, xi2) = (
        DD::lit(map.frame.f_xi.x),
        DD::lit(map.frame.f_xi.y),
        DD::lit(map.frame.xi.y),
    );
    let mut xs = vec![DD::zero(); len];
    let mut ys = vec![DD::zero(); len];
    // vertical offset from the critical point at each visit
    let mut visit: Vec<Option<DD>> = vec![None; len];
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let old = (xs.clone(), ys.clone());
        xs[0] = DD::lit(column_centre(map, s[0]));
        for i in 0..len - 1 {
            xs[i + 1] = match visit[i] {
                Some(dy) => fx - DD::lit(p.eps1) * dy,
                None => branch(p, band(s[i])).horizontal.apply(xs[i]),
            };
        }
        let mut next_visit = vec![None; len];
        let mut i = len;
        while i > 0 {
            i -= 1;
            let candidate = s[i] == 4 && xs[i] >= DD::zero() && xs[i] <= alpha;
            if candidate && truncated_visit_tail(&s[i + 1..]) {
                next_visit[i] = Some(DD::zero());
                ys[i] = xi2;
                // re-anchor the short tail on the visit
                if i + 1 < len {
                    ys[i + 1] = fy + cubic_value(map, xs[i], DD::zero());
                }
                if i + 2 < len {
                    ys[i + 2] = branch(p, band(s[i + 1])).vertical.apply(ys[i + 1]);
                }
                continue;
            }
            if i == len - 1 {
                ys[i] = DD::lit(row_centre(map, s[i]));
                continue;
            }
            if candidate {
                if let Some(dy) = solve_visit_height(map, xs[i], ys[i + 1] - fy) {
                    if dy.abs() <= DD::lit(p.beta_max) {
                        next_visit[i] = Some(dy);
                        ys[i] = xi2 + dy;
                        continue;
                    }
                }
            }
            ys[i] = branch(p, band(s[i])).vertical.invert(ys[i + 1]);
        }
        let same_pattern = next_visit
            .iter()
            .zip(&visit)
            .all(|(a, b)| a.is_some() == b.is_some());
        visit = next_visit;
        let change = xs
            .iter()
            .zip(&old.0)
            .chain(ys.iter().zip(&old.1))
            .map(|(a, b)| (*a - *b).approx().abs())
            .fold(0.0, f64::max);
        if same_pattern && change <= SWEEP_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LabError::NoConvergence(format!("decoding {word}")));
    }
    let orbit: Vec<Point<DD>> = xs.iter().zip(&ys).map(|(&x, &y)| Point::new(x, y)).collect();
    let visits: Vec<usize> = (0..len).filter(|&i| visit[i].is_some()).collect();
    let (x_box, y_box) = enclosure(map, &s, &visits, word.backward.len(), &xs);
    Ok(Decoded {
        word: word.clone(),
        point: orbit[word.backward.len()],
        orbit,
        visits,
        x_box,
        y_box,
    })
}

fn affine_image(map: &Affine1, iv: Interval) -> Interval {
    Interval::new(map.apply(iv.lo), map.apply(iv.hi)).outward()
}

fn affine_preimage(map: &Affine1, iv: Interval) -> Interval {
    Interval::new(map.invert(iv.lo), map.invert(iv.hi)).outward()
}

fn clip(iv: Interval, lo: f64, hi: f64) -> Interval {
    Interval {
        lo: iv.lo.max(lo),
        hi: iv.hi.min(hi),
    }
}

fn padded_root(map: &PerturbedMap, x: f64, v: f64) -> f64 {
    let p = &map.params;
    let roots = solve_cubic_real(-p.c, 0.0, -p.c * (x + map.theta), p.b * x - v)
        .unwrap_or_default();
    roots.first().copied().unwrap_or(0.0)
}

/// Box around the window's cylinder at the current index, following the
/// visit pattern found by the sweeps.
fn enclosure(
    map: &PerturbedMap,
    s: &[u8],
    visits: &[usize],
    current: usize,
    xs: &[DD],
) -> (Interval, Interval) {
    let p = &map.params;
    let len = s.len();
    let beta = p.beta_max;
    let (fx, fy, xi2) = (map.frame.f_xi.x, map.frame.f_xi.y, map.frame.xi.y);
    let is_visit = |i: usize| visits.contains(&i);
    let column = |i: usize| {
        let left = column_left(p, RectangleId::new(s[i]).expect("valid").col());
        (left, left + p.l0)
    };
    let row = |i: usize| {
        let lo = row_bottom(p, band(s[i]));
        (lo, lo + p.l0)
    };
    let mut dy = vec![Interval::new(-beta, beta); len];
    let mut xb = vec![Interval::point(0.0); len];
    let mut yb = vec![Interval::point(0.0); len];
    for _ in 0..2 {
        let (lo, hi) = column(0);
        xb[0] = Interval::new(lo, hi);
        for i in 0..len - 1 {
            let next = if is_visit(i) {
                (dy[i].scale(-p.eps1)).shift(fx)
            } else {
                affine_image(&branch(p, band(s[i])).horizontal, xb[i])
            };
            let (lo, hi) = column(i + 1);
            xb[i + 1] = clip(next, lo, hi);
        }
        let (lo, hi) = row(len - 1);
        yb[len - 1] = Interval::new(lo, hi);
        for i in (0..len).rev() {
            if is_visit(i) {
                let target = if i + 1 < len {
                    Interval::new(yb[i + 1].lo - fy, yb[i + 1].hi - fy).outward()
                } else {
                    Interval::new(f64::NEG_INFINITY, f64::INFINITY)
                };
                let x = clip(xb[i], 0.0, p.alpha_max);
                let a = padded_root(map, x.lo, target.hi.min(1.0));
                let b = padded_root(map, x.hi, target.lo.max(-1.0));
                let pad = ROOT_PAD * beta;
                dy[i] = clip(Interval::new(a - pad, b + pad), -beta, beta);
                if i + 1 == len || truncated_visit_tail(&s[i + 1..]) {
                    dy[i] = Interval::new(-beta, beta);
                }
                yb[i] = dy[i].shift(xi2);
            } else if i + 1 < len {
                let (lo, hi) = row(i);
                yb[i] = clip(affine_preimage(&branch(p, band(s[i])).vertical, yb[i + 1]), lo, hi);
            }
        }
    }
    let x = xs[current].approx();
    // the sweep point itself anchors boxes thinner than an ulp
    let xbox = xb[current].hull(&Interval::point(x));
    (xbox, yb[current])
}

/// Word coded before an escape, with the signed step of the escape.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("orbit escaped at step {escaped_at} after coding {word}")]
pub struct PartialCode {
    pub word: SymbolWord,
    pub escaped_at: i64,
}

/// Rectangles visited by `pt` over `n_back` steps into the past and
/// `n_fwd` steps into the future.
pub fn code(
    map: &PerturbedMap,
    pt: Point<DD>,
    n_back: usize,
    n_fwd: usize,
) -> std::result::Result<SymbolWord, PartialCode> {
    let p = &map.params;
    let mut forward = Vec::with_capacity(n_fwd + 1);
    let mut backward = Vec::with_capacity(n_back);
    let partial = |backward: &Vec<u8>, forward: &Vec<u8>, at: i64| {
        let mut b = backward.clone();
        b.reverse();
        PartialCode {
            word: SymbolWord::new(b, forward.clone()),
            escaped_at: at,
        }
    };
    let mut z = pt;
    for j in 0..=n_fwd {
        match rectangle_of(p, z) {
            Some(r) => forward.push(r.get()),
            None => return Err(partial(&backward, &forward, j as i64)),
        }
        if j < n_fwd {
            match map.apply(z) {
                Mapped::Point(q) => z = q,
                Mapped::Escaped => return Err(partial(&backward, &forward, j as i64 + 1)),
            }
        }
    }
    let mut z = pt;
    for j in 1..=n_back {
        let at = -(j as i64);
        match map.inverse(z) {
            Mapped::Point(q) => z = q,
            Mapped::Escaped => return Err(partial(&backward, &forward, at)),
        }
        match rectangle_of(p, z) {
            Some(r) => backward.push(r.get()),
            None => return Err(partial(&backward, &forward, at)),
        }
    }
    backward.reverse();
    Ok(SymbolWord::new(backward, forward))
}

/// Uniformly random admissible continuation of `start` to `len` symbols.
pub fn random_admissible(rng: &mut impl Rng, start: &[u8], len: usize) -> Vec<u8> {
    let mut out = start.to_vec();
    if out.is_empty() {
        out.push(rng.gen_range(1..=9));
    }
    while out.len() < len {
        let last = *out.last().expect("non-empty");
        let col = band(last).target_column();
        let row = rng.gen_range(1..=3u8);
        out.push(RectangleId::from_row_col(row, col).expect("valid").get());
    }
    out.truncate(len.max(start.len()));
    out
}

/// Random admissible word split into `n_back` past symbols and `n_fwd + 1`
/// current-and-future symbols.
pub fn random_word(rng: &mut impl Rng, n_back: usize, n_fwd: usize) -> SymbolWord {
    let all = random_admissible(rng, &[], n_back + n_fwd + 1);
    SymbolWord::new(all[..n_back].to_vec(), all[n_back..].to_vec())
}

/// Random admissible predecessor of `s`.
pub fn random_predecessor(rng: &mut impl Rng, s: u8) -> u8 {
    let col = RectangleId::new(s).expect("valid").col();
    let row = crate::basemap::Row::from_target_column(col).expect("valid column");
    RectangleId::from_row_col(row.index(), rng.gen_range(1..=3))
        .expect("valid")
        .get()
}

/// Admissible word of length `len` with a critical visit at index `visit`:
/// a run of `run` sevens before it, the forced continuation after it, random
/// symbols elsewhere.
pub fn word_with_visit(rng: &mut impl Rng, len: usize, visit: usize, run: usize) -> Vec<u8> {
    word_with_visits(rng, len, &[visit], run)
}

/// Same with several visits; each needs `run + 4` symbols of room after
/// the previous one.
pub fn word_with_visits(rng: &mut impl Rng, len: usize, visits: &[usize], run: usize) -> Vec<u8> {
    let mut word: Vec<u8> = Vec::new();
    for &visit in visits {
        let run_start = visit.saturating_sub(run).max(word.len());
        if run_start > word.len() {
            let start = word.clone();
            word = random_admissible(rng, &start, run_start);
            if word.len() > start.len() {
                // swapping the row keeps the column, so the previous step stays admissible
                let last = word.last_mut().expect("non-empty");
                let col = RectangleId::new(*last).expect("valid").col();
                *last = RectangleId::from_row_col(3, col).expect("valid").get();
            }
        }
        word.extend(std::iter::repeat_n(7, visit - word.len()));
        word.push(4);
        word.extend(CRITICAL_CYCLE.iter().copied());
    }
    let mut out = random_admissible(rng, &word, len.max(word.len()));
    out.truncate(len.max(visits.last().map_or(0, |v| v + 1)));
    out
}

/// Outcome of an expansivity scan over pairs of points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expansivity {
    /// Signed step at which each pair first separates by more than `d`;
    /// `None` if it stays within `d` for `|n| <= N` (or the points coincide).
    pub separation: Vec<Option<i64>>,
    pub horizon: usize,
}

impl Expansivity {
    /// Every distinct pair separates within the horizon.
    pub fn all_separate(&self, identical: &[bool]) -> bool {
        self.separation
            .iter()
            .zip(identical)
            .all(|(s, same)| *same || s.is_some())
    }
}

fn sup_dist(a: Point<DD>, b: Point<DD>) -> f64 {
    let dx = (a.x - b.x).approx().abs();
    let dy = (a.y - b.y).approx().abs();
    dx.max(dy)
}

/// First step `|n| <= horizon` where each pair is more than `d` apart.
pub fn expansivity_check(
    map: &PerturbedMap,
    pairs: &[(Point<DD>, Point<DD>)],
    horizon: usize,
) -> Expansivity {
    let d = map.params.d;
    let separation = pairs
        .iter()
        .map(|&(a, b)| {
            if sup_dist(a, b) > d {
                return Some(0);
            }
            let (mut fa, mut fb) = (a, b);
            let (mut ba, mut bb) = (a, b);
            let (mut fwd_alive, mut back_alive) = (true, true);
            for n in 1..=horizon {
                if fwd_alive {
                    match (map.apply(fa), map.apply(fb)) {
                        (Mapped::Point(x), Mapped::Point(y)) => {
                            fa = x;
                            fb = y;
                            if sup_dist(fa, fb) > d {
                                return Some(n as i64);
                            }
                        }
                        (Mapped::Point(_), _) | (_, Mapped::Point(_)) => return Some(n as i64),
                        _ => fwd_alive = false,
                    }
                }
                if back_alive {
                    match (map.inverse(ba), map.inverse(bb)) {
                        (Mapped::Point(x), Mapped::Point(y)) => {
                            ba = x;
                            bb = y;
                            if sup_dist(ba, bb) > d {
                                return Some(-(n as i64));
                            }
                        }
                        (Mapped::Point(_), _) | (_, Mapped::Point(_)) => return Some(-(n as i64)),
                        _ => back_alive = false,
                    }
                }
            }
            None
        })
        .collect();
    Expansivity {
        separation,
        horizon,
    }
}

/// Pair of decoded points whose windows agree on `|j| <= common`.
#[derive(Clone, Debug)]
pub struct HolderSample {
    pub common: usize,
    pub distance: f64,
}

/// Least-squares fit of `ln(distance) = a - kappa * common`, reported as the
/// exponent `kappa / ln 2` against the shift metric `2^{-common}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub exponent: f64,
    pub intercept: f64,
    pub samples: usize,
    pub residual_rms: f64,
}

pub const MIN_HOLDER_SAMPLES: usize = 1000;

/// Pairs of decoded points whose windows agree on exactly `|j| <= q` for
/// `q` drawn from `1..=max_common`.
pub fn holder_samples(
    map: &PerturbedMap,
    count: usize,
    max_common: usize,
    seed: u64,
) -> Result<Vec<HolderSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let margin = 4;
    while out.len() < count {
        let q = rng.gen_range(1..=max_common);
        let half = q + margin;
        let base = random_admissible(&mut rng, &[], 2 * half + 1);
        let (first, last) = (half - q, half + q);
        // past: differ right before the common block
        let mut past = vec![0u8; first];
        loop {
            past[first - 1] = random_predecessor(&mut rng, base[first]);
            if past[first - 1] != base[first - 1] {
                break;
            }
        }
        for j in (0..first - 1).rev() {
            past[j] = random_predecessor(&mut rng, past[j + 1]);
        }
        let mut other = past;
        other.extend_from_slice(&base[first..=last]);
        // future: differ right after it
        loop {
            let next = random_admissible(&mut rng, &other, last + 2);
            if next[last + 1] != base[last + 1] {
                other = random_admissible(&mut rng, &next, 2 * half + 1);
                break;
            }
        }
        let split = |w: &[u8]| SymbolWord::new(w[..half].to_vec(), w[half..].to_vec());
        let a = decode(map, &split(&base))?;
        let b = decode(map, &split(&other))?;
        out.push(HolderSample {
            common: q,
            distance: sup_dist(a.point, b.point),
        });
    }
    Ok(out)
}

pub fn holder_modulus(samples: &[HolderSample]) -> Result<HolderFit> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.distance > 0.0)
        .map(|s| (s.common as f64, s.distance.ln()))
        .collect();
    if pts.len() < MIN_HOLDER_SAMPLES {
        return Err(LabError::InsufficientSamples(format!(
            "{} usable pairs, need {MIN_HOLDER_SAMPLES}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(LabError::Degenerate("all pairs share the same window".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(HolderFit {
        exponent: -slope / std::f64::consts::LN_2,
        intercept,
        samples: pts.len(),
        residual_rms: rms,
    })
}

/// Height of a visit whose forward window follows the critical point's for
/// `q` steps, against the cube-root bound `(d / (c rho^{q-2}))^{1/3}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeRootCheck {
    pub q: usize,
    pub height: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Decode visits sharing the first `q` forward symbols with the critical
/// point and then deviating, for every `q` in `qs`.
pub fn cube_root_law(map: &PerturbedMap, qs: &[usize], n_back: usize) -> Result<Vec<CubeRootCheck>> {
    let p = &map.params;
    let mut out = Vec::new();
    for &q in qs {
        let forward = crate::critmap::critical_forward_word(q + 1);
        // deviate at step q + 1: pick a successor off the critical cycle
        let last = *forward.last().expect("non-empty");
        let col = band(last).target_column();
        let expected = crate::critmap::critical_forward_word(q + 2)[q + 1];
        for row in 1..=3u8 {
            let alt = RectangleId::from_row_col(row, col).expect("valid").get();
            if alt == expected {
                continue;
            }
            let mut f = forward.clone();
            f.push(alt);
            let word = SymbolWord::new(vec![7; n_back], f);
            let dec = decode(map, &word)?;
            if dec.visits.contains(&n_back) {
                let height = (dec.point.y - DD::lit(map.frame.xi.y)).approx().abs();
                let bound = (p.d / (p.c * p.rho.powi(q as i32 - 2))).cbrt();
                out.push(CubeRootCheck {
                    q,
                    height,
                    bound,
                    pass: height <= bound,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
