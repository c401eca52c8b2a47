//! The piecewise affine horseshoe on the unit square with nine rectangles.
//!
//! Rectangles are numbered row-major from the top left. Each horizontal row
//! band is sent affinely into one vertical column: top to the right column,
//! middle to the centre column, bottom to the left column.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::params::{BranchOrientation, ParamSet};
use crate::real::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point<R = f64> {
    pub x: R,
    pub y: R,
}

impl<R: Real> Point<R> {
    pub fn new(x: R, y: R) -> Self {
        Point { x, y }
    }

    pub fn approx(&self) -> Point<f64> {
        Point::new(self.x.approx(), self.y.approx())
    }

    pub fn lift(p: Point<f64>) -> Self {
        Point::new(R::lit(p.x), R::lit(p.y))
    }
}

/// Result of applying a map that can leave the square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mapped<T> {
    Point(T),
    Escaped,
}

impl<T> Mapped<T> {
    pub fn point(self) -> Option<T> {
        match self {
            Mapped::Point(p) => Some(p),
            Mapped::Escaped => None,
        }
    }

    pub fn is_escaped(&self) -> bool {
        matches!(self, Mapped::Escaped)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Row {
    Top,
    Middle,
    Bottom,
}

impl Row {
    pub const ALL: [Row; 3] = [Row::Top, Row::Middle, Row::Bottom];

    /// One-based row index from the top.
    pub fn index(self) -> u8 {
        match self {
            Row::Top => 1,
            Row::Middle => 2,
            Row::Bottom => 3,
        }
    }

    /// Column receiving the image of this row band.
    pub fn target_column(self) -> u8 {
        match self {
            Row::Top => 3,
            Row::Middle => 2,
            Row::Bottom => 1,
        }
    }

    pub fn from_target_column(col: u8) -> Option<Row> {
        match col {
            3 => Some(Row::Top),
            2 => Some(Row::Middle),
            1 => Some(Row::Bottom),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RectangleId(u8);

impl RectangleId {
    pub fn new(id: u8) -> Option<RectangleId> {
        (1..=9).contains(&id).then_some(RectangleId(id))
    }

    pub fn from_row_col(row: u8, col: u8) -> Option<RectangleId> {
        if (1..=3).contains(&row) && (1..=3).contains(&col) {
            Some(RectangleId(3 * (row - 1) + col))
        } else {
            None
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn row(self) -> u8 {
        (self.0 - 1) / 3 + 1
    }

    pub fn col(self) -> u8 {
        (self.0 - 1) % 3 + 1
    }

    pub fn band(self) -> Row {
        match self.row() {
            1 => Row::Top,
            2 => Row::Middle,
            _ => Row::Bottom,
        }
    }
}

impl fmt::Display for RectangleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One-dimensional affine map `t -> scale * t + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine1 {
    pub scale: f64,
    pub offset: f64,
}

impl Affine1 {
    pub fn apply<R: Real>(&self, t: R) -> R {
        R::lit(self.scale) * t + R::lit(self.offset)
    }

    pub fn invert<R: Real>(&self, t: R) -> R {
        (t - R::lit(self.offset)) / R::lit(self.scale)
    }

    /// `self` after `first`.
    pub fn after(&self, first: &Affine1) -> Affine1 {
        Affine1 {
            scale: self.scale * first.scale,
            offset: self.scale * first.offset + self.offset,
        }
    }

    pub fn fixed_point(&self) -> Option<f64> {
        let denom = 1.0 - self.scale;
        (denom != 0.0).then(|| self.offset / denom)
    }
}

/// Affine branch of the horseshoe on one row band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Branch {
    pub row: Row,
    pub target_column: u8,
    pub flip_h: bool,
    pub flip_v: bool,
    pub rate: f64,
    pub horizontal: Affine1,
    pub vertical: Affine1,
}

impl Branch {
    /// Signed diagonal of the derivative.
    pub fn diagonal(&self) -> (f64, f64) {
        (self.horizontal.scale, self.vertical.scale)
    }
}

pub fn gap(p: &ParamSet) -> f64 {
    p.l0 + p.d
}

/// Left edge of column `col` (one-based).
pub fn column_left(p: &ParamSet, col: u8) -> f64 {
    (col as f64 - 1.0) * gap(p)
}

/// Bottom edge of a row band.
pub fn row_bottom(p: &ParamSet, row: Row) -> f64 {
    match row {
        Row::Top => 1.0 - p.l0,
        Row::Middle => p.l0 + p.d,
        Row::Bottom => 0.0,
    }
}

pub fn row_rate(p: &ParamSet, row: Row) -> f64 {
    match row {
        Row::Top => p.rho,
        _ => p.sigma,
    }
}

pub fn branch(p: &ParamSet, row: Row) -> Branch {
    let BranchOrientation { flip_h, flip_v } = match row {
        Row::Top => p.orientation.top,
        Row::Middle => p.orientation.middle,
        Row::Bottom => p.orientation.bottom,
    };
    let target_column = row.target_column();
    let left = column_left(p, target_column);
    let rate = row_rate(p, row);
    let base = row_bottom(p, row);
    let horizontal = if flip_h {
        Affine1 {
            scale: -p.lambda,
            offset: left + p.lambda,
        }
    } else {
        Affine1 {
            scale: p.lambda,
            offset: left,
        }
    };
    let vertical = if flip_v {
        Affine1 {
            scale: -rate,
            offset: 1.0 + rate * base,
        }
    } else {
        Affine1 {
            scale: rate,
            offset: -rate * base,
        }
    };
    Branch {
        row,
        target_column,
        flip_h,
        flip_v,
        rate,
        horizontal,
        vertical,
    }
}

pub fn row_of<R: Real>(p: &ParamSet, y: R) -> Option<Row> {
    Row::ALL.into_iter().find(|&r| {
        let lo = R::lit(row_bottom(p, r));
        y >= lo && y <= lo + R::lit(p.l0)
    })
}

pub fn column_of<R: Real>(p: &ParamSet, x: R) -> Option<u8> {
    (1..=3u8).find(|&c| {
        let lo = R::lit(column_left(p, c));
        x >= lo && x <= lo + R::lit(p.l0)
    })
}

fn in_unit<R: Real>(t: R) -> bool {
    t >= R::zero() && t <= R::one()
}

/// The unperturbed map. Defined on the three horizontal row bands.
pub fn f0_apply<R: Real>(p: &ParamSet, pt: Point<R>) -> Mapped<Point<R>> {
    if !in_unit(pt.x) {
        return Mapped::Escaped;
    }
    let Some(row) = row_of(p, pt.y) else {
        return Mapped::Escaped;
    };
    let br = branch(p, row);
    let out = Point::new(br.horizontal.apply(pt.x), br.vertical.apply(pt.y));
    if in_unit(out.y) {
        Mapped::Point(out)
    } else {
        Mapped::Escaped
    }
}

/// Branch inverse of [`f0_apply`] on the image columns.
pub fn f0_inverse<R: Real>(p: &ParamSet, pt: Point<R>) -> Mapped<Point<R>> {
    if !in_unit(pt.y) {
        return Mapped::Escaped;
    }
    for row in Row::ALL {
        let br = branch(p, row);
        let lo = R::lit(column_left(p, br.target_column));
        if pt.x >= lo && pt.x <= lo + R::lit(p.lambda) {
            let pre = Point::new(br.horizontal.invert(pt.x), br.vertical.invert(pt.y));
            return if in_unit(pre.x) && row_of(p, pre.y) == Some(row) {
                Mapped::Point(pre)
            } else {
                Mapped::Escaped
            };
        }
    }
    Mapped::Escaped
}

pub fn rectangle_of<R: Real>(p: &ParamSet, pt: Point<R>) -> Option<RectangleId> {
    let row = row_of(p, pt.y)?;
    let col = column_of(p, pt.x)?;
    RectangleId::from_row_col(row.index(), col)
}

pub fn transition_matrix() -> [[u8; 9]; 9] {
    let mut a = [[0u8; 9]; 9];
    for i in 1..=9u8 {
        let target = RectangleId(i).band().target_column();
        for j in 1..=9u8 {
            if RectangleId(j).col() == target {
                a[i as usize - 1][j as usize - 1] = 1;
            }
        }
    }
    a
}

pub fn admissible(from: u8, to: u8) -> bool {
    match (RectangleId::new(from), RectangleId::new(to)) {
        (Some(a), Some(b)) => a.band().target_column() == b.col(),
        _ => false,
    }
}

/// Symbols before the dot are past rectangles in time order; the first
/// symbol after the dot is the current rectangle.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SymbolWord {
    pub backward: Vec<u8>,
    pub forward: Vec<u8>,
}

impl SymbolWord {
    pub fn new(backward: Vec<u8>, forward: Vec<u8>) -> Self {
        SymbolWord { backward, forward }
    }

    /// Generation `(n, k)`; `k` counts forward steps after the current symbol.
    pub fn generation(&self) -> (usize, usize) {
        (self.backward.len(), self.forward.len().saturating_sub(1))
    }

    pub fn symbols(&self) -> impl Iterator<Item = u8> + '_ {
        self.backward.iter().chain(self.forward.iter()).copied()
    }

    /// Position of the first inadmissible pair, counted in the full sequence.
    pub fn first_inadmissible(&self) -> Option<usize> {
        let all: Vec<u8> = self.symbols().collect();
        if let Some(i) = all.iter().position(|&s| RectangleId::new(s).is_none()) {
            return Some(i);
        }
        all.windows(2)
            .position(|w| !admissible(w[0], w[1]))
            .map(|i| i + 1)
    }

    pub fn parse(text: &str) -> Result<SymbolWord> {
        let digits = |s: &str| -> Result<Vec<u8>> {
            s.chars()
                .filter(|c| !c.is_whitespace() && *c != ',')
                .map(|c| {
                    c.to_digit(10)
                        .filter(|d| (1..=9).contains(d))
                        .map(|d| d as u8)
                        .ok_or_else(|| LabError::Parse(format!("bad symbol `{c}`")))
                })
                .collect()
        };
        match text.split_once('.') {
            Some((b, f)) => Ok(SymbolWord::new(digits(b)?, digits(f)?)),
            None => Ok(SymbolWord::new(Vec::new(), digits(text)?)),
        }
    }
}

impl fmt::Display for SymbolWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.backward {
            write!(f, "{s}")?;
        }
        write!(f, ".")?;
        for s in &self.forward {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenRectangle {
    pub word: SymbolWord,
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl GenRectangle {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn contains(&self, pt: Point<f64>) -> bool {
        self.x0 <= pt.x && pt.x <= self.x1 && self.y0 <= pt.y && pt.y <= self.y1
    }

    pub fn contains_rect(&self, other: &GenRectangle) -> bool {
        self.x0 <= other.x0 && other.x1 <= self.x1 && self.y0 <= other.y0 && other.y1 <= self.y1
    }

    pub fn csv_header() -> &'static str {
        "word,x0,x1,y0,y1"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e}",
            self.word, self.x0, self.x1, self.y0, self.y1
        )
    }
}

fn interval_image(map: &Affine1, lo: f64, hi: f64) -> (f64, f64) {
    let (a, b) = (map.apply(lo), map.apply(hi));
    (a.min(b), a.max(b))
}

fn interval_preimage(map: &Affine1, lo: f64, hi: f64) -> (f64, f64) {
    let (a, b) = (map.invert(lo), map.invert(hi));
    (a.min(b), a.max(b))
}

/// Exact box of the cylinder set named by `word`, or `None` when the word
/// is inadmissible.
pub fn gen_rectangle(p: &ParamSet, word: &SymbolWord) -> Option<GenRectangle> {
    if word.first_inadmissible().is_some() {
        return None;
    }
    let rect = |s: u8| RectangleId(s);
    // horizontal extent from the past, pushed forward
    let (mut x0, mut x1) = (0.0, 1.0);
    let mut prev: Option<u8> = None;
    for s in word.backward.iter().copied() {
        let r = rect(s);
        if let Some(q) = prev {
            (x0, x1) = interval_image(&branch(p, rect(q).band()).horizontal, x0, x1);
        }
        let left = column_left(p, r.col());
        x0 = x0.max(left);
        x1 = x1.min(left + p.l0);
        prev = Some(s);
    }
    if let Some(q) = prev {
        (x0, x1) = interval_image(&branch(p, rect(q).band()).horizontal, x0, x1);
    }
    // vertical extent from the future, pulled back
    let (mut y0, mut y1) = (0.0, 1.0);
    for (i, s) in word.forward.iter().copied().enumerate().rev() {
        let r = rect(s);
        if i + 1 < word.forward.len() {
            (y0, y1) = interval_preimage(&branch(p, r.band()).vertical, y0, y1);
        }
        let lo = row_bottom(p, r.band());
        y0 = y0.max(lo);
        y1 = y1.min(lo + p.l0);
    }
    if let Some(&s) = word.forward.first() {
        let left = column_left(p, rect(s).col());
        x0 = x0.max(left);
        x1 = x1.min(left + p.l0);
    } else if let Some(q) = prev {
        let lo = row_bottom(p, rect(q).band());
        (y0, y1) = interval_image(&branch(p, rect(q).band()).vertical, lo, lo + p.l0);
        y0 = y0.max(0.0);
        y1 = y1.min(1.0);
    }
    Some(GenRectangle {
        word: word.clone(),
        x0,
        x1,
        y0,
        y1,
    })
}

/// Forward itinerary of `pt` under the unperturbed map, stopping early on escape.
pub fn itinerary<R: Real>(p: &ParamSet, pt: Point<R>, steps: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut z = pt;
    for i in 0..=steps {
        let Some(r) = rectangle_of(p, z) else { break };
        out.push(r.get());
        if i == steps {
            break;
        }
        match f0_apply(p, z) {
            Mapped::Point(next) => z = next,
            Mapped::Escaped => break,
        }
    }
    out
}

/// The periodic forward word of the image of the critical point.
pub const CRITICAL_CYCLE: [u8; 3] = [8, 1, 6];

/// Composition of the vertical branches along `word`, first symbol applied first.
pub fn vertical_along(p: &ParamSet, word: &[u8]) -> Affine1 {
    word.iter().fold(
        Affine1 {
            scale: 1.0,
            offset: 0.0,
        },
        |acc, &s| branch(p, RectangleId(s).band()).vertical.after(&acc),
    )
}

/// Heights of the periodic points with forward word `CRITICAL_CYCLE` shifted
/// to start at each phase.
pub fn critical_cycle_heights(p: &ParamSet) -> Result<[f64; 3]> {
    let cycle = vertical_along(p, &CRITICAL_CYCLE);
    let y = cycle
        .fixed_point()
        .ok_or_else(|| LabError::Degenerate("critical cycle has unit multiplier".into()))?;
    let mut heights = [y, 0.0, 0.0];
    for i in 1..3 {
        let prev = RectangleId(CRITICAL_CYCLE[i - 1]).band();
        heights[i] = branch(p, prev).vertical.apply(heights[i - 1]);
    }
    for (h, s) in heights.iter().zip(CRITICAL_CYCLE) {
        let band = RectangleId(s).band();
        if row_of(p, *h) != Some(band) {
            return Err(LabError::Degenerate(format!(
                "critical cycle leaves row of R{s}"
            )));
        }
    }
    Ok(heights)
}

/// Height of the critical point on the left edge of R4.
pub fn critical_height(p: &ParamSet) -> Result<f64> {
    let target = critical_cycle_heights(p)?[0];
    let xi2 = branch(p, Row::Middle).vertical.invert(target);
    if row_of(p, xi2) != Some(Row::Middle) {
        return Err(LabError::Degenerate(
            "critical height falls outside R4".into(),
        ));
    }
    Ok(xi2)
}
