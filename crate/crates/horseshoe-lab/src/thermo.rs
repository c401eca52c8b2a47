//! Transfer operators, pressure and equilibrium measures on the nine-symbol
//! subshift, truncated to admissible words of a fixed depth.
//!
//! A potential is treated as constant on depth-`m` cylinders. The truncated
//! operator is then a weighted Markov chain on `m`-words: each word has three
//! predecessors and three successors, and its dominant eigendata give the
//! pressure and the equilibrium state.

use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basemap::{rectangle_of, row_rate, Point, RectangleId, Row, SymbolWord};
use crate::critmap::PerturbedMap;
use crate::error::{LabError, Result};
use crate::params::ParamSet;
use crate::real::Real;
use crate::symbolic::decode;

pub const DEFAULT_DEPTH: usize = 8;
pub const EIGEN_TOL: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 20_000;

fn symbol(s: u8) -> RectangleId {
    RectangleId::new(s).expect("validated symbol")
}

fn successor(s: u8, row_digit: u8) -> u8 {
    let col = symbol(s).band().target_column();
    RectangleId::from_row_col(row_digit + 1, col).expect("valid").get()
}

/// Admissible forward words of one depth, indexed by the first symbol and
/// the row digits of the rest. Dropping the last symbol of a word divides its
/// index by three.
#[derive(Clone, Debug)]
pub struct WordSpace {
    depth: usize,
    symbols: Vec<u8>,
    pred: Vec<[u32; 3]>,
    succ: Vec<[u32; 3]>,
}

impl WordSpace {
    pub fn new(depth: usize) -> Result<WordSpace> {
        if depth < 2 {
            return Err(LabError::Degenerate(format!("word depth {depth} is below 2")));
        }
        if depth > 14 {
            return Err(LabError::Degenerate(format!("word depth {depth} is too large")));
        }
        let tail = 3usize.pow(depth as u32 - 1);
        let n = 9 * tail;
        let mut symbols = vec![0u8; n * depth];
        for i in 0..n {
            let w = &mut symbols[i * depth..(i + 1) * depth];
            w[0] = (i / tail) as u8 + 1;
            let mut rest = i % tail;
            for k in 1..depth {
                let place = 3usize.pow((depth - 1 - k) as u32);
                let digit = (rest / place) as u8;
                rest %= place;
                w[k] = successor(w[k - 1], digit);
            }
        }
        let mut space = WordSpace { depth, symbols, pred: Vec::new(), succ: Vec::new() };
        let mut pred = Vec::with_capacity(n);
        let mut succ = Vec::with_capacity(n);
        let mut buf = vec![0u8; depth];
        for i in 0..n {
            let w = space.word(i).to_vec();
            let row = Row::from_target_column(symbol(w[0]).col()).expect("column");
            let mut ps = [0u32; 3];
            buf[1..].copy_from_slice(&w[..depth - 1]);
            for (c, slot) in ps.iter_mut().enumerate() {
                buf[0] = RectangleId::from_row_col(row.index(), c as u8 + 1).expect("valid").get();
                *slot = space.index(&buf).expect("admissible") as u32;
            }
            let mut ss = [0u32; 3];
            buf[..depth - 1].copy_from_slice(&w[1..]);
            for (r, slot) in ss.iter_mut().enumerate() {
                buf[depth - 1] = successor(w[depth - 1], r as u8);
                *slot = space.index(&buf).expect("admissible") as u32;
            }
            pred.push(ps);
            succ.push(ss);
        }
        space.pred = pred;
        space.succ = succ;
        Ok(space)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.symbols.len() / self.depth
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn word(&self, i: usize) -> &[u8] {
        &self.symbols[i * self.depth..(i + 1) * self.depth]
    }

    /// Indices of `s·w` truncated to this depth, for the three admissible `s`.
    pub fn predecessors(&self, i: usize) -> [usize; 3] {
        self.pred[i].map(|j| j as usize)
    }

    /// Indices of the shifted word extended by each admissible symbol.
    pub fn successors(&self, i: usize) -> [usize; 3] {
        self.succ[i].map(|j| j as usize)
    }

    pub fn index(&self, word: &[u8]) -> Option<usize> {
        if word.len() != self.depth || !(1..=9).contains(&word[0]) {
            return None;
        }
        let mut idx = (word[0] - 1) as usize;
        for k in 1..word.len() {
            let s = RectangleId::new(word[k])?;
            if symbol(word[k - 1]).band().target_column() != s.col() {
                return None;
            }
            idx = 3 * idx + (s.row() - 1) as usize;
        }
        Some(idx)
    }
}

/// A real function on forward words, read on depth-`m` cylinders.
#[derive(Clone)]
pub enum Potential {
    Zero,
    Constant(f64),
    /// `-t log(vertical rate of the first symbol's row)`.
    RowRate { t: f64 },
    /// `sum_k decay^k weights[w_k - 1]`, Hölder for `decay < 1`.
    Geometric { weights: [f64; 9], decay: f64 },
    Custom { name: String, eval: Arc<dyn Fn(&[u8]) -> f64 + Send + Sync> },
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Zero => write!(f, "Zero"),
            Potential::Constant(k) => write!(f, "Constant({k})"),
            Potential::RowRate { t } => write!(f, "RowRate {{ t: {t} }}"),
            Potential::Geometric { weights, decay } => {
                write!(f, "Geometric {{ weights: {weights:?}, decay: {decay} }}")
            }
            Potential::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl Potential {
    /// `scale` times the height of the point of the invariant set whose
    /// forward itinerary starts with the word. This is a smooth observable
    /// pulled back through the coding.
    pub fn height(map: PerturbedMap, scale: f64) -> Potential {
        let eval = move |w: &[u8]| {
            decode(&map, &SymbolWord::new(Vec::new(), w.to_vec()))
                .map(|d| scale * d.point.y.approx())
                .unwrap_or(f64::NAN)
        };
        Potential::Custom { name: format!("height*{scale}"), eval: Arc::new(eval) }
    }

    pub fn eval(&self, p: &ParamSet, word: &[u8]) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Constant(k) => *k,
            Potential::RowRate { t } => -t * row_rate(p, symbol(word[0]).band()).ln(),
            Potential::Geometric { weights, decay } => {
                let mut scale = 1.0;
                let mut sum = 0.0;
                for &s in word {
                    sum += scale * weights[s as usize - 1];
                    scale *= decay;
                }
                sum
            }
            Potential::Custom { eval, .. } => eval(word),
        }
    }

    pub fn tabulate(&self, p: &ParamSet, space: &WordSpace) -> Result<Vec<f64>> {
        let table: Vec<f64> =
            (0..space.len()).into_par_iter().map(|i| self.eval(p, space.word(i))).collect();
        if table.iter().any(|v| !v.is_finite()) {
            return Err(LabError::NonFinite("potential"));
        }
        Ok(table)
    }

    /// Largest spread of the potential over the depth-`m+1` refinements of a
    /// depth-`m` cylinder.
    pub fn oscillation(&self, p: &ParamSet, m: usize) -> Result<f64> {
        let finer = WordSpace::new(m + 1)?;
        let table = self.tabulate(p, &finer)?;
        Ok(table
            .chunks(3)
            .map(|c| {
                let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
                hi - lo
            })
            .fold(0.0, f64::max))
    }
}

/// Depth-`m` transfer operator `(L h)(w) = sum_s e^{phi(s w)} h(s w)`.
/// Weights are stored as `e^{phi - shift}` to keep them in range.
#[derive(Clone, Debug)]
pub struct TransferOperator {
    pub space: WordSpace,
    pub potential: Vec<f64>,
    weights: Vec<f64>,
    shift: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Eigen {
    /// Eigenvalue of the operator with the original potential.
    pub log_lambda: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn normalize_l1(v: &mut [f64]) -> f64 {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    s
}

fn max_normalized(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(0.0, f64::max);
    v.iter().map(|x| x / m).collect()
}

impl TransferOperator {
    pub fn new(p: &ParamSet, potential: &Potential, depth: usize) -> Result<TransferOperator> {
        let space = WordSpace::new(depth)?;
        let table = potential.tabulate(p, &space)?;
        Ok(TransferOperator::from_table(space, table))
    }

    pub fn from_table(space: WordSpace, potential: Vec<f64>) -> TransferOperator {
        let shift = potential.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights = potential.iter().map(|v| (v - shift).exp()).collect();
        TransferOperator { space, potential, weights, shift }
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    fn apply_scaled(&self, h: &[f64]) -> Vec<f64> {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                self.space
                    .predecessors(i)
                    .iter()
                    .map(|&j| self.weights[j] * h[j])
                    .sum()
            })
            .collect()
    }

    fn adjoint_scaled(&self, nu: &[f64]) -> Vec<f64> {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let s: f64 = self.space.successors(i).iter().map(|&j| nu[j]).sum();
                self.weights[i] * s
            })
            .collect()
    }

    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        let factor = self.shift.exp();
        self.apply_scaled(h).into_iter().map(|v| v * factor).collect()
    }

    /// `L^*` on measures: `(L^* nu)(v) = e^{phi(v)} sum_{v -> w} nu(w)`.
    pub fn apply_adjoint(&self, nu: &[f64]) -> Vec<f64> {
        let factor = self.shift.exp();
        self.adjoint_scaled(nu).into_iter().map(|v| v * factor).collect()
    }

    /// Power iteration from a positive start; `adjoint` selects `L^*`.
    pub fn dominant(&self, start: &[f64], adjoint: bool) -> Result<Eigen> {
        if start.len() != self.len() || start.iter().any(|v| !(*v > 0.0)) {
            return Err(LabError::Degenerate("start vector must be positive".into()));
        }
        let mut v = start.to_vec();
        normalize_l1(&mut v);
        let mut residual = f64::INFINITY;
        for it in 1..=MAX_ITERATIONS {
            let mut w = if adjoint { self.adjoint_scaled(&v) } else { self.apply_scaled(&v) };
            let lambda: f64 = w.iter().sum();
            let vmax = v.iter().cloned().fold(0.0, f64::max);
            residual = w
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - lambda * b).abs())
                .fold(0.0, f64::max)
                / (lambda * vmax);
            normalize_l1(&mut w);
            v = w;
            if residual < EIGEN_TOL {
                return Ok(Eigen {
                    log_lambda: lambda.ln() + self.shift,
                    vector: v,
                    iterations: it,
                    residual,
                });
            }
        }
        Err(LabError::NoConvergence(format!(
            "power iteration residual {residual:.3e} after {MAX_ITERATIONS} steps"
        )))
    }

    pub fn uniform_start(&self) -> Vec<f64> {
        vec![1.0; self.len()]
    }
}

pub fn transfer_apply(p: &ParamSet, potential: &Potential, h: &[f64], depth: usize) -> Result<Vec<f64>> {
    let op = TransferOperator::new(p, potential, depth)?;
    if h.len() != op.len() {
        return Err(LabError::Degenerate(format!(
            "function has {} values, depth {depth} has {} words",
            h.len(),
            op.len()
        )));
    }
    Ok(op.apply(h))
}

pub fn pressure(p: &ParamSet, potential: &Potential, depth: usize) -> Result<f64> {
    let op = TransferOperator::new(p, potential, depth)?;
    Ok(op.dominant(&op.uniform_start(), false)?.log_lambda)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PressureCurve {
    pub points: Vec<(usize, f64)>,
}

impl PressureCurve {
    /// Ratios of successive differences `|P_{m+2} - P_{m+1}| / |P_{m+1} - P_m|`.
    pub fn difference_ratios(&self) -> Vec<f64> {
        let diffs: Vec<f64> = self.points.windows(2).map(|w| (w[1].1 - w[0].1).abs()).collect();
        diffs.windows(2).filter(|d| d[0] > 0.0).map(|d| d[1] / d[0]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,value\n");
        for (m, v) in &self.points {
            let _ = writeln!(out, "{m},{v:.17e}");
        }
        out
    }
}

pub fn pressure_curve(p: &ParamSet, potential: &Potential, depths: &[usize]) -> Result<PressureCurve> {
    let points = depths
        .iter()
        .map(|&m| pressure(p, potential, m).map(|v| (m, v)))
        .collect::<Result<_>>()?;
    Ok(PressureCurve { points })
}

/// Stationary Markov measure on depth-`m` words built from the dominant
/// eigendata: `mu(v) ~ h(v) nu(v)`, `P(v -> w) = e^{phi(v)} nu(w) / (lambda nu(v))`.
#[derive(Clone, Debug)]
pub struct CylinderMeasure {
    pub space: WordSpace,
    pub weights: Vec<f64>,
    /// Transition probabilities to the three successors of each word.
    pub conditional: Vec<[f64; 3]>,
    pub potential: Vec<f64>,
    pub pressure: f64,
    pub entropy: f64,
    pub integral: f64,
    pub eigen_residual: f64,
}

impl CylinderMeasure {
    pub fn depth(&self) -> usize {
        self.space.depth()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `|h + int phi - P|`.
    pub fn variational_gap(&self) -> f64 {
        (self.entropy + self.integral - self.pressure).abs()
    }

    /// Weights of depth `m+1` words, indexed as in `WordSpace::new(m + 1)`.
    pub fn extend(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.weights.len());
        for (w, c) in self.weights.iter().zip(&self.conditional) {
            out.extend(c.iter().map(|q| w * q));
        }
        out
    }

    /// Weights of the prefixes of length `depth`.
    pub fn marginal(&self, depth: usize) -> Result<Vec<f64>> {
        if depth == 0 || depth > self.depth() {
            return Err(LabError::Degenerate(format!("marginal depth {depth} out of range")));
        }
        let group = 3usize.pow((self.depth() - depth) as u32);
        Ok(self.weights.chunks(group).map(|c| c.iter().sum()).collect())
    }

    /// Largest `|sum_s mu(s u) - mu(u)|` over depth-`m` words `u`, using the
    /// depth-`m+1` extension.
    pub fn shift_invariance_error(&self) -> f64 {
        let ext = self.extend();
        let mut dropped = vec![0.0; self.weights.len()];
        for (i, w) in ext.iter().enumerate() {
            let v = i / 3;
            let j = self.space.successors(v)[i % 3];
            dropped[j] += w;
        }
        dropped
            .iter()
            .zip(&self.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Measure of a forward word of any length at least the depth.
    pub fn cylinder(&self, word: &[u8]) -> Option<f64> {
        let m = self.depth();
        if word.len() < m {
            return None;
        }
        let mut v = self.space.index(&word[..m])?;
        let mut mass = self.weights[v];
        for k in m..word.len() {
            let r = RectangleId::new(word[k])?;
            if symbol(word[k - 1]).band().target_column() != r.col() {
                return None;
            }
            let digit = (r.row() - 1) as usize;
            mass *= self.conditional[v][digit];
            v = self.space.successors(v)[digit];
        }
        Some(mass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("word,weight\n");
        for (i, w) in self.weights.iter().enumerate() {
            for s in self.space.word(i) {
                out.push((b'0' + s) as char);
            }
            let _ = writeln!(out, ",{w:.17e}");
        }
        out
    }
}

pub fn equilibrium_measure(p: &ParamSet, potential: &Potential, depth: usize) -> Result<CylinderMeasure> {
    let op = TransferOperator::new(p, potential, depth)?;
    equilibrium_from_operator(&op)
}

pub fn equilibrium_from_operator(op: &TransferOperator) -> Result<CylinderMeasure> {
    let start = op.uniform_start();
    let right = op.dominant(&start, false)?;
    let left = op.dominant(&start, true)?;
    let h = &right.vector;
    let nu = &left.vector;
    if h.iter().chain(nu.iter()).any(|v| !(*v > 0.0)) {
        return Err(LabError::Degenerate("dominant eigenvector is not positive".into()));
    }
    let lambda_scaled = (left.log_lambda - op.shift).exp();
    let mut weights: Vec<f64> = h.iter().zip(nu).map(|(a, b)| a * b).collect();
    normalize_l1(&mut weights);
    let conditional: Vec<[f64; 3]> = (0..op.len())
        .map(|v| {
            let succ = op.space.successors(v);
            let mut c = succ.map(|w| op.weights[v] * nu[w] / (lambda_scaled * nu[v]));
            let s: f64 = c.iter().sum();
            c.iter_mut().for_each(|q| *q /= s);
            c
        })
        .collect();
    let mut entropy = 0.0;
    let mut integral = 0.0;
    for v in 0..op.len() {
        let cond: f64 = conditional[v].iter().filter(|q| **q > 0.0).map(|q| q * q.ln()).sum();
        entropy -= weights[v] * cond;
        integral += weights[v] * op.potential[v];
    }
    Ok(CylinderMeasure {
        space: op.space.clone(),
        weights,
        conditional,
        potential: op.potential.clone(),
        pressure: right.log_lambda,
        entropy,
        integral,
        eigen_residual: right.residual.max(left.residual),
    })
}

/// `max |<L h, nu> - lambda <h, nu>| / (lambda <h, nu>)` over random positive `h`.
pub fn duality_residual(op: &TransferOperator, trials: usize, seed: u64) -> Result<f64> {
    let start = op.uniform_start();
    let left = op.dominant(&start, true)?;
    let lambda = left.log_lambda.exp();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let h: Vec<f64> = (0..op.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let lh = op.apply(&h);
        let lhs: f64 = lh.iter().zip(&left.vector).map(|(a, b)| a * b).sum();
        let rhs: f64 = lambda * h.iter().zip(&left.vector).map(|(a, b)| a * b).sum::<f64>();
        worst = worst.max((lhs - rhs).abs() / rhs);
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Uniqueness {
    pub starts: usize,
    /// Largest max-norm distance between eigenvectors scaled to unit maximum.
    pub spread: f64,
    pub log_lambda_spread: f64,
}

/// Power iteration from `starts` random positive vectors.
pub fn uniqueness_check(op: &TransferOperator, starts: usize, seed: u64) -> Result<Uniqueness> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reference: Option<(Vec<f64>, f64)> = None;
    let mut spread: f64 = 0.0;
    let mut log_spread: f64 = 0.0;
    for _ in 0..starts {
        let start: Vec<f64> = (0..op.len()).map(|_| rng.gen_range(0.01..1.0)).collect();
        let e = op.dominant(&start, false)?;
        let v = max_normalized(&e.vector);
        match &reference {
            None => reference = Some((v, e.log_lambda)),
            Some((r, l)) => {
                let d = r.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                spread = spread.max(d);
                log_spread = log_spread.max((l - e.log_lambda).abs());
            }
        }
    }
    Ok(Uniqueness { starts, spread, log_lambda_spread: log_spread })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GibbsBounds {
    pub samples: usize,
    pub length: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Smallest `K` with every ratio in `[1/K, K]`.
    pub k: f64,
}

/// Scans `mu([w]) / exp(S_n phi(w) - n P)` over random admissible words of
/// `length` symbols, where `S_n` sums the potential over the `n` depth-`m`
/// windows of `w`.
pub fn gibbs_bounds(measure: &CylinderMeasure, samples: usize, length: usize, seed: u64) -> Result<GibbsBounds> {
    let m = measure.depth();
    if length < m {
        return Err(LabError::Degenerate(format!("Gibbs words need length at least {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for _ in 0..samples {
        let mut word = vec![rng.gen_range(1..=9u8)];
        while word.len() < length {
            let last = *word.last().expect("nonempty");
            word.push(successor(last, rng.gen_range(0..3u8)));
        }
        let mass = measure.cylinder(&word).expect("admissible");
        let windows = length - m + 1;
        let birkhoff: f64 = (0..windows)
            .map(|k| measure.potential[measure.space.index(&word[k..k + m]).expect("admissible")])
            .sum();
        let ratio = (mass.ln() - birkhoff + windows as f64 * measure.pressure).exp();
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok(GibbsBounds { samples, length, min_ratio: lo, max_ratio: hi, k: hi.max(1.0 / lo) })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub word: SymbolWord,
    pub point: Point,
    pub weight: f64,
    pub diameter: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<WeightedPoint>,
}

impl PointCloud {
    pub fn total_mass(&self) -> f64 {
        self.points.iter().map(|w| w.weight).sum()
    }

    pub fn max_diameter(&self) -> f64 {
        self.points.iter().map(|w| w.diameter).fold(0.0, f64::max)
    }

    pub fn integrate(&self, g: impl Fn(Point) -> f64) -> f64 {
        self.points.iter().map(|w| w.weight * g(w.point)).sum()
    }

    /// Every point sits inside one of the nine rectangles.
    pub fn avoids_gaps(&self, p: &ParamSet) -> bool {
        self.points.iter().all(|w| rectangle_of(p, w.point).is_some())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("word,x,y,weight,diameter\n");
        for w in &self.points {
            let _ = writeln!(
                out,
                "{},{:.17e},{:.17e},{:.17e},{:.6e}",
                w.word, w.point.x, w.point.y, w.weight, w.diameter
            );
        }
        out
    }
}

/// Decodes every depth-`depth` cylinder with `past` symbols before the
/// current one and attaches the cylinder weight.
pub fn push_to_lambda(
    map: &PerturbedMap,
    measure: &CylinderMeasure,
    depth: usize,
    past: usize,
) -> Result<PointCloud> {
    if past >= depth {
        return Err(LabError::Degenerate("the current symbol must lie inside the word".into()));
    }
    let weights = measure.marginal(depth)?;
    let space = WordSpace::new(depth)?;
    let points = (0..space.len())
        .into_par_iter()
        .map(|i| {
            let w = space.word(i);
            let word = SymbolWord::new(w[..past].to_vec(), w[past..].to_vec());
            let d = decode(map, &word)?;
            let (dx, dy) = d.diameter();
            Ok(WeightedPoint {
                word,
                point: d.point.approx(),
                weight: weights[i],
                diameter: dx.hypot(dy),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests;
