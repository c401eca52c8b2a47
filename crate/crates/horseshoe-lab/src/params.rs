//! Parameter ledger, synthesis and validation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Orientation of the affine branch attached to one row band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchOrientation {
    pub flip_h: bool,
    pub flip_v: bool,
}

/// Branch orientations for the top, middle and bottom row bands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Orientation {
    pub top: BranchOrientation,
    pub middle: BranchOrientation,
    pub bottom: BranchOrientation,
}

impl Default for Orientation {
    fn default() -> Self {
        let keep = BranchOrientation {
            flip_h: false,
            flip_v: false,
        };
        Orientation {
            top: keep,
            middle: BranchOrientation {
                flip_h: true,
                flip_v: true,
            },
            bottom: keep,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub lambda: f64,
    pub sigma: f64,
    pub rho: f64,
    pub d: f64,
    pub l0: f64,
    pub c: f64,
    pub b: f64,
    pub eps1: f64,
    pub a_cone: f64,
    pub beta_max: f64,
    pub alpha_max: f64,
    pub n_c: u32,
    pub k_c: u32,
    pub k1: u32,
    pub k2: u32,
    pub curv_bound: f64,
    pub theta: f64,
    pub xi2: f64,
    pub delta: f64,
    pub orientation: Orientation,
}

/// Scaled constants of the critical chart, in units where the critical
/// region is `[0,1] x [-1,1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartScales {
    /// Vertical expansion over the `k_c + 1` steps starting at the critical point.
    pub block_rate: f64,
    /// Horizontal tilt `eps1 * beta / (lambda * alpha)`.
    pub kappa: f64,
    /// Aspect `alpha / beta^2`.
    pub eta: f64,
    /// `c beta^2 / sigma`, equal to one for solver output.
    pub cubic: f64,
    /// `b alpha / (sigma beta)`.
    pub linear: f64,
    /// `theta / beta^2`.
    pub shift: f64,
}

impl ParamSet {
    pub fn block_rate(&self) -> f64 {
        self.sigma.powi(self.k1 as i32 + 1) * self.rho.powi(self.k2 as i32)
    }

    pub fn scales(&self) -> ChartScales {
        self.scales_with(self.theta)
    }

    pub fn scales_with(&self, theta: f64) -> ChartScales {
        let beta = self.beta_max;
        let alpha = self.alpha_max;
        ChartScales {
            block_rate: self.block_rate(),
            kappa: self.eps1 * beta / (self.lambda * alpha),
            eta: alpha / (beta * beta),
            cubic: self.c * beta * beta / self.sigma,
            linear: self.b * alpha / (self.sigma * beta),
            shift: theta / (beta * beta),
        }
    }

    /// Generic unstable cone slope `A d / (3 c beta_max)`.
    pub fn free_slope(&self) -> f64 {
        self.a_cone * self.d / (3.0 * self.c * self.beta_max)
    }

    pub fn with_theta(&self, theta: f64) -> ParamSet {
        ParamSet {
            theta,
            ..self.clone()
        }
    }

    fn finite_fields(&self) -> [(&'static str, f64); 15] {
        [
            ("lambda", self.lambda),
            ("sigma", self.sigma),
            ("rho", self.rho),
            ("d", self.d),
            ("l0", self.l0),
            ("c", self.c),
            ("b", self.b),
            ("eps1", self.eps1),
            ("a_cone", self.a_cone),
            ("beta_max", self.beta_max),
            ("alpha_max", self.alpha_max),
            ("curv_bound", self.curv_bound),
            ("theta", self.theta),
            ("xi2", self.xi2),
            ("delta", self.delta),
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self.finite_fields() {
            if !v.is_finite() {
                return Err(LabError::NonFinite(name));
            }
        }
        for (name, v) in [("n_c", self.n_c), ("k_c", self.k_c), ("k1", self.k1)] {
            if v == 0 {
                return Err(LabError::NonPositive(name));
            }
        }
        Ok(())
    }

    /// Flat `key = value` text, one field per line, fixed order.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (name, v) in self.finite_fields() {
            let _ = writeln!(out, "{name} = {v:?}");
        }
        for (name, v) in [
            ("n_c", self.n_c),
            ("k_c", self.k_c),
            ("k1", self.k1),
            ("k2", self.k2),
        ] {
            let _ = writeln!(out, "{name} = {v}");
        }
        let o = &self.orientation;
        for (name, v) in [
            ("top_flip_h", o.top.flip_h),
            ("top_flip_v", o.top.flip_v),
            ("middle_flip_h", o.middle.flip_h),
            ("middle_flip_v", o.middle.flip_v),
            ("bottom_flip_h", o.bottom.flip_h),
            ("bottom_flip_v", o.bottom.flip_v),
        ] {
            let _ = writeln!(out, "{name} = {v}");
        }
        out
    }

    pub fn from_key_value(text: &str) -> Result<ParamSet> {
        let map = parse_key_value(text)?;
        let float = |k: &str| -> Result<f64> {
            map.get(k)
                .ok_or_else(|| LabError::Parse(format!("missing key `{k}`")))?
                .parse::<f64>()
                .map_err(|e| LabError::Parse(format!("`{k}`: {e}")))
        };
        let int = |k: &str| -> Result<u32> {
            map.get(k)
                .ok_or_else(|| LabError::Parse(format!("missing key `{k}`")))?
                .parse::<u32>()
                .map_err(|e| LabError::Parse(format!("`{k}`: {e}")))
        };
        let flag = |k: &str, default: bool| -> Result<bool> {
            match map.get(k) {
                None => Ok(default),
                Some(v) => v
                    .parse::<bool>()
                    .map_err(|e| LabError::Parse(format!("`{k}`: {e}"))),
            }
        };
        let def = Orientation::default();
        Ok(ParamSet {
            lambda: float("lambda")?,
            sigma: float("sigma")?,
            rho: float("rho")?,
            d: float("d")?,
            l0: float("l0")?,
            c: float("c")?,
            b: float("b")?,
            eps1: float("eps1")?,
            a_cone: float("a_cone")?,
            beta_max: float("beta_max")?,
            alpha_max: float("alpha_max")?,
            n_c: int("n_c")?,
            k_c: int("k_c")?,
            k1: int("k1")?,
            k2: int("k2")?,
            curv_bound: float("curv_bound")?,
            theta: float("theta")?,
            xi2: float("xi2")?,
            delta: float("delta")?,
            orientation: Orientation {
                top: BranchOrientation {
                    flip_h: flag("top_flip_h", def.top.flip_h)?,
                    flip_v: flag("top_flip_v", def.top.flip_v)?,
                },
                middle: BranchOrientation {
                    flip_h: flag("middle_flip_h", def.middle.flip_h)?,
                    flip_v: flag("middle_flip_v", def.middle.flip_v)?,
                },
                bottom: BranchOrientation {
                    flip_h: flag("bottom_flip_h", def.bottom.flip_h)?,
                    flip_v: flag("bottom_flip_v", def.bottom.flip_v)?,
                },
            },
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ParamSet serializes")
    }

    pub fn from_json(text: &str) -> Result<ParamSet> {
        serde_json::from_str(text).map_err(|e| LabError::Parse(e.to_string()))
    }

    /// Raise `c` by `factor`, keep `c beta^2 = sigma`, and recompute every
    /// quantity that the recipe derives from `c` and `beta_max`, lowering
    /// `eps1` if the new `n_c` requires it.
    pub fn with_c_scaled(&self, factor: f64) -> ParamSet {
        let c = self.c * factor;
        let beta = (self.sigma / c).sqrt();
        let mut p = ParamSet {
            c,
            beta_max: beta,
            b: 2.0 * c * beta,
            a_cone: c / (8.0 * self.eps1),
            ..self.clone()
        };
        if let Some(n_c) = bracket_n_c(p.lambda, p.l0, beta) {
            p.n_c = n_c;
            p.alpha_max = p.l0 * p.lambda.powi(n_c as i32);
        }
        // a larger n_c may need a smaller eps1; decreasing it is allowed
        p.eps1 = p.eps1.min(eps_ceiling(p.lambda, p.alpha_max, beta, c));
        p.a_cone = c / (8.0 * p.eps1);
        p.curv_bound = curvature_bound(&p);
        p.delta = max_abs_det(&p);
        p
    }

    /// Lower `eps1` by `factor` and recompute `A`.
    pub fn with_eps_scaled(&self, factor: f64) -> ParamSet {
        let eps1 = self.eps1 / factor;
        let mut p = ParamSet {
            eps1,
            a_cone: self.c / (8.0 * eps1),
            ..self.clone()
        };
        p.curv_bound = curvature_bound(&p);
        p.delta = max_abs_det(&p);
        p
    }
}

pub(crate) fn parse_key_value(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| LabError::Parse(format!("line {}: expected key = value", lineno + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionKind {
    Inequality,
    Normalization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub id: String,
    pub equation: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
    pub kind: ConditionKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub entries: Vec<Condition>,
}

impl ConditionReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn inequalities_pass(&self) -> bool {
        self.entries
            .iter()
            .filter(|e| e.kind == ConditionKind::Inequality)
            .all(|e| e.pass)
    }

    pub fn failures(&self) -> Vec<&Condition> {
        self.entries.iter().filter(|e| !e.pass).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Condition> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,equation,lhs,rhs,margin,pass\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{:e},{}",
                e.id, e.equation, e.lhs, e.rhs, e.margin, e.pass
            );
        }
        out
    }
}

/// Relative tolerance for normalisation entries.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Required value of `A d eps1 / (3 c beta_max)`.
pub const MARGIN_BIG: f64 = 2.0;

#[derive(Clone, Copy)]
enum Rel {
    Lt,
    Le,
    Eq,
}

struct Builder {
    entries: Vec<Condition>,
}

impl Builder {
    fn push(&mut self, id: &str, equation: &str, lhs: f64, rel: Rel, rhs: f64) {
        let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        let (margin, kind) = match rel {
            Rel::Lt | Rel::Le => ((rhs - lhs) / scale, ConditionKind::Inequality),
            Rel::Eq => (
                NORMALIZATION_TOL - (lhs - rhs).abs() / scale,
                ConditionKind::Normalization,
            ),
        };
        let pass = match rel {
            Rel::Lt | Rel::Eq => margin > 0.0,
            Rel::Le => margin >= 0.0 && lhs <= rhs,
        } && margin.is_finite();
        self.entries.push(Condition {
            id: id.to_string(),
            equation: equation.to_string(),
            lhs,
            rhs,
            margin,
            pass,
            kind,
        });
    }
}

/// Check every inequality and normalisation of the construction.
pub fn validate(p: &ParamSet) -> Result<ConditionReport> {
    p.check_finite()?;
    let mut b = Builder {
        entries: Vec::with_capacity(40),
    };
    let (lam, sig, rho) = (p.lambda, p.sigma, p.rho);
    let s = p.block_rate();
    let (beta, alpha, c, eps) = (p.beta_max, p.alpha_max, p.c, p.eps1);

    b.push("lambda<1/3", "(setup)", lam, Rel::Lt, 1.0 / 3.0);
    b.push("lambda>0", "(setup)", 0.0, Rel::Lt, lam);
    b.push("sigma>3", "(setup)", 3.0, Rel::Lt, sig);
    b.push("rho>3", "(setup)", 3.0, Rel::Lt, rho);
    let (ll, ls, lr) = (lam.ln(), sig.ln(), rho.ln());
    b.push("ratio-rho>-1.2", "(1)", -1.2, Rel::Lt, ll / lr);
    b.push("ratio-order", "(1)", ll / lr, Rel::Lt, ll / ls);
    b.push("ratio-sigma<-1", "(1)", ll / ls, Rel::Lt, -1.0);
    b.push("sigma>rho", "(1)", rho, Rel::Lt, sig);
    b.push("lambda*sigma<1", "(1)", lam * sig, Rel::Lt, 1.0);
    b.push("grid-closure", "(grid)", 3.0 * p.l0 + 2.0 * p.d, Rel::Eq, 1.0);
    b.push("rho*l0>=1", "(grid)", 1.0, Rel::Le, rho * p.l0);
    b.push("lambda<=l0", "(grid)", lam, Rel::Le, p.l0);
    b.push(
        "itinerary-counts",
        "(itinerary)",
        (p.k1 + 1 + p.k2) as f64,
        Rel::Eq,
        (p.k_c + 1) as f64,
    );
    b.push("c>1", "(setup)", 1.0, Rel::Lt, c);
    b.push("eps1>0", "(setup)", 0.0, Rel::Lt, eps);
    b.push("eps1<1", "(setup)", eps, Rel::Lt, 1.0);

    b.push("3-lower", "(3a)", p.l0 / s, Rel::Le, beta);
    b.push("3-upper", "(3b)", beta, Rel::Le, p.d / s);
    b.push(
        "3-alpha",
        "(3c)",
        alpha,
        Rel::Eq,
        p.l0 * lam.powi(p.n_c as i32),
    );

    b.push("4a-lower", "(4a)", 1.0, Rel::Lt, 3.0 * c * beta);
    b.push("4a-upper", "(4a)", 3.0 * c * beta, Rel::Lt, 1.0 / eps);
    b.push("4b", "(4b)", p.b, Rel::Eq, 2.0 * c * beta);
    b.push(
        "4c",
        "(4c)",
        MARGIN_BIG,
        Rel::Le,
        p.a_cone * p.d * eps / (3.0 * c * beta),
    );
    b.push("4d", "(4d)", p.a_cone, Rel::Eq, c / (8.0 * eps));

    let cube = c * beta.powi(3);
    let stripe = sig / s;
    b.push("5a-cubic", "(5a)", cube, Rel::Lt, 2.0 * p.d / 3.0 * stripe);
    b.push(
        "5a-total",
        "(5a)",
        cube + 3.0 * c * beta * alpha,
        Rel::Lt,
        2.0 * p.d / 3.0 * stripe,
    );
    b.push(
        "5b",
        "(5b)",
        2.0 * eps * beta,
        Rel::Lt,
        p.l0 * lam.powi(p.n_c as i32 + 1),
    );
    b.push(
        "5c",
        "(5c)",
        2.0 * p.l0 * stripe + c * beta * alpha - cube,
        Rel::Lt,
        cube,
    );
    b.push(
        "5-tearing",
        "(tearing)",
        p.l0 * stripe,
        Rel::Lt,
        cube - c * beta * alpha,
    );

    b.push("6", "(6)", beta, Rel::Eq, p.d / (2.0 * s));
    b.push("7-lower", "(7)", lam * beta * beta / 10.0, Rel::Lt, alpha);
    b.push("7-upper", "(7)", alpha, Rel::Le, beta * beta / 10.0);
    b.push("8", "(8)", c * beta * beta, Rel::Eq, sig);

    b.push("eps-horizontal", "(solver)", 2.0 * eps * beta, Rel::Lt, lam * alpha);
    b.push("eps-vertical", "(solver)", 15.0 * eps, Rel::Lt, beta);
    b.push("eps-curvature", "(solver)", eps * beta * beta, Rel::Lt, 0.125);
    b.push(
        "cone-width",
        "(cone)",
        18.0 / (p.d * p.d * p.a_cone),
        Rel::Lt,
        1.0,
    );
    b.push(
        "curvature-bound",
        "(curvature)",
        curvature_floor(p),
        Rel::Le,
        p.curv_bound,
    );
    b.push("Delta<1", "(Delta)", max_abs_det(p), Rel::Lt, 1.0);
    Ok(ConditionReport { entries: b.entries })
}

/// Hints for [`solve_params`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverHints {
    pub sigma: f64,
    pub rho: f64,
    pub lambda: f64,
    pub l0: f64,
    pub k_c: Option<u32>,
    pub theta: f64,
    pub orientation: Orientation,
}

impl Default for SolverHints {
    fn default() -> Self {
        SolverHints {
            sigma: 40.0,
            rho: 30.0,
            lambda: 40f64.powf(-1.1),
            l0: 0.04,
            k_c: None,
            theta: 0.0,
            orientation: Orientation::default(),
        }
    }
}

/// Smallest `n` with `lambda beta^2 / 10 < l0 lambda^n <= beta^2 / 10`.
fn bracket_n_c(lambda: f64, l0: f64, beta: f64) -> Option<u32> {
    let target = beta * beta / 10.0;
    let n = ((target / l0).ln() / lambda.ln()).ceil();
    if !(1.0..=4096.0).contains(&n) {
        return None;
    }
    // ceil() can land one step off when the ratio is an exact power
    for cand in [n as i64 - 1, n as i64, n as i64 + 1] {
        if cand < 1 {
            continue;
        }
        let alpha = l0 * lambda.powi(cand as i32);
        if lambda * target < alpha && alpha <= target {
            return Some(cand as u32);
        }
    }
    None
}

/// Threshold curvature from the first-return estimate of the graph transform.
pub fn curvature_floor(p: &ParamSet) -> f64 {
    let beta2 = p.beta_max * p.beta_max;
    let d3 = p.d.powi(3);
    let slope = 8.0 * 81.0 * beta2 * p.eps1 / d3;
    if slope >= 1.0 {
        return f64::INFINITY;
    }
    8.0 * 3.0 * 7.0 * (19.0 * beta2 + p.alpha_max) / d3 * p.eps1 / (1.0 - slope)
}

fn curvature_bound(p: &ParamSet) -> f64 {
    (10.0 * curvature_floor(p)).max(1.0)
}

/// Largest `eps1` the recipe admits for the given scales.
fn eps_ceiling(lambda: f64, alpha: f64, beta: f64, c: f64) -> f64 {
    (lambda * alpha / (8.0 * beta))
        .min(1.0 / (6.0 * c * beta))
        .min(beta / 30.0)
        .min(1.0 / (16.0 * beta * beta))
}

/// Synthesize a parameter set following the order of the recipe.
pub fn solve_params(h: &SolverHints) -> Result<ParamSet> {
    for (name, v) in [
        ("sigma", h.sigma),
        ("rho", h.rho),
        ("lambda", h.lambda),
        ("l0", h.l0),
        ("theta", h.theta),
    ] {
        if !v.is_finite() {
            return Err(LabError::NonFinite(name));
        }
    }
    if !(h.lambda > 0.0 && h.lambda < 1.0 / 3.0 && h.sigma > 3.0 && h.rho > 3.0) {
        return Err(LabError::InvalidHints(
            "need 0 < lambda < 1/3 and sigma, rho > 3".into(),
        ));
    }
    let (ll, ls, lr) = (h.lambda.ln(), h.sigma.ln(), h.rho.ln());
    if !(-1.2 < ll / lr && ll / lr < ll / ls && ll / ls < -1.0) {
        return Err(LabError::InvalidHints(format!(
            "ordering -1.2 < log(lambda)/log(rho) < log(lambda)/log(sigma) < -1 fails ({:.4}, {:.4})",
            ll / lr,
            ll / ls
        )));
    }
    if !(h.l0 > 0.0 && 3.0 * h.l0 < 1.0 && h.rho * h.l0 >= 1.0 && h.lambda <= h.l0) {
        return Err(LabError::InvalidHints(
            "need 1/rho <= l0 < 1/3 and lambda <= l0".into(),
        ));
    }
    let d = (1.0 - 3.0 * h.l0) / 2.0;
    let k_c = h.k_c.unwrap_or(2);
    if k_c % 3 != 2 {
        return Err(LabError::ItineraryIncompatible(k_c));
    }
    let m = (k_c - 2) / 3;
    let (k1, k2) = (2 * m + 1, m + 1);
    let s = h.sigma.powi(k1 as i32 + 1) * h.rho.powi(k2 as i32);

    let beta = d / (2.0 * s);
    let c = h.sigma / (beta * beta);
    let b = 2.0 * c * beta;
    let n_c = bracket_n_c(h.lambda, h.l0, beta).ok_or_else(|| {
        LabError::Unsatisfiable("no integer n_c satisfies the alpha bracket".into())
    })?;
    let alpha = h.l0 * h.lambda.powi(n_c as i32);
    let eps1 = eps_ceiling(h.lambda, alpha, beta, c);
    let a_cone = c / (8.0 * eps1);

    let mut p = ParamSet {
        lambda: h.lambda,
        sigma: h.sigma,
        rho: h.rho,
        d,
        l0: h.l0,
        c,
        b,
        eps1,
        a_cone,
        beta_max: beta,
        alpha_max: alpha,
        n_c,
        k_c,
        k1,
        k2,
        curv_bound: 1.0,
        theta: h.theta,
        xi2: 0.0,
        delta: 0.0,
        orientation: h.orientation,
    };
    p.curv_bound = curvature_bound(&p);
    p.xi2 = crate::basemap::critical_height(&p)?;
    p.delta = max_abs_det(&p);
    let report = validate(&p)?;
    if !report.pass() {
        let ids: Vec<_> = report.failures().iter().map(|e| e.id.clone()).collect();
        return Err(LabError::Unsatisfiable(format!(
            "solver output fails {}",
            ids.join(", ")
        )));
    }
    Ok(p)
}

/// Supremum of `|det DF|` over the square.
pub fn max_abs_det(p: &ParamSet) -> f64 {
    let linear = p.lambda * p.sigma.max(p.rho);
    // ε1(b - c y) is largest at the bottom edge y = -beta_max
    let cubic = p.eps1 * (p.b + p.c * p.beta_max).abs();
    let glue = crate::critmap::Glue::for_params(p)
        .map(|g| p.lambda * p.sigma * g.det_bound())
        .unwrap_or(f64::INFINITY);
    linear.max(cubic).max(glue)
}
