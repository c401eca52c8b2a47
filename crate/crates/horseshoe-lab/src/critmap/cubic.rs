//! Real roots of cubic polynomials.

use crate::error::{LabError, Result};

fn eval(c: &[f64; 4], t: f64) -> (f64, f64) {
    let v = ((c[3] * t + c[2]) * t + c[1]) * t + c[0];
    let d = (3.0 * c[3] * t + 2.0 * c[2]) * t + c[1];
    (v, d)
}

fn polish(c: &[f64; 4], mut t: f64) -> f64 {
    let (mut best, _) = eval(c, t);
    for _ in 0..8 {
        let (v, d) = eval(c, t);
        if v == 0.0 || d == 0.0 {
            break;
        }
        let next = t - v / d;
        let (nv, _) = eval(c, next);
        if nv.abs() >= best.abs() {
            break;
        }
        best = nv;
        t = next;
    }
    t
}

/// Distinct real roots of `a3 t^3 + a2 t^2 + a1 t + a0`, ascending.
///
/// Uses the trigonometric form when there are three real roots and
/// Cardano's formula otherwise, then polishes each root with Newton steps.
pub fn solve_cubic_real(a3: f64, a2: f64, a1: f64, a0: f64) -> Result<Vec<f64>> {
    if a3 == 0.0 {
        return Err(LabError::Degree);
    }
    let coeffs = [a0, a1, a2, a3];
    let (b, c, d) = (a2 / a3, a1 / a3, a0 / a3);
    // depressed form t = s - b/3: s^3 + p s + q
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let scale = 1.0 + b.abs() + c.abs().sqrt() + d.abs().cbrt();
    let tiny = 1e-14 * scale;

    let mut roots: Vec<f64> = if p.abs() <= tiny * tiny && q.abs() <= tiny * tiny * tiny {
        vec![0.0]
    } else {
        let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
        if disc > 0.0 {
            let sq = disc.sqrt();
            // avoid cancellation by taking the larger cube root first
            let u = (-q / 2.0 - q.signum() * sq).cbrt();
            let s = if u == 0.0 { 0.0 } else { u - p / (3.0 * u) };
            vec![s]
        } else if disc == 0.0 {
            let u = (-q / 2.0).cbrt();
            vec![2.0 * u, -u]
        } else {
            let m = 2.0 * (-p / 3.0).sqrt();
            let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
            let phi = arg.acos() / 3.0;
            (0..3)
                .map(|k| m * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
                .collect()
        }
    };
    for r in roots.iter_mut() {
        *r = polish(&coeffs, *r - shift);
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * scale);
    Ok(roots)
}
