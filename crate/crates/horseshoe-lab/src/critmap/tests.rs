use super::*;
use crate::basemap::{admissible, row_of};
use crate::params::{solve_params, SolverHints};
use crate::real::{Real, DD};
use proptest::prelude::*;
use std::sync::OnceLock;

fn params() -> ParamSet {
    static P: OnceLock<ParamSet> = OnceLock::new();
    P.get_or_init(|| solve_params(&SolverHints::default()).unwrap())
        .clone()
}

fn map() -> &'static PerturbedMap {
    static M: OnceLock<PerturbedMap> = OnceLock::new();
    M.get_or_init(|| PerturbedMap::new(&params()).unwrap())
}

#[test]
fn cubic_examples() {
    let p = params();
    assert_eq!(local_cubic(&p, 0.0, 0.0, 0.0).unwrap(), (0.0, 0.0));
    let x = 0.3 * p.alpha_max;
    assert_eq!(local_cubic(&p, x, 0.0, 0.0).unwrap(), (0.0, p.b * x));
    let y = 0.7 * p.beta_max;
    let (u, v) = local_cubic(&p, 0.0, y, 0.0).unwrap();
    assert_eq!(u, -p.eps1 * y);
    assert!((v + p.c * y * y * y).abs() <= 1e-15 * (p.c * y * y * y).abs());
    assert!(local_cubic(&p, 2.0 * p.alpha_max, 0.0, 0.0).is_err());
}

#[test]
fn cubic_inverse_round_trips() {
    let p = params();
    let (a, b) = (p.alpha_max, p.beta_max);
    for (x, y) in [(0.0, -b), (a, b), (0.5 * a, 0.0), (a, -b), (0.0, b)] {
        let (u, v) = local_cubic(&p, x, y, 0.0).unwrap();
        let (xb, yb) = local_cubic_inverse(&p, u, v, 0.0).unwrap();
        assert!((xb - x).abs() <= 1e-9 * a, "{x} {xb}");
        assert!((yb - y).abs() <= 1e-12 * b);
    }
}

#[test]
fn cubic_denominators() {
    let p = params();
    // b - c y with b = 2 c beta
    let top = p.b - p.c * p.beta_max;
    let bottom = p.b + p.c * p.beta_max;
    assert!((top - p.c * p.beta_max).abs() <= 1e-12 * top);
    assert!((bottom - 3.0 * p.c * p.beta_max).abs() <= 1e-12 * bottom);
}

#[test]
fn jacobian_examples() {
    let p = params();
    let m = map();
    let j = m.jacobian(m.frame.xi).unwrap();
    assert_eq!(j, [[0.0, -p.eps1], [p.b, 0.0]]);
    let corner = Point::new(p.alpha_max, p.xi2 + p.beta_max);
    let j = m.jacobian(corner).unwrap();
    let det = det2(&j);
    let expected = p.eps1 * (p.b - p.c * p.beta_max);
    // the corner height is only representable to about 1e-11 of beta_max
    assert!((det - expected).abs() <= 1e-9 * expected);
    let r1 = Point::new(0.02, 0.98);
    let j = m.jacobian(r1).unwrap();
    assert_eq!(j[0][0].abs(), p.lambda);
    assert_eq!(j[1][1].abs(), p.rho);
    assert_eq!(m.jacobian(Point::new(0.5, 0.3)), Err(LabError::GapPoint));
}

#[test]
fn critical_image_on_same_horizontal_line() {
    let m = map();
    let img = m.apply(m.frame.xi).point().unwrap();
    let f0 = f0_apply(&m.params, m.frame.xi).point().unwrap();
    assert!((img.y - f0.y).abs() < 1e-15);
}

#[test]
fn top_edge_image_is_vertical_segment() {
    let p = params();
    let m = map();
    let top = DD::lit(p.xi2) + DD::lit(p.beta_max);
    for i in 0..=10 {
        let x = p.alpha_max * i as f64 / 10.0;
        let img = m.apply(Point::new(DD::lit(x), top)).point().unwrap();
        let u = (img.x - DD::lit(m.frame.f_xi.x)).approx();
        let v = (img.y - DD::lit(m.frame.f_xi.y)).approx();
        assert!((u + p.eps1 * p.beta_max).abs() <= 1e-12 * p.eps1 * p.beta_max);
        let expected = p.b * x - p.c * p.beta_max * (p.beta_max * p.beta_max + x);
        assert!((v - expected).abs() <= 1e-12 * expected.abs());
    }
}

#[test]
fn frame_itinerary_properties() {
    let p = params();
    let orbit = critical_orbit(&p, 6, 40).unwrap();
    for op in orbit.iter().filter(|o| o.k < 0) {
        assert_eq!(op.point.x, 0.0);
        assert_eq!(op.rectangle.unwrap().get(), 7);
    }
    let fwd: Vec<u8> = orbit
        .iter()
        .filter(|o| o.k > 0)
        .map(|o| o.rectangle.unwrap().get())
        .collect();
    assert!(fwd.iter().all(|s| *s != 4 && *s != 7));
    assert!(fwd.windows(2).all(|w| admissible(w[0], w[1])));
    assert!(fwd.iter().any(|s| *s == 5 || *s == 6));
    assert!(fwd.iter().any(|s| (1..=3).contains(s)));
    assert!(matches!(fwd[p.k_c as usize], 5 | 6));
    assert_eq!(&fwd[..3], &[8, 1, 6]);
}

#[test]
fn region_sits_between_generations() {
    let p = params();
    let frame = CriticalFrame::new(&p).unwrap();
    let (x0, x1, y0, y1) = frame.region();
    let k = p.k_c as usize;
    let outer = gen_rectangle(
        &p,
        &SymbolWord::new(vec![7; p.n_c as usize], critical_forward_word(k + 1)),
    )
    .unwrap();
    let inner = gen_rectangle(
        &p,
        &SymbolWord::new(vec![7; p.n_c as usize + 1], critical_forward_word(k + 2)),
    )
    .unwrap();
    assert!(outer.x0 <= x0 && x1 <= outer.x1 + 1e-18);
    assert!(outer.y0 <= y0 && y1 <= outer.y1);
    assert!(x0 <= inner.x0 && inner.x1 <= x1);
    assert!(y0 <= inner.y0 && inner.y1 <= y1);
}

#[test]
fn critical_image_inside_next_strip() {
    let p = params();
    let m = map();
    // the image of the region stays within the strip V^{n_c+1} of the image point
    let width = p.alpha_max * p.lambda;
    let left = m.frame.xi_image.x - width;
    for (x, y) in [(0.0, -1.0), (0.0, 1.0), (1.0, 1.0), (1.0, -1.0), (0.5, 0.0)] {
        let pt = m.frame.unscaled(x, y);
        let img = m.apply(pt).point().unwrap();
        assert!(left < img.x && img.x < m.frame.xi_image.x, "{x} {y}");
    }
    assert!(2.0 * p.eps1 * p.beta_max < p.l0 * p.lambda.powi(p.n_c as i32 + 1));
}

#[test]
fn boundary_segments_torn_apart() {
    let p = params();
    let m = map();
    // stripe of the image point of generation k_c, in the image column
    let word = critical_forward_word(p.k_c as usize + 2)[1..].to_vec();
    let stripe = gen_rectangle(&p, &SymbolWord::new(Vec::new(), word)).unwrap();
    for i in 0..=10 {
        let x = i as f64 / 10.0;
        let top = m.apply(m.frame.unscaled(x, 1.0)).point().unwrap();
        let bot = m.apply(m.frame.unscaled(x, -1.0)).point().unwrap();
        assert!(top.y < stripe.y0, "top edge image {} vs {}", top.y, stripe.y0);
        assert!(bot.y > stripe.y1, "bottom edge image {} vs {}", bot.y, stripe.y1);
    }
}

#[test]
fn glue_is_identity_on_its_boundary_and_outside() {
    let m = map();
    let g = &m.glue;
    let (xr, h) = (g.spec.collar_x, g.spec.collar_y);
    for i in 0..=40 {
        let x = xr * i as f64 / 40.0;
        for y in [h * 1.0001, -h * 1.0001] {
            let pt = m.frame.unscaled(x, y);
            assert_eq!(m.apply(pt), f0_apply(&m.params, pt));
        }
    }
}

#[test]
fn glue_collar_next_to_region_leaves_child_stripe() {
    let p = params();
    let m = map();
    // the child stripe of the critical point, in scaled offsets
    let word = critical_forward_word(p.k_c as usize + 2);
    let child = gen_rectangle(&p, &SymbolWord::new(Vec::new(), word)).unwrap();
    let lo = (child.y0 - p.xi2) / p.beta_max;
    let hi = (child.y1 - p.xi2) / p.beta_max;
    let strip_right = p.lambda / p.l0;
    let h = m.glue.spec.collar_y;
    let mut min_gap = f64::INFINITY;
    for i in 0..=60 {
        let x = strip_right * 1.05 * i as f64 / 60.0;
        for j in 0..=200 {
            let t = j as f64 / 200.0;
            for y in [1.0 + t * (h - 1.0), -1.0 - t * (h - 1.0)] {
                if y.abs() <= 1.0 {
                    continue;
                }
                let (_, yp) = m.glue.apply(x, y);
                let gap = if yp > hi { yp - hi } else if yp < lo { lo - yp } else { -1.0 };
                min_gap = min_gap.min(gap);
            }
        }
    }
    assert!(min_gap > 0.0, "collar point maps into the child stripe ({min_gap})");
}

#[test]
fn glue_determinant_below_one() {
    let p = params();
    let m = map();
    let (lo, hi) = m.glue.det_range(300, 200);
    assert!(lo > 0.0);
    assert!(p.lambda * p.sigma * hi < 1.0);
    assert!(p.delta < 1.0);
}

#[test]
fn glue_keeps_left_half_plane() {
    let m = map();
    let g = &m.glue;
    for j in 0..=200 {
        let y = -g.spec.collar_y + 2.0 * g.spec.collar_y * j as f64 / 200.0;
        for x in [0.0, 0.01, 0.2] {
            assert!(g.apply(x, y).0 >= 0.0);
        }
    }
}

#[test]
fn image_of_neighbourhood_stays_in_square() {
    let m = map();
    let g = &m.glue;
    for i in 0..=30 {
        for j in 0..=30 {
            let x = g.spec.collar_x * i as f64 / 30.0;
            let y = -g.spec.collar_y + 2.0 * g.spec.collar_y * j as f64 / 30.0;
            let img = m.apply(m.frame.unscaled(x, y)).point().unwrap();
            assert!((0.0..=1.0).contains(&img.x) && (0.0..=1.0).contains(&img.y));
            assert!(row_of(&m.params, m.frame.unscaled(x, y).y).is_some());
        }
    }
}

#[test]
fn escape_under_affine_implies_escape_under_perturbed() {
    let p = params();
    let m = map();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 10_000 {
        let pt = Point::new(rand::Rng::gen::<f64>(&mut rng), rand::Rng::gen::<f64>(&mut rng));
        let steps = p.k_c as usize + 1;
        let mut z = pt;
        let mut f0_escape = None;
        for k in 0..steps {
            match f0_apply(&p, z) {
                Mapped::Point(n) => z = n,
                Mapped::Escaped => {
                    f0_escape = Some(k);
                    break;
                }
            }
        }
        let Some(k0) = f0_escape else { continue };
        checked += 1;
        let mut z = pt;
        let mut f_escape = None;
        for k in 0..steps {
            match m.apply(z) {
                Mapped::Point(n) => z = n,
                Mapped::Escaped => {
                    f_escape = Some(k);
                    break;
                }
            }
        }
        assert!(matches!(f_escape, Some(k) if k <= k0), "{pt:?}");
    }
}

#[test]
fn dd_and_f64_agree_in_cubic_zone() {
    let m = map();
    let pt = m.frame.unscaled(0.3, 0.4);
    let a = m.apply(pt).point().unwrap();
    let b = m.apply(Point::<DD>::lift(pt)).point().unwrap().approx();
    assert!((a.x - b.x).abs() < 1e-15 && (a.y - b.y).abs() < 1e-15);
}

#[test]
fn aperiodic_word_properties() {
    for seed in 0..20 {
        let w = aperiodic_itinerary(2, 200, seed);
        assert_eq!(w[0], 8);
        assert!(w.iter().all(|s| *s != 4 && *s != 7));
        assert!(w.windows(2).all(|p| admissible(p[0], p[1])));
        assert!(matches!(w[2], 5 | 6));
        assert!(w[150..].iter().any(|s| (4..=6).contains(s)));
        assert!(w[150..].iter().any(|s| (1..=3).contains(s)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn inverse_round_trip_in_region(x in 0.0f64..1.0, y in -1.0f64..1.0) {
        let m = map();
        // in f64 the image abscissa resolves eps1 * beta_max only to a few
        // percent, so the round trip is checked in double-double
        let pt = Point::new(DD::lit(m.frame.alpha) * DD::lit(x),
                            DD::lit(m.frame.xi.y) + DD::lit(m.frame.beta) * DD::lit(y));
        let img = m.apply(pt).point().unwrap();
        let back = m.inverse(img).point().unwrap();
        prop_assert!((back.x - pt.x).approx().abs() <= 1e-12 * m.frame.alpha);
        prop_assert!((back.y - pt.y).approx().abs() <= 1e-12 * m.frame.beta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn inverse_round_trip_in_collar(x in 0.0f64..10.0, y in -1.8f64..1.8) {
        let m = map();
        let pt = Point::new(DD::lit(m.frame.alpha) * DD::lit(x),
                            DD::lit(m.frame.xi.y) + DD::lit(m.frame.beta) * DD::lit(y));
        let img = m.apply(pt).point().unwrap();
        let back = m.inverse(img).point().unwrap();
        prop_assert!((back.x - pt.x).approx().abs() <= 1e-8 * m.frame.alpha);
        prop_assert!((back.y - pt.y).approx().abs() <= 1e-8 * m.frame.beta);
    }

    #[test]
    fn solver_cubic_matches_oracle_roots(r1 in -3.0f64..3.0, r2 in -3.0f64..3.0, r3 in -3.0f64..3.0) {
        // polynomial with known roots r1, r2, r3
        let a2 = -(r1 + r2 + r3);
        let a1 = r1 * r2 + r1 * r3 + r2 * r3;
        let a0 = -r1 * r2 * r3;
        let roots = solve_cubic_real(1.0, a2, a1, a0).unwrap();
        for r in [r1, r2, r3] {
            let nearest = roots.iter().map(|z| (z - r).abs()).fold(f64::INFINITY, f64::min);
            prop_assert!(nearest < 1e-4, "{r} not among {roots:?}");
        }
    }
}
