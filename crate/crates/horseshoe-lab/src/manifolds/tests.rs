use super::*;
use crate::basemap::rectangle_of;
use crate::params::{solve_params, SolverHints};
use crate::symbolic::{code, decode, random_word, word_with_visit};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn map() -> &'static PerturbedMap {
    static MAP: OnceLock<PerturbedMap> = OnceLock::new();
    MAP.get_or_init(|| {
        let p = solve_params(&SolverHints::default()).unwrap();
        PerturbedMap::new(&p).unwrap()
    })
}

fn word(text: &str) -> SymbolWord {
    SymbolWord::parse(text).unwrap()
}

fn shortest_return(p: &ParamSet) -> Vec<u8> {
    let mut w = critical_prefix(p);
    w.push(8);
    w.extend(std::iter::repeat_n(7, p.n_c as usize));
    w.push(4);
    w
}

#[test]
fn barycentric_reproduces_polynomials() {
    let nodes = chebyshev_nodes(-2.0, 3.0, 9);
    let f = |t: f64| 1.0 - 2.0 * t + 0.5 * t.powi(5) - 0.1 * t.powi(8);
    let values: Vec<f64> = nodes.iter().map(|&t| f(t)).collect();
    for t in [-1.7, 0.0, 0.3, 2.9] {
        assert!((barycentric(&nodes, &values, t) - f(t)).abs() < 1e-10);
    }
    assert_eq!(nodes[0], -2.0);
    assert!((nodes[8] - 3.0).abs() < 1e-15);
}

#[test]
fn edges_and_random_curves_are_in_the_family() {
    let p = &map().params;
    assert!(VerticalCurve::left_edge(p).check(p).pass());
    assert!(VerticalCurve::right_edge(p).check(p).pass());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let c = VerticalCurve::random(p, &mut rng);
        let chk = c.check(p);
        assert!(chk.pass() && chk.slope_ratio <= 1.0, "{chk:?}");
    }
}

#[test]
fn out_of_family_curve_is_flagged() {
    let p = &map().params;
    let steep = VerticalCurve::from_fn(p, |y| (0.5 * p.alpha_max + 1e-6 * y, 1e-6, 0.0));
    assert!(!steep.check(p).pass());
}

#[test]
fn first_return_enumeration_counts() {
    let p = &map().params;
    // one bottom-row choice at the end, three rows at every other free slot
    let words = first_return_words(p, 3);
    assert_eq!(words.len(), 1 + 3 + 9);
    assert_eq!(words[0], shortest_return(p));
    assert_eq!(words[0].len() - 1, p.n_c as usize + 5);
    assert!(words.iter().all(|w| is_first_return(p, w).is_ok()));
}

#[test]
fn first_return_rejections() {
    let p = &map().params;
    let bad = |w: &[u8]| matches!(is_first_return(p, w), Err(LabError::NotFirstReturn(_)));
    assert!(bad(&[4, 8, 1, 6, 8, 7, 7, 7, 7, 7, 4]));
    assert!(bad(&[4, 8, 2, 6, 8, 7, 7, 7, 7, 7, 7, 4]));
    assert!(bad(&[4, 8, 1, 6, 5, 7, 7, 7, 7, 7, 7, 4]));
    let mut twice = shortest_return(p);
    twice.extend_from_slice(&shortest_return(p)[1..]);
    assert!(bad(&twice));
}

#[test]
fn left_edge_slope_matches_inverse_function_formula() {
    let m = map();
    let p = &m.params;
    let w = shortest_return(p);
    let out = unstable_graph_transform(m, &VerticalCurve::left_edge(p), &w).unwrap();
    // x' = 0 on the edge, so the new slope is lambda^n eps1 / (V c (3 y^2 + theta))
    let n = w.len() - 2;
    let v: f64 = w[1..w.len() - 1]
        .iter()
        .map(|&s| crate::basemap::row_rate(p, RectangleId::new(s).unwrap().band()))
        .product();
    let y = out.root;
    let expected = p.lambda.powi(n as i32) * p.eps1 / (v * p.c * (3.0 * y * y + m.theta));
    let got = out.curve.dx[0].abs();
    assert!((got / expected - 1.0).abs() < 1e-9, "{got:e} vs {expected:e}");
    let room = (3.0 * out.curve.y[0].powi(2) + out.curve.x[0]) / (6.0 * p.beta_max);
    assert!(got <= room);
    assert!(out.curve.check(p).pass());
}

#[test]
fn both_edges_transform_into_the_family() {
    let m = map();
    let p = &m.params;
    for w in first_return_words(p, 4) {
        for edge in [VerticalCurve::left_edge(p), VerticalCurve::right_edge(p)] {
            let out = unstable_graph_transform(m, &edge, &w).unwrap();
            let chk = out.curve.check(p);
            assert!(chk.pass(), "{w:?} {chk:?}");
            assert!(chk.curvature <= p.curv_bound);
            assert!(out.derivative_ratio <= 1.0);
        }
    }
}

#[test]
fn transform_root_returns_to_the_region() {
    let m = map();
    let p = &m.params;
    let w = shortest_return(p);
    let curve = VerticalCurve::right_edge(p);
    let out = unstable_graph_transform(m, &curve, &w).unwrap();
    // land on the region within the resolution of an f64 root
    let start = Point::new(DD::lit(p.alpha_max), DD::lit(m.frame.xi.y) + DD::lit(out.root));
    let orbit = m.orbit(start, w.len() - 1).unwrap();
    let end = orbit.last().unwrap().approx();
    assert!((end.x - out.curve.x[CHEB_NODES / 2]).abs() < 1e-20, "{end:?}");
    let v: f64 = w[1..w.len() - 1]
        .iter()
        .map(|&s| crate::basemap::row_rate(p, RectangleId::new(s).unwrap().band()))
        .product();
    let slack = v * f64::EPSILON * out.root.abs().max(1e-6) * p.c * 1e-10;
    assert!((end.y - m.frame.xi.y).abs() <= p.beta_max + slack, "{end:?}");
    let syms: Vec<u8> = orbit
        .iter()
        .map(|q| rectangle_of(p, *q).map(|r| r.get()).unwrap_or(0))
        .collect();
    assert_eq!(syms, w);
}

#[test]
fn transform_rejects_non_returns() {
    let m = map();
    let p = &m.params;
    let err = unstable_graph_transform(m, &VerticalCurve::left_edge(p), &[4, 8, 1, 6, 8, 7, 7]);
    assert!(matches!(err, Err(LabError::NotFirstReturn(_))));
}

#[test]
fn fixed_point_unstable_manifold_is_the_left_side() {
    let m = map();
    let w = unstable_manifold_local(m, &word("777777777777777.7")).unwrap();
    assert!(w.lower.iter().all(|&x| x == 0.0));
    assert!(w.values.iter().all(|&x| x <= w.gap()));
    assert!(w.slopes.iter().all(|&s| s == 0.0));
    assert_eq!(w.nodes[0], 0.0);
    assert!((w.nodes[CHEB_NODES - 1] - 1.0).abs() < 1e-15);
    assert!(w.within_band(&m.params));
}

#[test]
fn critical_point_lies_on_the_left_side_manifold() {
    let m = map();
    let w = unstable_manifold_local(m, &word("777777777777777.4816")).unwrap();
    assert!(w.eval(m.frame.xi.y).abs() <= w.gap());
    assert!(w.gap() < MANIFOLD_TOL * m.params.beta_max);
}

#[test]
fn unstable_brackets_shrink_monotonically() {
    let m = map();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let all = word_with_visit(&mut rng, 26, 10, 6);
    let w = SymbolWord::new(all[..20].to_vec(), all[20..].to_vec());
    let u = unstable_manifold_local(m, &w).unwrap();
    assert!(u.gaps.windows(2).all(|g| g[1] <= g[0]), "{:?}", u.gaps);
    assert!(u.within_band(&m.params));
    assert_eq!(u.cone_violations, 0);
    let d = decode(m, &w).unwrap();
    let pt = d.point.approx();
    assert!((u.eval(pt.y) - pt.x).abs() < 1e-9, "{} {}", u.eval(pt.y), pt.x);
}

#[test]
fn short_backward_word_is_insufficient() {
    let m = map();
    assert!(matches!(
        unstable_manifold_local(m, &word("77.7")),
        Err(LabError::NoConvergence(_))
    ));
}

#[test]
fn stable_leaf_of_critical_value_is_horizontal() {
    let m = map();
    let fw = SymbolWord::new(vec![], critical_forward_word(20)[1..].to_vec());
    let s = stable_manifold_local(m, &fw).unwrap();
    let fy = m.frame.f_xi.y;
    assert!(s.values.iter().all(|v| (v - fy).abs() <= MANIFOLD_TOL * m.params.l0));
    assert!(s.slopes.iter().all(|&k| k == 0.0));
    assert!(s.within_band(&m.params));
}

#[test]
fn stable_manifold_through_a_future_visit() {
    let m = map();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let all = word_with_visit(&mut rng, 32, 12, 6);
    let w = SymbolWord::new(all[..4].to_vec(), all[4..].to_vec());
    let s = stable_manifold_local(m, &w).unwrap();
    assert!(s.gap() < MANIFOLD_TOL * m.params.l0);
    assert!(s.within_band(&m.params));
    assert_eq!(s.cone_violations, 0);
    let d = decode(m, &w).unwrap();
    let pt = d.point.approx();
    assert!((s.eval(pt.x) - pt.y).abs() < 1e-9);
}

#[test]
fn bracket_of_a_point_with_itself() {
    let m = map();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let w = random_word(&mut rng, 16, 16);
        let d = decode(m, &w).unwrap();
        let b = bracket(m, &w, &w).unwrap();
        let e = b.exact.unwrap();
        assert!((e.x - d.point.x).abs().approx() < 1e-25);
        assert!((e.y - d.point.y).abs().approx() < 1e-25);
        assert!(!b.tangential);
    }
}

#[test]
fn bracket_of_fixed_point_and_cycle_shadows_both() {
    let m = map();
    let fixed = word("7777777777777777.7777777777777777");
    let cycle = word("816816816816816816.816816816816816816");
    let b = bracket(m, &fixed, &cycle).unwrap();
    let coded = code(m, b.exact.unwrap(), 12, 12).unwrap();
    assert!(coded.backward.iter().all(|&s| s == 7));
    // the row of the cycle point in the column of the fixed point
    assert_eq!(coded.forward[0], 7);
    assert_eq!(&coded.forward[1..12], &cycle.forward[1..12]);
    assert!((b.angle - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
}

#[test]
fn bracket_reproduces_the_tangency() {
    let m = map();
    let image = word("777777777777777777774.816816816816816816");
    let cycle = word("816816816816816816.816816816816816816");
    let b = bracket(m, &image, &cycle).unwrap();
    assert!(b.tangential, "{b:?}");
    assert!((b.point.x - m.frame.f_xi.x).abs() < 1e-15);
    assert!((b.point.y - m.frame.f_xi.y).abs() < 1e-15);

    let p = &m.params;
    let perturbed = PerturbedMap::with_theta(p, 1e-4 * p.beta_max * p.beta_max).unwrap();
    let b = bracket(&perturbed, &image, &cycle).unwrap();
    assert!(!b.tangential, "{b:?}");
    assert!(b.chart_angle.unwrap() > 0.5e-4);
}

#[test]
fn tangency_is_cubic() {
    let m = map();
    let r = tangency_order(m).unwrap();
    assert_eq!(r.order, 3);
    assert!((r.a3 / r.a3_expected - 1.0).abs() < 1e-6, "{r:?}");
    assert!(r.derivatives[0].abs() < ORDER_TOL && r.derivatives[1].abs() < ORDER_TOL);
    assert!(r.residuals.iter().all(|e| e.abs() < 1e-12));
    let back: TangencyReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back.order, 3);
}

#[test]
fn perturbation_makes_the_contact_transversal() {
    let m0 = map();
    let p = &m0.params;
    let b2 = p.beta_max * p.beta_max;
    for k in [1e-6, 1e-4, 1e-2] {
        let theta = k * b2;
        let m = PerturbedMap::with_theta(p, theta).unwrap();
        let r = tangency_order(&m).unwrap();
        assert_eq!(r.order, 1);
        // expanding the cubic with theta: Y = X^3 + (theta / beta^2) X
        assert!((r.derivatives[0] / k - 1.0).abs() < 1e-6, "{r:?}");
        assert!(r.angle >= 0.99 * k);
    }
}

#[test]
fn separation_follows_itineraries() {
    let m = map();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut pairs = Vec::new();
    for _ in 0..20 {
        let a = random_word(&mut rng, 6, 44);
        let b = random_word(&mut rng, 6, 44);
        pairs.push((decode(m, &a).unwrap(), decode(m, &b).unwrap()));
        pairs.push((decode(m, &a).unwrap(), decode(m, &a).unwrap()));
    }
    let recs = separation_check(&pairs, 40, m.params.d).unwrap();
    assert!(recs.iter().all(|r| !r.violated()));
    assert!(recs.iter().skip(1).step_by(2).all(|r| r.close && r.agree));
}

#[test]
fn manifold_csv_has_one_row_per_node() {
    let m = map();
    let w = unstable_manifold_local(m, &word("7777777777777.7")).unwrap();
    let csv = w.to_csv();
    assert!(csv.starts_with("t,x,y,slope"));
    assert_eq!(csv.lines().count(), CHEB_NODES + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_curves_stay_in_family(seed in any::<u64>(), pick in 0usize..40) {
        let m = map();
        let p = &m.params;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curve = VerticalCurve::random(p, &mut rng);
        let words = first_return_words(p, 4);
        let w = &words[pick % words.len()];
        let out = unstable_graph_transform(m, &curve, w).unwrap();
        prop_assert!(out.curve.check(p).pass());
        prop_assert!(out.derivative_ratio <= 1.0);
    }
}
