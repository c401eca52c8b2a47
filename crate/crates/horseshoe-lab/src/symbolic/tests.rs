use super::*;
use crate::basemap::gen_rectangle;
use crate::params::{solve_params, SolverHints};
use proptest::prelude::*;
use rand::Rng;
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

fn has_visit_pattern(w: &[u8]) -> bool {
    w.windows(7).any(|s| s[..6].iter().all(|&a| a == 7) && s[6] == 4)
}

#[test]
fn sevens_decode_to_origin() {
    let d = decode(map(), &word("7777777777.7777777777")).unwrap();
    let p = &map().params;
    assert!(d.point.x.approx().abs() <= p.l0 * p.lambda.powi(10));
    assert!(d.point.y.approx().abs() <= p.l0 * p.sigma.powi(-9));
    assert!(d.visits.is_empty());
    assert!(d.x_box.contains(0.0) && d.y_box.contains(0.0));
}

#[test]
fn origin_codes_to_sevens() {
    let w = code(map(), Point::new(DD::zero(), DD::zero()), 12, 12).unwrap();
    assert!(w.symbols().all(|s| s == 7));
    assert_eq!(w.generation(), (12, 12));
}

#[test]
fn critical_point_codes_to_its_itinerary() {
    let m = map();
    let xi = Point::new(DD::zero(), DD::lit(m.frame.xi.y));
    let w = code(m, xi, 10, 7).unwrap();
    assert!(w.backward.iter().all(|&s| s == 7));
    assert_eq!(w.forward, crate::critmap::critical_forward_word(8));
}

#[test]
fn critical_window_decodes_into_region() {
    let m = map();
    let d = decode(m, &word("7777777777.4816816")).unwrap();
    assert!(d.visits.contains(&10));
    let pt = d.point.approx();
    assert!(m.frame.in_region(pt), "{pt:?}");
    let p = &m.params;
    let bound = (p.d / (p.c * p.rho.powi(4))).cbrt();
    assert!((pt.y - m.frame.xi.y).abs() <= bound);
}

#[test]
fn visit_height_solves_cubic() {
    let m = map();
    let x = DD::lit(0.3 * m.params.alpha_max);
    let target = DD::lit(1e-4);
    let y = solve_visit_height(m, x, target).unwrap();
    let resid = (cubic_value(m, x, y) - target).approx();
    assert!(resid.abs() < 1e-26, "{resid}");
}

#[test]
fn roundtrip_random_windows() {
    let m = map();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let w = random_word(&mut rng, 15, 14);
        let d = decode(m, &w).unwrap();
        let back = code(m, d.point, 15, 14).unwrap();
        assert_eq!(back, w);
    }
}

#[test]
fn roundtrip_through_visit() {
    let m = map();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for visit in [8, 12, 15, 18] {
        let all = word_with_visit(&mut rng, 30, visit, 7);
        assert!(SymbolWord::new(vec![], all.clone()).first_inadmissible().is_none());
        let w = SymbolWord::new(all[..15].to_vec(), all[15..].to_vec());
        let d = decode(m, &w).unwrap();
        assert!(d.visits.contains(&visit), "{w} {:?}", d.visits);
        let back = code(m, d.point, 15, 14).unwrap();
        assert_eq!(back, w);
    }
}

#[test]
fn enclosure_contains_point_and_shrinks() {
    let m = map();
    let p = &m.params;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 50 {
        let (n, k) = (rng.gen_range(1..8usize), rng.gen_range(1..8usize));
        let w = random_word(&mut rng, n, k);
        let all: Vec<u8> = w.symbols().collect();
        if has_visit_pattern(&all) {
            continue;
        }
        let d = decode(m, &w).unwrap();
        let pt = d.point.approx();
        assert!(d.x_box.contains(pt.x) && d.y_box.contains(pt.y));
        let (wx, wy) = d.diameter();
        // outward rounding adds a few ulps of the coordinate per step
        let slack = 64.0 * f64::EPSILON;
        assert!(wx <= p.l0 * p.lambda.powi(n as i32) + slack, "{w} {wx}");
        assert!(wy <= p.l0 * p.rho.powi(-(k as i32)) + slack, "{w} {wy}");
        let g = gen_rectangle(p, &w).unwrap();
        assert!(g.contains(pt), "{w}");
        checked += 1;
    }
}

#[test]
fn contraction_ratios_match_rates() {
    let m = map();
    let p = &m.params;
    let short = decode(m, &word("77777.7")).unwrap();
    let long = decode(m, &word("777777.7")).unwrap();
    let r = long.diameter().0 / short.diameter().0;
    assert!((r / p.lambda - 1.0).abs() < 1e-6, "{r}");
    let short = decode(m, &word(".77777")).unwrap();
    let long = decode(m, &word(".777777")).unwrap();
    let r = short.diameter().1 / long.diameter().1;
    assert!((r / p.sigma - 1.0).abs() < 1e-6, "{r}");
}

#[test]
fn inadmissible_word_rejected() {
    assert!(matches!(
        decode(map(), &word("7.2")),
        Err(LabError::Inadmissible(1))
    ));
}

#[test]
fn gap_point_partial_code() {
    let m = map();
    let pt = Point::new(DD::lit(0.5), DD::lit(0.3));
    let err = code(m, pt, 3, 3).unwrap_err();
    assert_eq!(err.escaped_at, 0);
    assert!(err.word.forward.is_empty());
}

#[test]
fn fixed_point_and_period_three_separate() {
    let m = map();
    let origin = Point::new(DD::zero(), DD::zero());
    let cycle = decode(m, &word("816816816816.816816816816")).unwrap();
    let e = expansivity_check(m, &[(origin, cycle.point), (origin, origin)], 40);
    assert!(e.separation[0].is_some());
    assert_eq!(e.separation[1], None);
    assert!(e.all_separate(&[false, true]));
}

#[test]
fn deep_cylinder_needs_longer_horizon() {
    let m = map();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples = holder_pairs(m, &mut rng, 12);
    let e = expansivity_check(m, &[(samples.0, samples.1)], 6);
    assert_eq!(e.separation[0], None);
    let e = expansivity_check(m, &[(samples.0, samples.1)], 40);
    let n = e.separation[0].expect("separates within 40");
    assert!(n.unsigned_abs() > 6);
}

/// Two decoded points whose forward windows agree on `0..=q` and then differ.
fn holder_pairs(m: &PerturbedMap, rng: &mut ChaCha8Rng, q: usize) -> (Point<DD>, Point<DD>) {
    let n_back = 8;
    let all = random_admissible(rng, &[], n_back + q + 6);
    let last = n_back + q;
    let col = band(all[last]).target_column();
    let row = RectangleId::new(all[last + 1]).unwrap().row() % 3 + 1;
    let mut other = all[..=last].to_vec();
    other.push(RectangleId::from_row_col(row, col).unwrap().get());
    let other = random_admissible(rng, &other, all.len());
    let split = |w: &[u8]| SymbolWord::new(w[..n_back].to_vec(), w[n_back..].to_vec());
    let a = decode(m, &split(&all)).unwrap();
    let b = decode(m, &split(&other)).unwrap();
    (a.point, b.point)
}

#[test]
fn holder_fit_is_positive() {
    let m = map();
    let samples = holder_samples(m, 1200, 10, 42).unwrap();
    let fit = holder_modulus(&samples).unwrap();
    assert!(fit.exponent > 0.0, "{fit:?}");
    // distances shrink at least like the slowest rate
    let slowest = (1.0 / m.params.lambda).min(m.params.rho).ln() / std::f64::consts::LN_2;
    assert!(fit.exponent > 0.5 * slowest, "{fit:?} vs {slowest}");
}

#[test]
fn holder_needs_enough_samples() {
    let s = vec![HolderSample { common: 1, distance: 0.1 }; 10];
    assert!(matches!(holder_modulus(&s), Err(LabError::InsufficientSamples(_))));
}

#[test]
fn cube_root_bound_at_critical_window() {
    let m = map();
    let checks = cube_root_law(m, &[3, 4, 5, 6, 7, 8], 12).unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c.pass), "{checks:?}");
}

#[test]
fn word_generators_are_admissible() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let w = random_word(&mut rng, 10, 10);
        assert!(w.first_inadmissible().is_none());
        let v = word_with_visit(&mut rng, 30, 12, 6);
        assert_eq!(v.len(), 30);
        assert_eq!(&v[6..16], &[7, 7, 7, 7, 7, 7, 4, 8, 1, 6]);
        assert!(SymbolWord::new(vec![], v).first_inadmissible().is_none());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decoded_orbit_follows_word(seed in any::<u64>(), n in 0usize..10, k in 0usize..10) {
        let m = map();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_word(&mut rng, n, k);
        let d = decode(m, &w).unwrap();
        for (pt, s) in d.orbit.iter().zip(w.symbols()) {
            let r = rectangle_of(&m.params, *pt).map(|r| r.get());
            prop_assert_eq!(r, Some(s));
        }
    }
}
