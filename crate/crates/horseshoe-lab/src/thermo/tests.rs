use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::basemap::{admissible, transition_matrix};
use crate::params::{solve_params, SolverHints};

fn params() -> &'static ParamSet {
    static P: OnceLock<ParamSet> = OnceLock::new();
    P.get_or_init(|| solve_params(&SolverHints::default()).unwrap())
}

fn map() -> &'static PerturbedMap {
    static M: OnceLock<PerturbedMap> = OnceLock::new();
    M.get_or_init(|| PerturbedMap::new(params()).unwrap())
}

fn geometric() -> Potential {
    Potential::Geometric {
        weights: [0.3, -0.2, 0.5, 0.1, -0.4, 0.25, 0.0, 0.35, -0.1],
        decay: 0.5,
    }
}

/// Dense dominant eigenvalue of the depth-2 operator built straight from the
/// transition matrix.
fn dense_depth2_log_lambda(phi: impl Fn(u8, u8) -> f64) -> f64 {
    let a = transition_matrix();
    let mut words = Vec::new();
    for i in 0..9 {
        for j in 0..9 {
            if a[i][j] == 1 {
                words.push((i as u8 + 1, j as u8 + 1));
            }
        }
    }
    let n = words.len();
    let mut m = vec![vec![0.0; n]; n];
    for (r, &(u0, u1)) in words.iter().enumerate() {
        for (c, &(s, v0)) in words.iter().enumerate() {
            if v0 == u0 && a[s as usize - 1][u0 as usize - 1] == 1 {
                let _ = u1;
                m[r][c] = phi(s, v0).exp();
            }
        }
    }
    let mut h = vec![1.0; n];
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let next: Vec<f64> = (0..n).map(|r| (0..n).map(|c| m[r][c] * h[c]).sum()).collect();
        lambda = next.iter().sum::<f64>() / h.iter().sum::<f64>();
        let s: f64 = next.iter().sum();
        h = next.iter().map(|v| v / s).collect();
    }
    lambda.ln()
}

#[test]
fn word_space_counts_and_indexing() {
    for m in 2..=6 {
        let s = WordSpace::new(m).unwrap();
        assert_eq!(s.len(), 9 * 3usize.pow(m as u32 - 1));
        for i in 0..s.len() {
            let w = s.word(i);
            assert!(w.windows(2).all(|p| admissible(p[0], p[1])));
            assert_eq!(s.index(w), Some(i));
        }
    }
    assert!(WordSpace::new(1).is_err());
    let s = WordSpace::new(3).unwrap();
    assert_eq!(s.index(&[1, 1, 3]), None);
}

#[test]
fn predecessors_and_successors_are_the_shift() {
    let s = WordSpace::new(4).unwrap();
    for i in 0..s.len() {
        let w = s.word(i);
        let mut firsts = Vec::new();
        for j in s.predecessors(i) {
            let v = s.word(j);
            assert_eq!(&v[1..], &w[..3]);
            assert!(admissible(v[0], w[0]));
            firsts.push(v[0]);
        }
        firsts.sort();
        firsts.dedup();
        assert_eq!(firsts.len(), 3);
        for j in s.successors(i) {
            let v = s.word(j);
            assert_eq!(&v[..3], &w[1..]);
        }
    }
}

#[test]
fn zero_potential_counts_predecessors() {
    let n = WordSpace::new(5).unwrap().len();
    let out = transfer_apply(params(), &Potential::Zero, &vec![1.0; n], 5).unwrap();
    assert!(out.iter().all(|v| *v == 3.0));
    assert!(transfer_apply(params(), &Potential::Zero, &[1.0; 3], 5).is_err());
}

#[test]
fn pressure_of_zero_is_log_three() {
    let p = pressure(params(), &Potential::Zero, DEFAULT_DEPTH).unwrap();
    assert!((p - 3f64.ln()).abs() < 1e-8, "{p}");
}

#[test]
fn constant_potential_shifts_pressure() {
    let base = pressure(params(), &Potential::Zero, 5).unwrap();
    for k in [-2.5, 0.7, 40.0] {
        let p = pressure(params(), &Potential::Constant(k), 5).unwrap();
        assert!((p - base - k).abs() < 1e-10, "{k}: {p}");
    }
}

#[test]
fn row_rate_pressure_matches_band_quotient() {
    let p = params();
    let mut last = f64::INFINITY;
    for t in [0.0, 0.5, 1.0] {
        let expected = (2.0 * p.sigma.powf(-t) + p.rho.powf(-t)).ln();
        for m in [2, 6] {
            let got = pressure(p, &Potential::RowRate { t }, m).unwrap();
            assert!((got - expected).abs() < 1e-10, "t={t} m={m}: {got} vs {expected}");
        }
        let got = pressure(p, &Potential::RowRate { t }, 6).unwrap();
        assert!(got < last);
        last = got;
    }
}

#[test]
fn depth_two_matches_dense_operator() {
    let pot = geometric();
    let Potential::Geometric { weights, decay } = pot.clone() else { unreachable!() };
    let oracle = dense_depth2_log_lambda(|a, b| weights[a as usize - 1] + decay * weights[b as usize - 1]);
    let got = pressure(params(), &pot, 2).unwrap();
    assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
}

#[test]
fn parry_measure_is_uniform() {
    let mu = equilibrium_measure(params(), &Potential::Zero, DEFAULT_DEPTH).unwrap();
    let n = mu.weights.len() as f64;
    for w in &mu.weights {
        assert!((w * n - 1.0).abs() < 1e-10);
    }
    assert!((mu.total_mass() - 1.0).abs() < 1e-12);
    assert!((mu.entropy - 3f64.ln()).abs() < 1e-6);
    assert!(mu.variational_gap() < 1e-6);
    let g = gibbs_bounds(&mu, 200, 12, 5).unwrap();
    assert!(g.max_ratio / g.min_ratio < 1.0 + 1e-9);
}

#[test]
fn variational_identity_for_geometric_potential() {
    let mu = equilibrium_measure(params(), &geometric(), 6).unwrap();
    assert!(mu.variational_gap() < 1e-6, "{}", mu.variational_gap());
    assert!(mu.entropy < 3f64.ln());
    assert!(mu.shift_invariance_error() < 1e-12);
    let g = gibbs_bounds(&mu, 300, 15, 9).unwrap();
    assert!(g.k >= 1.0 && g.k.is_finite());
    let row = equilibrium_measure(params(), &Potential::RowRate { t: 1.0 }, 4).unwrap();
    let gr = gibbs_bounds(&row, 300, 10, 9).unwrap();
    assert!(gr.k < 1e3);
}

#[test]
fn locally_constant_measures_are_compatible_across_depths() {
    let pot = Potential::RowRate { t: 0.5 };
    let coarse = equilibrium_measure(params(), &pot, 4).unwrap();
    let fine = equilibrium_measure(params(), &pot, 5).unwrap();
    let marg = fine.marginal(4).unwrap();
    for (a, b) in marg.iter().zip(&coarse.weights) {
        assert!((a - b).abs() < 1e-12);
    }
    let ext = coarse.extend();
    for (a, b) in ext.iter().zip(&fine.weights) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn geometric_truncations_converge() {
    let curve = pressure_curve(params(), &geometric(), &[2, 3, 4, 5, 6, 7]).unwrap();
    let ratios = curve.difference_ratios();
    assert!(!ratios.is_empty());
    assert!(ratios.iter().all(|r| *r < 1.0), "{ratios:?}");
    let csv = curve.to_csv();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("m,value"));
    let osc: Vec<f64> = (2..5).map(|m| geometric().oscillation(params(), m).unwrap()).collect();
    assert!(osc[1] < osc[0] && osc[2] < osc[1]);
}

#[test]
fn power_iteration_is_start_independent() {
    let op = TransferOperator::new(params(), &geometric(), DEFAULT_DEPTH).unwrap();
    let u = uniqueness_check(&op, 10, 17).unwrap();
    assert!(u.spread < 1e-8, "{}", u.spread);
    assert!(u.log_lambda_spread < 1e-10);
    assert!(duality_residual(&op, 5, 3).unwrap() < 1e-10);
    let bad = vec![0.0; op.len()];
    assert!(op.dominant(&bad, false).is_err());
}

#[test]
fn height_potential_is_holder_and_balanced() {
    let pot = Potential::height(map().clone(), 1.0);
    let osc: Vec<f64> = (2..5).map(|m| pot.oscillation(params(), m).unwrap()).collect();
    assert!(osc[0] > 0.0);
    assert!(osc[1] < osc[0] && osc[2] < osc[1], "{osc:?}");
    let mu = equilibrium_measure(params(), &pot, 5).unwrap();
    assert!(mu.variational_gap() < 1e-6);
}

#[test]
fn csv_lists_every_word() {
    let mu = equilibrium_measure(params(), &Potential::Zero, 3).unwrap();
    let csv = mu.to_csv();
    assert_eq!(csv.lines().count(), 1 + 81);
    assert!(csv.lines().nth(1).unwrap().starts_with("133,"));
}

#[test]
fn pushed_cloud_is_invariant_within_transport_tolerance() {
    let mu = equilibrium_measure(params(), &Potential::Zero, 6).unwrap();
    let cloud = push_to_lambda(map(), &mu, 6, 3).unwrap();
    let next = push_to_lambda(map(), &mu, 6, 4).unwrap();
    assert!((cloud.total_mass() - 1.0).abs() < 1e-12);
    assert!(cloud.avoids_gaps(params()));
    let g = |pt: Point| (3.0 * pt.x).sin() + (2.0 * pt.y).cos();
    let lip = 13f64.sqrt();
    let direct = cloud.integrate(g);
    let pushed: f64 = cloud
        .points
        .iter()
        .map(|w| w.weight * g(map().apply(w.point).point().expect("stays in the square")))
        .sum();
    let diam = cloud.max_diameter().max(next.max_diameter());
    assert!((pushed - direct).abs() <= 2.0 * lip * diam, "{} vs {}", (pushed - direct).abs(), diam);
    assert!(push_to_lambda(map(), &mu, 6, 6).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transfer_operator_is_linear_and_positive(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let op = TransferOperator::new(params(), &geometric(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..op.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let g: Vec<f64> = (0..op.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let lf = op.apply(&f);
        let lg = op.apply(&g);
        let lc = op.apply(&combo);
        for i in 0..op.len() {
            prop_assert!((lc[i] - (a * lf[i] + b * lg[i])).abs() < 1e-12 * (1.0 + lf[i] + lg[i]) * 4.0);
            prop_assert!(lf[i] >= 0.0);
        }
    }
}
