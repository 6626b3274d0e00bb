mod common;

use cavflow::coordination::{select_exit_speed, unconstrained_trajectory, CubicSegment, SafetyParams, State};
use common::{bump, hermite, perturbed_energy, sampled_feasible, scan_exit_speed, transcribed_energy, Transfer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LIMITS: (f64, f64, f64, f64) = (1.0, 20.0, -4.0, 3.0);

fn cubic(bc: &Transfer) -> CubicSegment {
    unconstrained_trajectory(State::new(bc.t0, bc.s0, bc.v0), State::new(bc.tf, bc.sf, bc.vf)).unwrap()
}

fn random_feasible(rng: &mut ChaCha8Rng) -> Transfer {
    loop {
        let t0 = rng.random_range(0.0..200.0);
        let duration = rng.random_range(4.0..40.0);
        let v0 = rng.random_range(2.0..18.0);
        let vf = rng.random_range(2.0..18.0);
        let mean = rng.random_range(0.7..1.3) * 0.5 * (v0 + vf);
        let bc = Transfer { t0, tf: t0 + duration, s0: 0.0, v0, sf: mean * duration, vf };
        if sampled_feasible(&bc, LIMITS, 1e-3) {
            return bc;
        }
    }
}

#[test]
fn transcription_values_are_frozen() {
    let bc = Transfer { t0: 5.0, tf: 25.0, s0: 0.0, v0: 14.0, sf: 200.0, vf: 8.0 };
    assert!((transcribed_energy(&bc, 0.05) - 1.200001875).abs() < 1e-8);
    assert!((cubic(&bc).energy() - 1.2).abs() < 1e-12);
    let coasting = Transfer { t0: 0.0, tf: 10.0, s0: 0.0, v0: 12.0, sf: 120.0, vf: 12.0 };
    assert!(transcribed_energy(&coasting, 0.05).abs() < 1e-12);
}

#[test]
fn cubic_energy_matches_transcription_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let bc = random_feasible(&mut rng);
        let oracle = transcribed_energy(&bc, 0.05);
        let energy = cubic(&bc).energy();
        assert!((energy - oracle).abs() <= 0.01 * oracle + 1e-9, "{bc:?}: cubic {energy} vs oracle {oracle}");
        assert!(energy <= oracle + 1e-9);
    }
}

#[test]
fn no_perturbation_beats_the_cubic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let bc = random_feasible(&mut rng);
        let energy = cubic(&bc).energy();
        for _ in 0..200 {
            let k = rng.random_range(1..8);
            let amplitude = rng.random_range(0.05..3.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            assert!(perturbed_energy(&bc, k, amplitude) >= energy * (1.0 - 1e-9));
        }
    }
}

#[test]
fn perturbation_shape_respects_boundary_conditions() {
    for k in 1..8 {
        for r in [0.0, 1.0] {
            let (v, _) = bump(k, r);
            assert!(v.abs() < 1e-12);
        }
        let h = 1e-6;
        let slope0 = (bump(k, h).0 - bump(k, 0.0).0) / h;
        let slope1 = (bump(k, 1.0).0 - bump(k, 1.0 - h).0) / h;
        assert!(slope0.abs() < 1e-5 && slope1.abs() < 1e-5);
    }
}

#[test]
fn exit_speed_matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let params = SafetyParams::default();
    let mut infeasible_targets = 0;
    for _ in 0..60 {
        let t0 = rng.random_range(0.0..50.0);
        let duration = rng.random_range(4.0..30.0);
        let v0 = rng.random_range(2.0..18.0);
        let sf = rng.random_range(0.6..1.4) * v0 * duration;
        let v_bar = rng.random_range(1.0..20.0);
        let bc = Transfer { t0, tf: t0 + duration, s0: 0.0, v0, sf, vf: v_bar };
        let scanned = scan_exit_speed(&bc, v_bar, LIMITS, 1e-3);
        let chosen = select_exit_speed(v_bar, bc.t0, bc.tf, bc.sf, bc.v0, &params).ok();
        match (scanned, chosen) {
            (Some(s), Some(c)) => {
                assert!((s - c).abs() <= 2e-3, "{bc:?}: scan {s} vs chosen {c}");
                if sampled_feasible(&bc, LIMITS, 1e-3) {
                    assert_eq!(c, v_bar);
                } else {
                    infeasible_targets += 1;
                }
            }
            (None, None) => {}
            other => panic!("{bc:?}: disagreement {other:?}"),
        }
    }
    assert!(infeasible_targets > 0, "the sample should exercise the projection");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cubic_meets_boundary_conditions(
        t0 in -50.0..200.0f64,
        duration in 0.5..60.0f64,
        s0 in -10.0..10.0f64,
        v0 in 0.0..25.0f64,
        distance in 1.0..600.0f64,
        vf in 0.0..25.0f64,
    ) {
        let bc = Transfer { t0, tf: t0 + duration, s0, v0, sf: s0 + distance, vf };
        let seg = cubic(&bc);
        let scale = 1.0 + distance;
        prop_assert!((seg.position(bc.t0) - s0).abs() <= 1e-9 * scale);
        prop_assert!((seg.speed(bc.t0) - v0).abs() <= 1e-9 * scale);
        prop_assert!((seg.position(bc.tf) - bc.sf).abs() <= 1e-9 * scale);
        prop_assert!((seg.speed(bc.tf) - vf).abs() <= 1e-9 * scale);
        for k in 0..=10 {
            let t = bc.t0 + duration * k as f64 / 10.0;
            let (s, v, u) = hermite(&bc, t);
            prop_assert!((seg.position(t) - s).abs() <= 1e-8 * scale);
            prop_assert!((seg.speed(t) - v).abs() <= 1e-8 * scale);
            prop_assert!((seg.input(t) - u).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn closed_form_ranges_agree_with_millisecond_sampling(
        duration in 1.0..40.0f64,
        v0 in 0.0..25.0f64,
        distance in 5.0..500.0f64,
        vf in 0.0..25.0f64,
    ) {
        let bc = Transfer { t0: 3.0, tf: 3.0 + duration, s0: 0.0, v0, sf: distance, vf };
        let seg = cubic(&bc);
        let (lo, hi) = seg.speed_range();
        let (ulo, uhi) = seg.input_range();
        let n = (duration / 1e-3).ceil() as usize;
        let (mut slo, mut shi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sulo, mut suhi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..=n {
            let t = (bc.t0 + k as f64 * 1e-3).min(bc.tf);
            slo = slo.min(seg.speed(t));
            shi = shi.max(seg.speed(t));
            sulo = sulo.min(seg.input(t));
            suhi = suhi.max(seg.input(t));
        }
        let tol = 1e-9 * (1.0 + shi.abs());
        prop_assert!(lo <= slo + tol && shi <= hi + tol);
        let vertex_tol = 1.25e-7 * (uhi - ulo) / duration + 1e-9;
        prop_assert!(slo - lo <= vertex_tol && hi - shi <= vertex_tol);
        prop_assert!((sulo - ulo).abs() <= 1e-9 * (1.0 + ulo.abs()) && (suhi - uhi).abs() <= 1e-9 * (1.0 + uhi.abs()));
        let limits = SafetyParams::default();
        let sampled = slo >= limits.v_min && shi <= limits.v_max && sulo >= limits.u_min && suhi <= limits.u_max;
        if seg.within_limits(&limits) {
            prop_assert!(sampled || seg.limit_excess(&limits) <= 1e-9);
        } else {
            prop_assert!(!sampled || seg.limit_excess(&limits) <= vertex_tol);
        }
    }

    #[test]
    fn bump_perturbations_never_lower_energy(
        duration in 2.0..40.0f64,
        v0 in 2.0..18.0f64,
        vf in 2.0..18.0f64,
        stretch in 0.7..1.3f64,
        k in 1u32..10,
        amplitude in -5.0..5.0f64,
    ) {
        let bc = Transfer { t0: 0.0, tf: duration, s0: 0.0, v0, sf: stretch * 0.5 * (v0 + vf) * duration, vf };
        let energy = cubic(&bc).energy();
        prop_assert!(perturbed_energy(&bc, k, amplitude) >= energy * (1.0 - 1e-9) - 1e-12);
    }
}
