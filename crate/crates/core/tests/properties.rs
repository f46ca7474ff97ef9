mod common;

use nalgebra::{DVector, Matrix2};
use proptest::prelude::*;
use qtrack::analysis::{common_invariant_box, resilience_bound};
use qtrack::codec::{coordinate_rates, FollowerCodec, LeaderCodec, Zoom};
use qtrack::dos::{DosInterval, DosSignal};
use qtrack::experiment::{self, decode_codewords, encode_codewords, load_scenario};
use qtrack::linalg::{e_matrix, e_matrix_inv, real_jordan_form, JordanOptions, Mat};
use qtrack::quantizer::FollowerQuantizer;
use qtrack::scenario::ScenarioConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn follower_quantizer_error_within_sigma(
        levels in 1u64..10_000,
        log_sigma in -3.0f64..3.0,
        frac in -1.0f64..1.0,
    ) {
        let sigma = 10f64.powf(log_sigma);
        let q = FollowerQuantizer::new(levels, sigma).unwrap();
        let x = frac * q.range();
        let s = q.quantize(x);
        prop_assert!((x - s.value).abs() <= sigma * (1.0 + 1e-12));
        prop_assert!(s.codeword.unsigned_abs() <= levels);
        prop_assert_eq!(q.decode(s.codeword), s.value);
    }

    #[test]
    fn zoom_theta_matches_closed_form(
        jams in proptest::collection::vec(any::<bool>(), 0..400),
        theta0 in 0.01f64..100.0,
        gamma1 in 0.5f64..0.999,
        gamma2 in 1.001f64..1.5,
    ) {
        let mut zoom = Zoom::new(theta0, gamma1, gamma2).unwrap();
        let mut iterated = theta0;
        for &j in &jams {
            let theta = zoom.step(j);
            iterated *= if j { gamma2 } else { gamma1 };
            let (s, m) = zoom.counts();
            prop_assert_eq!(theta, theta0 * gamma1.powi(s as i32) * gamma2.powi(m as i32));
            prop_assert!((theta - iterated).abs() <= 1e-12 * iterated.max(theta));
        }
        let successes = jams.iter().filter(|j| !**j).count() as u32;
        prop_assert_eq!(zoom.counts(), (successes, jams.len() as u32 - successes));
    }

    #[test]
    fn leader_encoder_and_decoder_stay_bitwise_equal(
        seed in any::<u64>(),
        jams in proptest::collection::vec(prop::bool::weighted(0.4), 1..150),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, _) = common::random_leader_matrix(&mut rng);
        let Ok(dec) = real_jordan_form(&s, &JordanOptions::default()) else {
            return Ok(());
        };
        let n = dec.dim();
        let rates = coordinate_rates(&dec, &vec![1.5; dec.blocks.len()]).unwrap();
        let omega0 = DVector::from_element(n, 1.0);
        let mut v_bar = DVector::from_fn(n, |i, _| 0.9 * ((i as f64) * 0.7).sin());
        let mut enc = LeaderCodec::new(dec.s_bar.clone(), dec.s_tilde.clone(), rates.clone(), omega0.clone()).unwrap();
        let mut rx = LeaderCodec::new(dec.s_bar.clone(), dec.s_tilde.clone(), rates, omega0).unwrap();
        for (k, &jammed) in jams.iter().enumerate() {
            v_bar = &dec.s_bar * &v_bar;
            let msg = enc.step(k + 1, &v_bar, jammed).unwrap();
            rx.decode(msg.as_ref().map(|m| (m.codewords.as_slice(), m.rescale)));
            prop_assert_eq!(enc.estimate().as_slice(), rx.estimate().as_slice());
            prop_assert_eq!(enc.omega().as_slice(), rx.omega().as_slice());
        }
    }

    #[test]
    fn follower_encoder_and_decoder_stay_bitwise_equal(
        jams in proptest::collection::vec(prop::bool::weighted(0.3), 1..200),
        start in proptest::array::uniform2(-5.0f64..5.0),
    ) {
        let s_bar = Mat::from_row_slice(2, 2, &[1.01, 1.0, 0.0, 1.01]);
        let q = FollowerQuantizer::new(1000, 1.0).unwrap();
        let mut zoom = Zoom::new(10.0, 0.95, 1.02).unwrap();
        let mut tx = FollowerCodec::new(2);
        let mut rx = FollowerCodec::new(2);
        let mut z = DVector::from_column_slice(&start);
        let contraction = Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.9]);
        for &jammed in &jams {
            z = &contraction * &z;
            let theta = zoom.theta();
            let msg = tx.encode(&s_bar, &z, theta, &q);
            let codes = (!jammed).then_some(msg.codewords.as_slice());
            tx.decode(&s_bar, codes, theta, &q);
            rx.decode(&s_bar, codes, theta, &q);
            zoom.step(jammed);
            prop_assert_eq!(tx.estimate().as_slice(), rx.estimate().as_slice());
        }
    }

    #[test]
    fn jordan_form_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, moduli) = common::random_leader_matrix(&mut rng);
        let Ok(dec) = real_jordan_form(&s, &JordanOptions::default()) else {
            return Ok(());
        };
        let n = dec.dim();
        let scale = s.abs().max().max(1.0);
        prop_assert!((&dec.t * &dec.t_inv - Mat::identity(n, n)).amax() < 1e-8);
        prop_assert!((&dec.t * &s * &dec.t_inv - &dec.real_form).amax() < 1e-7 * scale);
        for k in [0usize, 1, 2, 7, 40] {
            let lhs = e_matrix(&dec, k + 1) * &dec.real_form * e_matrix_inv(&dec, k);
            prop_assert!((lhs - &dec.s_bar).amax() < 1e-9 * scale);
        }
        for i in 0..n {
            for j in 0..n {
                prop_assert!(dec.s_bar[(i, j)].abs() <= dec.s_tilde[(i, j)] + 1e-12);
                if i > j {
                    prop_assert_eq!(dec.s_tilde[(i, j)], 0.0);
                }
            }
        }
        prop_assert!(dec.blocks.windows(2).all(|w| w[0].modulus >= w[1].modulus - 1e-12));
        let rho = moduli.iter().copied().fold(0.0, f64::max);
        prop_assert!((dec.spectral_radius() - rho).abs() < 1e-6);
        let mut found: Vec<f64> = dec.blocks.iter().map(|b| b.modulus).collect();
        let mut built = moduli.clone();
        found.sort_by(f64::total_cmp);
        built.sort_by(f64::total_cmp);
        prop_assert_eq!(found.len(), built.len());
        prop_assert!(found.iter().zip(&built).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn dos_rasterization_matches_interval_oracle(
        raw in proptest::collection::vec((1u32..190, 0u32..30), 0..12),
        pulses in proptest::collection::vec(1u32..199, 0..4),
    ) {
        // Attack times on a 0.01 s lattice, sampled at Δ = 0.1 over 20 s.
        let delta = 0.1;
        let mut intervals: Vec<DosInterval> = raw
            .iter()
            .map(|&(s, d)| DosInterval { start: s as f64 * 0.1 + 0.03 * (s % 3) as f64, duration: d as f64 * 0.1 })
            .collect();
        intervals.extend(pulses.iter().map(|&p| DosInterval { start: p as f64 * 0.1, duration: 0.0 }));
        let signal = DosSignal::new(intervals.clone(), delta, 20.0).unwrap();
        let jams = signal.jam_sequence();
        prop_assert_eq!(jams.len(), 201);
        for (k, &j) in jams.iter().enumerate() {
            // integer arithmetic in hundredths of a second
            let t = k as i64 * 10;
            let expected = intervals.iter().any(|iv| {
                let a = (iv.start * 100.0).round() as i64;
                let b = ((iv.start + iv.duration) * 100.0).round() as i64;
                if iv.duration == 0.0 { t == a } else { t >= a && t < b }
            });
            prop_assert_eq!(j, expected, "step {}", k);
        }
    }

    #[test]
    fn resilience_bound_decreases_in_both_zoom_factors(
        g1 in 0.5f64..0.98,
        dg1 in 0.001f64..0.01,
        g2 in 1.001f64..1.5,
        dg2 in 0.001f64..0.1,
    ) {
        let base = resilience_bound(g1, g2, 0.5).unwrap();
        let tighter = resilience_bound(g1 + dg1, g2, 0.5).unwrap();
        let wider = resilience_bound(g1, g2 + dg2, 0.5).unwrap();
        prop_assert!(tighter.bound < base.bound);
        prop_assert!(wider.bound < base.bound);
        prop_assert!(wider.ceiling < base.ceiling);
        prop_assert!(base.bound > 0.0 && base.bound < 1.0);
    }

    #[test]
    fn invariant_box_is_invariant(
        a in proptest::collection::vec(0.0f64..0.5, 6),
        d in proptest::collection::vec(0.1f64..0.95, 6),
        w0 in proptest::collection::vec(0.0f64..3.0, 3),
    ) {
        let m1 = Mat::from_row_slice(3, 3, &[d[0], a[0], a[1], 0.0, d[1], a[2], 0.0, 0.0, d[2]]);
        let m2 = Mat::from_row_slice(3, 3, &[d[3], a[3], a[4], 0.0, d[4], a[5], 0.0, 0.0, d[5]]);
        let w0 = DVector::from_vec(w0);
        let p = common_invariant_box(&[m1.clone(), m2.clone()], &w0).unwrap();
        for m in [&m1, &m2] {
            let mp = m * &p;
            prop_assert!(mp.iter().zip(p.iter()).all(|(x, y)| *x <= y * (1.0 + 1e-12)));
        }
        prop_assert!(p.iter().zip(w0.iter()).all(|(x, y)| x >= y));
    }

    #[test]
    fn config_round_trips_through_toml(
        gamma1 in 0.917f64..0.99,
        sigma in 0.1f64..10.0,
        seed in any::<u64>(),
        horizon in 1u32..40,
    ) {
        let mut cfg = ScenarioConfig::load(&common::scenario("example1.toml")).unwrap();
        cfg.codec.gamma1 = gamma1;
        cfg.codec.sigma = sigma;
        cfg.seed = seed;
        cfg.run.horizon = horizon as f64;
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), cfg);
    }
}

/// `‖A‖₂` of a 2x2 matrix in closed form.
fn norm2_2x2(a: &Matrix2<f64>) -> f64 {
    let f2 = a.norm_squared();
    let det = a.determinant();
    ((f2 + (f2 * f2 - 4.0 * det * det).max(0.0).sqrt()) / 2.0).sqrt()
}

#[test]
fn power_bound_holds_past_its_cutoff() {
    let sc = load_scenario(&common::scenario("example1.toml"), None).unwrap();
    let consts = sc.report.constants.clone().expect("example1 is certified");
    let a = Matrix2::from_iterator(sc.system.dec.s_bar.iter().copied()) / sc.params.gamma2;
    let mut p = Matrix2::identity();
    let mut worst: f64 = 1.0;
    for _ in 0..2_000_000 {
        p *= a;
        worst = worst.max(norm2_2x2(&p));
    }
    assert!(consts.c2_cutoff < 2_000_000);
    assert!(worst <= consts.c2 * (1.0 + 1e-9), "max power norm {worst} above C2 = {}", consts.c2);
}

#[test]
fn doubling_sigma_doubles_the_range_and_keeps_the_bits() {
    let mut cfg = ScenarioConfig::load(&common::scenario("example1.toml")).unwrap();
    let base = cfg.build(None).unwrap().report.requirement.unwrap();
    cfg.codec.sigma *= 2.0;
    let doubled = cfg.build(None).unwrap().report.requirement.unwrap();
    assert!((doubled.range / base.range - 2.0).abs() < 1e-9, "{} vs {}", doubled.range, base.range);
    assert_eq!(doubled.bits, base.bits);
    assert_eq!(doubled.levels, base.levels);
}

#[test]
fn runs_are_deterministic() {
    let path = common::scenario("example1.toml");
    let a = load_scenario(&path, Some(3)).unwrap();
    let b = load_scenario(&path, Some(3)).unwrap();
    assert_eq!(a.dos.intervals(), b.dos.intervals());
    let ra = experiment::run(&a).unwrap();
    let rb = experiment::run(&b).unwrap();
    assert_eq!(experiment::trace_csv(&a, &ra.trace), experiment::trace_csv(&b, &rb.trace));
    let bytes = encode_codewords(&a, &ra.trace);
    assert_eq!(bytes, encode_codewords(&b, &rb.trace));
    decode_codewords(&bytes).unwrap();
}

#[test]
fn scenario_files_round_trip() {
    let dir = common::scenario("");
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let Ok(cfg) = ScenarioConfig::load(&path) else {
            continue;
        };
        let text = cfg.to_toml().unwrap();
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), cfg, "{}", path.display());
    }
}

#[test]
fn example_scenarios_build() {
    for name in [
        "example1.toml",
        "example1_bottleneck.toml",
        "ceiling_converge.toml",
        "ceiling_overflow.toml",
        "example2.toml",
        "example2_step_q.toml",
        "example2_step_noq.toml",
    ] {
        load_scenario(&common::scenario(name), None).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
