//! Helpers shared by the integration suites.
#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use qtrack::codec::{coordinate_rates, LeaderCodec};
use qtrack::linalg::{real_jordan_form, JordanOptions, Mat, Vector};
use qtrack::quantizer::{leader_quantize, FollowerQuantizer, MAX_LEVELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// Runs `samples` random inputs through the follower and leader quantizers
/// and counts error-bound, alphabet and codeword violations.
pub fn quantizer_violations(samples: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    let mut quantizer = FollowerQuantizer::new(1, 1.0).unwrap();
    for i in 0..samples {
        if i % 1000 == 0 {
            let levels = if rng.random_bool(0.2) {
                rng.random_range(1..=8u64)
            } else {
                2f64.powf(rng.random_range(0.0..52.0)).floor().clamp(1.0, MAX_LEVELS as f64) as u64
            };
            let sigma = 10f64.powf(rng.random_range(-3.0..3.0));
            quantizer = FollowerQuantizer::new(levels, sigma).unwrap();
        }
        let range = quantizer.range();
        let x = match rng.random_range(0..4) {
            0 => rng.random_range(-1.2..1.2) * range,
            1 => rng.random_range(-5.0..5.0) * quantizer.sigma(),
            // cell boundaries (2ψ ± 1)σ
            2 => {
                let psi = rng.random_range(0..=quantizer.levels().min(1 << 40)) as f64;
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                sign * (2.0 * psi + if rng.random_bool(0.5) { 1.0 } else { -1.0 }) * quantizer.sigma()
            }
            _ => rng.random_range(-1.0..1.0) * range * 1e-6,
        };
        let s = quantizer.quantize(x);
        let unsaturated = x.abs() <= range;
        let on_alphabet = s.codeword.unsigned_abs() <= quantizer.levels()
            && s.value == 2.0 * s.codeword as f64 * quantizer.sigma();
        // boundary samples are exact only up to the rounding of |x|
        let roundoff = 4.0 * f64::EPSILON * x.abs();
        let bound_ok = !unsaturated || (x - s.value).abs() <= quantizer.sigma() * (1.0 + 1e-12) + roundoff;
        let flag_ok = s.saturated == (x.abs() >= range);
        if !(on_alphabet && bound_ok && flag_ok) {
            bad += 1;
        }

        let rate = if rng.random_bool(0.5) {
            rng.random_range(0..=6) as f64
        } else {
            rng.random_range(0.0..6.0)
        };
        let pi = match rng.random_range(0..8) {
            0 => 1.0,
            1 => -1.0,
            _ => rng.random_range(-1.0..=1.0),
        };
        match leader_quantize(pi, rate) {
            Ok((q, _)) if (pi - q).abs() <= (-rate).exp2() * (1.0 + 1e-12) => {}
            _ => bad += 1,
        }
    }
    bad
}

/// Random `S = M J M⁻¹` with up to four states built from real, defective
/// real and rotation blocks with well separated moduli. Returns `S` and the
/// block moduli it was built from.
pub fn random_leader_matrix(rng: &mut ChaCha8Rng) -> (Mat, Vec<f64>) {
    let n_blocks = rng.random_range(1..=3);
    let mut blocks: Vec<Mat> = Vec::new();
    let mut moduli: Vec<f64> = Vec::new();
    let mut dim = 0;
    while blocks.len() < n_blocks {
        let kind = rng.random_range(0..3);
        let size = if kind == 0 { 1 } else { 2 };
        if dim + size > 4 {
            break;
        }
        let modulus: f64 = rng.random_range(0.4..1.15);
        if moduli.iter().any(|m| (m - modulus).abs() < 0.05) {
            continue;
        }
        let sign = if rng.random_bool(0.3) { -1.0 } else { 1.0 };
        let block = match kind {
            0 => DMatrix::from_element(1, 1, sign * modulus),
            1 => DMatrix::from_row_slice(2, 2, &[sign * modulus, 1.0, 0.0, sign * modulus]),
            _ => {
                let phi: f64 = rng.random_range(0.2..2.9);
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[modulus * phi.cos(), -modulus * phi.sin(), modulus * phi.sin(), modulus * phi.cos()],
                )
            }
        };
        moduli.push(modulus);
        dim += size;
        blocks.push(block);
    }
    let mut j = DMatrix::zeros(dim, dim);
    let mut o = 0;
    for b in &blocks {
        let k = b.nrows();
        j.view_mut((o, o), (k, k)).copy_from(b);
        o += k;
    }
    loop {
        let m = DMatrix::from_fn(dim, dim, |r, c| {
            (if r == c { 1.0 } else { 0.0 }) + rng.random_range(-0.4..0.4)
        });
        let sv = m.clone().svd(false, false).singular_values;
        if sv.min() > 0.2 {
            let m_inv = m.clone().try_inverse().unwrap();
            return (&m * j * m_inv, moduli);
        }
    }
}

pub struct LeaderSweep {
    pub checked: usize,
    pub skipped: usize,
    pub violations: usize,
}

/// Random leader codec runs checking `|v̂(k) - v̄(k)| <= ω(k)` elementwise
/// after every step, with a roundoff allowance scaled to the magnitudes.
pub fn leader_overflow_sweep(cases: usize, steps: usize, seed: u64) -> LeaderSweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = LeaderSweep {
        checked: 0,
        skipped: 0,
        violations: 0,
    };
    const RATES: [f64; 6] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0];
    for _ in 0..cases {
        let (s, _) = random_leader_matrix(&mut rng);
        let Ok(dec) = real_jordan_form(&s, &JordanOptions::default()) else {
            out.skipped += 1;
            continue;
        };
        out.checked += 1;
        let n = dec.dim();
        let block_rates: Vec<f64> = dec.blocks.iter().map(|_| RATES[rng.random_range(0..RATES.len())]).collect();
        let rates = coordinate_rates(&dec, &block_rates).unwrap();
        let omega0 = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
        let mut v_bar = DVector::from_fn(n, |i, _| omega0[i] * rng.random_range(-0.99..0.99));
        let mut codec = LeaderCodec::new(dec.s_bar.clone(), dec.s_tilde.clone(), rates, omega0).unwrap();
        let jam_p = rng.random_range(0.0..0.7);
        let row_sum = dec.s_bar.abs().row_sum().amax();
        for k in 1..=steps {
            v_bar = &dec.s_bar * &v_bar;
            let jammed = rng.random_bool(jam_p);
            if codec.step(k, &v_bar, jammed).is_err() {
                out.violations += 1;
                break;
            }
            if !within_bound(codec.estimate(), &v_bar, codec.omega(), row_sum) {
                out.violations += 1;
                break;
            }
        }
    }
    out
}

fn within_bound(v_hat: &Vector, v_bar: &Vector, omega: &Vector, row_sum: f64) -> bool {
    let scale = row_sum * v_hat.amax();
    v_hat.iter().zip(v_bar.iter()).zip(omega.iter()).all(|((h, b), w)| {
        let roundoff = 64.0 * f64::EPSILON * (scale + b.abs());
        (h - b).abs() <= w * (1.0 + 1e-9) + roundoff
    })
}

/// Runs the ideal `ω̄ = ω/θ` recursion (`S̃H/γ1` on delivery, `S̃/γ2` on a jam)
/// under random attack patterns and counts runs where `‖ω̄‖∞` exceeds `e_v`.
#[allow(clippy::too_many_arguments)]
pub fn e_v_violations(
    s_tilde: &Mat,
    rates: &[f64],
    gamma1: f64,
    gamma2: f64,
    omega_bar0: &Vector,
    e_v: f64,
    runs: usize,
    steps: usize,
    seed: u64,
) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = DMatrix::from_diagonal(&DVector::from_iterator(rates.len(), rates.iter().map(|r| (-r).exp2())));
    let deliver = s_tilde * h / gamma1;
    let jam = s_tilde / gamma2;
    let mut bad = 0;
    for _ in 0..runs {
        // bursty attacks: alternate jammed and clear stretches of random length
        let burst_p = rng.random_range(0.0..1.0);
        let mut w = omega_bar0.clone();
        let mut jammed = false;
        let mut left = 0usize;
        let mut worst: f64 = w.amax();
        for _ in 0..steps {
            if left == 0 {
                jammed = rng.random_bool(burst_p);
                left = rng.random_range(1..40);
            }
            left -= 1;
            w = if jammed { &jam * &w } else { &deliver * &w };
            worst = worst.max(w.amax());
        }
        if worst > e_v * (1.0 + 1e-12) {
            bad += 1;
        }
    }
    bad
}

/// Random leader systems and attack patterns driven through an encoder and
/// a separate decoder; counts runs where their states ever differ bitwise.
pub fn codec_sync_mismatches(cases: usize, steps: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let (s, _) = random_leader_matrix(&mut rng);
        let Ok(dec) = real_jordan_form(&s, &JordanOptions::default()) else {
            continue;
        };
        let n = dec.dim();
        let block_rates: Vec<f64> = dec.blocks.iter().map(|_| rng.random_range(0.0..3.0)).collect();
        let rates = coordinate_rates(&dec, &block_rates).unwrap();
        let omega0 = DVector::from_element(n, 1.0);
        let mut v_bar = DVector::from_fn(n, |_, _| rng.random_range(-0.9..0.9));
        let mut enc = LeaderCodec::new(dec.s_bar.clone(), dec.s_tilde.clone(), rates.clone(), omega0.clone()).unwrap();
        let mut rx = LeaderCodec::new(dec.s_bar.clone(), dec.s_tilde.clone(), rates, omega0).unwrap();
        let jam_p = rng.random_range(0.0..0.8);
        for k in 1..=steps {
            v_bar = &dec.s_bar * &v_bar;
            let Ok(msg) = enc.step(k, &v_bar, rng.random_bool(jam_p)) else {
                bad += 1;
                break;
            };
            rx.decode(msg.as_ref().map(|m| (m.codewords.as_slice(), m.rescale)));
            if enc.estimate().as_slice() != rx.estimate().as_slice() || enc.omega().as_slice() != rx.omega().as_slice() {
                bad += 1;
                break;
            }
        }
    }
    bad
}
