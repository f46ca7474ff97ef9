//! Certification layer: zoom-factor and data-rate conditions, the constants
//! `C1`, `C2`, `E_v` behind the follower quantizer range, and the DoS
//! resilience bound with its rate-imposed ceiling.

use crate::error::{Error, Result};
use crate::linalg::{norm2, JordanDecomposition, Mat, Vector};
use crate::topology::StackedGains;

/// `1 - log2 γ2 / (log2 γ2 - log2 x)`, the largest tolerable averaged
/// `1/T + Δ/τ_D` for a success-step contraction rate `x < 1`.
fn tolerable_share(gamma2: f64, x: f64) -> f64 {
    let l2 = gamma2.log2();
    1.0 - l2 / (l2 - x.log2())
}

/// Resilience bound for zoom factors `(γ1, γ2)` and its ceiling imposed by
/// the leader rate through `ζ/2^R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResilienceBound {
    pub bound: f64,
    pub ceiling: f64,
}

/// `rate_ratio` is `max_r ζ_r / 2^(R_r)`.
pub fn resilience_bound(gamma1: f64, gamma2: f64, rate_ratio: f64) -> Result<ResilienceBound> {
    if !(gamma1 > 0.0 && gamma1 < 1.0 && gamma2 > 1.0 && gamma2.is_finite()) {
        return Err(Error::Analysis(format!(
            "resilience bound needs 0 < γ1 < 1 < γ2, got γ1 = {gamma1}, γ2 = {gamma2}"
        )));
    }
    if !(rate_ratio > 0.0 && rate_ratio < 1.0) {
        return Err(Error::Analysis(format!(
            "ceiling needs 0 < ζ/2^R < 1, got {rate_ratio}"
        )));
    }
    Ok(ResilienceBound {
        bound: tolerable_share(gamma2, gamma1),
        ceiling: tolerable_share(gamma2, rate_ratio),
    })
}

/// `max_r ζ_r / 2^(R_r)` over the Jordan blocks.
pub fn rate_ratio(dec: &JordanDecomposition, block_rates: &[f64]) -> f64 {
    dec.blocks
        .iter()
        .zip(block_rates)
        .map(|(b, r)| b.modulus / r.exp2())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoomCheck {
    pub rho_g: f64,
    pub rho_s: f64,
    pub gamma1_ok: bool,
    pub gamma2_ok: bool,
    /// `γ2 = ρ(S)` accepted because every spectral-radius block has size 1.
    pub gamma2_relaxed: bool,
}

impl ZoomCheck {
    pub fn passed(&self) -> bool {
        self.gamma1_ok && self.gamma2_ok
    }
}

fn dominant_blocks_scalar(dec: &JordanDecomposition) -> bool {
    let rho = dec.spectral_radius();
    dec.blocks
        .iter()
        .filter(|b| b.modulus == rho)
        .all(|b| b.size == 1)
}

/// `ρ(G) < γ1 < 1` and `γ2 > ρ(S)`, the latter relaxed to equality when the
/// spectral-radius blocks are scalar.
pub fn check_zoom_factors(
    gamma1: f64,
    gamma2: f64,
    gains: &StackedGains,
    dec: &JordanDecomposition,
) -> Result<ZoomCheck> {
    let rho_g = gains.spectral_radius()?;
    let rho_s = dec.spectral_radius();
    let gamma1_ok = rho_g < gamma1 && gamma1 < 1.0;
    let strict = gamma2 > rho_s;
    let gamma2_relaxed = !strict && gamma2 == rho_s && dominant_blocks_scalar(dec);
    Ok(ZoomCheck {
        rho_g,
        rho_s,
        gamma1_ok,
        gamma2_ok: strict || gamma2_relaxed,
        gamma2_relaxed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCheck {
    pub block: usize,
    pub zeta: f64,
    pub rate: f64,
    /// `2^R > ζ/γ1` (or `>=` for a scalar spectral-radius block).
    pub rate_ok: bool,
    /// `R > log2 ζ` and `max(ρ(Ḡ), ζ/2^R) < γ1 < 1`.
    pub gamma1_ok: bool,
}

pub fn check_rate(
    gamma1: f64,
    block_rates: &[f64],
    dec: &JordanDecomposition,
    rho_g: f64,
) -> Result<Vec<RateCheck>> {
    if block_rates.len() != dec.blocks.len() {
        return Err(Error::Dimension(format!(
            "{} block rates given for {} Jordan blocks",
            block_rates.len(),
            dec.blocks.len()
        )));
    }
    let rho = dec.spectral_radius();
    Ok(dec
        .blocks
        .iter()
        .zip(block_rates)
        .enumerate()
        .map(|(i, (b, &r))| {
            let lhs = r.exp2();
            let rhs = b.modulus / gamma1;
            let relaxed = b.size == 1 && b.modulus == rho;
            let rate_ok = if relaxed { lhs >= rhs } else { lhs > rhs };
            let gamma1_ok = (b.modulus == 0.0 || r > b.modulus.log2())
                && rho_g.max(b.modulus / lhs) < gamma1
                && gamma1 < 1.0;
            RateCheck {
                block: i,
                zeta: b.modulus,
                rate: r,
                rate_ok,
                gamma1_ok,
            }
        })
        .collect())
}

/// `max_m ‖A^m‖₂`, iterating until `‖A^m‖_F < 1`. Returns the bound and
/// the cutoff `M`.
pub fn power_norm_bound(a: &Mat, max_iter: usize) -> Result<(f64, usize)> {
    let n = a.nrows();
    let mut p = Mat::identity(n, n);
    let mut best: f64 = 1.0;
    for m in 1..=max_iter {
        p = &p * a;
        if !p.iter().all(|x| x.is_finite()) {
            break;
        }
        best = best.max(norm2(&p));
        if p.norm() < 1.0 {
            return Ok((best, m));
        }
    }
    Err(Error::Analysis(format!(
        "powers of the zoom-out matrix do not contract within {max_iter} steps"
    )))
}

/// Smallest `p >= w0` with `A p <= p` elementwise for every nonnegative
/// upper-triangular `A` in `mats`, by back-substitution.
pub fn common_invariant_box(mats: &[Mat], w0: &Vector) -> Result<Vector> {
    let n = w0.len();
    let mut p = w0.map(f64::abs);
    for i in (0..n).rev() {
        for a in mats {
            let tail: f64 = ((i + 1)..n).map(|j| a[(i, j)] * p[j]).sum();
            let diag = a[(i, i)];
            if diag >= 1.0 {
                if tail > 0.0 || diag > 1.0 {
                    return Err(Error::Analysis(format!(
                        "no bounded invariant box: diagonal entry {diag:.6} at {i}"
                    )));
                }
                continue;
            }
            p[i] = p[i].max(tail / (1.0 - diag));
        }
    }
    Ok(p)
}

fn scaled(a: &Mat, eps: f64) -> Mat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * eps.powi(j as i32 - i as i32))
}

/// Quantities entering the follower range requirement.
#[derive(Debug, Clone, PartialEq)]
pub struct Constants {
    pub c1: f64,
    pub c2: f64,
    pub e_v: f64,
    /// Power cutoff `M` of the `C2` iteration.
    pub c2_cutoff: usize,
    /// Diagonal scaling `diag(ε^l)` used for the common contraction norm.
    pub epsilon: f64,
    /// Contraction factor of `Ḡ/γ1` in that norm.
    pub contraction: f64,
}

pub struct ConstantInputs<'a> {
    pub gains: &'a StackedGains,
    pub dec: &'a JordanDecomposition,
    pub kbar: &'a Mat,
    pub gamma1: f64,
    pub gamma2: f64,
    pub sigma: f64,
    pub theta0: f64,
    /// Bound on `‖x_i(0)‖∞` and `‖z̄(0) - 1⊗v̄(0)‖∞` contributions.
    pub c_x0: f64,
    pub rates: &'a [f64],
    pub omega0: &'a Vector,
}

/// Iteration cap for the `C2` power sequence.
const C2_MAX_ITER: usize = 50_000_000;

pub fn compute_constants(inp: &ConstantInputs) -> Result<Constants> {
    let s_bar = &inp.dec.s_bar;
    let nv = s_bar.nrows();
    let n = inp.gains.lambdas.len();
    let (g1, g2) = (inp.gamma1, inp.gamma2);
    let sqrt_nv = ((n * nv) as f64).sqrt();

    let (c2, c2_cutoff) = power_norm_bound(&(s_bar / g2), C2_MAX_ITER)?;

    // ω̄ = ω/θ evolves by S̃H/γ1 on delivery and S̃/γ2 on a jam.
    let h = Mat::from_diagonal(&Vector::from_iterator(nv, inp.rates.iter().map(|r| (-r).exp2())));
    let s_tilde = &inp.dec.s_tilde;
    let omega_bar0 = inp.omega0 / inp.theta0;
    let e_v = common_invariant_box(&[s_tilde * &h / g1, s_tilde / g2], &omega_bar0)?.amax();

    // Common norm ‖x‖★ = ‖diag(ε^-l) x‖₂ per follower block: S̄/γ2 must be
    // non-expansive and every S̄ - λ̃_i K̄ contract after division by γ1.
    let zoom_out = s_bar / g2;
    let blocks: Vec<Mat> = inp.gains.lambdas.iter().map(|&l| (s_bar - inp.kbar * l) / g1).collect();
    let p_norm = norm2(&inp.gains.p);
    let w_norm = norm2(&inp.gains.w);
    let u_bar = p_norm * sqrt_nv * inp.sigma / (g1 * g1) + w_norm * sqrt_nv * e_v / g1;
    let alpha0 = 2.0 * sqrt_nv * inp.c_x0 / inp.theta0;

    let mut best: Option<(f64, f64, f64)> = None;
    for step in 0..=400 {
        let eps = 10f64.powf(-(step as f64) / 20.0);
        if norm2(&scaled(&zoom_out, eps)) > 1.0 {
            continue;
        }
        let c = blocks.iter().map(|b| norm2(&scaled(b, eps))).fold(0.0, f64::max);
        if c >= 1.0 {
            continue;
        }
        let inflate = eps.powi(-(nv as i32 - 1));
        let c1 = inflate * alpha0.max(u_bar / (1.0 - c));
        if best.is_none_or(|(b, _, _)| c1 < b) {
            best = Some((c1, eps, c));
        }
    }
    let (c1, epsilon, contraction) = best.ok_or_else(|| {
        Error::Analysis("no diagonal scaling makes S̄/γ2 non-expansive and Ḡ/γ1 contractive".into())
    })?;
    Ok(Constants {
        c1,
        c2,
        e_v,
        c2_cutoff,
        epsilon,
        contraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeRequirement {
    /// Lower bound on `(2R_f+1)σ`.
    pub range: f64,
    /// Smallest admissible `R_f`.
    pub levels: u64,
    /// Bits per coordinate for `2R_f+1` symbols, counted as
    /// `⌈log2((range/σ - 1)/2 + 1)⌉ + 1`.
    pub bits: u32,
}

/// `(2R_f+1)σ >= C2‖S̄_N‖(‖Z‖√(N n_v) σ/γ1 + ‖P‖C1 + ‖W‖√(N n_v) E_v)`.
pub fn required_range(consts: &Constants, gains: &StackedGains, sigma: f64, gamma1: f64) -> RangeRequirement {
    let n = gains.lambdas.len();
    let nv = gains.g.nrows() / n;
    let sqrt_nv = ((n * nv) as f64).sqrt();
    let range = consts.c2
        * norm2(&gains.s_bar_n)
        * (norm2(&gains.z) * sqrt_nv * sigma / gamma1
            + norm2(&gains.p) * consts.c1
            + norm2(&gains.w) * sqrt_nv * consts.e_v);
    range_requirement(range, sigma)
}

pub fn range_requirement(range: f64, sigma: f64) -> RangeRequirement {
    let ratio = range / sigma;
    let levels = ((ratio - 1.0) / 2.0).ceil().max(1.0);
    let bits = (((ratio - 1.0) / 2.0).max(0.0) + 1.0).log2().ceil() as u32 + 1;
    RangeRequirement {
        range,
        levels: levels as u64,
        bits,
    }
}

/// Full certification summary.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignReport {
    pub zoom: ZoomCheck,
    pub rates: Vec<RateCheck>,
    pub theta0_ok: bool,
    pub constants: Option<Constants>,
    pub requirement: Option<RangeRequirement>,
    pub resilience: Option<ResilienceBound>,
    pub notes: Vec<String>,
}

impl DesignReport {
    /// Zoom factors, rates and `θ_0` all satisfy their conditions.
    pub fn certified(&self) -> bool {
        self.zoom.passed()
            && self.rates.iter().all(|r| r.rate_ok)
            && self.theta0_ok
            && self.constants.is_some()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let yes = |b: bool| if b { "pass" } else { "FAIL" };
        out.push_str(&format!("rho(G)                : {:.6}\n", self.zoom.rho_g));
        out.push_str(&format!("rho(S)                : {:.6}\n", self.zoom.rho_s));
        out.push_str(&format!("gamma1 in (rho(G), 1) : {}\n", yes(self.zoom.gamma1_ok)));
        out.push_str(&format!(
            "gamma2 > rho(S)       : {}{}\n",
            yes(self.zoom.gamma2_ok),
            if self.zoom.gamma2_relaxed { " (equality, scalar dominant block)" } else { "" }
        ));
        for r in &self.rates {
            out.push_str(&format!(
                "block {} (zeta {:.6}, R {}): 2^R > zeta/gamma1 {}, gamma1 > max(rho(G), zeta/2^R) {}\n",
                r.block + 1,
                r.zeta,
                r.rate,
                yes(r.rate_ok),
                yes(r.gamma1_ok)
            ));
        }
        out.push_str(&format!("theta0 >= C_x0 gamma1 / sigma : {}\n", yes(self.theta0_ok)));
        if let Some(c) = &self.constants {
            out.push_str(&format!("C1                    : {:.6e}\n", c.c1));
            out.push_str(&format!("C2                    : {:.6e} (cutoff {})\n", c.c2, c.c2_cutoff));
            out.push_str(&format!("E_v                   : {:.6e}\n", c.e_v));
            out.push_str(&format!(
                "scaling epsilon       : {:.3e} (contraction {:.6})\n",
                c.epsilon, c.contraction
            ));
        }
        if let Some(r) = &self.requirement {
            out.push_str(&format!("required (2R_f+1)sigma: {:.6e}\n", r.range));
            out.push_str(&format!("required R_f          : {}\n", r.levels));
            out.push_str(&format!("bits per coordinate   : {}\n", r.bits));
        }
        if let Some(b) = &self.resilience {
            out.push_str(&format!("resilience bound      : {:.6}\n", b.bound));
            out.push_str(&format!("rate ceiling          : {:.6}\n", b.ceiling));
        }
        out.push_str(&format!("certified             : {}\n", self.certified()));
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}

pub struct DesignInputs<'a> {
    pub gains: &'a StackedGains,
    pub dec: &'a JordanDecomposition,
    pub kbar: &'a Mat,
    pub gamma1: f64,
    pub gamma2: f64,
    pub sigma: f64,
    pub theta0: f64,
    pub c_x0: f64,
    pub block_rates: &'a [f64],
    pub rates: &'a [f64],
    pub omega0: &'a Vector,
}

/// Runs every check and, when they pass, computes the constants and the
/// required follower range.
pub fn design_report(inp: &DesignInputs) -> Result<DesignReport> {
    let zoom = check_zoom_factors(inp.gamma1, inp.gamma2, inp.gains, inp.dec)?;
    let rates = check_rate(inp.gamma1, inp.block_rates, inp.dec, zoom.rho_g)?;
    let theta0_ok = inp.theta0 >= inp.c_x0 * inp.gamma1 / inp.sigma;
    let mut notes = vec!["sqrt(N v) is read as sqrt(N n_v), n_v the leader dimension".to_string()];
    let ratio = rate_ratio(inp.dec, inp.block_rates);
    let resilience = if inp.gamma1 > 0.0 && inp.gamma1 < 1.0 && inp.gamma2 > 1.0 && ratio > 0.0 && ratio < 1.0 {
        Some(resilience_bound(inp.gamma1, inp.gamma2, ratio)?)
    } else {
        notes.push(format!("resilience bound undefined (zeta/2^R = {ratio:.6})"));
        None
    };
    let (constants, requirement) = if zoom.passed() && rates.iter().all(|r| r.rate_ok) {
        match compute_constants(&ConstantInputs {
            gains: inp.gains,
            dec: inp.dec,
            kbar: inp.kbar,
            gamma1: inp.gamma1,
            gamma2: inp.gamma2,
            sigma: inp.sigma,
            theta0: inp.theta0,
            c_x0: inp.c_x0,
            rates: inp.rates,
            omega0: inp.omega0,
        }) {
            Ok(c) => {
                let req = required_range(&c, inp.gains, inp.sigma, inp.gamma1);
                (Some(c), Some(req))
            }
            Err(e) => {
                notes.push(format!("constants unavailable: {e}"));
                (None, None)
            }
        }
    } else {
        notes.push("constants skipped: zoom-factor or rate conditions fail".into());
        (None, None)
    };
    Ok(DesignReport {
        zoom,
        rates,
        theta0_ok,
        constants,
        requirement,
        resilience,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{real_jordan_form, JordanOptions};
    use crate::topology::{build_gain_matrices, FollowerGraph};

    fn log_bound(g1: f64, g2: f64) -> f64 {
        // same expression through natural logarithms
        1.0 - g2.ln() / (g2.ln() - g1.ln())
    }

    #[test]
    fn resilience_examples() {
        let b = resilience_bound(0.92, 1.10521, 1.1052 / 2.0).unwrap();
        assert!((b.bound - 0.4546).abs() < 5e-4, "{}", b.bound);
        assert!((b.bound - log_bound(0.92, 1.10521)).abs() < 1e-12);
        let b = resilience_bound(0.95, 1.01, 0.5).unwrap();
        assert!((b.bound - 0.8375).abs() < 5e-4, "{}", b.bound);
        assert!(resilience_bound(1.0, 1.1, 0.5).is_err());
        assert!(resilience_bound(0.9, 1.1, 1.2).is_err());
    }

    #[test]
    fn bound_approaches_ceiling() {
        let x = 1.1052 / 0.2f64.exp2();
        let ceiling = resilience_bound(0.99, 1.10521, x).unwrap().ceiling;
        let near = resilience_bound(x + 1e-9, 1.10521, x).unwrap();
        assert!((near.bound - ceiling).abs() < 1e-6);
        assert!(near.bound < near.ceiling + 1e-12);
    }

    fn scalar_dec(z: f64) -> JordanDecomposition {
        real_jordan_form(&Mat::from_element(1, 1, z), &JordanOptions::default()).unwrap()
    }

    #[test]
    fn rate_checks() {
        let s = Mat::from_row_slice(2, 2, &[1.1052, 0.1105, 0.0, 1.1052]);
        let dec = real_jordan_form(&s, &JordanOptions::default()).unwrap();
        let r = check_rate(0.92, &[1.0], &dec, 0.9161).unwrap();
        assert!(r[0].rate_ok && r[0].gamma1_ok);
        let r = check_rate(0.97, &[0.2], &dec, 0.9161).unwrap();
        assert!(r[0].rate_ok && r[0].gamma1_ok);
        let r = check_rate(0.93, &[0.2], &dec, 0.9161).unwrap();
        assert!(!r[0].rate_ok && !r[0].gamma1_ok);
        // scalar dominant block: equality accepted
        let r = check_rate(0.5, &[1.0], &scalar_dec(1.0), 0.1).unwrap();
        assert!(r[0].rate_ok);
    }

    #[test]
    fn zoom_checks() {
        let s = Mat::from_row_slice(2, 2, &[1.1052, 0.1105, 0.0, 1.1052]);
        let dec = real_jordan_form(&s, &JordanOptions::default()).unwrap();
        let g = FollowerGraph::from_edges(4, &[(0, 1), (1, 2), (1, 3), (2, 3)], Vector::from_row_slice(&[1.0, 0.0, 1.0, 0.0]))
            .unwrap();
        let gains = build_gain_matrices(&g, &dec.s_bar, &(Mat::identity(2, 2) * 0.4683)).unwrap();
        assert!(check_zoom_factors(0.92, 1.10521, &gains, &dec).unwrap().passed());
        let rho_g = gains.spectral_radius().unwrap();
        assert!(!check_zoom_factors(rho_g, 1.10521, &gains, &dec).unwrap().gamma1_ok);
        assert!(!check_zoom_factors(0.92, dec.spectral_radius(), &gains, &dec).unwrap().gamma2_ok);

        let dec1 = scalar_dec(1.2);
        let g1 = FollowerGraph::new(Mat::zeros(1, 1), Vector::from_element(1, 1.0)).unwrap();
        let gains1 = build_gain_matrices(&g1, &dec1.s_bar, &Mat::from_element(1, 1, 0.8)).unwrap();
        let z = check_zoom_factors(0.5, 1.2, &gains1, &dec1).unwrap();
        assert!(z.gamma2_ok && z.gamma2_relaxed);
    }

    #[test]
    fn scalar_power_bound_is_one() {
        let (c2, m) = power_norm_bound(&Mat::from_element(1, 1, 0.9), 100).unwrap();
        assert_eq!(c2, 1.0);
        assert_eq!(m, 1);
        assert!(power_norm_bound(&Mat::from_element(1, 1, 1.0), 100).is_err());
    }

    #[test]
    fn invariant_box_scalar_without_dos() {
        let a = Mat::from_element(1, 1, 0.6);
        let p = common_invariant_box(&[a], &Vector::from_element(1, 0.3)).unwrap();
        assert_eq!(p[0], 0.3);
    }

    #[test]
    fn invariant_box_is_invariant() {
        let a1 = Mat::from_row_slice(2, 2, &[0.6, 0.54, 0.0, 0.6]);
        let a2 = Mat::from_row_slice(2, 2, &[0.99, 0.9, 0.0, 0.99]);
        let w0 = Vector::from_row_slice(&[0.2, 0.1]);
        let p = common_invariant_box(&[a1.clone(), a2.clone()], &w0).unwrap();
        for a in [&a1, &a2] {
            let ap = a * &p;
            assert!(ap.iter().zip(p.iter()).all(|(x, y)| *x <= y * (1.0 + 1e-12)));
        }
        assert!(p[0] >= 0.2 && p[1] >= 0.1);
    }

    #[test]
    fn decoupled_range_formula() {
        // K̄ = 0: P = W = 0 and Z = S̄_N.
        let dec = scalar_dec(1.05);
        let g = FollowerGraph::new(Mat::zeros(1, 1), Vector::from_element(1, 1.0)).unwrap();
        let kbar = Mat::zeros(1, 1);
        let gains = build_gain_matrices(&g, &dec.s_bar, &kbar).unwrap();
        let consts = Constants {
            c1: 3.0,
            c2: 1.0,
            e_v: 5.0,
            c2_cutoff: 1,
            epsilon: 1.0,
            contraction: 0.5,
        };
        let r = required_range(&consts, &gains, 2.0, 0.9);
        assert!((r.range - 1.05 * 1.05 * 2.0 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn bits_count() {
        let r = range_requirement(7.3638e14, 1.0);
        assert_eq!(r.bits, 50);
        assert_eq!(range_requirement(31.0, 1.0).levels, 15);
    }
}
