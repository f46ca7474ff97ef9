//! Follower mid-tread saturating quantizer and leader uniform quantizer, with
//! integer codewords that decode bit-exactly to the quantized values.

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Largest `R_f` whose codewords decode exactly in `f64`.
pub const MAX_LEVELS: u64 = 1 << 52;

/// Saturating mid-tread quantizer with output alphabet
/// `{0, ±2σ, …, ±2·R_f·σ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerQuantizer {
    levels: u64,
    sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerSample {
    pub value: f64,
    pub saturated: bool,
    pub codeword: i64,
}

impl FollowerQuantizer {
    pub fn new(levels: u64, sigma: f64) -> Result<Self> {
        if levels == 0 || levels > MAX_LEVELS {
            return Err(Error::Parameter(format!(
                "follower quantizer needs 1 <= R_f <= 2^52, got {levels}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!("follower quantizer sigma must be > 0, got {sigma}")));
        }
        Ok(Self { levels, sigma })
    }

    pub fn levels(&self) -> u64 {
        self.levels
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `(2R_f+1)σ`: inputs at or beyond this magnitude saturate.
    pub fn range(&self) -> f64 {
        (2.0 * self.levels as f64 + 1.0) * self.sigma
    }

    pub fn quantize(&self, x: f64) -> FollowerSample {
        let a = x.abs();
        let sigma = self.sigma;
        let saturated = a >= self.range();
        let psi = if a < sigma {
            0
        } else if saturated {
            self.levels as i64
        } else {
            // Cells are [(2ψ-1)σ, (2ψ+1)σ); the floor estimate is corrected
            // against the exact boundaries.
            let mut psi = ((a / sigma + 1.0) / 2.0).floor() as i64;
            while ((2 * psi + 1) as f64) * sigma <= a {
                psi += 1;
            }
            while psi > 1 && ((2 * psi - 1) as f64) * sigma > a {
                psi -= 1;
            }
            psi.clamp(1, self.levels as i64)
        };
        let codeword = if x < 0.0 { -psi } else { psi };
        FollowerSample {
            value: self.decode(codeword),
            saturated,
            codeword,
        }
    }

    pub fn decode(&self, codeword: i64) -> f64 {
        2.0 * codeword as f64 * self.sigma
    }

    /// Elementwise quantization; the flag is the OR of the component flags.
    pub fn quantize_vec(&self, x: &Vector) -> (Vector, bool, Vec<i64>) {
        let samples: Vec<FollowerSample> = x.iter().map(|&c| self.quantize(c)).collect();
        let values = Vector::from_iterator(x.len(), samples.iter().map(|s| s.value));
        let saturated = samples.iter().any(|s| s.saturated);
        (values, saturated, samples.iter().map(|s| s.codeword).collect())
    }
}

fn leader_cells(rate: f64) -> f64 {
    (rate - 1.0).exp2()
}

fn is_fractional(c: f64) -> bool {
    c.fract() != 0.0
}

/// Uniform quantizer on `[-1, 1]` with `rate` bits (fractional rates allowed).
/// Returns the quantized value and its codeword `⌊2^(rate-1)π⌋`.
pub fn leader_quantize(pi: f64, rate: f64) -> Result<(f64, i64)> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::Parameter(format!("leader rate must be >= 0, got {rate}")));
    }
    if !pi.is_finite() || pi.abs() > 1.0 {
        return Err(Error::QuantizerRange { value: pi });
    }
    if rate == 0.0 {
        return Ok((0.0, 0));
    }
    let c = leader_cells(rate);
    let codeword = if pi == 1.0 {
        // top cell closes on the right; fractional grids use an otherwise
        // unused index so the decoder can recover 1 - 0.5/c
        if is_fractional(c) {
            c.floor() as i64 + 1
        } else {
            c as i64 - 1
        }
    } else {
        (c * pi).floor() as i64
    };
    Ok((leader_decode(codeword, rate), codeword))
}

pub fn leader_decode(codeword: i64, rate: f64) -> f64 {
    if rate == 0.0 {
        return 0.0;
    }
    let c = leader_cells(rate);
    if is_fractional(c) && codeword == c.floor() as i64 + 1 {
        1.0 - 0.5 / c
    } else {
        (codeword as f64 + 0.5) / c
    }
}

/// Vector leader quantizer with per-coordinate rates.
pub fn leader_quantize_vec(pi: &Vector, rates: &[f64]) -> Result<(Vector, Vec<i64>)> {
    if pi.len() != rates.len() {
        return Err(Error::Dimension(format!(
            "leader quantizer input has {} entries but {} rates",
            pi.len(),
            rates.len()
        )));
    }
    let mut values = Vector::zeros(pi.len());
    let mut codes = Vec::with_capacity(pi.len());
    for (l, (&p, &r)) in pi.iter().zip(rates).enumerate() {
        let (v, c) = leader_quantize(p, r)?;
        values[l] = v;
        codes.push(c);
    }
    Ok((values, codes))
}

pub fn leader_decode_vec(codes: &[i64], rates: &[f64]) -> Vector {
    Vector::from_iterator(codes.len(), codes.iter().zip(rates).map(|(&c, &r)| leader_decode(c, r)))
}

/// Elementwise division `a ⊘ b`.
pub fn elementwise_div(a: &Vector, b: &Vector) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("⊘ operands have lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.component_div(b))
}

/// Elementwise product `a ∘ b`.
pub fn elementwise_mul(a: &Vector, b: &Vector) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("∘ operands have lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.component_mul(b))
}
