//! Synchronized encoder/decoder state machines.
//!
//! Every transmitter and all of its receivers hold identical codec state.
//! A step either delivers a codeword vector or fails for all links at once,
//! so the decoder update depends only on `Option<&[i64]>` and each side can
//! replay it independently.

use crate::error::{Error, Result};
use crate::linalg::{JordanDecomposition, Mat, Vector};
use crate::quantizer::{leader_decode_vec, leader_quantize_vec, FollowerQuantizer};

/// Multiplicative scaling `θ_k` shared by all follower codecs.
#[derive(Debug, Clone, PartialEq)]
pub struct Zoom {
    theta0: f64,
    gamma1: f64,
    gamma2: f64,
    successes: u32,
    jams: u32,
}

impl Zoom {
    pub fn new(theta0: f64, gamma1: f64, gamma2: f64) -> Result<Self> {
        if !(theta0 > 0.0 && theta0.is_finite()) {
            return Err(Error::Parameter(format!("θ_0 must be > 0, got {theta0}")));
        }
        if !(gamma1 > 0.0 && gamma1 < 1.0) {
            return Err(Error::Parameter(format!("γ1 must lie in (0, 1), got {gamma1}")));
        }
        if !(gamma2 > 1.0 && gamma2.is_finite()) {
            return Err(Error::Parameter(format!("γ2 must be > 1, got {gamma2}")));
        }
        Ok(Self {
            theta0,
            gamma1,
            gamma2,
            successes: 0,
            jams: 0,
        })
    }

    /// `θ_0 γ1^(successes) γ2^(jams)`, evaluated from the counts so the
    /// closed form holds exactly.
    pub fn theta(&self) -> f64 {
        self.theta0 * self.gamma1.powi(self.successes as i32) * self.gamma2.powi(self.jams as i32)
    }

    /// Zoom in after a delivered step, zoom out after a jammed one.
    pub fn step(&mut self, jammed: bool) -> f64 {
        if jammed {
            self.jams += 1;
        } else {
            self.successes += 1;
        }
        self.theta()
    }

    pub fn counts(&self) -> (u32, u32) {
        (self.successes, self.jams)
    }
}

/// Codec state for one follower's transformed reference `z̄_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerCodec {
    estimate: Vector,
}

/// Encoder output for one follower at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerMessage {
    /// `(z̄_j(k) - S̄ ẑ_j(k-1)) / θ_(k-1)`
    pub argument: Vector,
    pub codewords: Vec<i64>,
    pub saturated: bool,
}

impl FollowerCodec {
    pub fn new(dim: usize) -> Self {
        Self {
            estimate: Vector::zeros(dim),
        }
    }

    /// `ẑ_j`, identical at the encoder and every decoder.
    pub fn estimate(&self) -> &Vector {
        &self.estimate
    }

    pub fn encode(
        &self,
        s_bar: &Mat,
        z_bar: &Vector,
        theta: f64,
        quantizer: &FollowerQuantizer,
    ) -> FollowerMessage {
        let argument = (z_bar - s_bar * &self.estimate) / theta;
        let (_, saturated, codewords) = quantizer.quantize_vec(&argument);
        FollowerMessage {
            argument,
            codewords,
            saturated,
        }
    }

    /// `ẑ_j(k) = S̄ ẑ_j(k-1) + θ_(k-1) Q(·)` on delivery, `S̄ ẑ_j(k-1)` when jammed.
    pub fn decode(
        &mut self,
        s_bar: &Mat,
        codewords: Option<&[i64]>,
        theta: f64,
        quantizer: &FollowerQuantizer,
    ) {
        let mut next = s_bar * &self.estimate;
        if let Some(codes) = codewords {
            for (x, &c) in next.iter_mut().zip(codes) {
                *x += theta * quantizer.decode(c);
            }
        }
        self.estimate = next;
    }

    /// Overwrites the estimate; used when quantization is disabled.
    pub fn set_exact(&mut self, value: Vector) {
        self.estimate = value;
    }

    pub fn propagate(&mut self, s_bar: &Mat) {
        self.estimate = s_bar * &self.estimate;
    }
}

/// Leader codec: estimate `v̂` and per-coordinate scaling `ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderCodec {
    s_bar: Mat,
    s_tilde: Mat,
    rates: Vec<f64>,
    /// diagonal of `H`, `2^(-R_l)`
    shrink: Vector,
    estimate: Vector,
    omega: Vector,
    pending_jump: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderMessage {
    /// `(S̄ v̂(k-1) - v̄(k)) ⊘ S̃ ω(k-1)`, after any rescaling.
    pub argument: Vector,
    pub codewords: Vec<i64>,
    /// Factor applied to `ω(k-1)` before encoding, when a leader jump
    /// invalidated the scaling.
    pub rescale: Option<f64>,
}

/// Per-coordinate leader rates from per-block bit allocations.
pub fn coordinate_rates(dec: &JordanDecomposition, block_rates: &[f64]) -> Result<Vec<f64>> {
    if block_rates.len() != dec.blocks.len() {
        return Err(Error::Dimension(format!(
            "{} block rates given for {} Jordan blocks",
            block_rates.len(),
            dec.blocks.len()
        )));
    }
    if let Some(bad) = block_rates.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
        return Err(Error::Parameter(format!("leader rate {bad} must be >= 0")));
    }
    let mut rates = vec![0.0; dec.dim()];
    for (b, &r) in dec.blocks.iter().zip(block_rates) {
        for l in b.range() {
            rates[l] = r;
        }
    }
    Ok(rates)
}

/// Slack on the `|argument| <= 1` precondition: the error bound is attained
/// on cell boundaries, where rounding can overshoot by an ulp or so.
const ARGUMENT_SLACK: f64 = 1e-9;

/// Allowance for cancellation in `S̄v̂ - v̄`, in units of machine epsilon times
/// the magnitudes involved.
const ROUNDOFF_ULPS: f64 = 16.0;

/// `ω` is kept at or above this fraction of `‖v̂‖∞`, below which the
/// prediction error is dominated by rounding.
pub const OMEGA_FLOOR: f64 = 1e-13;

impl LeaderCodec {
    pub fn new(s_bar: Mat, s_tilde: Mat, rates: Vec<f64>, omega0: Vector) -> Result<Self> {
        let n = s_bar.nrows();
        if s_tilde.shape() != (n, n) || rates.len() != n || omega0.len() != n {
            return Err(Error::Dimension("leader codec dimensions disagree".into()));
        }
        if omega0.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Parameter("ω(0) must be elementwise > 0".into()));
        }
        let shrink = Vector::from_iterator(n, rates.iter().map(|r| (-r).exp2()));
        Ok(Self {
            s_bar,
            s_tilde,
            rates,
            shrink,
            estimate: Vector::zeros(n),
            omega: omega0,
            pending_jump: false,
        })
    }

    pub fn estimate(&self) -> &Vector {
        &self.estimate
    }

    pub fn omega(&self) -> &Vector {
        &self.omega
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Marks a discontinuity in the leader trajectory; the next delivery may
    /// rescale `ω` instead of reporting an overflow.
    pub fn mark_jump(&mut self) {
        self.pending_jump = true;
    }

    pub fn encode(&self, step: usize, v_bar: &Vector) -> Result<LeaderMessage> {
        let predicted = &self.s_bar * &self.estimate;
        let mut omega_p = &self.s_tilde * &self.omega;
        let diff = &predicted - v_bar;
        let mut rescale = None;
        let scale = self.s_bar.abs().row_sum().amax() * self.estimate.amax();
        let excess = |d: f64, w: f64, vb: f64| {
            let roundoff = ROUNDOFF_ULPS * f64::EPSILON * (scale + vb.abs());
            (d.abs() - roundoff).max(0.0) / w
        };
        let worst = diff
            .iter()
            .zip(omega_p.iter())
            .zip(v_bar.iter())
            .map(|((d, w), vb)| excess(*d, *w, *vb))
            .fold(0.0, f64::max);
        if worst > 1.0 + ARGUMENT_SLACK {
            if !self.pending_jump {
                let (coord, value) = diff
                    .iter()
                    .zip(omega_p.iter())
                    .zip(v_bar.iter())
                    .map(|((d, w), vb)| excess(*d, *w, *vb))
                    .enumerate()
                    .fold((0, 0.0), |acc, (l, r)| if r > acc.1 { (l, r) } else { acc });
                return Err(Error::LeaderOverflow { step, coord, value });
            }
            let c = 1.01 * worst;
            omega_p *= c;
            rescale = Some(c);
        }
        let argument = diff.component_div(&omega_p).map(|a| a.clamp(-1.0, 1.0));
        let (_, codewords) = leader_quantize_vec(&argument, &self.rates)?;
        Ok(LeaderMessage {
            argument,
            codewords,
            rescale,
        })
    }

    /// Success: `v̂(k) = S̄v̂(k-1) - ω_p ∘ Q_v(·)`, `ω(k) = H ω_p` with
    /// `ω_p = S̃ ω(k-1)`. Jam: `v̂(k) = S̄ v̂(k-1)`, `ω(k) = S̃ ω(k-1)`. Either way
    /// `ω` is then floored at `OMEGA_FLOOR ‖v̂(k)‖∞`.
    pub fn decode(&mut self, message: Option<(&[i64], Option<f64>)>) {
        let predicted = &self.s_bar * &self.estimate;
        match message {
            Some((codes, rescale)) => {
                if let Some(c) = rescale {
                    self.omega *= c;
                    self.pending_jump = false;
                }
                let omega_p = &self.s_tilde * &self.omega;
                let q = leader_decode_vec(codes, &self.rates);
                self.estimate = predicted - omega_p.component_mul(&q);
                self.omega = omega_p.component_mul(&self.shrink);
            }
            None => {
                self.estimate = predicted;
                self.omega = &self.s_tilde * &self.omega;
            }
        }
        let floor = OMEGA_FLOOR * self.estimate.amax();
        self.omega.apply(|w| *w = w.max(floor));
    }

    /// Encoder-side convenience: encode and apply in one call.
    pub fn step(&mut self, step: usize, v_bar: &Vector, jammed: bool) -> Result<Option<LeaderMessage>> {
        if jammed {
            self.decode(None);
            return Ok(None);
        }
        let msg = self.encode(step, v_bar)?;
        self.decode(Some((&msg.codewords, msg.rescale)));
        Ok(Some(msg))
    }

    /// Exact update used when quantization is disabled.
    pub fn set_exact(&mut self, value: Vector) {
        self.estimate = value;
    }

    pub fn propagate(&mut self) {
        self.estimate = &self.s_bar * &self.estimate;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn zoom_examples() {
        let mut z = Zoom::new(1.0, 0.92, 1.10521).unwrap();
        assert_eq!(z.step(false), 0.92);
        let mut z2 = Zoom::new(1.0, 0.92, 1.10521).unwrap();
        assert_eq!(z2.step(true), 1.10521);
        z.step(true);
        z.step(true);
        assert_eq!(z.theta(), 0.92 * 1.10521f64.powi(2));
        assert!(Zoom::new(0.0, 0.9, 1.1).is_err());
        assert!(Zoom::new(1.0, 1.0, 1.1).is_err());
        assert!(Zoom::new(1.0, 0.9, 1.0).is_err());
    }

    #[test]
    fn follower_zero_innovation_and_jam() {
        let q = FollowerQuantizer::new(3, 1.0).unwrap();
        let s = scalar(1.0);
        let mut c = FollowerCodec::new(1);
        c.set_exact(v1(0.7));
        let msg = c.encode(&s, &v1(0.7), 1.0, &q);
        assert_eq!(msg.codewords, vec![0]);
        c.decode(&s, Some(&msg.codewords), 1.0, &q);
        assert_eq!(c.estimate()[0], 0.7);
        c.decode(&scalar(2.0), None, 1.0, &q);
        assert_eq!(c.estimate()[0], 1.4);
    }

    #[test]
    fn follower_scalar_step() {
        let q = FollowerQuantizer::new(3, 1.0).unwrap();
        let s = scalar(1.0);
        let mut c = FollowerCodec::new(1);
        let msg = c.encode(&s, &v1(1.5), 1.0, &q);
        c.decode(&s, Some(&msg.codewords), 1.0, &q);
        assert_eq!(c.estimate()[0], 2.0);
    }

    #[test]
    fn leader_zero_error_step() {
        let mut c = LeaderCodec::new(scalar(1.0), scalar(1.0), vec![1.0], v1(1.0)).unwrap();
        let msg = c.step(1, &v1(0.0), false).unwrap().unwrap();
        assert_eq!(msg.codewords, vec![0]);
        // v̂ = 0 - 1 * 0.5
        assert_eq!(c.estimate()[0], -0.5);
        assert_eq!(c.omega()[0], 0.5);
        assert!((c.estimate()[0] - 0.0).abs() <= c.omega()[0]);
    }

    #[test]
    fn leader_error_bound_scalar_growth() {
        // S̄ = 2, ω(0) = 1, v̂(0) = 0, v̄(0) = 0.9 → v̄(1) = 1.8
        let mut c = LeaderCodec::new(scalar(2.0), scalar(2.0), vec![1.0], v1(1.0)).unwrap();
        c.step(1, &v1(1.8), false).unwrap();
        let err = (c.estimate()[0] - 1.8).abs();
        assert_eq!(c.omega()[0], 1.0);
        assert!(err <= 1.0, "err = {err}");
    }

    #[test]
    fn omega_updates() {
        let mut c = LeaderCodec::new(scalar(2.0), scalar(2.0), vec![1.0], v1(1.0)).unwrap();
        c.decode(None);
        assert_eq!(c.omega()[0], 2.0);
        let mut c = LeaderCodec::new(scalar(2.0), scalar(2.0), vec![1.0], v1(1.0)).unwrap();
        c.step(1, &v1(0.0), false).unwrap();
        assert_eq!(c.omega()[0], 1.0);

        let mut s_tilde = Mat::identity(4, 4);
        s_tilde.view_mut((0, 2), (2, 2)).fill(1.0);
        let mut c = LeaderCodec::new(Mat::identity(4, 4), s_tilde.clone(), vec![1.0; 4], Vector::repeat(4, 1.0))
            .unwrap();
        c.decode(None);
        assert_eq!(c.omega(), &(s_tilde * Vector::repeat(4, 1.0)));
        assert_eq!(c.omega().as_slice(), &[3.0, 3.0, 1.0, 1.0]);
    }

    #[test]
    fn leader_overflow_detected_and_jump_rescaled() {
        let mut c = LeaderCodec::new(scalar(1.0), scalar(1.0), vec![1.0], v1(1.0)).unwrap();
        assert!(matches!(c.encode(3, &v1(5.0)), Err(Error::LeaderOverflow { step: 3, .. })));
        c.mark_jump();
        let msg = c.step(3, &v1(5.0), false).unwrap().unwrap();
        let factor = msg.rescale.unwrap();
        assert!((factor - 5.05).abs() < 1e-12);
        assert!((c.estimate()[0] - 5.0).abs() <= c.omega()[0]);
        // the flag is consumed
        assert!(c.encode(4, &v1(1e6)).is_err());
    }

    #[test]
    fn rate_assignment_follows_blocks() {
        use crate::linalg::{real_jordan_form, JordanOptions};
        let s = Mat::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.5]);
        let dec = real_jordan_form(&s, &JordanOptions::default()).unwrap();
        assert_eq!(coordinate_rates(&dec, &[3.0, 1.0]).unwrap(), vec![3.0, 3.0, 1.0]);
        assert!(coordinate_rates(&dec, &[3.0]).is_err());
    }
}
