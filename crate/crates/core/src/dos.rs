//! DoS attack signals: attack intervals `[h_q, h_q + τ_q)` on the continuous
//! time axis, sampled at period Δ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One attack interval: jamming starts at `start` and lasts `duration`
/// seconds (zero for a single pulse).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DosInterval {
    pub start: f64,
    pub duration: f64,
}

impl DosInterval {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// Normalized attack signal: sorted, disjoint intervals with `h_0 >= Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DosSignal {
    intervals: Vec<DosInterval>,
    delta: f64,
    horizon: f64,
}

/// Frequency and duration parameters `(η, τ_D)` and `(κ, T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DosBudget {
    pub eta: f64,
    pub tau_d: f64,
    pub kappa: f64,
    pub t: f64,
}

/// Horizon averages of the attack duration and frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedBudget {
    /// `|Ξ(0, H)| / H`
    pub inv_t: f64,
    /// `Δ n(0, H) / H`
    pub delta_over_tau_d: f64,
    pub sum: f64,
}

impl DosSignal {
    pub fn new(mut intervals: Vec<DosInterval>, delta: f64, horizon: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Dos(format!("sampling period must be > 0, got {delta}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Dos(format!("horizon must be > 0, got {horizon}")));
        }
        if let Some(bad) = intervals
            .iter()
            .find(|iv| !iv.start.is_finite() || !iv.duration.is_finite() || iv.duration < 0.0)
        {
            return Err(Error::Dos(format!("invalid interval {bad:?}")));
        }
        intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
        let mut merged: Vec<DosInterval> = Vec::with_capacity(intervals.len());
        let eps = 1e-9 * delta;
        for iv in intervals {
            match merged.last_mut() {
                // a pulse at the open end of an interval stays separate
                Some(last)
                    if iv.start <= last.end()
                        && !(iv.duration == 0.0 && last.duration > 0.0 && (iv.start - last.end()).abs() <= eps) =>
                {
                    let end = last.end().max(iv.end());
                    last.duration = end - last.start;
                }
                _ => merged.push(iv),
            }
        }
        if let Some(first) = merged.first() {
            if first.start < delta * (1.0 - 1e-9) {
                return Err(Error::Dos(format!(
                    "first attack starts at {} but must not start before Δ = {delta}",
                    first.start
                )));
            }
        }
        Ok(Self {
            intervals: merged,
            delta,
            horizon,
        })
    }

    pub fn empty(delta: f64, horizon: f64) -> Result<Self> {
        Self::new(Vec::new(), delta, horizon)
    }

    pub fn intervals(&self) -> &[DosInterval] {
        &self.intervals
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of sampling steps `K = round(H / Δ)`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.delta).round() as usize
    }

    fn snap(&self) -> f64 {
        1e-9 * self.delta
    }

    /// Whether the sampling instant `kΔ` lies in some `{h_q} ∪ [h_q, h_q + τ_q)`.
    /// Boundaries are compared with a tolerance of `1e-9 Δ` so that decimal
    /// attack times land on the intended side of a sampling instant.
    pub fn is_jammed(&self, k: usize) -> Result<bool> {
        if k > self.steps() {
            return Err(Error::Dos(format!(
                "step {k} is beyond the horizon ({} steps)",
                self.steps()
            )));
        }
        Ok(self.jammed_at(k as f64 * self.delta))
    }

    fn jammed_at(&self, t: f64) -> bool {
        let eps = self.snap();
        let idx = self.intervals.partition_point(|iv| iv.start - eps <= t);
        if idx == 0 {
            return false;
        }
        let iv = self.intervals[idx - 1];
        if iv.duration == 0.0 {
            (t - iv.start).abs() <= eps
        } else {
            t < iv.end() - eps
        }
    }

    /// Jam flags for steps `0..=steps`.
    pub fn jam_sequence(&self) -> Vec<bool> {
        (0..=self.steps())
            .map(|k| self.jammed_at(k as f64 * self.delta))
            .collect()
    }

    fn check_range(&self, tau: f64, t: f64) -> Result<()> {
        if !(tau >= 0.0 && tau <= t && t.is_finite()) {
            return Err(Error::Dos(format!("invalid window [{tau}, {t}]")));
        }
        Ok(())
    }

    /// `n(τ, t)`: number of attack onsets `h_q ∈ [τ, t]`.
    pub fn count_transitions(&self, tau: f64, t: f64) -> Result<usize> {
        self.check_range(tau, t)?;
        let lo = self.intervals.partition_point(|iv| iv.start < tau);
        let hi = self.intervals.partition_point(|iv| iv.start <= t);
        Ok(hi.saturating_sub(lo))
    }

    /// `|Ξ(τ, t)|`: total jammed time inside `[τ, t]`.
    pub fn duration(&self, tau: f64, t: f64) -> Result<f64> {
        self.check_range(tau, t)?;
        Ok(self
            .intervals
            .iter()
            .map(|iv| (iv.end().min(t) - iv.start.max(tau)).max(0.0))
            .sum())
    }

    pub fn averaged_budget(&self) -> AveragedBudget {
        let h = self.horizon;
        let inv_t = self.duration(0.0, h).unwrap_or(0.0) / h;
        let n = self.count_transitions(0.0, h).unwrap_or(0);
        let delta_over_tau_d = self.delta * n as f64 / h;
        AveragedBudget {
            inv_t,
            delta_over_tau_d,
            sum: inv_t + delta_over_tau_d,
        }
    }

    /// Smallest offsets `η`, `κ` such that `n(τ,t) <= η + (t-τ)/τ_D` and
    /// `|Ξ(τ,t)| <= κ + (t-τ)/T` over all windows with endpoints on the
    /// sampling grid, for the given rates.
    pub fn fit_offsets(&self, tau_d: f64, t_rate: f64) -> Result<DosBudget> {
        if !(tau_d > 0.0 && t_rate > 1.0) {
            return Err(Error::Dos(format!(
                "need τ_D > 0 and T > 1, got τ_D = {tau_d}, T = {t_rate}"
            )));
        }
        let steps = self.steps();
        let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * self.delta).collect();
        let mut eta: f64 = 0.0;
        let mut kappa: f64 = 0.0;
        for (i, &a) in grid.iter().enumerate() {
            for &b in &grid[i..] {
                let n = self.count_transitions(a, b)? as f64;
                let d = self.duration(a, b)?;
                eta = eta.max(n - (b - a) / tau_d);
                kappa = kappa.max(d - (b - a) / t_rate);
            }
        }
        Ok(DosBudget {
            eta,
            tau_d,
            kappa,
            t: t_rate,
        })
    }

    /// Plain-text form: `#` header lines for Δ and the horizon, then one
    /// `h τ` pair per line with 9 decimals.
    pub fn to_text(&self) -> String {
        let mut out = format!("# delta {}\n# horizon {}\n", self.delta, self.horizon);
        for iv in &self.intervals {
            out.push_str(&format!("{:.9} {:.9}\n", iv.start, iv.duration));
        }
        out
    }

    /// Parses [`DosSignal::to_text`] output. Header values take precedence
    /// over the supplied defaults.
    pub fn from_text(text: &str, delta: Option<f64>, horizon: Option<f64>) -> Result<Self> {
        let (mut delta, mut horizon) = (delta, horizon);
        let mut intervals = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let mut parts = comment.split_whitespace();
                let key = parts.next();
                let value = parts.next().map(str::parse::<f64>);
                match (key, value) {
                    (Some("delta"), Some(Ok(v))) => delta = Some(v),
                    (Some("horizon"), Some(Ok(v))) => horizon = Some(v),
                    (Some("delta" | "horizon"), _) => {
                        return Err(Error::Dos(format!("line {}: malformed header", lineno + 1)))
                    }
                    _ => {}
                }
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Dos(format!("line {}: {e}", lineno + 1)))?;
            if nums.len() != 2 {
                return Err(Error::Dos(format!(
                    "line {}: expected `start duration`, got {} fields",
                    lineno + 1,
                    nums.len()
                )));
            }
            intervals.push(DosInterval {
                start: nums[0],
                duration: nums[1],
            });
        }
        let delta = delta.ok_or_else(|| Error::Dos("missing sampling period".into()))?;
        let horizon = horizon.ok_or_else(|| Error::Dos("missing horizon".into()))?;
        Self::new(intervals, delta, horizon)
    }

    /// Rounds interval endpoints to the 9-decimal text precision, so that a
    /// signal and its serialized form behave identically.
    pub fn canonical(&self) -> Result<Self> {
        Self::from_text(&self.to_text(), None, None)
    }
}

fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Random sustained attack whose averaged `1/T + Δ/τ_D` is within 0.02 of
/// `target`.
///
/// Attack periods are drawn from `p̄ U(0.5, 1.5)` with the mean period chosen
/// so that the frequency term carries `freq_share` of the target; each
/// period's duty cycle is `d U(0.5, 1.5)` with `d` tuned by bisection.
pub fn generate_random(
    target: f64,
    delta: f64,
    horizon: f64,
    seed: u64,
    freq_share: f64,
) -> Result<DosSignal> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::Dos(format!("target {target} must lie in [0, 1)")));
    }
    if !(freq_share > 0.0 && freq_share < 1.0) {
        return Err(Error::Dos(format!("freq_share {freq_share} must lie in (0, 1)")));
    }
    if target == 0.0 {
        return DosSignal::empty(delta, horizon);
    }
    let mean_period = delta / (freq_share * target);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..256 {
        let mut periods = Vec::new();
        let mut t = delta;
        while t < horizon {
            let p = mean_period * rng.random_range(0.5..1.5);
            let u = rng.random_range(0.5..1.5);
            periods.push((t, p, u));
            t += p;
        }
        let build = |duty: f64| -> Result<DosSignal> {
            let intervals = periods
                .iter()
                .filter_map(|&(t0, p, u)| {
                    let on = (duty * u).clamp(0.0, 0.95) * p;
                    let start = round9(t0 + p - on);
                    (start < horizon).then(|| DosInterval {
                        start,
                        duration: round9(on.min(horizon - start)),
                    })
                })
                .collect();
            DosSignal::new(intervals, delta, horizon)
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        if build(lo)?.averaged_budget().sum > target + 0.02 {
            continue;
        }
        let mut best = build(hi)?;
        if best.averaged_budget().sum < target - 0.02 {
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let sig = build(mid)?;
            let sum = sig.averaged_budget().sum;
            if (sum - target).abs() < (best.averaged_budget().sum - target).abs() {
                best = sig;
            }
            if sum < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if (best.averaged_budget().sum - target).abs() <= 0.02 {
            return Ok(best);
        }
    }
    Err(Error::Dos(format!(
        "could not reach target {target} within 0.02 (Δ = {delta}, horizon = {horizon})"
    )))
}

/// Random signal with exactly `count` attacks of total length `active`
/// seconds, all inside `[Δ, horizon)`.
pub fn synthesize(count: usize, active: f64, delta: f64, horizon: f64, seed: u64) -> Result<DosSignal> {
    if count == 0 {
        if active != 0.0 {
            return Err(Error::Dos("nonzero attack time with zero attacks".into()));
        }
        return DosSignal::empty(delta, horizon);
    }
    let free = horizon - delta - active;
    if !(active >= 0.0 && free > 0.0) {
        return Err(Error::Dos(format!(
            "{active} s of attacks do not fit into a {horizon} s horizon"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Durations and gaps in integer microseconds so the totals are exact.
    let split = |rng: &mut ChaCha8Rng, total_us: i64, parts: usize| -> Vec<i64> {
        let w: Vec<f64> = (0..parts).map(|_| rng.random_range(0.5..1.5)).collect();
        let sum: f64 = w.iter().sum();
        let mut out: Vec<i64> = w.iter().map(|x| (x / sum * total_us as f64).floor() as i64).collect();
        let rem = total_us - out.iter().sum::<i64>();
        out[parts - 1] += rem;
        out
    };
    let active_us = (active * 1e6).round() as i64;
    // gaps: before each attack plus a trailing one
    let free_us = (free * 1e6).floor() as i64;
    let durations = split(&mut rng, active_us, count);
    let gaps = split(&mut rng, free_us, count + 1);
    let mut t_us = (delta * 1e6).round() as i64;
    let mut intervals = Vec::with_capacity(count);
    for q in 0..count {
        t_us += gaps[q].max(1);
        intervals.push(DosInterval {
            start: t_us as f64 / 1e6,
            duration: durations[q] as f64 / 1e6,
        });
        t_us += durations[q];
    }
    let sig = DosSignal::new(intervals, delta, horizon)?;
    if sig.intervals().len() != count {
        return Err(Error::Dos("attacks overlapped; use fewer or shorter attacks".into()));
    }
    Ok(sig)
}
