//! Running scenarios, writing and replaying artifacts, and parameter sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::scenario::{DosConfig, Scenario, ScenarioConfig};
use crate::sim::{case_dynamics_check, simulate, CaseReport, EventKind, SimTrace, Verdict};

pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const PLOT_FILE: &str = "errors.svg";
pub const CONFIG_FILE: &str = "config.toml";
pub const DOS_FILE: &str = "dos.txt";
pub const CODEWORD_FILE: &str = "codewords.bin";

const CODEWORD_MAGIC: &[u8; 4] = b"QTCW";
const CODEWORD_VERSION: u32 = 1;

/// Simulation result plus the post-run consistency check.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: SimTrace,
    pub case_report: Option<CaseReport>,
}

impl RunOutcome {
    pub fn verdict(&self) -> Verdict {
        self.trace.verdict
    }
}

pub fn run(sc: &Scenario) -> Result<RunOutcome> {
    let trace = simulate(&sc.system, &sc.params, &sc.dos, &sc.options)?;
    let case_report = if trace.quantized && !trace.halted {
        Some(case_dynamics_check(&sc.system, &sc.params, &trace)?)
    } else {
        None
    };
    Ok(RunOutcome { trace, case_report })
}

/// Loads a config file, applies an optional seed override and resolves it.
pub fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.build(path.parent())
}

/// One row per step: `k, t, jam, err_1..err_N, theta, omega_inf, max_arg, saturated`.
pub fn trace_csv(sc: &Scenario, trace: &SimTrace) -> String {
    let n = sc.system.n_followers();
    let mut out = String::from("k,t,jam");
    for i in 1..=n {
        let _ = write!(out, ",err_{i}");
    }
    out.push_str(",theta,omega_inf,max_arg,saturated\n");
    let delta = sc.dos.delta();
    for s in &trace.steps {
        let _ = write!(out, "{},{:.16e},{}", s.k, s.k as f64 * delta, u8::from(s.jammed));
        for e in &s.errors {
            let _ = write!(out, ",{e:.16e}");
        }
        let max_arg = s
            .follower_args
            .as_ref()
            .map_or(0.0, |a| a.iter().map(|v| v.amax()).fold(0.0, f64::max));
        let _ = writeln!(
            out,
            ",{:.16e},{:.16e},{:.16e},{}",
            s.theta,
            s.omega.amax(),
            max_arg,
            u8::from(s.saturated)
        );
    }
    out
}

/// Binary codeword log: `QTCW`, then version, steps, agents and `n_v` as
/// little-endian `u32`; per transmission step a flag byte (bit 0: jammed,
/// bit 1: payload follows) and, with payload, `N n_v` follower codewords
/// followed by `n_v` leader codewords as little-endian `i64`.
pub fn encode_codewords(sc: &Scenario, trace: &SimTrace) -> Vec<u8> {
    let n = sc.system.n_followers() as u32;
    let nv = sc.system.n_v() as u32;
    let records = trace.steps.len().saturating_sub(1) as u32;
    let mut out = Vec::new();
    out.extend_from_slice(CODEWORD_MAGIC);
    for x in [CODEWORD_VERSION, records, n, nv] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for s in trace.steps.iter().skip(1) {
        let payload = match (&s.follower_codes, &s.leader_codes) {
            (Some(f), Some(l)) => Some((f, l)),
            _ => None,
        };
        out.push(u8::from(s.jammed) | (u8::from(payload.is_some()) << 1));
        if let Some((f, l)) = payload {
            for c in f.iter().flatten().chain(l.iter()) {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    out
}

/// Per step: `None` without payload, otherwise all codewords in file order.
pub type CodewordLog = Vec<(u8, Option<Vec<i64>>)>;

pub fn decode_codewords(bytes: &[u8]) -> Result<CodewordLog> {
    let bad = |what: &str| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, what.to_string()));
    if bytes.len() < 20 || &bytes[..4] != CODEWORD_MAGIC {
        return Err(bad("codeword file has no QTCW header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != CODEWORD_VERSION {
        return Err(bad("unsupported codeword file version"));
    }
    let (records, n, nv) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let per = (n + 1) * nv;
    let mut pos = 20;
    let mut log = Vec::with_capacity(records);
    for _ in 0..records {
        let flag = *bytes.get(pos).ok_or_else(|| bad("codeword file truncated"))?;
        pos += 1;
        if flag & 2 != 0 {
            let end = pos + 8 * per;
            let chunk = bytes.get(pos..end).ok_or_else(|| bad("codeword file truncated"))?;
            log.push((
                flag,
                Some(chunk.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
            ));
            pos = end;
        } else {
            log.push((flag, None));
        }
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes in codeword file"));
    }
    Ok(log)
}

/// Tracking-error plot, `log10 max(‖y_i - v‖, 1e-16)` per follower.
pub fn errors_svg(sc: &Scenario, trace: &SimTrace) -> String {
    const W: f64 = 720.0;
    const H: f64 = 360.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let delta = sc.dos.delta();
    let t_max = (trace.steps.len().max(2) - 1) as f64 * delta;
    let logs: Vec<Vec<f64>> = (0..sc.system.n_followers())
        .map(|i| {
            trace
                .steps
                .iter()
                .map(|s| s.errors[i].max(1e-16).log10())
                .map(|x| if x.is_finite() { x } else { 16.0 })
                .collect()
        })
        .collect();
    let lo = logs.iter().flatten().copied().fold(f64::INFINITY, f64::min).floor();
    let hi = logs.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max).ceil();
    let hi = if hi > lo { hi } else { lo + 1.0 };
    let px = |t: f64| PAD + t / t_max * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - lo) / (hi - lo) * (H - 2.0 * PAD);

    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    for q in sc.dos.intervals() {
        let (a, b) = (px(q.start.min(t_max)), px(q.end().min(t_max)));
        let _ = writeln!(
            out,
            "<rect x=\"{a:.2}\" y=\"{PAD}\" width=\"{:.2}\" height=\"{}\" fill=\"#eeeeee\"/>",
            (b - a).max(0.5),
            H - 2.0 * PAD
        );
    }
    let _ = writeln!(
        out,
        "<polyline points=\"{PAD},{PAD} {PAD},{} {},{}\" fill=\"none\" stroke=\"black\"/>",
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">t [s]</text>", W / 2.0, H - 15.0);
    let _ = writeln!(out, "<text x=\"{PAD}\" y=\"{}\">log10 |y_i - v|</text>", PAD - 15.0);
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi}</text>", PAD - 5.0, py(hi) + 4.0);
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{lo}</text>", PAD - 5.0, py(lo) + 4.0);
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{t_max}</text>",
        W - PAD,
        H - PAD + 15.0
    );
    for (i, series) in logs.iter().enumerate() {
        let mut pts = String::new();
        for (k, y) in series.iter().enumerate() {
            let _ = write!(pts, "{:.2},{:.2} ", px(k as f64 * delta), py(*y));
        }
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1\"/>",
            pts.trim_end(),
            COLORS[i % COLORS.len()]
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Design report followed by the run summary.
pub fn report_text(sc: &Scenario, outcome: &RunOutcome) -> String {
    let trace = &outcome.trace;
    let mut out = String::new();
    let _ = writeln!(out, "scenario              : {}", sc.config.name);
    let _ = writeln!(out, "seed                  : {}", sc.config.seed);
    out.push_str("[design]\n");
    out.push_str(&sc.report.to_text());
    out.push_str("[run]\n");
    let b = sc.dos.averaged_budget();
    let _ = writeln!(out, "dos attacks           : {}", sc.dos.intervals().len());
    let _ = writeln!(out, "dos 1/T               : {:.6}", b.inv_t);
    let _ = writeln!(out, "dos Delta/tau_D       : {:.6}", b.delta_over_tau_d);
    let _ = writeln!(out, "dos sum               : {:.6}", b.sum);
    let _ = writeln!(out, "quantization          : {}", trace.quantized);
    let _ = writeln!(out, "R_f                   : {}", sc.params.levels);
    let _ = writeln!(out, "theta0                : {:.6e}", sc.params.theta0);
    let _ = writeln!(out, "verdict               : {}", trace.verdict.as_str());
    let _ = writeln!(out, "steps simulated       : {}", trace.steps.len() - 1);
    let _ = writeln!(out, "halted                : {}", trace.halted);
    let _ = writeln!(out, "initial error         : {:.6e}", trace.initial_error);
    let _ = writeln!(out, "final error           : {:.6e}", trace.final_error);
    let _ = writeln!(out, "saturation events     : {}", trace.saturation_count());
    let _ = writeln!(out, "max |Q argument|      : {:.6e} (empirical)", trace.max_follower_argument());
    let _ = writeln!(out, "max |codeword|        : {}", trace.max_follower_codeword());
    if let Some(r) = &sc.report.requirement {
        let used = 2.0 * trace.max_follower_argument() / sc.params.sigma;
        let _ = writeln!(
            out,
            "certified vs empirical: range {:.6e} vs {:.6e}",
            r.range,
            used * sc.params.sigma
        );
    }
    for e in &trace.events {
        if let EventKind::LeaderRescale { factor } = e.kind {
            let _ = writeln!(out, "leader rescale        : step {} factor {factor:.6}", e.step);
        }
    }
    if let Some(c) = &outcome.case_report {
        let _ = writeln!(
            out,
            "case check residual   : {:.3e} at step {} (cases {:?}, skipped {})",
            c.max_residual, c.worst_step, c.case_counts, c.skipped
        );
    }
    for w in &sc.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

/// Writes every artifact of a run into `dir`.
pub fn write_artifacts(dir: &Path, sc: &Scenario, outcome: &RunOutcome, plots: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut cfg = sc.config.clone();
    // The saved config points at the saved signal so replay needs no RNG.
    cfg.dos = DosConfig::File { path: DOS_FILE.into() };
    if !cfg.run.dos_enabled {
        cfg.dos = DosConfig::None;
    }
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    fs::write(dir.join(DOS_FILE), sc.dos.to_text())?;
    fs::write(dir.join(TRACE_FILE), trace_csv(sc, &outcome.trace))?;
    fs::write(dir.join(REPORT_FILE), report_text(sc, outcome))?;
    fs::write(dir.join(CODEWORD_FILE), encode_codewords(sc, &outcome.trace))?;
    if plots {
        fs::write(dir.join(PLOT_FILE), errors_svg(sc, &outcome.trace))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayStatus {
    Ok { case_residual: Option<f64> },
    /// First step (1-based transmission step or trace row) that differs.
    Mismatch { artifact: &'static str, step: usize },
}

/// Re-simulates a run directory and compares its trace and codewords.
pub fn replay(dir: &Path) -> Result<ReplayStatus> {
    let cfg = ScenarioConfig::load(&dir.join(CONFIG_FILE))?;
    let sc = cfg.build(Some(dir))?;
    let outcome = run(&sc)?;

    let stored = decode_codewords(&fs::read(dir.join(CODEWORD_FILE))?)?;
    let fresh = decode_codewords(&encode_codewords(&sc, &outcome.trace))?;
    if let Some(i) = (0..stored.len().max(fresh.len())).find(|&i| stored.get(i) != fresh.get(i)) {
        return Ok(ReplayStatus::Mismatch {
            artifact: CODEWORD_FILE,
            step: i + 1,
        });
    }
    let stored = fs::read_to_string(dir.join(TRACE_FILE))?;
    let fresh = trace_csv(&sc, &outcome.trace);
    let (a, b): (Vec<&str>, Vec<&str>) = (stored.lines().collect(), fresh.lines().collect());
    if let Some(i) = (0..a.len().max(b.len())).find(|&i| a.get(i) != b.get(i)) {
        return Ok(ReplayStatus::Mismatch {
            artifact: TRACE_FILE,
            step: i.saturating_sub(1),
        });
    }
    Ok(ReplayStatus::Ok {
        case_residual: outcome.case_report.map(|c| c.max_residual),
    })
}

/// Parameter grid; every listed axis is swept, unlisted ones keep the base
/// value. An axis given as an empty list yields an empty sweep.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub gamma1: Option<Vec<f64>>,
    pub gamma2: Option<Vec<f64>>,
    /// Applied to every Jordan block.
    pub rate: Option<Vec<f64>>,
    /// Switches the DoS to the random generator with this target.
    pub dos_target: Option<Vec<f64>>,
}

impl SweepGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    fn cells(&self) -> Vec<Cell> {
        let axis = |a: &Option<Vec<f64>>| -> Vec<Option<f64>> {
            match a {
                Some(v) => v.iter().copied().map(Some).collect(),
                None => vec![None],
            }
        };
        let mut cells = Vec::new();
        for g1 in axis(&self.gamma1) {
            for g2 in axis(&self.gamma2) {
                for r in axis(&self.rate) {
                    for d in axis(&self.dos_target) {
                        cells.push(Cell {
                            gamma1: g1,
                            gamma2: g2,
                            rate: r,
                            dos_target: d,
                        });
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    gamma1: Option<f64>,
    gamma2: Option<f64>,
    rate: Option<f64>,
    dos_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma1: f64,
    pub gamma2: f64,
    pub rate: f64,
    pub dos_sum: f64,
    pub bound: Option<f64>,
    pub ceiling: Option<f64>,
    pub verdict: Option<Verdict>,
    pub final_error: f64,
    pub max_arg: f64,
    pub error: Option<String>,
}

fn sweep_cell(base: &ScenarioConfig, cell: Cell, dir: Option<&Path>) -> SweepRow {
    let mut cfg = base.clone();
    if let Some(g) = cell.gamma1 {
        cfg.codec.gamma1 = g;
    }
    if let Some(g) = cell.gamma2 {
        cfg.codec.gamma2 = g;
    }
    if let Some(r) = cell.rate {
        cfg.codec.block_rates.iter_mut().for_each(|x| *x = r);
    }
    if let Some(t) = cell.dos_target {
        cfg.dos = DosConfig::Random {
            target: t,
            freq_share: 0.5,
            seed: None,
        };
        cfg.run.dos_enabled = true;
    }
    let mut row = SweepRow {
        gamma1: cfg.codec.gamma1,
        gamma2: cfg.codec.gamma2,
        rate: cfg.codec.block_rates.first().copied().unwrap_or(f64::NAN),
        dos_sum: f64::NAN,
        bound: None,
        ceiling: None,
        verdict: None,
        final_error: f64::NAN,
        max_arg: f64::NAN,
        error: None,
    };
    let result = cfg.build(dir).and_then(|sc| {
        row.dos_sum = sc.dos.averaged_budget().sum;
        row.bound = sc.report.resilience.map(|b| b.bound);
        row.ceiling = sc.report.resilience.map(|b| b.ceiling);
        simulate(&sc.system, &sc.params, &sc.dos, &sc.options)
    });
    match result {
        Ok(trace) => {
            row.verdict = Some(trace.verdict);
            row.final_error = trace.final_error;
            row.max_arg = trace.max_follower_argument();
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs every grid cell in parallel; rows come back in grid order.
pub fn sweep(base: &ScenarioConfig, grid: &SweepGrid, dir: Option<&Path>) -> Vec<SweepRow> {
    grid.cells()
        .into_par_iter()
        .map(|cell| sweep_cell(base, cell, dir))
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.16e}"));
    let mut out = String::from("gamma1,gamma2,rate,dos_sum,bound,ceiling,verdict,final_error,max_arg,error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{:.16e},{:.16e},{}",
            r.gamma1,
            r.gamma2,
            r.rate,
            r.dos_sum,
            opt(r.bound),
            opt(r.ceiling),
            r.verdict.map_or("error", |v| v.as_str()),
            r.final_error,
            r.max_arg,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        );
    }
    out
}
