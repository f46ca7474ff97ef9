//! Scenario configuration (TOML) and its resolution into a simulatable
//! system, codec parameters, DoS signal and design report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{design_report, DesignInputs, DesignReport};
use crate::codec::coordinate_rates;
use crate::dos::{generate_random, synthesize, DosInterval, DosSignal};
use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, norm_inf, zoh_discretize, JordanOptions, Mat, Vector};
use crate::quantizer::MAX_LEVELS;
use crate::sim::{CodecParams, FollowerModel, LeaderJump, RunOptions, System};
use crate::topology::FollowerGraph;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub run: RunConfig,
    pub leader: LeaderConfig,
    #[serde(default)]
    pub plant: PlantConfig,
    pub followers: Vec<FollowerConfig>,
    pub graph: GraphConfig,
    pub codec: CodecConfig,
    #[serde(default)]
    pub dos: DosConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub delta: f64,
    pub horizon: f64,
    #[serde(default = "yes")]
    pub quantization: bool,
    #[serde(default = "yes")]
    pub dos_enabled: bool,
    #[serde(default = "default_cap")]
    pub divergence_cap: f64,
    #[serde(default = "default_ratio")]
    pub converge_ratio: f64,
}

fn yes() -> bool {
    true
}

fn default_cap() -> f64 {
    RunOptions::default().divergence_cap
}

fn default_ratio() -> f64 {
    RunOptions::default().converge_ratio
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderConfig {
    pub s: Rows,
    pub v0: Vec<f64>,
    /// Bound on `‖v(0)‖∞`; defaults to the exact value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_v0: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub jumps: Vec<JumpConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpConfig {
    /// Time in seconds, rounded to the nearest step.
    pub time: f64,
    pub delta: Vec<f64>,
}

/// Follower matrices; either discrete `a`, `b` or continuous `ac`, `bc`
/// sampled with a zero-order hold at `Δ`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ac: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerConfig {
    pub x0: Vec<f64>,
    /// Per-follower overrides of the shared plant matrices.
    #[serde(default, flatten)]
    pub plant: PlantConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// 1-based undirected unit-weight edges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Rows>,
    pub pinning: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelsConfig {
    Fixed(u64),
    /// Only `"auto"`: the smallest certified `R_f`.
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub sigma: f64,
    pub levels: LevelsConfig,
    pub kbar: Rows,
    /// Per Jordan block, in the block order of the decomposition.
    pub block_rates: Vec<f64>,
    /// Defaults to `C_x0 γ1 / σ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<f64>,
    /// Defaults to `1.01 Σ_j |T_lj| C_v0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega0: Option<Vec<f64>>,
    /// Bound on `max_i ‖x_i(0)‖∞`; defaults to the exact value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_x0: Option<f64>,
    /// Superdiagonal scale of the Jordan blocks of `S̄` (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum DosConfig {
    #[default]
    None,
    /// Random attack pattern with averaged `1/T + Δ/τ_D` near `target`.
    Random {
        target: f64,
        #[serde(default = "default_share")]
        freq_share: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Exactly `count` attacks totalling `active` seconds at random places.
    Budget {
        count: usize,
        active: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Explicit { intervals: Vec<[f64; 2]> },
    /// Signal file in the `dos.txt` format, relative to the config file.
    File { path: PathBuf },
}

fn default_share() -> f64 {
    0.5
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Leader, followers, graph and gains only, without the design analysis.
    pub fn system(&self) -> Result<System> {
        let run = &self.run;
        let s = matrix_from_rows(&self.leader.s, "leader.s")?;
        let nv = s.nrows();
        let v0 = vector(&self.leader.v0, nv, "leader.v0")?;
        let jumps = self
            .leader
            .jumps
            .iter()
            .enumerate()
            .map(|(i, j)| {
                Ok(LeaderJump {
                    step: (j.time / run.delta).round() as usize,
                    delta: vector(&j.delta, nv, &format!("leader.jumps[{i}].delta"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let followers = self
            .followers
            .iter()
            .enumerate()
            .map(|(i, f)| self.follower_model(i, f, &s))
            .collect::<Result<Vec<_>>>()?;
        let graph = self.graph()?;
        let kbar = matrix_from_rows(&self.codec.kbar, "codec.kbar")?;
        let jordan = JordanOptions {
            chain_scale: self.codec.chain_scale.unwrap_or(1.0),
            ..JordanOptions::default()
        };
        System::with_jordan_options(s, v0, jumps, followers, graph, kbar, &jordan)
    }

    /// Resolves everything; `base` anchors relative DoS file paths.
    pub fn build(&self, base: Option<&Path>) -> Result<Scenario> {
        let run = &self.run;
        if !(run.delta > 0.0 && run.horizon > run.delta) {
            return Err(Error::Config(format!(
                "run: need 0 < delta < horizon, got delta = {}, horizon = {}",
                run.delta, run.horizon
            )));
        }
        let system = self.system()?;
        let nv = system.n_v();
        let mut warnings = system.warnings.clone();

        let codec = &self.codec;
        let c_x0 = match codec.c_x0 {
            Some(c) => c,
            None => system.followers.iter().map(|f| f.x0.amax()).fold(0.0, f64::max),
        };
        let c_v0 = self.leader.c_v0.unwrap_or_else(|| system.v0.amax());
        if c_x0 < system.followers.iter().map(|f| f.x0.amax()).fold(0.0, f64::max) {
            warnings.push("codec.c_x0 is below max ‖x_i(0)‖∞".into());
        }
        if c_v0 < system.v0.amax() {
            warnings.push("leader.c_v0 is below ‖v(0)‖∞".into());
        }
        let theta0 = codec.theta0.unwrap_or(c_x0 * codec.gamma1 / codec.sigma);
        if theta0 < c_x0 * codec.gamma1 / codec.sigma {
            warnings.push(format!(
                "theta0 = {theta0} is below C_x0 γ1 / σ = {}",
                c_x0 * codec.gamma1 / codec.sigma
            ));
        }
        let t = &system.dec.t;
        let omega0 = match &codec.omega0 {
            Some(w) => vector(w, nv, "codec.omega0")?,
            None => Vector::from_iterator(
                nv,
                t.row_iter().map(|r| {
                    let w = 1.01 * r.iter().map(|x| x.abs()).sum::<f64>() * c_v0;
                    if w > 0.0 {
                        w
                    } else {
                        1.0
                    }
                }),
            ),
        };
        let rates = coordinate_rates(&system.dec, &codec.block_rates)?;
        // α(0) = -1⊗v̄(0)/θ0 since the observers start at zero.
        let c_alpha = c_x0.max(norm_inf(t) * c_v0);
        let report = design_report(&DesignInputs {
            gains: &system.gains,
            dec: &system.dec,
            kbar: &system.kbar,
            gamma1: codec.gamma1,
            gamma2: codec.gamma2,
            sigma: codec.sigma,
            theta0,
            c_x0: c_alpha,
            block_rates: &codec.block_rates,
            rates: &rates,
            omega0: &omega0,
        })?;
        let levels = match &codec.levels {
            LevelsConfig::Fixed(l) => *l,
            LevelsConfig::Named(name) if name == "auto" => match &report.requirement {
                Some(r) if r.levels <= MAX_LEVELS => r.levels,
                Some(r) => {
                    return Err(Error::Config(format!(
                        "codec.levels = \"auto\" needs R_f = {} beyond 2^52",
                        r.levels
                    )))
                }
                None => {
                    return Err(Error::Config(format!(
                        "codec.levels = \"auto\" but the design is not certifiable: {}",
                        report.notes.join("; ")
                    )))
                }
            },
            LevelsConfig::Named(other) => {
                return Err(Error::Config(format!("codec.levels: expected an integer or \"auto\", got {other:?}")))
            }
        };
        if let Some(r) = &report.requirement {
            if levels < r.levels {
                warnings.push(format!("R_f = {levels} is below the certified {}", r.levels));
            }
        }
        let params = CodecParams {
            gamma1: codec.gamma1,
            gamma2: codec.gamma2,
            sigma: codec.sigma,
            levels,
            theta0,
            block_rates: codec.block_rates.clone(),
            omega0,
        };
        let dos = if run.dos_enabled {
            self.dos_signal(base)?
        } else {
            DosSignal::empty(run.delta, run.horizon)?
        };
        let options = RunOptions {
            quantization: run.quantization,
            divergence_cap: run.divergence_cap,
            converge_ratio: run.converge_ratio,
        };
        Ok(Scenario {
            config: self.clone(),
            system,
            params,
            dos,
            options,
            report,
            warnings,
        })
    }

    fn follower_model(&self, i: usize, f: &FollowerConfig, s: &Mat) -> Result<FollowerModel> {
        let what = |m: &str| format!("followers[{i}].{m}");
        let pick = |own: &Option<Rows>, shared: &Option<Rows>| own.clone().or_else(|| shared.clone());
        let c = pick(&f.plant.c, &self.plant.c).ok_or_else(|| Error::Config(format!("{} missing", what("c"))))?;
        let k = pick(&f.plant.k, &self.plant.k).ok_or_else(|| Error::Config(format!("{} missing", what("k"))))?;
        let (a, b) = match (
            pick(&f.plant.a, &self.plant.a),
            pick(&f.plant.b, &self.plant.b),
            pick(&f.plant.ac, &self.plant.ac),
            pick(&f.plant.bc, &self.plant.bc),
        ) {
            (Some(a), Some(b), _, _) => (matrix_from_rows(&a, &what("a"))?, matrix_from_rows(&b, &what("b"))?),
            (_, _, Some(ac), Some(bc)) => zoh_discretize(
                &matrix_from_rows(&ac, &what("ac"))?,
                &matrix_from_rows(&bc, &what("bc"))?,
                self.run.delta,
            )?,
            _ => return Err(Error::Config(format!("{} needs a and b, or ac and bc", what("plant")))),
        };
        let x0 = vector(&f.x0, a.nrows(), &what("x0"))?;
        FollowerModel::new(a, b, matrix_from_rows(&c, &what("c"))?, matrix_from_rows(&k, &what("k"))?, x0, s)
            .map_err(|e| Error::Config(format!("follower {}: {e}", i + 1)))
    }

    fn graph(&self) -> Result<FollowerGraph> {
        let n = self.followers.len();
        let pinning = vector(&self.graph.pinning, n, "graph.pinning")?;
        match (&self.graph.edges, &self.graph.adjacency) {
            (Some(edges), None) => {
                let zero_based = edges
                    .iter()
                    .map(|&[i, j]| {
                        if i == 0 || j == 0 {
                            Err(Error::Config("graph.edges are 1-based".into()))
                        } else {
                            Ok((i - 1, j - 1))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                FollowerGraph::from_edges(n, &zero_based, pinning)
            }
            (None, Some(adj)) => FollowerGraph::new(matrix_from_rows(adj, "graph.adjacency")?, pinning),
            _ => Err(Error::Config("graph needs exactly one of edges or adjacency".into())),
        }
    }

    fn dos_signal(&self, base: Option<&Path>) -> Result<DosSignal> {
        let (delta, horizon) = (self.run.delta, self.run.horizon);
        match &self.dos {
            DosConfig::None => DosSignal::empty(delta, horizon),
            DosConfig::Random { target, freq_share, seed } => {
                generate_random(*target, delta, horizon, seed.unwrap_or(self.seed), *freq_share)
            }
            DosConfig::Budget { count, active, seed } => {
                synthesize(*count, *active, delta, horizon, seed.unwrap_or(self.seed))
            }
            DosConfig::Explicit { intervals } => DosSignal::new(
                intervals
                    .iter()
                    .map(|&[start, duration]| DosInterval { start, duration })
                    .collect(),
                delta,
                horizon,
            ),
            DosConfig::File { path } => {
                let full = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let text =
                    std::fs::read_to_string(&full).map_err(|e| Error::Dos(format!("cannot read {}: {e}", full.display())))?;
                DosSignal::from_text(&text, Some(delta), Some(horizon))
            }
        }
    }
}

fn vector(v: &[f64], n: usize, what: &str) -> Result<Vector> {
    if v.len() != n {
        return Err(Error::Config(format!("{what}: expected {n} entries, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("{what}: non-finite entry")));
    }
    Ok(Vector::from_row_slice(v))
}

/// A resolved scenario, ready to simulate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub system: System,
    pub params: CodecParams,
    pub dos: DosSignal,
    pub options: RunOptions,
    pub report: DesignReport,
    pub warnings: Vec<String>,
}
