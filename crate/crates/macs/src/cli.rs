//! Command-line front end: configuration ingestion, command dispatch, and
//! artifact serialization (scenario/cone JSON, trace CSV, report JSON).
//!
//! Exit codes: `0` success (certification passed, value nonpositive),
//! `1` usage or input error, `2` certification failed, `3` infeasible or
//! diverged (cone expansion, positive oracle value, non-finite state).

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Once;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::control::DecisionMode;
use crate::error::{Error, Result};
use crate::model::{Hypothesis, ModelClassSpec, ScenarioSet};
use crate::oracle::{controller_discretized_payoff, exact_game_value, OracleGrids};
use crate::sim::{empirical_gain, gain_sweep, rollout, DisturbanceStrategy, Trace};
use crate::synthesis::{build_example_cone, certify, expand_cone, SampleConfig};
use crate::valuefn::{ValueCone, ValueVertex};

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Scenario file: `{"gamma": .., "alpha": .., "hypotheses": [{"A","B","M"}]}`.
/// Matrices are row-major nested arrays.
#[derive(Debug, Serialize, Deserialize)]
struct ScenarioFile {
    gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    hypotheses: Vec<HypothesisFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HypothesisFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "M")]
    m: Vec<Vec<f64>>,
}

/// Cone file: `{"n": .., "m": .., "vertices": [{"S","Q"}]}`.
#[derive(Debug, Serialize, Deserialize)]
struct ConeFile {
    n: usize,
    m: usize,
    vertices: Vec<VertexFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VertexFile {
    #[serde(rename = "S")]
    s: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), message: message.into() }
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> std::result::Result<DMatrix<f64>, String> {
    if rows.is_empty() {
        return Err(format!("{what}: matrix has no rows"));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(format!("{what}: rows must be non-empty and of equal length"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Writes `contents` to `path` atomically: a temp file in the same
/// directory, then a rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Reads and validates a scenario file. Returns the scenario set and the
/// optional declared class parameter `alpha`.
pub fn read_scenario(path: &Path) -> Result<(ScenarioSet, Option<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let file: ScenarioFile =
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;
    if file.hypotheses.is_empty() {
        return Err(parse_err(path, "scenario file lists no hypotheses"));
    }
    let mut hyps = Vec::with_capacity(file.hypotheses.len());
    for (i, h) in file.hypotheses.iter().enumerate() {
        let build = || -> std::result::Result<Hypothesis, String> {
            let a = to_matrix(&h.a, "A")?;
            let b = to_matrix(&h.b, "B")?;
            let m = to_matrix(&h.m, "M")?;
            Hypothesis::new(a, b, m).map_err(|e| e.to_string())
        };
        hyps.push(build().map_err(|msg| parse_err(path, format!("hypothesis {i}: {msg}")))?);
    }
    let scenarios = ScenarioSet::new(hyps, file.gamma)
        .map_err(|e| parse_err(path, format!("invalid scenario set: {e}")))?;
    Ok((scenarios, file.alpha))
}

/// Writes a scenario set in the scenario-file schema.
pub fn write_scenario(path: &Path, scenarios: &ScenarioSet, alpha: Option<f64>) -> Result<()> {
    let file = ScenarioFile {
        gamma: scenarios.gamma(),
        alpha,
        hypotheses: scenarios
            .hypotheses()
            .iter()
            .map(|h| HypothesisFile {
                a: from_matrix(h.a()),
                b: from_matrix(h.b()),
                m: from_matrix(h.m()),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&file).expect("scenario serialization");
    write_atomic(path, &(json + "\n"))
}

/// Writes a value cone in the cone-file schema.
pub fn write_cone(path: &Path, cone: &ValueCone) -> Result<()> {
    let file = ConeFile {
        n: cone.state_dim(),
        m: cone.input_dim(),
        vertices: cone
            .vertices()
            .iter()
            .map(|v| VertexFile { s: from_matrix(v.s()), q: from_matrix(v.q()) })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&file).expect("cone serialization");
    write_atomic(path, &(json + "\n"))
}

/// Reads a value cone from the cone-file schema. The scenario S-matrices
/// are recovered from the witness (zero-Q) vertices.
pub fn read_cone(path: &Path) -> Result<ValueCone> {
    let text = std::fs::read_to_string(path)?;
    let file: ConeFile =
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;
    let mut vertices = Vec::with_capacity(file.vertices.len());
    for (i, v) in file.vertices.iter().enumerate() {
        let build = || -> std::result::Result<ValueVertex, String> {
            let s = to_matrix(&v.s, "S")?;
            let q = to_matrix(&v.q, "Q")?;
            ValueVertex::new(s, q, file.n, file.m).map_err(|e| e.to_string())
        };
        vertices.push(build().map_err(|msg| parse_err(path, format!("vertex {i}: {msg}")))?);
    }
    ValueCone::from_vertex_list(vertices, file.n, file.m)
        .map_err(|e| parse_err(path, e.to_string()))
}

/// Renders a trace as CSV: `t`, state, decision, disturbance, then
/// per-hypothesis stage and cumulative costs, the cumulative disturbance
/// energy, and the running cost/energy ratio of the true hypothesis.
pub fn trace_csv(trace: &Trace) -> String {
    let n = trace.xs.first().map_or(0, |x| x.len());
    let m = trace.us.first().map_or(0, |u| u.len());
    let k = trace.stage_costs.first().map_or(0, Vec::len);
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    header.extend((0..n).map(|i| format!("w{i}")));
    header.extend((0..k).map(|i| format!("stage_cost_{i}")));
    header.extend((0..k).map(|i| format!("cum_cost_{i}")));
    header.push("cum_wnorm".into());
    header.push("ratio".into());
    let mut out = header.join(",") + "\n";
    for t in 0..trace.horizon() {
        let mut row: Vec<String> = vec![t.to_string()];
        row.extend(trace.xs[t].iter().map(f64::to_string));
        row.extend(trace.us[t].iter().map(f64::to_string));
        row.extend(trace.ws[t].iter().map(f64::to_string));
        row.extend(trace.stage_costs[t].iter().map(f64::to_string));
        row.extend((0..k).map(|i| trace.cum_cost(i, t + 1).to_string()));
        let wn = trace.cum_wnorm(t + 1);
        row.push(wn.to_string());
        let cost = trace.cum_cost(trace.truth, t + 1);
        let ratio = if wn > 0.0 { cost / wn } else { 0.0 };
        row.push(ratio.to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes a trace CSV atomically.
pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    write_atomic(path, &trace_csv(trace))
}

// ---------------------------------------------------------------------------
// Command grammar
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "macs",
    version,
    about = "Minimax adaptive control: synthesize, certify and simulate value-cone controllers"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyKind {
    Zero,
    Constant,
    IidSeeded,
    ModelConfusion,
    AdversarialAscent,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Write the closed-form value cone (and optionally the scenario file)
    /// for the solvable scalar class at parameter alpha.
    DemoExample {
        #[arg(long, default_value_t = 0.75)]
        alpha: f64,
        /// Cone JSON output path.
        #[arg(long)]
        out: PathBuf,
        /// Optional scenario JSON output path.
        #[arg(long)]
        scenario_out: Option<PathBuf>,
    },
    /// Grow a value cone for a scenario file by the expanding recursion.
    Synthesize {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 3)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 50)]
        max_vertices: usize,
        /// Cone JSON output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the one-step descent inequality of a cone on random samples.
    Certify {
        #[arg(long)]
        cone: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Optional report JSON output path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Roll out the adaptive controller against a disturbance strategy.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        cone: PathBuf,
        /// Index of the true hypothesis.
        #[arg(long, default_value_t = 0)]
        truth: usize,
        #[arg(long, value_enum, default_value_t = StrategyKind::IidSeeded)]
        strategy: StrategyKind,
        /// Disturbance magnitude cap (and the constant strategy's level).
        #[arg(long, default_value_t = 1.0)]
        cap: f64,
        /// Decoy hypothesis index for the model-confusion strategy.
        #[arg(long, default_value_t = 0)]
        decoy: usize,
        /// Ascent passes for the adversarial-ascent strategy.
        #[arg(long, default_value_t = 8)]
        passes: usize,
        /// Disturbance seed (iid and ascent strategies).
        #[arg(long, default_value_t = 1)]
        dist_seed: u64,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
        /// Controller randomization seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Collapse decisions to their mean (ablation; voids the guarantee).
        #[arg(long)]
        deterministic: bool,
        /// Optional trace CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the discretized finite-horizon game value for a scenario.
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 2)]
        horizon: usize,
        #[arg(long, default_value_t = 21)]
        u_atoms: usize,
        #[arg(long, default_value_t = 21)]
        w_atoms: usize,
        /// Restrict the minimizer to pure decisions (sharper feasibility probe).
        #[arg(long)]
        pure: bool,
        /// Optional cone whose controller payoff is evaluated on the same grid.
        #[arg(long)]
        cone: Option<PathBuf>,
        /// Optional report JSON output path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sweep static feedback gains u = -k x and report worst empirical gains.
    GainSweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = -1.0)]
        k_min: f64,
        #[arg(long, default_value_t = 1.0)]
        k_max: f64,
        #[arg(long, default_value_t = 0.125)]
        k_step: f64,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
        #[arg(long, default_value_t = 1.0)]
        cap: f64,
        /// Disturbance seed for the iid strategy.
        #[arg(long, default_value_t = 1)]
        dist_seed: u64,
        /// Optional CSV output path (columns k, gain).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct CertifyReport {
    certified: bool,
    samples_checked: usize,
    max_residual: f64,
    min_residual: f64,
    tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    worst_point: Option<WorstPointReport>,
}

#[derive(Debug, Serialize)]
struct WorstPointReport {
    z: Vec<Vec<f64>>,
    x: Vec<f64>,
    u: Vec<f64>,
    zeta: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct SimulateReport {
    strategy: String,
    truth: usize,
    horizon: usize,
    seed: u64,
    certified_mode: bool,
    gain: f64,
    gain_bound: f64,
    cum_cost: f64,
    cum_wnorm: f64,
}

#[derive(Debug, Serialize)]
struct OracleReport {
    horizon: usize,
    u_atoms: usize,
    w_atoms: usize,
    pure_decisions: bool,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    controller_payoff: Option<f64>,
}

#[derive(Debug, Serialize)]
struct GainSweepReport {
    horizon: usize,
    best_k: f64,
    best_gain: f64,
    points: Vec<(f64, f64)>,
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// Applies the `MACS_THREADS` cap to the global worker pool, once.
fn init_threads() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        if let Ok(v) = std::env::var("MACS_THREADS") {
            if let Ok(k) = v.parse::<usize>() {
                if k >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
                }
            }
        }
    });
}

/// Parses an argument vector (including the program name) and runs the
/// selected subcommand. Returns the process exit code: 0 success, 1 usage
/// or input error, 2 certification failed, 3 infeasible or diverged.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_threads();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::ExpansionDiverged(_)
                | Error::DegenerateGain(_)
                | Error::Unbounded { .. } => 3,
                _ => 1,
            }
        }
    }
}

fn print_report<R: Serialize>(report: &R, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serialization");
    println!("{json}");
    if let Some(path) = out {
        write_atomic(path, &(json.clone() + "\n"))?;
    }
    Ok(())
}

fn build_strategy(
    kind: StrategyKind,
    cap: f64,
    decoy: usize,
    passes: usize,
    dist_seed: u64,
    n_hyps: usize,
) -> Result<DisturbanceStrategy> {
    if !(cap >= 0.0) {
        return Err(Error::Config("cap must be nonnegative".into()));
    }
    Ok(match kind {
        StrategyKind::Zero => DisturbanceStrategy::Zero,
        StrategyKind::Constant => DisturbanceStrategy::Constant { level: cap },
        StrategyKind::IidSeeded => DisturbanceStrategy::IidSeeded { seed: dist_seed, cap },
        StrategyKind::ModelConfusion => {
            if decoy >= n_hyps {
                return Err(Error::Config(format!(
                    "decoy index {decoy} out of range for {n_hyps} hypotheses"
                )));
            }
            DisturbanceStrategy::ModelConfusion { decoy, cap }
        }
        StrategyKind::AdversarialAscent => {
            DisturbanceStrategy::AdversarialAscent { passes, cap, seed: dist_seed }
        }
    })
}

fn run(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::DemoExample { alpha, out, scenario_out } => {
            let spec = ModelClassSpec::new(alpha)?;
            let model = Hypothesis::scalar(alpha, 1.0, 0.5);
            let cone = build_example_cone(&[model.clone()], &spec)?;
            write_cone(&out, &cone)?;
            if let Some(sp) = scenario_out {
                let scenarios = ScenarioSet::new(
                    vec![model.clone(), model.flip_input_sign()],
                    spec.gamma_alpha(),
                )?;
                write_scenario(&sp, &scenarios, Some(alpha))?;
            }
            println!(
                "wrote cone with {} vertices (alpha = {alpha}, gamma = {})",
                cone.vertices().len(),
                spec.gamma_alpha()
            );
            Ok(0)
        }
        Cmd::Synthesize { scenario, samples, seed, tol, max_vertices, out } => {
            let (scenarios, _) = read_scenario(&scenario)?;
            let sampler = SampleConfig::new(samples, seed);
            let (cone, trace) = expand_cone(&scenarios, &sampler, tol, max_vertices)?;
            write_cone(&out, &cone)?;
            println!(
                "converged: {} vertices after {} expansion steps",
                cone.vertices().len(),
                trace.iterations.len()
            );
            Ok(0)
        }
        Cmd::Certify { cone, samples, seed, tol, report } => {
            let cone = read_cone(&cone)?;
            let result = certify(&cone, &SampleConfig::new(samples, seed), tol)?;
            let out = CertifyReport {
                certified: result.certified,
                samples_checked: result.samples_checked,
                max_residual: result.max_residual,
                min_residual: result.min_residual,
                tol,
                worst_point: result.worst_point.as_ref().map(|wp| WorstPointReport {
                    z: from_matrix(&wp.z),
                    x: wp.x.iter().copied().collect(),
                    u: wp.u.iter().copied().collect(),
                    zeta: wp.zeta.iter().copied().collect(),
                }),
            };
            print_report(&out, report.as_deref())?;
            Ok(if result.certified { 0 } else { 2 })
        }
        Cmd::Simulate {
            scenario,
            cone,
            truth,
            strategy,
            cap,
            decoy,
            passes,
            dist_seed,
            horizon,
            seed,
            deterministic,
            out,
        } => {
            let (scenarios, _) = read_scenario(&scenario)?;
            let cone = read_cone(&cone)?;
            if cone.state_dim() != scenarios.state_dim()
                || cone.input_dim() != scenarios.input_dim()
            {
                return Err(Error::Shape(
                    "cone and scenario dimensions do not match".into(),
                ));
            }
            let strat = build_strategy(
                strategy,
                cap,
                decoy,
                passes,
                dist_seed,
                scenarios.hypotheses().len(),
            )?;
            let mode =
                if deterministic { DecisionMode::Deterministic } else { DecisionMode::Randomized };
            let trace = rollout(&scenarios, &cone, truth, &strat, mode, horizon, seed)?;
            if trace.xs.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
                eprintln!("state diverged to a non-finite value");
                return Ok(3);
            }
            if let Some(path) = &out {
                write_trace(path, &trace)?;
            }
            let report = SimulateReport {
                strategy: strat.name().into(),
                truth,
                horizon,
                seed,
                certified_mode: mode == DecisionMode::Randomized,
                gain: empirical_gain(std::slice::from_ref(&trace), truth)?,
                gain_bound: scenarios.gamma() * scenarios.gamma(),
                cum_cost: trace.cum_cost(truth, trace.horizon()),
                cum_wnorm: trace.cum_wnorm(trace.horizon()),
            };
            print_report(&report, None)?;
            Ok(0)
        }
        Cmd::Oracle { scenario, horizon, u_atoms, w_atoms, pure, cone, report } => {
            let (scenarios, _) = read_scenario(&scenario)?;
            let grids = OracleGrids {
                u_atoms,
                w_atoms,
                pure_decisions: pure,
                ..OracleGrids::default()
            };
            let value = exact_game_value(&scenarios, horizon, &grids)?;
            let controller_payoff = match &cone {
                Some(path) => {
                    let cone = read_cone(path)?;
                    Some(controller_discretized_payoff(&scenarios, &cone, horizon, &grids)?)
                }
                None => None,
            };
            let out = OracleReport {
                horizon,
                u_atoms,
                w_atoms,
                pure_decisions: pure,
                value,
                controller_payoff,
            };
            print_report(&out, report.as_deref())?;
            Ok(if value <= 1e-9 { 0 } else { 3 })
        }
        Cmd::GainSweep { scenario, k_min, k_max, k_step, horizon, cap, dist_seed, out } => {
            let (scenarios, _) = read_scenario(&scenario)?;
            if !(k_step > 0.0 && k_max >= k_min) {
                return Err(Error::Config("need k_step > 0 and k_max >= k_min".into()));
            }
            let mut ks = Vec::new();
            let mut k = k_min;
            while k <= k_max + 1e-12 {
                ks.push(k);
                k += k_step;
            }
            let mut strategies = vec![
                DisturbanceStrategy::Constant { level: cap },
                DisturbanceStrategy::IidSeeded { seed: dist_seed, cap },
            ];
            for decoy in 0..scenarios.hypotheses().len() {
                strategies.push(DisturbanceStrategy::ModelConfusion { decoy, cap });
            }
            let points = gain_sweep(&scenarios, &ks, &strategies, horizon)?;
            let (best_k, best_gain) = points
                .iter()
                .copied()
                .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite gains"))
                .expect("nonempty sweep");
            if let Some(path) = &out {
                let mut csv = String::from("k,gain\n");
                for (k, g) in &points {
                    csv.push_str(&format!("{k},{g}\n"));
                }
                write_atomic(path, &csv)?;
            }
            let report = GainSweepReport { horizon, best_k, best_gain, points };
            print_report(&report, None)?;
            Ok(0)
        }
    }
}
