//! Experiment runner: TOML configuration, subcommand dispatch and
//! deterministic artifact writing.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gibbs_core::dominating::boundary_points;
use gibbs_core::geometry::{MarkedPoint, OrderScheme, PointPattern, Window};
use gibbs_core::graphs::{diameter_tail, GraphKind};
use gibbs_core::model::{InteractionModel, MarkLaw, ReferenceMeasure};
use gibbs_core::partition::{EstimatorMode, RatioEstimator};
use gibbs_core::prf::replication_seed;
use gibbs_core::scores::{all_scores, stabilization_radius, RadiusSpec, ScoreKind, ScoreSpec};
use gibbs_core::stats::{
    clt_experiment, gnz_residuals, poisson_approx_experiment, tail_slope, CltPlan, GnzPlan, PoissonPlan, TestFunction,
};
use gibbs_core::thinning::{boundary_difference, coupled_pair, nested_window_sample, Algorithm, Prepared, Simulator};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] gibbs_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            _ => 1,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Couple,
    Percolation,
    Clt,
    PoissonApprox,
    Gnz,
    Nested,
    Scores,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Simulate,
        Command::Couple,
        Command::Percolation,
        Command::Clt,
        Command::PoissonApprox,
        Command::Gnz,
        Command::Nested,
        Command::Scores,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Couple => "couple",
            Command::Percolation => "percolation",
            Command::Clt => "clt",
            Command::PoissonApprox => "poisson-approx",
            Command::Gnz => "gnz",
            Command::Nested => "nested",
            Command::Scores => "scores",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelBlock {
    pub family: String,
    pub gamma: Option<f64>,
    pub radius: Option<f64>,
    pub beta: Option<f64>,
    pub scale: Option<f64>,
    pub range: Option<f64>,
    pub rule: Option<String>,
    pub saturation: Option<u32>,
}

fn need(v: Option<f64>, block: &str, key: &str) -> Result<f64, CliError> {
    v.ok_or_else(|| invalid(format!("{block}.{key} is required")))
}

impl ModelBlock {
    pub fn build(&self) -> Result<InteractionModel, CliError> {
        let m = match self.family.as_str() {
            "poisson" => Ok(InteractionModel::Poisson),
            "strauss" => InteractionModel::strauss(need(self.gamma, "model", "gamma")?, need(self.radius, "model", "radius")?),
            "hard_sphere" => InteractionModel::hard_sphere(need(self.radius, "model", "radius")?),
            "soft_pair" => InteractionModel::soft_pair(need(self.beta, "model", "beta")?, need(self.scale, "model", "scale")?),
            "local_relation" => match self.rule.as_deref() {
                Some("saturation") => InteractionModel::saturation(
                    need(self.gamma, "model", "gamma")?,
                    self.saturation.ok_or_else(|| invalid("model.saturation is required"))?,
                    need(self.range, "model", "range")?,
                ),
                Some("germ_grain") => InteractionModel::germ_grain(need(self.range, "model", "range")?),
                other => return Err(invalid(format!("unknown local relation rule {other:?}"))),
            },
            other => return Err(invalid(format!("unknown model family {other:?}"))),
        };
        m.map_err(|e| invalid(e.to_string()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBlock {
    pub alpha: f64,
    pub mark_law: Option<String>,
    pub mark_max: Option<f64>,
    pub mark_rate: Option<f64>,
}

impl ReferenceBlock {
    pub fn build(&self) -> Result<ReferenceMeasure, CliError> {
        let law = match self.mark_law.as_deref().unwrap_or("none") {
            "none" => MarkLaw::None,
            "uniform" => MarkLaw::Uniform { max: need(self.mark_max, "reference", "mark_max")? },
            "exponential" => MarkLaw::Exponential { rate: need(self.mark_rate, "reference", "mark_rate")? },
            other => return Err(invalid(format!("unknown mark law {other:?}"))),
        };
        ReferenceMeasure::new(self.alpha, law).map_err(|e| invalid(e.to_string()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowBlock {
    pub side: Option<f64>,
    pub dim: Option<usize>,
    pub center: Option<Vec<f64>>,
    pub sides: Option<Vec<f64>>,
}

impl WindowBlock {
    pub fn build(&self) -> Result<Window, CliError> {
        let sides = match (&self.sides, self.side) {
            (Some(s), None) => s.clone(),
            (None, Some(s)) => vec![s; self.dim.unwrap_or(2)],
            _ => return Err(invalid("window needs exactly one of `side` or `sides`")),
        };
        let center = self.center.clone().unwrap_or_else(|| vec![0.0; sides.len()]);
        Window::new(center, sides).map_err(|e| invalid(e.to_string()))
    }
}

fn default_cell_side() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorBlock {
    #[serde(default = "default_mode")]
    pub mode: EstimatorMode,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_integral")]
    pub integral_samples: usize,
    #[serde(default = "default_tail")]
    pub tail_tolerance: f64,
    pub local_radius: Option<f64>,
}

fn default_mode() -> EstimatorMode {
    EstimatorMode::CommonRandomNumbersMc
}
fn default_mc() -> usize {
    RatioEstimator::default().mc_samples
}
fn default_n_max() -> usize {
    RatioEstimator::default().n_max
}
fn default_integral() -> usize {
    RatioEstimator::default().integral_samples
}
fn default_tail() -> f64 {
    RatioEstimator::default().tail_tolerance
}

impl Default for EstimatorBlock {
    fn default() -> Self {
        EstimatorBlock {
            mode: default_mode(),
            mc_samples: default_mc(),
            n_max: default_n_max(),
            integral_samples: default_integral(),
            tail_tolerance: default_tail(),
            local_radius: None,
        }
    }
}

impl EstimatorBlock {
    pub fn build(&self) -> Result<RatioEstimator, CliError> {
        let est = RatioEstimator {
            mode: self.mode,
            mc_samples: self.mc_samples,
            n_max: self.n_max,
            integral_samples: self.integral_samples,
            tail_tolerance: self.tail_tolerance,
            local_radius: self.local_radius,
        };
        est.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(est)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmBlock {
    #[serde(default = "default_algorithm")]
    pub kind: Algorithm,
    #[serde(default = "default_order")]
    pub order: OrderScheme,
    #[serde(default = "default_cell_side")]
    pub cell_side: f64,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Standard
}
fn default_order() -> OrderScheme {
    OrderScheme::Raster
}

impl Default for AlgorithmBlock {
    fn default() -> Self {
        AlgorithmBlock {
            kind: default_algorithm(),
            order: default_order(),
            cell_side: default_cell_side(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryBlock {
    #[serde(default)]
    pub psi: Vec<Vec<f64>>,
    #[serde(default)]
    pub psi_marks: Vec<f64>,
    #[serde(default)]
    pub psi_prime: Vec<Vec<f64>>,
    #[serde(default)]
    pub psi_prime_marks: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestBlock {
    pub kind: String,
    pub r: Option<f64>,
}

impl TestBlock {
    fn build(&self) -> Result<TestFunction, CliError> {
        Ok(match self.kind.as_str() {
            "constant" => TestFunction::Constant,
            "void" => TestFunction::Void { r: need(self.r, "experiment.tests", "r")? },
            "neighbor_count" => TestFunction::NeighborCount { r: need(self.r, "experiment.tests", "r")? },
            "has_neighbor" => TestFunction::HasNeighbor { r: need(self.r, "experiment.tests", "r")? },
            other => return Err(invalid(format!("unknown test function {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentBlock {
    #[serde(default = "default_graph")]
    pub graph: GraphKind,
    #[serde(default)]
    pub r_grid: Vec<f64>,
    #[serde(default)]
    pub sides: Vec<f64>,
    #[serde(default = "default_buffer")]
    pub buffer: f64,
    #[serde(default = "default_cells")]
    pub cells: usize,
    #[serde(default = "default_points_per_draw")]
    pub points_per_draw: usize,
    #[serde(default)]
    pub tests: Vec<TestBlock>,
    pub inner_side: Option<f64>,
    pub outer_side: Option<f64>,
    pub probe_side: Option<f64>,
}

fn default_graph() -> GraphKind {
    GraphKind::Rcm
}
fn default_buffer() -> f64 {
    1.0
}
fn default_cells() -> usize {
    4
}
fn default_points_per_draw() -> usize {
    16
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        ExperimentBlock {
            graph: default_graph(),
            r_grid: Vec::new(),
            sides: Vec::new(),
            buffer: default_buffer(),
            cells: default_cells(),
            points_per_draw: default_points_per_draw(),
            tests: Vec::new(),
            inner_side: None,
            outer_side: None,
            probe_side: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreBlock {
    pub kind: String,
    pub k: Option<usize>,
    pub u: Option<f64>,
    pub beta2: Option<f64>,
}

impl ScoreBlock {
    pub fn build(&self) -> Result<ScoreKind, CliError> {
        Ok(match self.kind.as_str() {
            "isolated" => ScoreKind::Isolated {
                radius: match (self.u, self.beta2) {
                    (Some(u), None) => RadiusSpec::Fixed { u },
                    (None, b) => RadiusSpec::Calibrated { beta2: b.unwrap_or(1.0) },
                    _ => return Err(invalid("scores: give either `u` or `beta2`")),
                },
            },
            "knn_length" => ScoreKind::KnnLength { k: self.k.ok_or_else(|| invalid("scores.k is required"))? },
            "gilbert_edges" => ScoreKind::GilbertEdges,
            "count" => ScoreKind::Count,
            other => return Err(invalid(format!("unknown score kind {other:?}"))),
        })
    }
}

/// The whole configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub model: ModelBlock,
    pub reference: ReferenceBlock,
    pub window: WindowBlock,
    #[serde(default)]
    pub algorithm: AlgorithmBlock,
    #[serde(default)]
    pub partition: EstimatorBlock,
    #[serde(default)]
    pub boundary: BoundaryBlock,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    pub scores: Option<ScoreBlock>,
}

impl ExperimentConfig {
    /// Parse TOML text; any key the schema does not know is an error.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| invalid(e.to_string()))?;
        let mut unknown = Vec::new();
        let cfg: ExperimentConfig =
            serde_ignored::deserialize(de, |path| unknown.push(path.to_string())).map_err(|e| invalid(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(invalid(format!("unknown keys: {}", unknown.join(", "))));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub trace: bool,
    pub gate: bool,
}

/// A configuration with every block checked and built.
pub struct Resolved {
    pub seed: u64,
    pub reps: usize,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub trace: bool,
    pub model: InteractionModel,
    pub reference: ReferenceMeasure,
    pub window: Window,
    pub algorithm: Algorithm,
    pub order: OrderScheme,
    pub cell_side: f64,
    pub estimator: RatioEstimator,
    pub psi: Vec<MarkedPoint>,
    pub psi_prime: Vec<MarkedPoint>,
    pub experiment: ExperimentBlock,
    pub scores: Option<ScoreKind>,
}

const PSI_TAG: u64 = 0x7073_69;
const PSI_PRIME_TAG: u64 = 0x7073_6970;

fn build_boundary(seed: u64, positions: &[Vec<f64>], marks: &[f64], dim: usize, what: &str) -> Result<Vec<MarkedPoint>, CliError> {
    if positions.iter().any(|p| p.len() != dim) {
        return Err(invalid(format!("{what} points must have {dim} coordinates")));
    }
    if !marks.is_empty() && marks.len() != positions.len() {
        return Err(invalid(format!("{what}_marks must match the number of {what} points")));
    }
    let marks: Vec<Option<f64>> = marks.iter().map(|&m| Some(m)).collect();
    Ok(boundary_points(seed, positions, &marks))
}

impl Resolved {
    pub fn new(cfg: &ExperimentConfig, ov: &Overrides) -> Result<Self, CliError> {
        let seed = ov.seed.or(cfg.seed).ok_or_else(|| invalid("a seed is required"))?;
        let window = cfg.window.build()?;
        let dim = window.dim();
        let cell_side = cfg.algorithm.cell_side;
        if !(cell_side > 0.0 && cell_side.is_finite()) {
            return Err(invalid("algorithm.cell_side must be positive"));
        }
        let b = &cfg.boundary;
        let psi = build_boundary(PSI_TAG, &b.psi, &b.psi_marks, dim, "psi")?;
        let psi_prime = build_boundary(PSI_PRIME_TAG, &b.psi_prime, &b.psi_prime_marks, dim, "psi_prime")?;
        for p in psi.iter().chain(&psi_prime) {
            if window.contains(&p.position) {
                return Err(invalid("boundary points must lie outside the window"));
            }
        }
        let reps = ov.reps.or(cfg.reps).unwrap_or(1);
        if reps == 0 {
            return Err(invalid("reps must be positive"));
        }
        Ok(Resolved {
            seed,
            reps,
            threads: ov.threads.or(cfg.threads),
            out: ov.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
            trace: ov.trace,
            model: cfg.model.build()?,
            reference: cfg.reference.build()?,
            window,
            algorithm: cfg.algorithm.kind,
            order: cfg.algorithm.order,
            cell_side,
            estimator: cfg.partition.build()?,
            psi,
            psi_prime,
            experiment: cfg.experiment.clone(),
            scores: cfg.scores.as_ref().map(|s| s.build()).transpose()?,
        })
    }

    fn simulator(&self) -> Simulator {
        let mut sim = Simulator::new(self.model.clone(), self.reference.clone(), self.algorithm, self.estimator.clone());
        sim.cell_side = self.cell_side;
        sim.scheme = self.order;
        sim.psi = self.psi.clone();
        sim
    }

    fn rep_seeds(&self) -> Vec<u64> {
        (0..self.reps as u64).map(|r| replication_seed(self.seed, r)).collect()
    }
}

/// What a run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub gate_passed: bool,
    pub summary: serde_json::Value,
}

/// Writes through a temporary file and a rename.
struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Writer { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        self.written.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
        text.push('\n');
        self.put(name, text.as_bytes())
    }
}

fn pattern_csv(p: &PointPattern) -> Vec<u8> {
    let mut buf = Vec::new();
    p.write_csv(&mut buf).expect("writing to memory");
    buf
}

/// Run a subcommand from a configuration file.
pub fn run(cmd: Command, config: &Path, ov: &Overrides) -> Result<Outcome, CliError> {
    run_config(cmd, &ExperimentConfig::load(config)?, ov)
}

/// Run a subcommand on a parsed configuration.
pub fn run_config(cmd: Command, cfg: &ExperimentConfig, ov: &Overrides) -> Result<Outcome, CliError> {
    let r = Resolved::new(cfg, ov)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = r.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| invalid(e.to_string()))?;
    pool.install(|| {
        let mut w = Writer::new(&r.out)?;
        let (gate_passed, summary) = match cmd {
            Command::Simulate => simulate(&r, &mut w)?,
            Command::Couple => couple(&r, &mut w)?,
            Command::Percolation => percolation(&r, &mut w)?,
            Command::Clt => clt(&r, &mut w)?,
            Command::PoissonApprox => poisson(&r, &mut w)?,
            Command::Gnz => gnz(&r, &mut w)?,
            Command::Nested => nested(&r, &mut w)?,
            Command::Scores => scores(&r, &mut w)?,
        };
        let mut summary = summary;
        summary["subcommand"] = json!(cmd.name());
        summary["seed"] = json!(r.seed);
        summary["gate_passed"] = json!(gate_passed);
        w.json("summary.json", &summary)?;
        Ok(Outcome { artifacts: w.written, gate_passed, summary })
    })
}

type Step = Result<(bool, serde_json::Value), CliError>;

fn simulate(r: &Resolved, w: &mut Writer) -> Step {
    let sim = r.simulator();
    let runs = r
        .rep_seeds()
        .par_iter()
        .map(|&s| sim.run(&r.window, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut kept = Vec::new();
    let mut dominating = Vec::new();
    for (i, res) in runs.iter().enumerate() {
        w.put(&format!("pattern_{i:04}.csv"), &pattern_csv(&res.kept))?;
        if r.trace {
            let log = serde_json::to_value(&res.decisions).expect("decisions serialize");
            w.json(&format!("decisions_{i:04}.json"), &log)?;
        }
        kept.push(res.kept.len());
        dominating.push(res.decisions.len());
    }
    Ok((true, json!({ "reps": r.reps, "kept": kept, "dominating": dominating })))
}

fn couple(r: &Resolved, w: &mut Writer) -> Step {
    if !matches!(r.algorithm, Algorithm::Cluster | Algorithm::RcmCluster) {
        return Err(invalid("couple needs algorithm.kind = \"cluster\" or \"rcm_cluster\""));
    }
    let coupling = boundary_difference(&r.psi, &r.psi_prime);
    let seeds = r.rep_seeds();
    let rows = seeds
        .par_iter()
        .map(|&s| -> Result<_, CliError> {
            let p = Prepared::new(&r.window, &r.reference, s, r.cell_side, r.order)?;
            let mut setup = p.setup(&r.model, &r.psi, &r.estimator);
            setup.window = &r.window;
            let pair = coupled_pair(&setup, &r.psi_prime, &coupling, r.algorithm)?;
            Ok((
                pair.first.kept.len(),
                pair.second.kept.len(),
                pair.symmetric_difference().len(),
                pair.disagreement_is_contained(),
                pair.first.touched_points.len(),
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from("rep,seed,kept_first,kept_second,disagreements,contained,touched\n");
    for (i, (row, s)) in rows.iter().zip(&seeds).enumerate() {
        writeln!(csv, "{i},{s},{},{},{},{},{}", row.0, row.1, row.2, row.3, row.4).expect("string write");
    }
    w.put("couple.csv", csv.as_bytes())?;
    let n = rows.len() as f64;
    let disagree = rows.iter().filter(|x| x.2 > 0).count() as f64 / n;
    let contained = rows.iter().filter(|x| x.3).count() as f64 / n;
    Ok((contained == 1.0, json!({ "reps": r.reps, "disagreement_frequency": disagree, "containment_rate": contained })))
}

fn percolation(r: &Resolved, w: &mut Writer) -> Step {
    let grid = &r.experiment.r_grid;
    if grid.is_empty() {
        return Err(invalid("percolation needs experiment.r_grid"));
    }
    let rows = diameter_tail(&r.model, r.experiment.graph, &r.window, &r.reference, grid, r.reps, r.seed, r.cell_side)?;
    let mut csv = String::from("r,p_hat,stderr,reps\n");
    for t in &rows {
        writeln!(csv, "{},{},{},{}", t.r, t.p_hat, t.stderr, t.reps).expect("string write");
    }
    w.put("tail.csv", csv.as_bytes())?;
    let non_increasing = rows.windows(2).all(|p| p[1].p_hat <= p[0].p_hat);
    let fit = tail_slope(&rows.iter().map(|t| (t.r, t.p_hat)).collect::<Vec<_>>()).ok();
    let pass = non_increasing && fit.is_some_and(|f| f.rate > 0.0);
    Ok((pass, json!({ "reps": r.reps, "non_increasing": non_increasing, "fit": fit })))
}

/// Two numbers agree within `tol` relative to the larger one.
pub fn agree_within(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn clt(r: &Resolved, w: &mut Writer) -> Step {
    let kind = r.scores.ok_or_else(|| invalid("clt needs a [scores] block"))?;
    let plan = CltPlan { sides: r.experiment.sides.clone(), reps: r.reps, seed: r.seed, buffer: r.experiment.buffer };
    let (rows, table) = clt_experiment(&r.simulator(), kind, r.window.dim(), &plan).map_err(|e| match e {
        gibbs_core::Error::Invalid(m) => invalid(m),
        e => e.into(),
    })?;
    let mut csv = String::from("side,lambda,mean,variance,var_ratio,d_k,max_stab_radius,reps\n");
    for x in &rows {
        writeln!(csv, "{},{},{},{},{},{},{},{}", x.side, x.lambda, x.mean, x.variance, x.var_ratio, x.d_k, x.max_stab_radius, x.reps)
            .expect("string write");
    }
    w.put("clt.csv", csv.as_bytes())?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf).expect("writing to memory");
    w.put("replications.csv", &buf)?;
    let first = &rows[0];
    let last = &rows[rows.len() - 1];
    let decreasing = last.d_k < first.d_k;
    let small = last.d_k <= 0.08;
    let ratios = agree_within(first.var_ratio, last.var_ratio, 0.25);
    Ok((
        decreasing && small && ratios,
        json!({ "rows": rows, "d_k_decreasing": decreasing, "final_d_k_ok": small, "var_ratios_agree": ratios }),
    ))
}

fn poisson(r: &Resolved, w: &mut Writer) -> Step {
    let radius = match r.scores {
        Some(ScoreKind::Isolated { radius }) => radius,
        None => RadiusSpec::Calibrated { beta2: 1.0 },
        Some(_) => return Err(invalid("poisson-approx uses the isolated score")),
    };
    let plan = PoissonPlan {
        window: r.window.clone(),
        cells: r.experiment.cells,
        reps: r.reps,
        seed: r.seed,
        buffer: r.experiment.buffer,
        points_per_draw: r.experiment.points_per_draw,
    };
    let (report, table) = poisson_approx_experiment(&r.simulator(), radius, &plan).map_err(|e| match e {
        gibbs_core::Error::Invalid(m) | gibbs_core::Error::InsufficientData(m) => invalid(m),
        e => e.into(),
    })?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf).expect("writing to memory");
    w.put("replications.csv", &buf)?;
    let pass = report.total_dispersion.ci_contains(1.0) && report.max_cell_correlation <= 0.1 && report.z.abs() <= 3.0;
    Ok((pass, json!({ "report": report })))
}

fn gnz(r: &Resolved, w: &mut Writer) -> Step {
    let tests: Vec<TestFunction> = if r.experiment.tests.is_empty() {
        [0.1, 0.2, 0.3].iter().map(|&x| TestFunction::Void { r: x }).collect()
    } else {
        r.experiment.tests.iter().map(TestBlock::build).collect::<Result<_, _>>()?
    };
    let plan = GnzPlan { reps: r.reps, points_per_draw: r.experiment.points_per_draw, seed: r.seed };
    let res = gnz_residuals(&r.simulator(), &r.window, &tests, plan).map_err(|e| match e {
        gibbs_core::Error::Invalid(m) => invalid(m),
        e => e.into(),
    })?;
    let mut csv = String::from("test,lhs,lhs_se,rhs,rhs_se,z\n");
    for g in &res {
        writeln!(csv, "{},{},{},{},{},{}", g.test.label(), g.lhs, g.lhs_se, g.rhs, g.rhs_se, g.z).expect("string write");
    }
    w.put("gnz.csv", csv.as_bytes())?;
    let outside = res.iter().filter(|g| g.z.abs() > 3.0).count();
    Ok((outside <= 1, json!({ "reps": r.reps, "residuals": res, "outside_3": outside })))
}

fn nested(r: &Resolved, w: &mut Writer) -> Step {
    if !matches!(r.algorithm, Algorithm::Cluster | Algorithm::RcmCluster) {
        return Err(invalid("nested needs algorithm.kind = \"cluster\" or \"rcm_cluster\""));
    }
    let e = &r.experiment;
    let dim = r.window.dim();
    let side = |v: Option<f64>, key: &str| v.ok_or_else(|| invalid(format!("experiment.{key} is required")));
    let inner = Window::cube(side(e.inner_side, "inner_side")?, dim);
    let outer = Window::cube(side(e.outer_side, "outer_side")?, dim);
    let probe = Window::cube(side(e.probe_side, "probe_side")?, dim);
    if !inner.contains_window(&probe) || !outer.contains_window(&inner) {
        return Err(invalid("nested windows must satisfy probe ⊂ inner ⊂ outer"));
    }
    let seeds = r.rep_seeds();
    let rows = seeds
        .par_iter()
        .map(|&s| {
            nested_window_sample(&r.model, r.algorithm, &inner, &outer, &probe, &r.psi, &r.reference, &r.estimator, s, r.cell_side)
                .map(|o| (o.no_connection, o.agreement))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from("rep,seed,no_connection,agreement\n");
    for (i, (row, s)) in rows.iter().zip(&seeds).enumerate() {
        writeln!(csv, "{i},{s},{},{}", row.0, row.1).expect("string write");
    }
    w.put("nested.csv", csv.as_bytes())?;
    let free: Vec<bool> = rows.iter().filter(|x| x.0).map(|x| x.1).collect();
    let agree = if free.is_empty() { 1.0 } else { free.iter().filter(|&&a| a).count() as f64 / free.len() as f64 };
    Ok((
        agree == 1.0,
        json!({
            "reps": r.reps,
            "no_connection_frequency": free.len() as f64 / rows.len() as f64,
            "agreement_given_no_connection": agree,
        }),
    ))
}

fn scores(r: &Resolved, w: &mut Writer) -> Step {
    let kind = r.scores.ok_or_else(|| invalid("scores needs a [scores] block"))?;
    let spec = ScoreSpec { kind, window: r.window.clone() }.resolve(r.reference.alpha);
    let res = r.simulator().run(&r.window.expand(r.experiment.buffer), r.seed)?;
    let pattern = &res.kept;
    let enough = !matches!(kind, ScoreKind::KnnLength { k } if pattern.len() <= k);
    let values = if enough { all_scores(pattern, &spec.kind)? } else { vec![0.0; pattern.len()] };
    let mut csv = String::from("id,score,stab_radius\n");
    let mut total = 0.0;
    let mut count = 0usize;
    let mut max_r = 0.0f64;
    let mut seen = BTreeSet::new();
    for (p, v) in pattern.points.iter().zip(&values) {
        if !r.window.contains(&p.position) || !seen.insert(p.id) {
            continue;
        }
        let rad = if enough { stabilization_radius(&spec, pattern, p)? } else { 0.0 };
        writeln!(csv, "{},{},{}", p.id, v, rad).expect("string write");
        total += v;
        count += 1;
        max_r = max_r.max(rad);
    }
    w.put("scores.csv", csv.as_bytes())?;
    let totals = json!({ "total": total, "points": count, "max_stab_radius": max_r });
    w.json("totals.json", &totals)?;
    Ok((true, totals))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 7
reps = 3
[model]
family = "poisson"
[reference]
alpha = 20.0
[window]
side = 1.0
"#;

    #[test]
    fn unknown_keys_are_listed() {
        let text = format!("{BASE}\nfoo = 1\n[algorithm]\nkindd = \"standard\"\n");
        match ExperimentConfig::parse(&text) {
            Err(CliError::Validation(m)) => assert!(m.contains("foo") && m.contains("algorithm.kindd"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn physical_ranges_are_checked() {
        let text = BASE.replace("family = \"poisson\"", "family = \"strauss\"\ngamma = 1.5\nradius = 0.1");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert!(matches!(Resolved::new(&cfg, &Overrides::default()), Err(CliError::Validation(_))));
        let text = BASE.replace("family = \"poisson\"", "family = \"hard_sphere\"\nradius = 0.0");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert!(matches!(Resolved::new(&cfg, &Overrides::default()), Err(CliError::Validation(_))));
        let cfg = ExperimentConfig::parse(&BASE.replace("seed = 7", "")).unwrap();
        assert!(matches!(Resolved::new(&cfg, &Overrides::default()), Err(CliError::Validation(_))));
    }

    #[test]
    fn simulate_poisson_keeps_every_point() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::parse(BASE).unwrap();
        let ov = Overrides { out: Some(dir.path().to_path_buf()), trace: true, ..Default::default() };
        let out = run_config(Command::Simulate, &cfg, &ov).unwrap();
        let kept = out.summary["kept"].as_array().unwrap();
        let dom = out.summary["dominating"].as_array().unwrap();
        assert_eq!(kept, dom);
        let text = fs::read_to_string(dir.path().join("pattern_0000.csv")).unwrap();
        assert_eq!(text.lines().count() - 1, kept[0].as_u64().unwrap() as usize);
        assert!(dir.path().join("decisions_0000.json").exists());
    }

    #[test]
    fn identical_boundaries_never_disagree() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "{}\n[algorithm]\nkind = \"rcm_cluster\"\n[partition]\nmc_samples = 100\n[boundary]\npsi = [[0.7, 0.0]]\npsi_prime = [[0.7, 0.0]]\n",
            BASE.replace("family = \"poisson\"", "family = \"strauss\"\ngamma = 0.5\nradius = 0.2").replace("alpha = 20.0", "alpha = 5.0")
        );
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let ov = Overrides { out: Some(dir.path().to_path_buf()), reps: Some(5), ..Default::default() };
        let out = run_config(Command::Couple, &cfg, &ov).unwrap();
        assert_eq!(out.summary["disagreement_frequency"], json!(0.0));
        assert!(out.gate_passed);
    }
}
