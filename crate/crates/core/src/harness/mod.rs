//! Configuration-driven experiments with CSV reports and verdicts.
//!
//! Monotonicity checks compare forward increases of the tracked quantity
//! with `tol_mono`. Unless the configuration overrides it, `tol_mono` comes
//! from a rerun at half the cloud size: with `E` the Richardson estimate of
//! the fine-level error, `tol_mono = max(3E, 10⁻⁴)`.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{ExperimentConfig, ExperimentKind, Grid};

use crate::costs::{admissibility_check, CostFunction};
use crate::coupling::{lemma_gap, CoupledPair};
use crate::diffusion::{density_values, evolve_conjugate, SpectralDensity};
use crate::error::{Error, Result};
use crate::geometry::{Model, PointCloud, ScaleFlow};
use crate::lflow::{theta, LClock, QCache};
use crate::transport::{
    competitive_repair, fmt_f64, j_trajectory, project_potential, transport_solution, verify_competitive_preservation,
    wasserstein_p, DEFAULT_TOL_Z,
};

/// Floor of the monotonicity tolerance.
pub const TOL_MONO_FLOOR: f64 = 1e-4;
/// Safety factor applied to the extrapolated discretization error.
pub const TOL_MONO_FACTOR: f64 = 3.0;
/// FD slack of the lemma sweep.
pub const DEFAULT_TOL_LEMMA: f64 = 1e-6;
/// Bound on `|J_τ − J_b|`.
pub const DEFAULT_TOL_J: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// A check failed on a configuration tagged `expect_violation`.
    ExpectedViolation,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::ExpectedViolation => "EXPECTED_VIOLATION",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Fail => 1,
            _ => 0,
        }
    }

    fn from_check(passed: bool, expect_violation: bool) -> Self {
        match (passed, expect_violation) {
            (true, _) => Verdict::Pass,
            (false, true) => Verdict::ExpectedViolation,
            (false, false) => Verdict::Fail,
        }
    }
}

/// Exit code for configuration and resolution errors.
pub const EXIT_CONFIG: i32 = 2;

/// Where a tolerance came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TolSource {
    ResolutionStudy,
    ConfigOverride,
    Floor,
}

impl TolSource {
    pub fn label(self) -> &'static str {
        match self {
            TolSource::ResolutionStudy => "resolution_study",
            TolSource::ConfigOverride => "config override",
            TolSource::Floor => "floor (no resolution study)",
        }
    }
}

/// A tracked quantity on its grid, with per-point diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Extra columns, one row per grid point.
    pub diagnostics: Vec<Vec<f64>>,
    pub diagnostic_names: Vec<&'static str>,
}

/// Two-level self-convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
    /// `max_k |q_N − q_{N/2}|`.
    pub max_difference: f64,
    /// Richardson estimate of the fine-level error, assuming first-order
    /// convergence in the mesh width `h ∝ N^{−1/2}`.
    pub error_estimate: f64,
}

impl ConvergenceTable {
    fn new(n_coarse: usize, n_fine: usize, coarse: Vec<f64>, fine: Vec<f64>) -> Self {
        let max_difference = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ratio = (n_fine as f64 / n_coarse as f64).sqrt();
        let error_estimate = max_difference / (ratio - 1.0);
        Self { n_coarse, n_fine, coarse, fine, max_difference, error_estimate }
    }

    pub fn tol_mono(&self) -> f64 {
        (TOL_MONO_FACTOR * self.error_estimate).max(TOL_MONO_FLOOR)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub series: Series,
    pub convergence: Option<ConvergenceTable>,
    /// `max_k (q_{k+1} − q_k)⁺`.
    pub max_increase: f64,
    pub tol: f64,
    pub tol_source: TolSource,
}

impl MonotonicityReport {
    pub fn pass(&self) -> bool {
        self.max_increase <= self.tol
    }

    pub fn error_estimate(&self) -> Option<f64> {
        self.convergence.as_ref().map(|c| c.error_estimate)
    }
}

/// Largest forward increase of a sequence.
pub fn max_forward_increase(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaRow {
    pub tau: f64,
    pub distance: f64,
    pub gap: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub rows: Vec<LemmaRow>,
    pub cost_id: String,
    pub model: Model,
    pub tol: f64,
    pub cost_admissible: bool,
}

impl LemmaReport {
    /// Smallest gap among samples where the flow satisfies the hypothesis.
    pub fn min_gap(&self) -> f64 {
        self.rows.iter().filter(|r| r.margin >= -1e-12).map(|r| r.gap).fold(f64::INFINITY, f64::min)
    }

    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.margin >= -1e-12 && r.gap < -self.tol).count()
    }

    pub fn pass(&self) -> bool {
        self.violations() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    pub preservation: crate::transport::PreservationReport,
    /// `(τ, J_τ)` with `b` last.
    pub j: Vec<(f64, f64)>,
    pub j_deviation: f64,
    pub tol_j: f64,
    pub repair_shift: f64,
    pub transport_value: f64,
}

impl DualityReport {
    pub fn pass(&self) -> bool {
        self.preservation.pass() && self.j_deviation <= self.tol_j
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentReport {
    Monotonicity(MonotonicityReport),
    Lemma(LemmaReport),
    Duality(DualityReport),
    Admissibility(crate::costs::AdmissibilityReport),
}

impl ExperimentReport {
    pub fn pass(&self) -> bool {
        match self {
            ExperimentReport::Monotonicity(r) => r.pass(),
            ExperimentReport::Lemma(r) => r.pass(),
            ExperimentReport::Duality(r) => r.pass(),
            ExperimentReport::Admissibility(r) => r.pass(),
        }
    }
}

/// Outcome of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub experiment: ExperimentKind,
    pub verdict: Verdict,
    pub report: ExperimentReport,
    pub csv_path: PathBuf,
    pub verdict_path: PathBuf,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.verdict.exit_code()
    }
}

/// Runs the configured experiment and writes `<experiment>.csv` and
/// `<experiment>.verdict.txt` into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let kind = cfg.kind()?;
    let report = evaluate(cfg)?;
    let verdict = Verdict::from_check(report.pass(), cfg.expect_violation);
    fs::create_dir_all(out)?;
    let csv_path = out.join(format!("{}.csv", kind.name()));
    let verdict_path = out.join(format!("{}.verdict.txt", kind.name()));
    fs::write(&csv_path, render_csv(cfg, &report)?)?;
    fs::write(&verdict_path, render_verdict(kind, verdict, &report))?;
    if let ExperimentReport::Monotonicity(MonotonicityReport { convergence: Some(table), series, .. }) = &report {
        let path = out.join(format!("{}.convergence.csv", kind.name()));
        fs::write(path, render_convergence(&series.grid, table)?)?;
    }
    Ok(RunOutcome { experiment: kind, verdict, report, csv_path, verdict_path })
}

/// Computes the report without writing files.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let flow = cfg.flow.build()?;
    Ok(match cfg.kind()? {
        ExperimentKind::WassersteinMonotonicity
        | ExperimentKind::GeneralCostMonotonicity
        | ExperimentKind::ThetaMonotonicity => ExperimentReport::Monotonicity(monotonicity(cfg, &flow)?),
        ExperimentKind::LemmaSweep => ExperimentReport::Lemma(lemma_sweep(cfg, &flow)?),
        ExperimentKind::DualityPreservation => ExperimentReport::Duality(duality_preservation(cfg, &flow)?),
        ExperimentKind::AdmissibilityReport => ExperimentReport::Admissibility(admissibility(cfg, &flow)?),
    })
}

fn tau_grid(cfg: &ExperimentConfig, flow: &ScaleFlow) -> Result<Vec<f64>> {
    let (a, b) = flow.domain();
    let grid = cfg.resolution.tau_grid.clone().unwrap_or(Grid::range(a, b, 12)).values()?;
    for &t in &grid {
        flow.check_time(t)?;
    }
    Ok(grid)
}

fn initial_densities(cfg: &ExperimentConfig, flow: &ScaleFlow) -> Result<(SpectralDensity, SpectralDensity)> {
    let band = cfg.resolution.band(flow.model());
    let t0 = flow.domain().0;
    let mu = SpectralDensity::mixture(flow, band, t0, &cfg.density("mu")?.bumps)?;
    let nu = SpectralDensity::mixture(flow, band, t0, &cfg.density("nu")?.bumps)?;
    Ok((mu, nu))
}

fn check_hypothesis(cfg: &ExperimentConfig, flow: &ScaleFlow, grid: &[f64]) -> Result<()> {
    if cfg.expect_violation {
        return Ok(());
    }
    flow.clone().require_super_ricci(grid).map(|_| ())
}

/// The tracked quantity at cloud size `n`.
pub fn tracked_series(cfg: &ExperimentConfig, flow: &ScaleFlow, n: usize) -> Result<Series> {
    let kind = cfg.kind()?;
    let cloud = PointCloud::with_size(flow.model(), n, cfg.resolution.n_phi)?;
    let (mu0, nu0) = initial_densities(cfg, flow)?;
    match kind {
        ExperimentKind::WassersteinMonotonicity | ExperimentKind::GeneralCostMonotonicity => {
            let grid = tau_grid(cfg, flow)?;
            let cost = cfg.cost_function()?;
            let p = cfg.cost.p;
            let rows: Result<Vec<(f64, Vec<f64>)>> = grid
                .par_iter()
                .map(|&tau| {
                    let mu = density_values(&evolve_conjugate(flow, &mu0, tau)?, &cloud, flow, tau)?;
                    let nu = density_values(&evolve_conjugate(flow, &nu0, tau)?, &cloud, flow, tau)?;
                    let value = if kind == ExperimentKind::WassersteinMonotonicity {
                        (flow.k() * tau).exp() * wasserstein_p(flow, tau, &mu, &nu, p)?
                    } else {
                        transport_solution(flow, tau, &cost, &mu, &nu)?.1.value
                    };
                    Ok((value, vec![mu.mass_defect(), nu.mass_defect(), mu.clipped_mass(), nu.clipped_mass()]))
                })
                .collect();
            let (values, diagnostics) = rows?.into_iter().unzip();
            Ok(Series {
                grid,
                values,
                diagnostics,
                diagnostic_names: vec!["mass_defect_mu", "mass_defect_nu", "clipped_mu", "clipped_nu"],
            })
        }
        ExperimentKind::ThetaMonotonicity => {
            let grid = cfg.resolution.s_grid.clone().unwrap_or(Grid::range(0.0, 0.7, 8)).values()?;
            let [t1, t2] = cfg.theta.tau_bar;
            let clock = LClock::new(flow, t1, t2, (grid[0], grid[grid.len() - 1]))?;
            let rows: Result<Vec<(f64, Vec<f64>)>> = grid
                .par_iter()
                .map(|&s| {
                    let mut cache = QCache::new();
                    let t = theta(flow, &clock, &mu0, &nu0, &cloud, s, &mut cache)?;
                    Ok((t.theta, vec![t.tau1, t.tau2, t.v, t.dsqrt, t.gap]))
                })
                .collect();
            let (values, diagnostics) = rows?.into_iter().unzip();
            Ok(Series { grid, values, diagnostics, diagnostic_names: vec!["tau1", "tau2", "V", "dsqrt", "solver_gap"] })
        }
        other => Err(Error::Config(format!("{} does not track a monotone quantity", other.name()))),
    }
}

/// Reruns at `N/2` and `N` and tabulates the difference.
pub fn resolution_study(cfg: &ExperimentConfig, flow: &ScaleFlow) -> Result<(Series, ConvergenceTable)> {
    let n = cfg.resolution.n;
    let n_coarse = (n / 2).max(1);
    let fine = tracked_series(cfg, flow, n)?;
    let coarse = tracked_series(cfg, flow, n_coarse)?;
    // cloud sizes actually realized by the layouts
    let realized = |k: usize| PointCloud::with_size(flow.model(), k, cfg.resolution.n_phi).map(|c| c.len());
    let table = ConvergenceTable::new(realized(n_coarse)?, realized(n)?, coarse.values, fine.values.clone());
    Ok((fine, table))
}

fn monotonicity(cfg: &ExperimentConfig, flow: &ScaleFlow) -> Result<MonotonicityReport> {
    match cfg.kind()? {
        ExperimentKind::ThetaMonotonicity => {
            if !flow.is_backward_ricci() {
                return Err(Error::NotRicciFlow);
            }
        }
        _ => check_hypothesis(cfg, flow, &tau_grid(cfg, flow)?)?,
    }
    if cfg.resolution.n > crate::transport::EXACT_LIMIT {
        return Err(Error::Config(format!(
            "cloud size {} exceeds the exact-solver limit {}",
            cfg.resolution.n,
            crate::transport::EXACT_LIMIT
        )));
    }
    let (series, convergence) = if cfg.resolution.study && cfg.tolerance.mono.is_none() {
        let (s, t) = resolution_study(cfg, flow)?;
        (s, Some(t))
    } else {
        (tracked_series(cfg, flow, cfg.resolution.n)?, None)
    };
    let (tol, tol_source) = match (cfg.tolerance.mono, &convergence) {
        (Some(t), _) => (t, TolSource::ConfigOverride),
        (None, Some(c)) => (c.tol_mono(), TolSource::ResolutionStudy),
        (None, None) => (TOL_MONO_FLOOR, TolSource::Floor),
    };
    let max_increase = max_forward_increase(&series.values);
    Ok(MonotonicityReport { series, convergence, max_increase, tol, tol_source })
}

/// Random pairs and times for the lemma sweep; deterministic in the seed.
pub fn lemma_samples(flow: &ScaleFlow, pairs: usize, min_distance: f64, seed: u64) -> Result<Vec<CoupledPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = flow.domain();
    (0..pairs)
        .map(|_| {
            let tau = rng.gen_range(a..=b);
            CoupledPair::random(flow, tau, min_distance, &mut rng)
        })
        .collect()
}

/// Lemma gaps on random pairs for one flow and cost.
pub fn lemma_rows(flow: &ScaleFlow, cost: &CostFunction, pairs: &[CoupledPair]) -> Result<Vec<LemmaRow>> {
    pairs
        .par_iter()
        .map(|pair| {
            Ok(LemmaRow {
                tau: pair.tau,
                distance: pair.distance,
                gap: lemma_gap(flow, cost, pair, None)?,
                margin: flow.super_ricci_margin(pair.tau)?,
            })
        })
        .collect()
}

fn lemma_sweep(cfg: &ExperimentConfig, flow: &ScaleFlow) -> Result<LemmaReport> {
    let cost = cfg.cost_function()?;
    let pairs = lemma_samples(flow, cfg.lemma.pairs, cfg.lemma.min_distance, cfg.seed)?;
    let rows = lemma_rows(flow, &cost, &pairs)?;
    let (a, b) = flow.domain();
    let taus: Vec<f64> = (0..=10).map(|i| a + (b - a) * i as f64 / 10.0).collect();
    let s_max = rows.iter().map(|r| r.distance).fold(0.0, f64::max);
    let s_grid: Vec<f64> = (1..=40).map(|i| s_max * i as f64 / 40.0).collect();
    let cost_admissible = admissibility_check(&cost, flow.k(), &s_grid, &taus)?.pass();
    Ok(LemmaReport {
        rows,
        cost_id: cost.id(),
        model: flow.model(),
        tol: cfg.tolerance.lemma.unwrap_or(DEFAULT_TOL_LEMMA),
        cost_admissible,
    })
}

fn duality_preservation(cfg: &ExperimentConfig, flow: &ScaleFlow) -> Result<DualityReport> {
    let (t0, t_end) = flow.domain();
    let b = cfg.preservation.b.unwrap_or(t_end);
    flow.check_time(b)?;
    let k = cfg.preservation.checkpoints.max(1);
    let checkpoints: Vec<f64> = (0..k).map(|i| t0 + (b - t0) * i as f64 / k as f64).collect();
    check_hypothesis(cfg, flow, &checkpoints)?;
    let cost = cfg.cost_function()?;
    let band = cfg.resolution.band(flow.model());
    let cloud = PointCloud::with_size(flow.model(), cfg.resolution.n, cfg.resolution.n_phi)?;
    let (mu0, nu0) = initial_densities(cfg, flow)?;
    let mu_b = evolve_conjugate(flow, &mu0, b)?;
    let nu_b = evolve_conjugate(flow, &nu0, b)?;
    let mu = density_values(&mu_b, &cloud, flow, b)?;
    let nu = density_values(&nu_b, &cloud, flow, b)?;
    let (_, sol) = transport_solution(flow, b, &cost, &mu, &nu)?;
    let alpha = project_potential(&cloud, &sol.potentials.phi, band, b)?;
    let beta = project_potential(&cloud, &sol.potentials.psi, band, b)?;
    let (alpha, shift) = competitive_repair(flow, &cost, b, &alpha, &beta, cfg.preservation.repair(flow.model()))?;
    let g = cfg.preservation.grid;
    let grid = match flow.model() {
        Model::Sphere2 => PointCloud::sphere_gauss(g, cfg.resolution.n_phi)?,
        Model::Torus2 => PointCloud::torus_grid(g, g)?,
    };
    let tol_z = cfg.tolerance.z.unwrap_or(DEFAULT_TOL_Z);
    let preservation = verify_competitive_preservation(flow, &cost, b, &checkpoints, &alpha, &beta, &grid, tol_z)?;
    let j = j_trajectory(flow, &alpha, &beta, &mu0, &nu0, &checkpoints)?;
    let jb = j[j.len() - 1].1;
    let j_deviation = j.iter().map(|(_, v)| (v - jb).abs()).fold(0.0, f64::max);
    Ok(DualityReport {
        preservation,
        j,
        j_deviation,
        tol_j: cfg.tolerance.j.unwrap_or(DEFAULT_TOL_J),
        repair_shift: shift,
        transport_value: sol.value,
    })
}

fn admissibility(cfg: &ExperimentConfig, flow: &ScaleFlow) -> Result<crate::costs::AdmissibilityReport> {
    let cost = cfg.cost_function()?;
    let (a, b) = flow.domain();
    let s0 = if cost.singular_at_zero() { 0.01 } else { 0.0 };
    let s_grid = cfg.admissibility.s_grid.clone().unwrap_or(Grid::range(s0, 4.0, 60)).values()?;
    let tau_grid = cfg.admissibility.tau_grid.clone().unwrap_or(Grid::range(a, b, 11)).values()?;
    admissibility_check(&cost, flow.k(), &s_grid, &tau_grid)
}

fn render_csv(cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    match report {
        ExperimentReport::Monotonicity(r) => {
            let theta = cfg.kind()? == ExperimentKind::ThetaMonotonicity;
            let mut header: Vec<&str> = vec![if theta { "s" } else { "tau" }, if theta { "theta" } else { "value" }];
            header.extend(r.series.diagnostic_names.iter().copied());
            header.extend(["value_half", "forward_increase"]);
            w.write_record(&header).map_err(io)?;
            for (k, x) in r.series.grid.iter().enumerate() {
                let mut row = vec![fmt_f64(*x), fmt_f64(r.series.values[k])];
                row.extend(r.series.diagnostics[k].iter().map(|v| fmt_f64(*v)));
                row.push(r.convergence.as_ref().map(|c| fmt_f64(c.coarse[k])).unwrap_or_default());
                let inc = if k == 0 { 0.0 } else { r.series.values[k] - r.series.values[k - 1] };
                row.push(fmt_f64(inc));
                w.write_record(&row).map_err(io)?;
            }
        }
        ExperimentReport::Lemma(r) => {
            w.write_record(["tau", "d", "gap", "margin", "model", "cost_id"]).map_err(io)?;
            for row in &r.rows {
                w.write_record([
                    fmt_f64(row.tau),
                    fmt_f64(row.distance),
                    fmt_f64(row.gap),
                    fmt_f64(row.margin),
                    r.model.name().to_string(),
                    r.cost_id.clone(),
                ])
                .map_err(io)?;
            }
        }
        ExperimentReport::Duality(r) => {
            w.write_record(["tau", "min_slack", "J", "J_deviation"]).map_err(io)?;
            let jb = r.j[r.j.len() - 1].1;
            for (k, (tau, j)) in r.j.iter().enumerate() {
                let slack = r.preservation.checkpoints.get(k).map(|c| c.min_slack).unwrap_or(r.preservation.final_slack);
                w.write_record([fmt_f64(*tau), fmt_f64(slack), fmt_f64(*j), fmt_f64((j - jb).abs())]).map_err(io)?;
            }
        }
        ExperimentReport::Admissibility(r) => {
            w.write_record(["condition", "margin", "passed"]).map_err(io)?;
            let names = ["eta_zero", "eta_monotone", "evolution"];
            let margins = [r.zero_margin, r.monotone_margin, r.evolution_margin];
            for i in 0..3 {
                w.write_record([names[i].to_string(), fmt_f64(margins[i]), r.passed[i].to_string()]).map_err(io)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// Columns `x, coarse, fine, difference`; the summary lives in the verdict file.
fn render_convergence(grid: &[f64], table: &ConvergenceTable) -> Result<String> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "coarse", "fine", "difference"]).map_err(io)?;
    for (k, x) in grid.iter().enumerate() {
        let (a, b) = (table.coarse[k], table.fine[k]);
        w.write_record([fmt_f64(*x), fmt_f64(a), fmt_f64(b), fmt_f64(b - a)]).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn render_verdict(kind: ExperimentKind, verdict: Verdict, report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {}", kind.name());
    let _ = writeln!(s, "verdict: {}", verdict.label());
    match report {
        ExperimentReport::Monotonicity(r) => {
            let _ = writeln!(s, "max_forward_increase: {}", fmt_f64(r.max_increase));
            let _ = writeln!(s, "tol_mono: {} (source: {})", fmt_f64(r.tol), r.tol_source.label());
            if let Some(c) = &r.convergence {
                let _ = writeln!(
                    s,
                    "resolution_study: N = {} vs {}, max difference {}, extrapolated error {}",
                    c.n_coarse,
                    c.n_fine,
                    fmt_f64(c.max_difference),
                    fmt_f64(c.error_estimate)
                );
            }
        }
        ExperimentReport::Lemma(r) => {
            let _ = writeln!(s, "samples: {}", r.rows.len());
            let _ = writeln!(s, "min_gap: {}", fmt_f64(r.min_gap()));
            let _ = writeln!(s, "violations: {} (tolerance {})", r.violations(), fmt_f64(r.tol));
            let hyp = r.rows.iter().filter(|x| x.margin < -1e-12).count();
            let _ = writeln!(s, "samples outside the super-Ricci hypothesis: {hyp}");
            let _ = writeln!(s, "cost admissible: {}", r.cost_admissible);
        }
        ExperimentReport::Duality(r) => {
            let _ = writeln!(s, "min_slack: {}", fmt_f64(r.preservation.min_slack()));
            let _ = writeln!(s, "tol_z: {}", fmt_f64(r.preservation.tol));
            let _ = writeln!(s, "final_slack: {}", fmt_f64(r.preservation.final_slack));
            let _ = writeln!(s, "repair_shift: {}", fmt_f64(r.repair_shift));
            let _ = writeln!(s, "J_deviation: {} (tolerance {})", fmt_f64(r.j_deviation), fmt_f64(r.tol_j));
            let _ = writeln!(s, "transport_value: {}", fmt_f64(r.transport_value));
        }
        ExperimentReport::Admissibility(r) => {
            let _ = writeln!(s, "margins: {} {} {}", fmt_f64(r.zero_margin), fmt_f64(r.monotone_margin), fmt_f64(r.evolution_margin));
            let _ = writeln!(s, "worst_point: s = {}, tau = {}", fmt_f64(r.worst_point.0), fmt_f64(r.worst_point.1));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPHERE: &str = r#"
experiment = "wasserstein_monotonicity"
[flow]
model = "sphere"
domain = [0.0, 1.0]
[[mu.bumps]]
center = [0.6]
concentration = 6.0
[[nu.bumps]]
center = [2.2]
concentration = 4.0
[resolution]
n = 120
tau_grid = { start = 0.0, end = 1.0, count = 6 }
"#;

    #[test]
    fn identical_measures_track_zero() {
        let text = SPHERE.replace("center = [2.2]\nconcentration = 4.0", "center = [0.6]\nconcentration = 6.0");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let ExperimentReport::Monotonicity(r) = evaluate(&cfg).unwrap() else { unreachable!() };
        assert!(r.series.values.iter().all(|v| v.abs() < 1e-12), "{:?}", r.series.values);
        assert_eq!(r.tol, TOL_MONO_FLOOR);
        assert!(r.pass());
    }

    #[test]
    fn static_sphere_contraction_with_curvature_bound() {
        // c ≡ 1 has Ric = g, so e^{τ} W_2 contracts
        let text = SPHERE
            .replace("domain = [0.0, 1.0]", "law = \"user_scale\"\ntaus = [0.0, 1.0]\nvalues = [1.0, 1.0]\nk = 1.0");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let ExperimentReport::Monotonicity(r) = evaluate(&cfg).unwrap() else { unreachable!() };
        assert!(r.pass(), "{r:?}");
        assert!(r.series.values[0] > r.series.values[5]);
        // K = 1.5 breaks the hypothesis
        let bad = ExperimentConfig::from_toml(&text.replace("k = 1.0", "k = 1.5")).unwrap();
        assert!(matches!(evaluate(&bad), Err(Error::NotSuperRicci { .. })));
    }

    #[test]
    fn tolerance_policy() {
        let t = ConvergenceTable::new(100, 400, vec![1.0, 0.5], vec![1.0, 0.52]);
        assert!((t.error_estimate - 0.02).abs() < 1e-15);
        assert!((t.tol_mono() - 0.06).abs() < 1e-15);
        let t = ConvergenceTable::new(100, 400, vec![1.0], vec![1.0]);
        assert_eq!(t.tol_mono(), TOL_MONO_FLOOR);
        assert_eq!(max_forward_increase(&[3.0, 2.0, 2.5, 1.0]), 0.5);
        assert_eq!(max_forward_increase(&[3.0, 2.0]), 0.0);
    }

    #[test]
    fn config_override_skips_study() {
        let text = SPHERE.replace("[resolution]", "[tolerance]\nmono = 1e-3\n[resolution]");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let ExperimentReport::Monotonicity(r) = evaluate(&cfg).unwrap() else { unreachable!() };
        assert_eq!(r.tol_source, TolSource::ConfigOverride);
        assert!(r.convergence.is_none());
    }

    #[test]
    fn oversized_cloud_is_a_config_error() {
        let cfg = ExperimentConfig::from_toml(&SPHERE.replace("n = 120", "n = 500")).unwrap();
        assert!(matches!(evaluate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn verdict_exit_codes() {
        assert_eq!(Verdict::from_check(true, false).exit_code(), 0);
        assert_eq!(Verdict::from_check(false, false).exit_code(), 1);
        assert_eq!(Verdict::from_check(false, true), Verdict::ExpectedViolation);
        assert_eq!(Verdict::ExpectedViolation.exit_code(), 0);
    }
}
