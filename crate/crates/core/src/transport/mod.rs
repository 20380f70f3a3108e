//! Discrete Monge–Kantorovich transport: exact network simplex with dual
//! potentials, entropic approximation, and Wasserstein distances on the
//! model flows.

mod network_simplex;
pub mod preservation;
mod sinkhorn;

use std::path::Path;

use rayon::prelude::*;

use crate::costs::CostFunction;
use crate::error::{Error, Result};
use crate::geometry::{SamplePoint, ScaleFlow};

pub use preservation::{
    competitive_repair, j_trajectory, project_potential, verify_competitive_preservation, CheckpointSlack,
    PreservationReport, DEFAULT_TOL_Z,
};
pub use sinkhorn::{solve_entropic, EntropicSolution, SINKHORN_TOL};

/// Largest dense problem handed to the exact solver.
pub const EXACT_LIMIT: usize = 400;
/// Tolerance on total mass and marginals.
pub const MARGINAL_TOL: f64 = 1e-9;

/// Weighted points; weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<SamplePoint>,
    /// Index of each point in the cloud it was sampled from.
    indices: Vec<usize>,
    weights: Vec<f64>,
    mass_defect: f64,
    clipped_mass: f64,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<SamplePoint>, weights: Vec<f64>) -> Result<Self> {
        let idx = (0..points.len()).collect();
        Self::with_diagnostics(points, idx, weights, 0.0, 0.0)
    }

    pub fn dirac(point: SamplePoint) -> Self {
        Self { points: vec![point], indices: vec![0], weights: vec![1.0], mass_defect: 0.0, clipped_mass: 0.0 }
    }

    pub fn with_diagnostics(
        points: Vec<SamplePoint>,
        indices: Vec<usize>,
        weights: Vec<f64>,
        mass_defect: f64,
        clipped_mass: f64,
    ) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() || indices.len() != weights.len() {
            return Err(Error::InvalidParameter("measure support and weights differ in length".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("measure weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!("measure weights sum to {total}, not 1")));
        }
        Ok(Self { points, indices, weights, mass_defect, clipped_mass })
    }

    pub fn points(&self) -> &[SamplePoint] {
        &self.points
    }
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    /// `|Σ raw weights − spectral mass|` recorded when discretizing a density.
    pub fn mass_defect(&self) -> f64 {
        self.mass_defect
    }
    /// Total (pre-normalization) mass removed by clipping negative values.
    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }
}

/// Dense row-major cost table.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter("cost table shape mismatch".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("cost table has non-finite entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Fills the table in parallel; rows are assembled in order.
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Result<f64> + Sync) -> Result<Self> {
        let data: Result<Vec<Vec<f64>>> = (0..rows)
            .into_par_iter()
            .map(|i| (0..cols).map(|j| f(i, j)).collect())
            .collect();
        Self::new(rows, cols, data?.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn scaled(&self, lambda: f64) -> CostMatrix {
        CostMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * lambda).collect() }
    }

    /// Writes `i,j,value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["i", "j", "value"]).map_err(io_err)?;
        for i in 0..self.rows {
            for j in 0..self.cols {
                w.write_record([i.to_string(), j.to_string(), fmt_f64(self.get(i, j))]).map_err(io_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Sparse coupling with its marginal residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// `(i, j, mass)` with positive mass, sorted by `(i, j)`.
    pub entries: Vec<(usize, usize, f64)>,
    /// `max_i |Σ_j π_ij − a_i|`.
    pub row_residual: f64,
    /// `max_j |Σ_i π_ij − b_j|`.
    pub col_residual: f64,
}

impl TransportPlan {
    fn from_dense(rows: usize, cols: usize, flow: &[f64], a: &[f64], b: &[f64]) -> Self {
        let entries: Vec<(usize, usize, f64)> = (0..rows * cols)
            .filter(|&k| flow[k] > 0.0)
            .map(|k| (k / cols, k % cols, flow[k]))
            .collect();
        let mut plan = TransportPlan { rows, cols, entries, row_residual: 0.0, col_residual: 0.0 };
        let (r, c) = plan.marginal_residuals(a, b);
        plan.row_residual = r;
        plan.col_residual = c;
        plan
    }

    pub fn marginal_residuals(&self, a: &[f64], b: &[f64]) -> (f64, f64) {
        let mut row = vec![0.0; self.rows];
        let mut col = vec![0.0; self.cols];
        for &(i, j, m) in &self.entries {
            row[i] += m;
            col[j] += m;
        }
        let r = row.iter().zip(a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let c = col.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        (r, c)
    }

    /// `Σ C_ij π_ij`.
    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.entries.iter().map(|&(i, j, m)| c.get(i, j) * m).sum()
    }

    pub fn dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for &(i, j, m) in &self.entries {
            d[i * self.cols + j] = m;
        }
        d
    }

    /// Writes `i,j,mass` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["i", "j", "mass"]).map_err(io_err)?;
        for &(i, j, m) in &self.entries {
            w.write_record([i.to_string(), j.to_string(), fmt_f64(m)]).map_err(io_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Kantorovich potentials with `φ_i + ψ_j ≤ C_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl DualPotentials {
    /// `Σ a_i φ_i + Σ b_j ψ_j`.
    pub fn objective(&self, a: &[f64], b: &[f64]) -> f64 {
        self.phi.iter().zip(a).map(|(p, w)| p * w).sum::<f64>() + self.psi.iter().zip(b).map(|(p, w)| p * w).sum::<f64>()
    }

    /// `max_ij (φ_i + ψ_j − C_ij)`.
    pub fn max_violation(&self, c: &CostMatrix) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (i, p) in self.phi.iter().enumerate() {
            for (j, q) in self.psi.iter().enumerate() {
                worst = worst.max(p + q - c.get(i, j));
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub plan: TransportPlan,
    pub potentials: DualPotentials,
    /// Primal value `⟨C, π⟩`.
    pub value: f64,
    /// Dual value `J(φ, ψ)`.
    pub dual_value: f64,
    pub pivots: usize,
}

pub(crate) fn check_marginals(cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != cost.rows() || b.len() != cost.cols() {
        return Err(Error::InvalidParameter(format!(
            "marginal sizes {}x{} do not match the {}x{} cost table",
            a.len(),
            b.len(),
            cost.rows(),
            cost.cols()
        )));
    }
    if a.iter().chain(b).any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter("marginals must be nonnegative".into()));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > MARGINAL_TOL || !(sa > 0.0) {
        return Err(Error::InfeasibleMarginals { source_mass: sa, target_mass: sb });
    }
    Ok(())
}

/// Exact optimal plan and potentials, normalized so that `max φ = 0`.
pub fn solve_exact(cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<ExactSolution> {
    check_marginals(cost, a, b)?;
    if cost.rows() > EXACT_LIMIT || cost.cols() > EXACT_LIMIT {
        return Err(Error::TooLarge { rows: cost.rows(), cols: cost.cols(), limit: EXACT_LIMIT });
    }
    let m = a.len();
    let out = network_simplex::solve(cost, a, b)?;
    let mut phi: Vec<f64> = out.pi[..m].iter().map(|p| -p).collect();
    let mut psi: Vec<f64> = out.pi[m..].to_vec();
    let shift = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    phi.iter_mut().for_each(|p| *p -= shift);
    psi.iter_mut().for_each(|p| *p += shift);
    let plan = TransportPlan::from_dense(cost.rows(), cost.cols(), &out.flow, a, b);
    let potentials = DualPotentials { phi, psi };
    let value = plan.cost(cost);
    let dual_value = potentials.objective(a, b);
    Ok(ExactSolution { plan, potentials, value, dual_value, pivots: out.pivots })
}

/// `⟨C, π⟩ − J(φ, ψ)`, both sides recomputed from the inputs.
pub fn duality_gap(cost: &CostMatrix, plan: &TransportPlan, potentials: &DualPotentials, a: &[f64], b: &[f64]) -> f64 {
    plan.cost(cost) - potentials.objective(a, b)
}

/// Table `C_ij = f(d_τ(x_i, y_j))`.
pub fn distance_table(
    flow: &ScaleFlow,
    tau: f64,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    f: impl Fn(f64) -> Result<f64> + Sync,
) -> Result<CostMatrix> {
    let c = flow.metric_scale(tau)?.sqrt();
    for p in mu.points().iter().chain(nu.points()) {
        flow.check_model(p)?;
    }
    CostMatrix::from_fn(mu.len(), nu.len(), |i, j| {
        f(c * crate::geometry::std_distance(&mu.points()[i], &nu.points()[j]))
    })
}

/// `W_p(μ, ν)` for the distance `d_τ`.
pub fn wasserstein_p(flow: &ScaleFlow, tau: f64, mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::InvalidParameter(format!("Wasserstein exponent must be positive, got {p}")));
    }
    let table = distance_table(flow, tau, mu, nu, |d| Ok(d.powf(p)))?;
    let sol = solve_exact(&table, mu.weights(), nu.weights())?;
    Ok(sol.value.max(0.0).powf(1.0 / p))
}

/// Exact solve of the problem with cost `c_τ = η(d_τ, τ)`.
pub fn transport_solution(
    flow: &ScaleFlow,
    tau: f64,
    cost: &CostFunction,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<(CostMatrix, ExactSolution)> {
    let table = distance_table(flow, tau, mu, nu, |d| cost.eta(d, tau))?;
    let sol = solve_exact(&table, mu.weights(), nu.weights())?;
    Ok((table, sol))
}

/// `T_{c_τ}(μ, ν)`.
pub fn transport_cost(flow: &ScaleFlow, tau: f64, cost: &CostFunction, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    Ok(transport_solution(flow, tau, cost, mu, nu)?.1.value)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path)?;
    Ok(csv::Writer::from_writer(file))
}

fn io_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Fixed-format float rendering used in every CSV the crate writes.
pub fn fmt_f64(v: f64) -> String {
    // `+ 0.0` turns -0 into 0
    format!("{:.12e}", v + 0.0)
}
