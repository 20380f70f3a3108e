//! Numerical check that competitive pairs stay competitive when both
//! potentials are run backward by the dual heat flow.

use rayon::prelude::*;
use std::f64::consts::PI;

use crate::costs::CostFunction;
use crate::diffusion::{duality_functional, evolve_conjugate, evolve_dual, ScalarField, SpectralDensity, Spectrum};
use crate::error::{Error, Result};
use crate::geometry::{std_distance, Model, PointCloud, SamplePoint, ScaleFlow};

pub const DEFAULT_TOL_Z: f64 = 1e-4;
/// Largest violation of competitiveness tolerated at the final time.
pub const FINAL_TIME_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSlack {
    pub tau: f64,
    /// `min_ij c_τ(x_i, x_j) − φ(x_i, τ) − ψ(x_j, τ)` over the grid.
    pub min_slack: f64,
    pub pair: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreservationReport {
    pub b: f64,
    pub final_slack: f64,
    pub checkpoints: Vec<CheckpointSlack>,
    pub tol: f64,
}

impl PreservationReport {
    pub fn min_slack(&self) -> f64 {
        self.checkpoints.iter().map(|c| c.min_slack).fold(f64::INFINITY, f64::min)
    }

    pub fn pass(&self) -> bool {
        self.min_slack() >= -self.tol
    }
}

/// Band-limited field from values on a structured cloud: ring averages
/// projected onto Legendre modes (sphere Gauss clouds, degree at most
/// `n_rings − 1`) or a truncated DFT (square torus grids).
pub fn project_potential(cloud: &PointCloud, values: &[f64], band_limit: usize, clock: f64) -> Result<ScalarField> {
    if values.len() != cloud.len() {
        return Err(Error::InvalidParameter("one potential value per cloud point is required".into()));
    }
    match cloud.model() {
        Model::Sphere2 => {
            let mut rings: Vec<(f64, f64, f64, usize)> = Vec::new(); // theta, weight, sum, count
            for ((p, w), v) in cloud.points().iter().zip(cloud.weights()).zip(values) {
                let SamplePoint::Sphere { theta, .. } = *p else { unreachable!() };
                match rings.iter_mut().find(|r| (r.0 - theta).abs() < 1e-12) {
                    Some(r) => {
                        r.1 += w;
                        r.2 += v;
                        r.3 += 1;
                    }
                    None => rings.push((theta, *w, *v, 1)),
                }
            }
            rings.sort_by(|a, b| b.0.total_cmp(&a.0));
            let z: Vec<f64> = rings.iter().map(|r| r.0.cos()).collect();
            let w: Vec<f64> = rings.iter().map(|r| r.1 / (2.0 * PI)).collect();
            let f: Vec<f64> = rings.iter().map(|r| r.2 / r.3 as f64).collect();
            let degree = band_limit.min(rings.len().saturating_sub(1));
            let low = Spectrum::project_zonal_samples(degree, clock, &z, &w, &f)?;
            let crate::diffusion::Coefficients::Zonal(a) = low.coefficients() else { unreachable!() };
            let mut padded = a.clone();
            padded.resize(band_limit + 1, 0.0);
            Ok(ScalarField::new(Spectrum::zonal(band_limit, clock, padded)?))
        }
        Model::Torus2 => {
            let m = (cloud.len() as f64).sqrt().round() as usize;
            let regular = m * m == cloud.len()
                && cloud.points().iter().enumerate().all(|(k, p)| {
                    let SamplePoint::Torus { x, y } = *p else { return false };
                    ((x * m as f64) - (k / m) as f64).abs() < 1e-9 && ((y * m as f64) - (k % m) as f64).abs() < 1e-9
                });
            if !regular {
                return Err(Error::InvalidParameter("torus potentials must live on a square grid cloud".into()));
            }
            Ok(ScalarField::new(Spectrum::project_torus_grid(band_limit, clock, m, values)?))
        }
    }
}

/// Lowers `α` by the largest violation of `α(x) + β(y) ≤ c_b(x, y)` found on
/// a dense grid, returning the repaired field and the shift. On the sphere
/// the zonal pair binds on equal longitudes (the cost is nondecreasing in
/// distance), so a meridian grid of `resolution` colatitudes suffices; on
/// the torus all pairs of a `resolution²` grid are scanned.
pub fn competitive_repair(
    flow: &ScaleFlow,
    cost: &CostFunction,
    b: f64,
    alpha: &ScalarField,
    beta: &ScalarField,
    resolution: usize,
) -> Result<(ScalarField, f64)> {
    alpha.spectrum().check_clock(b)?;
    beta.spectrum().check_clock(b)?;
    let c = flow.metric_scale(b)?.sqrt();
    let res = resolution.max(2);
    let points: Vec<SamplePoint> = match flow.model() {
        Model::Sphere2 => (0..=res).map(|i| SamplePoint::sphere(PI * i as f64 / res as f64, 0.0)).collect(),
        Model::Torus2 => (0..res * res)
            .map(|k| SamplePoint::torus((k / res) as f64 / res as f64, (k % res) as f64 / res as f64))
            .collect(),
    };
    let av: Vec<f64> = points.iter().map(|p| alpha.value(p)).collect();
    let bv: Vec<f64> = points.iter().map(|p| beta.value(p)).collect();
    let worst = (0..points.len())
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut w = f64::NEG_INFINITY;
            for j in 0..points.len() {
                let cost_ij = cost.eta(c * std_distance(&points[i], &points[j]), b)?;
                w = w.max(av[i] + bv[j] - cost_ij);
            }
            Ok(w)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = worst.max(0.0);
    Ok((alpha.shifted(-shift), shift))
}

fn min_slack_on_grid(
    flow: &ScaleFlow,
    cost: &CostFunction,
    tau: f64,
    phi: &ScalarField,
    psi: &ScalarField,
    grid: &PointCloud,
) -> Result<(f64, (usize, usize))> {
    let c = flow.metric_scale(tau)?.sqrt();
    let pts = grid.points();
    let pv: Vec<f64> = pts.iter().map(|p| phi.value(p)).collect();
    let qv: Vec<f64> = pts.iter().map(|p| psi.value(p)).collect();
    let rows = (0..pts.len())
        .into_par_iter()
        .map(|i| -> Result<(f64, usize)> {
            let mut best = (f64::INFINITY, 0);
            for j in 0..pts.len() {
                let slack = cost.eta(c * std_distance(&pts[i], &pts[j]), tau)? - pv[i] - qv[j];
                if slack < best.0 {
                    best = (slack, j);
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = (f64::INFINITY, (0, 0));
    for (i, (s, j)) in rows.into_iter().enumerate() {
        if s < out.0 {
            out = (s, (i, j));
        }
    }
    Ok(out)
}

/// Evolves `(α_b, β_b)` by the dual heat flow to every checkpoint `τ ≤ b`
/// and records the minimum competitiveness slack on `grid × grid`.
pub fn verify_competitive_preservation(
    flow: &ScaleFlow,
    cost: &CostFunction,
    b: f64,
    checkpoints: &[f64],
    alpha_b: &ScalarField,
    beta_b: &ScalarField,
    grid: &PointCloud,
    tol: f64,
) -> Result<PreservationReport> {
    alpha_b.spectrum().check_clock(b)?;
    beta_b.spectrum().check_clock(b)?;
    if grid.model() != flow.model() {
        return Err(Error::ModelMismatch("evaluation grid on the wrong model".into()));
    }
    let (final_slack, _) = min_slack_on_grid(flow, cost, b, alpha_b, beta_b, grid)?;
    if final_slack < -FINAL_TIME_TOL {
        return Err(Error::UnderResolved { defect: -final_slack, limit: FINAL_TIME_TOL });
    }
    let mut rows = Vec::with_capacity(checkpoints.len());
    for &tau in checkpoints {
        let phi = evolve_dual(flow, alpha_b, tau)?;
        let psi = evolve_dual(flow, beta_b, tau)?;
        let (min_slack, pair) = min_slack_on_grid(flow, cost, tau, &phi, &psi, grid)?;
        rows.push(CheckpointSlack { tau, min_slack, pair });
    }
    Ok(PreservationReport { b, final_slack, checkpoints: rows, tol })
}

/// `J_τ(φ(τ), ψ(τ))` with the potentials run backward from `b` and the
/// densities run forward from their own clock, at each requested time and
/// at `b` itself (last entry).
pub fn j_trajectory(
    flow: &ScaleFlow,
    alpha_b: &ScalarField,
    beta_b: &ScalarField,
    mu: &SpectralDensity,
    nu: &SpectralDensity,
    times: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let b = alpha_b.clock();
    let mut out = Vec::with_capacity(times.len() + 1);
    for &tau in times.iter().chain(std::iter::once(&b)) {
        let phi = evolve_dual(flow, alpha_b, tau)?;
        let psi = evolve_dual(flow, beta_b, tau)?;
        let m = evolve_conjugate(flow, mu, tau)?;
        let n = evolve_conjugate(flow, nu, tau)?;
        out.push((tau, duality_functional(&phi, &psi, &m, &n, flow, tau)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::power_cost;
    use crate::diffusion::Bump;

    #[test]
    fn zero_pair_has_slack_equal_min_cost() {
        let flow = ScaleFlow::backward_ricci(Model::Sphere2, 1.0, 0.0, (0.0, 1.0)).unwrap();
        let zero = ScalarField::new(Spectrum::zero(Model::Sphere2, 8, 1.0));
        let grid = PointCloud::sphere_gauss(10, 4).unwrap();
        let r = verify_competitive_preservation(&flow, &power_cost(2.0, 0.0).unwrap(), 1.0, &[0.0, 0.5], &zero, &zero, &grid, DEFAULT_TOL_Z)
            .unwrap();
        assert!(r.pass());
        for c in &r.checkpoints {
            assert_eq!(c.min_slack, 0.0);
        }
    }

    #[test]
    fn projection_recovers_smooth_zonal_field() {
        let cloud = PointCloud::sphere_gauss(30, 4).unwrap();
        let f = |p: &SamplePoint| {
            let SamplePoint::Sphere { theta, .. } = *p else { unreachable!() };
            let z = theta.cos();
            1.0 + 0.5 * z - 0.25 * (3.0 * z * z - 1.0) / 2.0
        };
        let values: Vec<f64> = cloud.points().iter().map(f).collect();
        let s = project_potential(&cloud, &values, 12, 0.0).unwrap();
        for p in [SamplePoint::sphere(0.1, 0.0), SamplePoint::sphere(2.0, 1.0)] {
            assert!((s.value(&p) - f(&p)).abs() < 1e-13);
        }
    }

    #[test]
    fn repair_makes_pair_competitive() {
        let flow = ScaleFlow::backward_ricci(Model::Torus2, 1.0, 0.0, (0.0, 1.0)).unwrap();
        let cost = power_cost(2.0, 0.0).unwrap();
        let alpha = ScalarField::new(Spectrum::constant(Model::Torus2, 3, 1.0, 0.3));
        let beta = ScalarField::new(Spectrum::constant(Model::Torus2, 3, 1.0, 0.0));
        let (fixed, shift) = competitive_repair(&flow, &cost, 1.0, &alpha, &beta, 8).unwrap();
        assert!((shift - 0.3).abs() < 1e-15);
        assert!(fixed.spectrum().mean_mode().abs() < 1e-15);
    }

    #[test]
    fn j_is_constant_for_dual_and_conjugate_pairs() {
        let flow = ScaleFlow::backward_ricci(Model::Sphere2, 1.0, 0.0, (0.0, 1.0)).unwrap();
        let mu = SpectralDensity::mixture(&flow, 16, 0.0, &[Bump::sphere(0.7, 5.0, 1.0)]).unwrap();
        let nu = SpectralDensity::mixture(&flow, 16, 0.0, &[Bump::sphere(2.2, 4.0, 1.0)]).unwrap();
        let a = (0..=16).map(|l| (-(l as f64)).exp()).collect();
        let b = (0..=16).map(|l| (l as f64).cos() / (1.0 + l as f64)).collect();
        let alpha = ScalarField::new(Spectrum::zonal(16, 1.0, a).unwrap());
        let beta = ScalarField::new(Spectrum::zonal(16, 1.0, b).unwrap());
        let traj = j_trajectory(&flow, &alpha, &beta, &mu, &nu, &[0.0, 0.3, 0.6, 0.9]).unwrap();
        let jb = traj.last().unwrap().1;
        for (_, j) in &traj {
            assert!((j - jb).abs() < 1e-12);
        }
    }
}
