//! Coupled second variations of `c_τ(x, y) = η(d_τ(x, y), τ)` along the
//! distinguished parallel frames, and the coupled-Hessian inequality
//! `(−d⁺/dτ − 𝒟_τ) c_τ ≥ −η̇ + Kη′d − min{4η″, 0}`.
//!
//! The tangential terms differentiate the length of the variation curve
//! `s ↦ exp_{γ(s)}(r E_i(s))`, which bounds the distance from above and
//! agrees with it at `r = 0`. The terms along the geodesic use true
//! distances.

use rand::Rng;

use crate::costs::{CostDerivatives, CostFunction};
use crate::error::{Error, Result};
use crate::geometry::{
    exp_ambient, std_distance_ambient, cut_margin_ambient, ParallelFrame, SamplePoint, ScaleFlow, Vec3, DIM,
};

/// Default step as a fraction of `d_τ`.
pub const DEFAULT_STEP_FRACTION: f64 = 1e-3;
/// Pairs with `d < DIAGONAL_FACTOR · h` are rejected.
pub const DIAGONAL_FACTOR: f64 = 10.0;
/// Default Richardson step in `lemma_gap`: `min(3·10⁻³ d, 4·10⁻³ √c)`,
/// which balances the `O(h⁴)` truncation against rounding in the second
/// differences.
const LEMMA_STEP_FRACTION: f64 = 3e-3;
const LEMMA_STEP_CURVATURE: f64 = 4e-3;
/// Smallest step (relative to `d`) tried before giving up near the cut locus.
const MIN_STEP_FRACTION: f64 = 1e-6;

/// A point pair off the diagonal with its frames at time `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledPair {
    pub x: SamplePoint,
    pub y: SamplePoint,
    pub tau: f64,
    /// `d_τ(x, y)`.
    pub distance: f64,
    pub frame: ParallelFrame,
}

impl CoupledPair {
    pub fn new(flow: &ScaleFlow, tau: f64, x: SamplePoint, y: SamplePoint) -> Result<Self> {
        let distance = flow.distance(tau, &x, &y)?;
        if distance == 0.0 {
            return Err(Error::DiagonalPair { distance, step: 0.0 });
        }
        let frame = flow.parallel_frame(tau, &x, &y)?;
        Ok(Self { x, y, tau, distance, frame })
    }

    /// Uniformly random pair outside the cut guard with `d_std ≥ min_std`.
    pub fn random(flow: &ScaleFlow, tau: f64, min_std: f64, rng: &mut impl Rng) -> Result<Self> {
        for _ in 0..10_000 {
            let x = random_point(flow, rng);
            let y = random_point(flow, rng);
            let (xa, ya) = (x.ambient(), y.ambient());
            let d = std_distance_ambient(flow.model(), &xa, &ya);
            // keep a margin so that the step-size study never reaches the guard
            if d >= min_std && cut_margin_ambient(flow.model(), &xa, &ya) >= 2.0 * flow.cut_guard() {
                return Self::new(flow, tau, x, y);
            }
        }
        Err(Error::InvalidParameter("could not sample a valid pair".into()))
    }
}

fn random_point(flow: &ScaleFlow, rng: &mut impl Rng) -> SamplePoint {
    match flow.model() {
        crate::geometry::Model::Sphere2 => {
            let z: f64 = rng.gen_range(-1.0..1.0);
            SamplePoint::sphere(z.acos(), rng.gen_range(0.0..std::f64::consts::TAU))
        }
        crate::geometry::Model::Torus2 => SamplePoint::torus(rng.gen(), rng.gen()),
    }
}

/// Second differences of `c_τ` for the distinguished frame choices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTerms {
    /// `Σ_{i<n}` over the normal directions `(E_i, E_i)`.
    pub tangential: f64,
    /// `(E_n, E_n)`.
    pub along: f64,
    /// `(E_n, −E_n)`.
    pub anti: f64,
    /// Step actually used.
    pub step: f64,
}

impl FrameTerms {
    /// `tangential + min(along, anti)`.
    pub fn bound(&self) -> f64 {
        self.tangential + self.along.min(self.anti)
    }

    fn richardson(coarse: &FrameTerms, fine: &FrameTerms) -> FrameTerms {
        let r = |a: f64, b: f64| (4.0 * b - a) / 3.0;
        FrameTerms {
            tangential: r(coarse.tangential, fine.tangential),
            along: r(coarse.along, fine.along),
            anti: r(coarse.anti, fine.anti),
            step: fine.step,
        }
    }
}

fn second_difference(f: impl Fn(f64) -> Result<f64>, r: f64) -> Result<f64> {
    Ok((f(r)? + f(-r)? - 2.0 * f(0.0)?) / (r * r))
}

fn try_terms(flow: &ScaleFlow, cost: &CostFunction, pair: &CoupledPair, h: f64) -> Result<FrameTerms> {
    let tau = pair.tau;
    let model = flow.model();
    let sc = flow.metric_scale(tau)?.sqrt();
    let (xa, ya) = (pair.x.ambient(), pair.y.ambient());
    let mut tangential = 0.0;
    for i in 0..DIM - 1 {
        tangential += second_difference(
            |r| cost.eta(flow.variation_length_ambient(tau, &xa, &ya, i, r)?, tau),
            h,
        )?;
    }
    let ex = pair.frame.at_x[DIM - 1];
    let ey = pair.frame.at_y[DIM - 1];
    let moved = |r: f64, sign: f64| -> Result<f64> {
        let xr: Vec3 = exp_ambient(model, &xa, &(ex * r));
        let yr: Vec3 = exp_ambient(model, &ya, &(ey * (sign * r)));
        let margin = cut_margin_ambient(model, &xr, &yr);
        if margin <= 0.0 {
            return Err(Error::CutLocus { margin, guard: flow.cut_guard() });
        }
        cost.eta(sc * std_distance_ambient(model, &xr, &yr), tau)
    };
    let along = second_difference(|r| moved(r, 1.0), h)?;
    let anti = second_difference(|r| moved(r, -1.0), h)?;
    Ok(FrameTerms { tangential, along, anti, step: h })
}

/// Frame terms at step `h` (default `10⁻³ d`), halving the step while a
/// variation reaches the cut locus.
pub fn frame_terms(flow: &ScaleFlow, cost: &CostFunction, pair: &CoupledPair, h: Option<f64>) -> Result<FrameTerms> {
    let d = pair.distance;
    let mut step = h.unwrap_or(DEFAULT_STEP_FRACTION * d);
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    if d < DIAGONAL_FACTOR * step {
        return Err(Error::DiagonalPair { distance: d, step });
    }
    loop {
        match try_terms(flow, cost, pair, step) {
            Err(Error::CutLocus { .. }) if step > MIN_STEP_FRACTION * d => step *= 0.5,
            other => return other,
        }
    }
}

/// Distinguished-frame upper bound for `𝒟_τ c_τ(x, y)` at step `h`.
pub fn coupled_hessian_bound(flow: &ScaleFlow, cost: &CostFunction, pair: &CoupledPair, h: Option<f64>) -> Result<f64> {
    Ok(frame_terms(flow, cost, pair, h)?.bound())
}

/// The same bound with one Richardson step (`h` and `h/2`), accurate to
/// `O(h⁴)`.
pub fn coupled_hessian_bound_extrapolated(
    flow: &ScaleFlow,
    cost: &CostFunction,
    pair: &CoupledPair,
    h: Option<f64>,
) -> Result<f64> {
    let coarse = frame_terms(flow, cost, pair, h)?;
    let fine = frame_terms(flow, cost, pair, Some(coarse.step / 2.0))?;
    if fine.step != coarse.step / 2.0 {
        // the fine step was shrunk again; redo the coarse level to match
        let coarse = frame_terms(flow, cost, pair, Some(fine.step * 2.0))?;
        return Ok(FrameTerms::richardson(&coarse, &fine).bound());
    }
    Ok(FrameTerms::richardson(&coarse, &fine).bound())
}

fn derivatives_at(cost: &CostFunction, pair: &CoupledPair) -> Result<CostDerivatives> {
    cost.derivatives(pair.distance, pair.tau)
}

/// `−η′ ∫_γ Ric(γ′, γ′) ds + min{4η″, 0}` evaluated exactly.
pub fn closed_form_second_variation(flow: &ScaleFlow, cost: &CostFunction, pair: &CoupledPair) -> Result<f64> {
    let eta = derivatives_at(cost, pair)?;
    let ric = flow.ricci_factor(pair.tau)? * pair.distance;
    Ok(-eta.ds * ric + (4.0 * eta.dss).min(0.0))
}

/// `d⁺/dτ c_τ(x, y) = η′ (c′/2c) d + η̇`.
pub fn time_derivative_cost(flow: &ScaleFlow, cost: &CostFunction, pair: &CoupledPair) -> Result<f64> {
    let eta = derivatives_at(cost, pair)?;
    let c = flow.metric_scale(pair.tau)?;
    let dc = flow.metric_scale_derivative(pair.tau)?;
    Ok(eta.ds * dc / (2.0 * c) * pair.distance + eta.dtau)
}

/// `−η̇ + Kη′d − min{4η″, 0}`, the lower bound of the coupled-Hessian inequality.
pub fn lemma_lower_bound(flow: &ScaleFlow, cost: &CostFunction, pair: &CoupledPair) -> Result<f64> {
    let eta = derivatives_at(cost, pair)?;
    Ok(-eta.dtau + flow.k() * eta.ds * pair.distance - (4.0 * eta.dss).min(0.0))
}

/// `[−d⁺/dτ c_τ − bound] − [−η̇ + Kη′d − min{4η″, 0}]`, with the frame bound
/// Richardson-extrapolated from steps `h` and `h/2`.
pub fn lemma_gap(flow: &ScaleFlow, cost: &CostFunction, pair: &CoupledPair, h: Option<f64>) -> Result<f64> {
    let h = match h {
        Some(h) => h,
        None => (LEMMA_STEP_FRACTION * pair.distance).min(LEMMA_STEP_CURVATURE * flow.metric_scale(pair.tau)?.sqrt()),
    };
    let bound = coupled_hessian_bound_extrapolated(flow, cost, pair, Some(h))?;
    let lhs = -time_derivative_cost(flow, cost, pair)? - bound;
    Ok(lhs - lemma_lower_bound(flow, cost, pair)?)
}

/// Least-squares slope of `log |e(h)|` against `log h`.
pub fn convergence_slope(steps: &[f64], errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .zip(errors)
        .filter(|(_, e)| e.abs() > 0.0)
        .map(|(h, e)| (h.ln(), e.abs().ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::power_cost;
    use crate::geometry::Model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sphere_ricci() -> ScaleFlow {
        ScaleFlow::backward_ricci(Model::Sphere2, 1.0, 0.0, (0.0, 1.0)).unwrap()
    }

    #[test]
    fn flat_torus_square_cost() {
        let flow = ScaleFlow::backward_ricci(Model::Torus2, 1.0, 0.0, (0.0, 1.0)).unwrap();
        let cost = power_cost(2.0, 0.0).unwrap();
        let pair = CoupledPair::new(&flow, 0.3, SamplePoint::torus(0.1, 0.2), SamplePoint::torus(0.3, 0.25)).unwrap();
        let t = frame_terms(&flow, &cost, &pair, None).unwrap();
        assert!(t.tangential.abs() < 1e-6);
        assert!(t.along.abs() < 1e-6);
        assert!((t.anti - 8.0).abs() < 1e-5);
        assert!(t.bound().abs() < 1e-6);
    }

    #[test]
    fn sphere_tangential_matches_closed_form() {
        let flow = sphere_ricci();
        let cost = power_cost(1.5, 0.0).unwrap();
        let pair =
            CoupledPair::new(&flow, 0.25, SamplePoint::sphere(1.0, 0.3), SamplePoint::sphere(2.0, 1.4)).unwrap();
        let t = frame_terms(&flow, &cost, &pair, None).unwrap();
        let eta = cost.derivatives(pair.distance, 0.25).unwrap();
        let c = flow.metric_scale(0.25).unwrap();
        assert!((t.tangential + eta.ds * pair.distance / c).abs() < 1e-5);
        assert!((t.anti - 4.0 * eta.dss).abs() < 1e-5);
    }

    #[test]
    fn closed_form_examples() {
        let flow = sphere_ricci();
        let pair = CoupledPair::new(&flow, 0.5, SamplePoint::sphere(0.5, 0.0), SamplePoint::sphere(1.5, 0.0)).unwrap();
        let c = 2.0;
        let d = pair.distance;
        let v = closed_form_second_variation(&flow, &power_cost(2.0, 0.0).unwrap(), &pair).unwrap();
        assert!((v + 2.0 * d * d / c).abs() < 1e-14);
        let dt = time_derivative_cost(&flow, &power_cost(2.0, 0.0).unwrap(), &pair).unwrap();
        assert!((dt - 2.0 * d * d / c).abs() < 1e-14);

        let torus = ScaleFlow::backward_ricci(Model::Torus2, 1.0, 0.0, (0.0, 1.0)).unwrap();
        let tp = CoupledPair::new(&torus, 0.5, SamplePoint::torus(0.0, 0.0), SamplePoint::torus(0.25, 0.0)).unwrap();
        let v = closed_form_second_variation(&torus, &power_cost(0.5, 0.0).unwrap(), &tp).unwrap();
        assert!((v + 0.25f64.powf(-1.5)).abs() < 1e-12);
    }

    #[test]
    fn equality_case_gap_vanishes() {
        let flow = sphere_ricci();
        let cost = power_cost(2.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let tau = rng.gen_range(0.0..1.0);
            let pair = CoupledPair::random(&flow, tau, 0.05, &mut rng).unwrap();
            let g = lemma_gap(&flow, &cost, &pair, None).unwrap();
            assert!(g.abs() < 1e-8, "gap {g}");
        }
    }

    #[test]
    fn shrinking_torus_gap_is_positive() {
        let flow = ScaleFlow::user_scale(Model::Torus2, vec![0.0, 0.5, 1.0], vec![1.0, 0.85, 0.7], 0.0).unwrap();
        let cost = power_cost(1.0, 0.0).unwrap();
        let pair = CoupledPair::new(&flow, 0.4, SamplePoint::torus(0.1, 0.1), SamplePoint::torus(0.3, 0.2)).unwrap();
        let c = flow.metric_scale(0.4).unwrap();
        let dc = flow.metric_scale_derivative(0.4).unwrap();
        let expected = -dc / (2.0 * c) * pair.distance;
        let g = lemma_gap(&flow, &cost, &pair, None).unwrap();
        assert!(expected > 0.0);
        assert!((g - expected).abs() < 1e-8);
    }

    #[test]
    fn fd_error_is_second_order() {
        let flow = sphere_ricci();
        let cost = power_cost(2.0, 0.0).unwrap();
        let pair = CoupledPair::new(&flow, 0.1, SamplePoint::sphere(0.7, 0.2), SamplePoint::sphere(2.1, 2.0)).unwrap();
        let exact = closed_form_second_variation(&flow, &cost, &pair).unwrap();
        let steps: Vec<f64> = (0..5).map(|k| pair.distance * 0.04 / 2f64.powi(k)).collect();
        let errs: Vec<f64> = steps
            .iter()
            .map(|&h| coupled_hessian_bound(&flow, &cost, &pair, Some(h)).unwrap() - exact)
            .collect();
        let slope = convergence_slope(&steps, &errs);
        assert!((1.7..=2.3).contains(&slope), "slope {slope}");
    }

    #[test]
    fn rejects_diagonal_and_cut_pairs() {
        let flow = sphere_ricci();
        let cost = power_cost(2.0, 0.0).unwrap();
        let pair = CoupledPair::new(&flow, 0.0, SamplePoint::sphere(1.0, 0.0), SamplePoint::sphere(1.01, 0.0)).unwrap();
        assert!(matches!(
            coupled_hessian_bound(&flow, &cost, &pair, Some(0.01)),
            Err(Error::DiagonalPair { .. })
        ));
        let near = CoupledPair::new(&flow, 0.0, SamplePoint::sphere(0.0, 0.0), SamplePoint::sphere(PI - 0.01, 0.0));
        assert!(matches!(near, Err(Error::CutLocus { .. })));
    }
}
