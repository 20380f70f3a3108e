//! Reduced-length geometry on the exact backward Ricci flow: 𝓛-length,
//! 𝓛-geodesics, the 𝓛-distance `Q`, the trace Harnack integral `𝒦`, the
//! transported frames `Y_i`, the 𝓛-Wasserstein distance `V` and the
//! normalized distance `Θ(s)`.
//!
//! Paths are sampled on Chebyshev–Lobatto nodes in `σ = ln τ`, which
//! clusters nodes geometrically near both ends. Since `R` is constant in
//! space on these models, an 𝓛-geodesic runs along the minimizing spatial
//! geodesic and only its parametrization has to be solved for. Writing
//! `θ(σ)` for the standard-metric fraction of the arc covered, the geodesic
//! equation reduces to the linear boundary-value problem
//! `2θ_σσ + (4ρτ − 1)θ_σ = 0`, `θ(σ_1) = 0`, `θ(σ_2) = 1`, solved here by
//! collocation. The residual of the full ambient equation is then measured
//! on the collocation grid.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::diffusion::{density_values, evolve_conjugate, inverse_scale_integral, ScalarField, SpectralDensity};
use crate::error::{Error, Result};
use crate::geometry::{
    cut_margin_ambient, exp_ambient, std_distance, Model, PointCloud, SamplePoint, ScaleFlow, Segment, Vec3, DIM,
};
use crate::quadrature::{chebyshev_interpolate, chebyshev_lobatto, gauss_legendre};
use crate::transport::{duality_gap, solve_exact, CostMatrix, DiscreteMeasure};

/// Largest number of collocation nodes per path.
pub const DEFAULT_NODES: usize = 64;
/// Fewest collocation nodes per path.
pub const MIN_NODES: usize = 16;
/// Extra nodes per unit of `ln(τ_2/τ_1)`.
const NODES_PER_SIGMA: f64 = 24.0;
/// Bound on the geodesic-equation residual of returned paths, relative to
/// `max(1, size of the equation's terms)`.
pub const RESIDUAL_TOL: f64 = 1e-6;
/// Gauss–Legendre nodes per sub-interval of the path grid.
const GL_PER_INTERVAL: usize = 8;
/// RK4 substeps per sub-interval in the frame ODE.
const FRAME_SUBSTEPS: usize = 8;

const DIM_F: f64 = DIM as f64;

/// A sampled space-time curve `τ ↦ γ(τ)` on `[τ_1, τ_2]`, `τ_1 > 0`.
#[derive(Debug, Clone)]
pub struct LPath {
    model: Model,
    /// Nodes in `σ = ln τ`, increasing.
    sigma: Vec<f64>,
    taus: Vec<f64>,
    /// Ambient positions (unwrapped on the torus).
    ambient: Vec<Vec3>,
    points: Vec<SamplePoint>,
    /// Standard-metric ambient velocities `dγ/dτ`.
    velocities: Vec<Vec3>,
    /// Spatial segment the path follows (used to seed frames).
    segment: Segment,
    length: f64,
    residual: f64,
}

impl LPath {
    /// Samples `f(τ) = (position, dγ/dτ)` on `nodes` Chebyshev nodes in
    /// `ln τ`. The spatial segment seeds frames; it runs from the first to the
    /// last sample.
    pub fn from_fn(
        flow: &ScaleFlow,
        tau1: f64,
        tau2: f64,
        nodes: usize,
        f: impl Fn(f64) -> (Vec3, Vec3),
    ) -> Result<Self> {
        check_interval(flow, tau1, tau2)?;
        if nodes < 4 {
            return Err(Error::InvalidParameter(format!("a path needs at least 4 nodes, got {nodes}")));
        }
        let (sigma, _) = chebyshev_lobatto(nodes, tau1.ln(), tau2.ln());
        let taus: Vec<f64> = sigma
            .iter()
            .enumerate()
            .map(|(k, s)| if k == 0 { tau1 } else if k + 1 == nodes { tau2 } else { s.exp() })
            .collect();
        let (ambient, velocities): (Vec<Vec3>, Vec<Vec3>) = taus.iter().map(|&t| f(t)).unzip();
        let segment = Segment::new(flow.model(), ambient[0], ambient[nodes - 1]);
        Ok(Self::assemble(flow, sigma, taus, ambient, velocities, segment, f64::NAN))
    }

    fn assemble(
        flow: &ScaleFlow,
        sigma: Vec<f64>,
        taus: Vec<f64>,
        ambient: Vec<Vec3>,
        velocities: Vec<Vec3>,
        segment: Segment,
        residual: f64,
    ) -> Self {
        let model = flow.model();
        let points = ambient.iter().map(|p| SamplePoint::from_ambient(model, p)).collect();
        let mut path = LPath { model, sigma, taus, ambient, points, velocities, segment, length: 0.0, residual };
        path.length = integrate(&path, |t, v2| t.sqrt() * (flow.scalar_curvature_at(t) + flow.scale_at(t) * v2));
        path
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }
    pub fn points(&self) -> &[SamplePoint] {
        &self.points
    }
    pub fn velocities(&self) -> &[Vec3] {
        &self.velocities
    }
    pub fn tau1(&self) -> f64 {
        self.taus[0]
    }
    pub fn tau2(&self) -> f64 {
        self.taus[self.taus.len() - 1]
    }
    /// Cached 𝓛-length.
    pub fn length(&self) -> f64 {
        self.length
    }
    /// Sup-norm `g_τ` residual of the geodesic equation on the nodes; NaN
    /// for paths not produced by [`l_geodesic`].
    pub fn residual(&self) -> f64 {
        self.residual
    }

    fn velocity_at(&self, sigma: f64) -> Vec3 {
        interpolate_vec(&self.sigma, &self.velocities, sigma)
    }

    fn position_at(&self, sigma: f64) -> Vec3 {
        let p = interpolate_vec(&self.sigma, &self.ambient, sigma);
        match self.model {
            Model::Sphere2 => p / p.norm(),
            Model::Torus2 => p,
        }
    }
}

fn interpolate_vec(nodes: &[f64], values: &[Vec3], x: f64) -> Vec3 {
    let comp = |k: usize| {
        let v: Vec<f64> = values.iter().map(|p| p[k]).collect();
        chebyshev_interpolate(nodes, &v, x)
    };
    Vec3::new(comp(0), comp(1), comp(2))
}

fn check_interval(flow: &ScaleFlow, tau1: f64, tau2: f64) -> Result<()> {
    if !(tau1 > 0.0) || !(tau2 > tau1) {
        return Err(Error::InvalidParameter(format!("need 0 < tau1 < tau2, got {tau1}, {tau2}")));
    }
    flow.check_time(tau1)?;
    flow.check_time(tau2)
}

/// `∫ f(τ, |X|²_std) dτ` over the path, composite Gauss–Legendre in `σ`.
fn integrate(path: &LPath, f: impl Fn(f64, f64) -> f64) -> f64 {
    let (gx, gw) = gauss_legendre(GL_PER_INTERVAL);
    let mut total = 0.0;
    for k in 0..path.sigma.len() - 1 {
        let (a, b) = (path.sigma[k], path.sigma[k + 1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in gx.iter().zip(&gw) {
            let s = mid + half * x;
            let t = s.exp();
            let v2 = path.velocity_at(s).norm_squared();
            total += w * half * f(t, v2) * t;
        }
    }
    total
}

/// `𝓛(γ) = ∫ √τ (R + |γ′|²_{g_τ}) dτ`, recomputed from the samples.
pub fn l_length(flow: &ScaleFlow, path: &LPath) -> Result<f64> {
    check_interval(flow, path.tau1(), path.tau2())?;
    Ok(integrate(path, |t, v2| t.sqrt() * (flow.scalar_curvature_at(t) + flow.scale_at(t) * v2)))
}

/// Arc fraction `θ(σ)` solving the reduced geodesic equation on
/// Chebyshev–Lobatto nodes, with the nodes, differentiation matrix and
/// `θ_σ`.
struct Reduced {
    sigma: Vec<f64>,
    d: DMatrix<f64>,
    theta: DVector<f64>,
    theta_s: DVector<f64>,
}

fn reduced_solution(flow: &ScaleFlow, tau1: f64, tau2: f64, nodes: usize) -> Result<Reduced> {
    let (sigma, dm) = chebyshev_lobatto(nodes, tau1.ln(), tau2.ln());
    let d = DMatrix::from_fn(nodes, nodes, |i, j| dm[i][j]);
    let d2 = &d * &d;
    let mut a = DMatrix::zeros(nodes, nodes);
    let mut rhs = DVector::zeros(nodes);
    for i in 0..nodes {
        let t = sigma[i].exp();
        let coef = 4.0 * flow.ricci_factor_at(t) * t - 1.0;
        for j in 0..nodes {
            a[(i, j)] = 2.0 * d2[(i, j)] + coef * d[(i, j)];
        }
    }
    for j in 0..nodes {
        a[(0, j)] = if j == 0 { 1.0 } else { 0.0 };
        a[(nodes - 1, j)] = if j == nodes - 1 { 1.0 } else { 0.0 };
    }
    rhs[nodes - 1] = 1.0;
    let theta = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonConvergence { iterations: nodes, error: f64::INFINITY })?;
    let theta_s = &d * &theta;
    Ok(Reduced { sigma, d, theta, theta_s })
}

/// Sup over the nodes of the `g_τ` norm of
/// `2∇_X X − ∇R + 4Ric(·, X) + X/τ`, using spectral derivatives of the
/// ambient positions.
/// Also returns the largest `g_τ` size of the individual terms, which sets
/// the rounding floor of the measurement.
fn geodesic_residual(flow: &ScaleFlow, sigma: &[f64], d: &DMatrix<f64>, ambient: &[Vec3]) -> (f64, f64) {
    let n = sigma.len();
    let comps: Vec<DVector<f64>> = (0..3).map(|k| DVector::from_fn(n, |i, _| ambient[i][k])).collect();
    let first: Vec<DVector<f64>> = comps.iter().map(|c| d * c).collect();
    let second: Vec<DVector<f64>> = first.iter().map(|c| d * c).collect();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        let t = sigma[i].exp();
        let ps = Vec3::new(first[0][i], first[1][i], first[2][i]);
        let pss = Vec3::new(second[0][i], second[1][i], second[2][i]);
        let v = ps / t;
        let mut acc = (pss - ps) / (t * t);
        if flow.model() == Model::Sphere2 {
            // tangential part of the ambient acceleration on the unit sphere
            acc += ambient[i] * v.norm_squared();
        }
        let ric = v * (4.0 * flow.ricci_factor_at(t));
        let r = acc * 2.0 + ric + v / t;
        let norm = flow.scale_at(t).sqrt();
        worst = worst.max(norm * r.norm());
        scale = scale.max(norm * (2.0 * acc.norm() + ric.norm() + v.norm() / t));
    }
    (worst, scale)
}

fn check_endpoints(flow: &ScaleFlow, x: &SamplePoint, y: &SamplePoint) -> Result<()> {
    if !flow.is_backward_ricci() {
        return Err(Error::NotRicciFlow);
    }
    let (xa, ya) = (x.ambient(), y.ambient());
    if xa != ya {
        let margin = cut_margin_ambient(flow.model(), &xa, &ya);
        if margin < flow.cut_guard() {
            return Err(Error::CutLocus { margin, guard: flow.cut_guard() });
        }
    }
    Ok(())
}

/// Node count for the interval `[τ_1, τ_2]`. Rounding in the twice-applied
/// differentiation matrix grows like `N⁴/ln(τ_2/τ_1)²`, so short intervals
/// get fewer nodes.
pub fn collocation_nodes(tau1: f64, tau2: f64) -> usize {
    let n = MIN_NODES as f64 + NODES_PER_SIGMA * (tau2 / tau1).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(MIN_NODES, DEFAULT_NODES)
    } else {
        DEFAULT_NODES
    }
}

/// 𝓛-geodesic from `(x, τ_1)` to `(y, τ_2)`.
pub fn l_geodesic(flow: &ScaleFlow, x: &SamplePoint, tau1: f64, y: &SamplePoint, tau2: f64) -> Result<LPath> {
    l_geodesic_with(flow, x, tau1, y, tau2, collocation_nodes(tau1, tau2))
}

/// [`l_geodesic`] with an explicit number of collocation nodes.
pub fn l_geodesic_with(
    flow: &ScaleFlow,
    x: &SamplePoint,
    tau1: f64,
    y: &SamplePoint,
    tau2: f64,
    nodes: usize,
) -> Result<LPath> {
    check_interval(flow, tau1, tau2)?;
    flow.check_model(x)?;
    flow.check_model(y)?;
    check_endpoints(flow, x, y)?;
    let red = reduced_solution(flow, tau1, tau2, nodes)?;
    let seg = Segment::new(flow.model(), x.ambient(), y.ambient());
    let len = seg.length();
    let taus: Vec<f64> = red
        .sigma
        .iter()
        .enumerate()
        .map(|(k, s)| if k == 0 { tau1 } else if k + 1 == nodes { tau2 } else { s.exp() })
        .collect();
    let ambient: Vec<Vec3> = red.theta.iter().map(|&f| seg.point_unwrapped(f)).collect();
    let velocities: Vec<Vec3> = (0..nodes)
        .map(|k| seg.tangent(red.theta[k]) * (len * red.theta_s[k] / taus[k]))
        .collect();
    let (residual, scale) = geodesic_residual(flow, &red.sigma, &red.d, &ambient);
    if !(residual <= RESIDUAL_TOL * scale.max(1.0)) {
        return Err(Error::NonConvergence { iterations: nodes, error: residual });
    }
    Ok(LPath::assemble(flow, red.sigma, taus, ambient, velocities, seg, residual))
}

/// `Q(x, τ_1; y, τ_2)`, the 𝓛-length of the 𝓛-geodesic.
pub fn l_distance(flow: &ScaleFlow, x: &SamplePoint, tau1: f64, y: &SamplePoint, tau2: f64) -> Result<f64> {
    Ok(l_geodesic(flow, x, tau1, y, tau2)?.length())
}

/// Closed form of `Q` on the exact backward Ricci flow. With
/// `I(τ) = ∫ dτ / (√τ c)` the kinetic part is `d_std² / (I(τ_2) − I(τ_1))`;
/// the curvature part is `∫ √τ R dτ`.
pub fn l_distance_closed_form(flow: &ScaleFlow, x: &SamplePoint, tau1: f64, y: &SamplePoint, tau2: f64) -> Result<f64> {
    check_interval(flow, tau1, tau2)?;
    if !flow.is_backward_ricci() {
        return Err(Error::NotRicciFlow);
    }
    let (a, b) = q_coefficients_exact(flow, tau1, tau2);
    let theta = std_distance(x, y);
    Ok(a + b * theta * theta)
}

fn q_coefficients_exact(flow: &ScaleFlow, tau1: f64, tau2: f64) -> (f64, f64) {
    let c0 = flow.c0();
    let (u1, u2) = (tau1.sqrt(), tau2.sqrt());
    match flow.model() {
        Model::Sphere2 => {
            let slope = 2.0 * (DIM_F - 1.0);
            let k = (slope / c0).sqrt();
            let at = |u: f64| (u * k).atan();
            let di = 2.0 / (c0 * slope).sqrt() * (at(u2) - at(u1));
            // ∫ √τ R dτ with R = n(n−1)/c and u = √τ
            let r = DIM_F * (DIM_F - 1.0);
            let qr = r * (2.0 / slope) * ((u2 - u1) - (at(u2) - at(u1)) / k);
            (qr, 1.0 / di)
        }
        Model::Torus2 => (0.0, c0 / (2.0 * (u2 - u1))),
    }
}

/// `𝒦 = ∫ τ^{3/2} H(X) dτ` with `H = −∂_τR − R/τ − 2⟨∇R, X⟩ + 2Ric(X, X)`.
pub fn harnack_k(flow: &ScaleFlow, path: &LPath) -> Result<f64> {
    check_interval(flow, path.tau1(), path.tau2())?;
    Ok(integrate(path, |t, v2| t.powf(1.5) * harnack_integrand(flow, t, v2)))
}

/// `H(X)` at time `t` for standard speed squared `v2`; `∇R = 0` here.
fn harnack_integrand(flow: &ScaleFlow, t: f64, v2: f64) -> f64 {
    let c = flow.scale_at(t);
    let r = flow.scalar_curvature_at(t);
    let dr = match flow.model() {
        Model::Sphere2 => -DIM_F * (DIM_F - 1.0) * flow.scale_rate_at(t) / (c * c),
        Model::Torus2 => 0.0,
    };
    // Ric(X, X) = ρ g_τ(X, X) = ρ c |X|²_std
    -dr - r / t + 2.0 * flow.ricci_factor_at(t) * c * v2
}

/// `|τ_1 ∂_{τ_1}Q + τ_2 ∂_{τ_2}Q − (2τ_2^{3/2}R(τ_2) − 2τ_1^{3/2}R(τ_1) + 𝒦 − ½𝓛)|`
/// with central differences of relative step `h` on the left.
pub fn partl_residual(flow: &ScaleFlow, x: &SamplePoint, tau1: f64, y: &SamplePoint, tau2: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) || tau1 * (1.0 + h) >= tau2 * (1.0 - h) {
        return Err(Error::InvalidParameter(format!("step {h} too large for [{tau1}, {tau2}]")));
    }
    let q = |a: f64, b: f64| l_distance(flow, x, a, y, b);
    let d1 = (q(tau1 * (1.0 + h), tau2)? - q(tau1 * (1.0 - h), tau2)?) / (2.0 * h);
    let d2 = (q(tau1, tau2 * (1.0 + h))? - q(tau1, tau2 * (1.0 - h))?) / (2.0 * h);
    let path = l_geodesic(flow, x, tau1, y, tau2)?;
    let rhs = 2.0 * tau2.powf(1.5) * flow.scalar_curvature_at(tau2) - 2.0 * tau1.powf(1.5) * flow.scalar_curvature_at(tau1)
        + harnack_k(flow, &path)?
        - 0.5 * path.length();
    Ok((d1 + d2 - rhs).abs())
}

/// Frames `Y_i` along a path, solving `∇_X Y = −Ric(Y, ·) + Y/(2τ)` from
/// `⟨Y_i, Y_j⟩_{g_{τ_1}} = τ_1 δ_ij`.
#[derive(Debug, Clone)]
pub struct FrameTransport {
    pub taus: Vec<f64>,
    /// Ambient standard-metric vectors at each path node; the last one is
    /// the (initial) tangent direction of the path.
    pub frames: Vec<[Vec3; DIM]>,
    /// `max |⟨Y_i, Y_j⟩_{g_τ} − τ δ_ij|` over the nodes.
    pub invariant_defect: f64,
}

pub fn frame_transport(flow: &ScaleFlow, path: &LPath) -> Result<FrameTransport> {
    check_interval(flow, path.tau1(), path.tau2())?;
    let t1 = path.tau1();
    let scale = (t1 / flow.scale_at(t1)).sqrt();
    let mut y = [path.segment.normal() * scale, path.segment.tangent(0.0) * scale];
    let model = flow.model();
    let rhs = |s: f64, y: &Vec3| -> Vec3 {
        let t = s.exp();
        let v = path.velocity_at(s);
        let mut dy = y * (1.0 / (2.0 * t) - flow.ricci_factor_at(t));
        if model == Model::Sphere2 {
            let p = path.position_at(s);
            dy -= p * y.dot(&v);
        }
        // d/dσ = τ d/dτ
        dy * t
    };
    let mut frames = Vec::with_capacity(path.sigma.len());
    frames.push(y);
    for k in 0..path.sigma.len() - 1 {
        let (a, b) = (path.sigma[k], path.sigma[k + 1]);
        let h = (b - a) / FRAME_SUBSTEPS as f64;
        for step in 0..FRAME_SUBSTEPS {
            let s = a + step as f64 * h;
            for yi in y.iter_mut() {
                let k1 = rhs(s, yi);
                let k2 = rhs(s + h / 2.0, &(*yi + k1 * (h / 2.0)));
                let k3 = rhs(s + h / 2.0, &(*yi + k2 * (h / 2.0)));
                let k4 = rhs(s + h, &(*yi + k3 * h));
                *yi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
        }
        frames.push(y);
    }
    let mut defect = 0.0f64;
    for (t, f) in path.taus.iter().zip(&frames) {
        let c = flow.scale_at(*t);
        for i in 0..DIM {
            for j in 0..DIM {
                let target = if i == j { *t } else { 0.0 };
                defect = defect.max((c * f[i].dot(&f[j]) - target).abs());
            }
        }
    }
    Ok(FrameTransport { taus: path.taus.clone(), frames, invariant_defect: defect })
}

/// Both sides of the summed second-variation inequality for `Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummedVariation {
    /// `Σ_i` coupled second differences of `Q` along `exp(rY_i)`.
    pub lhs: f64,
    /// `n(√τ_2 − √τ_1) − (2τ_2^{3/2}R(τ_2) − 2τ_1^{3/2}R(τ_1)) − 𝒦`.
    pub rhs: f64,
}

impl SummedVariation {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs <= self.rhs + tol
    }
}

pub fn summed_variation_check(
    flow: &ScaleFlow,
    x: &SamplePoint,
    tau1: f64,
    y: &SamplePoint,
    tau2: f64,
    h: f64,
) -> Result<SummedVariation> {
    let path = l_geodesic(flow, x, tau1, y, tau2)?;
    let frames = frame_transport(flow, &path)?;
    let (y1, y2) = (frames.frames[0], frames.frames[frames.frames.len() - 1]);
    let model = flow.model();
    let (xa, ya) = (x.ambient(), y.ambient());
    let q0 = path.length();
    let mut lhs = 0.0;
    for i in 0..DIM {
        let mut sum = -2.0 * q0;
        for sign in [1.0, -1.0] {
            let xr = SamplePoint::from_ambient(model, &exp_ambient(model, &xa, &(y1[i] * (sign * h))));
            let yr = SamplePoint::from_ambient(model, &exp_ambient(model, &ya, &(y2[i] * (sign * h))));
            sum += l_distance(flow, &xr, tau1, &yr, tau2)?;
        }
        lhs += sum / (h * h);
    }
    let rhs = DIM_F * (tau2.sqrt() - tau1.sqrt())
        - (2.0 * tau2.powf(1.5) * flow.scalar_curvature_at(tau2) - 2.0 * tau1.powf(1.5) * flow.scalar_curvature_at(tau1))
        - harnack_k(flow, &path)?;
    Ok(SummedVariation { lhs, rhs })
}

/// `Q(x, τ_1; y, τ_2) = a + b θ²` with `θ` the standard-metric angle, since
/// the curvature term does not depend on the endpoints. `a` and `b` come
/// from two computed 𝓛-geodesics and are cross-checked on a third.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QStructure {
    pub tau1: f64,
    pub tau2: f64,
    pub a: f64,
    pub b: f64,
}

impl QStructure {
    pub fn new(flow: &ScaleFlow, tau1: f64, tau2: f64) -> Result<Self> {
        let (o, p, check) = match flow.model() {
            Model::Sphere2 => (SamplePoint::sphere(0.0, 0.0), SamplePoint::sphere(1.0, 0.0), SamplePoint::sphere(2.2, 1.0)),
            Model::Torus2 => (SamplePoint::torus(0.0, 0.0), SamplePoint::torus(0.25, 0.0), SamplePoint::torus(0.1, 0.3)),
        };
        let a = l_distance(flow, &o, tau1, &o, tau2)?;
        let th = std_distance(&o, &p);
        let b = (l_distance(flow, &o, tau1, &p, tau2)? - a) / (th * th);
        let s = QStructure { tau1, tau2, a, b };
        let direct = l_distance(flow, &o, tau1, &check, tau2)?;
        let err = (s.eval(&o, &check) - direct).abs();
        if err > 1e-9 * (1.0 + direct.abs()) {
            return Err(Error::NonConvergence { iterations: 0, error: err });
        }
        Ok(s)
    }

    pub fn eval(&self, x: &SamplePoint, y: &SamplePoint) -> f64 {
        let th = std_distance(x, y);
        self.a + self.b * th * th
    }
}

/// `QStructure` values keyed by `(τ_1, τ_2)`.
#[derive(Debug, Default)]
pub struct QCache {
    entries: HashMap<(u64, u64), QStructure>,
}

impl QCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, flow: &ScaleFlow, tau1: f64, tau2: f64) -> Result<QStructure> {
        let key = (tau1.to_bits(), tau2.to_bits());
        if let Some(s) = self.entries.get(&key) {
            return Ok(*s);
        }
        let s = QStructure::new(flow, tau1, tau2)?;
        self.entries.insert(key, s);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `V(ν_1, τ_1; ν_2, τ_2)` with the duality gap of the inner solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LWasserstein {
    pub value: f64,
    pub gap: f64,
}

pub fn l_wasserstein(
    flow: &ScaleFlow,
    nu1: &DiscreteMeasure,
    tau1: f64,
    nu2: &DiscreteMeasure,
    tau2: f64,
    cache: &mut QCache,
) -> Result<LWasserstein> {
    for p in nu1.points().iter().chain(nu2.points()) {
        flow.check_model(p)?;
    }
    let q = cache.get(flow, tau1, tau2)?;
    let table = CostMatrix::from_fn(nu1.len(), nu2.len(), |i, j| Ok(q.eval(&nu1.points()[i], &nu2.points()[j])))?;
    let sol = solve_exact(&table, nu1.weights(), nu2.weights())?;
    let gap = duality_gap(&table, &sol.plan, &sol.potentials, nu1.weights(), nu2.weights());
    Ok(LWasserstein { value: sol.value, gap })
}

/// Exponential clock `τ_i(s) = τ̄_i e^s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LClock {
    pub tau_bar: [f64; 2],
    pub s_range: (f64, f64),
}

impl LClock {
    pub fn new(flow: &ScaleFlow, tau_bar1: f64, tau_bar2: f64, s_range: (f64, f64)) -> Result<Self> {
        if !(tau_bar1 > 0.0) || !(tau_bar2 > tau_bar1) {
            return Err(Error::InvalidParameter(format!(
                "clock needs 0 < tau_bar1 < tau_bar2, got {tau_bar1}, {tau_bar2}"
            )));
        }
        if !(s_range.1 >= s_range.0) {
            return Err(Error::InvalidParameter("empty s-range".into()));
        }
        let clock = Self { tau_bar: [tau_bar1, tau_bar2], s_range };
        for s in [s_range.0, s_range.1] {
            let (t1, t2) = clock.taus(s);
            flow.check_time(t1)?;
            flow.check_time(t2)?;
        }
        Ok(clock)
    }

    pub fn taus(&self, s: f64) -> (f64, f64) {
        (self.tau_bar[0] * s.exp(), self.tau_bar[1] * s.exp())
    }

    pub fn tau(&self, side: usize, s: f64) -> f64 {
        self.tau_bar[side] * s.exp()
    }

    fn check_s(&self, s: f64) -> Result<()> {
        let (lo, hi) = self.s_range;
        let slack = 1e-12 * (1.0 + hi.abs().max(lo.abs()));
        if s >= lo - slack && s <= hi + slack {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("s = {s} outside clock range [{lo}, {hi}]")))
        }
    }
}

/// One point of the `Θ(s)` curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSample {
    pub s: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub v: f64,
    pub theta: f64,
    /// `√τ_2 − √τ_1`.
    pub dsqrt: f64,
    pub gap: f64,
}

/// `Θ(s) = 2(√τ_2 − √τ_1) V − 2n(√τ_2 − √τ_1)²` for the diffusions started
/// from `u1`, `u2`, read at `τ_1(s)`, `τ_2(s)` and discretized on `cloud`.
pub fn theta(
    flow: &ScaleFlow,
    clock: &LClock,
    u1: &SpectralDensity,
    u2: &SpectralDensity,
    cloud: &PointCloud,
    s: f64,
    cache: &mut QCache,
) -> Result<ThetaSample> {
    if !flow.is_backward_ricci() {
        return Err(Error::NotRicciFlow);
    }
    clock.check_s(s)?;
    let (tau1, tau2) = clock.taus(s);
    let nu1 = density_values(&evolve_conjugate(flow, u1, tau1)?, cloud, flow, tau1)?;
    let nu2 = density_values(&evolve_conjugate(flow, u2, tau2)?, cloud, flow, tau2)?;
    let lw = l_wasserstein(flow, &nu1, tau1, &nu2, tau2, cache)?;
    let dsqrt = tau2.sqrt() - tau1.sqrt();
    let theta = 2.0 * dsqrt * lw.value - 2.0 * DIM_F * dsqrt * dsqrt;
    Ok(ThetaSample { s, tau1, tau2, v: lw.value, theta, dsqrt, gap: lw.gap })
}

/// Dual evolution in the clock variable, `−∂_s f = τ_i(s) Δ_{τ_i(s)} f`, from
/// `s_from` down to `s_to` for the potential attached to `τ_i` (`side` 0 or 1).
pub fn evolve_dual_lclock(
    flow: &ScaleFlow,
    f: &ScalarField,
    clock: &LClock,
    side: usize,
    s_from: f64,
    s_to: f64,
) -> Result<ScalarField> {
    if side > 1 {
        return Err(Error::InvalidParameter(format!("clock side must be 0 or 1, got {side}")));
    }
    clock.check_s(s_from)?;
    clock.check_s(s_to)?;
    if s_to > s_from {
        return Err(Error::IllPosedDirection { from: s_from, to: s_to });
    }
    let (t_from, t_to) = (clock.tau(side, s_from), clock.tau(side, s_to));
    f.spectrum().check_clock(t_from)?;
    // ∫ τ(s)/c(τ(s)) ds = ∫ dτ / c
    let integral = inverse_scale_integral(flow, t_to, t_from)?;
    Ok(ScalarField::new(f.spectrum().map_modes(t_to, |lambda| (-lambda * integral).exp())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::Spectrum;
    use crate::quadrature::adaptive_simpson;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn torus() -> ScaleFlow {
        ScaleFlow::backward_ricci(Model::Torus2, 1.0, 0.0, (0.0, 3.0)).unwrap()
    }
    fn sphere() -> ScaleFlow {
        ScaleFlow::backward_ricci(Model::Sphere2, 1.0, 0.0, (0.0, 3.0)).unwrap()
    }

    #[test]
    fn flat_straight_path_length() {
        let flow = torus();
        let (t1, t2) = (0.3f64, 1.7f64);
        let d = 0.4;
        // constant speed in √τ
        let du = t2.sqrt() - t1.sqrt();
        let path = LPath::from_fn(&flow, t1, t2, 48, |t| {
            let f = (t.sqrt() - t1.sqrt()) / du;
            (Vec3::new(f * d, 0.0, 0.0), Vec3::new(d / (2.0 * t.sqrt() * du), 0.0, 0.0))
        })
        .unwrap();
        let expected = d * d / (2.0 * du);
        assert!((path.length() - expected).abs() < 1e-12);
        assert!((l_length(&flow, &path).unwrap() - path.length()).abs() < 1e-14);
    }

    #[test]
    fn constant_paths() {
        let flow = torus();
        let p = SamplePoint::torus(0.2, 0.7).ambient();
        let path = LPath::from_fn(&flow, 0.5, 1.0, 16, |_| (p, Vec3::zeros())).unwrap();
        assert_eq!(path.length(), 0.0);

        let flow = sphere();
        let p = SamplePoint::sphere(0.4, 0.1).ambient();
        let path = LPath::from_fn(&flow, 0.5, 1.0, 32, |_| (p, Vec3::zeros())).unwrap();
        let oracle = adaptive_simpson(&|t: f64| t.sqrt() * 2.0 / (1.0 + 2.0 * t), 0.5, 1.0, 1e-14);
        assert!((path.length() - oracle).abs() < 1e-12);
        let k = harnack_k(&flow, &path).unwrap();
        let oracle_k = adaptive_simpson(
            &|t: f64| {
                let c = 1.0 + 2.0 * t;
                t.powf(1.5) * (4.0 / (c * c) - 2.0 / (c * t))
            },
            0.5,
            1.0,
            1e-14,
        );
        assert!((k - oracle_k).abs() < 1e-12);
    }

    #[test]
    fn geodesic_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for flow in [torus(), sphere()] {
            for _ in 0..10 {
                let (x, y) = match flow.model() {
                    Model::Torus2 => (SamplePoint::torus(rng.gen(), rng.gen()), SamplePoint::torus(rng.gen(), rng.gen())),
                    Model::Sphere2 => (
                        SamplePoint::sphere(rng.gen_range(0.1..1.5), rng.gen_range(0.0..6.0)),
                        SamplePoint::sphere(rng.gen_range(0.1..1.5), rng.gen_range(0.0..6.0)),
                    ),
                };
                if flow.cut_margin(&x, &y) < 0.1 {
                    continue;
                }
                let t1 = rng.gen_range(0.05..1.0);
                let t2 = t1 + rng.gen_range(0.1..1.5);
                let path = l_geodesic(&flow, &x, t1, &y, t2).unwrap();
                let q = l_distance_closed_form(&flow, &x, t1, &y, t2).unwrap();
                assert!((path.length() - q).abs() < 1e-10 * (1.0 + q), "{} vs {q}", path.length());
                assert!(path.residual() <= RESIDUAL_TOL);
                let pts = path.points();
                assert!(std_distance(&pts[0], &x) < 1e-12);
                assert!(std_distance(&pts[pts.len() - 1], &y) < 1e-12);
            }
        }
    }

    #[test]
    fn flat_speed_decays_like_inverse_root() {
        let flow = torus();
        let path = l_geodesic(&flow, &SamplePoint::torus(0.1, 0.1), 0.2, &SamplePoint::torus(0.3, 0.2), 1.4).unwrap();
        let ref_speed = path.velocities()[0].norm() * 0.2f64.sqrt();
        for (t, v) in path.taus().iter().zip(path.velocities()) {
            assert!((v.norm() * t.sqrt() - ref_speed).abs() < 1e-10);
        }
    }

    #[test]
    fn harnack_identity_residual_is_second_order() {
        for flow in [torus(), sphere()] {
            let (x, y) = match flow.model() {
                Model::Torus2 => (SamplePoint::torus(0.1, 0.1), SamplePoint::torus(0.4, 0.3)),
                Model::Sphere2 => (SamplePoint::sphere(0.3, 0.0), SamplePoint::sphere(1.7, 2.0)),
            };
            let hs = [0.04, 0.02, 0.01, 0.005];
            let res: Vec<f64> = hs.iter().map(|&h| partl_residual(&flow, &x, 0.4, &y, 1.3, h).unwrap()).collect();
            assert!(partl_residual(&flow, &x, 0.4, &y, 1.3, 1e-3).unwrap() < 1e-4, "{res:?}");
            let slope = crate::coupling::convergence_slope(&hs, &res);
            assert!((1.7..=2.3).contains(&slope), "slope {slope} {res:?}");
        }
    }

    #[test]
    fn frame_invariant() {
        for flow in [torus(), sphere()] {
            let (x, y) = match flow.model() {
                Model::Torus2 => (SamplePoint::torus(0.1, 0.1), SamplePoint::torus(0.4, 0.3)),
                Model::Sphere2 => (SamplePoint::sphere(0.3, 0.0), SamplePoint::sphere(1.7, 2.0)),
            };
            let path = l_geodesic(&flow, &x, 0.3, &y, 1.9).unwrap();
            let fr = frame_transport(&flow, &path).unwrap();
            assert!(fr.invariant_defect < 1e-8, "{}", fr.invariant_defect);
            if flow.model() == Model::Torus2 {
                let last = fr.frames[fr.frames.len() - 1];
                let scale = (1.9f64 / 0.3).sqrt();
                for i in 0..DIM {
                    assert!((last[i] - fr.frames[0][i] * scale).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn summed_variation_inequality() {
        let flow = torus();
        let sv = summed_variation_check(&flow, &SamplePoint::torus(0.1, 0.1), 0.5, &SamplePoint::torus(0.3, 0.2), 1.0, 1e-3)
            .unwrap();
        let expected = 2.0 * (1.0 - 0.5f64.sqrt());
        assert!((sv.rhs - expected).abs() < 1e-12);
        assert!((sv.lhs - expected).abs() < 1e-5);
        let flow = sphere();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let x = SamplePoint::sphere(rng.gen_range(0.2..2.9), rng.gen_range(0.0..6.0));
            let y = SamplePoint::sphere(rng.gen_range(0.2..2.9), rng.gen_range(0.0..6.0));
            if flow.cut_margin(&x, &y) < 0.2 {
                continue;
            }
            let sv = summed_variation_check(&flow, &x, 0.5, &y, 1.2, 1e-3).unwrap();
            assert!(sv.holds(1e-4), "{sv:?}");
        }
    }

    #[test]
    fn q_structure_and_cache() {
        let flow = sphere();
        let mut cache = QCache::new();
        let s = cache.get(&flow, 0.5, 1.0).unwrap();
        let _ = cache.get(&flow, 0.5, 1.0).unwrap();
        assert_eq!(cache.len(), 1);
        let x = SamplePoint::sphere(0.9, 0.3);
        let y = SamplePoint::sphere(2.0, 4.0);
        let direct = l_distance(&flow, &x, 0.5, &y, 1.0).unwrap();
        assert!((s.eval(&x, &y) - direct).abs() < 1e-10);
    }

    #[test]
    fn theta_of_coincident_diracs() {
        let flow = torus();
        let mut cache = QCache::new();
        let p = DiscreteMeasure::dirac(SamplePoint::torus(0.3, 0.3));
        let (t1, t2) = (0.5f64, 1.0f64);
        let v = l_wasserstein(&flow, &p, t1, &p, t2, &mut cache).unwrap();
        assert!(v.value.abs() < 1e-12);
        let dsqrt = t2.sqrt() - t1.sqrt();
        let th = 2.0 * dsqrt * v.value - 2.0 * DIM_F * dsqrt * dsqrt;
        assert!((th + 4.0 * dsqrt * dsqrt).abs() < 1e-12);
    }

    #[test]
    fn dual_clock_single_mode() {
        let flow = torus();
        let clock = LClock::new(&flow, 0.5, 1.0, (0.0, 0.7)).unwrap();
        let l = 2;
        let side = 2 * l + 1;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); side * side];
        let idx = crate::diffusion::fourier_index(l, 1, 0);
        coeffs[idx] = Complex64::new(0.5, 0.0);
        coeffs[crate::diffusion::fourier_index(l, -1, 0)] = Complex64::new(0.5, 0.0);
        let f = ScalarField::new(Spectrum::fourier(l, clock.tau(0, 0.7), coeffs).unwrap());
        let g = evolve_dual_lclock(&flow, &f, &clock, 0, 0.7, 0.2).unwrap();
        let lambda = 4.0 * std::f64::consts::PI.powi(2);
        let expected = 0.5 * (-lambda * (0.5 * 0.7f64.exp() - 0.5 * 0.2f64.exp())).exp();
        match g.spectrum().coefficients() {
            crate::diffusion::Coefficients::Fourier(a) => assert!((a[idx].re - expected).abs() < 1e-14),
            _ => unreachable!(),
        }
        assert!(evolve_dual_lclock(&flow, &f, &clock, 0, 0.2, 0.7).is_err());
    }
}
