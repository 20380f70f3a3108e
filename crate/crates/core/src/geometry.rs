//! Model evolving geometries `g_τ = c(τ)·g_std` on the round 2-sphere and the
//! flat 2-torus.
//!
//! Points are carried in ambient coordinates internally: unit vectors in R³
//! for the sphere, `(x, y, 0)` with `x, y ∈ [0, 1)` for the torus. Tangent
//! vectors are ambient vectors measured in the *standard* metric; their
//! `g_τ`-length is `√c(τ)` times the Euclidean length.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_on;

/// Manifold dimension. Formulas keep the symbolic `(DIM - 1)`.
pub const DIM: usize = 2;

const DIM_F: f64 = DIM as f64;

/// Default guard band around the cut locus, in standard-metric units.
pub const DEFAULT_CUT_GUARD: f64 = 0.05;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Sphere2,
    Torus2,
}

impl Model {
    /// Standard-metric volume (4π for the unit sphere, 1 for the unit torus).
    pub fn std_volume(self) -> f64 {
        match self {
            Model::Sphere2 => 4.0 * PI,
            Model::Torus2 => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Model::Sphere2 => "sphere",
            Model::Torus2 => "torus",
        }
    }
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(Error::InvalidParameter(
                "monotone interpolation needs at least two (tau, value) samples".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) || knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("tau samples must increase strictly".into()));
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (values[k + 1] - values[k]) / h[k]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = delta[0];
            slopes[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                let (d0, d1) = (delta[k - 1], delta[k]);
                if d0 * d1 <= 0.0 {
                    slopes[k] = 0.0;
                } else {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    slopes[k] = (w1 + w2) / (w1 / d0 + w2 / d1);
                }
            }
            slopes[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { knots, values, slopes })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    /// Value and first derivative at `t` (clamped to the knot range).
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let n = self.knots.len();
        let t = t.clamp(self.knots[0], self.knots[n - 1]);
        let k = match self.knots.partition_point(|&x| x <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let h = self.knots[k + 1] - self.knots[k];
        let s = (t - self.knots[k]) / h;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1;
        let dv = ((6.0 * s2 - 6.0 * s) * y0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * y1
            + (3.0 * s2 - 2.0 * s) * m1)
            / h;
        (v, dv)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScaleLaw {
    /// `c(τ) = c0 + 2(n−1)τ` on the sphere, `c ≡ c0` on the torus.
    ExactBackwardRicci,
    /// Sampled scale factor with monotone cubic interpolation.
    UserScale(MonotoneCubic),
}

/// A scale-factor family `g_τ = c(τ) g_std` together with the curvature
/// constant `K` of the super-Ricci condition it is meant to satisfy.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleFlow {
    model: Model,
    c0: f64,
    k: f64,
    law: ScaleLaw,
    domain: (f64, f64),
    cut_guard: f64,
}

impl ScaleFlow {
    /// Exact backward Ricci flow starting from scale `c0` at τ = 0.
    pub fn backward_ricci(model: Model, c0: f64, k: f64, domain: (f64, f64)) -> Result<Self> {
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(Error::InvalidParameter(format!("c0 must be positive, got {c0}")));
        }
        check_domain(domain)?;
        Ok(Self { model, c0, k, law: ScaleLaw::ExactBackwardRicci, domain, cut_guard: DEFAULT_CUT_GUARD })
    }

    /// Flow given by samples of `c(τ)`; the domain is the sample range.
    pub fn user_scale(model: Model, taus: Vec<f64>, values: Vec<f64>, k: f64) -> Result<Self> {
        if values.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
            return Err(Error::InvalidParameter("scale samples must be positive".into()));
        }
        let interp = MonotoneCubic::new(taus, values)?;
        let domain = interp.domain();
        check_domain(domain)?;
        let c0 = interp.values()[0];
        Ok(Self { model, c0, k, law: ScaleLaw::UserScale(interp), domain, cut_guard: DEFAULT_CUT_GUARD })
    }

    pub fn with_cut_guard(mut self, guard: f64) -> Result<Self> {
        if !(guard >= 0.0) || guard >= 0.5 {
            return Err(Error::InvalidParameter(format!("cut guard {guard} out of range")));
        }
        self.cut_guard = guard;
        Ok(self)
    }

    /// Rejects the flow unless `super_ricci_margin(τ) ≥ 0` on every grid time.
    pub fn require_super_ricci(self, grid: &[f64]) -> Result<Self> {
        for &tau in grid {
            let m = self.super_ricci_margin(tau)?;
            if m < -1e-12 {
                return Err(Error::NotSuperRicci { k: self.k, tau, margin: m });
            }
        }
        Ok(self)
    }

    pub fn model(&self) -> Model {
        self.model
    }
    pub fn c0(&self) -> f64 {
        self.c0
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn law(&self) -> &ScaleLaw {
        &self.law
    }
    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }
    pub fn cut_guard(&self) -> f64 {
        self.cut_guard
    }
    pub fn is_backward_ricci(&self) -> bool {
        matches!(self.law, ScaleLaw::ExactBackwardRicci)
    }

    pub fn check_time(&self, tau: f64) -> Result<()> {
        let (lo, hi) = self.domain;
        let slack = 1e-12 * (1.0 + hi.abs());
        if tau.is_finite() && tau >= lo - slack && tau <= hi + slack {
            Ok(())
        } else {
            Err(Error::OutsideDomain { tau, lo, hi })
        }
    }

    /// `c(τ)`.
    pub fn metric_scale(&self, tau: f64) -> Result<f64> {
        self.check_time(tau)?;
        Ok(self.scale_at(tau))
    }

    /// `c′(τ)`.
    pub fn metric_scale_derivative(&self, tau: f64) -> Result<f64> {
        self.check_time(tau)?;
        Ok(self.scale_rate_at(tau))
    }

    pub(crate) fn scale_at(&self, tau: f64) -> f64 {
        match &self.law {
            ScaleLaw::ExactBackwardRicci => match self.model {
                Model::Sphere2 => self.c0 + 2.0 * (DIM_F - 1.0) * tau,
                Model::Torus2 => self.c0,
            },
            ScaleLaw::UserScale(interp) => interp.eval(tau).0,
        }
    }

    pub(crate) fn scale_rate_at(&self, tau: f64) -> f64 {
        match &self.law {
            ScaleLaw::ExactBackwardRicci => match self.model {
                Model::Sphere2 => 2.0 * (DIM_F - 1.0),
                Model::Torus2 => 0.0,
            },
            ScaleLaw::UserScale(interp) => interp.eval(tau).1,
        }
    }

    /// Scalar `m(τ)` with `−∂_τ g + 2Ric ≥ 2K g` at τ iff `m(τ) ≥ 0`.
    pub fn super_ricci_margin(&self, tau: f64) -> Result<f64> {
        self.check_time(tau)?;
        let c = self.scale_at(tau);
        let dc = self.scale_rate_at(tau);
        Ok(match self.model {
            Model::Sphere2 => -dc + 2.0 * (DIM_F - 1.0) - 2.0 * self.k * c,
            Model::Torus2 => -dc - 2.0 * self.k * c,
        })
    }

    /// Scalar curvature of `g_τ` (constant in space).
    pub fn scalar_curvature(&self, tau: f64) -> Result<f64> {
        self.check_time(tau)?;
        Ok(self.scalar_curvature_at(tau))
    }

    pub(crate) fn scalar_curvature_at(&self, tau: f64) -> f64 {
        match self.model {
            Model::Sphere2 => DIM_F * (DIM_F - 1.0) / self.scale_at(tau),
            Model::Torus2 => 0.0,
        }
    }

    /// `ρ(τ)` with `Ric(g_τ) = ρ(τ) g_τ`.
    pub fn ricci_factor(&self, tau: f64) -> Result<f64> {
        self.check_time(tau)?;
        Ok(self.ricci_factor_at(tau))
    }

    pub(crate) fn ricci_factor_at(&self, tau: f64) -> f64 {
        match self.model {
            Model::Sphere2 => (DIM_F - 1.0) / self.scale_at(tau),
            Model::Torus2 => 0.0,
        }
    }

    /// `d_τ(x, y) = √c(τ) · d_std(x, y)`.
    pub fn distance(&self, tau: f64, x: &SamplePoint, y: &SamplePoint) -> Result<f64> {
        self.check_model(x)?;
        self.check_model(y)?;
        Ok(self.metric_scale(tau)?.sqrt() * std_distance(x, y))
    }

    pub(crate) fn check_model(&self, p: &SamplePoint) -> Result<()> {
        if p.model() == self.model {
            Ok(())
        } else {
            Err(Error::ModelMismatch(format!(
                "{} point on a {} flow",
                p.model().name(),
                self.model.name()
            )))
        }
    }

    /// Standard-metric distance from `y` to the cut locus of `x`.
    pub fn cut_margin(&self, x: &SamplePoint, y: &SamplePoint) -> f64 {
        cut_margin_ambient(self.model, &x.ambient(), &y.ambient())
    }

    fn check_cut(&self, x: &Vec3, y: &Vec3) -> Result<()> {
        let margin = cut_margin_ambient(self.model, x, y);
        if margin < self.cut_guard {
            Err(Error::CutLocus { margin, guard: self.cut_guard })
        } else {
            Ok(())
        }
    }

    /// Point at fraction `t` along the minimizing geodesic from `x` to `y`.
    pub fn geodesic_point(&self, tau: f64, x: &SamplePoint, y: &SamplePoint, t: f64) -> Result<SamplePoint> {
        self.check_time(tau)?;
        self.check_model(x)?;
        self.check_model(y)?;
        if t == 0.0 {
            return Ok(*x);
        }
        if t == 1.0 {
            return Ok(*y);
        }
        let (xa, ya) = (x.ambient(), y.ambient());
        if xa == ya {
            return Ok(*x);
        }
        self.check_cut(&xa, &ya)?;
        let seg = Segment::new(self.model, xa, ya);
        Ok(SamplePoint::from_ambient(self.model, &seg.point(t)))
    }

    /// `g_τ`-orthonormal frames at `x` and at `y` obtained by parallel
    /// transport along the minimizing geodesic; the last vector is the unit
    /// tangent of the geodesic.
    pub fn parallel_frame(&self, tau: f64, x: &SamplePoint, y: &SamplePoint) -> Result<ParallelFrame> {
        self.check_time(tau)?;
        self.check_model(x)?;
        self.check_model(y)?;
        let (xa, ya) = (x.ambient(), y.ambient());
        self.frame_ambient(tau, &xa, &ya)
    }

    pub(crate) fn frame_ambient(&self, tau: f64, xa: &Vec3, ya: &Vec3) -> Result<ParallelFrame> {
        if xa == ya {
            return Err(Error::DiagonalPair { distance: 0.0, step: 0.0 });
        }
        self.check_cut(xa, ya)?;
        let seg = Segment::new(self.model, *xa, *ya);
        let inv = 1.0 / self.scale_at(tau).sqrt();
        let normal = seg.normal();
        Ok(ParallelFrame {
            at_x: [normal * inv, seg.tangent(0.0) * inv],
            at_y: [normal * inv, seg.tangent(1.0) * inv],
        })
    }

    /// Exponential map of `g_τ` at `p` applied to the ambient tangent `v`.
    pub fn exp_map(&self, p: &SamplePoint, v: &Vec3) -> SamplePoint {
        SamplePoint::from_ambient(self.model, &exp_ambient(self.model, &p.ambient(), v))
    }

    /// `g_τ`-length of the variation curve `s ↦ exp_{γ(s)}(r E_i(s))`, where
    /// `E_i` (i < n−1) is a parallel normal field along the minimizing
    /// geodesic `γ` from `x` to `y`.
    pub fn variation_length(&self, tau: f64, x: &SamplePoint, y: &SamplePoint, i: usize, r: f64) -> Result<f64> {
        self.check_time(tau)?;
        let (xa, ya) = (x.ambient(), y.ambient());
        self.variation_length_ambient(tau, &xa, &ya, i, r)
    }

    pub(crate) fn variation_length_ambient(&self, tau: f64, xa: &Vec3, ya: &Vec3, i: usize, r: f64) -> Result<f64> {
        if i + 1 >= DIM {
            return Err(Error::InvalidParameter(format!("frame index {i} is not a normal direction")));
        }
        self.check_cut(xa, ya)?;
        let seg = Segment::new(self.model, *xa, *ya);
        let c = self.scale_at(tau);
        // std length of r E_i
        let a = r / c.sqrt();
        let (nodes, weights) = gauss_legendre_on(16, 0.0, 1.0);
        let mut len = 0.0;
        for (t, w) in nodes.iter().zip(&weights) {
            let g = seg.point(*t);
            let dg = seg.velocity(*t);
            let e = seg.normal();
            // parallel-transport equation for the ambient frame vector
            let de = match self.model {
                Model::Sphere2 => -g * e.dot(&dg),
                Model::Torus2 => Vec3::zeros(),
            };
            let dp = match self.model {
                Model::Sphere2 => dg * a.cos() + de * a.sin(),
                Model::Torus2 => dg + de * a,
            };
            len += w * dp.norm();
        }
        Ok(c.sqrt() * len)
    }
}

fn check_domain(domain: (f64, f64)) -> Result<()> {
    let (a, b) = domain;
    if !(a >= 0.0) || !(b > a) || !b.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid tau domain [{a}, {b}]")));
    }
    Ok(())
}

/// Frames `{E_i}` at `x` and `{E_i(d)}` at `y` as ambient vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParallelFrame {
    pub at_x: [Vec3; DIM],
    pub at_y: [Vec3; DIM],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SamplePoint {
    /// Colatitude θ ∈ [0, π], longitude φ ∈ [0, 2π).
    Sphere { theta: f64, phi: f64 },
    /// Coordinates in [0, 1)².
    Torus { x: f64, y: f64 },
}

impl SamplePoint {
    pub fn sphere(theta: f64, phi: f64) -> Self {
        SamplePoint::Sphere { theta: theta.clamp(0.0, PI), phi: phi.rem_euclid(2.0 * PI) }
    }

    pub fn torus(x: f64, y: f64) -> Self {
        SamplePoint::Torus { x: wrap_unit(x), y: wrap_unit(y) }
    }

    pub fn model(&self) -> Model {
        match self {
            SamplePoint::Sphere { .. } => Model::Sphere2,
            SamplePoint::Torus { .. } => Model::Torus2,
        }
    }

    pub fn ambient(&self) -> Vec3 {
        match *self {
            SamplePoint::Sphere { theta, phi } => {
                let s = theta.sin();
                Vec3::new(s * phi.cos(), s * phi.sin(), theta.cos())
            }
            SamplePoint::Torus { x, y } => Vec3::new(x, y, 0.0),
        }
    }

    pub fn from_ambient(model: Model, v: &Vec3) -> Self {
        match model {
            Model::Sphere2 => {
                let theta = v.x.hypot(v.y).atan2(v.z);
                let phi = v.y.atan2(v.x);
                SamplePoint::sphere(theta, phi)
            }
            Model::Torus2 => SamplePoint::torus(v.x, v.y),
        }
    }
}

fn wrap_unit(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Standard-metric geodesic distance.
pub fn std_distance(x: &SamplePoint, y: &SamplePoint) -> f64 {
    std_distance_ambient(x.model(), &x.ambient(), &y.ambient())
}

pub(crate) fn std_distance_ambient(model: Model, x: &Vec3, y: &Vec3) -> f64 {
    match model {
        Model::Sphere2 => x.cross(y).norm().atan2(x.dot(y)),
        Model::Torus2 => {
            let mut best = f64::INFINITY;
            for i in -1..=1 {
                for j in -1..=1 {
                    let dx = y.x + i as f64 - x.x;
                    let dy = y.y + j as f64 - x.y;
                    best = best.min(dx.hypot(dy));
                }
            }
            best
        }
    }
}

pub(crate) fn cut_margin_ambient(model: Model, x: &Vec3, y: &Vec3) -> f64 {
    match model {
        Model::Sphere2 => PI - std_distance_ambient(model, x, y),
        Model::Torus2 => {
            let d = torus_displacement(x, y);
            (0.5 - d.x.abs()).min(0.5 - d.y.abs())
        }
    }
}

/// Minimal-image displacement from `x` to `y` on the unit torus.
pub(crate) fn torus_displacement(x: &Vec3, y: &Vec3) -> Vec3 {
    let mut dx = y.x - x.x;
    let mut dy = y.y - x.y;
    dx -= dx.round();
    dy -= dy.round();
    Vec3::new(dx, dy, 0.0)
}

pub(crate) fn exp_ambient(model: Model, p: &Vec3, v: &Vec3) -> Vec3 {
    match model {
        Model::Sphere2 => {
            let a = v.norm();
            if a == 0.0 {
                return *p;
            }
            let q = p * a.cos() + v * (a.sin() / a);
            q / q.norm()
        }
        Model::Torus2 => {
            let q = p + v;
            Vec3::new(wrap_unit(q.x), wrap_unit(q.y), 0.0)
        }
    }
}

/// A minimizing geodesic segment parameterized by fraction `t ∈ [0, 1]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Segment {
    model: Model,
    start: Vec3,
    /// unit standard tangent at the start
    dir: Vec3,
    /// standard length
    length: f64,
}

impl Segment {
    pub(crate) fn new(model: Model, x: Vec3, y: Vec3) -> Self {
        match model {
            Model::Sphere2 => {
                let axis = x.cross(&y);
                let s = axis.norm();
                let length = s.atan2(x.dot(&y));
                let dir = if s > 0.0 {
                    let t = axis.cross(&x);
                    t / t.norm()
                } else {
                    any_orthogonal(&x)
                };
                Segment { model, start: x, dir, length }
            }
            Model::Torus2 => {
                let d = torus_displacement(&x, &y);
                let length = d.norm();
                let dir = if length > 0.0 { d / length } else { Vec3::new(1.0, 0.0, 0.0) };
                Segment { model, start: x, dir, length }
            }
        }
    }

    pub(crate) fn length(&self) -> f64 {
        self.length
    }

    /// Point at arclength fraction `t` (unwrapped on the torus).
    pub(crate) fn point_unwrapped(&self, t: f64) -> Vec3 {
        let a = t * self.length;
        match self.model {
            Model::Sphere2 => self.start * a.cos() + self.dir * a.sin(),
            Model::Torus2 => self.start + self.dir * a,
        }
    }

    pub(crate) fn point(&self, t: f64) -> Vec3 {
        let p = self.point_unwrapped(t);
        match self.model {
            Model::Sphere2 => p,
            Model::Torus2 => Vec3::new(wrap_unit(p.x), wrap_unit(p.y), 0.0),
        }
    }

    /// Unit standard tangent at fraction `t`.
    pub(crate) fn tangent(&self, t: f64) -> Vec3 {
        let a = t * self.length;
        match self.model {
            Model::Sphere2 => -self.start * a.sin() + self.dir * a.cos(),
            Model::Torus2 => self.dir,
        }
    }

    /// `dγ/dt` for the fraction parameter.
    pub(crate) fn velocity(&self, t: f64) -> Vec3 {
        self.tangent(t) * self.length
    }

    /// Unit normal, constant along the segment in ambient coordinates.
    pub(crate) fn normal(&self) -> Vec3 {
        match self.model {
            Model::Sphere2 => self.start.cross(&self.dir),
            Model::Torus2 => Vec3::new(-self.dir.y, self.dir.x, 0.0),
        }
    }
}

fn any_orthogonal(x: &Vec3) -> Vec3 {
    let trial = if x.z.abs() < 0.9 { Vec3::new(0.0, 0.0, 1.0) } else { Vec3::new(1.0, 0.0, 0.0) };
    let t = trial - x * x.dot(&trial);
    t / t.norm()
}

/// A weighted point set discretizing `dV_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    model: Model,
    points: Vec<SamplePoint>,
    weights: Vec<f64>,
}

impl PointCloud {
    pub fn new(model: Model, points: Vec<SamplePoint>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(Error::InvalidParameter("points and weights must have equal nonzero length".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidParameter("cloud weights must be positive".into()));
        }
        if points.iter().any(|p| p.model() != model) {
            return Err(Error::ModelMismatch("cloud point of the wrong model".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - model.std_volume()).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "cloud weights sum to {total}, expected {}",
                model.std_volume()
            )));
        }
        Ok(Self { model, points, weights })
    }

    /// Gauss–Legendre nodes in `cos θ` times equispaced longitudes.
    pub fn sphere_gauss(n_z: usize, n_phi: usize) -> Result<Self> {
        if n_z == 0 || n_phi == 0 {
            return Err(Error::InvalidParameter("empty sphere cloud".into()));
        }
        let (z, wz) = crate::quadrature::gauss_legendre(n_z);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut points = Vec::with_capacity(n_z * n_phi);
        let mut weights = Vec::with_capacity(n_z * n_phi);
        for (zi, wi) in z.iter().zip(&wz) {
            let theta = zi.acos();
            for j in 0..n_phi {
                points.push(SamplePoint::sphere(theta, j as f64 * dphi));
                weights.push(wi * dphi);
            }
        }
        Self::new(Model::Sphere2, points, weights)
    }

    /// Uniform `nx × ny` grid on the unit torus.
    pub fn torus_grid(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidParameter("empty torus cloud".into()));
        }
        let w = 1.0 / (nx * ny) as f64;
        let mut points = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                points.push(SamplePoint::torus(i as f64 / nx as f64, j as f64 / ny as f64));
            }
        }
        Self::new(Model::Torus2, points, vec![w; nx * ny])
    }

    /// Cloud of roughly `n` points: the sphere uses `n_phi` longitudes and
    /// `round(n / n_phi)` Gauss colatitudes, the torus the nearest square grid.
    pub fn with_size(model: Model, n: usize, n_phi: usize) -> Result<Self> {
        match model {
            Model::Sphere2 => {
                let n_phi = n_phi.max(1);
                let n_z = ((n as f64) / n_phi as f64).round().max(1.0) as usize;
                Self::sphere_gauss(n_z, n_phi)
            }
            Model::Torus2 => {
                let m = (n as f64).sqrt().round().max(1.0) as usize;
                Self::torus_grid(m, m)
            }
        }
    }

    pub fn model(&self) -> Model {
        self.model
    }
    pub fn points(&self) -> &[SamplePoint] {
        &self.points
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
}
