//! Spectral conjugate-heat and dual-heat evolutions on the model flows.
//!
//! Densities are taken with respect to `dV_τ = c(τ)^{n/2} dV_std`. Sphere
//! fields are zonal Legendre series `Σ a_ℓ P_ℓ(cos θ)`; torus fields are
//! Fourier series `Σ a_k e^{2πi k·x}` with `|k_1|, |k_2| ≤ L` and Hermitian
//! symmetric coefficients.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{Model, PointCloud, SamplePoint, ScaleFlow, ScaleLaw, DIM};
use crate::quadrature::{adaptive_simpson, bessel_i0_scaled, gauss_legendre, legendre_series};
use crate::transport::DiscreteMeasure;

pub const DEFAULT_SPHERE_BAND: usize = 48;
pub const DEFAULT_TORUS_BAND: usize = 16;
pub const DEFAULT_TRUNCATION_SLACK: f64 = 1e-6;
/// Mass defect above which a cloud is considered to under-resolve a density.
pub const MASS_DEFECT_LIMIT: f64 = 1e-4;

const CLOCK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    Zonal(Vec<f64>),
    /// Row-major `(2L+1)²` array indexed by `(k1 + L, k2 + L)`.
    Fourier(Vec<Complex64>),
}

/// Band-limited spectral field current at time `clock`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    model: Model,
    band_limit: usize,
    clock: f64,
    coeffs: Coefficients,
}

impl Spectrum {
    pub fn zonal(band_limit: usize, clock: f64, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != band_limit + 1 {
            return Err(Error::BandLimitMismatch { expected: band_limit + 1, found: coeffs.len() });
        }
        if coeffs.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter("non-finite spectral coefficient".into()));
        }
        Ok(Self { model: Model::Sphere2, band_limit, clock, coeffs: Coefficients::Zonal(coeffs) })
    }

    pub fn fourier(band_limit: usize, clock: f64, coeffs: Vec<Complex64>) -> Result<Self> {
        let side = 2 * band_limit + 1;
        if coeffs.len() != side * side {
            return Err(Error::BandLimitMismatch { expected: side * side, found: coeffs.len() });
        }
        if coeffs.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::InvalidParameter("non-finite spectral coefficient".into()));
        }
        Ok(Self { model: Model::Torus2, band_limit, clock, coeffs: Coefficients::Fourier(coeffs) })
    }

    pub fn zero(model: Model, band_limit: usize, clock: f64) -> Self {
        let coeffs = match model {
            Model::Sphere2 => Coefficients::Zonal(vec![0.0; band_limit + 1]),
            Model::Torus2 => {
                let side = 2 * band_limit + 1;
                Coefficients::Fourier(vec![Complex64::new(0.0, 0.0); side * side])
            }
        };
        Self { model, band_limit, clock, coeffs }
    }

    /// The constant function `value`.
    pub fn constant(model: Model, band_limit: usize, clock: f64, value: f64) -> Self {
        let mut s = Self::zero(model, band_limit, clock);
        s.set_mean_mode(value);
        s
    }

    fn set_mean_mode(&mut self, value: f64) {
        let l = self.band_limit;
        match &mut self.coeffs {
            Coefficients::Zonal(a) => a[0] = value,
            Coefficients::Fourier(a) => a[fourier_index(l, 0, 0)] = Complex64::new(value, 0.0),
        }
    }

    pub fn model(&self) -> Model {
        self.model
    }
    pub fn band_limit(&self) -> usize {
        self.band_limit
    }
    pub fn clock(&self) -> f64 {
        self.clock
    }
    pub fn coefficients(&self) -> &Coefficients {
        &self.coeffs
    }

    /// Mean mode `a_0`.
    pub fn mean_mode(&self) -> f64 {
        match &self.coeffs {
            Coefficients::Zonal(a) => a[0],
            Coefficients::Fourier(a) => a[fourier_index(self.band_limit, 0, 0)].re,
        }
    }

    /// Pointwise value.
    pub fn value(&self, p: &SamplePoint) -> f64 {
        match (&self.coeffs, p) {
            (Coefficients::Zonal(a), SamplePoint::Sphere { theta, .. }) => legendre_series(a, theta.cos()),
            (Coefficients::Fourier(a), SamplePoint::Torus { x, y }) => fourier_value(self.band_limit, a, *x, *y),
            _ => f64::NAN,
        }
    }

    /// Zonal profile as a function of `z = cos θ`.
    pub fn zonal_value(&self, z: f64) -> f64 {
        match &self.coeffs {
            Coefficients::Zonal(a) => legendre_series(a, z),
            Coefficients::Fourier(_) => f64::NAN,
        }
    }

    /// `∫ f dV_std`.
    pub fn std_integral(&self) -> f64 {
        self.mean_mode() * self.model.std_volume()
    }

    /// `∫ f g dV_std`, exact for the band-limited pair.
    pub fn std_inner(&self, other: &Spectrum) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(match (&self.coeffs, &other.coeffs) {
            (Coefficients::Zonal(a), Coefficients::Zonal(b)) => a
                .iter()
                .zip(b)
                .enumerate()
                .map(|(l, (x, y))| x * y * 4.0 * PI / (2 * l + 1) as f64)
                .sum(),
            (Coefficients::Fourier(a), Coefficients::Fourier(b)) => {
                let l = self.band_limit as i64;
                let mut sum = 0.0;
                for k1 in -l..=l {
                    for k2 in -l..=l {
                        let u = a[fourier_index(self.band_limit, k1, k2)];
                        let v = b[fourier_index(self.band_limit, -k1, -k2)];
                        sum += (u * v).re;
                    }
                }
                sum
            }
            _ => unreachable!(),
        })
    }

    fn check_compatible(&self, other: &Spectrum) -> Result<()> {
        if self.model != other.model {
            return Err(Error::ModelMismatch("spectral fields on different models".into()));
        }
        if self.band_limit != other.band_limit {
            return Err(Error::BandLimitMismatch { expected: self.band_limit, found: other.band_limit });
        }
        Ok(())
    }

    pub(crate) fn check_clock(&self, tau: f64) -> Result<()> {
        if (self.clock - tau).abs() <= CLOCK_TOL * (1.0 + tau.abs()) {
            Ok(())
        } else {
            Err(Error::ClockMismatch { expected: tau, found: self.clock })
        }
    }

    /// Multiply each mode by `factor(eigenvalue)` and move the clock.
    pub(crate) fn map_modes(&self, clock: f64, factor: impl Fn(f64) -> f64) -> Spectrum {
        let l = self.band_limit as i64;
        let coeffs = match &self.coeffs {
            Coefficients::Zonal(a) => Coefficients::Zonal(
                a.iter()
                    .enumerate()
                    .map(|(ell, v)| v * factor((ell * (ell + 1)) as f64))
                    .collect(),
            ),
            Coefficients::Fourier(a) => {
                let mut out = a.clone();
                for k1 in -l..=l {
                    for k2 in -l..=l {
                        let lambda = 4.0 * PI * PI * (k1 * k1 + k2 * k2) as f64;
                        out[fourier_index(self.band_limit, k1, k2)] *= factor(lambda);
                    }
                }
                Coefficients::Fourier(out)
            }
        };
        Spectrum { model: self.model, band_limit: self.band_limit, clock, coeffs }
    }

    pub(crate) fn scaled(&self, s: f64) -> Spectrum {
        self.map_modes(self.clock, |_| s)
    }

    /// Pointwise sum of two compatible fields.
    pub fn add(&self, other: &Spectrum) -> Result<Spectrum> {
        self.check_compatible(other)?;
        let coeffs = match (&self.coeffs, &other.coeffs) {
            (Coefficients::Zonal(a), Coefficients::Zonal(b)) => {
                Coefficients::Zonal(a.iter().zip(b).map(|(x, y)| x + y).collect())
            }
            (Coefficients::Fourier(a), Coefficients::Fourier(b)) => {
                Coefficients::Fourier(a.iter().zip(b).map(|(x, y)| x + y).collect())
            }
            _ => unreachable!(),
        };
        Ok(Spectrum { coeffs, ..self.clone() })
    }

    /// Minimum and maximum over a dense evaluation grid.
    pub fn range_on_grid(&self, resolution: usize) -> (f64, f64) {
        let n = resolution.max(2);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        match self.model {
            Model::Sphere2 => {
                for i in 0..=n {
                    let theta = PI * i as f64 / n as f64;
                    let v = self.zonal_value(theta.cos());
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            Model::Torus2 => {
                for i in 0..n {
                    for j in 0..n {
                        let v = self.value(&SamplePoint::torus(i as f64 / n as f64, j as f64 / n as f64));
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
        }
        (lo, hi)
    }

    /// Legendre projection of a zonal profile `f(z)` up to degree `band_limit`.
    pub fn project_zonal(band_limit: usize, clock: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let n = (4 * band_limit + 32).max(200);
        let (z, w) = gauss_legendre(n);
        let values: Vec<f64> = z.iter().map(|&x| f(x)).collect();
        Self::project_zonal_samples(band_limit, clock, &z, &w, &values)
    }

    /// Legendre projection from samples at quadrature nodes `z` with weights `w`
    /// (weights summing to 2 on [-1, 1]).
    pub fn project_zonal_samples(band_limit: usize, clock: f64, z: &[f64], w: &[f64], values: &[f64]) -> Result<Self> {
        let mut coeffs = vec![0.0; band_limit + 1];
        let mut p = Vec::new();
        for ((zi, wi), fi) in z.iter().zip(w).zip(values) {
            crate::quadrature::legendre_values(band_limit, *zi, &mut p);
            for (l, c) in coeffs.iter_mut().enumerate() {
                *c += wi * fi * p[l];
            }
        }
        for (l, c) in coeffs.iter_mut().enumerate() {
            *c *= (2 * l + 1) as f64 / 2.0;
        }
        Self::zonal(band_limit, clock, coeffs)
    }

    /// Fourier coefficients from samples on the uniform `m × m` grid
    /// (row-major, point `(i/m, j/m)`), truncated to `|k_i| ≤ band_limit`.
    pub fn project_torus_grid(band_limit: usize, clock: f64, m: usize, values: &[f64]) -> Result<Self> {
        if values.len() != m * m {
            return Err(Error::InvalidParameter("grid sample count mismatch".into()));
        }
        let side = 2 * band_limit + 1;
        let l = band_limit as i64;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); side * side];
        let keep = |k: i64| 2 * k.unsigned_abs() < m as u64;
        let tw = |k: i64, i: usize| Complex64::from_polar(1.0, -2.0 * PI * (k * i as i64) as f64 / m as f64);
        // separable DFT: first along y, then x
        let mut partial = vec![Complex64::new(0.0, 0.0); m * side];
        for i in 0..m {
            for k2 in -l..=l {
                if !keep(k2) {
                    continue;
                }
                let mut s = Complex64::new(0.0, 0.0);
                for j in 0..m {
                    s += tw(k2, j) * values[i * m + j];
                }
                partial[i * side + (k2 + l) as usize] = s;
            }
        }
        let norm = 1.0 / (m * m) as f64;
        for k1 in -l..=l {
            if !keep(k1) {
                continue;
            }
            for k2 in -l..=l {
                if !keep(k2) {
                    continue;
                }
                let mut s = Complex64::new(0.0, 0.0);
                for i in 0..m {
                    s += tw(k1, i) * partial[i * side + (k2 + l) as usize];
                }
                coeffs[fourier_index(band_limit, k1, k2)] = s * norm;
            }
        }
        Self::fourier(band_limit, clock, coeffs)
    }
}

pub(crate) fn fourier_index(band_limit: usize, k1: i64, k2: i64) -> usize {
    let l = band_limit as i64;
    ((k1 + l) * (2 * l + 1) + (k2 + l)) as usize
}

fn fourier_value(band_limit: usize, a: &[Complex64], x: f64, y: f64) -> f64 {
    let l = band_limit as i64;
    let ex: Vec<Complex64> = (-l..=l).map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 * x)).collect();
    let ey: Vec<Complex64> = (-l..=l).map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 * y)).collect();
    let side = (2 * l + 1) as usize;
    let mut sum = Complex64::new(0.0, 0.0);
    for i in 0..side {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..side {
            row += a[i * side + j] * ey[j];
        }
        sum += row * ex[i];
    }
    sum.re
}

/// A probability density with respect to `dV_τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    spectrum: Spectrum,
}

/// A real field such as a Kantorovich potential.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    spectrum: Spectrum,
}

impl ScalarField {
    pub fn new(spectrum: Spectrum) -> Self {
        Self { spectrum }
    }
    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }
    pub fn clock(&self) -> f64 {
        self.spectrum.clock
    }
    pub fn value(&self, p: &SamplePoint) -> f64 {
        self.spectrum.value(p)
    }
    pub fn shifted(&self, delta: f64) -> ScalarField {
        let mut s = self.spectrum.clone();
        s.set_mean_mode(s.mean_mode() + delta);
        ScalarField { spectrum: s }
    }
}

impl SpectralDensity {
    /// Wraps a spectrum as a density; no normalization is applied.
    pub fn from_spectrum(spectrum: Spectrum) -> Self {
        Self { spectrum }
    }

    /// `1 / Vol_τ`.
    pub fn uniform(flow: &ScaleFlow, band_limit: usize, tau: f64) -> Result<Self> {
        let c = flow.metric_scale(tau)?;
        let vol = flow.model().std_volume() * c.powf(DIM as f64 / 2.0);
        Ok(Self { spectrum: Spectrum::constant(flow.model(), band_limit, tau, 1.0 / vol) })
    }

    /// Normalized mixture of bumps at time `tau`.
    pub fn mixture(flow: &ScaleFlow, band_limit: usize, tau: f64, bumps: &[Bump]) -> Result<Self> {
        if bumps.is_empty() {
            return Err(Error::InvalidParameter("density mixture needs at least one bump".into()));
        }
        for b in bumps {
            b.validate(flow.model())?;
        }
        let spectrum = match flow.model() {
            Model::Sphere2 => Spectrum::project_zonal(band_limit, tau, |z| {
                bumps.iter().map(|b| b.weight * zonal_bump(b.center[0], b.concentration, z)).sum()
            })?,
            Model::Torus2 => {
                let side = 2 * band_limit + 1;
                let l = band_limit as i64;
                let mut coeffs = vec![Complex64::new(0.0, 0.0); side * side];
                for b in bumps {
                    let sigma2 = 1.0 / b.concentration;
                    for k1 in -l..=l {
                        for k2 in -l..=l {
                            let k2sum = (k1 * k1 + k2 * k2) as f64;
                            let phase = -2.0 * PI * (k1 as f64 * b.center[0] + k2 as f64 * b.center[1]);
                            let amp = b.weight * (-2.0 * PI * PI * sigma2 * k2sum).exp();
                            coeffs[fourier_index(band_limit, k1, k2)] += Complex64::from_polar(amp, phase);
                        }
                    }
                }
                Spectrum::fourier(band_limit, tau, coeffs)?
            }
        };
        let mut d = Self { spectrum };
        let m = d.mass(flow)?;
        if !(m > 0.0) {
            return Err(Error::InvalidParameter("mixture has no positive mass".into()));
        }
        d.spectrum = d.spectrum.scaled(1.0 / m);
        Ok(d)
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }
    pub fn clock(&self) -> f64 {
        self.spectrum.clock
    }
    pub fn model(&self) -> Model {
        self.spectrum.model
    }
    pub fn band_limit(&self) -> usize {
        self.spectrum.band_limit
    }
    pub fn value(&self, p: &SamplePoint) -> f64 {
        self.spectrum.value(p)
    }

    /// `∫ u dV_τ` at the density's own clock.
    pub fn mass(&self, flow: &ScaleFlow) -> Result<f64> {
        let c = flow.metric_scale(self.spectrum.clock)?;
        Ok(c.powf(DIM as f64 / 2.0) * self.spectrum.std_integral())
    }

    /// Minimum over a dense grid; for evolved nonnegative data this should
    /// stay above `-DEFAULT_TRUNCATION_SLACK`.
    pub fn min_on_grid(&self, resolution: usize) -> f64 {
        self.spectrum.range_on_grid(resolution).0
    }
}

/// One mixture component. On the sphere `center[0]` is the colatitude of the
/// bump axis and the profile is the longitude average of a von Mises–Fisher
/// density; on the torus `center` is the mean of a periodic Gaussian with
/// variance `1 / concentration` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub concentration: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl Bump {
    pub fn sphere(colatitude: f64, concentration: f64, weight: f64) -> Self {
        Self { center: vec![colatitude], concentration, weight }
    }

    pub fn torus(x: f64, y: f64, concentration: f64, weight: f64) -> Self {
        Self { center: vec![x, y], concentration, weight }
    }

    fn validate(&self, model: Model) -> Result<()> {
        let need = match model {
            Model::Sphere2 => 1,
            Model::Torus2 => 2,
        };
        if self.center.len() < need || self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(format!("bump center needs {need} coordinates")));
        }
        if !(self.concentration > 0.0) || !(self.weight > 0.0) {
            return Err(Error::InvalidParameter("bump concentration and weight must be positive".into()));
        }
        if model == Model::Sphere2 && !(0.0..=PI).contains(&self.center[0]) {
            return Err(Error::InvalidParameter("bump colatitude outside [0, π]".into()));
        }
        Ok(())
    }
}

/// Longitude-averaged vMF profile, normalized to unit standard mass.
fn zonal_bump(theta0: f64, kappa: f64, z: f64) -> f64 {
    let (z0, s0) = (theta0.cos(), theta0.sin());
    let s = (1.0 - z * z).max(0.0).sqrt();
    let x = kappa * s * s0;
    // exp(κ(z z0 - 1)) I0(κ s s0) written with the scaled Bessel function
    let unnormalized = (kappa * (z * z0 + s * s0 - 1.0)).exp() * bessel_i0_scaled(x);
    // ∫ exp(κ(cos α - 1)) dV_std = 2π(1 - e^{-2κ})/κ
    unnormalized * kappa / (2.0 * PI * (-(-2.0 * kappa).exp_m1()))
}

/// `∫_a^b dτ / c(τ)`, closed form for the exact laws and adaptive Simpson
/// otherwise.
pub fn inverse_scale_integral(flow: &ScaleFlow, a: f64, b: f64) -> Result<f64> {
    flow.check_time(a)?;
    flow.check_time(b)?;
    if a == b {
        return Ok(0.0);
    }
    Ok(match flow.law() {
        ScaleLaw::ExactBackwardRicci => match flow.model() {
            Model::Sphere2 => {
                let slope = 2.0 * (DIM as f64 - 1.0);
                (flow.metric_scale(b)? / flow.metric_scale(a)?).ln() / slope
            }
            Model::Torus2 => (b - a) / flow.c0(),
        },
        ScaleLaw::UserScale(_) => adaptive_simpson(&|t: f64| 1.0 / flow.scale_at(t), a, b, 1e-12),
    })
}

/// Conjugate heat evolution from `u.clock` to `tau_to ≥ u.clock`.
pub fn evolve_conjugate(flow: &ScaleFlow, u: &SpectralDensity, tau_to: f64) -> Result<SpectralDensity> {
    let tau_from = u.clock();
    check_band_model(flow, &u.spectrum)?;
    flow.check_time(tau_from)?;
    flow.check_time(tau_to)?;
    if tau_to < tau_from {
        return Err(Error::InvalidParameter(format!(
            "conjugate heat flow runs toward larger tau (from {tau_from} to {tau_to})"
        )));
    }
    if tau_to == tau_from {
        return Ok(u.clone());
    }
    let integral = inverse_scale_integral(flow, tau_from, tau_to)?;
    let volume = (flow.metric_scale(tau_from)? / flow.metric_scale(tau_to)?).powf(DIM as f64 / 2.0);
    Ok(SpectralDensity {
        spectrum: u.spectrum.map_modes(tau_to, |lambda| volume * (-lambda * integral).exp()),
    })
}

/// Dual (backward) heat evolution `−∂_τ f = Δ_τ f` from `f.clock` down to
/// `tau_to ≤ f.clock`.
pub fn evolve_dual(flow: &ScaleFlow, f: &ScalarField, tau_to: f64) -> Result<ScalarField> {
    let tau_from = f.clock();
    check_band_model(flow, &f.spectrum)?;
    flow.check_time(tau_from)?;
    flow.check_time(tau_to)?;
    if tau_to > tau_from {
        return Err(Error::IllPosedDirection { from: tau_from, to: tau_to });
    }
    if tau_to == tau_from {
        return Ok(f.clone());
    }
    let integral = inverse_scale_integral(flow, tau_to, tau_from)?;
    Ok(ScalarField { spectrum: f.spectrum.map_modes(tau_to, |lambda| (-lambda * integral).exp()) })
}

fn check_band_model(flow: &ScaleFlow, s: &Spectrum) -> Result<()> {
    if s.model != flow.model() {
        return Err(Error::ModelMismatch("spectral field and flow on different models".into()));
    }
    Ok(())
}

/// Discretize `dμ = u dV_τ` on a cloud.
pub fn density_values(u: &SpectralDensity, cloud: &PointCloud, flow: &ScaleFlow, tau: f64) -> Result<DiscreteMeasure> {
    u.spectrum.check_clock(tau)?;
    if cloud.model() != flow.model() || u.model() != flow.model() {
        return Err(Error::ModelMismatch("cloud, density and flow must share a model".into()));
    }
    let volume = flow.metric_scale(tau)?.powf(DIM as f64 / 2.0);
    let raw: Vec<f64> = cloud
        .points()
        .iter()
        .zip(cloud.weights())
        .map(|(p, w)| u.value(p) * volume * w)
        .collect();
    let clipped: f64 = raw.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    let positive: Vec<f64> = raw.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = positive.iter().sum();
    let spectral_mass = u.mass(flow)?;
    let defect = (total - spectral_mass).abs();
    if defect > MASS_DEFECT_LIMIT || !(total > 0.0) {
        return Err(Error::UnderResolved { defect, limit: MASS_DEFECT_LIMIT });
    }
    let weights = positive.iter().map(|v| v / total).collect();
    DiscreteMeasure::with_diagnostics(cloud.points().to_vec(), (0..cloud.len()).collect(), weights, defect, clipped)
}

/// `J = ∫ φ dμ + ∫ ψ dν` at time `tau`.
pub fn duality_functional(
    phi: &ScalarField,
    psi: &ScalarField,
    mu: &SpectralDensity,
    nu: &SpectralDensity,
    flow: &ScaleFlow,
    tau: f64,
) -> Result<f64> {
    for s in [&phi.spectrum, &psi.spectrum, &mu.spectrum, &nu.spectrum] {
        s.check_clock(tau)?;
    }
    let volume = flow.metric_scale(tau)?.powf(DIM as f64 / 2.0);
    Ok(volume * (phi.spectrum.std_inner(&mu.spectrum)? + psi.spectrum.std_inner(&nu.spectrum)?))
}
