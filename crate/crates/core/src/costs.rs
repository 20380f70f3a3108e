//! Distance-based time-dependent costs `c_τ(x, y) = η(d_τ(x, y), τ)`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{SamplePoint, ScaleFlow};

/// `η` and its partial derivatives at one `(s, τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostDerivatives {
    pub eta: f64,
    /// `∂_s η`
    pub ds: f64,
    /// `∂²_s η`
    pub dss: f64,
    /// `∂_τ η`
    pub dtau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    /// `η = e^{pKτ} s^p`.
    Power { p: f64, k: f64 },
    Tabulated(CostTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostFunction {
    kind: CostKind,
}

/// Tables of `η, η′, η″, η̇` on a tensor `(s, τ)` grid, interpolated by local
/// bicubic (4 × 4 Lagrange) stencils.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    s: Vec<f64>,
    tau: Vec<f64>,
    /// Row-major `[s][τ]` tables.
    eta: Vec<f64>,
    ds: Vec<f64>,
    dss: Vec<f64>,
    dtau: Vec<f64>,
}

/// Power-law cost `e^{pKτ} s^p`.
pub fn power_cost(p: f64, k: f64) -> Result<CostFunction> {
    if !(p > 0.0) || !p.is_finite() || !k.is_finite() {
        return Err(Error::InvalidParameter(format!("power cost needs p > 0, got {p}")));
    }
    Ok(CostFunction { kind: CostKind::Power { p, k } })
}

impl CostFunction {
    /// Tabulated cost; rejects tables with `η(0, τ) ≠ 0` or `η′ < 0` at a node.
    pub fn tabulated(table: CostTable) -> Result<Self> {
        if table.s[0] == 0.0 {
            for j in 0..table.tau.len() {
                let v = table.eta[j];
                if v.abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!("eta(0, {}) = {v} is not zero", table.tau[j])));
                }
            }
        }
        if let Some(bad) = table.ds.iter().find(|&&v| v < 0.0) {
            return Err(Error::InvalidParameter(format!("table has negative s-derivative {bad}")));
        }
        Ok(Self { kind: CostKind::Tabulated(table) })
    }

    /// Tabulated cost without the construction checks, for probing the
    /// admissibility checker with inadmissible data.
    pub fn tabulated_unchecked(table: CostTable) -> Self {
        Self { kind: CostKind::Tabulated(table) }
    }

    /// Samples `f` on the grid and checks the result.
    pub fn from_fn(s: Vec<f64>, tau: Vec<f64>, f: impl Fn(f64, f64) -> CostDerivatives) -> Result<Self> {
        Self::tabulated(CostTable::sample(s, tau, f)?)
    }

    /// Reads a CSV with columns `s, tau, eta, eta_s, eta_ss, eta_tau`; an
    /// optional header row is skipped.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::Io(e.to_string()))?;
        let mut rows = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(v) if v.len() == 6 => rows.push([v[0], v[1], v[2], v[3], v[4], v[5]]),
                Ok(_) => return Err(Error::Config(format!("cost table line {}: expected 6 columns", line + 1))),
                Err(_) if line == 0 => continue,
                Err(e) => return Err(Error::Config(format!("cost table line {}: {e}", line + 1))),
            }
        }
        Self::tabulated(CostTable::from_rows(&rows)?)
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    /// Short identifier used in reports.
    pub fn id(&self) -> String {
        match &self.kind {
            CostKind::Power { p, k } => format!("power(p={p},K={k})"),
            CostKind::Tabulated(t) => format!("table({}x{})", t.s.len(), t.tau.len()),
        }
    }

    pub fn eta(&self, s: f64, tau: f64) -> Result<f64> {
        match &self.kind {
            CostKind::Power { p, k } => {
                check_s(s)?;
                Ok((p * k * tau).exp() * s.powf(*p))
            }
            CostKind::Tabulated(t) => t.interpolate(&t.eta, s, tau),
        }
    }

    pub fn derivatives(&self, s: f64, tau: f64) -> Result<CostDerivatives> {
        match &self.kind {
            CostKind::Power { p, k } => {
                check_s(s)?;
                Ok(power_derivatives(*p, *k, s, tau))
            }
            CostKind::Tabulated(t) => Ok(CostDerivatives {
                eta: t.interpolate(&t.eta, s, tau)?,
                ds: t.interpolate(&t.ds, s, tau)?,
                dss: t.interpolate(&t.dss, s, tau)?,
                dtau: t.interpolate(&t.dtau, s, tau)?,
            }),
        }
    }

    /// Whether `η″` may be singular at `s = 0`.
    pub fn singular_at_zero(&self) -> bool {
        matches!(self.kind, CostKind::Power { p, .. } if p < 2.0)
    }
}

fn check_s(s: f64) -> Result<()> {
    if s >= 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("cost argument must be a nonnegative distance, got {s}")))
    }
}

fn power_derivatives(p: f64, k: f64, s: f64, tau: f64) -> CostDerivatives {
    let e = (p * k * tau).exp();
    if s == 0.0 {
        // limits of the power laws at the origin
        let ds = if p > 1.0 {
            0.0
        } else if p == 1.0 {
            e
        } else {
            f64::INFINITY
        };
        let dss = if p > 2.0 || p == 1.0 {
            0.0
        } else if p == 2.0 {
            2.0 * e
        } else if p > 1.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        return CostDerivatives { eta: 0.0, ds, dss, dtau: 0.0 };
    }
    let eta = e * s.powf(p);
    CostDerivatives {
        eta,
        ds: p * e * s.powf(p - 1.0),
        dss: p * (p - 1.0) * e * s.powf(p - 2.0),
        dtau: p * k * eta,
    }
}

impl CostTable {
    pub fn new(s: Vec<f64>, tau: Vec<f64>, eta: Vec<f64>, ds: Vec<f64>, dss: Vec<f64>, dtau: Vec<f64>) -> Result<Self> {
        for (name, g) in [("s", &s), ("tau", &tau)] {
            if g.len() < 2 || g.windows(2).any(|w| w[1] <= w[0]) || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} grid must have ≥ 2 increasing values")));
            }
        }
        if s[0] < 0.0 {
            return Err(Error::InvalidParameter("s grid must be nonnegative".into()));
        }
        let n = s.len() * tau.len();
        for t in [&eta, &ds, &dss, &dtau] {
            if t.len() != n || t.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("cost table size or values invalid".into()));
            }
        }
        Ok(Self { s, tau, eta, ds, dss, dtau })
    }

    pub fn sample(s: Vec<f64>, tau: Vec<f64>, f: impl Fn(f64, f64) -> CostDerivatives) -> Result<Self> {
        let n = s.len() * tau.len();
        let (mut eta, mut ds, mut dss, mut dtau) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for &si in &s {
            for &tj in &tau {
                let d = f(si, tj);
                eta.push(d.eta);
                ds.push(d.ds);
                dss.push(d.dss);
                dtau.push(d.dtau);
            }
        }
        Self::new(s, tau, eta, ds, dss, dtau)
    }

    fn from_rows(rows: &[[f64; 6]]) -> Result<Self> {
        let mut s: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let mut tau: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        tau.sort_by(f64::total_cmp);
        tau.dedup();
        let n = s.len() * tau.len();
        if rows.len() != n {
            return Err(Error::Config(format!(
                "cost table has {} rows but the (s, tau) grid needs {n}",
                rows.len()
            )));
        }
        let mut tables = vec![vec![f64::NAN; n]; 4];
        for r in rows {
            let i = s.partition_point(|&v| v < r[0]);
            let j = tau.partition_point(|&v| v < r[1]);
            for (t, v) in tables.iter_mut().zip(&r[2..]) {
                t[i * tau.len() + j] = *v;
            }
        }
        if tables.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Config("cost table has duplicate (s, tau) rows".into()));
        }
        let [eta, ds, dss, dtau]: [Vec<f64>; 4] = tables.try_into().unwrap();
        Self::new(s, tau, eta, ds, dss, dtau)
    }

    pub fn s_grid(&self) -> &[f64] {
        &self.s
    }
    pub fn tau_grid(&self) -> &[f64] {
        &self.tau
    }

    /// Node value `(η, η′, η″, η̇)` at grid index `(i, j)`.
    pub fn node(&self, i: usize, j: usize) -> CostDerivatives {
        let k = i * self.tau.len() + j;
        CostDerivatives { eta: self.eta[k], ds: self.ds[k], dss: self.dss[k], dtau: self.dtau[k] }
    }

    fn interpolate(&self, table: &[f64], s: f64, tau: f64) -> Result<f64> {
        let (s_lo, s_hi) = (self.s[0], *self.s.last().unwrap());
        let (t_lo, t_hi) = (self.tau[0], *self.tau.last().unwrap());
        let eps = 1e-12;
        if s < s_lo - eps * (1.0 + s_hi) || s > s_hi + eps * (1.0 + s_hi) {
            return Err(Error::InvalidParameter(format!("s = {s} outside table range [{s_lo}, {s_hi}]")));
        }
        if tau < t_lo - eps * (1.0 + t_hi) || tau > t_hi + eps * (1.0 + t_hi) {
            return Err(Error::OutsideDomain { tau, lo: t_lo, hi: t_hi });
        }
        let (is, ws) = stencil(&self.s, s);
        let (it, wt) = stencil(&self.tau, tau);
        let nt = self.tau.len();
        let mut v = 0.0;
        for (a, wa) in is.iter().zip(&ws) {
            for (b, wb) in it.iter().zip(&wt) {
                v += wa * wb * table[a * nt + b];
            }
        }
        Ok(v)
    }
}

/// Up to four neighbouring nodes and their Lagrange weights at `x`.
fn stencil(grid: &[f64], x: f64) -> (Vec<usize>, Vec<f64>) {
    let n = grid.len();
    let m = n.min(4);
    let k = grid.partition_point(|&g| g <= x).clamp(1, n - 1) - 1;
    let start = (k as isize - (m as isize / 2 - 1)).clamp(0, (n - m) as isize) as usize;
    let idx: Vec<usize> = (start..start + m).collect();
    let w = idx
        .iter()
        .map(|&i| {
            idx.iter()
                .filter(|&&j| j != i)
                .map(|&j| (x - grid[j]) / (grid[i] - grid[j]))
                .product()
        })
        .collect();
    (idx, w)
}

/// Per-condition minimum margins over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    /// `−max_τ |η(0, τ)|`.
    pub zero_margin: f64,
    /// `min ∂_s η`.
    pub monotone_margin: f64,
    /// `min (−η̇ + K s η′ − min{4η″, 0})`.
    pub evolution_margin: f64,
    /// Grid point `(s, τ)` of the worst evolution margin.
    pub worst_point: (f64, f64),
    pub passed: [bool; 3],
}

impl AdmissibilityReport {
    pub fn pass(&self) -> bool {
        self.passed.iter().all(|&b| b)
    }
}

pub const ADMISSIBILITY_TOL: f64 = 1e-12;

/// Evaluates the three admissibility conditions on `s_grid × τ_grid`.
/// Tabulated costs are checked on their own nodes; the supplied grids are
/// then ignored. A node passes when its margin is at least `−1e−12` times
/// `1 + ` the magnitude of the terms entering it.
pub fn admissibility_check(cost: &CostFunction, k: f64, s_grid: &[f64], tau_grid: &[f64]) -> Result<AdmissibilityReport> {
    let nodes: Vec<(f64, f64, CostDerivatives)> = match &cost.kind {
        CostKind::Tabulated(t) => (0..t.s.len())
            .flat_map(|i| (0..t.tau.len()).map(move |j| (i, j)))
            .map(|(i, j)| (t.s[i], t.tau[j], t.node(i, j)))
            .collect(),
        CostKind::Power { .. } => {
            let mut v = Vec::with_capacity(s_grid.len() * tau_grid.len());
            for &s in s_grid {
                for &tau in tau_grid {
                    if s == 0.0 && cost.singular_at_zero() {
                        continue;
                    }
                    v.push((s, tau, cost.derivatives(s, tau)?));
                }
            }
            v
        }
    };
    let taus: Vec<f64> = match &cost.kind {
        CostKind::Tabulated(t) => t.tau.clone(),
        CostKind::Power { .. } => tau_grid.to_vec(),
    };
    let mut zero = 0.0f64;
    for &tau in &taus {
        zero = zero.max(cost.eta(0.0, tau)?.abs());
    }
    let mut monotone = f64::INFINITY;
    let mut monotone_ok = true;
    let mut evolution = f64::INFINITY;
    let mut evolution_ok = true;
    let mut worst = (f64::NAN, f64::NAN);
    for (s, tau, d) in nodes {
        if s > 0.0 {
            monotone = monotone.min(d.ds);
            monotone_ok &= d.ds >= -ADMISSIBILITY_TOL * (1.0 + d.ds.abs());
            let curvature = (4.0 * d.dss).min(0.0);
            let m = -d.dtau + k * s * d.ds - curvature;
            let scale = 1.0 + d.dtau.abs() + (k * s * d.ds).abs() + curvature.abs();
            evolution_ok &= m >= -ADMISSIBILITY_TOL * scale;
            if m < evolution {
                evolution = m;
                worst = (s, tau);
            }
        }
    }
    Ok(AdmissibilityReport {
        zero_margin: -zero,
        monotone_margin: monotone,
        evolution_margin: evolution,
        worst_point: worst,
        passed: [-zero >= -ADMISSIBILITY_TOL, monotone_ok, evolution_ok],
    })
}

/// `η(d_τ(x, y), τ)`.
pub fn eval_cost(cost: &CostFunction, flow: &ScaleFlow, tau: f64, x: &SamplePoint, y: &SamplePoint) -> Result<f64> {
    cost.eta(flow.distance(tau, x, y)?, tau)
}
