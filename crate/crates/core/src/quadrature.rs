//! Quadrature rules and orthogonal polynomials shared by the spectral and
//! path-integral code.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1], nodes in increasing order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|v| v * half).collect(),
    )
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Values P_0(x) .. P_l_max(x) by the three-term recurrence.
pub fn legendre_values(l_max: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if l_max == 0 {
        return;
    }
    out.push(x);
    for l in 2..=l_max {
        let lf = l as f64;
        let p = ((2.0 * lf - 1.0) * x * out[l - 1] - (lf - 1.0) * out[l - 2]) / lf;
        out.push(p);
    }
}

/// Clenshaw-style sum of a Legendre series Σ a_l P_l(x).
pub fn legendre_series(coeffs: &[f64], x: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for l in (0..coeffs.len()).rev() {
        let lf = l as f64;
        // alpha_l(x) = (2l+1)x/(l+1), beta_{l+1} = -(l+1)/(l+2)
        let alpha = (2.0 * lf + 1.0) * x / (lf + 1.0);
        let beta = -(lf + 1.0) / (lf + 2.0);
        let b0 = coeffs[l] + alpha * b1 + beta * b2;
        b2 = b1;
        b1 = b0;
    }
    b1
}

/// Adaptive Simpson quadrature with an absolute tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Modified Bessel function I_0 by its power series; adequate for |x| <= 200.
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
        k += 1.0;
    }
    sum
}

/// Exponentially scaled Bessel function `e^{-x} I_0(x)` for `x ≥ 0`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    let x = x.abs();
    if x < 30.0 {
        return bessel_i0(x) * (-x).exp();
    }
    // asymptotic series; terms shrink until k ~ 2x
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..30 {
        let kf = k as f64;
        let next = term * (2.0 * kf - 1.0).powi(2) / (8.0 * kf * x);
        if next.abs() < 1e-17 * sum || next.abs() > term.abs() {
            break;
        }
        term = next;
        sum += term;
    }
    sum / (2.0 * PI * x).sqrt()
}

/// Chebyshev–Gauss–Lobatto points on [a, b] in increasing order and the
/// associated first-derivative differentiation matrix (row-major).
pub fn chebyshev_lobatto(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert!(n >= 2);
    let big_n = n - 1;
    // standard points x_j = cos(pi j / N) run from 1 down to -1; reverse them
    let xs: Vec<f64> = (0..n)
        .map(|j| -(PI * j as f64 / big_n as f64).cos())
        .collect();
    let cw = |j: usize| if j == 0 || j == big_n { 2.0 } else { 1.0 };
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                d[i][j] = cw(i) / cw(j) * sign / (xs[i] - xs[j]);
            }
        }
    }
    // negative-sum trick for the diagonal
    for i in 0..n {
        let s: f64 = (0..n).filter(|&j| j != i).map(|j| d[i][j]).sum();
        d[i][i] = -s;
    }
    let scale = 2.0 / (b - a);
    let pts = xs.iter().map(|x| a + 0.5 * (x + 1.0) * (b - a)).collect();
    for row in d.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    (pts, d)
}

/// Barycentric interpolation on Chebyshev–Lobatto points (as produced by
/// [`chebyshev_lobatto`]).
pub fn chebyshev_interpolate(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let n = nodes.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..n {
        let diff = x - nodes[j];
        if diff == 0.0 {
            return values[j];
        }
        let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
        if j == 0 || j == n - 1 {
            w *= 0.5;
        }
        let t = w / diff;
        num += t * values[j];
        den += t;
    }
    num / den
}
