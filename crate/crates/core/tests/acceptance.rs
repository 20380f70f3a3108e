//! Acceptance criteria 1–9. Each test prints one `criterion N: PASS|FAIL` line.
//!
//! Run with `cargo test --release -p flowlab --test acceptance -- --nocapture`
//! to see the lines.

use std::f64::consts::PI;
use std::path::PathBuf;

use flowlab::coupling::convergence_slope;
use flowlab::diffusion::{evolve_conjugate, Bump, SpectralDensity, Spectrum};
use flowlab::geometry::{Model, SamplePoint, ScaleFlow};
use flowlab::harness::{self, ExperimentConfig, ExperimentReport, MonotonicityReport};
use flowlab::lflow::{
    frame_transport, l_distance, l_geodesic, partl_residual, summed_variation_check, collocation_nodes,
    RESIDUAL_TOL,
};
use flowlab::transport::{duality_gap, solve_exact, CostMatrix};
use flowlab::costs::power_cost;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, ok: bool, detail: &str) {
    println!("criterion {n}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn config(name: &str) -> ExperimentConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    ExperimentConfig::load(&path).unwrap()
}

fn monotonicity(name: &str) -> MonotonicityReport {
    match harness::evaluate(&config(name)).unwrap() {
        ExperimentReport::Monotonicity(r) => r,
        other => panic!("{name} is not a monotonicity experiment: {other:?}"),
    }
}

/// The derived tolerance can exceed 10⁻³ when the coarse rerun is far from
/// the fine one, so the increase is also held to that absolute level.
fn monotone(r: &MonotonicityReport) -> bool {
    r.pass() && r.max_increase <= 1e-3
}

fn describe(r: &MonotonicityReport) -> String {
    format!(
        "max increase {:.3e}, tol_mono {:.3e} from {}, extrapolated error {:.3e}",
        r.max_increase,
        r.tol,
        r.tol_source.label(),
        r.error_estimate().unwrap_or(f64::NAN)
    )
}

fn random_sphere_point(rng: &mut ChaCha8Rng) -> SamplePoint {
    let z: f64 = rng.gen_range(-1.0..1.0);
    SamplePoint::sphere(z.acos(), rng.gen_range(0.0..2.0 * PI))
}

#[test]
fn criterion_1_wasserstein_on_shrinking_sphere() {
    let mut ok = true;
    let mut detail = Vec::new();
    for (p, name) in [(1, "sphere_w1.toml"), (2, "sphere_w2.toml")] {
        let r = monotonicity(name);
        assert_eq!(r.series.grid.len(), 12);
        ok &= monotone(&r);
        detail.push(format!("p = {p}: {}", describe(&r)));
    }
    report(1, ok, &detail.join("; "));
}

#[test]
fn criterion_2_sqrt_cost_on_shrinking_sphere() {
    let r = monotonicity("sphere_sqrt_cost.toml");
    report(2, monotone(&r), &describe(&r));
}

#[test]
fn criterion_3_strict_super_ricci_torus() {
    let cfg = config("torus_strict.toml");
    let flow = cfg.flow.build().unwrap();
    for tau in [0.0, 0.5, 1.0] {
        assert!((flow.metric_scale(tau).unwrap() - (1.0 - 0.3 * tau)).abs() < 1e-14);
    }
    let r = monotonicity("torus_strict.toml");
    report(3, monotone(&r), &describe(&r));
}

#[test]
fn criterion_4_lemma_sweep() {
    let flows = [
        ScaleFlow::backward_ricci(Model::Sphere2, 1.0, 0.0, (0.0, 1.0)).unwrap(),
        ScaleFlow::user_scale(Model::Torus2, vec![0.0, 1.0], vec![1.0, 0.7], 0.0).unwrap(),
        ScaleFlow::user_scale(Model::Sphere2, vec![0.0, 0.5, 1.0], vec![1.0, 1.5, 2.0], 0.0).unwrap(),
    ];
    let costs = [power_cost(2.0, 0.0).unwrap(), power_cost(1.0, 0.0).unwrap(), power_cost(0.5, 0.0).unwrap()];
    let mut min_gap = f64::INFINITY;
    let mut samples = 0;
    for (i, flow) in flows.iter().enumerate() {
        let pairs = harness::lemma_samples(flow, 200, 0.05, 40 + i as u64).unwrap();
        for cost in &costs {
            let rows = harness::lemma_rows(flow, cost, &pairs).unwrap();
            assert!(rows.iter().all(|r| r.margin >= 0.0));
            samples += rows.len();
            min_gap = rows.iter().map(|r| r.gap).fold(min_gap, f64::min);
        }
    }
    let equality = harness::lemma_rows(&flows[0], &costs[0], &harness::lemma_samples(&flows[0], 200, 0.05, 7).unwrap())
        .unwrap()
        .iter()
        .map(|r| r.gap.abs())
        .fold(0.0, f64::max);
    let ok = samples == 1800 && min_gap >= -1e-6 && equality <= 1e-8;
    report(4, ok, &format!("{samples} samples, min gap {min_gap:.3e}, equality case max |gap| {equality:.3e}"));
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn criterion_5_kantorovich_duality() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..100 {
        // sizes sweep up to 400 × 400, the last instance at the limit
        let m = if i == 99 { 400 } else { rng.gen_range(1..=400) };
        let n = if i == 99 { 400 } else { rng.gen_range(1..=400) };
        let c = CostMatrix::new(m, n, (0..m * n).map(|_| rng.gen::<f64>() * 10.0).collect()).unwrap();
        let mut a: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 0.01).collect();
        let mut b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.01).collect();
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        a.iter_mut().for_each(|v| *v /= sa);
        b.iter_mut().for_each(|v| *v /= sb);
        let s = solve_exact(&c, &a, &b).unwrap();
        let gap = duality_gap(&c, &s.plan, &s.potentials, &a, &b);
        worst = worst.max(gap / (1.0 + s.value.abs()));
    }
    let mut oracle_err = 0.0f64;
    for trial in 0..100u64 {
        let n = 1 + (trial % 6) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let c = CostMatrix::new(n, n, (0..n * n).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let u = vec![1.0 / n as f64; n];
        let s = solve_exact(&c, &u, &u).unwrap();
        let best = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            / n as f64;
        oracle_err = oracle_err.max((s.value - best).abs());
    }
    let ok = worst <= 1e-9 && oracle_err <= 1e-12;
    report(5, ok, &format!("worst relative gap {worst:.3e} over 100 instances, brute-force difference {oracle_err:.3e} over 100 trials"));
}

#[test]
fn criterion_6_duality_preservation() {
    let mut ok = true;
    let mut detail = Vec::new();
    let sphere = config("duality_sphere.toml");
    let mut torus = config("torus_strict.toml");
    torus.experiment = Some(harness::ExperimentKind::DualityPreservation);
    torus.resolution.n = 200;
    // the torus densities are uniform to round-off by τ ≈ 0.8
    torus.preservation.b = Some(0.2);
    for (label, cfg) in [("sphere", sphere), ("torus", torus)] {
        let ExperimentReport::Duality(r) = harness::evaluate(&cfg).unwrap() else { unreachable!() };
        assert_eq!(r.preservation.checkpoints.len(), 6);
        ok &= r.pass() && r.preservation.min_slack() >= -1e-4 && r.j_deviation <= 1e-8;
        detail.push(format!(
            "{label}: min slack {:.3e}, J deviation {:.3e}",
            r.preservation.min_slack(),
            r.j_deviation
        ));
    }
    report(6, ok, &detail.join("; "));
}

#[test]
fn criterion_7_l_machinery() {
    let torus = ScaleFlow::backward_ricci(Model::Torus2, 1.0, 0.0, (0.0, 3.0)).unwrap();
    let sphere = ScaleFlow::backward_ricci(Model::Sphere2, 1.0, 0.0, (0.0, 3.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);

    // static flat Q
    let mut flat_err = 0.0f64;
    for _ in 0..20 {
        let x = SamplePoint::torus(rng.gen(), rng.gen());
        let y = SamplePoint::torus(rng.gen(), rng.gen());
        if torus.cut_margin(&x, &y) < 0.1 {
            continue;
        }
        let t1: f64 = rng.gen_range(0.05..1.0);
        let t2: f64 = t1 + rng.gen_range(0.1..1.5);
        let d = torus.distance(t1, &x, &y).unwrap();
        let exact = d * d / (2.0 * (t2.sqrt() - t1.sqrt()));
        flat_err = flat_err.max((l_distance(&torus, &x, t1, &y, t2).unwrap() - exact).abs());
    }

    // geodesic equation residual and frame invariant
    let mut residual = 0.0f64;
    let mut frame = 0.0f64;
    for flow in [&torus, &sphere] {
        for _ in 0..10 {
            let (x, y) = match flow.model() {
                Model::Torus2 => (SamplePoint::torus(rng.gen(), rng.gen()), SamplePoint::torus(rng.gen(), rng.gen())),
                Model::Sphere2 => (random_sphere_point(&mut rng), random_sphere_point(&mut rng)),
            };
            if flow.cut_margin(&x, &y) < 0.2 {
                continue;
            }
            let t1 = rng.gen_range(0.05..1.0);
            let t2 = t1 + rng.gen_range(0.1..1.5);
            let path = l_geodesic(flow, &x, t1, &y, t2).unwrap();
            assert_eq!(path.taus().len(), collocation_nodes(t1, t2));
            residual = residual.max(path.residual());
            frame = frame.max(frame_transport(flow, &path).unwrap().invariant_defect);
        }
    }

    // FD residual of the first-variation identities
    let hs = [0.04, 0.02, 0.01, 0.005];
    let mut slopes = Vec::new();
    for flow in [&torus, &sphere] {
        let (x, y) = match flow.model() {
            Model::Torus2 => (SamplePoint::torus(0.1, 0.1), SamplePoint::torus(0.4, 0.3)),
            Model::Sphere2 => (SamplePoint::sphere(0.3, 0.0), SamplePoint::sphere(1.7, 2.0)),
        };
        let res: Vec<f64> = hs.iter().map(|&h| partl_residual(flow, &x, 0.4, &y, 1.3, h).unwrap()).collect();
        slopes.push(convergence_slope(&hs, &res));
    }

    // summed second variation on sampled pairs
    let mut pairs = 0;
    let mut worst_sv = f64::INFINITY;
    while pairs < 100 {
        let x = random_sphere_point(&mut rng);
        let y = random_sphere_point(&mut rng);
        if sphere.cut_margin(&x, &y) < 0.2 {
            continue;
        }
        let t1 = rng.gen_range(0.2..1.0);
        let t2 = t1 + rng.gen_range(0.2..1.0);
        let sv = summed_variation_check(&sphere, &x, t1, &y, t2, 1e-3).unwrap();
        worst_sv = worst_sv.min(sv.rhs - sv.lhs);
        pairs += 1;
    }

    let ok = flat_err <= 1e-6
        && residual <= RESIDUAL_TOL
        && slopes.iter().all(|s| (1.7..=2.3).contains(s))
        && frame <= 1e-8
        && worst_sv >= -1e-4;
    report(
        7,
        ok,
        &format!(
            "flat Q error {flat_err:.3e}, residual {residual:.3e}, FD slopes {slopes:.3?}, frame defect {frame:.3e}, \
             worst summed-variation margin {worst_sv:.3e}"
        ),
    );
}

#[test]
fn criterion_8_theta_monotonicity() {
    let cfg = config("sphere_theta.toml");
    assert_eq!(cfg.resolution.n, 200);
    assert_eq!(cfg.theta.tau_bar, [0.5, 1.0]);
    let r = monotonicity("sphere_theta.toml");
    assert_eq!(r.series.grid.len(), 8);
    report(8, monotone(&r), &describe(&r));
}

#[test]
fn criterion_9_mass_and_spectral_closed_form() {
    let c0 = 1.5;
    let sphere = ScaleFlow::backward_ricci(Model::Sphere2, c0, 0.0, (0.0, 2.0)).unwrap();
    let torus = ScaleFlow::backward_ricci(Model::Torus2, c0, 0.0, (0.0, 2.0)).unwrap();
    let strict = ScaleFlow::user_scale(Model::Torus2, vec![0.0, 1.0], vec![1.0, 0.7], 0.0).unwrap();

    let mut mass_err = 0.0f64;
    for flow in [&sphere, &torus, &strict] {
        let bumps = match flow.model() {
            Model::Sphere2 => vec![Bump::sphere(0.7, 5.0, 1.0), Bump::sphere(2.4, 9.0, 0.3)],
            Model::Torus2 => vec![Bump::torus(0.2, 0.3, 40.0, 1.0), Bump::torus(0.7, 0.6, 20.0, 0.4)],
        };
        let u = SpectralDensity::mixture(flow, 24, 0.0, &bumps).unwrap();
        for tau in [0.1, 0.4, 0.7, 1.0] {
            let v = evolve_conjugate(flow, &u, tau).unwrap();
            mass_err = mass_err.max((v.mass(flow).unwrap() - 1.0).abs());
        }
    }

    // f = 1 + ε P₃(cos θ) on the sphere decays as (c0/c)^{1+λ/2} with λ = 12
    let p3 = |z: f64| 0.5 * (5.0 * z * z * z - 3.0 * z);
    let u = SpectralDensity::from_spectrum(Spectrum::project_zonal(6, 0.0, |z| 1.0 + 0.3 * p3(z)).unwrap());
    let mut closed_err = 0.0f64;
    for tau in [0.2, 0.9] {
        let v = evolve_conjugate(&sphere, &u, tau).unwrap();
        let c = c0 + 2.0 * tau;
        for theta in [0.1, 0.9, 2.0, 3.0] {
            let z: f64 = f64::cos(theta);
            let exact = (c0 / c) * (1.0 + 0.3 * p3(z) * (c0 / c).powf(6.0));
            closed_err = closed_err.max((v.value(&SamplePoint::sphere(theta, 0.4)) - exact).abs());
        }
    }

    // f = 1 + ε cos 2π(2x + y) on the static torus decays as exp(−4π²·5 τ/c0)
    let m = 16;
    let f = |x: f64, y: f64| 1.0 + 0.3 * (2.0 * PI * (2.0 * x + y)).cos();
    let values: Vec<f64> = (0..m * m).map(|k| f((k / m) as f64 / m as f64, (k % m) as f64 / m as f64)).collect();
    let u = SpectralDensity::from_spectrum(Spectrum::project_torus_grid(4, 0.0, m, &values).unwrap());
    for tau in [0.01, 0.05] {
        let v = evolve_conjugate(&torus, &u, tau).unwrap();
        let decay = (-4.0 * PI * PI * 5.0 * tau / c0).exp();
        for (x, y) in [(0.1, 0.2), (0.55, 0.8), (0.9, 0.05)] {
            let exact = 1.0 + 0.3 * decay * (2.0 * PI * (2.0 * x + y)).cos();
            closed_err = closed_err.max((v.value(&SamplePoint::torus(x, y)) - exact).abs());
        }
    }

    let ok = mass_err <= 1e-10 && closed_err <= 1e-10;
    report(9, ok, &format!("mass error {mass_err:.3e}, closed-form error {closed_err:.3e}"));
}
