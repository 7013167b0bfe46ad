//! The acceptance gate: every release criterion as one test, each printing
//! one `acceptance NN PASS/FAIL` line. Shared heavy scenarios (the null
//! martingale study, the drifted power study) are built once and reused.

use std::fmt::Write as _;
use std::process::Command;
use std::sync::{Arc, OnceLock};

use rand::Rng;

use mvlab_core::coeffs::{
    make_nemytskii_drift, AtomicMeasure, CoefficientSet, DriftSpec, MatrixField,
};
use mvlab_core::mgdiag::{
    characteristics, martingale_test, qv_test, residual_bound, residual_series_with,
    residual_sup, tanh_of_lambda, Measure, ResidualSeries,
};
use mvlab_core::mollify::Mollifier;
use mvlab_core::particles::{
    run_replications, simulate_all, DriftEvalMode, InitDensity, MeasureFlow, SimConfig,
};
use mvlab_core::regularity::{
    distance_from_pairs, interpolation_check, log_log_fit, lr_curve, per_time_distances,
    BandwidthPlan, DensitySpec, DistanceMode, LrCurveSpec,
};
use mvlab_core::rng::{stream_rng, StreamId};
use mvlab_core::spectral::{
    gauss_legendre_on, hermite, hermite_coeffs_atoms, hermite_coeffs_fn, pairing,
    seminorm_star, DensityGrid, TestFunction,
};

fn conclude(number: usize, name: &str, pass: bool, detail: &str) {
    use std::io::Write as _;
    let verdict = if pass { "PASS" } else { "FAIL" };
    // Straight to the process stdout so the line survives the harness's
    // capture of passing tests.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance {number:02} {verdict}: {name} ({detail})");
    let _ = out.flush();
    assert!(pass, "acceptance {number:02} {name}: {detail}");
}

fn scalar_coeffs_1d(drift: DriftSpec, sigma: f64, sigma_bar: f64) -> CoefficientSet {
    let b_sup = drift.sup_bound();
    CoefficientSet {
        d: 1,
        m: 1,
        drift,
        sigma: MatrixField::scalar(1, 1, sigma),
        sigma_bar: MatrixField::scalar(1, 1, sigma_bar),
        b_sup,
        kappa: sigma * sigma,
        beta: 1.0,
        hoelder_c: 1.0,
        sigma_sup: sigma,
        sigma_bar_sup: sigma_bar,
        test_mode: false,
    }
}

fn arctan_coeffs(sigma_bar: f64) -> CoefficientSet {
    let drift = make_nemytskii_drift(
        |_t, _x, rho: f64, out: &mut [f64]| out.fill(rho.atan()),
        std::f64::consts::FRAC_PI_2,
        "arctan of the local density",
    );
    scalar_coeffs_1d(drift, 1.0, sigma_bar)
}

fn rel_spread(values: &[f64]) -> f64 {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (hi - lo) / mean.abs().max(1e-300)
}

// ---------------------------------------------------------------------------
// Criterion 1: the mollifier family.

#[test]
fn acceptance_01_mollifier_suite() {
    let mut pass = true;
    let mut detail = String::new();

    // Unit mass across the delta ladder (d = 1) and once in d = 2. The
    // kernel is smooth and vanishes at the support boundary, so the plain
    // trapezoid rule converges far past the stated tolerance.
    let mut worst_mass = 0.0f64;
    for &delta in &[0.5, 0.25, 0.125] {
        let moll = Mollifier::new(1, delta).unwrap();
        let pts = 16001usize;
        let h = 2.0 * delta / (pts - 1) as f64;
        let mass: f64 = (0..pts)
            .map(|j| moll.eval(&[-delta + j as f64 * h]).unwrap())
            .sum::<f64>()
            * h;
        worst_mass = worst_mass.max((mass - 1.0).abs());
    }
    {
        let delta = 0.5;
        let moll = Mollifier::new(2, delta).unwrap();
        let pts = 801usize;
        let h = 2.0 * delta / (pts - 1) as f64;
        let mut mass = 0.0;
        for i in 0..pts {
            for j in 0..pts {
                mass += moll
                    .eval(&[-delta + i as f64 * h, -delta + j as f64 * h])
                    .unwrap();
            }
        }
        mass *= h * h;
        worst_mass = worst_mass.max((mass - 1.0).abs());
    }
    pass &= worst_mass <= 1e-6;
    write!(detail, "mass err {worst_mass:.1e}").unwrap();

    // Exact symmetry and exact support containment, bit for bit.
    let moll = Mollifier::new(1, 0.25).unwrap();
    for j in 0..=2000 {
        let x = -0.5 + j as f64 * (1.0 / 2000.0);
        let here = moll.eval(&[x]).unwrap();
        let there = moll.eval(&[-x]).unwrap();
        pass &= here.to_bits() == there.to_bits();
        if x.abs() >= 0.25 {
            pass &= here == 0.0;
        }
    }
    // Positivity probe away from the boundary layer where exp(-1/(1-r^2))
    // underflows to zero.
    pass &= moll.eval(&[0.24]).unwrap() > 0.0;

    // Smoothing never raises the sup norm: three bounded drift families on
    // a 1000-point grid, every delta on the ladder.
    let families: [(&str, fn(f64) -> f64, f64); 3] = [
        ("constant", |_x| 0.7, 0.7),
        ("sine", |x| (3.0 * x).sin(), 1.0),
        ("arctan", |x| (2.0 * x).atan(), std::f64::consts::FRAC_PI_2),
    ];
    let mut worst_excess = f64::NEG_INFINITY;
    for &delta in &[0.5, 0.25, 0.125] {
        let moll = Mollifier::new(1, delta).unwrap();
        let rule = moll.smoothing_rule(64);
        for (_, field, b_sup) in families {
            let mut sup = 0.0f64;
            let mut out = [0.0];
            for j in 0..1000 {
                let x = -4.0 + j as f64 * (8.0 / 999.0);
                moll.smooth_drift(|y, o| o[0] = field(y[0]), &[x], &rule, &mut out)
                    .unwrap();
                sup = sup.max(out[0].abs());
            }
            worst_excess = worst_excess.max(sup - b_sup);
            pass &= sup <= b_sup + 1e-6;
        }
    }
    write!(detail, ", sup excess {worst_excess:.1e}").unwrap();
    conclude(1, "mollifier suite", pass, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 2: the Hermite family.

#[test]
fn acceptance_02_hermite_suite() {
    let mut pass = true;
    let mut detail = String::new();

    // Orthonormality under a 400-node Gauss-Legendre rule.
    let (nodes, weights) = gauss_legendre_on(400, -12.0, 12.0);
    let nd = 20usize;
    let mut vals = vec![0.0; nodes.len() * nd];
    let mut row = vec![0.0; nd];
    for (i, &x) in nodes.iter().enumerate() {
        hermite::values_1d_into(x, &mut row);
        vals[i * nd..(i + 1) * nd].copy_from_slice(&row);
    }
    let mut worst_ortho = 0.0f64;
    for j in 0..nd {
        for k in 0..nd {
            let quad: f64 = (0..nodes.len())
                .map(|i| weights[i] * vals[i * nd + j] * vals[i * nd + k])
                .sum();
            let expect = if j == k { 1.0 } else { 0.0 };
            worst_ortho = worst_ortho.max((quad - expect).abs());
        }
    }
    pass &= worst_ortho <= 1e-8;
    write!(detail, "ortho err {worst_ortho:.1e}").unwrap();

    // The first function's value at the origin.
    let h1 = hermite::eval_1d(1, 0.0).unwrap();
    let expect = (2.0 * std::f64::consts::PI).powf(-0.25);
    pass &= (h1 - expect).abs() <= 1e-10;

    // Uniform sup bound for the first forty functions.
    let bound = (2.0 * std::f64::consts::PI).powf(0.25);
    let mut worst_sup = 0.0f64;
    for k in 1..=40 {
        let mut sup = 0.0f64;
        for j in 0..=48000 {
            let x = -12.0 + j as f64 * (24.0 / 48000.0);
            sup = sup.max(hermite::eval_1d(k, x).unwrap().abs());
        }
        worst_sup = worst_sup.max(sup);
    }
    pass &= worst_sup <= bound;
    write!(detail, ", sup {worst_sup:.4} <= {bound:.4}").unwrap();

    // Pairing a point mass at the origin against smooth test functions
    // recovers the point evaluation at the default cutoff.
    let lam = hermite_coeffs_atoms(&[0.0], 1, 60).unwrap();
    let functions = vec![
        TestFunction::gaussian_bump(&[0.0], 1.0),
        TestFunction::gaussian_bump(&[-0.4], 1.3),
        TestFunction::hermite(&[3]),
        TestFunction::gaussian_bump(&[0.1], 1.1)
            .scaled(0.6)
            .plus(TestFunction::hermite(&[2]).scaled(0.4)),
    ];
    let mut worst_pairing = 0.0f64;
    for phi in &functions {
        let table = hermite_coeffs_fn(phi, 60).unwrap();
        let paired = pairing(&lam, &table).unwrap();
        worst_pairing = worst_pairing.max((paired - phi.value(&[0.0])).abs());
    }
    pass &= worst_pairing <= 1e-6;
    write!(detail, ", pairing err {worst_pairing:.1e}").unwrap();
    conclude(2, "hermite suite", pass, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 3: A, Q, C against a from-scratch summation oracle.

struct RandomInstance {
    d: usize,
    m: usize,
    atoms: Vec<f64>,
    sig: Vec<f64>,
    sigbar: Vec<f64>,
    c0: Vec<f64>,
    c1: Vec<f64>,
    c2: Vec<f64>,
    t: f64,
    phi: TestFunction,
    psi: TestFunction,
}

impl RandomInstance {
    fn draw(index: u64) -> RandomInstance {
        let mut rng = stream_rng(0x0acc_e503, index, StreamId::Aux(3));
        let d = if rng.gen_bool(0.5) { 1 } else { 2 };
        let m = if rng.gen_bool(0.5) { 1 } else { 2 };
        let n = rng.gen_range(3..=20usize);
        let atoms: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let sig: Vec<f64> = (0..d * d).map(|_| rng.gen_range(0.3..1.2)).collect();
        let sigbar: Vec<f64> = (0..d * m).map(|_| rng.gen_range(0.0..0.6)).collect();
        let c0: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c1: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let c2: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let t = rng.gen_range(0.0..1.0);
        fn pick<R: Rng>(rng: &mut R, d: usize) -> TestFunction {
            if rng.gen_bool(0.5) {
                let degrees: Vec<usize> = (0..d).map(|_| rng.gen_range(1..=5usize)).collect();
                TestFunction::hermite(&degrees)
            } else {
                let center: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                TestFunction::gaussian_bump(&center, rng.gen_range(0.6..1.5))
            }
        }
        let phi = pick(&mut rng, d);
        let psi = pick(&mut rng, d);
        RandomInstance { d, m, atoms, sig, sigbar, c0, c1, c2, t, phi, psi }
    }

    /// The shared drift formula: affine in the position and in the distance
    /// to the measure's componentwise mean.
    fn drift_at(&self, x: &[f64], atoms: &[f64], out: &mut [f64]) {
        let d = self.d;
        let n = atoms.len() / d;
        for j in 0..d {
            let mut mean = 0.0;
            for i in 0..n {
                mean += atoms[i * d + j];
            }
            mean /= n as f64;
            out[j] = self.c0[j] + self.c1[j] * x[j].sin() + self.c2[j] * (mean - x[j]);
        }
    }

    fn coefficient_set(&self) -> CoefficientSet {
        let (d, m) = (self.d, self.m);
        let (c0, c1, c2) = (self.c0.clone(), self.c1.clone(), self.c2.clone());
        let drift = DriftSpec::Custom {
            f: Arc::new(move |_t, x: &[f64], mu: AtomicMeasure, out: &mut [f64]| {
                let n = mu.len();
                for j in 0..d {
                    let mut mean = 0.0;
                    for i in 0..n {
                        mean += mu.atom(i)[j];
                    }
                    mean /= n as f64;
                    out[j] = c0[j] + c1[j] * x[j].sin() + c2[j] * (mean - x[j]);
                }
            }),
            sup_bound: 5.0,
            description: "random affine functional".into(),
        };
        CoefficientSet {
            d,
            m,
            drift,
            sigma: MatrixField::constant(d, d, self.sig.clone()),
            sigma_bar: MatrixField::constant(d, m, self.sigbar.clone()),
            b_sup: 5.0,
            kappa: 0.09,
            beta: 1.0,
            hoelder_c: 1.0,
            sigma_sup: self.sig.iter().map(|v| v * v).sum::<f64>().sqrt(),
            sigma_bar_sup: self.sigbar.iter().map(|v| v * v).sum::<f64>().sqrt(),
            test_mode: true,
        }
    }

    /// Brute-force A, Q, C by direct summation, particles visited in
    /// reverse order so agreement is up to reordering only. Returns the
    /// values plus the per-quantity absolute-sum scales.
    fn oracle(&self) -> ([f64; 3], [f64; 3]) {
        let (d, m) = (self.d, self.m);
        let n = self.atoms.len() / d;
        let mut gphi = vec![0.0; d];
        let mut hphi = vec![0.0; d * d];
        let mut gpsi = vec![0.0; d];
        let mut b = vec![0.0; d];
        let mut a = 0.0;
        let mut a_scale = 0.0;
        let mut r_phi = vec![0.0; m];
        let mut r_psi = vec![0.0; m];
        let mut r_phi_abs = vec![0.0; m];
        let mut r_psi_abs = vec![0.0; m];
        let mut c = 0.0;
        let mut c_scale = 0.0;
        for i in (0..n).rev() {
            let x = &self.atoms[i * d..(i + 1) * d];
            self.phi.gradient(x, &mut gphi);
            self.phi.hessian(x, &mut hphi);
            self.psi.gradient(x, &mut gpsi);
            self.drift_at(x, &self.atoms, &mut b);
            let mut term = 0.0;
            let mut term_scale = 0.0;
            for j in 0..d {
                term += b[j] * gphi[j];
                term_scale += (b[j] * gphi[j]).abs();
            }
            for j in 0..d {
                for l in 0..d {
                    let mut ajl = 0.0;
                    for k in 0..d {
                        ajl += self.sig[j * d + k] * self.sig[l * d + k];
                    }
                    for k in 0..m {
                        ajl += self.sigbar[j * m + k] * self.sigbar[l * m + k];
                    }
                    term += 0.5 * ajl * hphi[j * d + l];
                    term_scale += (0.5 * ajl * hphi[j * d + l]).abs();
                }
            }
            a += term;
            a_scale += term_scale;
            for l in 0..m {
                let mut rp = 0.0;
                let mut rq = 0.0;
                for j in 0..d {
                    rp += self.sigbar[j * m + l] * gphi[j];
                    rq += self.sigbar[j * m + l] * gpsi[j];
                }
                r_phi[l] += rp;
                r_psi[l] += rq;
                r_phi_abs[l] += rp.abs();
                r_psi_abs[l] += rq.abs();
            }
            for l in 0..d {
                let mut up = 0.0;
                let mut uq = 0.0;
                for j in 0..d {
                    up += self.sig[j * d + l] * gphi[j];
                    uq += self.sig[j * d + l] * gpsi[j];
                }
                c += up * uq;
                c_scale += (up * uq).abs();
            }
        }
        let inv = 1.0 / n as f64;
        let q: f64 = (0..m).map(|l| (r_phi[l] * inv) * (r_psi[l] * inv)).sum();
        let q_scale: f64 = (0..m)
            .map(|l| (r_phi_abs[l] * inv) * (r_psi_abs[l] * inv))
            .sum();
        (
            [a * inv, q, c * inv],
            [a_scale * inv, q_scale, c_scale * inv],
        )
    }
}

#[test]
fn acceptance_03_atomic_oracles() {
    let mut pass = true;
    let mut worst = 0.0f64;
    for index in 0..100u64 {
        let inst = RandomInstance::draw(index);
        let coeffs = inst.coefficient_set();
        let mu = AtomicMeasure::new(inst.d, &inst.atoms).unwrap();
        let sample = characteristics(
            &coeffs,
            0.0,
            inst.t,
            Measure::Atoms(mu),
            &inst.phi,
            &inst.psi,
        )
        .unwrap();
        let (expect, scales) = inst.oracle();
        for (got, (want, scale)) in [sample.a_val, sample.q_val, sample.c_val]
            .into_iter()
            .zip(expect.into_iter().zip(scales))
        {
            let rel = (got - want).abs() / scale.max(1e-12);
            worst = worst.max(rel);
            pass &= rel <= 1e-14;
        }
    }
    conclude(
        3,
        "atomic A/Q/C oracle equivalence",
        pass,
        &format!("worst reordering error {worst:.1e} over 100 instances"),
    );
}

// ---------------------------------------------------------------------------
// Shared heavy scenarios.

struct NullStudy {
    coeffs: CoefficientSet,
    horizon: f64,
    phis: Vec<TestFunction>,
    /// `series[i][rep]` for test function i.
    series: Vec<Vec<ResidualSeries>>,
}

fn null_study() -> &'static NullStudy {
    static CELL: OnceLock<NullStudy> = OnceLock::new();
    CELL.get_or_init(|| {
        let coeffs = scalar_coeffs_1d(DriftSpec::zero(1), 1.0, 0.0);
        let phis = vec![
            TestFunction::hermite(&[2]),
            TestFunction::gaussian_bump(&[0.0], 1.0),
            TestFunction::gaussian_bump(&[0.6], 0.8),
        ];
        let mut cfg = SimConfig::bare(
            coeffs.clone(),
            InitDensity::Gaussian { mean: vec![0.0], std: 1.0 },
            64,
            1.0,
            1e-3,
            0.5,
            41,
        );
        cfg.replications = 2000;
        let cfg = cfg.validated().unwrap();
        let per_flow = run_replications(&cfg, |flow| {
            Ok(phis
                .iter()
                .map(|phi| {
                    residual_series_with(&flow, &coeffs, 0.5, phi, 1.0, 64)
                        .expect("null residuals")
                })
                .collect::<Vec<_>>())
        })
        .expect("null simulation");
        let mut series: Vec<Vec<ResidualSeries>> = vec![Vec::new(); phis.len()];
        for triple in per_flow {
            for (i, s) in triple.into_iter().enumerate() {
                series[i].push(s);
            }
        }
        NullStudy { coeffs, horizon: 1.0, phis, series }
    })
}

struct PowerStudy {
    coeffs: CoefficientSet,
    horizon: f64,
    phi: TestFunction,
    faithful: Vec<ResidualSeries>,
    doubled: Vec<ResidualSeries>,
}

fn power_study() -> &'static PowerStudy {
    static CELL: OnceLock<PowerStudy> = OnceLock::new();
    CELL.get_or_init(|| {
        let coeffs = scalar_coeffs_1d(DriftSpec::constant(vec![1.0]), 1.0, 0.0);
        let phi = TestFunction::gaussian_bump(&[1.0], 1.2);
        let mut cfg = SimConfig::bare(
            coeffs.clone(),
            InitDensity::Gaussian { mean: vec![0.0], std: 1.0 },
            64,
            1.0,
            1e-3,
            0.5,
            43,
        );
        cfg.replications = 400;
        cfg.snapshot_stride = 5;
        cfg.smoothing_nodes = 8;
        let cfg = cfg.validated().unwrap();
        let pairs = run_replications(&cfg, |flow| {
            let faithful = residual_series_with(&flow, &coeffs, 0.5, &phi, 1.0, 8)
                .expect("faithful residuals");
            let doubled = residual_series_with(&flow, &coeffs, 0.5, &phi, 2.0, 8)
                .expect("doubled residuals");
            Ok((faithful, doubled))
        })
        .expect("power simulation");
        let (faithful, doubled) = pairs.into_iter().unzip();
        PowerStudy { coeffs, horizon: 1.0, phi, faithful, doubled }
    })
}

// ---------------------------------------------------------------------------
// Criterion 4: the martingale test accepts the null and flags a corrupted
// compensator.

#[test]
fn acceptance_04_martingale_null_and_power() {
    let null = null_study();
    let g = tanh_of_lambda();
    let mut pass = true;
    let mut detail = String::new();
    for ensemble in &null.series {
        let report = martingale_test(ensemble, &g, 0.25, 0.75).unwrap();
        pass &= report.z.abs() <= 3.0;
        write!(detail, "null z {:+.2}, ", report.z).unwrap();
    }
    let power = power_study();
    let corrupted = martingale_test(&power.doubled, &g, 0.25, 0.75).unwrap();
    pass &= corrupted.z.abs() > 5.0;
    write!(detail, "doubled-drift z {:+.1}", corrupted.z).unwrap();
    conclude(4, "martingale null and power", pass, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 5: realized vs predicted quadratic variation, and its 1/n decay
// without common noise.

#[test]
fn acceptance_05_qv_error_and_slope() {
    let null = null_study();
    let mut pass = true;
    let mut detail = String::new();
    let mut worst_rel = 0.0f64;
    for ensemble in &null.series {
        let report = qv_test(ensemble, 64).unwrap();
        worst_rel = worst_rel.max(report.mean_relative_error);
        pass &= report.pass;
    }
    write!(detail, "worst mean rel err {:.1}%", 100.0 * worst_rel).unwrap();

    let coeffs = scalar_coeffs_1d(DriftSpec::zero(1), 1.0, 0.0);
    let phi = TestFunction::hermite(&[2]);
    let ns = [64usize, 256, 1024];
    let mut realized = Vec::new();
    for &n in &ns {
        let mut cfg = SimConfig::bare(
            coeffs.clone(),
            InitDensity::Gaussian { mean: vec![0.0], std: 1.0 },
            n,
            1.0,
            1e-3,
            0.5,
            47,
        );
        cfg.replications = 200;
        cfg.snapshot_stride = 5;
        let cfg = cfg.validated().unwrap();
        let ensemble = run_replications(&cfg, |flow| {
            Ok(residual_series_with(&flow, &coeffs, 0.5, &phi, 1.0, 64)
                .expect("slope residuals"))
        })
        .expect("slope simulation");
        realized.push(qv_test(&ensemble, n).unwrap().mean_realized);
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let (_, slope) = log_log_fit(&xs, &realized).unwrap();
    pass &= (slope + 1.0).abs() <= 0.2;
    write!(detail, ", qv slope in n {slope:.3}").unwrap();
    conclude(5, "qv error and 1/n slope", pass, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 6: the uniform pathwise residual bound.

#[test]
fn acceptance_06_residual_bound() {
    let mut pass = true;
    let mut worst_margin = f64::INFINITY;
    let null = null_study();
    for (phi, ensemble) in null.phis.iter().zip(&null.series) {
        let norm = seminorm_star(phi, 2).unwrap();
        let bound = residual_bound(&null.coeffs, null.horizon, norm) + 0.05;
        for series in ensemble {
            let margin = bound - residual_sup(series);
            worst_margin = worst_margin.min(margin);
            pass &= margin >= 0.0;
        }
    }
    let power = power_study();
    let norm = seminorm_star(&power.phi, 2).unwrap();
    let bound = residual_bound(&power.coeffs, power.horizon, norm) + 0.05;
    for series in &power.faithful {
        let margin = bound - residual_sup(series);
        worst_margin = worst_margin.min(margin);
        pass &= margin >= 0.0;
    }
    let paths = null.series.iter().map(|e| e.len()).sum::<usize>() + power.faithful.len();
    conclude(
        6,
        "uniform residual bound",
        pass,
        &format!("{paths} paths, smallest margin {worst_margin:.3}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: the L^xi interpolation inequality on random grids.

#[test]
fn acceptance_07_interpolation_slack() {
    let mut pass = true;
    let mut worst = f64::INFINITY;
    for index in 0..100u64 {
        let mut rng = stream_rng(0x0acc_e507, index, StreamId::Aux(7));
        let d = if index % 2 == 0 { 1 } else { 2 };
        let res = if d == 1 {
            rng.gen_range(16..200usize)
        } else {
            rng.gen_range(8..40usize)
        };
        let half_width = rng.gen_range(1.0..8.0);
        let values: Vec<f64> = (0..res.pow(d as u32))
            .map(|_| {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(0.0..3.0)
                }
            })
            .collect();
        let grid = DensityGrid::from_values(d, half_width, res, values).unwrap();
        for (xi, r) in [(1.5, 2.0), (2.0, 4.0)] {
            let report = interpolation_check(&grid, xi, r).unwrap();
            worst = worst.min(report.slack);
            pass &= report.slack >= -1e-10;
        }
    }
    conclude(
        7,
        "interpolation inequality",
        pass,
        &format!("smallest slack {worst:.2e} over 100 grids"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: the Nemytskii regularity envelope and its stability in delta.

#[test]
fn acceptance_08_regularity_envelope() {
    let mut pass = true;
    let mut detail = String::new();
    let mut fit_cs = Vec::new();
    let mut fit_gammas = Vec::new();
    for &delta in &[0.5, 0.25, 0.125] {
        let coeffs = arctan_coeffs(0.5);
        let mut cfg = SimConfig::bare(
            coeffs,
            InitDensity::Gaussian { mean: vec![0.0], std: 0.3 },
            1024,
            1.0,
            0.01,
            delta,
            53,
        );
        cfg.replications = 200;
        cfg.smoothing_nodes = 16;
        cfg.drift_mode = DriftEvalMode::Gridded { half_width: 8.0, resolution: 256 };
        let flows = simulate_all(&cfg.validated().unwrap()).unwrap();
        let curve = lr_curve(
            &flows,
            &LrCurveSpec {
                r: 2.0,
                q: 2.0,
                w: 0.0,
                burn_in: 0.1,
                density: DensitySpec {
                    half_width: 8.0,
                    resolution: 256,
                    bandwidth: BandwidthPlan::Silverman,
                },
            },
        )
        .unwrap();
        pass &= curve.envelope_violations <= 0.05;
        pass &= curve.fit_gamma < 1.0;
        write!(
            detail,
            "delta {delta}: gamma {:.3} viol {:.1}%; ",
            curve.fit_gamma,
            100.0 * curve.envelope_violations
        )
        .unwrap();
        fit_cs.push(curve.fit_c);
        fit_gammas.push(curve.fit_gamma);
    }
    let c_spread = rel_spread(&fit_cs);
    let gamma_spread = rel_spread(&fit_gammas);
    pass &= c_spread < 0.3 && gamma_spread < 0.3;
    write!(
        detail,
        "spreads c {:.1}% gamma {:.1}%",
        100.0 * c_spread,
        100.0 * gamma_spread
    )
    .unwrap();
    conclude(8, "regularity envelope", pass, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 9: finite-ladder Cauchy trends along both limits.

fn paired_mean_distance(
    a: &[MeasureFlow],
    b: &[MeasureFlow],
    p: f64,
    xi: f64,
    mode: DistanceMode,
    spec: &DensitySpec,
) -> f64 {
    let mut acc = 0.0;
    for (fa, fb) in a.iter().zip(b) {
        let pairs = per_time_distances(fa, fb, xi, spec).unwrap();
        acc += distance_from_pairs(&pairs, p, xi, mode).unwrap().value;
    }
    acc / a.len().min(b.len()) as f64
}

#[test]
fn acceptance_09_two_step_trend() {
    let mut pass = true;
    let mut detail = String::new();
    let spec = DensitySpec {
        half_width: 8.0,
        resolution: 256,
        bandwidth: BandwidthPlan::Fixed(0.3),
    };
    let simulate_cell = |n: usize, delta: f64, reps: usize| -> Vec<MeasureFlow> {
        let mut cfg = SimConfig::bare(
            arctan_coeffs(0.5),
            InitDensity::Gaussian { mean: vec![0.0], std: 1.0 },
            n,
            0.5,
            0.01,
            delta,
            59,
        );
        cfg.replications = reps;
        cfg.smoothing_nodes = 16;
        cfg.drift_mode = DriftEvalMode::Gridded { half_width: 8.0, resolution: 256 };
        simulate_all(&cfg.validated().unwrap()).unwrap()
    };

    // Replications share noise streams across cells, so each successive-n
    // distance isolates the particles added by the doubling.
    let ns = [128usize, 256, 512, 1024];
    let cells: Vec<Vec<MeasureFlow>> = ns.iter().map(|&n| simulate_cell(n, 0.5, 12)).collect();
    let mut omega = Vec::new();
    for pair in cells.windows(2) {
        omega.push(paired_mean_distance(
            &pair[0],
            &pair[1],
            2.0,
            1.0,
            DistanceMode::Omega,
            &spec,
        ));
    }
    pass &= omega.windows(2).all(|w| w[1] < w[0]);
    write!(
        detail,
        "omega over n: {}",
        omega.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" > ")
    )
    .unwrap();
    drop(cells);

    // At fixed n the same replication differs only through the drift
    // mollification scale.
    let deltas = [0.5, 0.25, 0.125];
    let arms: Vec<Vec<MeasureFlow>> = deltas.iter().map(|&dl| simulate_cell(1024, dl, 8)).collect();
    let mut sup = Vec::new();
    for pair in arms.windows(2) {
        sup.push(paired_mean_distance(
            &pair[0],
            &pair[1],
            1.5,
            1.5,
            DistanceMode::SupCompact { t0: 0.1 },
            &spec,
        ));
    }
    pass &= sup.windows(2).all(|w| w[1] < w[0]);
    write!(
        detail,
        "; sup-compact over delta: {}",
        sup.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(" > ")
    )
    .unwrap();
    conclude(9, "two-step convergence trend", pass, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 10: parallelism does not touch the output bytes.

#[test]
fn acceptance_10_parallel_determinism() {
    let body = r#"
name = "det"
dimension = 1
seed = 61
replications = 4
horizon = 0.2
dt = 0.01
n_ladder = [16, 32]
delta_ladder = [0.5, 0.25]

[coefficients]
drift = "convolution_kernel"
sigma = 1.0
sigma_bar = 0.5

[init]
kind = "gaussian"
std = 1.0

[grid]
half_width = 6.0
resolution = 64

[test_functions]
hermite = [2]

[diagnostics]
martingale = true
qv = true
regularity = true
distances = true

[output]
directory = "out"
formats = ["csv", "json", "svg"]
"#;
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("det.toml");
    std::fs::write(&config, body).unwrap();
    let mut codes = Vec::new();
    for (jobs, sub) in [("1", "serial"), ("8", "parallel")] {
        let out = Command::new(env!("CARGO_BIN_EXE_mvlab"))
            .args([
                "run",
                config.to_str().unwrap(),
                "--jobs",
                jobs,
                "--out",
                dir.path().join(sub).to_str().unwrap(),
            ])
            .output()
            .expect("binary runs");
        codes.push(out.status.code());
    }
    let mut pass = codes[0] == Some(0) && codes[1] == Some(0);

    let list = |sub: &str| -> Vec<String> {
        let mut names: Vec<String> = std::fs::read_dir(dir.path().join(sub))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        names
    };
    let serial = list("serial");
    pass &= serial == list("parallel");
    let mut identical = 0usize;
    for name in &serial {
        let a = std::fs::read(dir.path().join("serial").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("parallel").join(name)).unwrap();
        if a == b {
            identical += 1;
        } else {
            pass = false;
        }
    }
    conclude(
        10,
        "parallel determinism",
        pass,
        &format!("{identical} of {} files byte-identical under --jobs 1 vs 8", serial.len()),
    );
}
