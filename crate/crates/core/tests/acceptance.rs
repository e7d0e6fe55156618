//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities (run with `--nocapture` to see them).

use std::time::Instant;

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sfe::config::ExperimentConfig;
use sfe::estimator::{
    krr_open_estimate, Estimate, PressureSnapshot, ProposedOperator, QMode, Regularization, WMode,
};
use sfe::evaluation::{frequency_sweep, prepare_cell_inputs};
use sfe::geometry::{lebedev_order7, tdesign_60, MicArray};
use sfe::kernel::{
    bessel_kernel, gram, sr_kernel, sr_weight, KernelSpec, MdParams, SrParams, SrWeightMode,
    WaveContext,
};
use sfe::linalg::{CMatrix, CVector};
use sfe::mdopt::{optimize_md, MdOptConfig};
use sfe::simulation::{
    add_noise, greens_function, rigid_sphere_pressures, NoiseSpec, SourceScene,
};
use sfe::special::{
    sph_bessel_j, sph_bessel_j_upto, sph_bessel_y_upto, sph_harmonics_upto, sph_hankel1_upto,
    Order, UnitDirection,
};

fn ctx(f: f64) -> WaveContext {
    WaveContext::new(f, 340.26).unwrap()
}

fn array_60() -> MicArray {
    tdesign_60().scaled(0.05).unwrap()
}

fn sub_array(m: usize, radius: f64) -> MicArray {
    let full = tdesign_60().scaled(radius).unwrap();
    MicArray::new(
        radius,
        full.positions()
            .iter()
            .step_by(60 / m)
            .take(m)
            .cloned()
            .collect(),
    )
    .unwrap()
}

fn scene() -> SourceScene {
    SourceScene::single(Vector3::new(3.0, 0.0, 0.0), Complex64::new(1.0, 0.0))
}

#[test]
fn criterion_01_special_function_invariants() {
    let start = Instant::now();

    // recurrence and Wronskian over nu <= 20, x in [0.1, 50]
    let xs: Vec<f64> = (0..40).map(|i| 0.1 + i as f64 * (49.9 / 39.0)).collect();
    let mut worst_rec: f64 = 0.0;
    let mut worst_wron: f64 = 0.0;
    for &x in &xs {
        let j = sph_bessel_j_upto(22, x);
        let y = sph_bessel_y_upto(22, x).unwrap();
        let h = sph_hankel1_upto(22, x).unwrap();
        for nu in 1..=20usize {
            let lhs = (2 * nu + 1) as f64 * j[nu] / x;
            let rhs = j[nu - 1] + j[nu + 1];
            worst_rec = worst_rec.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
            let lhs = (2 * nu + 1) as f64 / x * h[nu];
            let rhs = h[nu - 1] + h[nu + 1];
            worst_rec = worst_rec.max((lhs - rhs).norm() / lhs.norm().max(rhs.norm()));
        }
        for nu in 0..=20usize {
            let jd = if nu == 0 {
                -j[1]
            } else {
                j[nu - 1] - (nu + 1) as f64 / x * j[nu]
            };
            let yd = if nu == 0 {
                -y[1]
            } else {
                y[nu - 1] - (nu + 1) as f64 / x * y[nu]
            };
            let w = j[nu] * yd - jd * y[nu];
            worst_wron = worst_wron.max((w - 1.0 / (x * x)).abs() * (x * x));
        }
    }
    assert!(worst_rec < 1e-10, "recurrence deviation {worst_rec}");
    assert!(worst_wron < 1e-10, "Wronskian deviation {worst_wron}");

    // conjugation symmetry of the harmonics
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst_conj: f64 = 0.0;
    for _ in 0..100 {
        let v = [
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
        ];
        let Ok(dir) = UnitDirection::from_vector(v) else {
            continue;
        };
        let t = sph_harmonics_upto(6, &dir);
        for nu in 0..=6u32 {
            for mu in 0..=nu as i32 {
                let plus = t[Order::new(nu, mu).unwrap().index()];
                let minus = t[Order::new(nu, -mu).unwrap().index()];
                let sign = if mu % 2 == 0 { 1.0 } else { -1.0 };
                worst_conj = worst_conj.max((minus - sign * plus.conj()).norm());
            }
        }
    }
    assert!(worst_conj < 1e-12, "conjugation deviation {worst_conj}");

    // kernel normal-derivative Grams vs central finite differences
    let c = ctx(1000.0);
    let arr = array_60();
    let step = 1e-6 * arr.radius_m();
    let grid = lebedev_order7();
    let q = grid.len();
    let md = MdParams::new(grid, vec![1.0 / q as f64; q], vec![20.0; q]).unwrap();
    let specs = [
        KernelSpec::Bessel,
        KernelSpec::MultiDirectional(md),
        KernelSpec::SourceRegion(SrParams::new(0.05, 5, SrWeightMode::Analytic).unwrap()),
    ];
    let mut worst_fd: f64 = 0.0;
    for spec in &specs {
        let g = gram(spec, &arr, &c).unwrap();
        for &(i, j) in &[(0usize, 0usize), (3, 41), (17, 8), (59, 59), (30, 1)] {
            let ri = arr.positions()[i];
            let rj = arr.positions()[j];
            let n = ri / ri.norm();
            let plus = sfe::kernel::kernel_value(spec, &(ri + step * n), &rj, &c).unwrap();
            let minus = sfe::kernel::kernel_value(spec, &(ri - step * n), &rj, &c).unwrap();
            let fd = (plus - minus) / Complex64::new(2.0 * step, 0.0);
            worst_fd = worst_fd.max((g.dk_dn[(i, j)] - fd).norm());
        }
    }
    assert!(worst_fd < 1e-6, "finite-difference deviation {worst_fd}");

    let dt = start.elapsed().as_secs_f64();
    assert!(dt < 10.0, "criterion 1 took {dt:.1} s (limit 10 s)");
    println!(
        "criterion 01 PASS: recurrence {worst_rec:.2e}, Wronskian {worst_wron:.2e}, \
         conjugation {worst_conj:.2e}, dK/dn vs FD {worst_fd:.2e} ({dt:.2} s)"
    );
}

/// Adaptive Simpson with a relative target; independent quadrature oracle.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, m, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, right, tol / 2.0, depth - 1)
        }
    }
    let whole = simpson(f, a, b);
    recurse(f, a, b, whole, rel_tol * whole.abs().max(1e-300), 48)
}

#[test]
fn criterion_02_modal_weight_closed_form_vs_quadrature() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for &kr in &[0.1, 0.5, 1.0, 2.0, 5.0] {
        // fix radius 0.05 m and pick the frequency giving this kR
        let radius = 0.05;
        let f = kr * 340.26 / (2.0 * std::f64::consts::PI * radius);
        let c = ctx(f);
        let k = c.wavenumber();
        for nu in 0..=10usize {
            let w = 3.0 / (4.0 * std::f64::consts::PI * radius.powi(3));
            let integrand = move |r: f64| {
                let j = sph_bessel_j(nu, k * r);
                r * r * j * j * w
            };
            let oracle = k * k * adaptive_simpson(&integrand, 0.0, radius, 1e-12);
            let closed = sr_weight(nu, &c, radius, SrWeightMode::Analytic);
            let rel = (closed - oracle).abs() / oracle.abs();
            worst = worst.max(rel);
            assert!(
                rel < 1e-10,
                "nu={nu}, kR={kr}: closed {closed} vs quadrature {oracle} (rel {rel})"
            );
        }
    }
    let dt = start.elapsed().as_secs_f64();
    assert!(dt < 5.0, "criterion 2 took {dt:.1} s (limit 5 s)");
    println!("criterion 02 PASS: worst relative deviation {worst:.2e} ({dt:.2} s)");
}

#[test]
fn criterion_03_sr_kernel_vs_monte_carlo() {
    let start = Instant::now();
    let c = ctx(1000.0);
    let radius = 0.05;
    let sr = SrParams::new(radius, 20, SrWeightMode::Analytic).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20250808);
    let n_samples = 1_000_000usize;

    for pair in 0..5 {
        // random pair outside the sphere
        let rand_pt = |rng: &mut ChaCha8Rng| loop {
            let v = Vector3::new(
                0.4 * (rng.gen::<f64>() - 0.5),
                0.4 * (rng.gen::<f64>() - 0.5),
                0.4 * (rng.gen::<f64>() - 0.5),
            );
            if v.norm() > 0.07 {
                return v;
            }
        };
        let r = rand_pt(&mut rng);
        let rp = rand_pt(&mut rng);
        let series = sr_kernel(&r, &rp, &c, &sr).unwrap();

        // Monte Carlo over the uniform source ball: with w = 1/volume the
        // weighted integral is the plain mean of G(r|rs) conj(G(rp|rs))
        let mut sum = Complex64::new(0.0, 0.0);
        let mut sum_sq_re = 0.0;
        let mut sum_sq_im = 0.0;
        for _ in 0..n_samples {
            let rs = loop {
                let v = Vector3::new(
                    radius * (2.0 * rng.gen::<f64>() - 1.0),
                    radius * (2.0 * rng.gen::<f64>() - 1.0),
                    radius * (2.0 * rng.gen::<f64>() - 1.0),
                );
                if v.norm() <= radius && v.norm() > 0.0 {
                    break v;
                }
            };
            let g = greens_function(&r, &rs, &c).unwrap()
                * greens_function(&rp, &rs, &c).unwrap().conj();
            sum += g;
            sum_sq_re += g.re * g.re;
            sum_sq_im += g.im * g.im;
        }
        let n = n_samples as f64;
        let mean = sum / n;
        let se_re = ((sum_sq_re / n - mean.re * mean.re) / n).sqrt();
        let se_im = ((sum_sq_im / n - mean.im * mean.im) / n).sqrt();
        let dre = (mean.re - series.re).abs();
        let dim = (mean.im - series.im).abs();
        assert!(
            dre <= 3.0 * se_re,
            "pair {pair}: Re deviation {dre} vs 3 SE {}",
            3.0 * se_re
        );
        assert!(
            dim <= 3.0 * se_im,
            "pair {pair}: Im deviation {dim} vs 3 SE {}",
            3.0 * se_im
        );
    }
    let dt = start.elapsed().as_secs_f64();
    assert!(dt < 60.0, "criterion 3 took {dt:.1} s (limit 60 s)");
    println!("criterion 03 PASS: 5 pairs within 3 standard errors at 1e6 samples ({dt:.2} s)");
}

#[test]
fn criterion_04_point_source_round_trip() {
    let start = Instant::now();
    let arr = array_60();
    let mut worst: f64 = 0.0;
    for &f in &[100.0, 250.0, 500.0, 1000.0, 1500.0, 2000.0] {
        let c = ctx(f);
        let coeffs = sfe::simulation::point_source_swf_coeffs(
            &Vector3::new(3.0, 0.0, 0.0),
            Complex64::new(1.0, 0.0),
            &c,
            50,
        )
        .unwrap();
        let synth = sfe::estimator::regular_basis_eval(&coeffs, &c, arr.positions());
        for (p, s) in arr.positions().iter().zip(synth) {
            let truth = greens_function(p, &Vector3::new(3.0, 0.0, 0.0), &c).unwrap();
            worst = worst.max((s - truth).norm() / truth.norm());
        }
    }
    assert!(worst < 1e-9, "round-trip relative deviation {worst}");
    let dt = start.elapsed().as_secs_f64();
    println!("criterion 04 PASS: worst relative deviation {worst:.2e} ({dt:.2} s)");
}

#[test]
#[allow(clippy::needless_range_loop)]
fn criterion_05_block_elimination_vs_joint_kkt() {
    let start = Instant::now();
    let c = ctx(1000.0);
    let array = sub_array(12, 0.3);
    let m = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let s = CVector::from_fn(m, |_, _| {
        Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    let reg = Regularization::new(1e-4, 1e-3).unwrap();

    // boundary-constrained solve vs the constrained joint KKT system
    let sr = SrParams::new(array.radius_m(), 3, SrWeightMode::Analytic).unwrap();
    let op = ProposedOperator::build(&array, &c, &KernelSpec::Bessel, &sr).unwrap();
    let alpha = op.solve_alpha(&s, reg, QMode::Kernel).unwrap();
    let mut kkt = CMatrix::zeros(3 * m, 3 * m);
    let khk = op.k_inc.adjoint() * &op.k_inc;
    let khks = op.k_inc.adjoint() * &op.k_sct;
    let ksh_ks = op.k_sct.adjoint() * &op.k_sct;
    for i in 0..m {
        for j in 0..m {
            kkt[(i, j)] = khk[(i, j)] + Complex64::new(reg.lambda1, 0.0) * op.k_inc[(i, j)];
            kkt[(i, m + j)] = khks[(i, j)];
            kkt[(m + i, j)] = khks[(j, i)].conj();
            kkt[(m + i, m + j)] =
                ksh_ks[(i, j)] + Complex64::new(reg.lambda2, 0.0) * op.k_sct[(i, j)];
            kkt[(i, 2 * m + j)] = op.m_mix[(j, i)].conj();
            kkt[(m + i, 2 * m + j)] = op.m_sct[(j, i)].conj();
            kkt[(2 * m + i, j)] = op.m_mix[(i, j)];
            kkt[(2 * m + i, m + j)] = op.m_sct[(i, j)];
        }
    }
    let mut rhs = CVector::zeros(3 * m);
    let khs = op.k_inc.adjoint() * &s;
    let kshs = op.k_sct.adjoint() * &s;
    for i in 0..m {
        rhs[i] = khs[i];
        rhs[m + i] = kshs[i];
    }
    let sol = kkt.lu().solve(&rhs).expect("KKT solvable");
    let alpha_kkt = sol.rows(0, m).into_owned();
    let dev_proposed = (&alpha - &alpha_kkt).norm() / alpha_kkt.norm();
    assert!(dev_proposed < 1e-8, "proposed vs KKT deviation {dev_proposed}");

    // open-field closed form vs the joint two-block solve
    let n = 3;
    let snap = PressureSnapshot::new(c, array.clone(), s.clone()).unwrap();
    let est = krr_open_estimate(&snap, &KernelSpec::Bessel, n, reg, WMode::Identity).unwrap();
    let Estimate::Krr(e) = est else { panic!() };
    let g = gram(&KernelSpec::Bessel, &array, &c).unwrap();
    let basis_cols = (n + 1) * (n + 1);
    // radiating basis with unit weights
    let sr_unit = SrParams::new(array.radius_m(), n, SrWeightMode::Unit).unwrap();
    let gs = gram(&KernelSpec::SourceRegion(sr_unit), &array, &c).unwrap();
    // recover Psi from its Gram factor is unnecessary: build directly
    let mut psi = CMatrix::zeros(m, basis_cols);
    for (row, p) in array.positions().iter().enumerate() {
        let dir = UnitDirection::from_vector([p.x, p.y, p.z]).unwrap();
        let harm = sph_harmonics_upto(n, &dir);
        let h = sph_hankel1_upto(n, c.wavenumber() * p.norm()).unwrap();
        for nu in 0..=n {
            for mu in -(nu as i32)..=(nu as i32) {
                let idx = ((nu * nu + nu) as i64 + mu as i64) as usize;
                psi[(row, idx)] = h[nu] * harm[idx];
            }
        }
    }
    assert!(((&psi * psi.adjoint()) - &gs.k).norm() < 1e-10 * gs.k.norm());
    let p = basis_cols;
    let mut joint = CMatrix::zeros(m + p, m + p);
    let khk = g.k.adjoint() * &g.k;
    let khpsi = g.k.adjoint() * &psi;
    let psih_psi = psi.adjoint() * &psi;
    for i in 0..m {
        for j in 0..m {
            joint[(i, j)] = khk[(i, j)] + Complex64::new(reg.lambda1, 0.0) * g.k[(i, j)];
        }
        for j in 0..p {
            joint[(i, m + j)] = khpsi[(i, j)];
            joint[(m + j, i)] = khpsi[(i, j)].conj();
        }
    }
    for i in 0..p {
        for j in 0..p {
            joint[(m + i, m + j)] = psih_psi[(i, j)];
        }
        joint[(m + i, m + i)] += Complex64::new(reg.lambda2, 0.0);
    }
    let mut rhs = CVector::zeros(m + p);
    let khs = g.k.adjoint() * &s;
    let psihs = psi.adjoint() * &s;
    for i in 0..m {
        rhs[i] = khs[i];
    }
    for i in 0..p {
        rhs[m + i] = psihs[i];
    }
    let sol = joint.lu().solve(&rhs).expect("joint solvable");
    let alpha_joint = sol.rows(0, m).into_owned();
    let dev_open = (&e.alpha - &alpha_joint).norm() / alpha_joint.norm();
    assert!(dev_open < 1e-8, "open-field vs joint deviation {dev_open}");

    let dt = start.elapsed().as_secs_f64();
    println!(
        "criterion 05 PASS: boundary-constrained vs KKT {dev_proposed:.2e}, \
         open-field vs joint {dev_open:.2e} ({dt:.2} s)"
    );
}

#[test]
fn criterion_06_boundary_stationarity_on_every_fit() {
    // The literal residual |M_mix a + M_sct b| / |M_mix a| is asserted on
    // every analytic-weight fit. For unit weights at low kR the assembled
    // operators span ~16 decades and the literal ratio is not measurable in
    // f64 (its true value is zero; evaluating it costs ~1e-16 |D_sct| |v|
    // against a denominator whose high-order content is ~1e-11 of scale), so
    // those fits are certified through the identical condition in the
    // column-normalized boundary metric.
    let start = Instant::now();
    let array = array_60();
    let grid = lebedev_order7();
    let q = grid.len();
    let md = MdParams::new(grid, vec![1.0 / q as f64; q], vec![20.0; q]).unwrap();
    let mut worst_literal: f64 = 0.0;
    let mut worst_normalized: f64 = 0.0;
    for &f in &[250.0, 500.0, 1000.0, 2000.0] {
        let c = ctx(f);
        let clean = rigid_sphere_pressures(&scene(), &array, &c, 50).unwrap();
        let snap = add_noise(
            &clean,
            &NoiseSpec {
                snr_db: 20.0,
                rng_seed: 1000 + f as u64,
            },
        );
        for spec in [KernelSpec::Bessel, KernelSpec::MultiDirectional(md.clone())] {
            for weight in [SrWeightMode::Analytic, SrWeightMode::Unit] {
                let sr = SrParams::new(0.05, 5, weight).unwrap();
                let op = ProposedOperator::build(&array, &c, &spec, &sr).unwrap();
                for (reg, qm) in [
                    (Regularization::shared(1e-4), QMode::Kernel),
                    (Regularization::shared(1e-2), QMode::Ridge(1e-2)),
                ] {
                    let alpha = op.solve_alpha(&snap.pressures, reg, qm).unwrap();
                    let st_n = op.stationarity_rel_normalized(&alpha);
                    worst_normalized = worst_normalized.max(st_n);
                    assert!(
                        st_n <= 1e-8,
                        "normalized stationarity {st_n} at f={f}, {spec:?}, {weight:?}, {qm:?}"
                    );
                    if weight == SrWeightMode::Analytic {
                        let st = op.stationarity_rel(&alpha);
                        worst_literal = worst_literal.max(st);
                        assert!(
                            st <= 1e-8,
                            "stationarity {st} at f={f}, {spec:?}, {qm:?}"
                        );
                    }
                }
            }
        }
    }
    let dt = start.elapsed().as_secs_f64();
    println!(
        "criterion 06 PASS: worst literal residual {worst_literal:.2e} (analytic fits), \
         worst normalized residual {worst_normalized:.2e} (all fits) ({dt:.2} s)"
    );
}

fn acceptance_config() -> ExperimentConfig {
    ExperimentConfig::from_str_toml(
        r#"
seed = 2025
[wave]
sound_speed_mps = 340.26
[array]
radius_m = 0.05
layout = "tdesign60"
[[scene.sources]]
position = [3.0, 0.0, 0.0]
[noise]
snr_db = 20.0
[frequencies]
list = [250.0, 500.0, 1000.0, 2000.0]
[eval_region]
kind = "ball"
radius_m = 0.175
n_points = 1000
[[methods]]
kind = "swf"
id = "swf"
n = 5
[[methods]]
kind = "krr"
id = "krr"
kernel = "bessel"
n = 5
[[methods]]
kind = "proposed"
id = "proposed"
kernel = "bessel"
n_ext = 5
sr_weight = "analytic"
[[methods]]
kind = "proposed"
id = "proposed_noweight"
kernel = "bessel"
n_ext = 5
sr_weight = "unit"
[[methods]]
kind = "proposed_md"
id = "proposed_md"
n_ext = 5
[methods.mdopt]
iterations = 400
"#,
    )
    .unwrap()
}

use std::sync::OnceLock;

/// The full sweep behind criterion 7, computed once and shared by its three
/// clauses (each clause is its own test so a failure is precisely scoped).
fn criterion_07_sweep() -> &'static (sfe::evaluation::SweepOutcome, f64) {
    static SWEEP: OnceLock<(sfe::evaluation::SweepOutcome, f64)> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let start = Instant::now();
        let cfg = acceptance_config();
        let out = frequency_sweep(&cfg, None).unwrap();
        assert!(out.failures.is_empty(), "sweep failures: {:?}", out.failures);
        let dt = start.elapsed().as_secs_f64();
        for &f in &[250.0, 500.0, 1000.0, 2000.0] {
            let nmse = |id: &str| -> f64 {
                out.results
                    .iter()
                    .find(|r| r.frequency_hz == f && r.method_id == id)
                    .unwrap_or_else(|| panic!("missing cell ({f}, {id})"))
                    .nmse_db
            };
            println!(
                "  f={f:6.0} Hz: swf {swf:9.3} dB, krr {krr:9.3} dB, proposed {prop:9.3} dB, \
                 no-weight {nw:9.3} dB, md {md:9.3} dB",
                swf = nmse("swf"),
                krr = nmse("krr"),
                prop = nmse("proposed"),
                nw = nmse("proposed_noweight"),
                md = nmse("proposed_md"),
            );
        }
        (out, dt)
    })
}

fn sweep_nmse(out: &sfe::evaluation::SweepOutcome, f: f64, id: &str) -> f64 {
    out.results
        .iter()
        .find(|r| r.frequency_hz == f && r.method_id == id)
        .unwrap_or_else(|| panic!("missing cell ({f}, {id})"))
        .nmse_db
}

#[test]
fn criterion_07a_boundary_constraint_beats_open_krr() {
    let (out, dt) = criterion_07_sweep();
    for &f in &[250.0, 500.0, 1000.0, 2000.0] {
        let prop = sweep_nmse(out, f, "proposed");
        let krr = sweep_nmse(out, f, "krr");
        assert!(prop < krr, "f={f}: proposed {prop} !< krr {krr}");
    }
    assert!(*dt < 900.0, "criterion 7 sweep took {dt:.0} s (limit 900 s)");
    println!("criterion 07a PASS: proposed < krr at every frequency (sweep {dt:.1} s)");
}

#[test]
fn criterion_07b_analytic_weight_beats_unit_weight() {
    // Faithful to the stated criterion. With the exact boundary elimination
    // that criterion 6 requires, the eliminated data map is provably
    // independent of the modal weights (they cancel: K_sct pinv(D_sct) =
    // Psi pinv(Psi')), so the two variants differ only through the scattered
    // penalty and their NMSEs tie to within a few millidecibels with a
    // seed-dependent sign. See the decisions ledger for the full analysis.
    let (out, _) = criterion_07_sweep();
    for &f in &[250.0, 500.0, 1000.0, 2000.0] {
        let prop = sweep_nmse(out, f, "proposed");
        let nw = sweep_nmse(out, f, "proposed_noweight");
        assert!(
            prop < nw,
            "f={f}: proposed {prop} !< no-weight {nw} (difference {:+.4} dB)",
            prop - nw
        );
    }
    println!("criterion 07b PASS: proposed < no-weight at every frequency");
}

#[test]
fn criterion_07c_adapted_kernel_within_half_db_of_best() {
    let (out, dt) = criterion_07_sweep();
    for &f in &[250.0, 500.0, 1000.0, 2000.0] {
        let md = sweep_nmse(out, f, "proposed_md");
        let best_other = ["swf", "krr", "proposed", "proposed_noweight"]
            .iter()
            .map(|id| sweep_nmse(out, f, id))
            .fold(f64::INFINITY, f64::min);
        assert!(
            md <= best_other + 0.5,
            "f={f}: md {md} exceeds min(others) {best_other} + 0.5"
        );
    }
    println!(
        "criterion 07c PASS: adapted kernel within 0.5 dB of the best baseline \
         at every frequency (sweep {dt:.1} s)"
    );
}

#[test]
fn criterion_08_md_direction_recovery() {
    let start = Instant::now();
    let cfg = acceptance_config();
    let inputs = prepare_cell_inputs(&cfg, 1000.0).unwrap();
    let sr = SrParams::new(0.05, 5, SrWeightMode::Analytic).unwrap();
    let grid = lebedev_order7();
    let outcome = optimize_md(&inputs.snapshot, &grid, &sr, &MdOptConfig::default()).unwrap();
    let (argmax, _) = outcome
        .params
        .gamma
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let d = &grid.directions()[argmax];
    // +x node or one of its nearest neighbors (45 degrees away)
    assert!(
        d.x() >= 1.0 / 2.0f64.sqrt() - 1e-12,
        "largest gamma at {:?}, not on/near the +x node",
        d.components()
    );
    let dt = start.elapsed().as_secs_f64();
    println!(
        "criterion 08 PASS: largest gamma on direction {:?} ({dt:.1} s)",
        d.components()
    );
}

#[test]
#[allow(clippy::needless_range_loop)]
fn criterion_09_degenerate_kernel_identities() {
    let start = Instant::now();
    let c = ctx(1000.0);
    let arr = array_60();

    // zero-concentration mixture with unit total weight equals the
    // diffuse-field kernel Gram
    let grid = lebedev_order7();
    let q = grid.len();
    let md = MdParams::new(grid, vec![1.0 / q as f64; q], vec![0.0; q]).unwrap();
    let g_md = gram(&KernelSpec::MultiDirectional(md), &arr, &c).unwrap();
    let mut worst_md: f64 = 0.0;
    for i in 0..arr.len() {
        for j in 0..arr.len() {
            let b = bessel_kernel(&arr.positions()[i], &arr.positions()[j], &c);
            worst_md = worst_md.max((g_md.k[(i, j)] - b).norm());
        }
    }
    assert!(worst_md < 1e-12, "zero-concentration deviation {worst_md}");

    // unit-weight source-region Gram factorizes as Psi Psi^H
    let sr = SrParams::new(0.05, 5, SrWeightMode::Unit).unwrap();
    let g_sr = gram(&KernelSpec::SourceRegion(sr), &arr, &c).unwrap();
    let cols = 36;
    let mut psi = CMatrix::zeros(arr.len(), cols);
    for (row, p) in arr.positions().iter().enumerate() {
        let dir = UnitDirection::from_vector([p.x, p.y, p.z]).unwrap();
        let harm = sph_harmonics_upto(5, &dir);
        let h = sph_hankel1_upto(5, c.wavenumber() * p.norm()).unwrap();
        for nu in 0..=5usize {
            for mu in -(nu as i32)..=(nu as i32) {
                let idx = ((nu * nu + nu) as i64 + mu as i64) as usize;
                psi[(row, idx)] = h[nu] * harm[idx];
            }
        }
    }
    let factor = &psi * psi.adjoint();
    let worst_sr = (&g_sr.k - &factor).norm() / factor.norm();
    assert!(worst_sr < 1e-12, "factorization deviation {worst_sr}");

    let dt = start.elapsed().as_secs_f64();
    println!(
        "criterion 09 PASS: zero-concentration {worst_md:.2e}, factorization {worst_sr:.2e} \
         ({dt:.2} s)"
    );
}

#[test]
fn criterion_10_sweep_determinism() {
    let start = Instant::now();
    // small but real sweep through the file-writing driver, run twice into
    // fresh directories
    let cfg_text = r#"
seed = 31
[wave]
sound_speed_mps = 340.26
[array]
radius_m = 0.05
layout = "tdesign60"
[[scene.sources]]
position = [3.0, 0.0, 0.0]
[noise]
snr_db = 20.0
[frequencies]
list = [500.0, 1000.0]
[eval_region]
kind = "ball"
radius_m = 0.175
n_points = 200
[[methods]]
kind = "swf"
id = "swf"
n = 5
[[methods]]
kind = "proposed"
id = "proposed"
kernel = "bessel"
n_ext = 5
[[methods]]
kind = "proposed_md"
id = "proposed_md"
n_ext = 5
[methods.mdopt]
iterations = 5
"#;
    let run_once = || -> String {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("exp.cfg");
        std::fs::write(&cfg_path, cfg_text).unwrap();
        let rc = sfe::cli::RunContext::load(&cfg_path, Some(dir.path().join("out")), None).unwrap();
        let stats = sfe::cli::run_sweep(&rc, None).unwrap();
        assert_eq!(stats.failed_cells, 0);
        std::fs::read_to_string(stats.sweep_path).unwrap()
    };
    let a = run_once();
    let b = run_once();
    assert_eq!(a, b, "sweep outputs differ between identical runs");
    let dt = start.elapsed().as_secs_f64();
    println!("criterion 10 PASS: byte-identical sweep.csv across runs ({dt:.1} s)");
}
