mod common;

use common::{random_bf, random_dims, rel_err, rng};
use rand::Rng;
use rbdris::beamformer::*;
use rbdris::channel::SystemDims;
use rbdris::metrics::{interference_cov, sum_rate};
use rbdris::numerics::{block, complex_gaussian, directional_derivative, fro_norm_sq, identity, CMat, C64};

fn scalar(x: f64) -> CMat {
    CMat::from_element(1, 1, C64::new(x, 0.0))
}

fn random_e(dims: SystemDims, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<CMat> {
    (0..dims.users)
        .map(|_| complex_gaussian(dims.user_antennas, dims.tx_antennas(), rng))
        .collect()
}

#[test]
fn z_and_y_scalar_oracles() {
    let e = CMat::from_element(1, 1, C64::new(0.6, -0.3));
    let p: f64 = 1.7;
    let v = scalar(p.sqrt());
    let psi = scalar(0.05);
    let z = update_z(&e, &v, &psi).unwrap();
    let want_z = p * e[(0, 0)].norm_sqr() / 0.05;
    assert!(rel_err(z[(0, 0)].re, want_z) < 1e-12);
    let y = update_y(&e, &v, &psi).unwrap();
    let want_y = e[(0, 0)] * p.sqrt() / (p * e[(0, 0)].norm_sqr() + 0.05);
    assert!((y[(0, 0)] - want_y).norm() < 1e-12 * want_y.norm());

    let zero = CMat::zeros(1, 1);
    assert_eq!(update_z(&e, &zero, &psi).unwrap().norm(), 0.0);
    assert_eq!(update_y(&e, &zero, &psi).unwrap().norm(), 0.0);
}

#[test]
fn z_is_hermitian_psd_and_b_identity_holds() {
    let mut r = rng(11);
    for _ in 0..50 {
        let dims = SystemDims::new(2, 2, 3, 2);
        let e = random_e(dims, &mut r);
        let bf = random_bf(dims, 1.0, &mut r);
        for k in 0..dims.users {
            let psi = interference_cov(&e[k], bf.v(), k, 0.3);
            let z = update_z(&e[k], &bf.v()[k], &psi).unwrap();
            assert!((&z - z.adjoint()).norm() <= 1e-12 * z.norm());
            let y = update_y(&e[k], &bf.v()[k], &psi).unwrap();
            let (a, b) = compute_a_b(&e[k], &y, &z);
            let iz = identity(2) + &z;
            let inv = iz.clone().try_inverse().unwrap();
            let alt = &a * inv * a.adjoint();
            assert!((&b - alt).norm() < 1e-10 * b.norm());
            let eig = nalgebra::linalg::SymmetricEigen::new(b.clone()).eigenvalues;
            let top = eig.iter().cloned().fold(0.0, f64::max);
            assert!(eig.iter().all(|&x| x >= -1e-10 * top));
        }
    }
}

#[test]
fn a_b_vanish_for_zero_y() {
    let mut r = rng(12);
    let e = complex_gaussian(2, 4, &mut r);
    let (a, b) = compute_a_b(&e, &CMat::zeros(2, 2), &CMat::zeros(2, 2));
    assert_eq!(a.norm(), 0.0);
    assert_eq!(b.norm(), 0.0);
}

#[test]
fn omega_matches_quadruple_loop() {
    let mut r = rng(13);
    let dims = SystemDims::new(3, 2, 3, 2);
    let na = dims.ap_antennas;
    let bks: Vec<CMat> = (0..dims.users)
        .map(|_| {
            let x = complex_gaussian(dims.tx_antennas(), dims.tx_antennas(), &mut r);
            &x * x.adjoint()
        })
        .collect();
    let b_total = sum_b(&bks, dims.tx_antennas());
    let bf = random_bf(dims, 1.0, &mut r);
    for l in 0..dims.aps {
        for k in 0..dims.users {
            let mut want = CMat::zeros(na, dims.user_antennas);
            for bk in &bks {
                for lp in (0..dims.aps).filter(|&lp| lp != l) {
                    let q = bf.q(lp, k);
                    for i in 0..na {
                        for j in 0..dims.user_antennas {
                            for t in 0..na {
                                let x = bk[(l * na + i, lp * na + t)] + bk[(lp * na + t, l * na + i)].conj();
                                want[(i, j)] += x * q[(t, j)];
                            }
                        }
                    }
                }
            }
            let got = compute_omega(&b_total, &bf, l, k);
            assert!((&got - &want).norm() < 1e-12 * want.norm());
        }
    }
}

#[test]
fn omega_trivial_cases() {
    let mut r = rng(14);
    let dims = SystemDims::new(1, 2, 2, 2);
    let x = complex_gaussian(2, 2, &mut r);
    let bf = random_bf(dims, 1.0, &mut r);
    assert_eq!(compute_omega(&(&x * x.adjoint()), &bf, 0, 1).norm(), 0.0);

    let dims = SystemDims::new(2, 2, 2, 2);
    let bf = random_bf(dims, 1.0, &mut r);
    let mut bd = CMat::zeros(4, 4);
    let y = complex_gaussian(2, 2, &mut r);
    bd.view_mut((0, 0), (2, 2)).copy_from(&(&y * y.adjoint()));
    bd.view_mut((2, 2), (2, 2)).copy_from(&(&x * x.adjoint()));
    assert_eq!(compute_omega(&bd, &bf, 0, 0).norm(), 0.0);
    assert_eq!(compute_omega(&bd, &bf, 1, 1).norm(), 0.0);
}

#[test]
fn solve_q_scalar_and_shrinkage() {
    let dims = SystemDims::new(1, 1, 1, 1);
    let q = solve_q(&scalar(2.0), &scalar(1.0), &scalar(0.0), 1.0, 0, dims).unwrap();
    assert!((q[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);

    let mut r = rng(15);
    let dims = SystemDims::new(2, 2, 2, 2);
    let a = complex_gaussian(4, 2, &mut r);
    let x = complex_gaussian(4, 4, &mut r);
    let b = &x * x.adjoint();
    let q = solve_q(&a, &b, &CMat::zeros(2, 2), 1e6, 1, dims).unwrap();
    assert!(q.norm() < 1e-5 * a.norm());
    assert!(solve_q(&a, &b, &CMat::zeros(2, 2), -1.0, 1, dims).is_err());
}

#[test]
fn gradient_vanishes_at_closed_form() {
    let mut r = rng(16);
    for _ in 0..20 {
        let dims = SystemDims::new(3, 2, 3, 2);
        let e = random_e(dims, &mut r);
        let mut bf = random_bf(dims, 0.5, &mut r);
        let aux = FpAuxiliaries::compute(&e, &bf, 0.2).unwrap();
        let l = r.random_range(0..dims.aps);
        let k = r.random_range(0..dims.users);
        let omega = compute_omega(&aux.b_total, &bf, l, k);
        let q = solve_q(&aux.a[k], &aux.b_total, &omega, 0.0, l, dims).unwrap();
        bf.set_q(l, k, &q);
        let g = rate_gradient_q(&aux.a[k], &aux.b_total, &bf, l, k);
        assert!(g.norm() < 1e-8 * aux.a[k].norm(), "{}", g.norm() / aux.a[k].norm());
    }
}

#[test]
fn q_gradient_at_zero_is_twice_a() {
    let mut r = rng(17);
    let dims = SystemDims::new(2, 2, 2, 2);
    let e = random_e(dims, &mut r);
    let bf = random_bf(dims, 1.0, &mut r);
    let aux = FpAuxiliaries::compute(&e, &bf, 0.5).unwrap();
    let zero = BeamformerSet::zeros(dims);
    let g = rate_gradient_q(&aux.a[1], &aux.b_total, &zero, 1, 1);
    assert!((g - block(&aux.a[1], 2, 0, 2, 2).scale(2.0)).norm() < 1e-14);
}

#[test]
fn q_gradient_matches_finite_difference() {
    let mut r = rng(18);
    for _ in 0..20 {
        let dims = SystemDims::new(3, 2, 2, 2);
        let e = random_e(dims, &mut r);
        let bf = random_bf(dims, 1.0, &mut r);
        let aux = FpAuxiliaries::compute(&e, &bf, 0.4).unwrap();
        let l = r.random_range(0..dims.aps);
        let k = r.random_range(0..dims.users);
        let g = rate_gradient_q(&aux.a[k], &aux.b_total, &bf, l, k);
        let d = complex_gaussian(2, 2, &mut r);
        let f = |q: &CMat| {
            let mut b2 = bf.clone();
            b2.set_q(l, k, q);
            Ok(quadratic_surrogate(&aux.a, &aux.b_total, b2.v()))
        };
        let fd = directional_derivative(f, &bf.q(l, k), &d, 1e-4).unwrap();
        let an = rbdris::numerics::real_inner(&g, &d);
        assert!(rel_err(fd, an) < 1e-6, "fd {fd} analytic {an}");
    }
}

#[test]
fn bisection_matches_scalar_closed_form() {
    let mut r = rng(19);
    for _ in 0..100 {
        let a = C64::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let b: f64 = r.random_range(0.01..1.0);
        let p: f64 = r.random_range(0.01..1.0);
        let want = (a.norm() / p.sqrt() - b).max(0.0);
        let sol = bisect_zeta(&scalar(b), &[CMat::from_element(1, 1, a)], p).unwrap();
        if want == 0.0 {
            assert_eq!(sol.zeta, 0.0);
        } else {
            assert!(
                (sol.zeta - want).abs() <= 1e-8 * want.max(1.0),
                "{} vs {want}",
                sol.zeta
            );
            let power = sol.q[0][(0, 0)].norm_sqr();
            assert!((power - p).abs() <= 1e-8 * p);
        }
    }
}

#[test]
fn weak_rhs_returns_zero_zeta() {
    let sol = bisect_zeta(&scalar(1.0), &[scalar(1e-6)], 1.0).unwrap();
    assert_eq!(sol.zeta, 0.0);
    assert!(bisect_zeta(&scalar(1.0), &[scalar(1.0)], 0.0).is_err());
}

#[test]
fn bisected_power_decreases_in_zeta() {
    let mut r = rng(20);
    for _ in 0..30 {
        let x = complex_gaussian(3, 3, &mut r);
        let b = &x * x.adjoint() + identity(3).scale(0.01);
        let rhs = complex_gaussian(3, 2, &mut r);
        let power = |zeta: f64| {
            let reg = &b + identity(3).scale(zeta);
            fro_norm_sq(&rbdris::numerics::hermitian_solve(&reg, &rhs).unwrap())
        };
        let z1: f64 = r.random_range(0.0..2.0);
        let z2 = z1 + r.random_range(1e-3..2.0);
        assert!(power(z2) < power(z1));
    }
}

#[test]
fn mmse_init_meets_budgets_exactly() {
    let mut r = rng(21);
    for _ in 0..30 {
        let dims = random_dims(&mut r, 3);
        let e = random_e(dims, &mut r);
        let p_ap: Vec<f64> = (0..dims.aps).map(|_| r.random_range(0.1..2.0)).collect();
        let init = mmse_init(&e, dims, &p_ap, 0.1).unwrap();
        assert!(!init.degenerate);
        for (p, budget) in init.beamformer.ap_powers().iter().zip(&p_ap) {
            assert!((p - budget).abs() <= 1e-12 * budget);
        }
    }
}

#[test]
fn mmse_init_zero_channels_is_flagged() {
    let dims = SystemDims::new(2, 2, 2, 2);
    let e = vec![CMat::zeros(2, 4); 2];
    let init = mmse_init(&e, dims, &[1.0, 1.0], 0.1).unwrap();
    assert!(init.degenerate);
    assert_eq!(init.beamformer.ap_powers(), vec![0.0, 0.0]);
}

#[test]
fn mmse_scalar_is_matched_filter() {
    let dims = SystemDims::new(1, 1, 1, 1);
    let e = vec![CMat::from_element(1, 1, C64::new(-0.4, 0.9))];
    let bf = mmse_init(&e, dims, &[2.0], 0.01).unwrap().beamformer;
    let q = bf.q(0, 0)[(0, 0)];
    let want = e[0][(0, 0)].conj();
    assert!((q.arg() - want.arg()).abs() < 1e-12);
    assert!((q.norm_sqr() - 2.0).abs() < 1e-12);
}

#[test]
fn baselines_satisfy_budgets() {
    let mut r = rng(22);
    let dims = SystemDims::new(3, 2, 4, 2);
    let e = random_e(dims, &mut r);
    let p_ap = [0.5, 1.0, 2.0];
    for mode in [BaselineMode::MmsePerAp, BaselineMode::UniformPa] {
        let bf = baseline(&e, dims, &p_ap, 0.1, mode).unwrap();
        for (p, budget) in bf.ap_powers().iter().zip(&p_ap) {
            assert!((p - budget).abs() <= 1e-12 * budget);
        }
    }
    let bf = baseline(&e, dims, &p_ap, 0.1, BaselineMode::UniformPa).unwrap();
    for l in 0..dims.aps {
        let first = fro_norm_sq(&bf.q(l, 0));
        for k in 1..dims.users {
            assert!((fro_norm_sq(&bf.q(l, k)) - first).abs() <= 1e-12 * first);
        }
    }
}

#[test]
fn surrogate_fixed_point_and_concavity_in_y() {
    let mut r = rng(23);
    for _ in 0..30 {
        let dims = random_dims(&mut r, 3);
        let e = random_e(dims, &mut r);
        let bf = random_bf(dims, 1.0, &mut r);
        let noise = r.random_range(0.05..1.0);
        let aux = FpAuxiliaries::compute(&e, &bf, noise).unwrap();
        let s = surrogate_value(&e, bf.v(), &aux.z, &aux.y, noise).unwrap();
        let rate = sum_rate(&e, bf.v(), noise).unwrap();
        assert!(rel_err(s, rate) < 1e-8, "{s} vs {rate}");

        let mut y2 = aux.y.clone();
        let k = r.random_range(0..dims.users);
        y2[k] +=
            complex_gaussian(dims.user_antennas, dims.user_antennas, &mut r).scale(1e-3 * aux.y[k].norm().max(1e-3));
        let s2 = surrogate_value(&e, bf.v(), &aux.z, &y2, noise).unwrap();
        assert!(s2 < s);
    }
    let dims = SystemDims::new(1, 2, 2, 2);
    let e = vec![CMat::zeros(2, 2); 2];
    let z = vec![CMat::zeros(2, 2); 2];
    let v = BeamformerSet::zeros(dims);
    assert_eq!(surrogate_value(&e, v.v(), &z, &z, 0.1).unwrap(), 0.0);
}

#[test]
fn fp_scale_covariance() {
    let mut r = rng(24);
    for _ in 0..10 {
        let dims = SystemDims::new(2, 2, 2, 2);
        let e = random_e(dims, &mut r);
        let p_ap = [1.0, 0.7];
        let opts = FpOptions {
            max_iters: 5,
            ..FpOptions::default()
        };
        let base = fp_optimize(&e, dims, &p_ap, 0.2, &opts, None).unwrap();
        let c = 1e-4;
        let e2: Vec<CMat> = e.iter().map(|x| x.scale(c)).collect();
        let scaled = fp_optimize(&e2, dims, &p_ap, 0.2 * c * c, &opts, None).unwrap();
        for (a, b) in base.beamformer.v().iter().zip(scaled.beamformer.v()) {
            assert!((a - b).norm() <= 1e-9 * a.norm());
        }
        for (x, y) in base.trace.iter().zip(&scaled.trace) {
            assert!((x - y).abs() < 1e-9 * x.max(1.0));
        }
    }
}

#[test]
fn fp_trace_monotone_and_feasible() {
    let mut r = rng(25);
    for _ in 0..50 {
        let dims = random_dims(&mut r, 3);
        let e = random_e(dims, &mut r);
        let p_ap: Vec<f64> = (0..dims.aps).map(|_| r.random_range(0.1..3.0)).collect();
        let noise = r.random_range(0.01..1.0);
        {
            let sweep = SweepOrder::GaussSeidel;
            let out = fp_optimize(
                &e,
                dims,
                &p_ap,
                noise,
                &FpOptions {
                    sweep,
                    ..Default::default()
                },
                None,
            )
            .unwrap();
            assert!(out.trace.windows(2).all(|w| w[1] >= w[0] - 1e-6), "{:?}", out.trace);
            assert!(out.beamformer.satisfies_power(&p_ap, 1e-6));
        }
        let jac = fp_optimize(
            &e,
            dims,
            &p_ap,
            noise,
            &FpOptions {
                sweep: SweepOrder::Jacobi,
                ..Default::default()
            },
            None,
        )
        .unwrap();
        assert!(jac.beamformer.satisfies_power(&p_ap, 1e-6));
    }
}

#[test]
fn single_link_fp_beats_mmse() {
    let mut r = rng(26);
    for _ in 0..20 {
        let dims = SystemDims::new(1, 2, 1, 2);
        let e = random_e(dims, &mut r);
        let out = fp_optimize(&e, dims, &[1.0], 0.3, &FpOptions::default(), None).unwrap();
        assert!(out.trace.last().unwrap() >= &out.trace[0]);
    }
}

#[test]
fn scalar_fp_matches_grid_search() {
    let mut r = rng(27);
    let dims = SystemDims::new(1, 1, 1, 1);
    for _ in 0..10 {
        let e = vec![complex_gaussian(1, 1, &mut r)];
        let p = r.random_range(0.1..5.0);
        let noise = 0.1;
        let out = fp_optimize(&e, dims, &[p], noise, &FpOptions::default(), None).unwrap();
        let fp_rate = *out.trace.last().unwrap();
        let mut best = f64::NEG_INFINITY;
        for i in 0..=400 {
            let amp = (p * i as f64 / 400.0).sqrt();
            for j in 0..16 {
                let q = C64::from_polar(amp, j as f64 * std::f64::consts::TAU / 16.0);
                let rate = sum_rate(&e, &[CMat::from_element(1, 1, q)], noise).unwrap();
                best = best.max(rate);
            }
        }
        assert!((fp_rate - best).abs() < 1e-3, "{fp_rate} vs {best}");
    }
}

#[test]
fn fp_rejects_bad_inputs() {
    let dims = SystemDims::new(1, 1, 1, 1);
    let e = vec![scalar(1.0)];
    assert!(fp_optimize(&e, dims, &[0.0], 0.1, &FpOptions::default(), None).is_err());
    assert!(fp_optimize(&e, dims, &[1.0], 0.0, &FpOptions::default(), None).is_err());
    assert!(fp_optimize(&[scalar(f64::NAN)], dims, &[1.0], 0.1, &FpOptions::default(), None).is_err());
}
