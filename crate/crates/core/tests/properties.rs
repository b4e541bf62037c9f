//! Property tests of the library invariants.

mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sphs::demo::{self, MsdParams};
use sphs::generator::{
    build_mq, check_conditions_sampled, halton_box, lh_linear, validate_derivatives,
    NonlinearSystem, SAMPLED_EVIDENCE_LABEL,
};
use sphs::interconnect::{interconnect, InterconnectSpec};
use sphs::linalg::{
    is_neg_semidefinite, is_pos_semidefinite, kernel_basis, max_abs, pinv_svd, rank_svd,
    sqrt_psd, sym_eigen, symmetrize, SymMatrix,
};
use sphs::model::{parse_system, serialize_phs, serialize_sltis};
use sphs::observability::unobservable_subspace;
use sphs::passivity::{certify, compile_phs, extract_phs};
use sphs::simulate::{decreasing_test, one_step_drift, simulate_paths, SimConfig};
use sphs::storage::{max_trace_increase, value_iteration, RiccatiConfig};
use sphs::{Error, Model, QuadraticStorage, Sltis, TolerancePolicy};

use common::{gaussian, random_phs, random_phs_dims, random_sltis, skew};

fn tol() -> TolerancePolicy {
    TolerancePolicy::default()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn vector<R: Rng>(r: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, gaussian(r, n, 1).iter().copied())
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => -1e3f64..1e3,
        1 => prop::num::f64::NORMAL,
        1 => prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
    ]
}

fn sltis_strategy() -> impl Strategy<Value = Sltis> {
    (1usize..=4, 0usize..=3, 0usize..=2).prop_flat_map(|(d, n, k)| {
        let len = d * d + d * n + k * (d * d + d * n) + n * d + n * n;
        prop::collection::vec(finite(), len).prop_map(move |v| {
            let mut it = v.into_iter();
            let mut take = |r: usize, c: usize| DMatrix::from_iterator(r, c, (&mut it).take(r * c));
            let a = take(d, d);
            let b = take(d, n);
            let af = (0..k).map(|_| take(d, d)).collect();
            let bf = (0..k).map(|_| take(d, n)).collect();
            let c = take(n, d);
            let dd = take(n, n);
            Sltis::new(a, b, af, bf, c, dd).unwrap()
        })
    })
}

mod matrix_kernel {
    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn two_sided_semidefinite_means_eigenvalues_within_tau(
            seed: u64, d in 1usize..6, scale_exp in -14i32..2,
        ) {
            let mut r = rng(seed);
            let m = symmetrize(&(gaussian(&mut r, d, d) * 10f64.powi(scale_exp)));
            let s = SymMatrix::new(m.clone()).unwrap();
            let neg = is_neg_semidefinite(&s, &tol()).unwrap();
            let pos = is_neg_semidefinite(&SymMatrix::new(-m.clone()).unwrap(), &tol()).unwrap();
            if neg.holds && pos.holds {
                let tau = tol().tau(&m);
                for e in sym_eigen(&s).unwrap().0 {
                    prop_assert!(e.abs() <= tau);
                }
            }
        }

        #[test]
        fn rank_plus_kernel_is_column_count(
            seed: u64, rows in 0usize..6, cols in 1usize..7, rank in 0usize..6,
        ) {
            let mut r = rng(seed);
            let rank = rank.min(rows).min(cols);
            let m = gaussian(&mut r, rows, rank) * gaussian(&mut r, rank, cols);
            let k = kernel_basis(&m, &tol()).unwrap();
            prop_assert_eq!(rank_svd(&m, &tol()).unwrap() + k.len(), cols);
            for v in &k {
                prop_assert!((&m * v).norm() <= 10.0 * tol().tau(&m));
            }
        }

        #[test]
        fn pinv_satisfies_penrose_identities(
            seed: u64, rows in 1usize..6, cols in 1usize..6, rank in 0usize..6,
        ) {
            let mut r = rng(seed);
            let rank = rank.min(rows).min(cols);
            let m = gaussian(&mut r, rows, rank) * gaussian(&mut r, rank, cols);
            let p = pinv_svd(&m, &tol()).unwrap();
            let tau = tol().tau(&m);
            prop_assert!(max_abs(&(&m * &p * &m - &m)) <= 10.0 * tau);
            prop_assert!(max_abs(&(&p * &m * &p - &p)) <= 10.0 * tau);
        }

        #[test]
        fn sqrt_psd_is_symmetric_psd_root(seed: u64, d in 1usize..6, rank in 0usize..6) {
            let mut r = rng(seed);
            let q = common::psd_of_rank(&mut r, d, rank.min(d));
            let root = sqrt_psd(&SymMatrix::new(q.clone()).unwrap(), &tol()).unwrap();
            let check = is_pos_semidefinite(&root, &tol()).unwrap();
            prop_assert!(check.holds);
            prop_assert!(max_abs(&(root.matrix() * root.matrix() - &q)) <= 1e-12);
        }
    }
}

mod system_model {
    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn sltis_json_round_trip_is_bit_exact(sys in sltis_strategy()) {
            let text = serialize_sltis(&sys, None);
            let doc = parse_system(&text).unwrap();
            let Model::Sltis(back) = doc.model else { panic!("kind changed") };
            prop_assert_eq!(&back, &sys);
            prop_assert_eq!(serialize_sltis(&back, None), text);
        }

        #[test]
        fn phs_json_round_trip_is_bit_exact(seed: u64) {
            let phs = random_phs(&mut rng(seed));
            let text = serialize_phs(&phs);
            let Model::Phs(back) = parse_system(&text).unwrap().model else { panic!("kind changed") };
            prop_assert_eq!(back.parts(), phs.parts());
        }
    }

    #[test]
    fn constructors_reject_inconsistent_shapes() {
        let e = Sltis::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            vec![DMatrix::zeros(2, 2)],
            vec![],
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
        );
        assert!(matches!(e, Err(Error::Shape(_))));
        let e = Sltis::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            vec![],
            vec![],
            DMatrix::zeros(1, 2),
            DMatrix::from_element(1, 1, f64::NAN),
        );
        assert!(matches!(e, Err(Error::NonFinite(_))));
    }
}

mod generator {
    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn mq_is_symmetric(seed: u64) {
            let mut r = rng(seed);
            let (d, n, k) = (r.random_range(1..=4), r.random_range(0..=3), r.random_range(0..=2));
            let sys = random_sltis(&mut r, d, n, k, 0, true);
            let q = QuadraticStorage::new(symmetrize(&gaussian(&mut r, d, d)), tol()).unwrap();
            let m = build_mq(&sys, &q).unwrap();
            prop_assert_eq!(m.matrix(), &m.matrix().transpose());
            prop_assert_eq!(m.dim(), d + n);
        }

        #[test]
        fn generator_sign_matches_lmi(seed: u64) {
            let mut r = rng(seed);
            let phs = random_phs(&mut r);
            // Half of the cases are certified PHS, half arbitrary systems.
            let (sys, q) = if r.random_bool(0.5) {
                (compile_phs(&phs).unwrap(), phs.parts().q.clone())
            } else {
                let (d, n) = (phs.state_dim(), phs.input_dim());
                (random_sltis(&mut r, d, n, 1, 0, true), phs.parts().q.clone())
            };
            let q = QuadraticStorage::new(q, tol()).unwrap();
            let mq = build_mq(&sys, &q).unwrap();
            let nsd = is_neg_semidefinite(&mq, &tol()).unwrap();
            let (values, vectors) = sym_eigen(&mq).unwrap();
            let top = vectors.column(values.len() - 1).into_owned();
            let d = sys.state_dim();
            let at = |z: &DVector<f64>| {
                lh_linear(&sys, &q, &z.rows(0, d).into_owned(), &z.rows(d, z.len() - d).into_owned()).unwrap()
            };
            if nsd.holds {
                for _ in 0..20 {
                    let z = vector(&mut r, d + sys.input_dim());
                    prop_assert!(at(&z) <= 0.5 * nsd.tau * z.norm_squared());
                }
            } else {
                prop_assert!(at(&top) > 0.0);
            }
        }

        #[test]
        fn supplied_derivatives_match_finite_differences(seed: u64) {
            let mut r = rng(seed);
            let d = r.random_range(1..=4);
            let sys = random_sltis(&mut r, d, 1, 1, 0, true);
            let q = QuadraticStorage::new(common::psd_of_rank(&mut r, d, d), tol()).unwrap();
            let cb = NonlinearSystem::from_linear(&sys, &q).unwrap();
            let probes: Vec<_> = (0..10).map(|_| vector(&mut r, d)).collect();
            let check = validate_derivatives(&cb, &probes).unwrap();
            prop_assert!(check.ok, "{:?}", check);
        }
    }

    #[test]
    fn sampled_checks_are_labelled_evidence() {
        let msd = demo::msd(&MsdParams::default()).unwrap();
        let cb = NonlinearSystem::from_linear(&msd, &QuadraticStorage::identity(2, tol())).unwrap();
        let probes = halton_box(&[-1.0; 3], &[1.0; 3], 256).unwrap();
        let rep = check_conditions_sampled(&cb, &probes, &tol()).unwrap();
        assert_eq!(rep.evidence, SAMPLED_EVIDENCE_LABEL);
        assert!(!rep.lh_violated);
        assert!(rep.sigma_violated);
    }
}

mod passivity {
    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn compiled_phs_is_certified_and_round_trips(seed: u64) {
            let phs = random_phs(&mut rng(seed));
            let sys = compile_phs(&phs).unwrap();
            let q = QuadraticStorage::new(phs.parts().q.clone(), tol()).unwrap();
            let rep = certify(&sys, &q).unwrap();
            prop_assert!(rep.lmi_ok, "max eig {}", rep.lmi_max_eig);
            let back = extract_phs(&sys, &q).unwrap();
            prop_assert!(compile_phs(&back).unwrap().max_abs_diff(&sys).unwrap() <= 1e-9);
            let p = back.parts();
            let block = sphs::linalg::block2x2(&p.r, &p.p, &p.p.transpose(), &p.s);
            let block = SymMatrix::new(symmetrize(&block)).unwrap();
            let min = sym_eigen(&block).unwrap().0[0];
            prop_assert!(min >= -tol().tau(block.matrix()));
        }

        #[test]
        fn verdicts_follow_the_implication_diagram(seed: u64) {
            let mut r = rng(seed);
            let d = r.random_range(1..=3);
            let n = r.random_range(1..=2);
            // Mix of PHS with and without noise coupling through Σ, and arbitrary systems.
            let (sys, q) = match r.random_range(0..3) {
                0 => {
                    let phs = random_phs_dims(&mut r, d, n, 0, true);
                    (compile_phs(&phs).unwrap(), phs.parts().q.clone())
                }
                1 => {
                    let q = common::psd_of_rank(&mut r, d, d);
                    let qi = q.clone().try_inverse().unwrap();
                    let s = skew(&mut r, d);
                    let w = gaussian(&mut r, d, d);
                    let a = &qi * (&s - &w * w.transpose());
                    let b = gaussian(&mut r, d, n);
                    let c = b.transpose() * &q;
                    let sys = Sltis::new(a, b, vec![&qi * skew(&mut r, d)], vec![DMatrix::zeros(d, n)], c, DMatrix::zeros(n, n)).unwrap();
                    (sys, q)
                }
                _ => (random_sltis(&mut r, d, n, 1, 0, true), common::psd_of_rank(&mut r, d, d)),
            };
            let rep = certify(&sys, &QuadraticStorage::new(q, tol()).unwrap()).unwrap();
            let v = &rep.verdicts;
            if v.passive.is_certified() {
                prop_assert!(v.local_supermartingale.is_certified());
            }
            prop_assert_eq!(v.local_supermartingale, v.supermartingale);
            prop_assert_eq!(v.supermartingale, v.stochastically_passive);
        }
    }
}

mod observability {
    use super::*;

    fn word_product(sys: &Sltis, word: &[usize]) -> DMatrix<f64> {
        let d = sys.state_dim();
        word.iter().fold(DMatrix::identity(d, d), |acc, &l| {
            let m = if l == 0 { sys.a() } else { &sys.afrak()[l - 1] };
            acc * m
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn unobservable_basis_is_annihilated_by_all_words(seed: u64) {
            let mut r = rng(seed);
            let d = r.random_range(2..=5);
            let hidden = r.random_range(0..d);
            let k = r.random_range(0..=2);
            let sys = random_sltis(&mut r, d, 1, k, hidden, true);
            let rep = unobservable_subspace(&sys, &tol()).unwrap();
            prop_assert_eq!(rep.rank + rep.unobservable_dim, d);
            prop_assert!(rep.unobservable_dim >= hidden);
            for _ in 0..200 {
                let len = r.random_range(0..=d);
                let word: Vec<usize> = (0..len).map(|_| r.random_range(0..=k)).collect();
                let cw = sys.c() * word_product(&sys, &word);
                let scale = tol().tau(&cw);
                for u in &rep.unobservable_basis {
                    let u = DVector::from_column_slice(u);
                    prop_assert!((&cw * u).norm() <= 10.0 * scale);
                }
            }
        }
    }
}

mod storage {
    use super::*;

    /// Scalar systems with `D > 0`, stable drift and feasible storage.
    fn regular_scalars() -> Vec<Sltis> {
        let mut r = rng(8);
        (0..6)
            .map(|_| {
                let a = r.random_range(-2.0..-0.5);
                let af = r.random_range(0.0..0.5);
                Sltis::new(
                    DMatrix::from_element(1, 1, a),
                    DMatrix::from_element(1, 1, r.random_range(0.5..1.5)),
                    vec![DMatrix::from_element(1, 1, af)],
                    vec![DMatrix::zeros(1, 1)],
                    DMatrix::from_element(1, 1, r.random_range(0.5..1.5)),
                    DMatrix::from_element(1, 1, r.random_range(0.5..1.5)),
                )
                .unwrap()
            })
            .collect()
    }

    fn cfg() -> RiccatiConfig {
        RiccatiConfig {
            step: 1e-3,
            max_horizon: 40.0,
            ..RiccatiConfig::default()
        }
    }

    fn feasible(sys: &Sltis, q: f64) -> bool {
        let q = QuadraticStorage::new(DMatrix::from_element(1, 1, q), tol()).unwrap();
        is_neg_semidefinite(&build_mq(sys, &q).unwrap(), &tol()).unwrap().holds
    }

    #[test]
    fn value_trace_is_monotone_and_nonpositive() {
        for sys in regular_scalars().iter().chain([&demo::msd(&MsdParams::default()).unwrap()]) {
            let res = value_iteration(sys, &cfg(), &tol()).unwrap();
            assert!(max_trace_increase(&res.k_trace).unwrap() <= tol().tau(res.q_min.matrix()));
            for (_, k) in &res.k_trace {
                let top = *sym_eigen(&SymMatrix::new(k.clone()).unwrap()).unwrap().0.last().unwrap();
                assert!(top <= tol().tau(k), "K(T) has eigenvalue {top}");
            }
        }
    }

    #[test]
    fn minimal_storage_lies_below_sampled_feasible_points() {
        let mut r = rng(9);
        for sys in regular_scalars() {
            let res = value_iteration(&sys, &cfg(), &tol()).unwrap();
            let q_min = res.q_min.matrix()[(0, 0)];
            let hi = 3.0 * sys.c()[(0, 0)] / sys.b()[(0, 0)];
            let mut found = 0;
            while found < 20 {
                let q = r.random_range(0.0..hi);
                if feasible(&sys, q) {
                    found += 1;
                    assert!(q - q_min >= -10.0 * tol().tau(res.q_min.matrix()), "{q} < {q_min}");
                }
            }
        }
    }

    // Fails at every fixed step h: the converged DP value carries an O(h)
    // bias (about 5e-5 at h = 1e-3), far above tau.
    #[test]
    fn minimal_storage_satisfies_lmi_when_converged() {
        for sys in regular_scalars() {
            let res = value_iteration(&sys, &cfg(), &tol()).unwrap();
            if res.converged {
                let mq = build_mq(&sys, &QuadraticStorage::new(res.q_min.matrix().clone(), tol()).unwrap()).unwrap();
                let check = is_neg_semidefinite(&mq, &tol()).unwrap();
                assert!(
                    check.holds,
                    "max eigenvalue of M at Q_min is {:.3e} > tau {:.1e}",
                    check.extreme_eigenvalue, check.tau
                );
            }
        }
    }

    #[test]
    fn infeasible_verdict_agrees_with_sampled_lmi_search() {
        let mut r = rng(10);
        let mut infeasible = 0;
        for _ in 0..6 {
            // Negative feedthrough makes the input-input block of M positive.
            let sys = Sltis::new(
                DMatrix::from_element(1, 1, r.random_range(-2.0..0.0)),
                DMatrix::from_element(1, 1, 1.0),
                vec![],
                vec![],
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, -r.random_range(0.1..1.0)),
            )
            .unwrap();
            if let Err(Error::Infeasible(_)) = value_iteration(&sys, &cfg(), &tol()) {
                infeasible += 1;
                for _ in 0..100 {
                    assert!(!feasible(&sys, r.random_range(0.0..10.0)));
                }
            }
        }
        assert_eq!(infeasible, 6);
    }
}

mod simulate {
    use super::*;

    #[test]
    fn euler_error_is_first_order() {
        let decay = Sltis::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::zeros(1, 1),
            vec![],
            vec![],
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let q = QuadraticStorage::identity(1, tol());
        let err = |dt: f64| {
            let ens = simulate_paths(&decay, &q, &SimConfig::new(1.0, dt, 1, 0, vec![1.0])).unwrap();
            (ens.mean_x.last().unwrap()[0] - (-1.0f64).exp()).abs()
        };
        let (e1, e2, e3) = (err(0.02), err(0.01), err(0.005));
        for ratio in [e1 / e2, e2 / e3] {
            assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn one_step_drift_matches_generator_on_certified_systems() {
        let mut r = rng(11);
        for _ in 0..10 {
            let d = r.random_range(1..=3);
            let phs = random_phs_dims(&mut r, d, 1, 1, true);
            let sys = compile_phs(&phs).unwrap();
            let q = QuadraticStorage::new(phs.parts().q.clone(), tol()).unwrap();
            let d = sys.state_dim();
            let x0 = vector(&mut r, d);
            let u = r.random_range(-1.0..1.0);
            let dt = 1e-3;
            let mut cfg = SimConfig::new(dt, dt, 100_000, r.random(), x0.iter().copied().collect());
            cfg.control = sphs::ControlSpec::Constant(vec![u]);
            let ens = simulate_paths(&sys, &q, &cfg).unwrap();
            let (drift, se) = one_step_drift(&ens).unwrap();
            let exact = lh_linear(&sys, &q, &x0, &DVector::from_element(1, u)).unwrap();
            let allowed = 3.0 * se + 5.0 * dt * (1.0 + x0.norm_squared());
            assert!((drift - exact).abs() <= allowed, "{drift} vs {exact} (allowed {allowed})");
        }
    }

    #[test]
    fn decreasing_test_passes_in_most_repetitions() {
        let msd = demo::msd(&MsdParams::default()).unwrap();
        let q = QuadraticStorage::identity(2, tol());
        let reps = 20;
        let passes = (0..reps)
            .filter(|&seed| {
                let cfg = SimConfig::new(1.0, 1e-2, 10_000, seed, vec![1.0, 1.0]);
                decreasing_test(&simulate_paths(&msd, &q, &cfg).unwrap(), 3.0).unwrap().pass
            })
            .count();
        assert!(passes * 100 >= 95 * reps as usize, "{passes}/{reps}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn identical_seeds_give_identical_ensembles(seed: u64, paths in 1usize..300) {
            let msd = demo::msd(&MsdParams::default()).unwrap();
            let q = QuadraticStorage::identity(2, tol());
            let mut cfg = SimConfig::new(0.05, 1e-3, paths, seed, vec![0.3, -1.0]);
            let a = simulate_paths(&msd, &q, &cfg).unwrap();
            cfg.parallel = false;
            let b = simulate_paths(&msd, &q, &cfg).unwrap();
            prop_assert_eq!(a.to_csv(), b.to_csv());
            prop_assert_eq!(a, b);
        }
    }
}

mod interconnect {
    use super::*;

    fn blocks(sys: &Sltis, nh: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            sys.c().rows(0, nh).into_owned(),
            sys.d().view((0, 0), (nh, nh)).into_owned(),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn skew_coupling_of_phs_is_certified_and_conserves_energy(seed: u64) {
            let mut r = rng(seed);
            let nh = r.random_range(1..=2);
            let side = |r: &mut ChaCha8Rng| {
                let (d, extra, k) = (r.random_range(1..=3), r.random_range(0..=1), r.random_range(0..=2));
                random_phs_dims(r, d, nh + extra, k, false)
            };
            let p1 = side(&mut r);
            let p2 = side(&mut r);
            let (s1, s2) = (compile_phs(&p1).unwrap(), compile_phs(&p2).unwrap());
            let k = skew(&mut r, 2 * nh);
            let sys = interconnect(&s1, &s2, &InterconnectSpec::new(nh, k.clone()), &tol()).unwrap();
            let q = sphs::linalg::block_diag(&p1.parts().q, &p2.parts().q);
            let qs = QuadraticStorage::new(q, tol()).unwrap();
            let rep = certify(&sys, &qs).unwrap();
            prop_assert!(rep.lmi_ok, "max eig {}", rep.lmi_max_eig);

            // ℒH of the composition equals the sum over subsystems with the
            // coupled inputs; the coupling supply ⟨KYᶜ, Yᶜ⟩ cancels.
            let (d1, d2) = (s1.state_dim(), s2.state_dim());
            let x = vector(&mut r, d1 + d2);
            let (c1, dc1) = blocks(&s1, nh);
            let (c2, dc2) = blocks(&s2, nh);
            let cc = sphs::linalg::block_diag(&c1, &c2);
            let dc = sphs::linalg::block_diag(&dc1, &dc2);
            let uc = (DMatrix::identity(2 * nh, 2 * nh) - &k * &dc)
                .lu()
                .solve(&(&k * &cc * &x))
                .unwrap();
            let mut u1 = DVector::zeros(s1.input_dim());
            u1.rows_mut(0, nh).copy_from(&uc.rows(0, nh));
            let mut u2 = DVector::zeros(s2.input_dim());
            u2.rows_mut(0, nh).copy_from(&uc.rows(nh, nh));
            let x1 = x.rows(0, d1).into_owned();
            let x2 = x.rows(d1, d2).into_owned();
            // Pad noise channels so both subsystems see the shared Wiener process.
            let k_all = s1.noise_dim().max(s2.noise_dim());
            let pad = |s: &Sltis| {
                let (d, n) = (s.state_dim(), s.input_dim());
                let mut af = s.afrak().to_vec();
                let mut bf = s.bfrak().to_vec();
                af.resize(k_all, DMatrix::zeros(d, d));
                bf.resize(k_all, DMatrix::zeros(d, n));
                Sltis::new(s.a().clone(), s.b().clone(), af, bf, s.c().clone(), s.d().clone()).unwrap()
            };
            let q1 = QuadraticStorage::new(p1.parts().q.clone(), tol()).unwrap();
            let q2 = QuadraticStorage::new(p2.parts().q.clone(), tol()).unwrap();
            let parts = lh_linear(&pad(&s1), &q1, &x1, &u1).unwrap() + lh_linear(&pad(&s2), &q2, &x2, &u2).unwrap();
            let whole = lh_linear(&sys, &qs, &x, &DVector::zeros(sys.input_dim())).unwrap();
            prop_assert!((parts - whole).abs() <= 1e-8 * (1.0 + whole.abs()), "{parts} vs {whole}");
        }

        #[test]
        fn argument_order_is_a_permutation(seed: u64) {
            let mut r = rng(seed);
            let nh = r.random_range(0..=2);
            let (d1, d2) = (r.random_range(1..=3), r.random_range(1..=3));
            let (n1, n2) = (nh + r.random_range(0..=1), nh + r.random_range(0..=1));
            let s1 = random_sltis(&mut r, d1, n1.max(1), 1, 0, true);
            let s2 = random_sltis(&mut r, d2, n2.max(1), 1, 0, true);
            let (n1, n2) = (s1.input_dim(), s2.input_dim());
            let k = gaussian(&mut r, 2 * nh, 2 * nh) * 0.3;
            let swap_nh = perm_matrix(&[(nh, nh), (0, nh)], 2 * nh);
            let k_sw = &swap_nh * &k * swap_nh.transpose();
            let a = interconnect(&s1, &s2, &InterconnectSpec::new(nh, k), &tol());
            prop_assume!(a.is_ok(), "coupling happened to be singular");
            let a = a.unwrap();
            let b = interconnect(&s2, &s1, &InterconnectSpec::new(nh, k_sw), &tol()).unwrap();
            let ps = perm_matrix(&[(d1, d2), (0, d1)], d1 + d2);
            let pe = perm_matrix(&[(n1 - nh, n2 - nh), (0, n1 - nh)], n1 + n2 - 2 * nh);
            let close = |x: &DMatrix<f64>, y: &DMatrix<f64>| max_abs(&(x - y)) <= 1e-10 * (1.0 + max_abs(x));
            prop_assert!(close(&(&ps * a.a() * ps.transpose()), b.a()));
            prop_assert!(close(&(&ps * a.b() * pe.transpose()), b.b()));
            prop_assert!(close(&(&pe * a.c() * ps.transpose()), b.c()));
            prop_assert!(close(&(&pe * a.d() * pe.transpose()), b.d()));
            prop_assert!(close(&(&ps * &a.afrak()[0] * ps.transpose()), &b.afrak()[0]));
            prop_assert!(close(&(&ps * &a.bfrak()[0] * pe.transpose()), &b.bfrak()[0]));
        }
    }

    /// Block permutation: output block `i` takes the rows of the original
    /// block that starts at `blocks[i].0` with length `blocks[i].1`.
    fn perm_matrix(blocks: &[(usize, usize)], n: usize) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(n, n);
        let mut row = 0;
        for &(start, len) in blocks {
            for i in 0..len {
                p[(row, start + i)] = 1.0;
                row += 1;
            }
        }
        p
    }

    #[test]
    fn zero_channels_give_the_direct_sum() {
        let m = demo::msd(&MsdParams::default()).unwrap();
        let r = demo::rlc(&Default::default()).unwrap();
        let sum = interconnect(&m, &r, &InterconnectSpec::new(0, DMatrix::zeros(0, 0)), &tol()).unwrap();
        let bd = sphs::linalg::block_diag;
        assert_eq!(sum.a(), &bd(m.a(), r.a()));
        assert_eq!(sum.b(), &bd(m.b(), r.b()));
        assert_eq!(sum.c(), &bd(m.c(), r.c()));
        assert_eq!(sum.d(), &bd(m.d(), r.d()));
        assert_eq!(sum.afrak()[0], bd(&m.afrak()[0], &r.afrak()[0]));
    }
}
