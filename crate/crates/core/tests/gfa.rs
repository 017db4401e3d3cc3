use approx::assert_relative_eq;
use proptest::prelude::*;
use sparsedyn_core::denoiser::expected_derivative;
use sparsedyn_core::gfa::{
    build_d, build_r_gamma, derive, k_hat, lambda_matrix, min_eigenvalue_of, single_site_mc,
    Derived, SingleSiteProcess,
};
use sparsedyn_core::state_evolution::channel_mse;
use sparsedyn_core::*;

fn prior() -> Prior {
    Prior::bernoulli_gaussian(0.1, 1.0).unwrap()
}

fn model() -> GfaModel {
    GfaModel {
        prior: prior(),
        delta: 0.5,
        sigma0_2: 0.01,
    }
}

fn strictly_lower(values: &[f64], n: usize) -> DenseMatrix {
    let mut g = DenseMatrix::zeros(n, n);
    let mut it = values.iter();
    for s in 0..n {
        for r in 0..s {
            g.set(s, r, *it.next().unwrap());
        }
    }
    g
}

#[test]
fn build_d_examples() {
    let d = build_d(&[0.0], &DenseMatrix::zeros(1, 1), 0.5, 0.01, 0.1).unwrap();
    assert_relative_eq!(d.get(0, 0), 0.01 + 0.1 / 0.5, max_relative = 1e-15);

    // perfect recovery on the diagonal leaves only the noise
    let mut c = DenseMatrix::zeros(2, 2);
    c.set(1, 1, 0.1);
    let d = build_d(&[0.0, 0.1], &c, 0.5, 0.01, 0.1).unwrap();
    assert_relative_eq!(d.get(1, 1), 0.01, max_relative = 1e-14);

    assert!(matches!(
        build_d(&[0.0, 0.0], &DenseMatrix::zeros(1, 1), 0.5, 0.0, 0.1),
        Err(Error::ShapeMismatch { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn build_d_matches_formula(
        m1 in -1.0f64..1.0, m2 in -1.0f64..1.0,
        c11 in 0.0f64..2.0, c12 in -1.0f64..1.0, c22 in 0.0f64..2.0,
        delta in 0.05f64..1.0, s0 in 0.0f64..0.5, ex2 in 0.0f64..2.0,
    ) {
        let m = [0.0, m1, m2];
        let mut c = DenseMatrix::zeros(3, 3);
        c.set(1, 1, c11);
        c.set(1, 2, c12);
        c.set(2, 1, c12);
        c.set(2, 2, c22);
        let d = build_d(&m, &c, delta, s0, ex2).unwrap();
        for s in 0..3 {
            for r in 0..3 {
                let want = s0 + (ex2 - m[s] - m[r] + c.get(s, r)) / delta;
                prop_assert!((d.get(s, r) - want).abs() <= 1e-12 * want.abs().max(1.0));
                prop_assert_eq!(d.get(s, r), d.get(r, s));
            }
        }
    }

    #[test]
    fn unit_triangular_inverse_is_exact(vals in prop::collection::vec(-1.0f64..1.0, 6), delta in 0.5f64..2.0) {
        let g = strictly_lower(&vals, 4);
        let mut d = DenseMatrix::zeros(4, 4);
        for i in 0..4 {
            d.set(i, i, 1.0);
        }
        let (r, gamma) = build_r_gamma(&g, &d, delta).unwrap();
        // Gamma = I - B^-1, so B (I - Gamma) = I
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..4 {
                    let b = if i == k { 1.0 } else { 0.0 } + g.get(i, k) / delta;
                    let inv = if k == j { 1.0 } else { 0.0 } - gamma.get(k, j);
                    acc += b * inv;
                }
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((acc - want).abs() <= 1e-12, "residual {} at ({}, {})", acc - want, i, j);
            }
        }
        // causal structure: Gamma strictly lower, R symmetric
        for i in 0..4 {
            for j in i..4 {
                prop_assert_eq!(gamma.get(i, j), 0.0);
                prop_assert_eq!(r.get(i, j), r.get(j, i));
            }
        }
        // det(I + G / delta) = 1 for strictly lower G
        let b = nalgebra::DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 } + g.get(i, j) / delta);
        prop_assert!((b.determinant() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn zero_response_gives_r_equal_d() {
    let mut d = DenseMatrix::zeros(3, 3);
    for (i, v) in [0.21, 0.05, 0.04, 0.05, 0.07, 0.03, 0.04, 0.03, 0.06]
        .iter()
        .enumerate()
    {
        d.set(i / 3, i % 3, *v);
    }
    let (r, gamma) = build_r_gamma(&DenseMatrix::zeros(3, 3), &d, 0.5).unwrap();
    assert_eq!(r, d);
    assert!(gamma.as_slice().iter().all(|v| *v == 0.0));
}

#[test]
fn memory_kernel_vanishes_for_large_delta() {
    let g = strictly_lower(&[0.3, -0.7, 0.2, 0.9, -0.4, 0.5], 4);
    let (_, gamma) = build_r_gamma(&g, &DenseMatrix::zeros(4, 4), 1e6).unwrap();
    let norm = |m: &DenseMatrix| m.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(norm(&gamma) <= 2e-6 * norm(&g));
    assert!(norm(&gamma) > 0.0);
}

#[test]
fn triangular_path_agrees_with_general_inverse() {
    // A tiny upper entry forces the general inverse; the results must agree.
    let g = strictly_lower(&[0.3, -0.7, 0.2], 3);
    let mut d = DenseMatrix::zeros(3, 3);
    for i in 0..3 {
        for j in 0..3 {
            d.set(i, j, 0.1 + if i == j { 0.2 } else { 0.0 });
        }
    }
    let (r1, g1) = build_r_gamma(&g, &d, 0.5).unwrap();
    let mut g_up = g.clone();
    g_up.set(0, 2, 1e-300);
    let (r2, g2) = build_r_gamma(&g_up, &d, 0.5).unwrap();
    for (a, b) in r1
        .as_slice()
        .iter()
        .zip(r2.as_slice())
        .chain(g1.as_slice().iter().zip(g2.as_slice()))
    {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn golden_lambda_matrices() {
    let g = DenseMatrix::zeros(3, 3);
    let l1 = lambda_matrix(&g, 1, 0.5);
    assert_eq!(l1.as_slice(), &[1.0, 0.0, 1.0, 1.0]);
    let l2 = lambda_matrix(&g, 2, 0.5);
    assert_eq!(
        l2.as_slice(),
        &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0]
    );
    assert_eq!(k_hat(&g, 0, 0.5), 1.0);
    assert_eq!(k_hat(&g, 1, 0.5), 1.0);
    assert_eq!(k_hat(&g, 2, 0.5), 1.0);
}

#[test]
fn k_hat_matches_cofactor_expansion() {
    let delta = 0.5;
    for g10 in [-1.3, -0.2, 0.0, 0.4, 2.5] {
        // with G^(1,0) alone the determinant stays exactly 1
        let mut only = DenseMatrix::zeros(3, 3);
        only.set(1, 0, g10);
        assert_relative_eq!(k_hat(&only, 2, delta), 1.0, max_relative = 1e-15);
        assert_relative_eq!(
            k_hat(&only, 1, delta),
            1.0 - g10 / delta,
            max_relative = 1e-14,
            epsilon = 1e-15
        );

        let mut g = DenseMatrix::zeros(3, 3);
        g.set(1, 0, g10);
        g.set(2, 0, 0.37);
        g.set(2, 1, -0.11);
        // Lambda_[2] = [[1, G10/d, G20/d], [0, 1, G21/d], [1, 1, 1]]
        let l = [
            [1.0, g10 / delta, 0.37 / delta],
            [0.0, 1.0, -0.11 / delta],
            [1.0, 1.0, 1.0],
        ];
        let cof = l[0][0] * (l[1][1] * l[2][2] - l[1][2] * l[2][1])
            - l[0][1] * (l[1][0] * l[2][2] - l[1][2] * l[2][0])
            + l[0][2] * (l[1][0] * l[2][1] - l[1][1] * l[2][0]);
        assert_relative_eq!(
            k_hat(&g, 2, delta),
            cof,
            max_relative = 1e-13,
            epsilon = 1e-14
        );
        // the same value is the last row sum of (I + G / delta)^-1
        let b = nalgebra::DMatrix::from_fn(
            3,
            3,
            |i, j| if i == j { 1.0 } else { 0.0 } + g.get(i, j) / delta,
        );
        let inv = b.try_inverse().unwrap();
        assert_relative_eq!(inv.row(2).sum(), cof, max_relative = 1e-13, epsilon = 1e-14);
    }
}

#[test]
fn horizon_zero_is_deterministic_zero() {
    let m = model();
    let op = gfa_run(
        &m,
        &DenoiserRule::new(DenoiserKind::Soft, prior()),
        0,
        &McConfig::new(1000, 1),
        &Sequential,
    )
    .unwrap();
    assert_eq!(op.m, vec![0.0]);
    assert_eq!(op.c.get(0, 0), 0.0);
    assert_eq!(op.g.get(0, 0), 0.0);
    assert_eq!(op.mse, vec![0.1]);

    let derived = derive(
        &m,
        &[0.0],
        &DenseMatrix::zeros(1, 1),
        &DenseMatrix::zeros(1, 1),
    )
    .unwrap();
    let den = [Denoiser::soft_threshold(0.3).unwrap()];
    let process = SingleSiteProcess {
        prior: &m.prior,
        derived: &derived,
        denoisers: &den,
        theta: None,
    };
    let est = single_site_mc(&process, &McConfig::new(5000, 3), &Sequential).unwrap();
    assert_eq!(est.m[0], 0.0);
    assert_eq!(est.c.get(0, 0), 0.0);
    assert_eq!(est.g.get(0, 0), 0.0);
    assert_eq!(est.g.get(0, 1), 0.0);
}

#[test]
fn first_response_matches_quadrature() {
    let m = model();
    let rule = DenoiserRule::new(DenoiserKind::Soft, prior());
    let op = gfa_run(&m, &rule, 1, &McConfig::new(200_000, 11), &Sequential).unwrap();
    let tau = op.tau2[0].sqrt();
    let want =
        expected_derivative(&op.denoisers[0], &m.prior, tau, &QuadratureRule::default()).unwrap();
    let (got, se) = (op.g.get(1, 0), op.g_stderr.get(1, 0));
    assert!(want > 0.05);
    assert!(
        (got - want).abs() <= 3.0 * se,
        "G10 {got} vs {want} (stderr {se})"
    );
}

#[test]
fn one_step_matches_state_evolution() {
    let m = model();
    let qr = QuadratureRule::default();
    for kind in [
        DenoiserKind::Soft,
        DenoiserKind::MmseBg,
        DenoiserKind::DfMmseBg,
    ] {
        let rule = DenoiserRule::new(kind, prior());
        let op = gfa_run(&m, &rule, 1, &McConfig::new(200_000, 5), &Sequential).unwrap();
        let se = SeModel {
            prior: &m.prior,
            delta: m.delta,
            sigma0_2: m.sigma0_2,
            rule: &qr,
        };
        let (want, tau2) = se_step(&se, 0.1, &rule, 0).unwrap();
        assert_relative_eq!(op.tau2[0], tau2, max_relative = 1e-14);
        assert!(
            (op.mse[1] - want).abs() <= 3.0 * op.mse_stderr[1],
            "{kind}: {} vs {want} (stderr {})",
            op.mse[1],
            op.mse_stderr[1]
        );
    }
}

#[test]
fn divergence_free_schedule_has_no_response() {
    // Driven by G = 0, every entry of a fresh batch is an unbiased estimate
    // of the response of the divergence-free process.
    let m = model();
    let rule = DenoiserRule::new(DenoiserKind::DfSoft, prior());
    let mut mc = McConfig::new(200_000, 21);
    mc.impose_zero_response = true;
    let op = gfa_run(&m, &rule, 3, &mc, &Sequential).unwrap();
    for s in 0..4 {
        for r in 0..4 {
            let (g, se) = (op.g.get(s, r), op.g_stderr.get(s, r));
            if r >= s {
                assert_eq!(g, 0.0);
            } else {
                assert!(g.abs() <= 3.0 * se, "G({s},{r}) = {g}, stderr {se}");
            }
        }
    }
}

#[test]
fn sensitivity_matches_finite_differences() {
    // Non-divergence-free schedule so that G, Gamma and k are all nontrivial.
    let m = model();
    let rule = DenoiserRule::new(DenoiserKind::Soft, prior());
    let op = gfa_run(&m, &rule, 3, &McConfig::new(100_000, 2), &Sequential).unwrap();
    assert!(op.gamma.get(2, 1).abs() > 1e-2);
    let derived = Derived {
        d: op.d.clone(),
        r: op.r.clone(),
        gamma: op.gamma.clone(),
        k_hat: op.k_hat.clone(),
    };
    let mc = McConfig::new(20_000, 77);
    let h = 1e-4;
    let run = |theta| {
        let process = SingleSiteProcess {
            prior: &m.prior,
            derived: &derived,
            denoisers: &op.denoisers,
            theta,
        };
        single_site_mc(&process, &mc, &Sequential).unwrap()
    };
    let base = run(None);
    for sp in 0..3 {
        let plus = run(Some((sp, h)));
        let minus = run(Some((sp, -h)));
        for s in sp + 1..4 {
            let fd = (plus.mean_x[s] - minus.mean_x[s]) / (2.0 * h);
            let (g, se) = (base.g.get(s, sp), base.g_stderr.get(s, sp));
            assert!(
                (fd - g).abs() <= 3.0 * se,
                "({s},{sp}): fd {fd} vs J {g} (stderr {se})"
            );
        }
    }
}

#[test]
fn order_parameter_invariants() {
    let m = model();
    let rule = DenoiserRule::new(DenoiserKind::Soft, prior());
    let op = gfa_run(&m, &rule, 4, &McConfig::new(100_000, 9), &Sequential).unwrap();
    let n = 5;
    assert_eq!(op.m[0], 0.0);
    for s in 0..n {
        assert_eq!(op.c.get(0, s), 0.0);
        for r in 0..n {
            assert_eq!(op.c.get(s, r), op.c.get(r, s));
            assert_eq!(op.r.get(s, r), op.r.get(r, s));
            if r >= s {
                assert_eq!(op.g.get(s, r), 0.0);
                assert_eq!(op.gamma.get(s, r), 0.0);
            }
        }
        // the MSE ledger against the direct estimator on the same samples; the
        // two differ by the sampling error of mean(x0^2), whose stderr is at
        // most the sum of the two reported ones
        let tol = 3.0 * (op.mse_stderr[s] + op.mse_direct_stderr[s]) + 1e-15;
        assert!((op.mse[s] - op.mse_direct[s]).abs() <= tol, "t={s}");
        assert_relative_eq!(
            op.mse[s],
            m.prior.second_moment() - 2.0 * op.m[s] + op.c.get(s, s),
            max_relative = 1e-12
        );
    }
    let trace: f64 = (0..n).map(|i| op.r.get(i, i)).sum();
    assert!(min_eigenvalue_of(&op.r) >= -1e-10 * trace);
    // tau^2 is the diagonal of R at each horizon
    for s in 0..n {
        assert_relative_eq!(op.tau2[s], op.r.get(s, s), max_relative = 1e-12);
    }
}

#[test]
fn memory_terms_change_the_prediction() {
    let m = model();
    let rule = DenoiserRule::new(DenoiserKind::Soft, prior());
    let op = gfa_run(&m, &rule, 3, &McConfig::new(100_000, 4), &Sequential).unwrap();
    assert!(
        op.k_hat.iter().skip(1).all(|k| (k - 1.0).abs() > 0.1),
        "{:?}",
        op.k_hat
    );
    let qr = QuadratureRule::default();
    let se = se_run(
        &SeModel {
            prior: &m.prior,
            delta: m.delta,
            sigma0_2: m.sigma0_2,
            rule: &qr,
        },
        &rule,
        3,
    )
    .unwrap();
    let gap = (op.mse[2] - se.sigma2[2]).abs();
    assert!(
        gap > 10.0 * op.mse_stderr[2],
        "GFA {} vs SE {}",
        op.mse[2],
        se.sigma2[2]
    );
}

fn se_for(m: &GfaModel, rule: &DenoiserRule, t: usize) -> SeTrace {
    let qr = QuadratureRule::default();
    se_run(
        &SeModel {
            prior: &m.prior,
            delta: m.delta,
            sigma0_2: m.sigma0_2,
            rule: &qr,
        },
        rule,
        t,
    )
    .unwrap()
}

#[test]
fn divergence_free_recursion_coincides_with_state_evolution() {
    let m = model();
    let rule = DenoiserRule::new(DenoiserKind::DfMmseBg, prior());
    let se = se_for(&m, &rule, 6);
    let op = gfa_run(&m, &rule, 6, &McConfig::new(200_000, 31), &Sequential).unwrap();
    for t in 0..=6 {
        // combined error: this horizon's sampling error plus the drift of tau
        // inherited from earlier horizons, bounded by a few stderr of the mse
        let tol = 4.0 * op.mse_stderr[..=t].iter().cloned().fold(0.0, f64::max) + 1e-12;
        assert!(
            (op.mse[t] - se.sigma2[t]).abs() <= tol,
            "t={t}: {} vs {}",
            op.mse[t],
            se.sigma2[t]
        );
    }
}

#[test]
fn imposed_zero_response_reproduces_state_evolution() {
    let m = model();
    let rule = DenoiserRule::new(DenoiserKind::DfSoft, prior());
    let se = se_for(&m, &rule, 4);
    let mut mc = McConfig::new(200_000, 8);
    mc.impose_zero_response = true;
    let op = gfa_run(&m, &rule, 4, &mc, &Sequential).unwrap();
    assert!(op.k_hat.iter().all(|k| *k == 1.0));
    assert!(op.gamma.as_slice().iter().all(|v| *v == 0.0));
    assert_eq!(op.r, op.d);
    for t in 0..=4 {
        let tol = 4.0 * op.mse_stderr[..=t].iter().cloned().fold(0.0, f64::max) + 1e-12;
        assert!((op.mse[t] - se.sigma2[t]).abs() <= tol, "t={t}");
    }
}

#[test]
fn lemma2_report() {
    let m = model();
    let rule = DenoiserRule::new(DenoiserKind::DfMmseBg, prior());
    let rep = verify_lemma2(&m, &rule, 3, &McConfig::new(50_000, 3), 8, &Sequential).unwrap();
    assert!(rep.max_abs_g_over_stderr <= 4.0, "{rep:?}");
    assert_eq!(rep.replicates, 8);
    assert_eq!(rep.inductive.horizon, 3);
    assert!(rep.k_hat_values.iter().all(|k| (k - 1.0).abs() <= 1e-10));
    assert!(
        rep.r_minus_d_norm <= 3.0 * rep.r_minus_d_bound,
        "{} vs {}",
        rep.r_minus_d_norm,
        rep.r_minus_d_bound
    );
    assert!(rep.k_hat_free.iter().all(|k| (k - 1.0).abs() < 0.05));
}

#[test]
fn chunk_plan_fixes_the_result() {
    struct Reversed;
    impl ChunkExecutor for Reversed {
        fn map_chunks<T, F>(&self, count: usize, job: F) -> Vec<T>
        where
            T: Send,
            F: Fn(usize) -> T + Sync + Send,
        {
            let mut out: Vec<T> = (0..count).rev().map(job).collect();
            out.reverse();
            out
        }
    }
    let m = model();
    let rule = DenoiserRule::new(DenoiserKind::Soft, prior());
    let mc = McConfig::new(10_000, 6);
    let a = gfa_run(&m, &rule, 3, &mc, &Sequential).unwrap();
    let b = gfa_run(&m, &rule, 3, &mc, &Reversed).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rejects_bad_configuration() {
    let m = model();
    let rule = DenoiserRule::new(DenoiserKind::Soft, prior());
    assert!(matches!(
        gfa_run(&m, &rule, 1, &McConfig::new(999, 1), &Sequential),
        Err(Error::InvalidArgument {
            name: "samples",
            ..
        })
    ));
    let bad = GfaModel { delta: 0.0, ..m };
    assert!(matches!(
        gfa_run(&bad, &rule, 1, &McConfig::new(1000, 1), &Sequential),
        Err(Error::InvalidArgument { name: "delta", .. })
    ));
}

#[test]
fn indefinite_covariance_is_reported() {
    let mut r = DenseMatrix::zeros(2, 2);
    r.set(0, 0, 1.0);
    r.set(1, 1, -0.5);
    assert!(matches!(
        sparsedyn_core::gfa::factor_covariance(&r),
        Err(Error::IllConditionedCovariance { min_eigenvalue }) if (min_eigenvalue + 0.5).abs() < 1e-12
    ));
    // rank-deficient but PSD factors after jitter
    let mut r = DenseMatrix::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            r.set(i, j, 0.3);
        }
    }
    assert!(sparsedyn_core::gfa::factor_covariance(&r).is_ok());
}

#[test]
fn channel_mse_agrees_with_one_step() {
    // SE's one-step integral and GFA's t=1 batch evaluate the same scalar channel
    let p = prior();
    let den = Denoiser::soft_threshold(0.6).unwrap();
    let tau = (0.01f64 + 0.2).sqrt();
    let q = channel_mse(&den, &p, tau, &QuadratureRule::default()).unwrap();
    let derived = derive(
        &model(),
        &[0.0],
        &DenseMatrix::zeros(1, 1),
        &DenseMatrix::zeros(1, 1),
    )
    .unwrap();
    let process = SingleSiteProcess {
        prior: &p,
        derived: &derived,
        denoisers: std::slice::from_ref(&den),
        theta: None,
    };
    let est = single_site_mc(&process, &McConfig::new(400_000, 12), &Sequential).unwrap();
    assert!((est.mse[1] - q).abs() <= 3.0 * est.mse_stderr[1]);
}

#[test]
fn late_iterations_keep_d_positive_semidefinite() {
    // Converged iterates make D nearly singular; shared draws keep it a Gram matrix.
    let m = model();
    let rule = DenoiserRule::new(DenoiserKind::DfMmseBg, prior());
    let op = gfa_run(&m, &rule, 10, &McConfig::new(20_000, 5), &Sequential).unwrap();
    let scale = (0..op.d.rows()).map(|i| op.d.get(i, i)).fold(0.0, f64::max);
    assert!(min_eigenvalue_of(&op.d) >= -1e-12 * scale);
    assert!(min_eigenvalue_of(&op.r) >= -1e-12 * scale);
    assert!((op.mse[10] - op.mse_direct[10]).abs() <= 1e-12);
}
