mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tcp_adapt::da::{self, DaVariant};
use tcp_adapt::data::{augment_bias, one_hot, row_argmax};
use tcp_adapt::ls;
use tcp_adapt::saddle::SolverOptions;

fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn soft_labels(rng: &mut ChaCha8Rng, m: usize, k: usize) -> DMatrix<f64> {
    let mut q = DMatrix::from_fn(m, k, |_, _| rng.random_range(0.05..1.0));
    for mut row in q.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    q
}

#[test]
fn qda_estimates_match_weighted_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (m, d, k) = (40, rng.random_range(1..5), rng.random_range(2..5));
        let x = normal(&mut rng, m, d);
        let q = soft_labels(&mut rng, m, k);
        let p = da::fit_da(&x, &q, DaVariant::Qda, 0.0).unwrap();
        let (priors, means, covs) = common::weighted_moments(&x, &q);
        for c in 0..k {
            assert!((p.priors[c] - priors[c]).abs() < 1e-10);
            for a in 0..d {
                assert!((p.means[(c, a)] - means[c][a]).abs() < 1e-10);
            }
            assert!((p.covariance(c) - &covs[c]).amax() < 1e-10);
        }
    }
}

#[test]
fn lda_pools_class_scatter_by_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (m, d, k) = (50, 3, 3);
    let x = normal(&mut rng, m, d);
    let q = soft_labels(&mut rng, m, k);
    let p = da::fit_da(&x, &q, DaVariant::Lda, 0.0).unwrap();
    let (priors, _, covs) = common::weighted_moments(&x, &q);
    let mut pooled = DMatrix::zeros(d, d);
    for c in 0..k {
        pooled += &covs[c] * priors[c];
    }
    assert_eq!(p.covariances.len(), 1);
    assert!((&p.covariances[0] - pooled).amax() < 1e-10);
}

#[test]
fn risk_matches_explicit_log_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for variant in [DaVariant::Lda, DaVariant::Qda] {
        let x = normal(&mut rng, 30, 3);
        let z = normal(&mut rng, 12, 3);
        let p = da::fit_da(&x, &soft_labels(&mut rng, 30, 2), variant, 0.2).unwrap();
        let q = soft_labels(&mut rng, 12, 2);
        let mut naive = 0.0;
        for j in 0..12 {
            let zj: Vec<f64> = z.row(j).iter().copied().collect();
            for c in 0..2 {
                let mu: Vec<f64> = p.means.row(c).iter().copied().collect();
                let lp = p.priors[c].ln() + common::log_gauss_naive(&zj, &mu, p.covariance(c));
                naive -= q[(j, c)] * lp;
            }
        }
        naive /= 12.0;
        assert!((da::da_risk(&p, &z, &q).unwrap() - naive).abs() < 1e-10);
    }
}

#[test]
fn predicted_class_is_the_largest_joint_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = normal(&mut rng, 60, 2);
    let y: Vec<usize> = (0..60).map(|i| 1 + i % 3).collect();
    let p = da::fit_da(&x, &one_hot(&y, 3).unwrap(), DaVariant::Qda, 0.1).unwrap();
    let z = normal(&mut rng, 25, 2);
    let got = row_argmax(&p.predict(&z).unwrap());
    for j in 0..25 {
        let zj: Vec<f64> = z.row(j).iter().copied().collect();
        let best = (0..3)
            .map(|c| {
                let mu: Vec<f64> = p.means.row(c).iter().copied().collect();
                p.priors[c].ln() + common::log_gauss_naive(&zj, &mu, p.covariance(c))
            })
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert_eq!(got[j], best);
    }
}

#[test]
fn regularization_shifts_the_clamped_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let a = normal(&mut rng, 4, 4);
        let s = (&a + a.transpose()) * 0.5;
        let lambda = rng.random_range(0.0..2.0);
        let mut want: Vec<f64> = s.clone().symmetric_eigen().eigenvalues.iter().map(|e| e.max(0.0) + lambda).collect();
        let r = da::regularize_cov(&s, lambda);
        let mut got: Vec<f64> = r.symmetric_eigen().eigenvalues.iter().copied().collect();
        want.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10);
        }
        // already PSD: exactly S + λI
        let psd = &a * a.transpose();
        let shifted = &psd + DMatrix::identity(4, 4) * lambda;
        assert!((da::regularize_cov(&psd, lambda) - shifted).amax() < 1e-10);
    }
}

#[test]
fn total_mean_equals_sample_mean_for_any_labeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for variant in [DaVariant::Lda, DaVariant::Qda] {
        let x = normal(&mut rng, 35, 4);
        let p = da::fit_da(&x, &soft_labels(&mut rng, 35, 3), variant, 0.5).unwrap();
        let mean: DVector<f64> = x.row_mean().transpose();
        assert!((p.total_mean() - mean).norm() < 1e-12);
    }
}

#[test]
fn tcp_da_is_certified_never_worse() {
    let opts = SolverOptions::default();
    for seed in 0..6 {
        let t = common::synthetic_trial(seed, 2, 25, 15);
        let y = one_hot(&t.y, 2).unwrap();
        for (variant, lambda) in [(DaVariant::Lda, 0.0), (DaVariant::Qda, 0.0), (DaVariant::Qda, 0.3)] {
            let src = da::fit_da(&t.x, &y, variant, lambda).unwrap();
            let r = da::fit_tcp_da(&src, &t.z, variant, lambda, &opts).unwrap();
            assert!(r.objective <= 1e-9, "objective {}", r.objective);
            if lambda == 0.0 {
                let h = da::worst_case_contrast(&r.params, &src, &t.z).unwrap();
                assert!(h <= 1e-9, "certificate {h}");
            }
        }
    }
}

#[test]
fn tcp_da_rejects_mismatched_settings() {
    let t = common::synthetic_trial(9, 2, 10, 8);
    let y = one_hot(&t.y, 2).unwrap();
    let src = da::fit_da(&t.x, &y, DaVariant::Lda, 0.1).unwrap();
    let opts = SolverOptions::default();
    assert!(da::fit_tcp_da(&src, &t.z, DaVariant::Qda, 0.1, &opts).is_err());
    assert!(da::fit_tcp_da(&src, &t.z, DaVariant::Lda, 0.2, &opts).is_err());
    assert!(da::fit_tcp_da(&src, &DMatrix::zeros(4, 3), DaVariant::Lda, 0.1, &opts).is_err());
}

#[test]
fn least_squares_solves_the_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for ridge in [0.0, 0.5] {
        let x = normal(&mut rng, 30, 3);
        let y = soft_labels(&mut rng, 30, 2);
        let p = ls::fit_ls(&x, &y, ridge).unwrap();
        let a = augment_bias(&x);
        let gram = a.transpose() * &a + DMatrix::identity(4, 4) * ridge;
        let want = gram.lu().solve(&(a.transpose() * &y)).unwrap();
        assert!((p.theta - want).amax() < 1e-10);
    }
}

#[test]
fn least_squares_handles_rank_deficiency() {
    let x = DMatrix::from_row_slice(3, 2, &[1., 2., 2., 4., 3., 6.]);
    let y = one_hot(&[1, 2, 2], 2).unwrap();
    let p = ls::fit_ls(&x, &y, 0.0).unwrap();
    assert!(p.theta.iter().all(|v| v.is_finite()));
}

#[test]
fn one_dimensional_refit_matches_cramer() {
    let z = [0.3, -1.2, 2.0, 0.7, 1.1];
    let labels = [[1.0, 0.0], [0.2, 0.8], [0.0, 1.0], [0.5, 0.5], [0.9, 0.1]];
    let want = common::ls_fit_1d(&z, &labels);
    let zm = DMatrix::from_column_slice(5, 1, &z);
    let q = DMatrix::from_fn(5, 2, |j, c| labels[j][c]);
    let p = ls::fit_ls(&zm, &q, 0.0).unwrap();
    for r in 0..2 {
        for c in 0..2 {
            assert!((p.theta[(r, c)] - want[r][c]).abs() < 1e-12);
        }
    }
}

#[test]
fn tcp_ls_worst_case_never_positive() {
    let opts = SolverOptions::default();
    for seed in 20..26 {
        let t = common::synthetic_trial(seed, 3, 20, 12);
        let src = ls::fit_ls(&t.x, &one_hot(&t.y, 2).unwrap(), 0.0).unwrap();
        let r = ls::fit_tcp_ls(&src, &t.z, 0.0, &opts).unwrap();
        assert!(r.worst_case_contrast.unwrap() <= 1e-9);
        assert!(r.objective <= 1e-9);
    }
}

#[test]
fn identical_domains_give_a_zero_saddle_value() {
    let t = common::synthetic_trial(30, 2, 20, 20);
    let y = one_hot(&t.u, 2).unwrap();
    let src = da::fit_da(&t.z, &y, DaVariant::Lda, 0.0).unwrap();
    let r = da::fit_tcp_da(&src, &t.z, DaVariant::Lda, 0.0, &SolverOptions::default()).unwrap();
    assert!(r.objective.abs() <= 1e-6, "{}", r.objective);
}
