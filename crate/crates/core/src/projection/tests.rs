use std::sync::Arc;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::model::reference::{linear_model_truth, LinearModel};
use crate::model::{build_constraint_set, ComputerModel, ConstraintSet, Design, NoiseModel};
use crate::numerics::{gauss_legendre_rule, inner_product, BoxDomain, GridFunction, QuadratureRule};
use crate::priors::{BasisExpansionPrior, BiasPrior};

fn rule(n: usize) -> Arc<QuadratureRule> {
    Arc::new(gauss_legendre_rule(n, &BoxDomain::unit(1)).unwrap())
}

fn design(n: usize) -> Design {
    let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    Design::new(DMatrix::from_column_slice(n, 1, &xs), BoxDomain::unit(1)).unwrap()
}

fn model1_constraints(r: &Arc<QuadratureRule>, d: &Design) -> ConstraintSet {
    let m = ComputerModel::new(Arc::new(LinearModel), BoxDomain::interval(0.0, 10.0).unwrap()).unwrap();
    build_constraint_set(&m, &[3.56], r, d).unwrap()
}

fn draw_from_fn(r: &Arc<QuadratureRule>, d: &Design, q: usize, f: impl Fn(f64, usize) -> f64) -> BiasDraw {
    let grid = GridFunction::from_fn(r.clone(), q, |x| (0..q).map(|k| f(x[0], k)).collect()).unwrap();
    let dv = DMatrix::from_fn(d.len(), q, |i, k| f(d.points()[(i, 0)], k));
    BiasDraw::new(dv, grid, Provenance::Raw).unwrap()
}

fn random_draw(r: &Arc<QuadratureRule>, d: &Design, q: usize, rng: &mut ChaCha8Rng) -> BiasDraw {
    let c: Vec<f64> = (0..4 * q).map(|_| rng.sample(StandardNormal)).collect();
    draw_from_fn(r, d, q, |x, k| c[4 * k] + c[4 * k + 1] * x + c[4 * k + 2] * (3.0 * x).sin() + c[4 * k + 3] * x * x)
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &l * l.transpose() + DMatrix::identity(n, n) * 0.5
}

#[test]
fn feasible_draw_is_fixed() {
    let r = rule(32);
    let d = design(12);
    let cs = model1_constraints(&r, &d);
    let b = draw_from_fn(&r, &d, 1, |x, _| 1.0 - 1.5 * x);
    let (bs, rep) = functional_project(&b, &cs).unwrap();
    assert!(rep.lambda[0].abs() <= 1e-12);
    assert!((bs.grid().values() - b.grid().values()).amax() <= 1e-12);
    assert!((bs.design_values() - b.design_values()).amax() <= 1e-12);
    assert_eq!(bs.provenance(), Provenance::Projected);
}

#[test]
fn constant_bias_under_linear_gradient() {
    let r = rule(32);
    let d = design(12);
    let cs = model1_constraints(&r, &d);
    let b = draw_from_fn(&r, &d, 1, |_, _| 1.0);
    let (bs, rep) = functional_project(&b, &cs).unwrap();
    assert_abs_diff_eq!(rep.lambda[0], 1.5, epsilon = 1e-12);
    assert_abs_diff_eq!(cs.gram()[(0, 0)], 1.0 / 3.0, epsilon = 1e-12);
    for i in 0..r.len() {
        let x = r.nodes()[(i, 0)];
        assert_abs_diff_eq!(bs.grid().values()[(i, 0)], 1.0 - 1.5 * x, epsilon = 1e-12);
    }
    for i in 0..d.len() {
        let x = d.points()[(i, 0)];
        assert_abs_diff_eq!(bs.design_values()[(i, 0)], 1.0 - 1.5 * x, epsilon = 1e-12);
    }
    assert!(rep.constraint_residuals[0].abs() <= 1e-14);
}

#[test]
fn only_constrained_outcome_is_centered() {
    let r = rule(16);
    let d = design(5);
    let g = GridFunction::from_fn(r.clone(), 2, |_| vec![1.0, 0.0]).unwrap();
    let dg = DMatrix::from_fn(5, 2, |_, k| if k == 0 { 1.0 } else { 0.0 });
    let cs = ConstraintSet::from_parts(vec![0.0], vec![g], vec![dg]).unwrap();
    let b = draw_from_fn(&r, &d, 2, |_, k| [2.5, -0.7][k]);
    let (bs, _) = functional_project(&b, &cs).unwrap();
    assert!(bs.grid().values().column(0).amax() <= 1e-12);
    assert!(bs.design_values().column(0).amax() <= 1e-12);
    assert!(bs.grid().values().column(1).iter().all(|v| (v + 0.7).abs() <= 1e-12));
}

#[test]
fn mismatched_rule_is_rejected() {
    let d = design(5);
    let cs = model1_constraints(&rule(16), &d);
    let b = draw_from_fn(&rule(8), &d, 1, |_, _| 1.0);
    assert!(functional_project(&b, &cs).is_err());
}

#[test]
fn singular_gram_uses_pseudo_inverse() {
    let r = rule(16);
    let d = design(5);
    let g = GridFunction::from_fn(r.clone(), 1, |x| vec![x[0]]).unwrap();
    let dg = DMatrix::from_fn(5, 1, |i, _| d.points()[(i, 0)]);
    let cs = ConstraintSet::from_parts(vec![0.0, 0.0], vec![g.clone(), g], vec![dg.clone(), dg]).unwrap();
    let b = draw_from_fn(&r, &d, 1, |_, _| 1.0);
    let (bs, rep) = functional_project(&b, &cs).unwrap();
    assert!(rep.rank_deficient);
    for i in 0..r.len() {
        assert_abs_diff_eq!(bs.grid().values()[(i, 0)], 1.0 - 1.5 * r.nodes()[(i, 0)], epsilon = 1e-9);
    }
}

#[test]
fn idempotent_optimal_and_linear() {
    let r = rule(32);
    let d = design(10);
    let cs = model1_constraints(&r, &d);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let b1 = random_draw(&r, &d, 1, &mut rng);
        let b2 = random_draw(&r, &d, 1, &mut rng);
        let (p1, rep1) = functional_project(&b1, &cs).unwrap();
        let (_, again) = functional_project(&p1, &cs).unwrap();
        assert!(again.lambda[0].abs() <= 1e-10);
        assert!(relative_constraint_residual(&p1, &cs).unwrap() <= 1e-12);

        // b − b* = λ g
        let diff = b1.grid().values() - p1.grid().values();
        let recon = cs.gradients()[0].values() * rep1.lambda[0];
        assert!((diff - recon).amax() <= 1e-10);

        let (p2, _) = functional_project(&b2, &cs).unwrap();
        let (alpha, beta) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let combo = BiasDraw::new(
            b1.design_values() * alpha + b2.design_values() * beta,
            b1.grid().combine(alpha, b2.grid(), beta).unwrap(),
            Provenance::Raw,
        )
        .unwrap();
        let (pc, _) = functional_project(&combo, &cs).unwrap();
        let expect = p1.grid().values() * alpha + p2.grid().values() * beta;
        assert!((pc.grid().values() - expect).amax() <= 1e-10);
        let expect_d = p1.design_values() * alpha + p2.design_values() * beta;
        assert!((pc.design_values() - expect_d).amax() <= 1e-10);
    }
}

#[test]
fn projection_is_nearest_feasible_point() {
    let r = rule(32);
    let d = design(10);
    let cs = model1_constraints(&r, &d);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = random_draw(&r, &d, 1, &mut rng);
    let (bs, _) = functional_project(&b, &cs).unwrap();
    let best = b.grid().combine(1.0, bs.grid(), -1.0).unwrap().norm();
    for _ in 0..100 {
        let pert = random_draw(&r, &d, 1, &mut rng);
        let (pert, _) = functional_project(&pert, &cs).unwrap();
        let h = bs.grid().combine(1.0, pert.grid(), rng.random_range(-1.0..1.0)).unwrap();
        assert!(inner_product(&h, &cs.gradients()[0]).unwrap().abs() <= 1e-10 * h.norm().max(1.0));
        let dist = b.grid().combine(1.0, &h, -1.0).unwrap().norm();
        assert!(best <= dist + 1e-12);
    }
}

#[test]
fn finite_dim_examples() {
    let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
    let (m, c) = finite_dim_project_gaussian(&DVector::zeros(2), &DMatrix::identity(2, 2), &a).unwrap();
    assert!(m.amax() <= 1e-15);
    assert!((c - DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]))).amax() <= 1e-15);

    let s = std::f64::consts::FRAC_1_SQRT_2;
    let a = DMatrix::from_column_slice(2, 1, &[s, s]);
    let mu = DVector::from_vec(vec![1.0, 1.0]);
    let (m, c) = finite_dim_project_gaussian(&mu, &DMatrix::identity(2, 2), &a).unwrap();
    assert!(m.amax() <= 1e-14);
    let expect = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
    assert!((c - expect).amax() <= 1e-14);
}

#[test]
fn finite_dim_example_against_rejection_sampling() {
    // condition N((1,1), I) on |x₁ + x₂|/√2 ≤ 1e-3 by brute force
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut n, mut s1, mut s11, mut s12) = (0usize, 0.0, 0.0, 0.0);
    while n < 2000 {
        let x1: f64 = 1.0 + rng.sample::<f64, _>(StandardNormal);
        let x2: f64 = 1.0 + rng.sample::<f64, _>(StandardNormal);
        if ((x1 + x2) * std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-3 {
            n += 1;
            s1 += x1;
            s11 += x1 * x1;
            s12 += x1 * x2;
        }
    }
    let nf = n as f64;
    assert!((s1 / nf).abs() <= 4.0 * (0.5 / nf).sqrt());
    assert!((s11 / nf - 0.5).abs() <= 0.06);
    assert!((s12 / nf + 0.5).abs() <= 0.06);
}

#[test]
fn finite_dim_covariance_annihilates_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let n = 8;
        let cov = random_spd(n, &mut rng);
        let a = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mu = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (m, c) = finite_dim_project_gaussian(&mu, &cov, &a).unwrap();
        assert!((a.transpose() * &c * &a).norm() <= 1e-10 * cov.norm());
        assert!((a.transpose() * m).amax() <= 1e-10 * mu.norm() * a.norm());
        assert!(c.clone().symmetric_eigenvalues().min() >= -1e-10 * cov.norm());
    }
}

#[test]
fn shape_mismatch_is_a_contract_error() {
    let a = DMatrix::zeros(3, 1);
    let r = finite_dim_project_gaussian(&DVector::zeros(2), &DMatrix::identity(2, 2), &a);
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn whitened_projection_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 6;
    let a = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    // identity covariance: ordinary orthogonal projection
    let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let ortho = &x - &a * (a.tr_mul(&a)).try_inverse().unwrap() * a.tr_mul(&x);
    let got = whitened_project_sample(&x, &DMatrix::identity(n, n), &a).unwrap();
    assert!((got - &ortho).amax() <= 1e-12);

    for _ in 0..50 {
        let cov = random_spd(n, &mut rng);
        let x = DVector::from_fn(n, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
        let y = whitened_project_sample(&x, &cov, &a).unwrap();
        assert!(a.tr_mul(&y).amax() <= 1e-10 * a.norm() * x.norm());
        let yy = whitened_project_sample(&y, &cov, &a).unwrap();
        assert!((&yy - &y).amax() <= 1e-10 * x.norm());
        let (z, rep) = WhitenedProjector::new(&cov, &a).unwrap().apply(&x);
        assert!((z - &y).amax() <= 1e-9 * x.norm());
        assert!(rep.constraint_residuals.iter().all(|v| v.abs() <= 1e-10 * a.norm() * x.norm()));
    }
    // feasible input unchanged
    let cov = random_spd(n, &mut rng);
    let y = whitened_project_sample(&ortho, &cov, &a).unwrap();
    assert!((y - &ortho).amax() <= 1e-12 * ortho.norm().max(1.0) * 10.0);
}

#[test]
fn whitened_samples_follow_conditional_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (n, p, draws) = (4, 2, 100_000);
    let cov = random_spd(n, &mut rng);
    let a = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mu = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (m_star, c_star) = finite_dim_project_gaussian(&mu, &cov, &a).unwrap();
    let factor = crate::numerics::CovarianceFactor::new(&cov, Default::default()).unwrap();
    let projector = WhitenedProjector::new(&cov, &a).unwrap();
    let mut samples = DMatrix::zeros(n, draws);
    for s in 0..draws {
        let x = factor.sample(&mu, &mut rng);
        let y = if s % 100 == 0 {
            whitened_project_sample(&x, &cov, &a).unwrap()
        } else {
            projector.apply(&x).0
        };
        samples.set_column(s, &y);
    }
    let mean = samples.column_mean();
    let nf = draws as f64;
    for i in 0..n {
        let se = (c_star[(i, i)] / nf).sqrt();
        assert!((mean[i] - m_star[i]).abs() <= 3.0 * se + 1e-12, "mean {i}");
    }
    for i in 0..n {
        for j in 0..=i {
            let prods: Vec<f64> = (0..draws)
                .map(|s| (samples[(i, s)] - m_star[i]) * (samples[(j, s)] - m_star[j]))
                .collect();
            let avg = prods.iter().sum::<f64>() / nf;
            let var = prods.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (nf - 1.0);
            let se = (var / nf).sqrt();
            assert!((avg - c_star[(i, j)]).abs() <= 3.0 * se + 1e-12, "cov ({i},{j})");
        }
    }
}

#[test]
fn constraint_matrix_matches_functional_constraint() {
    let r = rule(16);
    let d = design(7);
    let cs = model1_constraints(&r, &d);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = random_draw(&r, &d, 1, &mut rng);
    let a = constraint_matrix(&cs, ConstraintVariant::Quadrature);
    let via_a = a.tr_mul(&b.to_stacked());
    let direct = constraint_values(&b, &cs).unwrap();
    assert!((via_a - direct).amax() <= 1e-12);
    let ad = constraint_matrix(&cs, ConstraintVariant::DesignPoints);
    let expect: f64 = (0..7).map(|i| b.design_values()[(i, 0)] * d.points()[(i, 0)]).sum();
    assert_abs_diff_eq!(ad.tr_mul(&b.to_stacked())[0], expect, epsilon = 1e-12);
}

fn model1_residuals(d: &Design, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(d.len(), 1, |i, _| {
        let x = d.points()[(i, 0)];
        linear_model_truth(&[x])[0] - 3.56 * x + 0.2 * rng.sample::<f64, _>(StandardNormal)
    })
}

#[test]
fn moment_projection_enforces_constraint() {
    let r = rule(16);
    let d = design(20);
    let cs = model1_constraints(&r, &d);
    let noise = NoiseModel::isotropic(1, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let res = model1_residuals(&d, &mut rng);
    let sampler = BasisExpansionPrior::new(8, 1.0).unwrap().prepare(&d, &r, &noise).unwrap();
    for _ in 0..3 {
        let (b, rep) =
            moment_project_nongaussian(sampler.as_ref(), &res, &cs, 2000, ConstraintVariant::Quadrature, &mut rng)
                .unwrap();
        assert_eq!(b.provenance(), Provenance::Projected);
        assert!(relative_constraint_residual(&b, &cs).unwrap() <= 1e-8);
        assert!(!rep.rank_deficient);
    }
}

#[test]
fn moment_projection_of_orthogonal_prior_is_noop() {
    let r = rule(16);
    let d = design(20);
    let cs = model1_constraints(&r, &d);
    let noise = NoiseModel::isotropic(1, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let res = model1_residuals(&d, &mut rng);
    let sampler = BasisExpansionPrior::new(8, 1.0)
        .unwrap()
        .orthogonalized(&cs)
        .prepare(&d, &r, &noise)
        .unwrap();
    // same stream for the fresh draw: compare against the raw draw it projects
    let mut rng_a = ChaCha8Rng::seed_from_u64(7);
    let (b, _) =
        moment_project_nongaussian(sampler.as_ref(), &res, &cs, 400, ConstraintVariant::Quadrature, &mut rng_a)
            .unwrap();
    let mut rng_b = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..400 {
        sampler.draw(&res, &mut rng_b).unwrap();
    }
    let raw = sampler.draw(&res, &mut rng_b).unwrap();
    assert!((b.to_stacked() - raw.to_stacked()).amax() <= 1e-6);
}

#[test]
fn moment_projection_needs_enough_samples() {
    let r = rule(16);
    let d = design(20);
    let cs = model1_constraints(&r, &d);
    let noise = NoiseModel::isotropic(1, 0.2).unwrap();
    let sampler = BasisExpansionPrior::new(8, 1.0).unwrap().prepare(&d, &r, &noise).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let res = DMatrix::zeros(20, 1);
    let out = moment_project_nongaussian(sampler.as_ref(), &res, &cs, 100, ConstraintVariant::Quadrature, &mut rng);
    assert!(matches!(out, Err(Error::Config(_))));
}
