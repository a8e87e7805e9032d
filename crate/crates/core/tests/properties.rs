//! Formula-level invariants checked over randomized instances: the Euler
//! identity, homogeneity of values and gradients, the α–β sandwich, dual
//! weight normalization, super-additivity/concavity of the loss transforms,
//! and basic symmetries of the verification oracles.

use proptest::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use homoflow_core::losses::{self, LossKind};
use homoflow_core::models::{Example, NtkBase, PredictorSpec};
use homoflow_core::numeric;
use homoflow_core::params::{decompose, partition_shares, ParamVec, Segment};
use homoflow_core::verify::{rank_one_residual, Mat};

fn random_spec(rng: &mut ChaCha8Rng) -> PredictorSpec {
    match rng.random_range(0..4) {
        0 => PredictorSpec::SquaredRelu {
            input_dim: rng.random_range(2..5),
            width: rng.random_range(1..6),
        },
        1 => {
            let depth = rng.random_range(1..4);
            let mut dims = vec![rng.random_range(2..4)];
            for _ in 1..depth {
                dims.push(rng.random_range(2..4));
            }
            dims.push(1);
            PredictorSpec::DeepLinear { dims }
        }
        2 => PredictorSpec::ReluMlp {
            dims: vec![rng.random_range(2..4), 4, 1],
            pools: vec![if rng.random::<bool>() { 2 } else { 1 }],
        },
        _ => {
            let d = rng.random_range(2..4);
            let m = rng.random_range(1..4);
            let base = NtkBase {
                input_dim: d,
                weights: (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                signs: (0..m)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect(),
            };
            PredictorSpec::NtkFrozen { base }
        }
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (PredictorSpec, ParamVec, Example) {
    let spec = random_spec(rng);
    let w = spec
        .params_from(
            (0..spec.param_len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
    let x: Vec<f64> = (0..spec.input_dim())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
    (spec, w, Example::new(x, y).unwrap())
}

#[test]
fn euler_identity_over_1000_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0;
    while checked < 1000 {
        let (spec, w, ex) = random_instance(&mut rng);
        let p = spec.margin(&w, &ex).unwrap();
        let g = spec.grad_margin(&w, &ex).unwrap();
        let lhs = numeric::dot(w.data(), &g);
        let rhs = spec.degree() * p;
        let denom = rhs.abs().max(1e-12);
        assert!(
            (lhs - rhs).abs() / denom <= 1e-9,
            "{spec:?}: ⟨W, ∇p⟩ = {lhs} vs L·p = {rhs}"
        );
        checked += 1;
    }
}

#[test]
fn forward_homogeneity_over_1000_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..1000 {
        let (spec, w, ex) = random_instance(&mut rng);
        let base = spec.forward(&w, &ex.x).unwrap();
        for c in [0.5, 2.0, 10.0] {
            let scaled = spec.forward(&w.scaled(c).unwrap(), &ex.x).unwrap();
            let expect = c.powf(spec.degree()) * base;
            assert!(
                (scaled - expect).abs() <= 1e-10 * expect.abs().max(1e-12),
                "{spec:?} at c={c}: {scaled} vs {expect}"
            );
        }
    }
}

#[test]
fn gradient_homogeneity_at_kink_free_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut checked = 0;
    while checked < 1000 {
        let (spec, w, ex) = random_instance(&mut rng);
        if spec.min_kink_distance(&w, &ex.x).unwrap() < 1e-3 {
            continue;
        }
        let g = spec.grad_margin(&w, &ex).unwrap();
        for c in [0.5, 2.0, 10.0] {
            let gc = spec.grad_margin(&w.scaled(c).unwrap(), &ex).unwrap();
            let factor = c.powf(spec.degree() - 1.0);
            let diff: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - factor * b).collect();
            let denom = (factor * numeric::norm(&g)).max(1e-12);
            assert!(
                numeric::norm(&diff) / denom <= 1e-10,
                "{spec:?} at c={c}: gradient homogeneity residual {}",
                numeric::norm(&diff) / denom
            );
        }
        checked += 1;
    }
}

#[test]
fn alpha_beta_sandwich_over_1000_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.random_range(1..12usize);
        let kind = if rng.random::<bool>() {
            LossKind::Exp
        } else {
            LossKind::Logistic
        };
        let margins: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..8.0)).collect();
        let loss_log = losses::log_total_loss(kind, &margins);
        if loss_log >= kind.ell_at_zero().ln() {
            continue;
        }
        let alpha = losses::smoothed_margin(kind, &margins);
        let beta = losses::beta(kind, &margins);
        let min_p = margins.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(alpha > 0.0, "α must be positive when L < ℓ(0)");
        assert!(alpha <= min_p + 1e-12);
        assert!(beta >= alpha - 1e-9, "β = {beta} < α = {alpha}");
        assert!(beta <= alpha + 2.0 * (n as f64).ln() + 1.0 + 1e-9);
        if kind == LossKind::Exp {
            assert!(beta <= alpha + (n as f64).ln() + 1e-9);
        }
        checked += 1;
    }
}

#[test]
fn alpha_equals_min_only_for_single_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..200 {
        let n = rng.random_range(2..8usize);
        let kind = if rng.random::<bool>() {
            LossKind::Exp
        } else {
            LossKind::Logistic
        };
        let margins: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..4.0)).collect();
        let alpha = losses::smoothed_margin(kind, &margins);
        let min_p = margins.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(alpha < min_p - 1e-12);
        let single = losses::smoothed_margin(kind, &margins[..1]);
        assert!((single - margins[0]).abs() <= 1e-12 * margins[0].abs().max(1.0));
    }
}

#[test]
fn pi_concavity_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for _ in 0..1000 {
        let n = rng.random_range(1..8usize);
        let kind = if rng.random::<bool>() {
            LossKind::Exp
        } else {
            LossKind::Logistic
        };
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..5.0)).collect();
        let v2: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..5.0)).collect();
        let t: f64 = rng.random_range(0.0..1.0);
        let mix: Vec<f64> = v
            .iter()
            .zip(&v2)
            .map(|(a, b)| t * a + (1.0 - t) * b)
            .collect();
        let lhs = losses::pi(kind, &mix);
        let rhs = t * losses::pi(kind, &v) + (1.0 - t) * losses::pi(kind, &v2);
        assert!(lhs >= rhs - 1e-9, "{kind:?}: π not concave: {lhs} < {rhs}");
    }
}

#[test]
fn sigma_superadditive_on_grid() {
    for kind in [LossKind::Exp, LossKind::Logistic] {
        let top = kind.ell_at_zero();
        let steps = 160;
        for i in 1..steps {
            for j in 1..steps {
                let z1 = top * i as f64 / steps as f64;
                let z2 = top * j as f64 / steps as f64;
                if z1 + z2 >= top {
                    continue;
                }
                let lhs = losses::sigma(kind, z1 + z2).unwrap();
                let rhs = losses::sigma(kind, z1).unwrap() + losses::sigma(kind, z2).unwrap();
                assert!(
                    lhs >= rhs - 1e-12,
                    "{kind:?}: σ({}) = {lhs} < {rhs}",
                    z1 + z2
                );
            }
        }
    }
}

#[test]
fn dual_weight_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut logistic_checked = 0;
    for _ in 0..2000 {
        let n = rng.random_range(1..20usize);
        let margins: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..50.0)).collect();
        // Exp duals form a probability vector unconditionally.
        let q = losses::dual_weights(LossKind::Exp, &margins);
        let total = numeric::sum(q.iter().copied());
        assert!((total - 1.0).abs() <= 1e-12);
        assert!(q.iter().all(|&x| x >= 0.0));

        // The logistic ℓ1 bound holds under the initial-risk condition.
        if losses::log_total_loss(LossKind::Logistic, &margins)
            < LossKind::Logistic.ell_at_zero().ln()
        {
            let q = losses::dual_weights(LossKind::Logistic, &margins);
            let total = numeric::sum(q.iter().copied());
            assert!(total > 0.0 && total <= 2.0 + 1e-9);
            logistic_checked += 1;
        }
    }
    assert!(
        logistic_checked >= 300,
        "only {logistic_checked} logistic draws passed the risk filter"
    );
}

#[test]
fn grad_alpha_consistency_between_dual_and_chain_forms() {
    // ∂̄α = ∂̄L/ℓ′(α) must match Σ q_i ∇p_i.
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for _ in 0..200 {
        let spec = PredictorSpec::SquaredRelu {
            input_dim: 3,
            width: 4,
        };
        let w = spec
            .params_from(
                (0..spec.param_len())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap();
        let n = rng.random_range(1..6usize);
        let dataset: Vec<Example> = (0..n)
            .map(|_| {
                Example::new(
                    (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    if rng.random::<bool>() { 1.0 } else { -1.0 },
                )
                .unwrap()
            })
            .collect();
        let kind = if rng.random::<bool>() {
            LossKind::Exp
        } else {
            LossKind::Logistic
        };
        let margins: Vec<f64> = dataset
            .iter()
            .map(|ex| spec.margin(&w, ex).unwrap())
            .collect();
        let grads: Vec<Vec<f64>> = dataset
            .iter()
            .map(|ex| spec.grad_margin(&w, ex).unwrap())
            .collect();
        let alpha = losses::smoothed_margin(kind, &margins);
        let q = losses::dual_weights(kind, &margins);
        let mut via_duals = vec![0.0; w.len()];
        for (qi, g) in q.iter().zip(&grads) {
            for (acc, gi) in via_duals.iter_mut().zip(g) {
                *acc += qi * gi;
            }
        }
        let mut grad_l = vec![0.0; w.len()];
        for (p, g) in margins.iter().zip(&grads) {
            let c = kind.ell_prime(*p);
            for (acc, gi) in grad_l.iter_mut().zip(g) {
                *acc += c * gi;
            }
        }
        let chain: Vec<f64> = grad_l.iter().map(|gi| gi / kind.ell_prime(alpha)).collect();
        let diff: Vec<f64> = via_duals.iter().zip(&chain).map(|(a, b)| a - b).collect();
        let denom = numeric::norm(&chain).max(1e-12);
        assert!(numeric::norm(&diff) / denom <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn decompose_reconstructs_and_is_orthogonal(
        g in prop::collection::vec(-100.0..100.0f64, 2..24),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_data: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-10.0..10.0)).collect();
        prop_assume!(numeric::norm(&w_data) > 1e-6);
        let w = ParamVec::whole(w_data).unwrap();
        let rs = decompose(&g, &w).unwrap();
        let rebuilt: Vec<f64> = rs.radial.iter().zip(&rs.spherical).map(|(a, b)| a + b).collect();
        let diff: Vec<f64> = rebuilt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ng = numeric::norm(&g).max(1e-300);
        prop_assert!(numeric::norm(&diff) <= 1e-12 * ng);

        let (nr, ns) = (rs.radial_norm(), rs.spherical_norm());
        let ip = numeric::dot(&rs.radial, &rs.spherical).abs();
        prop_assert!(nr == 0.0 || ns == 0.0 || ip <= 1e-12 * nr * ns);
        // Pythagoras: ‖g‖² = ‖radial‖² + ‖spherical‖².
        prop_assert!(((nr * nr + ns * ns) - ng * ng).abs() <= 1e-10 * ng * ng);
    }

    #[test]
    fn shares_sum_to_one_for_degree_two(
        sizes in prop::collection::vec(1usize..5, 1..6),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: usize = sizes.iter().sum();
        let data: Vec<f64> = (0..total).map(|_| rng.random_range(-5.0..5.0)).collect();
        prop_assume!(numeric::norm(&data) > 1e-6);
        let mut segs = Vec::new();
        let mut off = 0;
        for (i, s) in sizes.iter().enumerate() {
            segs.push(Segment::new(format!("s{i}"), off, *s));
            off += s;
        }
        let w = ParamVec::new(data, segs).unwrap();
        let shares = partition_shares(&w, 2.0).unwrap();
        let total: f64 = numeric::sum(shares.iter().copied());
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(shares.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn rank_one_residual_is_permutation_and_transpose_invariant(
        rows in 2usize..5,
        cols in 2usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        prop_assume!(numeric::norm(&data) > 1e-6);
        let m = Mat::new(rows, cols, data);
        let base = rank_one_residual(&m).unwrap();

        let mut perm: Vec<usize> = (0..rows).collect();
        perm.shuffle(&mut rng);
        let permuted = Mat::new(
            rows,
            cols,
            perm.iter().flat_map(|&r| m.row(r).to_vec()).collect(),
        );
        let p = rank_one_residual(&permuted).unwrap();
        prop_assert!((base - p).abs() <= 1e-8 * base.max(1e-8));

        let t = rank_one_residual(&m.transpose()).unwrap();
        prop_assert!((base - t).abs() <= 1e-8 * base.max(1e-8));
    }
}
