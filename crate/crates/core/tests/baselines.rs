mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rtedmd_core::baselines::{edmd_klm, fit_koopman, gedmd_fdm, generator_from_log, KoopmanMatrix};
use rtedmd_core::spectral::eigendecompose;
use rtedmd_core::{
    simulate_paths, Dictionary, Domain, Error, SdeModel, SimConfig, TrajectoryEnsemble,
};

const MU: f64 = -0.5;

/// Noise-free OU paths `x e^{μt}` sampled exactly at `rate`.
fn exact_decay(rate: f64, horizon: f64) -> TrajectoryEnsemble {
    let starts = common::linspace(-1.0, 1.0, 25);
    let cfg = SimConfig::new(horizon, rate, 0);
    let snaps = cfg.intervals().unwrap() + 1;
    let mut states = Vec::new();
    for &x in &starts {
        for k in 0..snaps {
            states.push(x * (MU * cfg.time(k)).exp());
        }
    }
    let n = starts.len();
    TrajectoryEnsemble::from_parts(
        starts.into_iter().map(|x| vec![x]).collect(),
        1,
        snaps,
        states,
        vec![None; n],
        cfg,
    )
    .unwrap()
}

fn sorted_real(l: &rtedmd_core::GeneratorMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = eigendecompose(l)
        .unwrap()
        .eigenvalues
        .iter()
        .map(|z| z.re)
        .collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v
}

#[test]
fn fdm_matches_koopman_identity_on_shared_data() {
    let model = SdeModel::ornstein_uhlenbeck(MU, 0.02);
    let starts: Vec<Vec<f64>> = common::linspace(-1.0, 1.0, 40)
        .into_iter()
        .map(|x| vec![x])
        .collect();
    let ens = simulate_paths(
        &model,
        &Domain::ball(2.0),
        &starts,
        4,
        &SimConfig::new(1.0, 100.0, 8),
    )
    .unwrap();
    let dict = Dictionary::monomials_up_to_degree(1, 4, false);
    for lag in [1, 3] {
        let k = fit_koopman(&ens, &dict, lag).unwrap();
        let g = gedmd_fdm(&ens, &dict, lag).unwrap();
        let n = dict.len();
        let expected = (k.entries() - DMatrix::identity(n, n)) / k.lag();
        let err = (g.entries() - &expected).amax();
        assert!(err <= 1e-12 * expected.amax().max(1.0), "lag {lag}: {err}");
    }
}

#[test]
fn edmd_is_exact_on_noise_free_decay() {
    let dict = Dictionary::monomials_up_to_degree(1, 5, false);
    let l = edmd_klm(&exact_decay(100.0, 1.0), &dict, 1).unwrap();
    let eig = sorted_real(&l.generator);
    for (n, v) in eig.iter().enumerate() {
        assert!((v - MU * (n + 1) as f64).abs() < 1e-8, "{eig:?}");
    }
}

#[test]
fn fdm_bias_is_first_order_in_lag() {
    let dict = Dictionary::monomials_up_to_degree(1, 5, false);
    let bias = |rate: f64| {
        let g = gedmd_fdm(&exact_decay(rate, 1.0), &dict, 1).unwrap();
        sorted_real(&g)
            .iter()
            .enumerate()
            .map(|(n, v)| (v - MU * (n + 1) as f64).abs())
            .fold(0.0, f64::max)
    };
    let ratio = bias(100.0) / bias(200.0);
    assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn negative_real_eigenvalue_is_a_branch_error() {
    let dict = Dictionary::monomials_up_to_degree(1, 2, false);
    let k = KoopmanMatrix::new(
        DMatrix::from_row_slice(2, 2, &[-0.1, 0.0, 0.0, 0.5]),
        0.1,
        dict,
    )
    .unwrap();
    assert!(matches!(
        generator_from_log(&k),
        Err(Error::LogBranch { .. })
    ));
}

fn stable_generator(eigs: &[f64], mix: &[f64]) -> DMatrix<f64> {
    let n = eigs.len();
    let v = DMatrix::identity(n, n)
        + DMatrix::from_fn(n, n, |i, j| mix[(i * n + j) % mix.len()] * 0.15);
    // strictly diagonally dominant, hence invertible
    let vi = v.clone().try_inverse().unwrap();
    &v * DMatrix::from_diagonal(&DVector::from_column_slice(eigs)) * vi
}

fn expm_via_eig(eigs: &[f64], mix: &[f64], t: f64) -> DMatrix<f64> {
    let e: Vec<f64> = eigs.iter().map(|l| (l * t).exp()).collect();
    stable_generator(&e, mix)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_inverts_exponential(
        mut eigs in proptest::collection::vec(-1.5f64..-0.05, 4),
        mix in proptest::collection::vec(-1.0f64..1.0, 16),
        t in 0.05f64..0.6,
    ) {
        // keep eigenvalues separated so the eigenbasis is well conditioned
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 1..eigs.len() {
            if eigs[i] - eigs[i - 1] < 0.05 {
                eigs[i] = eigs[i - 1] + 0.05;
            }
        }
        let l0 = stable_generator(&eigs, &mix);
        let dict = Dictionary::monomials_up_to_degree(1, 4, false);
        let k = KoopmanMatrix::new(expm_via_eig(&eigs, &mix, t), t, dict).unwrap();
        let l = generator_from_log(&k).unwrap();
        let err = (l.generator.entries() - &l0).amax();
        prop_assert!(err < 1e-8, "err {}", err);
        prop_assert!(!l.flagged());
    }
}
