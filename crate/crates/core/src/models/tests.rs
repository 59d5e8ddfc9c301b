use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::numerics::{ParamStore, Tensor};

fn random_items(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
}

fn with_params(cfg: AggregatorConfig, d: usize, set: &[(&str, Tensor<f64>)]) -> Model<f64> {
    let mut params = Model::<f64>::init(cfg.clone(), d, 0).unwrap().params().clone();
    for (name, t) in set {
        params.insert(*name, t.clone());
    }
    Model::from_parts(cfg, d, params, None).unwrap()
}

fn eye(n: usize) -> Tensor<f64> {
    let mut v = vec![0.0; n * n];
    (0..n).for_each(|i| v[i * n + i] = 1.0);
    Tensor::matrix(n, n, v).unwrap()
}

fn sde_identity(ell: usize, r: RMode) -> AggregatorConfig {
    AggregatorConfig {
        mechanism: Mechanism::Sde,
        ell,
        h: 1,
        comparison: Comparison::Diff,
        mu: Mu::Identity,
        w_mode: WMode::Ones,
        r_mode: r,
        hidden: 16,
        per_dim_c: false,
        preset: None,
    }
}

#[test]
fn base_scores_identity_and_zero() {
    let m = with_params(sde_identity(2, RMode::Zero), 2, &[("theta", eye(2))]);
    let c = m.components(&[vec![1.0, 2.0]]).unwrap();
    assert_eq!(c.base[0].data(), &[1.0, 2.0]);
    assert_eq!(c.base[0].shape(), &[2, 1]);
    let m = with_params(sde_identity(2, RMode::Zero), 2, &[("theta", Tensor::zeros(&[2, 2]))]);
    assert_eq!(m.components(&[vec![1.0, 2.0]]).unwrap().base[0].data(), &[0.0, 0.0]);
}

#[test]
fn base_scores_match_dot_products() {
    let m = Model::<f64>::init(preset("sda_default").unwrap(), 5, 3).unwrap();
    let theta = m.params().get("theta").unwrap();
    let x = random_items(1, 5, 8).remove(0);
    let c = m.components(std::slice::from_ref(&x)).unwrap();
    for j in 0..theta.cols() {
        let oracle: f64 = (0..5).map(|i| x[i] * theta.data()[i * theta.cols() + j]).sum();
        assert!((c.base[0].data()[j] - oracle).abs() < 1e-12);
    }
}

#[test]
fn set_weight_modes() {
    let m = with_params(sde_identity(3, RMode::Zero), 3, &[]);
    assert_eq!(m.components(&random_items(4, 3, 1)).unwrap().weights, vec![1.0; 3]);

    let mut cfg = preset("sde").unwrap();
    cfg.ell = 3;
    let m = Model::<f64>::init(cfg, 2, 5).unwrap();
    let a = m.components(&random_items(3, 2, 1)).unwrap().weights;
    let b = m.components(&random_items(5, 2, 2)).unwrap().weights;
    assert_eq!(a, b);

    let m = Model::<f64>::init(preset("sdw").unwrap(), 4, 5).unwrap();
    let items = random_items(6, 4, 9);
    let mut rev = items.clone();
    rev.reverse();
    let (a, b) = (m.components(&items).unwrap().weights, m.components(&rev).unwrap().weights);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn reference_modes() {
    let items = vec![vec![1.0, 4.0], vec![3.0, 2.0]];
    let r = |mode| with_params(sde_identity(2, mode), 2, &[("theta", eye(2))]).components(&items).unwrap().reference;
    assert_eq!(r(RMode::Min).data(), &[1.0, 2.0]);
    assert_eq!(r(RMode::MaxPlusMinHalf).data(), &[2.0, 3.0]);
    assert_eq!(r(RMode::Zero).data(), &[0.0, 0.0]);
}

/// SDE with `w = 1`, `Θ = I` and a reference network whose readout is the
/// constant `bias`.
fn constant_reference(h: usize, comparison: Comparison, mu: Mu, bias: Vec<f64>) -> Model<f64> {
    let cfg = AggregatorConfig { h, comparison, mu, r_mode: RMode::Setnet, ..sde_identity(1, RMode::Setnet) };
    with_params(
        cfg,
        h,
        &[("theta", eye(h)), ("r.out.weight", Tensor::zeros(&[16, h])), ("r.out.bias", Tensor::vector(bias))],
    )
}

#[test]
fn embed_examples() {
    let m = constant_reference(1, Comparison::Diff, Mu::Identity, vec![1.0]);
    assert_eq!(m.components(&[vec![3.0]]).unwrap().embedding, vec![vec![2.0]]);

    let m = constant_reference(2, Comparison::Inner, Mu::Identity, vec![3.0, 4.0]);
    assert_eq!(m.components(&[vec![1.0, 2.0]]).unwrap().embedding, vec![vec![11.0]]);

    let m = constant_reference(1, Comparison::Diff, Mu::KinkedTanh, vec![1.0]);
    let phi = m.components(&[vec![0.0]]).unwrap().embedding[0][0];
    assert!((phi - (-1.523188)).abs() < 1e-6);
}

#[test]
fn mnl_scores_are_set_independent() {
    let m = Model::<f64>::init(preset("mnl").unwrap(), 3, 4).unwrap();
    let items = random_items(6, 3, 2);
    let full = m.scores(&items).unwrap();
    let sub = m.scores(&items[2..4]).unwrap();
    assert_eq!(sub, full[2..4].to_vec());
}

#[test]
fn sdw_with_free_vector_is_linear() {
    let cfg = AggregatorConfig { mechanism: Mechanism::Sdw, w_mode: WMode::FreeVector, ..sde_identity(3, RMode::Zero) };
    let v = vec![0.5, -2.0, 1.5];
    let m = with_params(cfg, 4, &[("w.vector", Tensor::vector(v.clone()))]);
    let theta = m.params().get("theta").unwrap().clone();
    let items = random_items(4, 4, 6);
    let scores = m.scores(&items).unwrap();
    for (x, s) in items.iter().zip(scores) {
        let oracle: f64 = (0..3).map(|j| v[j] * (0..4).map(|i| x[i] * theta.data()[i * 3 + j]).sum::<f64>()).sum();
        assert!((s - oracle).abs() < 1e-12);
    }
}

/// Plain-loop re-implementation of the SDA forward pass.
fn sda_oracle(p: &ParamStore<f64>, ell: usize, h: usize, items: &[Vec<f64>]) -> Vec<f64> {
    let mat = |name: &str| p.get(name).unwrap().clone();
    let affine = |x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>| -> Vec<f64> {
        let (rows, cols) = (w.rows(), w.cols());
        (0..cols).map(|j| b.data()[j] + (0..rows).map(|i| x[i] * w.data()[i * cols + j]).sum::<f64>()).collect()
    };
    let theta = mat("theta");
    let zero_bias = Tensor::zeros(&[theta.cols()]);
    let f: Vec<Vec<f64>> = items.iter().map(|x| affine(x, &theta, &zero_bias)).collect();
    let set_net = |prefix: &str| -> Vec<f64> {
        let mut pooled = vec![0.0; 16];
        for fx in &f {
            let h1: Vec<f64> = affine(fx, &mat(&format!("{prefix}.l1.weight")), &mat(&format!("{prefix}.l1.bias")))
                .into_iter()
                .map(f64::tanh)
                .collect();
            let h2: Vec<f64> = affine(&h1, &mat(&format!("{prefix}.l2.weight")), &mat(&format!("{prefix}.l2.bias")))
                .into_iter()
                .map(f64::tanh)
                .collect();
            for (a, b) in pooled.iter_mut().zip(h2) {
                *a += b / f.len() as f64;
            }
        }
        affine(&pooled, &mat(&format!("{prefix}.out.weight")), &mat(&format!("{prefix}.out.bias")))
    };
    let w = set_net("w");
    let r = set_net("r");
    let c = mat("mu.c").data()[0];
    f.iter()
        .map(|fx| {
            (0..ell)
                .map(|i| {
                    let z: f64 = (0..h).map(|k| fx[i * h + k] * r[i * h + k]).sum();
                    let mu = if z < 0.0 { c * z.tanh() } else { z.tanh() };
                    w[i] * mu
                })
                .sum()
        })
        .collect()
}

#[test]
fn sda_matches_independent_oracle() {
    let mut cfg = preset("sda_default").unwrap();
    cfg.ell = 6;
    cfg.h = 3;
    let m = Model::<f64>::init(cfg, 4, 17).unwrap();
    let items = random_items(7, 4, 3);
    let oracle = sda_oracle(m.params(), 6, 3, &items);
    for (a, b) in m.scores(&items).unwrap().iter().zip(oracle) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn predict_tie_rule() {
    assert_eq!(argmax_first(&[1.0, 3.0, 2.0]), 1);
    assert_eq!(argmax_first(&[2.0, 2.0]), 0);
    assert_eq!(argmax_first(&[-5.0]), 0);
}

#[test]
fn fig1b_witness_flips() {
    let w = fig1b_witness().unwrap();
    assert_eq!(w.full_choice, 1);
    assert_eq!(w.reduced_choice, 0);
}

#[test]
fn snapshot_round_trip_is_bit_exact() {
    let mut m = Model::<f64>::init(preset("sda_default").unwrap(), 3, 21).unwrap();
    m.set_transform(Some(crate::data::FeatureTransform {
        mean: vec![0.1, -0.3, 1.0 / 3.0],
        scale: vec![2.0, 0.7, 1.0],
    }));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    m.save(&path).unwrap();
    let back = Model::<f64>::load(&path).unwrap();
    assert_eq!(back, m);
    let items = random_items(8, 3, 4);
    let (a, b) = (m.scores(&items).unwrap(), back.scores(&items).unwrap());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn snapshot_rejects_unknown_version() {
    let m = Model::<f64>::init(preset("mnl").unwrap(), 2, 0).unwrap();
    let text = m.to_json().unwrap().replace("\"version\": 1", "\"version\": 7");
    assert!(matches!(Model::<f64>::from_json(&text), Err(Error::SnapshotVersion { found: 7, .. })));
}

#[test]
fn wrong_dimension_is_an_error() {
    let m = Model::<f64>::init(preset("mnl").unwrap(), 3, 0).unwrap();
    assert!(matches!(m.scores(&[vec![1.0, 2.0]]), Err(Error::Dimension(_))));
}

#[test]
fn duplicate_items_stay_finite_and_invariant() {
    let m = Model::<f64>::init(preset("sda_default").unwrap(), 3, 2).unwrap();
    let mut items = random_items(4, 3, 11);
    let pred = m.predict(&items).unwrap();
    let dup = (pred + 1) % items.len();
    items.push(items[dup].clone());
    let scores = m.scores(&items).unwrap();
    assert!(scores.iter().all(|s| s.is_finite()));
    let mut rev = items.clone();
    rev.reverse();
    let p = m.predict(&items).unwrap();
    let q = m.predict(&rev).unwrap();
    assert!((scores[p] - m.scores(&rev).unwrap()[q]).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn predictions_are_permutation_invariant(
        preset_idx in 0usize..PRESET_NAMES.len(),
        n in 1usize..8,
        seed in any::<u64>(),
        rot in 0usize..8,
    ) {
        let mut cfg = preset(PRESET_NAMES[preset_idx]).unwrap();
        cfg.ell = cfg.ell.min(4);
        let m = Model::<f64>::init(cfg, 3, seed).unwrap();
        let items = random_items(n, 3, seed ^ 0x5eed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(rot % n);
        perm.reverse();
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| items[i].clone()).collect();
        let a = m.scores(&items).unwrap();
        let b = m.scores(&permuted).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((a[i] - b[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn mnl_prediction_survives_subsetting(n in 2usize..7, seed in any::<u64>(), mask in any::<u64>()) {
        let m = Model::<f64>::init(preset("mnl").unwrap(), 3, seed).unwrap();
        let items = random_items(n, 3, seed.wrapping_add(1));
        let pred = m.predict(&items).unwrap();
        let keep: Vec<usize> = (0..n).filter(|&i| i == pred || mask >> i & 1 == 1).collect();
        let sub: Vec<Vec<f64>> = keep.iter().map(|&i| items[i].clone()).collect();
        prop_assert_eq!(keep[m.predict(&sub).unwrap()], pred);
    }
}
