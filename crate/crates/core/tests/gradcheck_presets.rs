use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setchoice::models::{preset, Batch, Model, PRESET_NAMES};
use setchoice::numerics::grad_check;
use setchoice::training::batch_loss;

fn batch(d: usize, seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets: Vec<Vec<Vec<f64>>> = [3usize, 5, 2, 4]
        .iter()
        .map(|&n| (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect())
        .collect();
    let refs: Vec<&[Vec<f64>]> = sets.iter().map(Vec::as_slice).collect();
    let mut b = Batch::from_sets(&refs, None).unwrap();
    b.labels = vec![1, 4, 0, 2];
    b
}

#[test]
fn every_preset_passes_grad_check() {
    for (k, name) in PRESET_NAMES.iter().enumerate() {
        let cfg = preset(name).unwrap();
        let model = Model::<f64>::init(cfg, 3, 11 + k as u64).unwrap();
        let b = batch(3, k as u64);
        let report = grad_check(model.params(), 1e-5, |tape, p| batch_loss(&model, tape, p, &b, 1e-3, None)).unwrap();
        assert!(report.checked > 0, "{name}");
        assert!(report.max_rel_error < 1e-4, "{name}: {report:?}");
    }
}
