use mash_core::bsd::Trainer;
use mash_core::net::{load_checkpoint, save_checkpoint, AdamConfig, DenoiserModel, NetConfig, OptimState};
use mash_core::noise::{add_noise, NoiseModel};
use mash_core::rng::seeded;
use mash_core::Image;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_preserves_shape(hm in 1usize..4, wm in 1usize..4, c in prop_oneof![Just(1usize), Just(3usize)], seed in any::<u64>()) {
        let model = DenoiserModel::<f32>::init(NetConfig::reduced(c), &mut seeded(seed)).unwrap();
        let (h, w) = (8 * hm, 8 * wm);
        let img = Image::from_fn(h, w, c, |r, col, ch| ((r * 31 + col * 7 + ch * 5) % 256) as f32).unwrap();
        let out = model.forward(&img).unwrap();
        prop_assert_eq!(out.shape(), (h, w, c));
        prop_assert_eq!(out, model.forward(&img).unwrap());
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), c in prop_oneof![Just(1usize), Just(3usize)]) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mshw");
        let model = DenoiserModel::<f32>::init(NetConfig::reduced(c), &mut seeded(seed)).unwrap();
        save_checkpoint(&model, &path).unwrap();
        let back: DenoiserModel<f32> = load_checkpoint(&path).unwrap();
        prop_assert_eq!(back.config(), model.config());
        for p in (0..model.param_count()).step_by(97) {
            prop_assert_eq!(back.param(p).to_bits(), model.param(p).to_bits());
        }
    }

    #[test]
    fn cosine_schedule(base in 1e-5f64..1e-2, floor_frac in 0.0f64..1.0, n in 1usize..2000, t_frac in 0.0f64..=1.0) {
        let mut cfg = AdamConfig::new(n);
        cfg.base_lr = base;
        cfg.floor_lr = base * floor_frac;
        let t = (t_frac * n as f64).round() as usize;
        let c = 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / n as f64).cos());
        let expected = cfg.base_lr * c + cfg.floor_lr * (1.0 - c);
        prop_assert!((cfg.learning_rate(t) - expected).abs() <= 1e-15 * base);
    }
}

#[test]
fn init_is_deterministic_and_finite() {
    let a = DenoiserModel::<f32>::init(NetConfig::standard(3), &mut seeded(3)).unwrap();
    let b = DenoiserModel::<f32>::init(NetConfig::standard(3), &mut seeded(3)).unwrap();
    assert!(a.all_finite());
    assert!((0..a.param_count())
        .step_by(1013)
        .all(|p| a.param(p).to_bits() == b.param(p).to_bits()));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.mshw");
    std::fs::write(&path, b"MSHW\x01\x00").unwrap();
    assert!(load_checkpoint::<f32>(&path).is_err());
}

#[test]
fn training_reduces_loss_on_noisy_constant() {
    let clean = Image::filled(32, 32, 3, 128.0).unwrap();
    let y = add_noise(&clean, &NoiseModel::new(25.0, 0.0, 3.0).unwrap(), &mut seeded(1)).unwrap();
    let model = DenoiserModel::<f32>::init(NetConfig::reduced(3), &mut seeded(2)).unwrap();
    let opt = OptimState::new(&model, AdamConfig::new(200));
    let mut trainer = Trainer::new(model, opt);
    let mut rng = seeded(3);
    let losses: Vec<f64> = (0..200)
        .map(|_| trainer.step(&y, &y, 0.5, &mut rng).unwrap().loss)
        .collect();
    let early = losses[..10].iter().sum::<f64>() / 10.0;
    let late = losses[190..].iter().sum::<f64>() / 10.0;
    assert!(late < early, "running loss {late} not below {early}");
    assert!(trainer.model.all_finite());
}
