use fftseg::data::{generate, to_batch, Sample, SyntheticSpec};
use fftseg::training::{predict, train, EpochReport, TrainConfig};
use fftseg::unet::{decode_checkpoint, encode_checkpoint};
use fftseg::{Dataset, UNet, UNetConfig};

fn dataset(n: usize, size: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec { image_size: size, radius_range: (3.0, 6.0), seed, ..SyntheticSpec::default() };
    let samples = generate(&spec, n).unwrap();
    let refs: Vec<&Sample> = samples.iter().collect();
    let (x, y) = to_batch(&refs).unwrap();
    Dataset::new(x, y).unwrap()
}

fn without_timing(r: &[EpochReport]) -> Vec<(usize, u64, u64, u64)> {
    r.iter().map(|e| (e.epoch, e.train_loss.to_bits(), e.val_loss.to_bits(), e.val_mean_iou.to_bits())).collect()
}

#[test]
fn overfits_a_single_batch() {
    let data = dataset(8, 32, 3);
    let mut model = UNet::new(UNetConfig::new(32, 8, 3, true, 4)).unwrap();
    let mut cfg = TrainConfig { epochs: 200, batch_size: 8, validation_fraction: 0.0, ..TrainConfig::default() };
    cfg.adam.learning_rate = 1e-3;
    let reports = train(&mut model, &data, &cfg).unwrap();
    let last = reports.last().unwrap();
    assert!(last.train_loss <= -0.95, "final train loss {}", last.train_loss);
    assert!(reports.iter().all(|r| r.ms_per_step > 0.0 && r.train_loss > -1.0 && r.train_loss <= 0.0));

    // Smoothed over 10-epoch windows the loss never goes up.
    let windows: Vec<f64> = reports.chunks(10).map(|c| c.iter().map(|r| r.train_loss).sum::<f64>() / c.len() as f64).collect();
    for w in windows.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "window means {windows:?}");
    }
}

#[test]
fn training_is_reproducible() {
    let data = dataset(12, 16, 5);
    let cfg = TrainConfig { epochs: 3, batch_size: 4, validation_fraction: 0.25, ..TrainConfig::default() };
    let run = || {
        let mut m = UNet::new(UNetConfig::new(16, 2, 2, true, 6)).unwrap();
        let r = train(&mut m, &data, &cfg).unwrap();
        (m, r)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(without_timing(&ra), without_timing(&rb));
    assert_eq!(encode_checkpoint(&a), encode_checkpoint(&b));
    assert!(ra.iter().all(|r| r.val_mean_iou.is_finite()));
}

#[test]
fn split_and_batch_limits() {
    let data = dataset(16, 16, 7);
    let mut m = UNet::new(UNetConfig::new(16, 2, 2, false, 8)).unwrap();
    // 0.25 of 16 leaves 12 for training: a batch of 12 fits, 13 does not.
    let ok = TrainConfig { epochs: 1, batch_size: 12, validation_fraction: 0.25, ..TrainConfig::default() };
    assert!(train(&mut m, &data, &ok).is_ok());
    let too_big = TrainConfig { batch_size: 13, ..ok };
    assert!(train(&mut m, &data, &too_big).is_err());
}

#[test]
fn predictions_survive_checkpoint_round_trip() {
    let data = dataset(20, 16, 9);
    let mut m = UNet::new(UNetConfig::new(16, 2, 2, true, 10)).unwrap();
    let cfg = TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::default() };
    train(&mut m, &data, &cfg).unwrap();
    let p = predict(&m, &data.images).unwrap();
    assert_eq!(p, predict(&m, &data.images).unwrap());
    assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let back: UNet = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
    assert_eq!(predict(&back, &data.images).unwrap().data(), p.data());
}
