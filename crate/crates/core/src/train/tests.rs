use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::gradcheck::{gradcheck, GradcheckConfig};
use super::trainer::{checkpoint_path, frames_to_patches, Trainer};
use crate::data::{synth_stereo, StereoSample, SynthConfig};
use crate::error::Error;
use crate::exec::Execution;
use crate::losses::{compute_loss, mse_loss, LossConfig, Targets};
use crate::model::{batch1, Model, ModelConfig};
use crate::tensor::Graph;
use crate::train::init::xavier_params;

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        channels: 2,
        patch_height: 6,
        patch_width: 12,
        patch_stride: 6,
        batch: 3,
        epochs: 2,
        lr0: 1e-3,
        checkpoint_every: 1,
        val_frames: 0,
        ..TrainConfig::desk(2)
    }
}

fn tiny_patches(n: usize, seed: u64) -> Vec<StereoSample> {
    let cfg = SynthConfig {
        height: 12,
        width: 24,
        disparity: (1.0, 3.0),
        ..SynthConfig::default()
    };
    let frames: Vec<StereoSample> = (0..n).map(|i| synth_stereo(seed + i as u64, &cfg).unwrap()).collect();
    frames_to_patches(&frames, &tiny_cfg()).unwrap()
}

#[test]
fn one_epoch_logs_ceil_n_over_batch_rows() {
    let patches = tiny_patches(8, 1);
    assert_eq!(patches.len(), 8);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(TrainConfig { epochs: 1, ..tiny_cfg() }, 1, Execution::Parallel).unwrap();
    let summary = t.fit(&patches, &[], Some(dir.path())).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8usize.div_ceil(3));
    assert_eq!(summary.len(), 1);
    assert_eq!(summary[0].steps, 3);
    assert!(checkpoint_path(dir.path(), 1).exists());
    assert!(dir.path().join("latest.ckpt").exists());
}

#[test]
fn alpha_zero_shares_the_mse_at_step_zero() {
    let patches = tiny_patches(3, 2);
    let mut full = Trainer::new(tiny_cfg(), 1, Execution::Parallel).unwrap();
    let mut plain = Trainer::new(TrainConfig { alpha: 0.0, ..tiny_cfg() }, 1, Execution::Parallel).unwrap();
    let a = full.train_step(&patches).unwrap();
    let b = plain.train_step(&patches).unwrap();
    assert_eq!(a.mse, b.mse);
    assert!(a.dc > 0.0 && a.apam > 0.0);
    assert_eq!((b.dc, b.apam, b.total), (0.0, 0.0, b.mse));
    assert!(a.invariant_error() < 1e-6);
}

#[test]
fn alpha_zero_gradient_equals_plain_mse_gradient() {
    let mut model = Model::<f64>::new(ModelConfig {
        channels: 3,
        ..ModelConfig::default()
    });
    xavier_params(&mut model.params, &mut ChaCha8Rng::seed_from_u64(3));
    let s = &tiny_patches(1, 3)[0];
    let grads = |via_total: bool| {
        let mut g = Graph::<f64>::new();
        let p = model.params.bind(&mut g);
        let x = model.inputs(&mut g, &s.lr_left, &s.lr_right).unwrap();
        let out = model.arch.forward_full(&mut g, &p, &x, false).unwrap();
        let (hl, hr) = (g.constant(batch1(&s.hr_left).unwrap()), g.constant(batch1(&s.hr_right).unwrap()));
        let loss = if via_total {
            let t = Targets {
                lr_left: x.lr_left,
                lr_right: x.lr_right,
                hr_left: hl,
                hr_right: hr,
            };
            let cfg = LossConfig { alpha: 0.0, ..LossConfig::default() };
            compute_loss(&mut g, &out, &t, 2, &cfg).unwrap().total
        } else {
            mse_loss(&mut g, out.sr_left, out.sr_right, hl, hr).unwrap()
        };
        let gr = g.backward(loss).unwrap();
        p.vars().iter().map(|&v| gr.get(v).unwrap().clone()).collect::<Vec<_>>()
    };
    assert_eq!(grads(true), grads(false));
}

#[test]
fn runs_are_bit_identical_across_execution_modes() {
    let patches = tiny_patches(5, 4);
    let run = |exec| {
        let mut t = Trainer::new(tiny_cfg(), 1, exec).unwrap();
        t.fit(&patches, &[], None).unwrap();
        t.checkpoint().to_bytes()
    };
    let a = run(Execution::Parallel);
    assert_eq!(a, run(Execution::Parallel));
    assert_eq!(a, run(Execution::Sequential));
}

#[test]
fn resume_continues_bit_identically() {
    let patches = tiny_patches(5, 5);
    let mut straight = Trainer::new(tiny_cfg(), 1, Execution::Parallel).unwrap();
    straight.fit(&patches, &[], None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(TrainConfig { epochs: 1, ..tiny_cfg() }, 1, Execution::Parallel).unwrap();
    first.fit(&patches, &[], Some(dir.path())).unwrap();
    let ckpt = Checkpoint::load(checkpoint_path(dir.path(), 1)).unwrap();
    let mut resumed = Trainer::resume(tiny_cfg(), ckpt, Execution::Sequential).unwrap();
    resumed.fit(&patches, &[], Some(dir.path())).unwrap();
    assert_eq!(resumed.checkpoint().to_bytes(), straight.checkpoint().to_bytes());
    assert_eq!(std::fs::read(checkpoint_path(dir.path(), 2)).unwrap(), straight.checkpoint().to_bytes());
    // both halves appended to one log
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);

    let other = TrainConfig { channels: 3, ..tiny_cfg() };
    assert!(Trainer::resume(other, straight.checkpoint(), Execution::Parallel).is_err());
}

#[test]
fn divergence_aborts_and_keeps_the_last_checkpoint() {
    let patches = tiny_patches(3, 6);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(TrainConfig { epochs: 1, ..tiny_cfg() }, 1, Execution::Parallel).unwrap();
    t.fit(&patches, &[], Some(dir.path())).unwrap();
    let saved = std::fs::read(dir.path().join("latest.ckpt")).unwrap();

    let mut poisoned = patches.clone();
    poisoned[1].lr_left.data_mut()[0] = f32::NAN;
    t.cfg.epochs = 2;
    let err = t.fit(&poisoned, &[], Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
    assert_eq!(std::fs::read(dir.path().join("latest.ckpt")).unwrap(), saved);
    assert!(!checkpoint_path(dir.path(), 2).exists());
}

#[test]
fn max_steps_stops_early() {
    let patches = tiny_patches(6, 7);
    let mut t = Trainer::new(TrainConfig { max_steps: Some(3), epochs: 5, batch: 2, ..tiny_cfg() }, 1, Execution::Parallel).unwrap();
    let s = t.fit(&patches, &[], None).unwrap();
    assert_eq!(t.step, 3);
    assert_eq!(s.len(), 1);
}

#[test]
fn loss_decreases_over_a_short_run() {
    let patches = tiny_patches(8, 8);
    let mut t = Trainer::new(TrainConfig { epochs: 5, batch: 2, channels: 4, ..tiny_cfg() }, 1, Execution::Parallel).unwrap();
    let s = t.fit(&patches, &[], None).unwrap();
    assert!(s[4].mean.total < s[0].mean.total, "{} vs {}", s[4].mean.total, s[0].mean.total);
}

#[test]
fn small_gradcheck_passes() {
    for alpha in [0.005, 1.0] {
        let r = gradcheck(
            &GradcheckConfig {
                channels: 2,
                patch: (3, 5),
                alpha,
                ..GradcheckConfig::default()
            },
            Execution::Parallel,
        )
        .unwrap();
        assert!(r.passes(1e-3), "{r:?}");
        assert!(r.smooth.rel_error < 1e-3 && r.refined_count < r.checked / 10, "{r:?}");
    }
}
