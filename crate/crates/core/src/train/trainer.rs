//! The optimisation loop.
//!
//! Each sample of a batch gets its own graph; samples run in parallel and
//! their gradients are summed in sample order, so a run is bit-identical
//! with or without the `parallel` feature.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::manifest::load_split;
use crate::data::synth::mix_seed;
use crate::data::{augment, extract_patches, Split, StereoSample};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::losses::{compute_loss, photometric_loss, LossBreakdown, Targets, LOSS_CSV_HEADER};
use crate::metrics::{evaluate, index_ids, EvalReport, Method};
use crate::model::{batch1, Model};
use crate::tensor::{Graph, Tensor};
use crate::train::checkpoint::{Checkpoint, RngState};
use crate::train::config::TrainConfig;
use crate::train::init::xavier_params;
use crate::train::optim::{lr_schedule, Adam};

const INIT_STREAM: u64 = 0x1a17;
const DATA_STREAM: u64 = 0xda7a;

/// Environment variable that overrides [`TrainConfig::out_dir`].
pub const OUT_DIR_ENV: &str = "DCSSR_OUT_DIR";

pub fn resolve_out_dir(cfg: &TrainConfig) -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| cfg.out_dir.clone())
}

/// Loss and parameter gradients of one sample.
pub fn sample_gradients(
    model: &Model<f32>,
    cfg: &TrainConfig,
    sample: &StereoSample,
) -> Result<(LossBreakdown, Vec<Tensor<f32>>)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let x = model.inputs(&mut g, &sample.lr_left, &sample.lr_right)?;
    let loss_cfg = cfg.loss();
    let out = model.arch.forward_full(&mut g, &p, &x, loss_cfg.alpha > 0.0)?;
    let targets = Targets {
        lr_left: x.lr_left,
        lr_right: x.lr_right,
        hr_left: g.constant(batch1(&sample.hr_left)?),
        hr_right: g.constant(batch1(&sample.hr_right)?),
    };
    let terms = compute_loss(&mut g, &out, &targets, model.config().scale, &loss_cfg)?;
    let breakdown = LossBreakdown::read(&g, &terms, loss_cfg.alpha);
    let mut grads = g.backward(terms.total)?;
    let per_param = p
        .vars()
        .iter()
        .zip(model.params.values())
        .map(|(&v, value)| grads.take(v).unwrap_or_else(|| Tensor::zeros(value.shape())))
        .collect();
    Ok((breakdown, per_param))
}

/// Mean photometric loss of the model's LR masks over `samples`.
pub fn held_out_photometric(model: &Model<f32>, samples: &[StereoSample], exec: Execution) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid("photometric evaluation over no samples".into()));
    }
    let per = try_map_indexed(exec, samples.len(), |i| {
        let s = &samples[i];
        let mut g = Graph::new();
        let p = model.params.bind_constants(&mut g);
        let x = model.inputs(&mut g, &s.lr_left, &s.lr_right)?;
        let masks = model.arch.masks(&mut g, &p, x.lr_left, x.lr_right)?;
        let l = photometric_loss(&mut g, x.lr_left, x.lr_right, masks)?;
        Ok::<f64, Error>(g.value(l).item() as f64)
    })?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Per-epoch record returned by [`Trainer::fit`].
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: u32,
    pub steps: u64,
    pub mean: LossBreakdown,
    pub validation: Option<EvalReport>,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    /// Completed epochs.
    pub epoch: u32,
    /// Completed optimiser steps.
    pub step: u64,
    pub exec: Execution,
    data_rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh Xavier-initialised model. Initialisation and data order draw
    /// from separate streams derived from `cfg.seed`.
    pub fn new(cfg: TrainConfig, img_channels: usize, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        let mut model = Model::new(cfg.model(img_channels));
        xavier_params(&mut model.params, &mut ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, INIT_STREAM])));
        let adam = Adam::new(cfg.adam(), &model.params);
        Ok(Trainer {
            data_rng: ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, DATA_STREAM])),
            cfg,
            model,
            adam,
            epoch: 0,
            step: 0,
            exec,
        })
    }

    /// Continues from `ckpt`; its architecture must match `cfg`.
    pub fn resume(cfg: TrainConfig, ckpt: Checkpoint, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        let want = cfg.model(ckpt.model.config().img_channels);
        if *ckpt.model.config() != want {
            return Err(Error::Config(format!(
                "checkpoint model {:?} does not match configuration {want:?}",
                ckpt.model.config()
            )));
        }
        let mut adam = ckpt.adam;
        adam.config = cfg.adam();
        Ok(Trainer {
            data_rng: ckpt.rng.restore(),
            cfg,
            model: ckpt.model,
            adam,
            epoch: ckpt.epoch,
            step: ckpt.step,
            exec,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            epoch: self.epoch,
            step: self.step,
            rng: RngState::capture(&self.data_rng),
            model: self.model.clone(),
            adam: self.adam.clone(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        lr_schedule(self.epoch, self.cfg.lr0, self.cfg.lr_halving_period)
    }

    fn steps_exhausted(&self) -> bool {
        self.cfg.max_steps.is_some_and(|m| self.step >= m)
    }

    /// One optimiser step on `batch`; returns the batch-mean losses.
    pub fn train_step(&mut self, batch: &[StereoSample]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let diverged = |step, value| Error::Diverged { step, value };
        let results = try_map_indexed(self.exec, batch.len(), |i| sample_gradients(&self.model, &self.cfg, &batch[i]))
            .map_err(|e| match e {
                Error::NonFinite { .. } => diverged(self.step, f64::NAN),
                other => other,
            })?;
        let losses: Vec<LossBreakdown> = results.iter().map(|(l, _)| *l).collect();
        let mean = LossBreakdown::mean(&losses)?;
        if !mean.total.is_finite() {
            return Err(diverged(self.step, mean.total));
        }
        let mut iter = results.into_iter().map(|(_, g)| g);
        let mut sum = iter.next().expect("non-empty batch");
        for grads in iter {
            for (acc, g) in sum.iter_mut().zip(&grads) {
                acc.add_assign(g);
            }
        }
        let inv = 1.0 / batch.len() as f32;
        for g in &mut sum {
            g.scale_assign(inv);
        }
        let lr = self.learning_rate();
        self.adam.step(&mut self.model.params, &sum, lr)?;
        self.step += 1;
        Ok(mean)
    }

    /// One pass over `patches` in a freshly shuffled order, with per-sample
    /// augmentation. `on_step` sees every logged step and may return `false`
    /// to stop early.
    pub fn run_epoch(
        &mut self,
        patches: &[StereoSample],
        mut on_step: impl FnMut(u64, &LossBreakdown) -> Result<bool>,
    ) -> Result<(Vec<LossBreakdown>, bool)> {
        if patches.is_empty() {
            return Err(Error::Invalid("no training patches".into()));
        }
        let mut order: Vec<usize> = (0..patches.len()).collect();
        order.shuffle(&mut self.data_rng);
        let aug = self.cfg.augment();
        let mut logged = Vec::new();
        for chunk in order.chunks(self.cfg.batch) {
            if self.steps_exhausted() {
                return Ok((logged, true));
            }
            let batch: Vec<StereoSample> = chunk
                .iter()
                .map(|&i| {
                    let mut r = ChaCha8Rng::seed_from_u64(self.data_rng.next_u64());
                    augment(&patches[i], &aug, &mut r)
                })
                .collect();
            let losses = self.train_step(&batch)?;
            logged.push(losses);
            if !on_step(self.step, &losses)? {
                return Ok((logged, true));
            }
        }
        Ok((logged, self.steps_exhausted()))
    }

    /// Trains until `cfg.epochs` epochs are complete (or `max_steps` is hit),
    /// writing `loss.csv`, `val.csv` and checkpoints to `out` when given.
    pub fn fit(&mut self, patches: &[StereoSample], val: &[StereoSample], out: Option<&Path>) -> Result<Vec<EpochSummary>> {
        let mut logs = match out {
            Some(dir) => Some(RunLogs::open(dir, self.epoch == 0 && self.step == 0)?),
            None => None,
        };
        let mut summaries = Vec::new();
        while self.epoch < self.cfg.epochs {
            let first_step = self.step;
            let (losses, stopped) = self.run_epoch(patches, |step, l| {
                if let Some(logs) = logs.as_mut() {
                    logs.loss(step, l)?;
                }
                Ok(true)
            })?;
            self.epoch += 1;
            let mean = LossBreakdown::mean(&losses)?;
            let validation = if val.is_empty() {
                None
            } else {
                Some(evaluate(Method::Model(&self.model), val, &index_ids(val.len()), self.exec)?)
            };
            info!(
                "epoch {} ({} steps): loss {:.6} mse {:.6}{}",
                self.epoch,
                self.step - first_step,
                mean.total,
                mean.mse,
                validation
                    .as_ref()
                    .map(|v| format!(", val psnr {:.3} dB ssim {:.4}", v.mean_psnr, v.mean_ssim))
                    .unwrap_or_default()
            );
            let done = stopped || self.epoch == self.cfg.epochs;
            if let Some(logs) = logs.as_mut() {
                if let Some(v) = &validation {
                    logs.val(self.epoch, v)?;
                }
                if done || self.epoch % self.cfg.checkpoint_every == 0 {
                    logs.checkpoint(&self.checkpoint())?;
                }
            }
            summaries.push(EpochSummary {
                epoch: self.epoch,
                steps: self.step - first_step,
                mean,
                validation,
            });
            if stopped {
                break;
            }
        }
        Ok(summaries)
    }
}

struct RunLogs {
    dir: PathBuf,
    loss: File,
    val: File,
}

impl RunLogs {
    fn open(dir: &Path, fresh: bool) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str, header: &str| -> Result<File> {
            let path = dir.join(name);
            let new = fresh || !path.exists();
            let mut f = OpenOptions::new()
                .create(true)
                .write(true)
                .append(!new)
                .truncate(new)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            if new {
                writeln!(f, "{header}").map_err(|e| Error::io(&path, e))?;
            }
            Ok(f)
        };
        Ok(RunLogs {
            loss: open("loss.csv", LOSS_CSV_HEADER)?,
            val: open("val.csv", "epoch,psnr_db,ssim")?,
            dir: dir.to_path_buf(),
        })
    }

    fn loss(&mut self, step: u64, l: &LossBreakdown) -> Result<()> {
        writeln!(self.loss, "{}", l.csv_row(step)).map_err(|e| Error::io(self.dir.join("loss.csv"), e))
    }

    fn val(&mut self, epoch: u32, r: &EvalReport) -> Result<()> {
        writeln!(self.val, "{epoch},{},{}", r.mean_psnr, r.mean_ssim).map_err(|e| Error::io(self.dir.join("val.csv"), e))
    }

    fn checkpoint(&self, c: &Checkpoint) -> Result<()> {
        let path = checkpoint_path(&self.dir, c.epoch);
        c.save(&path)?;
        c.save(self.dir.join("latest.ckpt"))?;
        info!("saved {}", path.display());
        Ok(())
    }
}

pub fn checkpoint_path(dir: &Path, epoch: u32) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}

/// Cuts every frame into training patches, in frame order.
pub fn frames_to_patches(frames: &[StereoSample], cfg: &TrainConfig) -> Result<Vec<StereoSample>> {
    let mut out = Vec::new();
    for f in frames {
        out.extend(extract_patches(f, cfg.patches())?);
    }
    Ok(out)
}

/// Full run from a dataset manifest: loads the train and validation splits,
/// trains (optionally resuming) and writes everything under the output dir.
pub fn train_from_manifest(cfg: &TrainConfig, resume: Option<&Path>, exec: Execution) -> Result<Vec<EpochSummary>> {
    let manifest = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset manifest given (set `data`)".into()))?;
    let frames = load_split(manifest, Split::Train, cfg.scale, exec)?;
    let patches = frames_to_patches(&frames, cfg)?;
    if patches.is_empty() {
        return Err(Error::Invalid(format!("{} yields no training patches", manifest.display())));
    }
    let mut val = load_split(manifest, Split::Val, cfg.scale, exec)?;
    val.truncate(cfg.val_frames);
    if val.is_empty() && cfg.val_frames > 0 {
        warn!("no validation frames in {}", manifest.display());
    }
    let out = resolve_out_dir(cfg);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    std::fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| Error::io(out.join("config.txt"), e))?;
    let mut trainer = match resume {
        Some(p) => Trainer::resume(cfg.clone(), Checkpoint::load(p)?, exec)?,
        None => Trainer::new(cfg.clone(), patches[0].channels(), exec)?,
    };
    info!(
        "training on {} patches from {} frames, {} parameters",
        patches.len(),
        frames.len(),
        trainer.model.params.num_scalars()
    );
    trainer.fit(&patches, &val, Some(&out))
}
