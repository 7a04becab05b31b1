//! Finite-difference check of the complete training loss against the
//! engine's analytic gradients, in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{synth_stereo, StereoSample, SynthConfig};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::losses::{compute_loss, LossConfig, SmoothnessVariant, Targets};
use crate::model::{batch1, Model, ModelConfig};
use crate::tensor::Graph;
use crate::train::init::xavier_params;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub channels: usize,
    pub scale: usize,
    /// LR patch `(height, width)`.
    pub patch: (usize, usize),
    pub alpha: f64,
    pub smoothness: SmoothnessVariant,
    /// Central-difference step.
    pub eps: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            channels: 4,
            scale: 2,
            patch: (6, 12),
            alpha: 0.005,
            smoothness: SmoothnessVariant::Diagonal,
            eps: 1e-4,
            seed: 0,
        }
    }
}

/// Worst disagreement within one group of scalars.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Worst {
    /// `|a − n| / max(|a|, |n|, 1e-6)`.
    pub rel_error: f64,
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Step used for this scalar's central difference.
    pub eps: f64,
}

impl Worst {
    fn offer(&mut self, rel: f64, param: &str, index: usize, analytic: f64, numeric: f64, eps: f64) {
        if rel > self.rel_error || self.param.is_empty() {
            *self = Worst {
                rel_error: rel,
                param: param.to_string(),
                index,
                analytic,
                numeric,
                eps,
            };
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Scalars compared.
    pub checked: usize,
    /// Scalars whose `±eps` window is free of kinks, compared at `eps`.
    pub smooth: Worst,
    /// Scalars whose `±eps` window straddles an `abs`/`leaky_relu` kink,
    /// compared at the largest step `eps / 10^k` that avoids every kink.
    pub refined: Worst,
    pub refined_count: usize,
    /// Straddling scalars with no kink-free step down to `eps / 10^REFINE_LEVELS`.
    pub unresolved: usize,
    pub loss: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.smooth.rel_error.max(self.refined.rel_error)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.unresolved == 0 && self.max_rel_error() < tolerance
    }
}

/// Decades tried below `eps` for kink-straddling scalars.
pub const REFINE_LEVELS: i32 = 4;

enum Numeric {
    Smooth(f64),
    Refined(f64, f64),
    Unresolved,
}

struct Eval {
    loss: f64,
    grads: Vec<Vec<f64>>,
    kinks: Vec<bool>,
}

fn evaluate(model: &Model<f64>, sample: &StereoSample, cfg: &LossConfig, want_grads: bool) -> Result<Eval> {
    let mut g = Graph::<f64>::new();
    let p = model.params.bind(&mut g);
    let x = model.inputs(&mut g, &sample.lr_left, &sample.lr_right)?;
    let out = model.arch.forward_full(&mut g, &p, &x, cfg.alpha > 0.0)?;
    let targets = Targets {
        lr_left: x.lr_left,
        lr_right: x.lr_right,
        hr_left: g.constant(batch1(&sample.hr_left)?),
        hr_right: g.constant(batch1(&sample.hr_right)?),
    };
    let terms = compute_loss(&mut g, &out, &targets, model.config().scale, cfg)?;
    let loss = g.value(terms.total).item();
    let kinks = g.kink_signs();
    if !want_grads {
        return Ok(Eval {
            loss,
            grads: Vec::new(),
            kinks,
        });
    }
    let grads = g.backward(terms.total)?;
    let per = p
        .vars()
        .iter()
        .zip(model.params.values())
        .map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.len()], |gt| gt.data().to_vec()))
        .collect();
    Ok(Eval { loss, grads: per, kinks })
}

/// Compares the analytic gradient of every parameter scalar with a central
/// difference of the full loss on one synthetic patch. A difference whose
/// window crosses a kink does not estimate the derivative, so such scalars
/// are retried with smaller steps and reported apart.
pub fn gradcheck(cfg: &GradcheckConfig, exec: Execution) -> Result<GradcheckReport> {
    if cfg.eps <= 0.0 || cfg.channels == 0 || cfg.patch.0 == 0 || cfg.patch.1 == 0 {
        return Err(Error::Config(format!("invalid gradcheck settings {cfg:?}")));
    }
    let mut model = Model::<f64>::new(ModelConfig {
        channels: cfg.channels,
        scale: cfg.scale,
        ..ModelConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    xavier_params(&mut model.params, &mut rng);
    for t in model.params.values_mut() {
        if t.rank() == 1 {
            for b in t.data_mut() {
                *b = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let sample = synth_stereo(
        rng.gen(),
        &SynthConfig {
            height: cfg.patch.0 * cfg.scale,
            width: cfg.patch.1 * cfg.scale,
            scale: cfg.scale,
            disparity: (1.0, 4.0),
            ..SynthConfig::default()
        },
    )?;
    let loss_cfg = LossConfig {
        alpha: cfg.alpha,
        smoothness: cfg.smoothness,
    };
    let base = evaluate(&model, &sample, &loss_cfg, true)?;
    let coords: Vec<(usize, usize)> = model
        .params
        .values()
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |i| (p, i)))
        .collect();
    let numeric = try_map_indexed(exec, coords.len(), |k| {
        let (p, i) = coords[k];
        let mut m = model.clone();
        let theta = m.params.values()[p].data()[i];
        for level in 0..=REFINE_LEVELS {
            let h = cfg.eps / 10f64.powi(level);
            m.params.values_mut()[p].data_mut()[i] = theta + h;
            let up = evaluate(&m, &sample, &loss_cfg, false)?;
            m.params.values_mut()[p].data_mut()[i] = theta - h;
            let down = evaluate(&m, &sample, &loss_cfg, false)?;
            if up.kinks == base.kinks && down.kinks == base.kinks {
                let n = (up.loss - down.loss) / (2.0 * h);
                return Ok::<Numeric, Error>(if level == 0 { Numeric::Smooth(n) } else { Numeric::Refined(n, h) });
            }
        }
        Ok(Numeric::Unresolved)
    })?;
    let mut report = GradcheckReport {
        checked: coords.len(),
        smooth: Worst::default(),
        refined: Worst::default(),
        refined_count: 0,
        unresolved: 0,
        loss: base.loss,
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    for (&(p, i), n) in coords.iter().zip(&numeric) {
        let a = base.grads[p][i];
        let name = &model.params.names()[p];
        match *n {
            Numeric::Smooth(n) => report.smooth.offer(rel(a, n), name, i, a, n, cfg.eps),
            Numeric::Refined(n, h) => {
                report.refined_count += 1;
                report.refined.offer(rel(a, n), name, i, a, n, h);
            }
            Numeric::Unresolved => report.unresolved += 1,
        }
    }
    Ok(report)
}
