//! Alternating discriminator/generator training on the synthetic set.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tpa3d_autodiff::{backward, no_grad, Adam, Param};

use crate::adversarial::{generator_loss, loss_d, loss_mismatch, DiscCondition, ImageEmbedder, LossTerms};
use crate::dataset::SyntheticSample;
use crate::error::{Error, Result};
use crate::model::Tpa3d;
use crate::render::RenderedView;
use crate::text::{mismatch_permutation, TextFeatures};

/// One element of a batch: a dataset sample, one of its views and a noise seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchItem {
    pub sample: usize,
    pub view: usize,
    pub z_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Batch {
    pub step: usize,
    pub items: Vec<BatchItem>,
    pub mismatch_seed: u64,
}

/// Draws batches by walking seeded shuffles of the dataset, so every sample
/// appears `batch / n` times up to one.
#[derive(Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    samples: usize,
    views: Vec<usize>,
}

impl BatchSampler {
    pub fn new(data: &[SyntheticSample], seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xB47C_5EED),
            order: Vec::new(),
            cursor: 0,
            samples: data.len(),
            views: data.iter().map(|s| s.views.len()).collect(),
        }
    }

    pub fn next_batch(&mut self, step: usize, size: usize) -> Batch {
        let items = (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order = (0..self.samples).collect();
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                let sample = self.order[self.cursor];
                self.cursor += 1;
                let view = self.rng.random_range(0..self.views[sample]);
                BatchItem { sample, view, z_seed: self.rng.random() }
            })
            .collect();
        Batch { step, items, mismatch_seed: self.rng.random() }
    }
}

/// Optimizers plus cached caption features for a dataset.
pub struct Trainer<'a> {
    pub model: &'a Tpa3d,
    pub data: &'a [SyntheticSample],
    features: Vec<TextFeatures>,
    pub opt_g: Adam,
    pub opt_d: Adam,
}

fn set_frozen(params: &[&Param], frozen: bool) {
    for p in params {
        p.set_frozen(frozen);
    }
}

fn check_terms(step: usize, terms: &LossTerms) -> Result<()> {
    if terms.all_finite() {
        Ok(())
    } else {
        Err(Error::Training { step, detail: format!("non-finite loss terms {terms:?}") })
    }
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a Tpa3d, data: &'a [SyntheticSample]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Config("training needs a nonempty dataset".into()));
        }
        let t = &model.config.train;
        let features = data.iter().map(|s| model.encode(&s.caption)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            data,
            features,
            opt_g: Adam::new(t.lr_g, t.beta1, t.beta2),
            opt_d: Adam::new(t.lr_d, t.beta1, t.beta2),
        })
    }

    fn condition(&self, item: &BatchItem) -> DiscCondition {
        let view = &self.data[item.sample].views[item.view];
        DiscCondition::new(&view.camera, &self.features[item.sample].sentence)
    }

    /// Mismatched sentence per item, or `None` when the batch cannot be mismatched.
    fn mismatched(&self, batch: &Batch) -> Result<Option<Vec<Vec<f64>>>> {
        if !self.model.config.train.mismatch {
            return Ok(None);
        }
        let keys: Vec<&str> = batch.items.iter().map(|i| self.data[i.sample].caption.as_str()).collect();
        let perm = match mismatch_permutation(&keys, batch.mismatch_seed) {
            Ok(p) => p,
            Err(Error::Usage(msg)) => {
                log::warn!("step {}: mismatch term skipped: {msg}", batch.step);
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        Ok(Some(perm.iter().map(|&j| self.features[batch.items[j].sample].sentence.clone()).collect()))
    }

    /// Generated renders for every batch item, recorded for backward unless
    /// called under `no_grad`.
    fn fakes(&self, batch: &Batch) -> Result<Vec<RenderedView>> {
        let model = self.model;
        batch
            .items
            .iter()
            .map(|item| {
                let camera = self.data[item.sample].views[item.view].camera;
                let g = model.generate_features(self.features[item.sample].clone(), item.z_seed)?;
                model.render(&g.output.geo, &g.output.tex, &camera)
            })
            .collect()
    }

    /// Accumulates discriminator gradients for `batch` and applies one Adam step.
    /// Generator parameters receive no gradient.
    pub fn discriminator_step(&mut self, batch: &Batch) -> Result<LossTerms> {
        let fakes = {
            let _guard = no_grad();
            self.fakes(batch)?
        };
        self.discriminator_update(batch, &fakes)
    }

    fn discriminator_update(&mut self, batch: &Batch, fakes: &[RenderedView]) -> Result<LossTerms> {
        let model = self.model;
        let scale = 1.0 / batch.items.len() as f64;
        let mismatched = self.mismatched(batch)?;
        let lambda = model.config.train.lambda_r1;
        let mut terms = LossTerms::default();
        for (i, (item, fake)) in batch.items.iter().zip(fakes).enumerate() {
            let real = &self.data[item.sample].views[item.view];
            let fake = fake.detach();
            let cond = self.condition(item);
            let d = loss_d(&model.discs, real, &fake, &cond, lambda)?;
            let mut objective = d.objective;
            let mut t = d.terms;
            if let Some(sentences) = &mismatched {
                let m = loss_mismatch(&model.discs, &fake, real, &cond, &cond.with_sentence(&sentences[i]))?;
                t.mismatch = m.item();
                objective = objective.sub(&m.scale(model.config.train.mismatch_weight))?;
            }
            check_terms(batch.step, &t)?;
            backward(&objective.scale(scale))?;
            terms.add(&t.scaled(scale));
        }
        self.opt_d.step(&model.discriminator_params())?;
        Ok(terms)
    }

    /// Accumulates generator gradients with frozen discriminators and applies
    /// one Adam step.
    pub fn generator_step(&mut self, batch: &Batch) -> Result<LossTerms> {
        let fakes = self.fakes(batch)?;
        self.generator_update(batch, fakes)
    }

    fn generator_update(&mut self, batch: &Batch, fakes: Vec<RenderedView>) -> Result<LossTerms> {
        let model = self.model;
        let scale = 1.0 / batch.items.len() as f64;
        let clip = match (&model.embedder, model.config.train.clip) {
            (Some(e), true) => Some((e as &dyn ImageEmbedder, model.config.train.w_clip)),
            _ => None,
        };
        set_frozen(&model.discriminator_params(), true);
        let result = (|| -> Result<LossTerms> {
            let mut terms = LossTerms::default();
            for (item, fake) in batch.items.iter().zip(fakes) {
                let loss = generator_loss(&model.discs, &fake, &self.condition(item), clip)?;
                check_terms(batch.step, &loss.terms)?;
                backward(&loss.objective.scale(scale))?;
                terms.add(&loss.terms.scaled(scale));
            }
            Ok(terms)
        })();
        set_frozen(&model.discriminator_params(), false);
        let terms = result?;
        self.opt_g.step(&model.generator_params())?;
        Ok(terms)
    }

    /// One discriminator step followed by one generator step on the same batch.
    /// The renders are generated once: the discriminator sees them detached and
    /// the generator step reuses their graphs, which the discriminator update
    /// cannot invalidate because it touches no generator parameter.
    pub fn step(&mut self, batch: &Batch) -> Result<LossTerms> {
        let fakes = self.fakes(batch)?;
        let mut terms = self.discriminator_update(batch, &fakes)?;
        terms.add(&self.generator_update(batch, fakes)?);
        Ok(terms)
    }
}

pub const LOSS_LOG: &str = "losses.csv";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const NAN_DUMP: &str = "nan_dump.json";

pub fn checkpoint_name(step: usize) -> String {
    format!("checkpoint_{step:06}.ckpt")
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub steps: usize,
    pub seconds: f64,
    /// Mean terms over the last `log_every` steps.
    pub final_terms: LossTerms,
}

#[derive(Serialize)]
struct NanDump<'a> {
    seed: u64,
    batch: &'a Batch,
    captions: Vec<&'a str>,
    error: String,
}

/// Runs the configured number of steps, writing the loss log, periodic
/// checkpoints and the final checkpoint into `out`.
pub fn train(model: &Tpa3d, data: &[SyntheticSample], out: &Path) -> Result<TrainReport> {
    std::fs::create_dir_all(out)?;
    let cfg = &model.config.train;
    let mut trainer = Trainer::new(model, data)?;
    let mut sampler = BatchSampler::new(data, model.config.seed);
    let log_path = out.join(LOSS_LOG);
    let mut log = BufWriter::new(File::create(&log_path)?);
    writeln!(log, "step,{}", LossTerms::FIELDS.join(","))?;
    let start = Instant::now();
    let window = cfg.log_every.max(1);
    let mut recent = LossTerms::default();
    let mut final_terms = LossTerms::default();
    for step in 1..=cfg.steps {
        let batch = sampler.next_batch(step, cfg.batch);
        let terms = match trainer.step(&batch) {
            Ok(t) => t,
            Err(e) => {
                if matches!(e, Error::Training { .. } | Error::NonFinite(_)) {
                    let dump = NanDump {
                        seed: model.config.seed,
                        batch: &batch,
                        captions: batch.items.iter().map(|i| data[i.sample].caption.as_str()).collect(),
                        error: e.to_string(),
                    };
                    std::fs::write(out.join(NAN_DUMP), serde_json::to_string_pretty(&dump)?)?;
                    log.flush()?;
                }
                return Err(e);
            }
        };
        let values: Vec<String> = terms.values().iter().map(|v| v.to_string()).collect();
        writeln!(log, "{step},{}", values.join(","))?;
        recent.add(&terms);
        if step % window == 0 || step == cfg.steps {
            let n = if step % window == 0 { window } else { step % window };
            final_terms = recent.scaled(1.0 / n as f64);
            recent = LossTerms::default();
            log::info!(
                "step {step}/{}: d_rgb {:.4} d_mask {:.4} g_rgb {:.4} g_mask {:.4} mis {:.4} clip {:.4} r1 {:.4} ({:.1}s)",
                cfg.steps,
                final_terms.d_rgb,
                final_terms.d_mask,
                final_terms.g_rgb,
                final_terms.g_mask,
                final_terms.mismatch,
                final_terms.clip_sim,
                final_terms.r1,
                start.elapsed().as_secs_f64()
            );
            log.flush()?;
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps {
            model.save(out.join(checkpoint_name(step)))?;
        }
    }
    log.flush()?;
    let checkpoint = out.join(FINAL_CHECKPOINT);
    model.save(&checkpoint)?;
    Ok(TrainReport { checkpoint, loss_log: log_path, steps: cfg.steps, seconds: start.elapsed().as_secs_f64(), final_terms })
}
