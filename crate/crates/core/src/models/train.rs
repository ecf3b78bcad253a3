use qmap_nn::{loss_bce_sigmoid, loss_mse, par, Adam, AdamConfig, ComputeGraph, Mode, NnError, SeedStream, Tensor4};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::predict::{flip_tensor, pooler_inputs};
use super::{Fusion, GENERATOR_LOGITS};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::maps::QualityMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Random horizontal flips of training samples.
    pub hflip: bool,
    /// Start the pooler's output bias at the mean training score.
    pub init_score_bias: bool,
}

impl TrainConfig {
    pub fn generator(seed: u64) -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 1e-11,
            seed,
            hflip: true,
            init_score_bias: false,
        }
    }

    pub fn pooler(seed: u64) -> Self {
        Self {
            lr: 5e-3,
            init_score_bias: true,
            ..Self::generator(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 {
            return Err(Error::Config(format!("lr {} / weight decay {} invalid", self.lr, self.weight_decay)));
        }
        Ok(())
    }

    fn adam(&self) -> Adam {
        Adam::new(AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::with_lr(self.lr)
        })
    }
}

/// Per-epoch mean losses. `best_epoch` indexes the retained parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainHistory {
    /// Loss used for model selection: validation if present, else training.
    pub fn selection_loss(&self) -> &[f64] {
        if self.val_loss.is_empty() {
            &self.train_loss
        } else {
            &self.val_loss
        }
    }

    pub fn best_loss(&self) -> f64 {
        self.selection_loss()[self.best_epoch]
    }
}

fn epoch_batches(n: usize, batch: usize, stream: &SeedStream, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream.rng_indexed("shuffle", epoch as u64));
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn flip_flags(n: usize, enabled: bool, stream: &SeedStream, epoch: usize) -> Vec<bool> {
    if !enabled {
        return vec![false; n];
    }
    let mut rng = stream.rng_indexed("flip", epoch as u64);
    (0..n).map(|_| rng.random::<bool>()).collect()
}

/// Gathers per-sample `[1, c, h, w]` tensors into one batch, flipping as asked.
fn gather(samples: &[Tensor4], idx: &[usize], flips: Option<&[bool]>) -> Result<Tensor4> {
    let parts: Vec<Tensor4> = idx
        .iter()
        .map(|&i| match flips {
            Some(f) if f[i] => flip_tensor(&samples[i]),
            _ => samples[i].clone(),
        })
        .collect();
    Ok(Tensor4::stack(&parts)?)
}

fn finite(loss: f64, what: &str, epoch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(NnError::Numeric(format!("{what} loss became {loss} in epoch {epoch}")).into())
    }
}

/// Fits the generator to map labels with sigmoid cross-entropy. The
/// parameters of the epoch with the lowest selection loss are kept.
pub fn train_generator(
    gen: &mut ComputeGraph,
    train: &[(Image, QualityMap)],
    val: &[(Image, QualityMap)],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no generator training samples".into()));
    }
    let logits = gen
        .node_index(GENERATOR_LOGITS)
        .ok_or_else(|| Error::Config(format!("graph has no {GENERATOR_LOGITS} node")))?;
    let to_tensors = |set: &[(Image, QualityMap)]| -> Result<(Vec<Tensor4>, Vec<Tensor4>)> {
        let mut xs = Vec::with_capacity(set.len());
        let mut ys = Vec::with_capacity(set.len());
        for (k, (img, map)) in set.iter().enumerate() {
            if img.height() != map.height() || img.width() != map.width() {
                return Err(Error::Shape(format!(
                    "sample {k}: {}x{} patch with a {}x{} label",
                    img.height(),
                    img.width(),
                    map.height(),
                    map.width()
                )));
            }
            xs.push(img.to_tensor());
            ys.push(map.to_tensor());
        }
        Ok((xs, ys))
    };
    let (xs, ys) = to_tensors(train)?;
    let (vxs, vys) = to_tensors(val)?;

    let stream = SeedStream::new(cfg.seed);
    let mut adam = cfg.adam();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ComputeGraph)> = None;
    for epoch in 0..cfg.epochs {
        let flips = flip_flags(xs.len(), cfg.hflip, &stream, epoch);
        let mut total = 0.0;
        for (b, idx) in epoch_batches(xs.len(), cfg.batch_size, &stream, epoch).iter().enumerate() {
            let x = gather(&xs, idx, Some(&flips))?;
            let y = gather(&ys, idx, Some(&flips))?;
            let tape = gen.forward(&[&x], Mode::Train, stream.derive("dropout", (epoch * 1_000_003 + b) as u64))?;
            let (loss, grad) = loss_bce_sigmoid(tape.node_output(logits), &y)?;
            total += finite(loss, "generator", epoch)? * idx.len() as f64;
            let grads = gen.backward_from(&tape, &[(logits, grad)])?;
            adam.step(gen, &grads)?;
            gen.update_running_stats(&tape)?;
        }
        history.train_loss.push(total / xs.len() as f64);
        if !vxs.is_empty() {
            let all: Vec<usize> = (0..vxs.len()).collect();
            let mut vtotal = 0.0;
            for idx in all.chunks(cfg.batch_size) {
                let x = gather(&vxs, idx, None)?;
                let y = gather(&vys, idx, None)?;
                let tape = gen.forward(&[&x], Mode::Eval, 0)?;
                vtotal += loss_bce_sigmoid(tape.node_output(logits), &y)?.0 * idx.len() as f64;
            }
            history.val_loss.push(finite(vtotal / vxs.len() as f64, "generator validation", epoch)?);
        }
        let current = *history.selection_loss().last().expect("pushed above");
        if best.as_ref().is_none_or(|(l, _)| current < *l) {
            history.best_epoch = epoch;
            best = Some((current, gen.clone()));
        }
    }
    if let Some((_, g)) = best {
        *gen = g;
    }
    Ok(history)
}

/// Where the pooler's inputs come from.
#[derive(Clone, Copy, Debug)]
pub enum PoolSource<'a> {
    /// Maps predicted by frozen generators, one per fused method.
    Predicted(&'a [ComputeGraph]),
    /// Full-reference maps supplied with each sample.
    GroundTruth,
    /// The distorted patch itself.
    RawImage,
}

impl PoolSource<'_> {
    pub fn token(&self) -> &'static str {
        match self {
            PoolSource::Predicted(_) => "predicted",
            PoolSource::GroundTruth => "ground_truth",
            PoolSource::RawImage => "raw_image",
        }
    }
}

#[derive(Clone, Debug)]
pub struct PoolSample {
    /// The distorted patch; required by the predicted and raw sources.
    pub image: Option<Image>,
    /// Ground-truth maps in fusion order; may be empty for other sources.
    pub maps: Vec<QualityMap>,
    pub score: f64,
}

fn prepare_pool_set(source: PoolSource, fusion: &Fusion, set: &[PoolSample]) -> Result<(Vec<Vec<Tensor4>>, Vec<f64>)> {
    for (k, s) in set.iter().enumerate() {
        if !(0.0..=100.0).contains(&s.score) {
            return Err(Error::Domain(format!("sample {k}: score {} outside [0,100]", s.score)));
        }
    }
    let inputs: Vec<Result<Vec<Tensor4>>> =
        par::map_indexed(set.len(), |k| Ok(pooler_inputs(source, fusion, set[k].image.as_ref(), &set[k].maps)?.0));
    let inputs = inputs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((inputs, set.iter().map(|s| s.score).collect()))
}

fn gather_inputs(inputs: &[Vec<Tensor4>], idx: &[usize], flips: Option<&[bool]>) -> Result<Vec<Tensor4>> {
    let streams = inputs.first().map_or(0, Vec::len);
    (0..streams)
        .map(|s| {
            let per: Vec<Tensor4> = inputs.iter().map(|v| v[s].clone()).collect();
            gather(&per, idx, flips)
        })
        .collect()
}

fn score_tensor(scores: &[f64], idx: &[usize]) -> Tensor4 {
    Tensor4::from_vec([idx.len(), 1, 1, 1], idx.iter().map(|&i| scores[i]).collect()).expect("score dims")
}

/// Regresses scores with squared error. Generators used as a source are only
/// read; their checksums are compared before and after as a guard.
pub fn train_pooler(
    pool: &mut ComputeGraph,
    source: PoolSource,
    fusion: &Fusion,
    train: &[PoolSample],
    val: &[PoolSample],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no pooler training samples".into()));
    }
    let checksums_before: Vec<u64> = match source {
        PoolSource::Predicted(gens) => gens.iter().map(ComputeGraph::checksum).collect(),
        _ => Vec::new(),
    };
    let (xs, ys) = prepare_pool_set(source, fusion, train)?;
    let (vxs, vys) = prepare_pool_set(source, fusion, val)?;

    if cfg.init_score_bias {
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let last = pool.params().len() - 1;
        match pool.params_mut()[last].get_mut(1) {
            Some(bias) if bias.value.len() == 1 => bias.value[0] = mean,
            _ => return Err(Error::Config("pooler does not end in a scalar dense layer".into())),
        }
    }

    let stream = SeedStream::new(cfg.seed);
    let mut adam = cfg.adam();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ComputeGraph)> = None;
    for epoch in 0..cfg.epochs {
        let flips = flip_flags(xs.len(), cfg.hflip, &stream, epoch);
        let mut total = 0.0;
        for (b, idx) in epoch_batches(xs.len(), cfg.batch_size, &stream, epoch).iter().enumerate() {
            let x = gather_inputs(&xs, idx, Some(&flips))?;
            let refs: Vec<&Tensor4> = x.iter().collect();
            let tape = pool.forward(&refs, Mode::Train, stream.derive("dropout", (epoch * 1_000_003 + b) as u64))?;
            let (loss, grad) = loss_mse(tape.output(), &score_tensor(&ys, idx))?;
            total += finite(loss, "pooler", epoch)? * idx.len() as f64;
            let grads = pool.backward(&tape, &grad)?;
            adam.step(pool, &grads)?;
            pool.update_running_stats(&tape)?;
        }
        history.train_loss.push(total / xs.len() as f64);
        if !vxs.is_empty() {
            let all: Vec<usize> = (0..vxs.len()).collect();
            let mut vtotal = 0.0;
            for idx in all.chunks(cfg.batch_size) {
                let x = gather_inputs(&vxs, idx, None)?;
                let refs: Vec<&Tensor4> = x.iter().collect();
                let out = pool.predict(&refs)?;
                vtotal += loss_mse(&out, &score_tensor(&vys, idx))?.0 * idx.len() as f64;
            }
            history.val_loss.push(finite(vtotal / vxs.len() as f64, "pooler validation", epoch)?);
        }
        let current = *history.selection_loss().last().expect("pushed above");
        if best.as_ref().is_none_or(|(l, _)| current < *l) {
            history.best_epoch = epoch;
            best = Some((current, pool.clone()));
        }
    }
    if let Some((_, g)) = best {
        *pool = g;
    }
    if let PoolSource::Predicted(gens) = source {
        let after: Vec<u64> = gens.iter().map(ComputeGraph::checksum).collect();
        if after != checksums_before {
            return Err(Error::Invariant("generator parameters changed during pooler training".into()));
        }
    }
    Ok(history)
}
