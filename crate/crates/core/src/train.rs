//! Minibatch training with the ranking loss, in joint or split strategy.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::batchnorm::{BatchNormState, BnMode};
use crate::config::{Branch, RunConfig, Strategy};
use crate::data::Corpus;
use crate::error::Error;
use crate::eval::{recall_at_k, Recall, DEFAULT_KS};
use crate::loss::ranking_loss;
use crate::model::Model;
use crate::optim::{adam_step, AdamState};
use crate::params::Bound;
use crate::tensor::{Result as TResult, Tensor};

pub const LOG_HEADER: &str = "epoch,branch,loss,i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10";

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub branch: String,
    pub loss: f64,
    pub validation: Option<Recall>,
}

impl EpochLog {
    pub fn csv_line(&self) -> String {
        let recall = match &self.validation {
            Some(r) => r.csv_fields(),
            None => ",,,,,".to_string(),
        };
        format!("{},{},{:.6},{}", self.epoch, self.branch, self.loss, recall)
    }
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for l in log {
        let _ = writeln!(s, "{}", l.csv_line());
    }
    s
}

pub fn write_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<(), Error> {
    let path = path.as_ref();
    std::fs::write(path, log_to_csv(log)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// One model for the joint strategy, SGR then SAF for the split one.
    pub models: Vec<Model>,
    pub log: Vec<EpochLog>,
}

/// Sum of the ranking losses of every head the model carries.
pub fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    images: &[&Tensor],
    texts: &[&[usize]],
    groups: &[usize],
    bn: &mut BatchNormState,
) -> TResult<Var> {
    let scores = model.forward_batch(tape, bound, images, texts, bn)?;
    let mut total: Option<Var> = None;
    for s in [scores.sgr, scores.saf, scores.ave].into_iter().flatten() {
        let l = ranking_loss(tape, s, model.config.margin, Some(groups))?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    total.ok_or_else(|| crate::tensor::TensorError::Invalid("model has no score head".into()))
}

/// Loss and parameter gradients of one batch, without touching the model.
pub fn loss_and_grads(
    model: &Model,
    images: &[&Tensor],
    texts: &[&[usize]],
    groups: &[usize],
    bn: &mut BatchNormState,
) -> TResult<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let loss = batch_loss(model, &mut tape, &bound, images, texts, groups, bn)?;
    tape.backward(loss)?;
    Ok((tape.value(loss).item(), bound.grads(&tape)))
}

/// One optimizer step on the `(image, caption)` pairs of `batch`.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    corpus: &Corpus,
    images: &[Tensor],
    batch: &[(usize, usize)],
) -> Result<f64, Error> {
    let imgs: Vec<&Tensor> = batch.iter().map(|&(i, _)| &images[i]).collect();
    let txts: Vec<&[usize]> = batch.iter().map(|&(_, c)| corpus.captions[c].as_slice()).collect();
    let groups: Vec<usize> = batch.iter().map(|&(i, _)| i).collect();
    let mut bn = model.bn.clone().with_mode(BnMode::Training);
    let (loss, grads) = loss_and_grads(model, &imgs, &txts, &groups, &mut bn)?;
    if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("loss {loss} in {}", model.name)));
    }
    adam_step(&mut model.params, &grads, adam)?;
    model.bn = bn.with_mode(BnMode::Inference);
    model.updates += 1;
    Ok(loss)
}

/// Retrieval recall of `model` over a whole corpus.
pub fn evaluate(model: &Model, corpus: &Corpus, threads: usize) -> Result<Recall, Error> {
    let images = corpus.images();
    let imgs: Vec<&Tensor> = images.iter().collect();
    let txts: Vec<&[usize]> = corpus.captions.iter().map(Vec::as_slice).collect();
    let scores = model.score_raw(&imgs, &txts, threads)?.combined()?;
    recall_at_k(&scores, &corpus.image_of_text(), &DEFAULT_KS)
}

/// Trains one model for `epochs`, appending to `log` and reporting each
/// epoch to `on_epoch`. With a validation corpus the parameters of the epoch
/// with the best R-sum are returned.
pub fn train_model(
    mut model: Model,
    train: &Corpus,
    validation: Option<&Corpus>,
    epochs: usize,
    log: &mut Vec<EpochLog>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Model, Error> {
    let cfg = model.config.clone();
    let mut pairs = train.pairs();
    if pairs.len() < 2 {
        return Err(Error::Invalid(format!("{} training pairs; need at least 2", pairs.len())));
    }
    let images = train.images();
    let mut adam = AdamState::new(&model.params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(model_seed(&cfg, model.branch) ^ 0x5851_f42d_4c95_7f2d);
    let mut best: Option<(f64, Model)> = None;
    for epoch in 0..epochs {
        adam.learning_rate = cfg.learning_rate_at(epoch);
        pairs.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in pairs.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            total += train_step(&mut model, &mut adam, train, &images, batch)?;
            batches += 1;
        }
        let validation = validation.map(|v| evaluate(&model, v, cfg.threads)).transpose()?;
        if let Some(r) = &validation {
            if best.as_ref().is_none_or(|(b, _)| r.rsum() > *b) {
                best = Some((r.rsum(), model.clone()));
            }
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            branch: model.name.clone(),
            loss: total / batches.max(1) as f64,
            validation,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(best.map_or(model, |(_, m)| m))
}

fn model_seed(cfg: &RunConfig, branch: Branch) -> u64 {
    match (cfg.strategy, branch) {
        (Strategy::Split, Branch::Saf) => cfg.seed.wrapping_add(1),
        _ => cfg.seed,
    }
}

/// Builds and trains the model(s) described by `config`.
///
/// The joint strategy trains one model carrying the heads of
/// `config.branch`; the split strategy trains separate SGR and SAF models
/// that share nothing.
pub fn train(train: &Corpus, validation: Option<&Corpus>, config: &RunConfig, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainOutcome, Error> {
    config.validate()?;
    if train.captions.is_empty() {
        return Err(Error::Invalid("empty training corpus".into()));
    }
    if train.bank.k() != config.regions || train.bank.d_raw() != config.d_raw {
        return Err(Error::Invalid(format!(
            "corpus has K={}, d_raw={} but the config expects K={}, d_raw={}",
            train.bank.k(),
            train.bank.d_raw(),
            config.regions,
            config.d_raw
        )));
    }
    let vocab = train.vocab.len();
    let mut log = Vec::new();
    let models = match config.strategy {
        Strategy::Joint => {
            let m = Model::new(config, vocab, config.branch, model_seed(config, config.branch));
            vec![train_model(m, train, validation, config.epochs, &mut log, on_epoch)?]
        }
        Strategy::Split => {
            if config.branch != Branch::Joint {
                return Err(Error::Invalid(format!(
                    "split strategy trains both heads; branch is {}",
                    config.branch
                )));
            }
            let plan = [
                (Branch::Sgr, config.epochs_sgr.unwrap_or(config.epochs)),
                (Branch::Saf, config.epochs_saf.unwrap_or(config.epochs)),
            ];
            let mut out = Vec::new();
            for (branch, epochs) in plan {
                let m = Model::new(config, vocab, branch, model_seed(config, branch));
                out.push(train_model(m, train, validation, epochs, &mut log, on_epoch)?);
            }
            out
        }
    };
    Ok(TrainOutcome { models, log })
}
