//! Pairwise training: enumerate pairs, mini-batch them, run Adam on the
//! hinge loss, and log validation metrics per epoch.

use super::model::{item_from_post, item_from_topic, Model};
use super::{pairwise_hinge_loss, sample_pairs, AblationMask, PairIdx, ParamSet};
use crate::config::ModelDims;
use crate::data::{DatasetSplit, TopicPostRecord};
use crate::encoders::ImageBackend;
use crate::error::{Error, Result};
use crate::metrics::evaluate_topics;
use crate::numerics::{Tape, Tensor};
use crate::rng::substream;
use serde::{Deserialize, Serialize};

/// Training hyperparameters. Defaults: batch 4, margin 1, Adam with the
/// conventional moment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            margin: 1.0,
            learning_rate: 1e-3,
            epochs: 20,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.margin <= 0.0 {
            return Err(Error::invalid("margin must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must be in [0, 1)")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Adam over a parameter set; moment buffers follow the registry order so
/// updates are deterministic.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(params: &ParamSet, cfg: &TrainConfig) -> Self {
        let m = (0..params.len()).map(|i| vec![0.0; params.tensor_at(i).numel()]).collect();
        let v = (0..params.len()).map(|i| vec![0.0; params.tensor_at(i).numel()]).collect();
        Adam {
            m,
            v,
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..grads.len() {
            let g = grads[k].data();
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let p = params.tensor_at_mut(k).data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.epsilon);
            }
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_map: f64,
    pub val_ndcg3: f64,
    pub val_ndcg5: f64,
}

/// Mean hinge loss over one mini-batch plus gradients per parameter. The
/// topic encoding is shared between the two posts of a pair; pairs whose
/// margin is already satisfied contribute nothing to the gradient.
fn batch_step(
    model: &Model<'_>,
    records: &[TopicPostRecord],
    batch: &[PairIdx],
    gamma: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let sv = model.bind(&mut tape);

    let mut loss_total = 0.0;
    let mut active = Vec::new();
    for pair in batch {
        let record = &records[pair.topic];
        let topic_item = item_from_topic(record, model.dims.l_d);
        let topic_latent = model.encode_latent(&mut tape, &sv, &topic_item)?;
        let pos_item = item_from_post(&record.posts[pair.pos], model.dims.l_d);
        let neg_item = item_from_post(&record.posts[pair.neg], model.dims.l_d);
        let s_pos = model.score_from_latents(&mut tape, &sv, topic_latent, &pos_item, &mut None)?;
        let s_neg = model.score_from_latents(&mut tape, &sv, topic_latent, &neg_item, &mut None)?;

        let hinge =
            pairwise_hinge_loss(tape.value(s_pos).item()?, tape.value(s_neg).item()?, gamma);
        loss_total += hinge;
        if hinge > 0.0 {
            // active pair: d hinge/d s_pos = -1, d hinge/d s_neg = +1, so
            // the differentiable part is (-s_pos + s_neg); γ is constant
            let neg_pos = tape.scale(s_pos, -1.0);
            active.push(tape.add(neg_pos, s_neg)?);
        }
    }

    let batch_len = batch.len() as f64;
    let grads = if active.is_empty() {
        (0..model.params.len())
            .map(|i| Tensor::zeros(model.params.tensor_at(i).shape().to_vec()))
            .collect()
    } else {
        let mut total = active[0];
        for &a in &active[1..] {
            total = tape.add(total, a)?;
        }
        let scaled = tape.scale(total, 1.0 / batch_len);
        tape.backward(scaled)?;
        sv.vars().iter().map(|&v| tape.grad_or_zeros(v)).collect()
    };
    Ok((loss_total / batch_len, grads))
}

/// Train from a seeded init. All pairs are enumerated and shuffled per
/// epoch; returns the best-epoch parameters by validation NDCG@3 together
/// with the full epoch log. Fully reproducible from (config, data).
pub fn train(
    records: &[TopicPostRecord],
    split: &DatasetSplit,
    dims: &ModelDims,
    backend: &ImageBackend,
    mask: AblationMask,
    cfg: &TrainConfig,
) -> Result<(ParamSet, Vec<EpochStats>)> {
    cfg.validate()?;
    mask.validate()?;
    let mut params = ParamSet::init(dims, backend, cfg.seed)?;
    let mut opt = Adam::new(&params, cfg);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ParamSet)> = None;

    for epoch in 1..=cfg.epochs {
        let mut rng = substream(cfg.seed, &format!("shuffle/epoch/{epoch}"));
        let pairs = sample_pairs(records, &split.train, &mut rng);
        if pairs.is_empty() {
            return Err(Error::Training(
                "no sampleable pairs: every training topic has uniform labels".into(),
            ));
        }

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in pairs.chunks(cfg.batch_size) {
            let model = Model::new(dims, backend, mask, &params)?;
            let (loss, grads) = batch_step(&model, records, batch, cfg.margin)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch} after {seen} pairs"
                )));
            }
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            opt.step(&mut params, &grads);
        }
        let train_loss = loss_sum / seen as f64;

        let model = Model::new(dims, backend, mask, &params)?;
        let (val_map, val_ndcg3, val_ndcg5) = evaluate_topics(&model, records, &split.val)?;
        log.push(EpochStats { epoch, train_loss, val_map, val_ndcg3, val_ndcg5 });
        if best.as_ref().map_or(true, |(b, _)| val_ndcg3 > *b) {
            best = Some((val_ndcg3, params.clone()));
        }
    }

    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_dataset, SynthConfig};

    fn tiny_setup() -> (Vec<TopicPostRecord>, DatasetSplit, ModelDims) {
        let cfg = SynthConfig {
            vocab_size: 60,
            l_d: 6,
            l_i: 3,
            d_i: 4,
            topics: 6,
            posts_per_topic: 3,
            key_tokens: 3,
            seed: 5,
            ..SynthConfig::default()
        };
        let records = generate_synthetic(&cfg).unwrap();
        let split = split_dataset(records.len(), 5).unwrap();
        let dims = ModelDims {
            vocab_size: cfg.vocab_size,
            l_d: cfg.l_d,
            l_i: cfg.l_i,
            d_emb: 6,
            d_d: 6,
            d_i: cfg.d_i,
            d_c: 6,
            kernel_sizes: vec![1, 3],
            graph_layers: 1,
        };
        (records, split, dims)
    }

    #[test]
    fn same_seed_identical_logs_and_params() {
        let (records, split, dims) = tiny_setup();
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let backend = ImageBackend::Passthrough;
        let a = train(&records, &split, &dims, &backend, AblationMask::full(), &cfg).unwrap();
        let b = train(&records, &split, &dims, &backend, AblationMask::full(), &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn uniform_labels_are_an_explicit_error() {
        let (mut records, split, dims) = tiny_setup();
        for r in &mut records {
            for p in &mut r.posts {
                p.label = 2;
            }
        }
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let err = train(&records, &split, &dims, &ImageBackend::Passthrough, AblationMask::full(), &cfg)
            .unwrap_err()
            .to_string();
        assert!(err.contains("no sampleable pairs"), "{err}");
    }

    #[test]
    fn single_pair_dataset_drives_loss_to_zero() {
        // one topic, two posts with labels [4, 0]: a linear head satisfies
        // the margin, so enough epochs reach exactly zero hinge loss
        let cfg = SynthConfig {
            vocab_size: 40,
            l_d: 4,
            l_i: 2,
            d_i: 3,
            topics: 5,
            posts_per_topic: 2,
            key_tokens: 2,
            seed: 9,
            ..SynthConfig::default()
        };
        let mut records = generate_synthetic(&cfg).unwrap();
        records[0].posts[0].label = 4;
        records[0].posts[1].label = 0;
        let split = DatasetSplit { train: vec![0], val: vec![1], test: vec![2, 3, 4] };
        let dims = ModelDims {
            vocab_size: cfg.vocab_size,
            l_d: cfg.l_d,
            l_i: cfg.l_i,
            d_emb: 4,
            d_d: 4,
            d_i: cfg.d_i,
            d_c: 4,
            kernel_sizes: vec![1],
            graph_layers: 1,
        };
        let tcfg = TrainConfig {
            epochs: 120,
            learning_rate: 0.02,
            seed: 1,
            ..TrainConfig::default()
        };
        let (_, log) =
            train(&records, &split, &dims, &ImageBackend::Passthrough, AblationMask::full(), &tcfg)
                .unwrap();
        let final_loss = log.last().unwrap().train_loss;
        assert_eq!(final_loss, 0.0, "loss stuck at {final_loss}");
    }

    #[test]
    fn adam_ignores_zero_gradients() {
        let dims = crate::ranking::model::tests::micro_dims();
        let backend = ImageBackend::Passthrough;
        let mut params = ParamSet::init(&dims, &backend, 2).unwrap();
        let before = params.clone();
        let zeros: Vec<Tensor> = (0..params.len())
            .map(|i| Tensor::zeros(params.tensor_at(i).shape().to_vec()))
            .collect();
        let mut opt = Adam::new(&params, &TrainConfig::default());
        for _ in 0..3 {
            opt.step(&mut params, &zeros);
        }
        assert_eq!(params, before);
    }
}
