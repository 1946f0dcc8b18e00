//! Mini-batch training of the full pipeline: seeded initialization, SGD or
//! Adam, per-epoch evaluation, and the learning-rate sweep.
//!
//! Determinism contract: (config, seed, data) fixes every parameter, loss,
//! and metric bit-exactly. Per-example forward/backward passes run on
//! independent tapes — possibly on worker threads — and their gradients are
//! merged in example-index order by a single writer, so the result does not
//! depend on the worker count.

use crate::encoder::ParamKind;
use crate::graph::TopologyCache;
use crate::ingest::{DatasetSplit, Example};
use crate::metrics::{self, EvalRecord, MetricReport, MetricsError};
use crate::model::{self, ModelConfig, ModelError, ModelParams};
use crate::parallel;
use crate::tensor::Tape;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

/// Every knob of one training run. Dataset-dependent quantities (vocabulary
/// size, class count) are resolved at train time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub encoder_layers: usize,
    pub encoder_dim: usize,
    pub encoder_heads: usize,
    pub max_len: usize,
    pub pyramid_dim: usize,
    pub gnn_dims: Vec<usize>,
    pub graph_window: usize,
    pub knn: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            epochs: 15,
            batch_size: 16,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::adam_default(),
            encoder_layers: 4,
            encoder_dim: 64,
            encoder_heads: 4,
            max_len: 64,
            pyramid_dim: 64,
            gnn_dims: vec![64, 64],
            graph_window: 3,
            knn: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            encoder: crate::encoder::EncoderConfig {
                layers: self.encoder_layers,
                dim: self.encoder_dim,
                heads: self.encoder_heads,
                max_len: self.max_len,
            },
            pyramid_dim: self.pyramid_dim,
            gnn_dims: self.gnn_dims.clone(),
            graph_window: self.graph_window,
            knn: self.knn,
            vocab_size,
            num_classes,
        }
    }
}

/// Glorot-uniform weights, zero biases, unit gains, N(0, 0.02) embedding
/// tables; every draw comes from the one generator in canonical parameter
/// order, so a seed fixes the initialization bit-exactly.
pub fn init_params(config: &ModelConfig, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut params = ModelParams::zeros(config);
    let normal = Normal::new(0.0, 0.02).expect("valid embedding sigma");
    params.for_each_mut(&mut |_, kind, t| match kind {
        ParamKind::Weight => {
            let fan_in = t.shape()[0] as f64;
            let fan_out = t.shape()[1] as f64;
            let bound = (6.0 / (fan_in + fan_out)).sqrt();
            for v in t.data_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        ParamKind::Bias => {} // already zero
        ParamKind::Gain => {
            for v in t.data_mut() {
                *v = 1.0;
            }
        }
        ParamKind::Embedding => {
            for v in t.data_mut() {
                *v = normal.sample(rng);
            }
        }
    });
    params
}

pub fn init_params_seeded(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_params(config, &mut rng)
}

/// SGD or Adam with bias correction, state aligned with the canonical
/// parameter order.
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: usize,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &ModelParams) -> Optimizer {
        let mut sizes = Vec::new();
        params.for_each(&mut |_, _, t| sizes.push(t.numel()));
        Optimizer {
            kind,
            learning_rate,
            step: 0,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update from the gradients stored on the parameters.
    /// Tensors without a gradient are left untouched.
    pub fn apply(&mut self, params: &mut ModelParams) {
        self.step += 1;
        let lr = self.learning_rate;
        let step = self.step as f64;
        let mut index = 0;
        match self.kind {
            OptimizerKind::Sgd => params.for_each_mut(&mut |_, _, t| {
                if let Some(grad) = t.grad().map(<[f64]>::to_vec) {
                    for (v, g) in t.data_mut().iter_mut().zip(&grad) {
                        *v -= lr * g;
                    }
                }
                index += 1;
            }),
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let bc1 = 1.0 - beta1.powf(step);
                let bc2 = 1.0 - beta2.powf(step);
                let m_all = &mut self.first_moment;
                let v_all = &mut self.second_moment;
                params.for_each_mut(&mut |_, _, t| {
                    if let Some(grad) = t.grad().map(<[f64]>::to_vec) {
                        let m = &mut m_all[index];
                        let v = &mut v_all[index];
                        for (i, (value, &g)) in t.data_mut().iter_mut().zip(&grad).enumerate() {
                            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                            let m_hat = m[i] / bc1;
                            let v_hat = v[i] / bc2;
                            *value -= lr * m_hat / (v_hat.sqrt() + epsilon);
                        }
                    }
                    index += 1;
                });
            }
        }
    }
}

/// Per-epoch record. Wall time stays in memory and in the log stream only;
/// the CSV is timestamp-free so identical runs serialize identically.
#[derive(Debug, Clone)]
pub struct EpochEntry {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub eval: MetricReport,
    pub wall: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub entries: Vec<EpochEntry>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_loss,train_accuracy,eval_accuracy,eval_macro_precision,eval_macro_f1,eval_macro_auc\n",
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                e.eval.accuracy,
                e.eval.macro_precision,
                e.eval.macro_f1,
                e.eval.macro_auc
            );
        }
        out
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub model_config: ModelConfig,
    pub history: TrainHistory,
    pub final_eval: MetricReport,
}

struct ExampleGrad {
    loss: f64,
    correct: bool,
    grads: Vec<Vec<f64>>,
}

fn example_gradients(
    config: &ModelConfig,
    params: &ModelParams,
    cache: &TopologyCache,
    example: &Example,
) -> Result<ExampleGrad, ModelError> {
    let mut tape = Tape::new();
    let ids = model::register(&mut tape, params);
    let pass = model::forward(
        &mut tape,
        config,
        &ids,
        &example.token_ids,
        Some(example.label),
        Some(cache),
    )?;
    let loss_id = pass.loss.expect("label supplied");
    let loss = tape.value(loss_id)[0];
    tape.backward(loss_id)?;
    let grads = ids
        .ordered()
        .iter()
        .map(|&id| tape.grad(id).expect("leaf gradient").to_vec())
        .collect();
    Ok(ExampleGrad {
        loss,
        correct: pass.prediction.predicted_class == example.label,
        grads,
    })
}

fn check_splits(train: &DatasetSplit, eval: &DatasetSplit) -> Result<(), TrainError> {
    train.validate().map_err(|e| TrainError::Data(e.to_string()))?;
    eval.validate().map_err(|e| TrainError::Data(e.to_string()))?;
    if train.vocab.hash() != eval.vocab.hash() {
        return Err(TrainError::Data(
            "train and eval splits use different vocabularies".into(),
        ));
    }
    if train.num_classes != eval.num_classes {
        return Err(TrainError::Data(format!(
            "class count mismatch: train {} vs eval {}",
            train.num_classes, eval.num_classes
        )));
    }
    if train.is_empty() {
        return Err(TrainError::Data("training split is empty".into()));
    }
    Ok(())
}

/// Trains from scratch and evaluates after every epoch.
pub fn train(
    config: &TrainConfig,
    train_split: &DatasetSplit,
    eval_split: &DatasetSplit,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    check_splits(train_split, eval_split)?;
    let model_config = config.model_config(train_split.vocab.len(), train_split.num_classes);
    model_config.validate()?;
    if let Some(ex) = train_split
        .examples
        .iter()
        .chain(&eval_split.examples)
        .find(|ex| ex.token_ids.len() > config.max_len)
    {
        return Err(TrainError::Data(format!(
            "example of length {} exceeds max_len {}",
            ex.token_ids.len(),
            config.max_len
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_params(&model_config, &mut rng);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &params);
    let cache = TopologyCache::new(config.graph_window);

    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_split.len()).collect();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_split.examples[i]).collect();
            let results = parallel::map_ordered(&batch, |ex| {
                example_gradients(&model_config, &params, &cache, ex)
            });

            let scale = 1.0 / batch.len() as f64;
            let mut accumulated: Option<Vec<Vec<f64>>> = None;
            for result in results {
                let eg = result?;
                if !eg.loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                        loss: eg.loss,
                    });
                }
                loss_sum += eg.loss;
                correct += eg.correct as usize;
                match accumulated.as_mut() {
                    None => accumulated = Some(eg.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&eg.grads) {
                            for (x, y) in a.iter_mut().zip(g) {
                                *x += y;
                            }
                        }
                    }
                }
            }

            let mut accumulated = accumulated.expect("non-empty batch");
            for tensor_grad in accumulated.iter_mut() {
                for g in tensor_grad.iter_mut() {
                    *g *= scale;
                }
            }
            let mut index = 0;
            params.for_each_mut(&mut |_, _, t| {
                t.accumulate_grad(&accumulated[index]);
                index += 1;
            });
            optimizer.apply(&mut params);
            params.zero_grads();
        }

        let (_, eval_report) = evaluate(&model_config, &params, eval_split)?;
        history.entries.push(EpochEntry {
            epoch,
            train_loss: loss_sum / train_split.len() as f64,
            train_accuracy: correct as f64 / train_split.len() as f64,
            eval: eval_report,
            wall: started.elapsed(),
        });
    }

    let final_eval = history
        .entries
        .last()
        .map(|e| e.eval.clone())
        .expect("epochs >= 1");
    Ok(TrainOutcome {
        params,
        model_config,
        history,
        final_eval,
    })
}

/// Scores a split with frozen parameters; records come back in split order.
pub fn evaluate(
    config: &ModelConfig,
    params: &ModelParams,
    split: &DatasetSplit,
) -> Result<(Vec<EvalRecord>, MetricReport), TrainError> {
    if split.is_empty() {
        return Err(TrainError::Data("evaluation split is empty".into()));
    }
    let cache = TopologyCache::new(config.graph_window);
    let results = parallel::map_ordered(&split.examples, |ex| -> Result<EvalRecord, ModelError> {
        let mut tape = Tape::new();
        let ids = model::register(&mut tape, params);
        let pass = model::forward(&mut tape, config, &ids, &ex.token_ids, None, Some(&cache))?;
        Ok(EvalRecord {
            label: ex.label,
            probs: pass.prediction.probs,
        })
    });
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        records.push(r?);
    }
    let report = metrics::report(&records)?;
    Ok((records, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub learning_rate: f64,
    pub final_auc: f64,
    pub final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Rate with the highest final AUC; first of equals wins.
    pub best_rate: f64,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("learning_rate,final_auc,final_accuracy,best\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                row.learning_rate,
                row.final_auc,
                row.final_accuracy,
                row.learning_rate == self.best_rate
            );
        }
        out
    }

    pub fn auc_spread(&self) -> f64 {
        let max = self.rows.iter().map(|r| r.final_auc).fold(f64::MIN, f64::max);
        let min = self.rows.iter().map(|r| r.final_auc).fold(f64::MAX, f64::min);
        max - min
    }
}

/// Trains once per rate with identical seed and data order, reporting the
/// final eval AUC and accuracy of each run.
pub fn lr_sweep(
    base_config: &TrainConfig,
    rates: &[f64],
    train_split: &DatasetSplit,
    eval_split: &DatasetSplit,
) -> Result<SweepReport, TrainError> {
    if rates.len() < 2 {
        return Err(TrainError::Config(format!(
            "sweep needs at least 2 rates, got {}",
            rates.len()
        )));
    }
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut config = base_config.clone();
        config.learning_rate = rate;
        let outcome = train(&config, train_split, eval_split)?;
        rows.push(SweepRow {
            learning_rate: rate,
            final_auc: outcome.final_eval.macro_auc,
            final_accuracy: outcome.final_eval.accuracy,
        });
    }
    let best_rate = rows
        .iter()
        .max_by(|a, b| a.final_auc.total_cmp(&b.final_auc))
        .map(|r| r.learning_rate)
        .expect("at least two rows");
    Ok(SweepReport { rows, best_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{make_synthetic, SyntheticConfig};

    fn tiny_train_config() -> TrainConfig {
        TrainConfig {
            seed: 7,
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            encoder_layers: 2,
            encoder_dim: 8,
            encoder_heads: 2,
            max_len: 16,
            pyramid_dim: 8,
            gnn_dims: vec![8, 8],
            ..TrainConfig::default()
        }
    }

    fn tiny_data(seed: u64) -> (DatasetSplit, DatasetSplit) {
        let train = make_synthetic(&SyntheticConfig {
            seed,
            n_per_class: 8,
            num_classes: 3,
            vocab_size: 40,
            signal_tokens_per_class: 5,
            noise_frac: 0.2,
            min_len: 6,
            max_len: 10,
        })
        .unwrap();
        let eval = make_synthetic(&SyntheticConfig {
            seed: seed + 1,
            n_per_class: 4,
            num_classes: 3,
            vocab_size: 40,
            signal_tokens_per_class: 5,
            noise_frac: 0.2,
            min_len: 6,
            max_len: 10,
        })
        .unwrap();
        (train, eval)
    }

    #[test]
    fn init_is_seed_deterministic_and_rule_abiding() {
        let cfg = tiny_train_config().model_config(20, 3);
        let a = init_params_seeded(&cfg, 5);
        let b = init_params_seeded(&cfg, 5);
        assert_eq!(a, b);
        let c = init_params_seeded(&cfg, 6);
        assert_ne!(a, c);

        a.for_each(&mut |name, kind, t| match kind {
            ParamKind::Bias => assert!(
                t.data().iter().all(|&v| v == 0.0),
                "{name} should start at zero"
            ),
            ParamKind::Gain => assert!(t.data().iter().all(|&v| v == 1.0)),
            ParamKind::Weight => {
                let bound = (6.0 / (t.shape()[0] as f64 + t.shape()[1] as f64)).sqrt();
                assert!(
                    t.data().iter().all(|&v| v.abs() <= bound),
                    "{name} exceeds its Glorot bound"
                );
            }
            ParamKind::Embedding => {
                assert!(t.data().iter().any(|&v| v != 0.0));
            }
        });
    }

    #[test]
    fn glorot_bound_matches_hand_computation() {
        // 4x4: sqrt(6/8) ~= 0.8660
        let cfg = ModelConfig {
            encoder: crate::encoder::EncoderConfig {
                layers: 1,
                dim: 4,
                heads: 1,
                max_len: 4,
            },
            pyramid_dim: 4,
            gnn_dims: vec![4],
            graph_window: 3,
            knn: None,
            vocab_size: 4,
            num_classes: 2,
        };
        let params = init_params_seeded(&cfg, 1);
        let bound = (6.0f64 / 8.0).sqrt();
        assert!((bound - 0.8660).abs() < 1e-4);
        for v in params.gnn.layers[0].data() {
            assert!(v.abs() <= bound);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let cfg = tiny_train_config().model_config(20, 3);
        let mut params = init_params_seeded(&cfg, 9);
        let before = params.clone();
        let mut opt = Optimizer::new(OptimizerKind::adam_default(), 0.0, &params);
        for _ in 0..5 {
            params.for_each_mut(&mut |_, _, t| {
                let ones = vec![1.0; t.numel()];
                t.accumulate_grad(&ones);
            });
            opt.apply(&mut params);
            params.zero_grads();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_size_is_lr_up_to_epsilon() {
        let cfg = tiny_train_config().model_config(20, 3);
        let mut params = init_params_seeded(&cfg, 10);
        let before = params.clone();
        let lr = 1e-3;
        let mut opt = Optimizer::new(OptimizerKind::adam_default(), lr, &params);
        // synthetic gradient, fixed magnitude per coordinate
        params.for_each_mut(&mut |_, _, t| {
            let g: Vec<f64> = (0..t.numel())
                .map(|i| if i % 2 == 0 { 0.5 } else { -0.25 })
                .collect();
            t.accumulate_grad(&g);
        });
        opt.apply(&mut params);

        let mut before_flat = Vec::new();
        before.for_each(&mut |_, _, t| before_flat.extend_from_slice(t.data()));
        let mut after_flat = Vec::new();
        params.for_each(&mut |_, _, t| after_flat.extend_from_slice(t.data()));
        for (i, (b, a)) in before_flat.iter().zip(&after_flat).enumerate() {
            let delta = (a - b).abs();
            assert!(
                (delta - lr).abs() < 1e-6 * lr.max(1e-12) + 1e-10,
                "coordinate {i} moved {delta}, expected ~{lr}"
            );
            // sign opposes the gradient
            let g = if i % 2 == 0 { 0.5 } else { -0.25 };
            assert!((a - b) * g < 0.0);
        }
    }

    #[test]
    fn sgd_step_decreases_batch_loss_at_tiny_rate() {
        let (train_split, _) = tiny_data(3);
        let mut config = tiny_train_config();
        config.optimizer = OptimizerKind::Sgd;
        config.learning_rate = 1e-6;
        let mcfg = config.model_config(train_split.vocab.len(), train_split.num_classes);
        let cache = TopologyCache::new(config.graph_window);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = init_params(&mcfg, &mut rng);
        let mut opt = Optimizer::new(config.optimizer, config.learning_rate, &params);

        let batch: Vec<&Example> = train_split.examples.iter().take(4).collect();
        let batch_loss = |p: &ModelParams| -> f64 {
            batch
                .iter()
                .map(|ex| {
                    example_gradients(&mcfg, p, &cache, ex).unwrap().loss
                })
                .sum::<f64>()
                / batch.len() as f64
        };

        let before = batch_loss(&params);
        // accumulate mean gradient and step once
        let mut acc: Option<Vec<Vec<f64>>> = None;
        for ex in &batch {
            let eg = example_gradients(&mcfg, &params, &cache, ex).unwrap();
            match acc.as_mut() {
                None => acc = Some(eg.grads),
                Some(a) => {
                    for (x, g) in a.iter_mut().zip(&eg.grads) {
                        for (xv, gv) in x.iter_mut().zip(g) {
                            *xv += gv;
                        }
                    }
                }
            }
        }
        let mut acc = acc.unwrap();
        for t in acc.iter_mut() {
            for g in t.iter_mut() {
                *g /= batch.len() as f64;
            }
        }
        let mut index = 0;
        params.for_each_mut(&mut |_, _, t| {
            t.accumulate_grad(&acc[index]);
            index += 1;
        });
        opt.apply(&mut params);
        params.zero_grads();
        let after = batch_loss(&params);
        assert!(after < before, "loss {before} -> {after} should decrease");
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (train_split, eval_split) = tiny_data(5);
        let config = tiny_train_config();
        let a = train(&config, &train_split, &eval_split).unwrap();
        let b = train(&config, &train_split, &eval_split).unwrap();
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        assert_eq!(a.final_eval.to_csv(), b.final_eval.to_csv());
        assert_eq!(a.params, b.params);
        for (x, y) in a
            .history
            .entries
            .iter()
            .zip(&b.history.entries)
        {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        }
    }

    #[test]
    fn history_has_one_entry_per_epoch_with_finite_losses() {
        let (train_split, eval_split) = tiny_data(6);
        let config = tiny_train_config();
        let outcome = train(&config, &train_split, &eval_split).unwrap();
        assert_eq!(outcome.history.entries.len(), config.epochs);
        for e in &outcome.history.entries {
            assert!(e.train_loss.is_finite());
        }
        let csv = outcome.history.to_csv();
        assert_eq!(csv.lines().count(), config.epochs + 1);
        assert!(!csv.contains("wall"), "timestamps stay out of the CSV");
    }

    #[test]
    fn mismatched_vocabularies_are_refused() {
        let (train_split, _) = tiny_data(7);
        let other = make_synthetic(&SyntheticConfig {
            seed: 1,
            n_per_class: 4,
            num_classes: 3,
            vocab_size: 50,
            signal_tokens_per_class: 5,
            noise_frac: 0.2,
            min_len: 6,
            max_len: 10,
        })
        .unwrap();
        let err = train(&tiny_train_config(), &train_split, &other).unwrap_err();
        assert!(matches!(err, TrainError::Data(_)));
    }

    #[test]
    fn invalid_config_is_rejected_before_work() {
        let (train_split, eval_split) = tiny_data(8);
        let mut config = tiny_train_config();
        config.learning_rate = 0.0;
        assert!(matches!(
            train(&config, &train_split, &eval_split),
            Err(TrainError::Config(_))
        ));
        let mut config = tiny_train_config();
        config.epochs = 0;
        assert!(matches!(
            train(&config, &train_split, &eval_split),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn sweep_needs_two_rates_and_reports_rows_in_order() {
        let (train_split, eval_split) = tiny_data(9);
        let mut config = tiny_train_config();
        config.epochs = 1;
        assert!(matches!(
            lr_sweep(&config, &[1e-4], &train_split, &eval_split),
            Err(TrainError::Config(_))
        ));
        let report = lr_sweep(
            &config,
            &[1e-5, 1e-4, 1e-3],
            &train_split,
            &eval_split,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.rows[0].learning_rate, 1e-5);
        assert!(report.rows.iter().any(|r| r.learning_rate == report.best_rate));
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.matches("true").count(), 1);
    }

    #[test]
    fn duplicate_sweep_rates_give_identical_rows() {
        let (train_split, eval_split) = tiny_data(10);
        let mut config = tiny_train_config();
        config.epochs = 1;
        let report = lr_sweep(&config, &[1e-4, 1e-4], &train_split, &eval_split).unwrap();
        assert_eq!(report.rows[0].final_auc, report.rows[1].final_auc);
        assert_eq!(report.rows[0].final_accuracy, report.rows[1].final_accuracy);
    }
}
