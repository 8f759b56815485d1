use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{batch_indices, split_dataset, Graph, GraphDataset, SplitSpec};
use crate::model::ModelParams;
use crate::pooling::{hierarchical_pool, prediction_correction_loss, total_loss};
use crate::propagation::{expectation_loss, predict, propagate_graph};

use super::adam::{adam_step, lr_schedule, AdamConfig, AdamState};
use super::config::TrainingConfig;
use super::metrics::{EpochRecord, Phase, RunMetrics};

/// Adam moments for both parameter groups plus the per-phase epoch counters
/// that drive the learning-rate schedule and batch shuffling.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub expectation: AdamState,
    pub maximization: AdamState,
    pub expectation_epochs: usize,
    pub maximization_epochs: usize,
}

fn adam_config(config: &TrainingConfig) -> AdamConfig {
    AdamConfig {
        beta1: config.beta1,
        beta2: config.beta2,
        eps: config.adam_eps,
    }
}

fn tag_non_finite(e: Error, phase: Phase, em_round: usize, epoch: usize) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("{phase} phase, EM round {em_round}, epoch {epoch}: {msg}")),
        other => other,
    }
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

/// Batch shuffle stream: even for expectation epochs, odd for maximization.
fn batch_stream(phase: Phase, epoch: usize) -> u64 {
    2 * epoch as u64 + u64::from(phase == Phase::Maximization)
}

fn batches(n: usize, config: &TrainingConfig, phase: Phase, epoch: usize) -> Vec<Vec<usize>> {
    batch_indices(n, config.batch_size, config.seed, batch_stream(phase, epoch))
}

/// Class prediction for one graph.
pub fn predict_graph(params: &ModelParams, graph: &Graph, config: &TrainingConfig) -> Result<usize> {
    let mut tape = Tape::new();
    let vars = params.propagation.bind_frozen(&mut tape);
    let out = propagate_graph(&mut tape, graph, &vars, config.alpha, config.k)?;
    Ok(predict(tape.value(out.y_pred)))
}

/// Fraction of graphs whose argmax prediction matches the label.
pub fn evaluate(params: &ModelParams, ds: &GraphDataset, config: &TrainingConfig) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptySplit(format!("cannot evaluate on empty dataset `{}`", ds.name)));
    }
    let mut tape = Tape::new();
    let vars = params.propagation.bind_frozen(&mut tape);
    let base = tape.len();
    let mut correct = 0usize;
    for g in &ds.graphs {
        tape.truncate(base);
        let out = propagate_graph(&mut tape, g, &vars, config.alpha, config.k)?;
        if predict(tape.value(out.y_pred)) == g.label() {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Propagated features and expectation loss of every graph under frozen
/// propagation parameters.
fn frozen_propagation(params: &ModelParams, ds: &GraphDataset, config: &TrainingConfig) -> Result<Vec<(Matrix, f64)>> {
    let mut tape = Tape::new();
    let vars = params.propagation.bind_frozen(&mut tape);
    let base = tape.len();
    ds.graphs
        .iter()
        .map(|g| {
            tape.truncate(base);
            let out = propagate_graph(&mut tape, g, &vars, config.alpha, config.k)?;
            let l_exp = expectation_loss(&mut tape, out.y_pred, g.label())?;
            Ok((tape.value(out.z_pre).clone(), tape.scalar(l_exp)))
        })
        .collect()
}

/// Dataset means of |pre-cor loss| and of the signed loss.
fn precor_from_cache(params: &ModelParams, ds: &GraphDataset, cache: &[(Matrix, f64)], config: &TrainingConfig) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::EmptySplit("pre-cor error of empty dataset".into()));
    }
    let mut tape = Tape::new();
    let pool_vars = params.pooling.bind_frozen(&mut tape);
    let base = tape.len();
    let (mut abs_total, mut total) = (0.0, 0.0);
    for (g, (z_pre, _)) in ds.graphs.iter().zip(cache) {
        tape.truncate(base);
        let z = tape.constant(z_pre.clone());
        let trace = hierarchical_pool(&mut tape, g, z, &pool_vars, config.s_thre)?;
        let l = prediction_correction_loss(&mut tape, trace.z_cor, z, &trace.composed_map, &trace.coarse_edges)?;
        abs_total += tape.scalar(l).abs();
        total += tape.scalar(l);
    }
    let n = ds.len() as f64;
    Ok((abs_total / n, total / n))
}

/// Dataset mean of |pre-cor loss| under the current parameters.
pub fn mean_precor_error(params: &ModelParams, ds: &GraphDataset, config: &TrainingConfig) -> Result<f64> {
    let cache = frozen_propagation(params, ds, config)?;
    Ok(precor_from_cache(params, ds, &cache, config)?.0)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `config.epochs` epochs of mini-batch Adam on the batch-mean expectation
/// loss. Only the propagation parameters and their optimizer state change.
pub fn expectation_phase(
    train: &GraphDataset,
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    config: &TrainingConfig,
    val: Option<&GraphDataset>,
    em_round: usize,
) -> Result<Vec<EpochRecord>> {
    if train.is_empty() {
        return Err(Error::EmptySplit("expectation phase needs training graphs".into()));
    }
    let adam = adam_config(config);
    let mut records = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let epoch = opt.expectation_epochs;
        let lr = lr_schedule(epoch, config.lr);
        let mut batch_losses = Vec::new();
        for batch in batches(train.len(), config, Phase::Expectation, epoch) {
            let loss = expectation_batch(train, &batch, params, &mut opt.expectation, &adam, lr, config)
                .map_err(|e| tag_non_finite(e, Phase::Expectation, em_round, epoch))?;
            batch_losses.push(loss);
        }
        let val_acc = val.map(|v| evaluate(params, v, config)).transpose()?;
        records.push(EpochRecord {
            epoch,
            phase: Phase::Expectation,
            em_round,
            l_exp: mean(&batch_losses),
            l_precor: None,
            l_tot: None,
            val_acc,
        });
        opt.expectation_epochs += 1;
    }
    Ok(records)
}

fn expectation_batch(
    train: &GraphDataset,
    batch: &[usize],
    params: &mut ModelParams,
    state: &mut AdamState,
    adam: &AdamConfig,
    lr: f64,
    config: &TrainingConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.propagation.bind(&mut tape);
    let mut total: Option<Var> = None;
    for &i in batch {
        let g = &train.graphs[i];
        let out = propagate_graph(&mut tape, g, &vars, config.alpha, config.k)?;
        let l = expectation_loss(&mut tape, out.y_pred, g.label())?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let total = total.expect("non-empty batch");
    let loss = tape.scale(total, 1.0 / batch.len() as f64)?;
    let value = tape.scalar(loss);
    check_finite("batch expectation loss", value)?;
    let mut grads = tape.backward(loss)?;
    let g: Vec<Matrix> = vars.to_vec().into_iter().map(|v| grads.take(v)).collect();
    adam_step(&mut params.propagation.arrays_mut(), &g, state, adam, lr)?;
    Ok(value)
}

/// Phase statistics besides the per-epoch rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MaximizationOutcome {
    pub records: Vec<EpochRecord>,
    /// Mean |pre-cor error| over the training set after the phase.
    pub precor_error: f64,
    /// Mean signed pre-cor loss over the training set after the phase.
    pub precor_signed: f64,
}

/// `config.epochs` epochs of mini-batch Adam on `L_exp + γ·L_precor` with the
/// propagation parameters frozen. `L_exp` does not depend on the pooling
/// parameters, so they move only through `γ·L_precor`. Propagated features
/// are computed once up front since they cannot change during the phase.
pub fn maximization_phase(
    train: &GraphDataset,
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    config: &TrainingConfig,
    val: Option<&GraphDataset>,
    em_round: usize,
) -> Result<MaximizationOutcome> {
    if train.is_empty() {
        return Err(Error::EmptySplit("maximization phase needs training graphs".into()));
    }
    let adam = adam_config(config);
    let cache = frozen_propagation(params, train, config)
        .map_err(|e| tag_non_finite(e, Phase::Maximization, em_round, opt.maximization_epochs))?;
    let val_acc = val.map(|v| evaluate(params, v, config)).transpose()?;
    let mut records = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let epoch = opt.maximization_epochs;
        let lr = lr_schedule(epoch, config.lr);
        let (mut exp, mut pre, mut tot) = (Vec::new(), Vec::new(), Vec::new());
        for batch in batches(train.len(), config, Phase::Maximization, epoch) {
            let (e, p, t) = maximization_batch(train, &cache, &batch, params, &mut opt.maximization, &adam, lr, config)
                .map_err(|e| tag_non_finite(e, Phase::Maximization, em_round, epoch))?;
            exp.push(e);
            pre.push(p);
            tot.push(t);
        }
        records.push(EpochRecord {
            epoch,
            phase: Phase::Maximization,
            em_round,
            l_exp: mean(&exp),
            l_precor: Some(mean(&pre)),
            l_tot: Some(mean(&tot)),
            val_acc,
        });
        opt.maximization_epochs += 1;
    }
    let (precor_error, precor_signed) = precor_from_cache(params, train, &cache, config)?;
    Ok(MaximizationOutcome {
        records,
        precor_error,
        precor_signed,
    })
}

#[allow(clippy::too_many_arguments)]
fn maximization_batch(
    train: &GraphDataset,
    cache: &[(Matrix, f64)],
    batch: &[usize],
    params: &mut ModelParams,
    state: &mut AdamState,
    adam: &AdamConfig,
    lr: f64,
    config: &TrainingConfig,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let pool_vars = params.pooling.bind(&mut tape);
    let mut exp_sum = 0.0;
    let mut pre_sum = 0.0;
    let mut total: Option<Var> = None;
    for &i in batch {
        let g = &train.graphs[i];
        let (z_pre, l_exp) = &cache[i];
        let z = tape.constant(z_pre.clone());
        let trace = hierarchical_pool(&mut tape, g, z, &pool_vars, config.s_thre)?;
        let l_precor = prediction_correction_loss(&mut tape, trace.z_cor, z, &trace.composed_map, &trace.coarse_edges)?;
        let l_exp_var = tape.constant(Matrix::scalar(*l_exp));
        let l_tot = total_loss(&mut tape, l_exp_var, l_precor, config.gamma)?;
        exp_sum += l_exp;
        pre_sum += tape.scalar(l_precor);
        total = Some(match total {
            Some(t) => tape.add(t, l_tot)?,
            None => l_tot,
        });
    }
    let b = batch.len() as f64;
    let total = total.expect("non-empty batch");
    let loss = tape.scale(total, 1.0 / b)?;
    let value = tape.scalar(loss);
    check_finite("batch total loss", value)?;
    let mut grads = tape.backward(loss)?;
    let g: Vec<Matrix> = pool_vars
        .iter()
        .flat_map(|l| [l.w, l.a])
        .map(|v| grads.take(v))
        .collect();
    adam_step(&mut params.pooling.arrays_mut(), &g, state, adam, lr)?;
    Ok((exp_sum / b, pre_sum / b, value))
}

/// Best parameters by validation accuracy, the optimizer state at the end
/// of training, and the run's metrics.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub metrics: RunMetrics,
}

/// Alternates expectation and maximization phases until the relative change
/// of the mean pre-cor error drops below `em_tolerance` or `em_rounds_max`
/// rounds have run. The error measured before training is the reference for
/// the first round.
pub fn em_train(train: &GraphDataset, val: &GraphDataset, config: &TrainingConfig) -> Result<TrainedModel> {
    config.validate()?;
    let mut params = ModelParams::init(train.feature_dim, train.num_classes, config);
    em_train_from(train, val, config, &mut params)
}

/// [`em_train`] starting from the given parameters, which end up holding
/// the final (not best) parameters.
pub fn em_train_from(train: &GraphDataset, val: &GraphDataset, config: &TrainingConfig, params: &mut ModelParams) -> Result<TrainedModel> {
    let start = Instant::now();
    let mut opt = OptimizerState::default();
    let mut metrics = RunMetrics::default();
    let mut prev = mean_precor_error(params, train, config)?;
    metrics.initial_precor_error = Some(prev);
    let mut best: Option<(f64, ModelParams)> = None;

    for round in 1..=config.em_rounds_max {
        let e_rows = expectation_phase(train, params, &mut opt, config, Some(val), round)?;
        metrics.epochs.extend(e_rows);
        let m = maximization_phase(train, params, &mut opt, config, Some(val), round)?;
        metrics.epochs.extend(m.records);
        metrics.precor_errors.push(m.precor_error);
        metrics.precor_signed.push(m.precor_signed);

        let acc = evaluate(params, val, config)?;
        metrics.round_val_acc.push(acc);
        if best.as_ref().is_none_or(|(b, _)| acc > *b) {
            best = Some((acc, params.clone()));
            metrics.best_round = Some(round);
        }

        let change = (m.precor_error - prev).abs() / prev.max(1.0);
        prev = m.precor_error;
        if change < config.em_tolerance {
            break;
        }
    }
    metrics.wall_clock_secs = start.elapsed().as_secs_f64();
    let (_, params) = best.expect("at least one EM round");
    Ok(TrainedModel {
        params,
        optimizer: opt,
        metrics,
    })
}

/// One holdout run: split with `config.seed`, train, and score the test split.
pub fn run_seed(ds: &GraphDataset, config: &TrainingConfig) -> Result<TrainedModel> {
    let (train, val, test) = split_dataset(ds, &SplitSpec::new(config.seed))?;
    let mut model = em_train(&train, &val, config)?;
    model.metrics.test_accuracy = Some(evaluate(&model.params, &test, config)?);
    Ok(model)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(values);
    if n == 1 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub gamma: f64,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Test accuracy of a full run per seed for every `γ`.
pub fn ablate_gamma(ds: &GraphDataset, gammas: &[f64], seeds: &[u64], config: &TrainingConfig) -> Result<Vec<AblationRow>> {
    if gammas.is_empty() {
        return Err(Error::InvalidArgument("gamma list is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("seed list is empty".into()));
    }
    gammas
        .iter()
        .map(|&gamma| {
            let accuracies = seeds
                .iter()
                .map(|&seed| {
                    let cfg = TrainingConfig {
                        gamma,
                        seed,
                        ..config.clone()
                    };
                    run_seed(ds, &cfg)?
                        .metrics
                        .test_accuracy
                        .ok_or_else(|| Error::InvalidArgument("run without test accuracy".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            let (mean, std) = mean_std(&accuracies);
            Ok(AblationRow {
                gamma,
                accuracies,
                mean,
                std,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("gamma,mean,std\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.gamma, r.mean, r.std));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::toy_dataset;

    fn tiny_config() -> TrainingConfig {
        TrainingConfig {
            hidden: 8,
            num_pooling_layers: 3,
            epochs: 2,
            em_rounds_max: 2,
            batch_size: 4,
            lr: 1e-2,
            ..TrainingConfig::desk()
        }
    }

    #[test]
    fn stream_parity() {
        assert_eq!(batch_stream(Phase::Expectation, 3), 6);
        assert_eq!(batch_stream(Phase::Maximization, 3), 7);
    }

    #[test]
    fn evaluate_rejects_empty() {
        let ds = toy_dataset(4, 0);
        let empty = GraphDataset {
            graphs: Vec::new(),
            ..ds.clone()
        };
        let params = ModelParams::init(ds.feature_dim, ds.num_classes, &tiny_config());
        assert!(matches!(evaluate(&params, &empty, &tiny_config()), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let ds = toy_dataset(10, 1);
        let mut params = ModelParams::init(ds.feature_dim, ds.num_classes, &tiny_config());
        params.propagation.head_w = Matrix::zeros(params.propagation.hidden(), 2);
        params.propagation.head_b = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(evaluate(&params, &ds, &tiny_config()).unwrap(), 0.5);
    }

    #[test]
    fn round_bounds() {
        let ds = toy_dataset(12, 2);
        let (train, val) = (ds.subset(&(0..8).collect::<Vec<_>>()).unwrap(), ds.subset(&[8, 9, 10, 11]).unwrap());
        let cfg = TrainingConfig {
            em_rounds_max: 1,
            ..tiny_config()
        };
        let m = em_train(&train, &val, &cfg).unwrap().metrics;
        assert_eq!(m.em_rounds(), 1);
        assert_eq!(m.epochs.len(), 2 * cfg.epochs);

        let cfg = TrainingConfig {
            em_rounds_max: 4,
            em_tolerance: f64::INFINITY,
            ..tiny_config()
        };
        assert_eq!(em_train(&train, &val, &cfg).unwrap().metrics.em_rounds(), 1);
    }

    #[test]
    fn lr_zero_leaves_propagation() {
        let ds = toy_dataset(6, 3);
        let cfg = TrainingConfig { lr: 0.0, ..tiny_config() };
        let mut params = ModelParams::init(ds.feature_dim, ds.num_classes, &cfg);
        let before = params.clone();
        let mut opt = OptimizerState::default();
        expectation_phase(&ds, &mut params, &mut opt, &cfg, None, 1).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ablation_rows_match_gammas() {
        let ds = toy_dataset(20, 4);
        let cfg = TrainingConfig {
            em_rounds_max: 1,
            epochs: 1,
            ..tiny_config()
        };
        let rows = ablate_gamma(&ds, &[0.1, 0.2], &[0], &cfg).unwrap();
        let csv = ablation_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("gamma,mean,std\n0.1,"));
        assert!(ablate_gamma(&ds, &[], &[0], &cfg).is_err());
    }
}
