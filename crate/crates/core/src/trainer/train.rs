use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action_model::plans_for;
use crate::config::{ModelConfig, Trajectory};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

use super::objective::{trajectory_loss_and_partial_grad, trajectory_loss_with, trajectory_terms_with, Objective, Prepared};
use super::optim::Adam;
use super::params::ParamSet;
use super::rollout::{rollout_with, RolloutOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    #[default]
    Analytic,
    /// Central finite differences, for verification.
    Numeric,
}

fn d_lr() -> f64 {
    1e-3
}
fn d_b1() -> f64 {
    0.9
}
fn d_b2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_epochs() -> usize {
    100
}
fn d_batch() -> usize {
    32
}
fn d_kl() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_b1")]
    pub adam_beta1: f64,
    #[serde(default = "d_b2")]
    pub adam_beta2: f64,
    #[serde(default = "d_eps")]
    pub adam_eps: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub grad_mode: GradMode,
    #[serde(default)]
    pub teacher_forcing: bool,
    #[serde(default = "d_kl")]
    pub kl_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: d_lr(),
            adam_beta1: d_b1(),
            adam_beta2: d_b2(),
            adam_eps: d_eps(),
            epochs: d_epochs(),
            batch_size: d_batch(),
            rng_seed: 0,
            grad_mode: GradMode::Analytic,
            teacher_forcing: false,
            kl_weight: d_kl(),
        }
    }
}

impl TrainConfig {
    pub fn objective(&self) -> Objective {
        Objective {
            kl_weight: self.kl_weight,
            teacher_forcing: self.teacher_forcing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0
            && self.batch_size > 0
            && self.kl_weight >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

/// Dataset-level summary after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub epoch: usize,
    /// Mean over trajectories of the action term, per timestep.
    pub action_term: Vec<f64>,
    /// Mean over trajectories of the KL term, per timestep.
    pub kl_term: Vec<f64>,
    /// `Σ_t (action_term_t − kl_term_t)`.
    pub elbo_total: f64,
    pub action_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

impl StepDiagnostics {
    pub fn mean_action(&self) -> f64 {
        self.action_term.iter().sum()
    }

    pub fn mean_kl(&self) -> f64 {
        self.kl_term.iter().sum()
    }

    /// Mean training loss with the given KL weight.
    pub fn loss(&self, kl_weight: f64) -> f64 {
        kl_weight * self.mean_kl() - self.mean_action()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamSet,
    /// Entry 0 describes the initial parameters, entry `e` the state after epoch `e`.
    pub log: Vec<StepDiagnostics>,
}

#[cfg(feature = "parallel")]
fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Mean batch loss.
pub fn batch_loss(
    params: &ParamSet,
    batch: &[&Trajectory],
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    obj: &Objective,
) -> Result<f64> {
    let prep = Prepared::new(params, table, cfg)?;
    let losses = map_ordered(batch, |t| trajectory_loss_with(t, params, table, cfg, obj, &prep));
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of the mean batch loss with respect to the flat parameters.
/// Per-trajectory gradients are reduced in batch order, so the result does
/// not depend on the number of worker threads.
pub fn gradient(
    params: &ParamSet,
    batch: &[&Trajectory],
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    obj: &Objective,
    mode: GradMode,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let n = batch.len() as f64;
    match mode {
        GradMode::Analytic => {
            let prep = Prepared::new(params, table, cfg)?;
            let per_traj = map_ordered(batch, |t| {
                let mut g = ParamSet::zeros(cfg);
                let mut g_hard = prep.logit_grad_buffer();
                trajectory_loss_and_partial_grad(t, params, table, cfg, obj, &prep, &mut g, &mut g_hard)
                    .map(|l| (l, g.flatten(), g_hard))
            });
            let mut loss = 0.0;
            let mut grad = vec![0.0; params.flatten().len()];
            let mut g_hard = prep.logit_grad_buffer();
            for r in per_traj {
                let (l, g, h) = r?;
                loss += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                g_hard.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
            }
            let mut shared = ParamSet::zeros(cfg);
            prep.flush_logit_grads(&g_hard, params, &mut shared);
            grad.iter_mut().zip(shared.flatten()).for_each(|(a, b)| *a += b);
            grad.iter_mut().for_each(|v| *v /= n);
            Ok((loss / n, grad))
        }
        GradMode::Numeric => {
            let h = 1e-4;
            let flat = params.flatten();
            let loss = batch_loss(params, batch, table, cfg, obj)?;
            let mut grad = vec![0.0; flat.len()];
            for i in 0..flat.len() {
                let mut a = flat.clone();
                let mut b = flat.clone();
                a[i] += h;
                b[i] -= h;
                let la = batch_loss(&ParamSet::unflatten(cfg, &a)?, batch, table, cfg, obj)?;
                let lb = batch_loss(&ParamSet::unflatten(cfg, &b)?, batch, table, cfg, obj)?;
                grad[i] = (la - lb) / (2.0 * h);
            }
            Ok((loss, grad))
        }
    }
}

/// Fraction of steps where the rollout's argmax action equals the recorded one.
pub fn action_accuracy(
    params: &ParamSet,
    data: &[Trajectory],
    table: &EmbeddingTable,
    cfg: &ModelConfig,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let plans = plans_for(table, &params.attention, cfg)?;
    let hits = map_ordered(data, |traj| -> Result<usize> {
        let opts = RolloutOptions {
            initial: Some(traj.initial_marginals(cfg)),
            ..Default::default()
        };
        let r = rollout_with(params, table, cfg, &traj.observation_ids, &opts, &plans)?;
        Ok(r.actions().iter().zip(&traj.action_ids).filter(|(a, b)| a == b).count())
    });
    let mut total = 0;
    for h in hits {
        total += h?;
    }
    Ok(total as f64 / (data.len() * cfg.t) as f64)
}

/// Dataset-mean ELBO terms and accuracies at `params`.
pub fn evaluate(
    epoch: usize,
    params: &ParamSet,
    data: &[Trajectory],
    test: Option<&[Trajectory]>,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    obj: &Objective,
) -> Result<StepDiagnostics> {
    let prep = Prepared::new(params, table, cfg)?;
    let terms = map_ordered(data, |traj| trajectory_terms_with(traj, params, table, cfg, obj, &prep));
    let mut action_term = vec![0.0; cfg.t];
    let mut kl_term = vec![0.0; cfg.t];
    for tr in terms {
        for (t, s) in tr?.iter().enumerate() {
            action_term[t] += s.action_term;
            kl_term[t] += s.kl_term;
        }
    }
    let n = data.len() as f64;
    action_term.iter_mut().for_each(|v| *v /= n);
    kl_term.iter_mut().for_each(|v| *v /= n);
    let elbo_total = action_term.iter().zip(&kl_term).map(|(a, k)| a - k).sum();
    Ok(StepDiagnostics {
        epoch,
        action_term,
        kl_term,
        elbo_total,
        action_accuracy: action_accuracy(params, data, table, cfg)?,
        test_accuracy: test.map(|t| action_accuracy(params, t, table, cfg)).transpose()?,
    })
}

/// Adam over seeded shuffled minibatches. Returns the final parameters and a
/// diagnostics row for the initial state and after every epoch.
pub fn train(
    dataset: &[Trajectory],
    params0: ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    test: Option<&[Trajectory]>,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    cfg.validate()?;
    tcfg.validate()?;
    params0.check_shape(cfg)?;
    let obj = tcfg.objective();
    let mut flat = params0.flatten();
    let mut params = params0;
    let mut adam = Adam::new(
        flat.len(),
        tcfg.learning_rate,
        tcfg.adam_beta1,
        tcfg.adam_beta2,
        tcfg.adam_eps,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.rng_seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = vec![evaluate(0, &params, dataset, test, table, cfg, &obj)?];

    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<&Trajectory> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (_, grad) = gradient(&params, &batch, table, cfg, &obj, tcfg.grad_mode)?;
            adam.step(&mut flat, &grad);
            params = ParamSet::unflatten(cfg, &flat)?;
        }
        log.push(evaluate(epoch, &params, dataset, test, table, cfg, &obj)?);
    }
    Ok(TrainOutcome { params, log })
}

/// Diagnostics log as CSV: `epoch,mean_L_act,mean_KL,train_acc,test_acc`.
pub fn diagnostics_csv(log: &[StepDiagnostics]) -> String {
    let mut out = String::from("epoch,mean_L_act,mean_KL,train_acc,test_acc\n");
    for d in log {
        let test = d.test_accuracy.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            d.epoch,
            d.mean_action(),
            d.mean_kl(),
            d.action_accuracy,
            test
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExpectationMode;
    use crate::embeddings::{synth_table, EmbeddingVocab};

    fn toy() -> (ModelConfig, EmbeddingTable, Vec<Trajectory>) {
        let cfg = ModelConfig::unmasked(3, 2, 3, 6, 3);
        let table = synth_table(&cfg, &EmbeddingVocab::new(vec![0, 1], 3), 2);
        let data = (0..12)
            .map(|i| Trajectory {
                agent_id: format!("a{i}"),
                observation_ids: vec![(i % 2) as u32, ((i / 2) % 2) as u32],
                action_ids: vec![i % 3, (i * 7) % 3],
                belief_ratings: None,
                initial_ratings: None,
            })
            .collect();
        (cfg, table, data)
    }

    #[test]
    fn zero_learning_rate_freezes_params() {
        let (cfg, table, data) = toy();
        let p0 = ParamSet::init(&cfg, 1);
        let tcfg = TrainConfig { learning_rate: 0.0, epochs: 3, batch_size: 5, ..Default::default() };
        let out = train(&data, p0.clone(), &table, &cfg, &tcfg, None).unwrap();
        assert_eq!(out.params, p0);
        assert_eq!(out.log.len(), 4);
    }

    #[test]
    fn equal_seeds_give_identical_logs() {
        let (cfg, table, data) = toy();
        let tcfg = TrainConfig { learning_rate: 0.01, epochs: 4, batch_size: 5, rng_seed: 9, ..Default::default() };
        let a = train(&data, ParamSet::init(&cfg, 1), &table, &cfg, &tcfg, Some(&data[..3])).unwrap();
        let b = train(&data, ParamSet::init(&cfg, 1), &table, &cfg, &tcfg, Some(&data[..3])).unwrap();
        assert_eq!(diagnostics_csv(&a.log), diagnostics_csv(&b.log));
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn diagnostics_are_consistent() {
        let (cfg, table, data) = toy();
        let d = evaluate(0, &ParamSet::init(&cfg, 3), &data, None, &table, &cfg, &Objective::default()).unwrap();
        let sum: f64 = d.action_term.iter().zip(&d.kl_term).map(|(a, k)| a - k).sum();
        assert!((d.elbo_total - sum).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&d.action_accuracy));
        let csv = diagnostics_csv(&[d]);
        assert!(csv.starts_with("epoch,mean_L_act,mean_KL,train_acc,test_acc\n0,"));
    }

    #[test]
    fn numeric_and_analytic_gradients_agree() {
        let (mut cfg, table, data) = toy();
        let p = ParamSet::init(&cfg, 5);
        let batch: Vec<&Trajectory> = data.iter().take(4).collect();
        let obj = Objective::default();
        for mode in [ExpectationMode::MeanField, ExpectationMode::Enumerate] {
            cfg.expectation_mode = mode;
            let (la, ga) = gradient(&p, &batch, &table, &cfg, &obj, GradMode::Analytic).unwrap();
            let (ln, gn) = gradient(&p, &batch, &table, &cfg, &obj, GradMode::Numeric).unwrap();
            assert!((la - ln).abs() < 1e-12);
            for (a, n) in ga.iter().zip(&gn) {
                assert!((a - n).abs() / a.abs().max(1e-6) < 1e-3 || (a - n).abs() < 1e-8, "{mode:?}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (cfg, table, _) = toy();
        assert!(train(&[], ParamSet::zeros(&cfg), &table, &cfg, &TrainConfig::default(), None).is_err());
    }
}
