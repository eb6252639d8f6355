use rand::seq::SliceRandom;

use super::{
    calibrated, evaluate, weights_digest, CommLedger, EpochMetrics, Strategy, SyncConfig,
    TrainReport, ACCOUNTING_NOTE, DIVERGENCE_LOSS,
};
use crate::data::{Dataset, Split};
use crate::error::{IstError, Result};
use crate::exec;
use crate::mask::MaskPlan;
use crate::nn::{Gradients, Model};
use crate::partition::{extract_shards, reassemble, SubnetShard};
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Final coordinator model, standardizers in batch-stats mode.
    pub model: Model,
}

/// Dispatch on `cfg.strategy`.
pub fn run(model: &Model, dataset: &Dataset, cfg: &SyncConfig) -> Result<TrainOutcome> {
    match cfg.strategy {
        Strategy::Ist => run_ist(model, dataset, cfg),
        Strategy::DataParallel => run_data_parallel(model, dataset, cfg),
        Strategy::LocalSgd => run_local_sgd(model, dataset, cfg),
        Strategy::Sgd => run_sgd(model, dataset, cfg),
    }
}

/// Shared epoch bookkeeping for every strategy.
struct Session<'a> {
    dataset: &'a Dataset,
    cfg: &'a SyncConfig,
    sites: usize,
    ledger: CommLedger,
    epochs: Vec<EpochMetrics>,
    plan_seeds: Vec<u64>,
}

impl<'a> Session<'a> {
    fn new(model: &Model, dataset: &'a Dataset, cfg: &'a SyncConfig, expect: Strategy) -> Result<Self> {
        if cfg.strategy != expect {
            return Err(IstError::Config(format!(
                "config strategy is {}, runner is {}",
                cfg.strategy.name(),
                expect.name()
            )));
        }
        cfg.validate()?;
        let dims = model.dims();
        if dims.input() != dataset.n_features() {
            return Err(IstError::Dimension(format!(
                "model takes {} features, dataset has {}",
                dims.input(),
                dataset.n_features()
            )));
        }
        if dims.output() < dataset.n_classes() {
            return Err(IstError::Dimension(format!(
                "model has {} outputs for {} classes",
                dims.output(),
                dataset.n_classes()
            )));
        }
        let sites = if expect == Strategy::Sgd { 1 } else { cfg.n_sites };
        let s = Self {
            dataset,
            cfg,
            sites,
            ledger: CommLedger::default(),
            epochs: Vec::new(),
            plan_seeds: Vec::new(),
        };
        if s.steps_per_epoch() == 0 {
            return Err(IstError::Config(format!(
                "{} training rows over {} sites cannot fill a batch of {}",
                dataset.indices(Split::Train).len(),
                sites,
                cfg.batch
            )));
        }
        Ok(s)
    }

    fn shard_len(&self) -> usize {
        self.dataset.indices(Split::Train).len() / self.sites
    }

    fn steps_per_epoch(&self) -> usize {
        self.shard_len() / self.cfg.batch
    }

    /// Seeded shuffle of the training rows, cut into one contiguous data
    /// shard per site. Depends only on the seed and the epoch.
    fn data_shards(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut rows = self.dataset.indices(Split::Train).to_vec();
        rows.shuffle(&mut stream_rng(self.cfg.seed, "epoch", epoch as u64));
        let len = self.shard_len();
        (0..self.sites)
            .map(|s| rows[s * len..(s + 1) * len].to_vec())
            .collect()
    }

    /// `(first step, step count)` of each sync round in an epoch; the last
    /// round is shorter when `J` does not divide the step count.
    fn rounds(&self) -> Vec<(usize, usize)> {
        exec::chunks(self.steps_per_epoch(), self.cfg.local_iters)
    }

    fn batch<'d>(&self, shard: &'d [usize], step: usize) -> &'d [usize] {
        let b = self.cfg.batch;
        &shard[step * b..(step + 1) * b]
    }

    fn diverged(&self, model: &Model, epoch: usize, loss: f64) -> IstError {
        IstError::Divergence {
            epoch,
            loss,
            report: Box::new(self.report(model)),
        }
    }

    fn check_loss(&self, model: &Model, epoch: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(self.diverged(model, epoch, loss));
        }
        Ok(())
    }

    fn end_epoch(&mut self, model: &Model, epoch: usize) -> Result<()> {
        let frozen = calibrated(model, self.dataset)?;
        let (train_loss, _) = evaluate(&frozen, self.dataset, Split::Train, self.cfg.loss)?;
        let (test_loss, test_acc) = evaluate(&frozen, self.dataset, Split::Test, self.cfg.loss)?;
        self.check_loss(model, epoch, train_loss)?;
        self.epochs.push(EpochMetrics {
            epoch,
            train_loss,
            test_loss,
            test_acc,
            ledger: self.ledger,
        });
        Ok(())
    }

    fn report(&self, model: &Model) -> TrainReport {
        TrainReport {
            config: self.cfg.clone(),
            dims: model.dims().clone(),
            epochs: self.epochs.clone(),
            ledger: self.ledger,
            plan_seeds: self.plan_seeds.clone(),
            accounting_note: ACCOUNTING_NOTE.to_string(),
            final_weights_sha256: weights_digest(model),
        }
    }

    fn finish(self, model: Model) -> TrainOutcome {
        TrainOutcome {
            report: self.report(&model),
            model,
        }
    }
}

/// Plain minibatch SGD over `batches`; returns the per-step losses.
fn local_steps(
    model: &mut Model,
    dataset: &Dataset,
    batches: &[&[usize]],
    cfg: &SyncConfig,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(batches.len());
    for rows in batches {
        let (x, targets) = dataset.batch(rows);
        let (loss, grads) = model.loss_and_gradients(&x, &targets, cfg.loss)?;
        losses.push(loss);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            break;
        }
        model.sgd_step(&grads, cfg.eta)?;
    }
    Ok(losses)
}

fn worst(losses: &[f64]) -> f64 {
    losses
        .iter()
        .copied()
        .find(|l| !l.is_finite())
        .unwrap_or_else(|| losses.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Single-worker minibatch SGD over the same epoch schedule the cluster
/// strategies use with one site.
pub fn run_sgd(model: &Model, dataset: &Dataset, cfg: &SyncConfig) -> Result<TrainOutcome> {
    let mut session = Session::new(model, dataset, cfg, Strategy::Sgd)?;
    let mut model = model.clone();
    model.use_batch_stats();
    let weights = model.dims().weight_count();
    for epoch in 0..cfg.epochs {
        let shards = session.data_shards(epoch);
        let steps = session.steps_per_epoch();
        let batches: Vec<&[usize]> = (0..steps).map(|k| session.batch(&shards[0], k)).collect();
        let losses = local_steps(&mut model, dataset, &batches, cfg)?;
        session.ledger.compute(cfg.batch, weights, losses.len());
        session.check_loss(&model, epoch, worst(&losses))?;
        session.end_epoch(&model, epoch)?;
    }
    Ok(session.finish(model))
}

/// Independent subnet training: per round, sample a plan, scatter disjoint
/// shards, run `J` local SGD steps on every subnet, gather and reassemble.
pub fn run_ist(model: &Model, dataset: &Dataset, cfg: &SyncConfig) -> Result<TrainOutcome> {
    let mut session = Session::new(model, dataset, cfg, Strategy::Ist)?;
    let mut model = model.clone();
    model.use_batch_stats();
    let activation = model.activation();
    let mut round_index = 0u64;
    for epoch in 0..cfg.epochs {
        let data = session.data_shards(epoch);
        for (first, steps) in session.rounds() {
            let seed = derive_seed(cfg.seed, "plan", round_index);
            round_index += 1;
            session.plan_seeds.push(seed);
            let plan = MaskPlan::sample(model.dims(), cfg.n_sites, cfg.mask_strategy, seed)?;
            let shards = extract_shards(&model, &plan)?;
            for s in &shards {
                session.ledger.scatter(s.weight_count(), s.bias_count());
            }
            let jobs: Vec<(SubnetShard, &[usize])> = shards
                .into_iter()
                .map(|s| {
                    let rows = data[s.site()].as_slice();
                    (s, rows)
                })
                .collect();
            let sess = &session;
            let results = exec::map_vec(cfg.exec, jobs, |(mut shard, rows)| -> Result<_> {
                let mut sub = shard.to_model(activation)?;
                let batches: Vec<&[usize]> =
                    (first..first + steps).map(|k| sess.batch(rows, k)).collect();
                let losses = local_steps(&mut sub, dataset, &batches, cfg)?;
                shard.update_from_model(&sub)?;
                Ok((shard, losses))
            });
            let mut returned = Vec::with_capacity(cfg.n_sites);
            let mut worst_loss = f64::NEG_INFINITY;
            for r in results {
                let (shard, losses) = r?;
                session.ledger.gather(shard.weight_count(), shard.bias_count());
                session.ledger.compute(cfg.batch, shard.weight_count(), losses.len());
                let w = worst(&losses);
                if !w.is_finite() || w > worst_loss {
                    worst_loss = w;
                }
                returned.push(shard);
            }
            session.ledger.sync_rounds += 1;
            model = reassemble(&model, &returned, &plan)?;
            session.check_loss(&model, epoch, worst_loss)?;
        }
        session.end_epoch(&model, epoch)?;
    }
    Ok(session.finish(model))
}

/// Synchronous data parallelism: every step each site computes a gradient on
/// `B` local rows, the coordinator averages, updates and re-broadcasts.
pub fn run_data_parallel(model: &Model, dataset: &Dataset, cfg: &SyncConfig) -> Result<TrainOutcome> {
    let mut session = Session::new(model, dataset, cfg, Strategy::DataParallel)?;
    let mut model = model.clone();
    model.use_batch_stats();
    let weights = model.dims().weight_count();
    let biases = model.dims().bias_count();
    for epoch in 0..cfg.epochs {
        let data = session.data_shards(epoch);
        for step in 0..session.steps_per_epoch() {
            for _ in 0..cfg.n_sites {
                session.ledger.scatter(weights, biases);
            }
            let sess = &session;
            let current = &model;
            let results = exec::map_range(cfg.exec, cfg.n_sites, |s| {
                let (x, targets) = dataset.batch(sess.batch(&data[s], step));
                current.loss_and_gradients(&x, &targets, cfg.loss)
            });
            let mut grads = Vec::with_capacity(cfg.n_sites);
            let mut loss_sum = 0.0;
            for r in results {
                let (loss, g) = r?;
                loss_sum += loss;
                session.ledger.gather(weights, biases);
                session.ledger.compute(cfg.batch, weights, 1);
                grads.push(g);
            }
            session.ledger.sync_rounds += 1;
            session.check_loss(&model, epoch, loss_sum / cfg.n_sites as f64)?;
            let mean = Gradients::mean(&grads)?;
            model.sgd_step(&mean, cfg.eta)?;
        }
        session.end_epoch(&model, epoch)?;
    }
    Ok(session.finish(model))
}

/// Local SGD: full replicas train `J` steps independently, then the
/// coordinator averages parameters elementwise and re-broadcasts.
pub fn run_local_sgd(model: &Model, dataset: &Dataset, cfg: &SyncConfig) -> Result<TrainOutcome> {
    let mut session = Session::new(model, dataset, cfg, Strategy::LocalSgd)?;
    let mut model = model.clone();
    model.use_batch_stats();
    let weights = model.dims().weight_count();
    let biases = model.dims().bias_count();
    for epoch in 0..cfg.epochs {
        let data = session.data_shards(epoch);
        for (first, steps) in session.rounds() {
            for _ in 0..cfg.n_sites {
                session.ledger.scatter(weights, biases);
            }
            let sess = &session;
            let current = &model;
            let results = exec::map_range(cfg.exec, cfg.n_sites, |s| -> Result<_> {
                let mut replica = current.clone();
                let batches: Vec<&[usize]> =
                    (first..first + steps).map(|k| sess.batch(&data[s], k)).collect();
                let losses = local_steps(&mut replica, dataset, &batches, cfg)?;
                Ok((replica, losses))
            });
            let mut replicas = Vec::with_capacity(cfg.n_sites);
            let mut worst_loss = f64::NEG_INFINITY;
            for r in results {
                let (replica, losses) = r?;
                session.ledger.gather(weights, biases);
                session.ledger.compute(cfg.batch, weights, losses.len());
                let w = worst(&losses);
                if !w.is_finite() || w > worst_loss {
                    worst_loss = w;
                }
                replicas.push(replica);
            }
            session.ledger.sync_rounds += 1;
            session.check_loss(&model, epoch, worst_loss)?;
            model = average_replicas(&model, &replicas)?;
        }
        session.end_epoch(&model, epoch)?;
    }
    Ok(session.finish(model))
}

/// Elementwise parameter mean, summed in site order.
fn average_replicas(base: &Model, replicas: &[Model]) -> Result<Model> {
    let mut out = base.clone();
    let n = replicas.len() as f64;
    let t = base.dims().depth();
    for l in 1..=t {
        let dst = out.layer_mut(l);
        let (first, rest) = replicas
            .split_first()
            .ok_or_else(|| IstError::Empty("replica list".into()))?;
        dst.clone_from(first.layer(l));
        for r in rest {
            let src = r.layer(l);
            dst.weights
                .as_mut_slice()
                .iter_mut()
                .zip(src.weights.as_slice())
                .for_each(|(a, b)| *a += b);
            dst.bias.iter_mut().zip(&src.bias).for_each(|(a, b)| *a += b);
        }
        dst.weights.as_mut_slice().iter_mut().for_each(|a| *a /= n);
        dst.bias.iter_mut().for_each(|a| *a /= n);
    }
    Ok(out)
}
