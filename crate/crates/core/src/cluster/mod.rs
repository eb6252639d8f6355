//! Simulated n-site cluster: IST, data-parallel and local-SGD training with
//! exact communication metering.
//!
//! Execution is bulk-synchronous. Between barriers each worker owns its model
//! (a subnet shard or a full replica) and its batches; everything that crosses
//! workers goes through the coordinator at a barrier. Worker results are
//! collected in site order, so sequential and parallel execution produce the
//! same bits.

mod train;

pub use train::{run, run_data_parallel, run_ist, run_local_sgd, run_sgd, TrainOutcome};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, Split};
use crate::error::{IstError, Result};
use crate::exec::ExecMode;
use crate::mask::MaskStrategy;
use crate::nn::{loss_value, Loss, Model, ModelDims, Targets};

/// Rows of the training split used to calibrate standardizers before each
/// evaluation.
pub const CALIBRATION_ROWS: usize = 512;

/// Abort when a loss exceeds this or is not finite.
pub const DIVERGENCE_LOSS: f64 = 1e6;

pub const ACCOUNTING_NOTE: &str = "floats are counted as logical values received by \
    sites (inflow) and returned to the coordinator, one message per transfer; no \
    collective-communication byte model is applied";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ist,
    DataParallel,
    LocalSgd,
    /// Single-worker reference; `n_sites` and `local_iters` are ignored.
    Sgd,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ist => "ist",
            Strategy::DataParallel => "data_parallel",
            Strategy::LocalSgd => "local_sgd",
            Strategy::Sgd => "sgd",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = IstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ist" => Ok(Self::Ist),
            "data_parallel" => Ok(Self::DataParallel),
            "local_sgd" => Ok(Self::LocalSgd),
            "sgd" => Ok(Self::Sgd),
            other => Err(IstError::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncConfig {
    pub strategy: Strategy,
    pub n_sites: usize,
    pub local_iters: usize,
    pub batch: usize,
    pub eta: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mask_strategy: MaskStrategy,
    pub loss: Loss,
    /// Results do not depend on this, so it is not part of the echoed config.
    #[serde(skip)]
    pub exec: ExecMode,
}

impl SyncConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(IstError::Config("n must be ≥ 1".into()));
        }
        if self.local_iters == 0 {
            return Err(IstError::Config("J must be ≥ 1".into()));
        }
        if self.batch == 0 {
            return Err(IstError::Config("batch must be ≥ 1".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(IstError::Config(format!("eta {} must be > 0", self.eta)));
        }
        if self.epochs == 0 {
            return Err(IstError::Config("epochs must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Cumulative communication and compute counters. Every field only grows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub floats_to_workers: u64,
    pub floats_to_coordinator: u64,
    /// Weight-matrix part of `floats_to_workers` (biases excluded).
    pub weight_floats_to_workers: u64,
    pub weight_floats_to_coordinator: u64,
    pub messages: u64,
    pub sync_rounds: u64,
    pub flops_forward_backward: u64,
}

impl CommLedger {
    pub fn total_floats(&self) -> u64 {
        self.floats_to_workers + self.floats_to_coordinator
    }

    pub(crate) fn scatter(&mut self, weights: u64, biases: u64) {
        self.weight_floats_to_workers += weights;
        self.floats_to_workers += weights + biases;
        self.messages += 1;
    }

    pub(crate) fn gather(&mut self, weights: u64, biases: u64) {
        self.weight_floats_to_coordinator += weights;
        self.floats_to_coordinator += weights + biases;
        self.messages += 1;
    }

    /// Forward and backward matrix products for `steps` steps on a model with
    /// `weights` weight entries.
    pub(crate) fn compute(&mut self, batch: usize, weights: u64, steps: usize) {
        self.flops_forward_backward += 4 * batch as u64 * weights * steps as u64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub ledger: CommLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: SyncConfig,
    pub dims: ModelDims,
    pub epochs: Vec<EpochMetrics>,
    pub ledger: CommLedger,
    pub plan_seeds: Vec<u64>,
    pub accounting_note: String,
    pub final_weights_sha256: String,
}

pub const METRICS_CSV_HEADER: &str =
    "epoch,strategy,n,J,train_loss,test_acc,floats_to_workers,floats_to_coordinator,flops";

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-epoch metrics; the first line is a versioned schema comment.
    pub fn metrics_csv(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "# ist-metrics v1 dims={} seed={} batch={} eta={} mask={:?}\n{METRICS_CSV_HEADER}\n",
            self.dims, c.seed, c.batch, c.eta, c.mask_strategy
        );
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                e.epoch,
                c.strategy.name(),
                c.n_sites,
                c.local_iters,
                e.train_loss,
                e.test_acc,
                e.ledger.floats_to_workers,
                e.ledger.floats_to_coordinator,
                e.ledger.flops_forward_backward
            );
        }
        out
    }
}

/// Hex SHA-256 of all parameters' little-endian bytes.
pub fn weights_digest(model: &Model) -> String {
    let mut h = Sha256::new();
    for v in model.flat_params() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Mean loss and accuracy over a split. Standardizers must be frozen.
pub fn evaluate(model: &Model, dataset: &Dataset, split: Split, loss: Loss) -> Result<(f64, f64)> {
    if !model.is_frozen() {
        return Err(IstError::NotFrozen);
    }
    let rows = dataset.indices(split);
    if rows.is_empty() {
        return Err(IstError::Empty(format!("{split:?} split")));
    }
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for chunk in rows.chunks(1024) {
        let (x, targets) = dataset.batch(chunk);
        let cache = model.forward(&x)?;
        let logits = cache.logits();
        total_loss += loss_value(logits, &targets, loss)? * chunk.len() as f64;
        if let Targets::Classes(labels) = &targets {
            for (r, &label) in labels.iter().enumerate() {
                if argmax(logits.row(r)) == label {
                    correct += 1;
                }
            }
        }
    }
    let n = rows.len() as f64;
    Ok((total_loss / n, correct as f64 / n))
}

/// Copy of `model` with standardizers calibrated on the start of the
/// training split.
pub fn calibrated(model: &Model, dataset: &Dataset) -> Result<Model> {
    let train = dataset.indices(Split::Train);
    let take = train.len().min(CALIBRATION_ROWS);
    let (x, _) = dataset.batch(&train[..take]);
    let mut m = model.clone();
    m.calibrate_standardizers(&x)?;
    Ok(m)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
