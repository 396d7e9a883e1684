//! Mini-batch Adam loop shared by every pairwise-ranking model, with
//! per-epoch validation, best-model retention and patience-based stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::EpochRecord;
use crate::data::Catalog;
use crate::error::{Error, Result};
use crate::numerics::{neg_log_sigmoid, AdamConfig, Optimizer, TensorSet};
use crate::sampling::TrainingTriple;

const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4531;

/// A model trained on `(profile, positive, negative)` triples.
pub trait PairwiseModel: TensorSet + Send + Sync {
    /// Mean `−ln σ(x_uij)` over the batch plus `λ‖Θ‖²`, and its gradient
    /// with respect to every parameter.
    fn loss_and_grad(&self, catalog: &Catalog, batch: &[&TrainingTriple], lambda: f64) -> Result<(f64, Self)>;

    /// `x_uij = x_ui − x_uj` for each triple.
    fn margins(&self, catalog: &Catalog, triples: &[&TrainingTriple]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            lambda: 1e-4,
            batch_size: 128,
            max_epochs: 20,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(
                "batch size, epochs and patience must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Key/value echo for manifests and checkpoints.
    pub fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("lr".into(), self.adam.lr.to_string()),
            ("beta1".into(), self.adam.beta1.to_string()),
            ("beta2".into(), self.adam.beta2.to_string()),
            ("eps".into(), self.adam.eps.to_string()),
            ("lambda".into(), self.lambda.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("max_epochs".into(), self.max_epochs.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Parameters of the epoch with the best validation accuracy.
    pub model: M,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Training aborted; carries the best model seen before the failure.
#[derive(Debug)]
pub struct TrainFailure<M> {
    pub error: Error,
    pub last_good: Option<TrainOutcome<M>>,
}

impl<M> std::fmt::Display for TrainFailure<M> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl<M: std::fmt::Debug> std::error::Error for TrainFailure<M> {}

impl<M> From<Error> for TrainFailure<M> {
    fn from(error: Error) -> Self {
        TrainFailure { error, last_good: None }
    }
}

/// Fraction of triples with `x_uij > 0` and the mean `−ln σ(x_uij)`.
pub fn triple_accuracy<M: PairwiseModel>(model: &M, catalog: &Catalog, triples: &[&TrainingTriple]) -> Result<(f64, f64)> {
    if triples.is_empty() {
        return Err(Error::InvalidArgument("no triples to score".into()));
    }
    let margins = model.margins(catalog, triples)?;
    let correct = margins.iter().filter(|&&x| x > 0.0).count();
    let loss = margins.iter().map(|&x| neg_log_sigmoid(x)).sum::<f64>() / margins.len() as f64;
    Ok((correct as f64 / margins.len() as f64, loss))
}

/// Trains `init` on `train`, selecting the epoch with the highest accuracy
/// on `valid`. An empty `valid` set validates on `train`.
pub fn train<M: PairwiseModel>(
    init: M,
    catalog: &Catalog,
    train: &[TrainingTriple],
    valid: &[TrainingTriple],
    config: &TrainConfig,
) -> std::result::Result<TrainOutcome<M>, TrainFailure<M>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training corpus".into()).into());
    }
    let valid: Vec<&TrainingTriple> = if valid.is_empty() {
        log::warn!("no validation triples; selecting on training accuracy");
        train.iter().collect()
    } else {
        valid.iter().collect()
    };
    let mut model = init;
    let mut opt = Optimizer::new(&model, config.adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, M)> = None;
    let mut stale = 0;

    let snapshot = |best: &Option<(f64, usize, M)>, history: &Vec<EpochRecord>| {
        best.as_ref().map(|(_, e, m)| TrainOutcome {
            model: m.clone(),
            best_epoch: *e,
            history: history.clone(),
        })
    };

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainingTriple> = chunk.iter().map(|&i| &train[i]).collect();
            let step = model
                .loss_and_grad(catalog, &batch, config.lambda)
                .and_then(|(loss, grads)| {
                    if !loss.is_finite() {
                        return Err(Error::NonFinite("training loss".into()));
                    }
                    opt.step(&mut model, &grads)?;
                    Ok(loss)
                })
                .and_then(|loss| {
                    if model.all_finite() {
                        Ok(loss)
                    } else {
                        Err(Error::NonFinite("parameters".into()))
                    }
                });
            match step {
                Ok(loss) => {
                    loss_sum += loss;
                    batches += 1;
                }
                Err(e) => {
                    return Err(TrainFailure {
                        error: Error::Diverged {
                            epoch,
                            message: e.to_string(),
                        },
                        last_good: snapshot(&best, &history),
                    })
                }
            }
        }
        let (valid_accuracy, valid_loss) = match triple_accuracy(&model, catalog, &valid) {
            Ok(v) => v,
            Err(e) => {
                return Err(TrainFailure {
                    error: Error::Diverged {
                        epoch,
                        message: e.to_string(),
                    },
                    last_good: snapshot(&best, &history),
                })
            }
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            valid_loss,
            valid_accuracy,
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, valid loss {:.5}, valid accuracy {:.4}",
            record.train_loss,
            valid_loss,
            valid_accuracy
        );
        history.push(record);
        if best.as_ref().is_none_or(|(acc, _, _)| valid_accuracy > *acc) {
            best = Some((valid_accuracy, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log::info!("no improvement for {stale} epochs, stopping");
                break;
            }
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}
