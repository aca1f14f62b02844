use chladni_neural::{one_hot, softmax_cross_entropy, Adam, AdamConfig, NeuralError, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, Model, ModelConfig, ModelError, Result, Samples};

const DROPOUT_SALT: u64 = 0xd1b5_4a32_d192_ed03;
const VAL_SALT: u64 = 0x2545_f491_4f6c_dd1d;
const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 32, lr: 1e-4, max_epochs: 50, early_stop_patience: 10, val_fraction: 0.1, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::TrainConfig(m));
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if self.early_stop_patience == 0 || self.early_stop_patience >= self.max_epochs {
            return bad(format!(
                "early_stop_patience must lie in [1, max_epochs), got {} with max_epochs {}",
                self.early_stop_patience, self.max_epochs
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and ≥ 0, got {}", self.lr));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Tracks the best validation loss and when to give up.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: None, since_best: 0 }
    }

    /// Records `val_loss` for `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Mean cross-entropy and accuracy in inference mode.
pub(crate) fn loss_and_accuracy(model: &Model<f32>, samples: &Samples) -> Result<(f64, f64)> {
    let classes = model.config().num_classes;
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    let indices: Vec<usize> = (0..samples.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, labels) = samples.batch(chunk);
        let logits = model.logits(&x)?;
        let (loss, _) = softmax_cross_entropy(&logits, &one_hot::<f32>(&labels, classes))?;
        loss_sum += f64::from(loss) * chunk.len() as f64;
        correct += logits.argmax_rows()?.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok((loss_sum / samples.len() as f64, correct as f64 / samples.len() as f64))
}

fn train_step(
    model: &mut Model<f32>,
    adam: &mut Adam<f32>,
    x: Tensor<f32>,
    labels: &[usize],
    dropout_rng: &mut ChaCha8Rng,
) -> std::result::Result<f64, ModelError> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let input = tape.constant(x);
    let logits = model.forward(&mut tape, &vars, input, true, dropout_rng)?;
    let classes = model.config().num_classes;
    let (loss, grad) = softmax_cross_entropy(tape.value(logits), &one_hot::<f32>(labels, classes))?;
    if !loss.is_finite() {
        return Err(NeuralError::NonFinite { op: "softmax_cross_entropy" }.into());
    }
    let mut grads = tape.backward(logits, grad)?;
    let grads: Vec<Tensor<f32>> = vars
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.dims().to_vec())))
        .collect();
    adam.step(model.params_mut(), &grads)?;
    Ok(f64::from(loss))
}

/// Trains on `samples`, holding out a stratified `val_fraction` of them for
/// early stopping.
pub fn train(samples: &Samples, mc: &ModelConfig, tc: &TrainConfig) -> Result<Checkpoint> {
    tc.validate()?;
    let (fit, val) = validation_split(samples, tc);
    train_split(&fit, &val, mc, tc, |_| {})
}

/// The `(fit, val)` split [`train`] uses: a stratified `val_fraction` held
/// out under a seed derived from `tc.seed`.
pub fn validation_split(samples: &Samples, tc: &TrainConfig) -> (Samples, Samples) {
    samples.stratified_split(tc.val_fraction, tc.seed ^ VAL_SALT)
}

/// Trains on `fit` with early stopping on `val`, calling `on_epoch` after
/// every epoch. Returns the parameters of the epoch with the lowest
/// validation loss.
pub fn train_split(
    fit: &Samples,
    val: &Samples,
    mc: &ModelConfig,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    tc.validate()?;
    mc.validate()?;
    if fit.is_empty() {
        return Err(ModelError::EmptyTrainSplit);
    }
    if val.is_empty() {
        return Err(ModelError::EmptySamples);
    }
    for s in [fit, val] {
        if s.image_size() != mc.image_size {
            return Err(ModelError::InputSize { got: s.image_size(), expected: mc.image_size });
        }
        if let Some(&label) = s.labels().iter().find(|&&l| l >= mc.num_classes) {
            return Err(ModelError::Label { label, classes: mc.num_classes });
        }
    }

    let mut model = Model::<f32>::init(mc.clone(), tc.seed)?;
    let mut adam = Adam::new(AdamConfig { lr: tc.lr, ..AdamConfig::default() });
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(tc.seed ^ DROPOUT_SALT);
    let mut stopper = EarlyStopping::new(tc.early_stop_patience);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..fit.len()).collect();

    for epoch in 0..tc.max_epochs {
        let diverged = |source: ModelError| match source {
            ModelError::Neural(source) => ModelError::Diverged { epoch, source },
            other => other,
        };
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let (x, labels) = fit.batch(batch);
            let loss = train_step(&mut model, &mut adam, x, &labels, &mut dropout_rng).map_err(diverged)?;
            loss_sum += loss * batch.len() as f64;
        }
        let (val_loss, val_accuracy) = loss_and_accuracy(&model, val).map_err(diverged)?;
        let record = EpochRecord { epoch, train_loss: loss_sum / fit.len() as f64, val_loss, val_accuracy };
        log::info!(
            "epoch {epoch}: train loss {:.4}, val loss {:.4}, val accuracy {:.3}",
            record.train_loss,
            val_loss,
            val_accuracy
        );
        on_epoch(&record);
        history.push(record);
        if stopper.observe(epoch, val_loss) {
            best = model.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    let best_epoch = stopper.best_epoch().unwrap_or(0);
    Ok(Checkpoint { model: best, history, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopper_counts_stalled_epochs() {
        let mut s = EarlyStopping::new(3);
        assert!(s.observe(0, 1.0));
        for e in 1..3 {
            assert!(!s.observe(e, 1.0));
            assert!(!s.should_stop());
        }
        assert!(!s.observe(3, 1.5));
        assert!(s.should_stop());
        assert_eq!(s.best_epoch(), Some(0));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { early_stop_patience: 50, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }
}
