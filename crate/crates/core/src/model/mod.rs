//! The attention CNN: configuration, parameters, forward pass and the
//! training, evaluation and persistence around it.

mod ablation;
mod checkpoint;
mod data;
mod eval;
mod train;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use chladni_neural::init::kaiming_uniform;
use chladni_neural::{softmax, NeuralError, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synth::{SandImage, SynthError};

pub use self::ablation::{run_ablation, AblationRow};
pub use self::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use self::data::{image_to_input, Samples};
pub use self::eval::{benchmark_latency, evaluate, metrics_from_confusion, EvalReport, LatencyStats};
pub use self::train::{train, train_split, validation_split, EarlyStopping, EpochRecord, TrainConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid training config: {0}")]
    TrainConfig(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("training diverged in epoch {epoch}: {source}")]
    Diverged { epoch: usize, source: NeuralError },
    #[error("no training samples")]
    EmptyTrainSplit,
    #[error("sample set is empty")]
    EmptySamples,
    #[error("label {label} outside {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("input is {got}x{got} but the model expects {expected}x{expected}")]
    InputSize { got: usize, expected: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Basic,
    Cbam5,
    Cbam7,
}

impl Variant {
    pub const ALL: [Self; 3] = [Self::Basic, Self::Cbam5, Self::Cbam7];

    /// Spatial-attention kernel, or `None` when the block has no CBAM.
    pub fn spatial_kernel(self) -> Option<usize> {
        match self {
            Self::Basic => None,
            Self::Cbam5 => Some(5),
            Self::Cbam7 => Some(7),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Basic => "basic",
            Self::Cbam5 => "cbam5",
            Self::Cbam7 => "cbam7",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?} (expected basic, cbam5 or cbam7)"))
    }
}

/// Side of the adaptive pool output feeding the classifier head.
pub const POOLED_SIDE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub image_size: usize,
    pub channel_widths: [usize; 4],
    pub num_classes: usize,
    pub cbam_reduction: usize,
    pub dropout_p: f64,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Cbam5,
            image_size: 224,
            channel_widths: [32, 64, 128, 256],
            num_classes: 15,
            cbam_reduction: 16,
            dropout_p: 0.5,
            hidden: 512,
        }
    }
}

impl ModelConfig {
    /// The 64² desk profile with the full channel widths.
    pub fn desk(variant: Variant) -> Self {
        Self { variant, image_size: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.image_size == 0 || self.image_size % 8 != 0 {
            return bad(format!("image_size must be a positive multiple of 8, got {}", self.image_size));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be ≥ 2, got {}", self.num_classes));
        }
        if self.channel_widths.contains(&0) || self.hidden == 0 {
            return bad("channel widths and hidden size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if self.variant != Variant::Basic {
            let c = self.channel_widths[3];
            if self.cbam_reduction == 0 || c % self.cbam_reduction != 0 {
                return bad(format!("{c} channels are not divisible by reduction {}", self.cbam_reduction));
            }
        }
        Ok(())
    }

    pub fn flattened(&self) -> usize {
        self.channel_widths[3] * POOLED_SIDE * POOLED_SIDE
    }

    /// Parameter names and shapes in canonical order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let w = self.channel_widths;
        let mut shapes = Vec::new();
        let mut cin = 3;
        for (i, &cout) in w.iter().enumerate() {
            shapes.push((format!("conv{}.weight", i + 1), vec![cout, cin, 3, 3]));
            shapes.push((format!("conv{}.bias", i + 1), vec![cout]));
            cin = cout;
        }
        if let Some(k) = self.variant.spatial_kernel() {
            let (c, r) = (w[3], w[3] / self.cbam_reduction);
            shapes.push(("cbam.mlp1.weight".into(), vec![c, r]));
            shapes.push(("cbam.mlp1.bias".into(), vec![r]));
            shapes.push(("cbam.mlp2.weight".into(), vec![r, c]));
            shapes.push(("cbam.mlp2.bias".into(), vec![c]));
            shapes.push(("cbam.spatial.weight".into(), vec![1, 2, k, k]));
            shapes.push(("cbam.spatial.bias".into(), vec![1]));
        }
        shapes.push(("fc1.weight".into(), vec![self.flattened(), self.hidden]));
        shapes.push(("fc1.bias".into(), vec![self.hidden]));
        shapes.push(("fc2.weight".into(), vec![self.hidden, self.num_classes]));
        shapes.push(("fc2.bias".into(), vec![self.num_classes]));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes().iter().map(|(_, d)| d.iter().product::<usize>()).sum()
    }
}

/// Recognition of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mode_id: usize,
    pub confidence: f32,
    pub probabilities: Vec<f32>,
    pub inference_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

/// Tape variables for every parameter, in canonical order.
struct Bound<'a> {
    vars: &'a [Var],
    names: &'a [String],
}

impl Bound<'_> {
    fn get(&self, name: &str) -> Var {
        let i = self.names.iter().position(|n| n == name).unwrap_or_else(|| panic!("missing parameter {name}"));
        self.vars[i]
    }
}

/// `σ(MLP(avg(F)) + MLP(max(F)))` with a shared two-layer MLP; `[N, C, 1, 1]`.
pub fn channel_attention<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    mlp: [Var; 4],
) -> chladni_neural::Result<Var> {
    let [n, c, _, _] = tape.value(features).dims4("channel_attention")?;
    let [w1, b1, w2, b2] = mlp;
    let branch = |tape: &mut Tape<T>, pooled: Var| -> chladni_neural::Result<Var> {
        let flat = tape.reshape(pooled, [n, c])?;
        let hidden = tape.linear(flat, w1, b1)?;
        let hidden = tape.relu(hidden)?;
        tape.linear(hidden, w2, b2)
    };
    let avg = tape.global_avg_pool(features)?;
    let max = tape.global_max_pool(features)?;
    let a = branch(tape, avg)?;
    let m = branch(tape, max)?;
    let sum = tape.add(a, m)?;
    let gate = tape.sigmoid(sum)?;
    tape.reshape(gate, [n, c, 1, 1])
}

/// `σ(conv_k([mean_C(F); max_C(F)]))` with same padding; `[N, 1, H, W]`.
pub fn spatial_attention<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    weight: Var,
    bias: Var,
) -> chladni_neural::Result<Var> {
    let k = tape.value(weight).dims()[2];
    let mean = tape.channel_mean(features)?;
    let max = tape.channel_max(features)?;
    let stacked = tape.concat_channels(&[mean, max])?;
    let logits = tape.conv2d(stacked, weight, bias, (k - 1) / 2, 1)?;
    tape.sigmoid(logits)
}

/// Channel attention then spatial attention, each applied multiplicatively.
pub fn cbam<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    mlp: [Var; 4],
    spatial: [Var; 2],
) -> chladni_neural::Result<Var> {
    let ca = channel_attention(tape, features, mlp)?;
    let refined = tape.mul(features, ca)?;
    let sa = spatial_attention(tape, refined, spatial[0], spatial[1])?;
    tape.mul(refined, sa)
}

impl<T: Scalar> Model<T> {
    /// Kaiming-uniform weights (fan-in), zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, dims) in config.parameter_shapes() {
            let tensor = if name.ends_with(".bias") {
                Tensor::zeros(dims)
            } else {
                let fan_in = if dims.len() == 4 { dims[1] * dims[2] * dims[3] } else { dims[0] };
                kaiming_uniform(dims, fan_in, &mut rng)
            };
            names.push(name);
            params.push(tensor);
        }
        Ok(Self { config, names, params })
    }

    pub fn from_parts(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if expected.len() != named.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        for ((name, dims), (got_name, t)) in expected.iter().zip(&named) {
            if name != got_name || dims.as_slice() != t.dims() {
                return Err(ModelError::Config(format!(
                    "parameter {got_name} {:?} does not match expected {name} {dims:?}",
                    t.dims()
                )));
            }
        }
        let (names, params) = named.into_iter().unzip();
        Ok(Self { config, names, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), names: self.names.clone(), params: self.params.iter().map(Tensor::cast).collect() }
    }

    /// Registers every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Records the forward pass of `input` (`[N, 3, S, S]`) and returns the
    /// logits `[N, classes]`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        input: Var,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        self.forward_traced(tape, vars, input, training, rng, &mut Vec::new())
    }

    /// [`Model::forward`] that also records each stage's output shape.
    pub fn forward_traced(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        input: Var,
        training: bool,
        rng: &mut impl Rng,
        trace: &mut Vec<(String, Vec<usize>)>,
    ) -> Result<Var> {
        let [n, c, h, w] = tape.value(input).dims4("model input")?;
        let s = self.config.image_size;
        if c != 3 || h != s || w != s {
            return Err(ModelError::Config(format!("input is [{n}, {c}, {h}, {w}], expected [N, 3, {s}, {s}]")));
        }
        let p = Bound { vars, names: &self.names };
        let mut x = input;
        for block in 1..=4 {
            x = tape.conv2d(x, p.get(&format!("conv{block}.weight")), p.get(&format!("conv{block}.bias")), 1, 1)?;
            x = tape.relu(x)?;
            if block < 4 {
                x = tape.maxpool2(x)?;
            }
            trace.push((format!("block{block}"), tape.value(x).dims().to_vec()));
        }
        if self.config.variant != Variant::Basic {
            let mlp = ["cbam.mlp1.weight", "cbam.mlp1.bias", "cbam.mlp2.weight", "cbam.mlp2.bias"].map(|k| p.get(k));
            let spatial = [p.get("cbam.spatial.weight"), p.get("cbam.spatial.bias")];
            x = cbam(tape, x, mlp, spatial)?;
            trace.push(("cbam".into(), tape.value(x).dims().to_vec()));
        }
        x = tape.adaptive_avg_pool(x, POOLED_SIDE)?;
        trace.push(("pool".into(), tape.value(x).dims().to_vec()));
        x = tape.reshape(x, [n, self.config.flattened()])?;
        x = tape.linear(x, p.get("fc1.weight"), p.get("fc1.bias"))?;
        x = tape.relu(x)?;
        x = tape.dropout(x, self.config.dropout_p, training, rng)?;
        let logits = tape.linear(x, p.get("fc2.weight"), p.get("fc2.bias"))?;
        trace.push(("logits".into(), tape.value(logits).dims().to_vec()));
        Ok(logits)
    }

    /// Inference-mode logits for a batch `[N, 3, S, S]`.
    pub fn logits(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let x = tape.constant(input.clone());
        // Dropout is the identity outside training, so the generator is never drawn from.
        let out = self.forward(&mut tape, &vars, x, false, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(tape.value(out).clone())
    }
}

impl Model<f32> {
    /// Classifies one image, resizing it to the model input when needed.
    pub fn classify(&self, img: &SandImage) -> Result<Prediction> {
        let start = Instant::now();
        let input = image_to_input(img, self.config.image_size);
        let logits = self.logits(&input)?;
        let probs = softmax(&logits)?;
        let probabilities = probs.into_data();
        let (mode_id, &confidence) = probabilities
            .iter()
            .enumerate()
            .fold((0, &f32::NEG_INFINITY), |best, (i, p)| if *p > *best.1 { (i, p) } else { best });
        Ok(Prediction { mode_id, confidence, probabilities, inference_ms: start.elapsed().as_secs_f64() * 1e3 })
    }
}
