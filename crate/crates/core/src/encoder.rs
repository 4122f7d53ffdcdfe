//! Twin encoder towers.
//!
//! A tower is a body `E` (3×3 conv + ReLU + 2×2 average-pool blocks, then a
//! fully connected feature layer), an embedding head `g` (two dense layers
//! with a ReLU between them, followed by row normalization) and a relevancy
//! head `h` (one dense layer + softmax) that reads the normalized embedding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numeric::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// `[height, width, channels]`.
    pub input_shape: [usize; 3],
    /// Output channels of each conv block.
    pub conv_channels: Vec<usize>,
    pub feature_dim: usize,
    /// Width of the hidden layer inside the embedding head.
    pub embed_hidden: usize,
    pub embed_dim: usize,
    /// Number of memory prototypes `K` (width of the relevancy head).
    pub prototypes: usize,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_shape: [28, 28, 1],
            conv_channels: vec![16, 32],
            feature_dim: 256,
            embed_hidden: 256,
            embed_dim: 128,
            prototypes: 10,
            init_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let [h, w, c] = self.input_shape;
        ensure!(h >= 1 && w >= 1 && c >= 1, Config, "input shape {:?}", self.input_shape);
        ensure!(
            self.conv_channels.iter().all(|&c| c >= 1),
            Config,
            "conv channel counts must be positive"
        );
        ensure!(
            self.feature_dim >= 1
                && self.embed_hidden >= 1
                && self.embed_dim >= 1
                && self.prototypes >= 1,
            Config,
            "feature/embedding dims and prototype count must be positive"
        );
        let (mut sh, mut sw) = (h, w);
        for _ in &self.conv_channels {
            ensure!(
                sh >= 2 && sw >= 2,
                Config,
                "{} conv blocks downsample {h}x{w} input below 1x1",
                self.conv_channels.len()
            );
            sh /= 2;
            sw /= 2;
        }
        Ok(())
    }

    /// Length of the flattened body output fed into the feature layer.
    pub fn flat_dim(&self) -> usize {
        let [mut h, mut w, c] = self.input_shape;
        for _ in &self.conv_channels {
            h /= 2;
            w /= 2;
        }
        h * w * self.conv_channels.last().copied().unwrap_or(c)
    }
}

/// Named trainable tensors of one tower, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        ensure!(
            names.len() == tensors.len(),
            Contract,
            "{} names for {} tensors",
            names.len(),
            tensors.len()
        );
        Ok(Self { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }
}

/// Parameters of one tower (`θ^q` or `θ^k`).
///
/// Names are prefixed `body.`, `embed.` or `relevancy.` for `E`, `g` and `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tower {
    config: EncoderConfig,
    params: ParamSet,
}

/// Per-batch encoder outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchFeatures {
    /// `N × d_f`
    pub features: Tensor,
    /// `N × d_z`, unit rows.
    pub embeddings: Tensor,
    /// `N × K`, probability rows.
    pub relevancy: Tensor,
}

impl BatchFeatures {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tape handles for the three tower outputs.
#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    pub features: Var,
    pub embeddings: Var,
    pub relevancy: Var,
}

impl Tower {
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: String, t: Tensor| {
            names.push(name);
            tensors.push(t);
        };

        let mut cin = config.input_shape[2];
        for (i, &cout) in config.conv_channels.iter().enumerate() {
            let w = uniform_fan_in(&mut rng, &[3, 3, cin, cout], 9 * cin);
            push(format!("body.conv{i}.weight"), w);
            push(format!("body.conv{i}.bias"), uniform_bias(&mut rng, cout, 9 * cin));
            cin = cout;
        }
        let dense = [
            ("body.fc", config.flat_dim(), config.feature_dim),
            ("embed.fc1", config.feature_dim, config.embed_hidden),
            ("embed.fc2", config.embed_hidden, config.embed_dim),
            ("relevancy.fc", config.embed_dim, config.prototypes),
        ];
        for (name, fan_in, fan_out) in dense {
            let w = uniform_fan_in(&mut rng, &[fan_in, fan_out], fan_in);
            push(format!("{name}.weight"), w);
            push(format!("{name}.bias"), uniform_bias(&mut rng, fan_out, fan_in));
        }
        Ok(Self {
            config: config.clone(),
            params: ParamSet::new(names, tensors)?,
        })
    }

    pub fn from_params(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::init(&config)?;
        ensure!(
            reference.params.same_layout(&params),
            Contract,
            "parameter set does not match the encoder architecture"
        );
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Puts every parameter on `tape`, as trainable leaves or as constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Records the forward pass for `images` (`[N, H, W, C]`) on `tape`,
    /// using parameter handles from [`Tower::register`].
    pub fn forward(&self, tape: &mut Tape, params: &[Var], images: &Tensor) -> Result<EncodedVars> {
        ensure!(
            params.len() == self.params.tensors.len(),
            Contract,
            "{} parameter handles for {} parameters",
            params.len(),
            self.params.tensors.len()
        );
        let [h, w, c] = self.config.input_shape;
        let n = match images.shape() {
            [n, ih, iw, ic] if (*ih, *iw, *ic) == (h, w, c) => *n,
            other => {
                return Err(Error::Contract(format!(
                    "images of shape {other:?}, encoder expects [N, {h}, {w}, {c}]"
                )))
            }
        };
        ensure!(n > 0, Contract, "empty image batch");

        let mut p = params.iter().copied();
        let mut next = || p.next().expect("parameter count checked above");

        let mut x = tape.constant(images.clone());
        for _ in &self.config.conv_channels {
            let (wv, bv) = (next(), next());
            x = tape.conv3x3(x, wv, bv)?;
            x = tape.relu(x);
            x = tape.avg_pool2(x)?;
        }
        let flat = tape.reshape(x, &[n, self.config.flat_dim()])?;
        let features = dense(tape, flat, next(), next())?;

        let hidden = dense(tape, features, next(), next())?;
        let hidden = tape.relu(hidden);
        let raw = dense(tape, hidden, next(), next())?;
        let embeddings = tape.normalize_rows(raw)?;

        let logits = dense(tape, embeddings, next(), next())?;
        let relevancy = tape.softmax_rows(logits)?;
        Ok(EncodedVars {
            features,
            embeddings,
            relevancy,
        })
    }

    /// Forward pass without gradient tracking.
    pub fn encode(&self, images: &Tensor) -> Result<BatchFeatures> {
        let mut tape = Tape::new();
        let params = self.register(&mut tape, false);
        let out = self.forward(&mut tape, &params, images)?;
        Ok(BatchFeatures {
            features: tape.value(out.features).clone(),
            embeddings: tape.value(out.embeddings).clone(),
            relevancy: tape.value(out.relevancy).clone(),
        })
    }

    /// `θ_k := α·θ_k + (1 − α)·θ_q`, applied to `self` as the key tower.
    pub fn momentum_update(&mut self, query: &Tower, alpha: f64) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&alpha),
            Contract,
            "momentum coefficient {alpha} outside [0, 1]"
        );
        ensure!(
            self.params.same_layout(&query.params),
            Contract,
            "momentum update between towers of different architecture"
        );
        if alpha == 1.0 {
            return Ok(());
        }
        for (k, q) in self.params.tensors.iter_mut().zip(&query.params.tensors) {
            if alpha == 0.0 {
                k.data_mut().copy_from_slice(q.data());
                continue;
            }
            for (kv, qv) in k.data_mut().iter_mut().zip(q.data()) {
                *kv = alpha * *kv + (1.0 - alpha) * qv;
            }
        }
        Ok(())
    }
}

fn dense(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let y = tape.matmul(x, weight)?;
    tape.add_row_bias(y, bias)
}

/// Biases in `±1/√fan_in`, so no unit starts exactly at zero.
fn uniform_bias(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(&[len], data).expect("shape and length agree")
}

fn uniform_fan_in(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape and length agree")
}
