use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::spec::{ArchitectureSpec, CnnSpec, LstmSpec, MlpSpec};
use super::train::EpochStats;
use super::{Classifier, Differentiable, ModelError};
use crate::tensor::{init, NamedTensorArchive, ParamStore, Tape, Tensor, Var};
use crate::{seeds, Frame, FRAME_LEN, FRAME_ROWS, FRAME_SIZE, NUM_CLASSES};

/// Metadata key holding the model family in a checkpoint archive.
pub const CHECKPOINT_FAMILY_KEY: &str = "arch.family";

/// A classifier's architecture, its parameters, and the history of the
/// training run that produced them (empty for untrained or loaded models).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ArchitectureSpec,
    pub params: ParamStore,
    pub history: Vec<EpochStats>,
}

pub(crate) enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl TrainedModel {
    /// Initializes parameters for `spec`; deterministic in `seed`.
    pub fn build(spec: ArchitectureSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = seeds::rng(seed, &[0x1A17, spec.family() as u64]);
        let mut p = ParamStore::new();
        match &spec {
            ArchitectureSpec::Cnn(s) => {
                p.add("conv1.w", init::conv(&mut rng, s.conv1_filters, FRAME_ROWS, s.conv1_width))?;
                p.add("conv1.b", Tensor::zeros(&[s.conv1_filters]))?;
                p.add("conv2.w", init::conv(&mut rng, s.conv2_filters, s.conv1_filters, s.conv2_width))?;
                p.add("conv2.b", Tensor::zeros(&[s.conv2_filters]))?;
                let flat = s.conv2_filters * cnn_out_len(s);
                p.add("dense1.w", init::dense(&mut rng, flat, s.dense))?;
                p.add("dense1.b", Tensor::zeros(&[s.dense]))?;
                p.add("out.w", init::dense(&mut rng, s.dense, NUM_CLASSES))?;
                p.add("out.b", Tensor::zeros(&[NUM_CLASSES]))?;
            }
            ArchitectureSpec::Lstm(s) => {
                let h = s.hidden;
                p.add("lstm.w_ih", init::glorot_uniform(&mut rng, &[FRAME_ROWS, 4 * h], FRAME_ROWS, 4 * h))?;
                p.add("lstm.w_hh", init::recurrent(&mut rng, h))?;
                p.add("lstm.b", init::lstm_bias(h))?;
                p.add("out.w", init::dense(&mut rng, h, NUM_CLASSES))?;
                p.add("out.b", Tensor::zeros(&[NUM_CLASSES]))?;
            }
            ArchitectureSpec::Mlp(s) => {
                let mut fan_in = FRAME_SIZE;
                for (i, &w) in s.hidden.iter().enumerate() {
                    p.add(format!("dense{}.w", i + 1), init::dense(&mut rng, fan_in, w))?;
                    p.add(format!("dense{}.b", i + 1), Tensor::zeros(&[w]))?;
                    fan_in = w;
                }
                p.add("out.w", init::dense(&mut rng, fan_in, NUM_CLASSES))?;
                p.add("out.b", Tensor::zeros(&[NUM_CLASSES]))?;
            }
        }
        Ok(Self {
            spec,
            params: p,
            history: Vec::new(),
        })
    }

    /// Stacks frames into a `[b, 2, 128]` input tensor.
    pub(crate) fn input_tensor(frames: &[&Frame]) -> Tensor {
        let mut data = Vec::with_capacity(frames.len() * FRAME_SIZE);
        for f in frames {
            data.extend_from_slice(f.as_slice());
        }
        Tensor::new(vec![frames.len(), FRAME_ROWS, FRAME_LEN], data).expect("frame size")
    }

    /// Records the network on `tape` and returns the `[b, 11]` logits.
    pub(crate) fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        x: Var,
        params: &[Var],
        mode: Mode<'_>,
    ) -> Result<Var, ModelError> {
        let mut mode = mode;
        let mut dropout = |tape: &mut Tape<'a>, v: Var, rate: f32| -> Result<Var, ModelError> {
            match &mut mode {
                Mode::Train(rng) if rate > 0.0 => Ok(tape.dropout(v, rate, *rng)?),
                _ => Ok(v),
            }
        };
        let out = match &self.spec {
            ArchitectureSpec::Cnn(s) => {
                let (pl1, pr1) = same_padding(s.conv1_width);
                let (pl2, pr2) = same_padding(s.conv2_width);
                let h = tape.conv1d(x, params[0], pl1, pr1)?;
                let h = tape.add_bias(h, params[1])?;
                let h = tape.relu(h);
                let h = tape.max_pool1d(h, s.pool)?;
                let h = tape.conv1d(h, params[2], pl2, pr2)?;
                let h = tape.add_bias(h, params[3])?;
                let h = tape.relu(h);
                let h = tape.max_pool1d(h, s.pool)?;
                let h = tape.flatten(h)?;
                let h = tape.matmul(h, params[4])?;
                let h = tape.add_bias(h, params[5])?;
                let h = tape.relu(h);
                let h = dropout(tape, h, s.dropout)?;
                let h = tape.matmul(h, params[6])?;
                tape.add_bias(h, params[7])?
            }
            ArchitectureSpec::Lstm(LstmSpec { hidden }) => {
                let state = tape.sequence_lstm(x, params[0], params[1], params[2])?;
                let h = tape.slice_cols(state, 0, *hidden)?;
                let h = tape.matmul(h, params[3])?;
                tape.add_bias(h, params[4])?
            }
            ArchitectureSpec::Mlp(MlpSpec { hidden, dropout: rate }) => {
                let mut h = tape.flatten(x)?;
                for i in 0..hidden.len() {
                    h = tape.matmul(h, params[2 * i])?;
                    h = tape.add_bias(h, params[2 * i + 1])?;
                    h = tape.relu(h);
                    h = dropout(tape, h, *rate)?;
                }
                let n = hidden.len();
                let h = tape.matmul(h, params[2 * n])?;
                tape.add_bias(h, params[2 * n + 1])?
            }
        };
        Ok(out)
    }

    pub fn to_archive(&self) -> NamedTensorArchive {
        let mut metadata = self.spec.to_kv();
        metadata.insert("num_classes".into(), NUM_CLASSES.to_string());
        NamedTensorArchive {
            metadata,
            tensors: self
                .params
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    /// Rebuilds a model from an archive. When `expected` is given, the
    /// archive's architecture must match it exactly.
    pub fn from_archive(
        archive: NamedTensorArchive,
        expected: Option<&ArchitectureSpec>,
    ) -> Result<Self, ModelError> {
        let spec = ArchitectureSpec::from_kv(&archive.metadata)?;
        if let Some(exp) = expected {
            if *exp != spec {
                return Err(ModelError::SpecMismatch {
                    expected: exp.describe(),
                    found: spec.describe(),
                });
            }
        }
        let mut model = Self::build(spec, 0)?;
        model
            .params
            .load_values(archive.tensors)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Ok(model)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        Ok(self.to_archive().save(path)?)
    }

    pub fn load_checkpoint(
        path: impl AsRef<Path>,
        expected: Option<&ArchitectureSpec>,
    ) -> Result<Self, ModelError> {
        Self::from_archive(NamedTensorArchive::load(path)?, expected)
    }
}

fn cnn_out_len(s: &CnnSpec) -> usize {
    FRAME_LEN / s.pool / s.pool
}

/// Padding that keeps the sequence length: `(w-1)/2` on the left, the rest on the right.
fn same_padding(width: usize) -> (usize, usize) {
    let left = (width - 1) / 2;
    (left, width - 1 - left)
}

impl Classifier for TrainedModel {
    fn num_classes(&self) -> usize {
        NUM_CLASSES
    }

    fn logits_batch(&self, frames: &[&Frame]) -> Result<Vec<Vec<f32>>, ModelError> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let params = self.params.record(&mut tape, false);
        let x = tape.leaf(Self::input_tensor(frames), false);
        let z = self.forward(&mut tape, x, &params, Mode::Eval)?;
        Ok(tape
            .value(z)
            .data()
            .chunks(NUM_CLASSES)
            .map(|r| r.to_vec())
            .collect())
    }
}

impl Differentiable for TrainedModel {
    fn logits_and_input_grad(
        &self,
        frame: &Frame,
        seed: &mut dyn FnMut(&[f32]) -> Vec<f32>,
    ) -> Result<(Vec<f32>, Vec<f32>), ModelError> {
        let mut tape = Tape::new();
        let params = self.params.record(&mut tape, false);
        let x = tape.leaf(Self::input_tensor(&[frame]), true);
        let z = self.forward(&mut tape, x, &params, Mode::Eval)?;
        let logits = tape.value(z).data().to_vec();
        let upstream = seed(&logits);
        let upstream = Tensor::new(vec![1, NUM_CLASSES], upstream)?;
        let mut grads = tape.backward_with_seed(z, upstream)?;
        let gx = grads
            .take(x)
            .map(Tensor::into_data)
            .unwrap_or_else(|| vec![0.0; FRAME_SIZE]);
        Ok((logits, gx))
    }
}
