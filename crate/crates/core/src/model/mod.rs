//! The three-part classifier: an embedding sub-network over one or two input
//! streams, an emotion head, and (adversarial variants only) a confound head
//! that reads the embedding through a gradient reversal node.

mod checkpoint;
mod spec;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, load_checkpoint_unchecked, save_checkpoint, write_atomic, CHECKPOINT_MAGIC};
pub use spec::{
    BranchHyper, EmotionTarget, HeadHyper, Modality, TrainingMode, VariantSpec, EMOTION_CLASSES,
    MFB_DIM, WORD_DIM,
};

use crate::error::{Error, Result};
use crate::netcore::{Activation, GrlConfig, GruParams, NodeId, Tape, Tensor};

/// Learnable tensors of one variant, keyed by layer path.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    spec: VariantSpec,
    fingerprint: String,
    tensors: BTreeMap<String, Tensor>,
}

/// Shape and Glorot fans of one parameter tensor.
#[derive(Debug, Clone)]
pub(crate) struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub bias: bool,
}

fn push_gru(slots: &mut Vec<ParamSlot>, prefix: &str, din: usize, hid: usize) {
    for gate in ["update", "reset", "cand"] {
        slots.push(ParamSlot {
            name: format!("{prefix}.w_{gate}"),
            shape: vec![din, hid],
            fan_in: din,
            fan_out: hid,
            bias: false,
        });
        slots.push(ParamSlot {
            name: format!("{prefix}.u_{gate}"),
            shape: vec![hid, hid],
            fan_in: hid,
            fan_out: hid,
            bias: false,
        });
        slots.push(ParamSlot {
            name: format!("{prefix}.b_{gate}"),
            shape: vec![hid],
            fan_in: hid,
            fan_out: hid,
            bias: true,
        });
    }
}

fn push_dense(slots: &mut Vec<ParamSlot>, prefix: &str, din: usize, dout: usize) {
    slots.push(ParamSlot {
        name: format!("{prefix}.w"),
        shape: vec![din, dout],
        fan_in: din,
        fan_out: dout,
        bias: false,
    });
    slots.push(ParamSlot {
        name: format!("{prefix}.b"),
        shape: vec![dout],
        fan_in: din,
        fan_out: dout,
        bias: true,
    });
}

fn branch_slots(slots: &mut Vec<ParamSlot>, prefix: &str, hyper: &BranchHyper, din: usize) {
    let mut d = din;
    for i in 0..hyper.conv_layers {
        let k = hyper.kernel_width;
        slots.push(ParamSlot {
            name: format!("{prefix}.conv{i}.kernel"),
            shape: vec![k, d, hyper.conv_width],
            fan_in: k * d,
            fan_out: k * hyper.conv_width,
            bias: false,
        });
        slots.push(ParamSlot {
            name: format!("{prefix}.conv{i}.bias"),
            shape: vec![hyper.conv_width],
            fan_in: k * d,
            fan_out: k * hyper.conv_width,
            bias: true,
        });
        d = hyper.conv_width;
    }
    for i in 0..hyper.gru_layers {
        push_gru(slots, &format!("{prefix}.gru{i}"), d, hyper.gru_width);
        d = hyper.gru_width;
    }
}

/// Parameter layout of a dense head: hidden layers then the output layer.
pub(crate) fn head_slots(slots: &mut Vec<ParamSlot>, prefix: &str, head: &HeadHyper, din: usize, classes: usize) {
    let mut d = din;
    for i in 0..head.dense_layers {
        push_dense(slots, &format!("{prefix}.dense{i}"), d, head.dense_width);
        d = head.dense_width;
    }
    push_dense(slots, &format!("{prefix}.out"), d, classes);
}

fn layout(spec: &VariantSpec) -> Vec<ParamSlot> {
    let mut slots = Vec::new();
    if let Some(b) = &spec.acoustic {
        branch_slots(&mut slots, "acoustic", b, spec.acoustic_dim);
    }
    if let Some(b) = &spec.lexical {
        branch_slots(&mut slots, "lexical", b, spec.lexical_dim);
    }
    let emb = spec.embedding_dim();
    head_slots(&mut slots, "emotion", &spec.head, emb, EMOTION_CLASSES);
    if spec.is_adversarial() {
        head_slots(&mut slots, "confound", &spec.head, emb, spec.confound_classes);
    }
    slots
}

/// Uniform Glorot initialization in slot order; biases start at zero.
pub(crate) fn init_slots(slots: &[ParamSlot], rng: &mut ChaCha8Rng) -> BTreeMap<String, Tensor> {
    let mut tensors = BTreeMap::new();
    for slot in slots {
        let n: usize = slot.shape.iter().product();
        let data = if slot.bias {
            vec![0.0; n]
        } else {
            let limit = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
        };
        let t = Tensor::new(slot.shape.clone(), data).expect("layout shapes are valid");
        tensors.insert(slot.name.clone(), t);
    }
    tensors
}

/// Initializes the parameters of `spec` from `seed`.
pub fn build_variant(spec: &VariantSpec, seed: u64) -> Result<NetworkParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = init_slots(&layout(spec), &mut rng);
    Ok(NetworkParams {
        spec: spec.clone(),
        fingerprint: spec.fingerprint(),
        tensors,
    })
}

impl NetworkParams {
    pub(crate) fn from_parts(spec: VariantSpec, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        spec.validate()?;
        for slot in layout(&spec) {
            match tensors.get(&slot.name) {
                Some(t) if t.shape() == slot.shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::shape(
                        "network params",
                        format!("{} has shape {:?}, expected {:?}", slot.name, t.shape(), slot.shape),
                    ))
                }
                None => {
                    return Err(Error::shape("network params", format!("missing tensor {}", slot.name)))
                }
            }
        }
        if tensors.len() != layout(&spec).len() {
            return Err(Error::shape("network params", "unexpected extra tensors"));
        }
        Ok(Self {
            fingerprint: spec.fingerprint(),
            spec,
            tensors,
        })
    }

    pub fn spec(&self) -> &VariantSpec {
        &self.spec
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.tensors
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn has_confound_head(&self) -> bool {
        self.tensors.keys().any(|k| k.starts_with("confound."))
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Registers every tensor on `tape`, as parameters or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Binding {
        let ids = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let id = if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), id)
            })
            .collect();
        Binding { ids }
    }
}

/// Tape handles of a parameter set.
#[derive(Debug, Clone)]
pub struct Binding {
    ids: BTreeMap<String, NodeId>,
}

impl Binding {
    pub fn from_ids(ids: BTreeMap<String, NodeId>) -> Self {
        Self { ids }
    }

    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NodeId)> {
        self.ids.iter()
    }

    fn gru(&self, prefix: &str) -> GruParams {
        GruParams {
            w_update: self.id(&format!("{prefix}.w_update")),
            u_update: self.id(&format!("{prefix}.u_update")),
            b_update: self.id(&format!("{prefix}.b_update")),
            w_reset: self.id(&format!("{prefix}.w_reset")),
            u_reset: self.id(&format!("{prefix}.u_reset")),
            b_reset: self.id(&format!("{prefix}.b_reset")),
            w_cand: self.id(&format!("{prefix}.w_cand")),
            u_cand: self.id(&format!("{prefix}.u_cand")),
            b_cand: self.id(&format!("{prefix}.b_cand")),
        }
    }
}

/// Input streams for one utterance.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelInput<'a> {
    pub acoustic: Option<&'a Tensor>,
    pub lexical: Option<&'a Tensor>,
}

/// How the confound head sees the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GrlMode {
    #[default]
    Reverse,
    /// Plain identity; used to compare gradient flow with and without reversal.
    Identity,
}

/// Tape nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub embedding: NodeId,
    pub emotion_probs: NodeId,
    pub confound_probs: Option<NodeId>,
}

/// Plain values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub emotion_probs: Vec<f64>,
    pub confound_probs: Option<Vec<f64>>,
    pub embedding: Vec<f64>,
}

fn branch_forward(
    tape: &mut Tape,
    binding: &Binding,
    prefix: &str,
    hyper: &BranchHyper,
    input: &Tensor,
    din: usize,
) -> Result<NodeId> {
    if input.rank() != 2 || input.cols() != din {
        return Err(Error::shape(
            "forward",
            format!("{prefix} input shape {:?}, expected T×{din}", input.shape()),
        ));
    }
    if input.rows() < hyper.min_len() {
        return Err(Error::SequenceTooShort {
            len: input.rows(),
            required: hyper.min_len(),
        });
    }
    let mut x = tape.constant(input.clone());
    for i in 0..hyper.conv_layers {
        let k = binding.id(&format!("{prefix}.conv{i}.kernel"));
        let b = binding.id(&format!("{prefix}.conv{i}.bias"));
        let c = tape.conv1d(x, k, b)?;
        x = tape.relu(c)?;
    }
    x = tape.maxpool1d(x, hyper.pool_width)?;
    let mut last = x;
    for i in 0..hyper.gru_layers {
        let p = binding.gru(&format!("{prefix}.gru{i}"));
        let states = tape.gru_sequence(x, &p)?;
        last = *states.last().expect("non-empty sequence");
        if i + 1 < hyper.gru_layers {
            x = tape.stack(&states)?;
        }
    }
    Ok(last)
}

/// Dense stack with relu hidden layers and a softmax output.
pub(crate) fn head_forward(
    tape: &mut Tape,
    binding: &Binding,
    prefix: &str,
    dense_layers: usize,
    input: NodeId,
) -> Result<NodeId> {
    let mut x = input;
    for i in 0..dense_layers {
        let w = binding.id(&format!("{prefix}.dense{i}.w"));
        let b = binding.id(&format!("{prefix}.dense{i}.b"));
        x = tape.dense(x, w, b, Activation::Relu)?;
    }
    let w = binding.id(&format!("{prefix}.out.w"));
    let b = binding.id(&format!("{prefix}.out.b"));
    tape.dense(x, w, b, Activation::Softmax)
}

/// Records the embedding sub-network on `tape`.
pub fn embed_on_tape(
    params: &NetworkParams,
    binding: &Binding,
    tape: &mut Tape,
    input: ModelInput<'_>,
) -> Result<NodeId> {
    let spec = &params.spec;
    let mut parts = Vec::with_capacity(2);
    if let Some(hyper) = &spec.acoustic {
        let a = input
            .acoustic
            .ok_or_else(|| Error::ModalityMismatch(format!("{} needs acoustic input", spec.label())))?;
        parts.push(branch_forward(tape, binding, "acoustic", hyper, a, spec.acoustic_dim)?);
    }
    if let Some(hyper) = &spec.lexical {
        let l = input
            .lexical
            .ok_or_else(|| Error::ModalityMismatch(format!("{} needs lexical input", spec.label())))?;
        parts.push(branch_forward(tape, binding, "lexical", hyper, l, spec.lexical_dim)?);
    }
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        tape.concat(&parts)
    }
}

/// Records a full forward pass on `tape`.
pub fn forward_on_tape(
    params: &NetworkParams,
    binding: &Binding,
    tape: &mut Tape,
    input: ModelInput<'_>,
    grl: GrlMode,
) -> Result<ForwardNodes> {
    let spec = &params.spec;
    let embedding = embed_on_tape(params, binding, tape, input)?;
    let emotion_probs = head_forward(tape, binding, "emotion", spec.head.dense_layers, embedding)?;
    let confound_probs = match spec.lambda.filter(|_| spec.is_adversarial()) {
        Some(lambda) => {
            let r = match grl {
                GrlMode::Reverse => tape.grad_reverse(embedding, GrlConfig::new(lambda)?)?,
                GrlMode::Identity => tape.identity(embedding)?,
            };
            Some(head_forward(tape, binding, "confound", spec.head.dense_layers, r)?)
        }
        None => None,
    };
    Ok(ForwardNodes {
        embedding,
        emotion_probs,
        confound_probs,
    })
}

/// Inference-only forward pass.
pub fn forward(params: &NetworkParams, input: ModelInput<'_>) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape, false);
    let nodes = forward_on_tape(params, &binding, &mut tape, input, GrlMode::Reverse)?;
    Ok(ForwardOutput {
        emotion_probs: tape.value(nodes.emotion_probs).data().to_vec(),
        confound_probs: nodes.confound_probs.map(|c| tape.value(c).data().to_vec()),
        embedding: tape.value(nodes.embedding).data().to_vec(),
    })
}

/// Embedding only, skipping both heads.
pub fn embed(params: &NetworkParams, input: ModelInput<'_>) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape, false);
    let e = embed_on_tape(params, &binding, &mut tape, input)?;
    Ok(tape.value(e).data().to_vec())
}
