use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NnError, Result};
use crate::kernels::{self, BatchStats};
use crate::layer::LayerSpec;
use crate::rng::{fnv1a, SeedStream};
use crate::tensor::Tensor4;

/// Where a node reads one of its inputs from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Input(usize),
    Node(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub layer: LayerSpec,
    pub inputs: Vec<Source>,
}

/// Static network description: graph inputs (by channel count) and nodes in
/// topological order. The last node is the output.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub input_channels: Vec<usize>,
    pub nodes: Vec<NodeSpec>,
}

impl Topology {
    /// Checks references, arity and that every value is consumed.
    ///
    /// A skip tap that is never merged back would silently drop half of an
    /// encoder-decoder, so unused node outputs are rejected.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(NnError::State("topology has no nodes".into()));
        }
        let mut input_uses = vec![0usize; self.input_channels.len()];
        let mut node_uses = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            node.layer.validate()?;
            let arity_ok = match node.layer {
                LayerSpec::ConcatChannels => node.inputs.len() >= 2,
                _ => node.inputs.len() == 1,
            };
            if !arity_ok {
                return Err(shape_err(
                    &node.name,
                    format!("{} cannot take {} inputs", node.layer.kind_name(), node.inputs.len()),
                ));
            }
            for src in &node.inputs {
                match *src {
                    Source::Input(k) if k < input_uses.len() => input_uses[k] += 1,
                    Source::Node(k) if k < i => node_uses[k] += 1,
                    other => {
                        return Err(NnError::State(format!(
                            "node {} references {other:?} which is not defined before it",
                            node.name
                        )))
                    }
                }
            }
        }
        if let Some(k) = input_uses.iter().position(|&u| u == 0) {
            return Err(NnError::State(format!("graph input {k} is never used")));
        }
        let last = self.nodes.len() - 1;
        if let Some(k) = node_uses[..last].iter().position(|&u| u == 0) {
            return Err(NnError::State(format!(
                "output of node {} is never consumed",
                self.nodes[k].name
            )));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> u64 {
        fnv1a(serde_json::to_string(self).expect("topology serializes").as_bytes())
    }

    /// Propagates input dims through every node, returning `(name, dims)`.
    pub fn shape_trace(&self, inputs: &[[usize; 4]]) -> Result<Vec<(String, [usize; 4])>> {
        if inputs.len() != self.input_channels.len() {
            return Err(shape_err(
                "graph input",
                format!("expected {} inputs, got {}", self.input_channels.len(), inputs.len()),
            ));
        }
        for (k, (d, &c)) in inputs.iter().zip(&self.input_channels).enumerate() {
            if d[1] != c {
                return Err(shape_err(
                    format!("input {k}"),
                    format!("expects {c} channels, got {}", d[1]),
                ));
            }
        }
        let mut dims: Vec<[usize; 4]> = Vec::with_capacity(self.nodes.len());
        let mut trace = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let ins: Vec<[usize; 4]> = node
                .inputs
                .iter()
                .map(|s| match *s {
                    Source::Input(k) => inputs[k],
                    Source::Node(k) => dims[k],
                })
                .collect();
            let out = node.layer.output_dims(&node.name, &ins)?;
            dims.push(out);
            trace.push((node.name.clone(), out));
        }
        Ok(trace)
    }

    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(|n| n.layer.param_count()).sum()
    }
}

/// Incrementally assembles a [`Topology`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    topology: Topology,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&mut self, channels: usize) -> Source {
        self.topology.input_channels.push(channels);
        Source::Input(self.topology.input_channels.len() - 1)
    }

    pub fn push(&mut self, name: impl Into<String>, layer: LayerSpec, inputs: &[Source]) -> Source {
        self.topology.nodes.push(NodeSpec {
            name: name.into(),
            layer,
            inputs: inputs.to_vec(),
        });
        Source::Node(self.topology.nodes.len() - 1)
    }

    /// Appends a single-input layer after `from`.
    pub fn then(&mut self, name: impl Into<String>, layer: LayerSpec, from: Source) -> Source {
        self.push(name, layer, &[from])
    }

    pub fn finish(self) -> Result<Topology> {
        self.topology.validate()?;
        Ok(self.topology)
    }
}

/// A learnable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-node state captured during forward for use in backward.
enum Cache {
    None,
    BatchTrain(BatchStats),
    MaxPool(Vec<u32>),
    Dropout(Vec<f64>),
}

/// Activation record of one forward pass.
pub struct Tape {
    mode: Mode,
    fingerprint: u64,
    inputs: Vec<Tensor4>,
    outputs: Vec<Tensor4>,
    caches: Vec<Cache>,
}

impl Tape {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn output(&self) -> &Tensor4 {
        self.outputs.last().expect("non-empty graph")
    }

    pub fn node_output(&self, node: usize) -> &Tensor4 {
        &self.outputs[node]
    }

    pub fn into_output(mut self) -> Tensor4 {
        self.outputs.pop().expect("non-empty graph")
    }

    /// Normalized activations (before scale/shift) of a train-mode batch-norm
    /// node.
    pub fn batch_norm_normalized(&self, node: usize) -> Option<&[f64]> {
        match self.caches.get(node)? {
            Cache::BatchTrain(s) => Some(&s.xhat),
            _ => None,
        }
    }

    /// The dropout keep-mask applied at `node` (train mode only).
    pub fn dropout_mask(&self, node: usize) -> Option<&[f64]> {
        match self.caches.get(node)? {
            Cache::Dropout(m) => Some(m),
            _ => None,
        }
    }
}

/// Gradients for every parameter (same nesting as the graph) and every input.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<Vec<Vec<f64>>>,
    pub inputs: Vec<Tensor4>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().flatten().all(|v| v.is_finite())
            && self.inputs.iter().all(Tensor4::is_finite)
    }
}

/// A topology with its parameters and batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct ComputeGraph {
    topology: Topology,
    fingerprint: u64,
    params: Vec<Vec<Param>>,
    running: Vec<Option<RunningStats>>,
    frozen: bool,
}

impl ComputeGraph {
    /// Instantiates `topology` with He-uniform weights (fan-in), zero biases,
    /// unit batch-norm scale and zero shift.
    pub fn new(topology: Topology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let stream = SeedStream::new(seed);
        let mut params = Vec::with_capacity(topology.nodes.len());
        let mut running = Vec::with_capacity(topology.nodes.len());
        for (i, node) in topology.nodes.iter().enumerate() {
            let mut rng = stream.rng_indexed("init", i as u64);
            let shapes = node.layer.param_shapes();
            let fan_in = match node.layer {
                LayerSpec::Conv3x3Pad1 { in_channels, .. } => in_channels * 9,
                LayerSpec::Deconv2x2Stride2 { in_channels, .. } => in_channels,
                LayerSpec::FullyConnected { in_features, .. } => in_features,
                _ => 0,
            };
            let node_params = match node.layer {
                LayerSpec::BatchNorm { channels, .. } => {
                    running.push(Some(RunningStats {
                        mean: vec![0.0; channels],
                        var: vec![1.0; channels],
                    }));
                    vec![
                        Param {
                            shape: shapes[0].clone(),
                            value: vec![1.0; channels],
                        },
                        Param {
                            shape: shapes[1].clone(),
                            value: vec![0.0; channels],
                        },
                    ]
                }
                _ if !shapes.is_empty() => {
                    running.push(None);
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let w_len: usize = shapes[0].iter().product();
                    let b_len: usize = shapes[1].iter().product();
                    vec![
                        Param {
                            shape: shapes[0].clone(),
                            value: (0..w_len).map(|_| rng.random_range(-bound..bound)).collect(),
                        },
                        Param {
                            shape: shapes[1].clone(),
                            value: vec![0.0; b_len],
                        },
                    ]
                }
                _ => {
                    running.push(None);
                    Vec::new()
                }
            };
            params.push(node_params);
        }
        Ok(Self {
            fingerprint: topology.fingerprint(),
            topology,
            params,
            running,
            frozen: false,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.topology.nodes.iter().position(|n| n.name == name)
    }

    pub fn params(&self) -> &[Vec<Param>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<Param>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.value.len())
            .sum()
    }

    /// Frozen graphs get no parameter gradients and are skipped by Adam.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Hash over the exact bit patterns of all parameters and buffers.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        for p in self.params.iter().flatten() {
            for v in &p.value {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        for r in self.running.iter().flatten() {
            for v in r.mean.iter().chain(&r.var) {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        fnv1a(&bytes)
    }

    pub(crate) fn from_parts(
        topology: Topology,
        params: Vec<Vec<Param>>,
        running: Vec<Option<RunningStats>>,
        frozen: bool,
    ) -> Result<Self> {
        topology.validate()?;
        if params.len() != topology.nodes.len() || running.len() != topology.nodes.len() {
            return Err(NnError::State("parameter table does not match topology".into()));
        }
        for (node, ps) in topology.nodes.iter().zip(&params) {
            let shapes = node.layer.param_shapes();
            if shapes.len() != ps.len() || shapes.iter().zip(ps).any(|(s, p)| *s != p.shape) {
                return Err(NnError::State(format!("parameter shapes differ at {}", node.name)));
            }
        }
        Ok(Self {
            fingerprint: topology.fingerprint(),
            topology,
            params,
            running,
            frozen,
        })
    }

    pub fn shape_trace(&self, inputs: &[[usize; 4]]) -> Result<Vec<(String, [usize; 4])>> {
        self.topology.shape_trace(inputs)
    }

    /// Runs the network. Dropout masks derive from `rng_seed` and the node
    /// index; eval mode is deterministic and ignores the seed.
    pub fn forward(&self, inputs: &[&Tensor4], mode: Mode, rng_seed: u64) -> Result<Tape> {
        let dims: Vec<[usize; 4]> = inputs.iter().map(|t| t.dims()).collect();
        self.topology.shape_trace(&dims)?;
        let stream = SeedStream::new(rng_seed);
        let mut outputs: Vec<Tensor4> = Vec::with_capacity(self.topology.nodes.len());
        let mut caches = Vec::with_capacity(self.topology.nodes.len());
        for (i, node) in self.topology.nodes.iter().enumerate() {
            let ins: Vec<&Tensor4> = node
                .inputs
                .iter()
                .map(|s| match *s {
                    Source::Input(k) => inputs[k],
                    Source::Node(k) => &outputs[k],
                })
                .collect();
            let p = &self.params[i];
            let (out, cache) = match node.layer {
                LayerSpec::Conv3x3Pad1 { out_channels, .. } => (
                    kernels::conv3x3_forward(ins[0], &p[0].value, &p[1].value, out_channels),
                    Cache::None,
                ),
                LayerSpec::Deconv2x2Stride2 { out_channels, .. } => (
                    kernels::deconv2x2_forward(ins[0], &p[0].value, &p[1].value, out_channels),
                    Cache::None,
                ),
                LayerSpec::BatchNorm { eps, .. } => match mode {
                    Mode::Train => {
                        let (y, stats) =
                            kernels::batch_norm_train(ins[0], &p[0].value, &p[1].value, eps);
                        (y, Cache::BatchTrain(stats))
                    }
                    Mode::Eval => {
                        let r = self.running[i].as_ref().expect("bn buffers");
                        (
                            kernels::batch_norm_eval(
                                ins[0],
                                &p[0].value,
                                &p[1].value,
                                &r.mean,
                                &r.var,
                                eps,
                            ),
                            Cache::None,
                        )
                    }
                },
                LayerSpec::LeakyRelu { slope } => {
                    (kernels::leaky_relu_forward(ins[0], slope), Cache::None)
                }
                LayerSpec::MaxPool2x2 => {
                    let (y, arg) = kernels::max_pool_forward(ins[0]);
                    (y, Cache::MaxPool(arg))
                }
                LayerSpec::FullyConnected { units, .. } => (
                    kernels::fc_forward(ins[0], &p[0].value, &p[1].value, units),
                    Cache::None,
                ),
                LayerSpec::Dropout { p: drop } => {
                    if mode == Mode::Train && drop > 0.0 {
                        let mut rng = stream.rng_indexed("dropout", i as u64);
                        let mask = kernels::dropout_mask(ins[0].len(), drop, &mut rng);
                        (kernels::apply_mask(ins[0], &mask), Cache::Dropout(mask))
                    } else {
                        (ins[0].clone(), Cache::None)
                    }
                }
                LayerSpec::ConcatChannels => (kernels::concat_forward(&ins), Cache::None),
                LayerSpec::Sigmoid => (ins[0].map(crate::loss::sigmoid), Cache::None),
            };
            outputs.push(out);
            caches.push(cache);
        }
        Ok(Tape {
            mode,
            fingerprint: self.fingerprint,
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            outputs,
            caches,
        })
    }

    /// Convenience for single-input graphs.
    pub fn forward_one(&self, input: &Tensor4, mode: Mode, rng_seed: u64) -> Result<Tape> {
        self.forward(&[input], mode, rng_seed)
    }

    /// Eval-mode output only.
    pub fn predict(&self, inputs: &[&Tensor4]) -> Result<Tensor4> {
        Ok(self.forward(inputs, Mode::Eval, 0)?.into_output())
    }

    /// Back-propagates `output_grad` from the graph output.
    pub fn backward(&self, tape: &Tape, output_grad: &Tensor4) -> Result<Gradients> {
        let last = self.topology.nodes.len() - 1;
        self.backward_from(tape, &[(last, output_grad.clone())])
    }

    /// Back-propagates from arbitrary nodes. Used to start from the logits
    /// feeding a final sigmoid.
    pub fn backward_from(&self, tape: &Tape, seeds: &[(usize, Tensor4)]) -> Result<Gradients> {
        if tape.fingerprint != self.fingerprint || tape.outputs.len() != self.topology.nodes.len() {
            return Err(NnError::State("tape was recorded on a different graph".into()));
        }
        let nodes = &self.topology.nodes;
        let mut node_grads: Vec<Option<Tensor4>> = vec![None; nodes.len()];
        let mut input_grads: Vec<Tensor4> = tape.inputs.iter().map(|t| Tensor4::zeros(t.dims())).collect();
        for (idx, g) in seeds {
            if *idx >= nodes.len() || g.dims() != tape.outputs[*idx].dims() {
                return Err(shape_err(
                    format!("seed {idx}"),
                    "gradient seed does not match the recorded activation",
                ));
            }
            accumulate(&mut node_grads[*idx], g.clone());
        }
        let with_params = !self.frozen;
        let mut param_grads: Vec<Vec<Vec<f64>>> = self
            .params
            .iter()
            .map(|ps| ps.iter().map(|p| vec![0.0; p.value.len()]).collect())
            .collect();

        for i in (0..nodes.len()).rev() {
            let Some(dy) = node_grads[i].take() else {
                continue;
            };
            let node = &nodes[i];
            let input_of = |s: &Source| -> &Tensor4 {
                match *s {
                    Source::Input(k) => &tape.inputs[k],
                    Source::Node(k) => &tape.outputs[k],
                }
            };
            let x = input_of(&node.inputs[0]);
            let p = &self.params[i];
            let dxs: Vec<Tensor4> = match node.layer {
                LayerSpec::Conv3x3Pad1 { .. } => {
                    let (dx, dw, db) = kernels::conv3x3_backward(x, &p[0].value, &dy, with_params);
                    if with_params {
                        param_grads[i] = vec![dw, db];
                    }
                    vec![dx]
                }
                LayerSpec::Deconv2x2Stride2 { .. } => {
                    let (dx, dw, db) = kernels::deconv2x2_backward(x, &p[0].value, &dy, with_params);
                    if with_params {
                        param_grads[i] = vec![dw, db];
                    }
                    vec![dx]
                }
                LayerSpec::BatchNorm { eps, .. } => {
                    let (dx, dg, db) = match &tape.caches[i] {
                        Cache::BatchTrain(stats) => {
                            kernels::batch_norm_train_backward(&dy, &p[0].value, stats)
                        }
                        _ => {
                            let r = self.running[i].as_ref().expect("bn buffers");
                            kernels::batch_norm_eval_backward(x, &dy, &p[0].value, &r.mean, &r.var, eps)
                        }
                    };
                    if with_params {
                        param_grads[i] = vec![dg, db];
                    }
                    vec![dx]
                }
                LayerSpec::LeakyRelu { slope } => vec![kernels::leaky_relu_backward(x, &dy, slope)],
                LayerSpec::MaxPool2x2 => match &tape.caches[i] {
                    Cache::MaxPool(arg) => vec![kernels::max_pool_backward(x.dims(), arg, &dy)],
                    _ => return Err(NnError::State(format!("missing pooling record at {}", node.name))),
                },
                LayerSpec::FullyConnected { .. } => {
                    let (dx, dw, db) = kernels::fc_backward(x, &p[0].value, &dy, with_params);
                    if with_params {
                        param_grads[i] = vec![dw, db];
                    }
                    vec![dx]
                }
                LayerSpec::Dropout { .. } => match &tape.caches[i] {
                    Cache::Dropout(mask) => vec![kernels::apply_mask(&dy, mask)],
                    _ => vec![dy],
                },
                LayerSpec::ConcatChannels => {
                    let channels: Vec<usize> = node.inputs.iter().map(|s| input_of(s).c()).collect();
                    kernels::concat_backward(&dy, &channels)
                }
                LayerSpec::Sigmoid => vec![kernels::sigmoid_backward(&tape.outputs[i], &dy)],
            };
            for (src, dx) in node.inputs.iter().zip(dxs) {
                match *src {
                    Source::Input(k) => {
                        for (a, v) in input_grads[k].data_mut().iter_mut().zip(dx.data()) {
                            *a += v;
                        }
                    }
                    Source::Node(k) => accumulate(&mut node_grads[k], dx),
                }
            }
        }
        Ok(Gradients {
            params: param_grads,
            inputs: input_grads,
        })
    }

    /// Folds the batch statistics of a train-mode tape into the running
    /// buffers: `running = momentum·running + (1 − momentum)·batch`, with the
    /// unbiased batch variance.
    pub fn update_running_stats(&mut self, tape: &Tape) -> Result<()> {
        if tape.fingerprint != self.fingerprint {
            return Err(NnError::State("tape was recorded on a different graph".into()));
        }
        if tape.mode != Mode::Train || self.frozen {
            return Ok(());
        }
        for (i, node) in self.topology.nodes.iter().enumerate() {
            let (LayerSpec::BatchNorm { momentum, .. }, Cache::BatchTrain(stats)) =
                (&node.layer, &tape.caches[i])
            else {
                continue;
            };
            let d = tape.outputs[i].dims();
            let m = (d[0] * d[2] * d[3]) as f64;
            let correction = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let r = self.running[i].as_mut().expect("bn buffers");
            for c in 0..r.mean.len() {
                r.mean[c] = momentum * r.mean[c] + (1.0 - momentum) * stats.mean[c];
                r.var[c] = momentum * r.var[c] + (1.0 - momentum) * stats.var[c] * correction;
            }
        }
        Ok(())
    }

    /// Running mean and variance of a batch-norm node.
    pub fn running_stats(&self, node: usize) -> Option<(&[f64], &[f64])> {
        self.running
            .get(node)?
            .as_ref()
            .map(|r| (r.mean.as_slice(), r.var.as_slice()))
    }
}

fn accumulate(slot: &mut Option<Tensor4>, g: Tensor4) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}
