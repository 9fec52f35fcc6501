//! A small feed-forward network with exact analytic gradients.
//!
//! The network is a flat list of [`LayerSpec`]s validated for shape
//! compatibility at construction. Weather feature vectors enter as `[B, F]`
//! rows; a leading convolution stack views them as a 1-channel sequence of
//! length `F`, and a dense head maps the flattened channels to class logits.
//!
//! Train-mode forwards cache intermediate activations for [`Network::backward`]
//! and update batch-norm running statistics; eval-mode forwards are pure and
//! use the running statistics, so two eval calls on the same input are
//! bit-identical. [`grad_check`] compares every analytic parameter gradient
//! against central finite differences and is part of the acceptance gate.

pub mod layers;
pub mod loss;

pub use loss::{
    cross_entropy_hard, cross_entropy_hard_with_grad, cross_entropy_soft,
    cross_entropy_soft_with_grad, entropy, log_softmax, softmax, LossReport,
};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;
use layers::{BnCache, BN_MOMENTUM};

/// One layer of the network, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// 1-D convolution with zero padding; preserves length when
    /// `padding == kernel / 2` and the kernel is odd.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    /// Per-channel batch normalization (biased batch statistics in train
    /// mode, running statistics in eval mode).
    BatchNorm1d { features: usize },
    /// Elementwise rectifier.
    Relu,
    /// Collapses `[B, C, L]` to `[B, C*L]`.
    Flatten,
    /// Fully connected layer.
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

/// Whether forward passes use batch statistics (train) or running
/// statistics (eval).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Sizes for the standard classifier stack.
///
/// Produces `Conv -> BN -> ReLU` per entry of `conv_channels`, then
/// `Flatten`, then `Dense -> ReLU` per entry of `hidden`, then a final
/// `Dense` onto `classes` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![16, 32],
            kernel: 3,
            hidden: vec![64],
            classes: 5,
        }
    }
}

impl ArchConfig {
    /// Expands the config into concrete layer specs for `input_features`
    /// input columns.
    pub fn build_specs(&self, input_features: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut channels = 1;
        for &out in &self.conv_channels {
            specs.push(LayerSpec::Conv1d {
                in_channels: channels,
                out_channels: out,
                kernel: self.kernel,
                padding: self.kernel / 2,
            });
            specs.push(LayerSpec::BatchNorm1d { features: out });
            specs.push(LayerSpec::Relu);
            channels = out;
        }
        specs.push(LayerSpec::Flatten);
        let mut width = if self.conv_channels.is_empty() {
            input_features
        } else {
            channels * conv_stack_length(input_features, self.conv_channels.len(), self.kernel)
        };
        for &h in &self.hidden {
            specs.push(LayerSpec::Dense {
                in_features: width,
                out_features: h,
            });
            specs.push(LayerSpec::Relu);
            width = h;
        }
        specs.push(LayerSpec::Dense {
            in_features: width,
            out_features: self.classes,
        });
        specs
    }
}

fn conv_stack_length(input_features: usize, layers: usize, kernel: usize) -> usize {
    let mut len = input_features;
    for _ in 0..layers {
        len = len + 2 * (kernel / 2) - kernel + 1;
    }
    len
}

/// Activation shape between layers, batch dimension excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Act {
    Seq { channels: usize, len: usize },
    Flat { features: usize },
}

impl Act {
    fn size(&self) -> usize {
        match *self {
            Act::Seq { channels, len } => channels * len,
            Act::Flat { features } => features,
        }
    }

    fn dims(&self, batch: usize) -> Vec<usize> {
        match *self {
            Act::Seq { channels, len } => vec![batch, channels, len],
            Act::Flat { features } => vec![batch, features],
        }
    }
}

/// Running batch-norm statistics for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-layer state cached by a train-mode forward.
#[derive(Debug, Clone)]
enum LayerCache {
    Conv { input: Tensor },
    BatchNorm(BnCache),
    Relu { input: Tensor },
    Flatten,
    Dense { input: Tensor },
}

#[derive(Debug, Clone)]
struct ForwardCache {
    layers: Vec<LayerCache>,
    output_shape: Vec<usize>,
}

/// Parameter gradients, mirroring [`Network::params`] layer by layer.
#[derive(Debug, Clone)]
pub struct Gradients(pub Vec<Vec<Tensor>>);

impl Gradients {
    /// Flat iterator over all gradient tensors in canonical order.
    pub fn iter_flat(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter().flatten()
    }

    pub fn all_finite(&self) -> bool {
        self.iter_flat().all(Tensor::all_finite)
    }
}

/// The network itself: specs, parameters, running statistics, and mode.
#[derive(Debug, Clone)]
pub struct Network {
    specs: Vec<LayerSpec>,
    shapes: Vec<Act>,
    input_features: usize,
    params: Vec<Vec<Tensor>>,
    running: Vec<Option<RunningStats>>,
    mode: Mode,
    cache: Option<ForwardCache>,
}

impl Network {
    /// Builds a network from explicit specs, validating that consecutive
    /// layer shapes compose, and initializes parameters from `seed`.
    ///
    /// Weights use a uniform draw on `±sqrt(6 / (fan_in + fan_out))`, biases
    /// start at zero, batch-norm starts at the identity (`gamma=1, beta=0`)
    /// with running mean 0 and running variance 1.
    pub fn new(specs: Vec<LayerSpec>, input_features: usize, seed: u64) -> Result<Self> {
        let shapes = validate_shapes(&specs, input_features)?;
        let mut rng = stream_rng(seed, Stream::WeightInit as u64);
        let mut params = Vec::with_capacity(specs.len());
        let mut running = Vec::with_capacity(specs.len());
        for spec in &specs {
            match *spec {
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let bound = glorot_bound(in_channels * kernel, out_channels * kernel);
                    params.push(vec![
                        Tensor::rand_uniform(
                            vec![out_channels, in_channels, kernel],
                            -bound,
                            bound,
                            &mut rng,
                        ),
                        Tensor::zeros(vec![out_channels]),
                    ]);
                    running.push(None);
                }
                LayerSpec::BatchNorm1d { features } => {
                    params.push(vec![
                        Tensor::filled(vec![features], 1.0),
                        Tensor::zeros(vec![features]),
                    ]);
                    running.push(Some(RunningStats {
                        mean: vec![0.0; features],
                        var: vec![1.0; features],
                    }));
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let bound = glorot_bound(in_features, out_features);
                    params.push(vec![
                        Tensor::rand_uniform(
                            vec![out_features, in_features],
                            -bound,
                            bound,
                            &mut rng,
                        ),
                        Tensor::zeros(vec![out_features]),
                    ]);
                    running.push(None);
                }
                LayerSpec::Relu | LayerSpec::Flatten => {
                    params.push(Vec::new());
                    running.push(None);
                }
            }
        }
        Ok(Self {
            specs,
            shapes,
            input_features,
            params,
            running,
            mode: Mode::Train,
            cache: None,
        })
    }

    /// Builds the standard classifier for `arch`, checking that the stack
    /// ends in a dense layer onto `arch.classes` logits.
    pub fn classifier(arch: &ArchConfig, input_features: usize, seed: u64) -> Result<Self> {
        if arch.classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "classifier needs at least 2 classes, got {}",
                arch.classes
            )));
        }
        let specs = arch.build_specs(input_features);
        let net = Self::new(specs, input_features, seed)?;
        match net.specs.last() {
            Some(LayerSpec::Dense { out_features, .. }) if *out_features == arch.classes => {}
            _ => {
                return Err(Error::InvalidNetwork(
                    "classifier must end in a dense layer onto the class logits".into(),
                ))
            }
        }
        Ok(net)
    }

    /// Reassembles a network from stored parts (deserialization path).
    pub fn from_parts(
        specs: Vec<LayerSpec>,
        input_features: usize,
        params: Vec<Vec<Tensor>>,
        running: Vec<Option<RunningStats>>,
    ) -> Result<Self> {
        let reference = Self::new(specs, input_features, 0)?;
        if params.len() != reference.params.len() || running.len() != reference.running.len() {
            return Err(Error::InvalidNetwork(format!(
                "expected {} parameter groups, got {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (i, (got, want)) in params.iter().zip(&reference.params).enumerate() {
            if got.len() != want.len() || got.iter().zip(want).any(|(g, w)| g.shape() != w.shape())
            {
                return Err(Error::InvalidNetwork(format!(
                    "parameter shapes of layer {i} do not match its spec"
                )));
            }
        }
        for (i, (got, want)) in running.iter().zip(&reference.running).enumerate() {
            match (got, want) {
                (None, None) => {}
                (Some(g), Some(w))
                    if g.mean.len() == w.mean.len() && g.var.len() == w.var.len() => {}
                _ => {
                    return Err(Error::InvalidNetwork(format!(
                        "running statistics of layer {i} do not match its spec"
                    )))
                }
            }
        }
        Ok(Self {
            params,
            running,
            ..reference
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_features(&self) -> usize {
        self.input_features
    }

    /// Width of the network output (class count for classifiers).
    pub fn output_width(&self) -> usize {
        self.shapes.last().map_or(0, Act::size)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &[Vec<Tensor>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<Tensor>] {
        &mut self.params
    }

    pub fn running(&self) -> &[Option<RunningStats>] {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut [Option<RunningStats>] {
        &mut self.running
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().flatten().map(Tensor::len).sum()
    }

    /// Human-readable name for one parameter tensor, for diagnostics.
    pub fn param_label(&self, layer: usize, index: usize) -> String {
        let kind = match self.specs.get(layer) {
            Some(LayerSpec::Conv1d { .. }) => "conv",
            Some(LayerSpec::BatchNorm1d { .. }) => "batchnorm",
            Some(LayerSpec::Dense { .. }) => "dense",
            Some(LayerSpec::Relu) => "relu",
            Some(LayerSpec::Flatten) => "flatten",
            None => "?",
        };
        let part = match (self.specs.get(layer), index) {
            (Some(LayerSpec::BatchNorm1d { .. }), 0) => "gamma",
            (Some(LayerSpec::BatchNorm1d { .. }), 1) => "beta",
            (_, 0) => "weight",
            (_, 1) => "bias",
            _ => "?",
        };
        format!("layer{layer}.{kind}.{part}")
    }

    /// Forward pass in the current mode.
    ///
    /// Train mode caches activations for [`Network::backward`] and updates
    /// batch-norm running statistics; eval mode delegates to
    /// [`Network::forward_eval`] and touches nothing.
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        if self.mode == Mode::Eval {
            return self.forward_eval(batch);
        }
        self.check_input(batch)?;
        let b = batch.rows();
        if b == 1 && self.has_batchnorm() {
            return Err(Error::DegenerateBatch);
        }
        let mut act = batch.clone().with_shape(self.shapes[0].dims(b))?;
        let mut caches = Vec::with_capacity(self.specs.len());
        let mut running_updates: Vec<(usize, Vec<f64>, Vec<f64>, usize)> = Vec::new();
        for (i, spec) in self.specs.iter().enumerate() {
            act = act.with_shape(self.shapes[i].dims(b))?;
            act = match *spec {
                LayerSpec::Conv1d { padding, .. } => {
                    let out = layers::conv1d_forward(
                        &act,
                        &self.params[i][0],
                        &self.params[i][1],
                        padding,
                    );
                    caches.push(LayerCache::Conv { input: act });
                    out
                }
                LayerSpec::BatchNorm1d { .. } => {
                    let view = as_seq(act, b)?;
                    let (out, cache) = layers::batchnorm_forward_train(
                        &view,
                        &self.params[i][0],
                        &self.params[i][1],
                    )?;
                    running_updates.push((i, cache.mean.clone(), cache.var.clone(), cache.n));
                    caches.push(LayerCache::BatchNorm(cache));
                    out
                }
                LayerSpec::Relu => {
                    let out = layers::relu_forward(&act);
                    caches.push(LayerCache::Relu { input: act });
                    out
                }
                LayerSpec::Flatten => {
                    caches.push(LayerCache::Flatten);
                    act
                }
                LayerSpec::Dense { .. } => {
                    let view = act.with_shape(self.shapes[i].dims(b))?;
                    let out = layers::dense_forward(&view, &self.params[i][0], &self.params[i][1]);
                    caches.push(LayerCache::Dense { input: view });
                    out
                }
            };
        }
        let out = act.with_shape(self.shapes.last().unwrap().dims(b))?;
        for (i, mean, var, n) in running_updates {
            let stats = self.running[i].as_mut().expect("batchnorm running stats");
            let unbias = n as f64 / (n as f64 - 1.0);
            for c in 0..mean.len() {
                stats.mean[c] = (1.0 - BN_MOMENTUM) * stats.mean[c] + BN_MOMENTUM * mean[c];
                stats.var[c] = (1.0 - BN_MOMENTUM) * stats.var[c] + BN_MOMENTUM * var[c] * unbias;
            }
        }
        self.cache = Some(ForwardCache {
            layers: caches,
            output_shape: out.shape().to_vec(),
        });
        Ok(out)
    }

    /// Pure eval-mode forward: running statistics, no caching, no mutation.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let b = batch.rows();
        let mut act = batch.clone().with_shape(self.shapes[0].dims(b))?;
        for (i, spec) in self.specs.iter().enumerate() {
            act = act.with_shape(self.shapes[i].dims(b))?;
            act = match *spec {
                LayerSpec::Conv1d { padding, .. } => {
                    layers::conv1d_forward(&act, &self.params[i][0], &self.params[i][1], padding)
                }
                LayerSpec::BatchNorm1d { .. } => {
                    let stats = self.running[i].as_ref().expect("batchnorm running stats");
                    let view = as_seq(act, b)?;
                    layers::batchnorm_forward_eval(
                        &view,
                        &self.params[i][0],
                        &self.params[i][1],
                        &stats.mean,
                        &stats.var,
                    )
                }
                LayerSpec::Relu => layers::relu_forward(&act),
                LayerSpec::Flatten => act,
                LayerSpec::Dense { .. } => {
                    layers::dense_forward(&act, &self.params[i][0], &self.params[i][1])
                }
            };
        }
        act.with_shape(self.shapes.last().unwrap().dims(b))
    }

    /// Backpropagates `upstream` (`d loss / d output`) through the cached
    /// train-mode forward, returning gradients for every parameter.
    pub fn backward(&self, upstream: &Tensor) -> Result<Gradients> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardWithoutForward)?;
        if upstream.shape() != cache.output_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "Network::backward".into(),
                expected: format!("{:?}", cache.output_shape),
                actual: format!("{:?}", upstream.shape()),
            });
        }
        let b = upstream.rows();
        let mut grads: Vec<Vec<Tensor>> = self
            .params
            .iter()
            .map(|group| {
                group
                    .iter()
                    .map(|t| Tensor::zeros(t.shape().to_vec()))
                    .collect()
            })
            .collect();
        let mut delta = upstream.clone();
        for (i, spec) in self.specs.iter().enumerate().rev() {
            delta = match (spec, &cache.layers[i]) {
                (LayerSpec::Conv1d { padding, .. }, LayerCache::Conv { input }) => {
                    let delta = delta.with_shape(self.shapes[i + 1].dims(b))?;
                    let (dx, dw, db) =
                        layers::conv1d_backward(input, &self.params[i][0], &delta, *padding);
                    grads[i] = vec![dw, db];
                    dx
                }
                (LayerSpec::BatchNorm1d { .. }, LayerCache::BatchNorm(bn)) => {
                    let view = as_seq(delta.with_shape(self.shapes[i + 1].dims(b))?, b)?;
                    let (dx, dgamma, dbeta) =
                        layers::batchnorm_backward(bn, &self.params[i][0], &view);
                    grads[i] = vec![dgamma, dbeta];
                    dx
                }
                (LayerSpec::Relu, LayerCache::Relu { input }) => {
                    let delta = delta.with_shape(input.shape().to_vec())?;
                    layers::relu_backward(input, &delta)
                }
                (LayerSpec::Flatten, LayerCache::Flatten) => delta,
                (LayerSpec::Dense { .. }, LayerCache::Dense { input }) => {
                    let delta = delta.with_shape(self.shapes[i + 1].dims(b))?;
                    let (dx, dw, db) = layers::dense_backward(input, &self.params[i][0], &delta);
                    grads[i] = vec![dw, db];
                    dx
                }
                _ => {
                    return Err(Error::InvalidNetwork(format!(
                        "cache does not match layer {i}"
                    )))
                }
            };
            delta = delta.with_shape(self.shapes[i].dims(b))?;
        }
        Ok(Gradients(grads))
    }

    pub fn has_batchnorm(&self) -> bool {
        self.specs
            .iter()
            .any(|s| matches!(s, LayerSpec::BatchNorm1d { .. }))
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.ndim() != 2 || batch.cols() != self.input_features || batch.rows() == 0 {
            return Err(Error::ShapeMismatch {
                op: "Network::forward".into(),
                expected: format!("[B, {}] with B >= 1", self.input_features),
                actual: format!("{:?}", batch.shape()),
            });
        }
        if !batch.all_finite() {
            return Err(Error::NonFinite {
                context: "network input".into(),
            });
        }
        Ok(())
    }
}

/// Viewing helper: batch-norm math runs on `[B, C, L]`; a flat `[B, F]`
/// activation is treated as `F` channels of length 1.
fn as_seq(act: Tensor, b: usize) -> Result<Tensor> {
    if act.ndim() == 3 {
        Ok(act)
    } else {
        let f = act.cols();
        act.with_shape(vec![b, f, 1])
    }
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Validates that consecutive layer shapes compose, returning the activation
/// shape before each layer plus the final output shape.
fn validate_shapes(specs: &[LayerSpec], input_features: usize) -> Result<Vec<Act>> {
    if input_features == 0 {
        return Err(Error::InvalidNetwork(
            "input_features must be positive".into(),
        ));
    }
    let mut act = Act::Flat {
        features: input_features,
    };
    let mut shapes = Vec::with_capacity(specs.len() + 1);
    for (i, spec) in specs.iter().enumerate() {
        // A convolution consuming a flat activation views it as a sequence.
        if let LayerSpec::Conv1d { in_channels, .. } = spec {
            if let Act::Flat { features } = act {
                if features % in_channels != 0 {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i}: cannot view {features} features as {in_channels} channels"
                    )));
                }
                act = Act::Seq {
                    channels: *in_channels,
                    len: features / in_channels,
                };
            }
        }
        shapes.push(act);
        act = match (*spec, act) {
            (
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    padding,
                },
                Act::Seq { channels, len },
            ) => {
                if channels != in_channels {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i}: conv expects {in_channels} channels, gets {channels}"
                    )));
                }
                if kernel == 0 || out_channels == 0 {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i}: conv kernel and channel counts must be positive"
                    )));
                }
                if len + 2 * padding < kernel {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i}: kernel {kernel} does not fit length {len} with padding {padding}"
                    )));
                }
                Act::Seq {
                    channels: out_channels,
                    len: len + 2 * padding - kernel + 1,
                }
            }
            (LayerSpec::BatchNorm1d { features }, cur) => {
                let have = match cur {
                    Act::Seq { channels, .. } => channels,
                    Act::Flat { features } => features,
                };
                if have != features {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i}: batchnorm expects {features} features, gets {have}"
                    )));
                }
                cur
            }
            (LayerSpec::Relu, cur) => cur,
            (LayerSpec::Flatten, Act::Seq { channels, len }) => Act::Flat {
                features: channels * len,
            },
            (LayerSpec::Flatten, Act::Flat { .. }) => {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i}: flatten requires a sequence input"
                )))
            }
            (
                LayerSpec::Dense {
                    in_features,
                    out_features,
                },
                Act::Flat { features },
            ) => {
                if features != in_features {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i}: dense expects {in_features} inputs, gets {features}"
                    )));
                }
                if out_features == 0 {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i}: dense output width must be positive"
                    )));
                }
                Act::Flat {
                    features: out_features,
                }
            }
            (LayerSpec::Dense { .. }, Act::Seq { .. }) => {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i}: dense requires a flat input (add a flatten layer)"
                )))
            }
            (LayerSpec::Conv1d { .. }, Act::Flat { .. }) => unreachable!("coerced above"),
        };
    }
    shapes.push(act);
    Ok(shapes)
}

/// Upper bound on parameters accepted by [`grad_check`]; central differences
/// cost two forwards per parameter, so this keeps runtime bounded.
pub const GRAD_CHECK_MAX_PARAMS: usize = 50_000;

/// Both-sides-negligible threshold for [`grad_check`]. Central differences of
/// an O(1) loss carry rounding noise of roughly `|loss| * 2^-52 / eps`
/// (~1e-10 at `eps = 1e-5`), so when the analytic and numeric gradients are
/// both below this bound they agree to the limit of what the probe can
/// resolve, and a relative comparison would only measure that noise. This
/// matters in practice: a convolution bias feeding a batch-norm layer has an
/// exactly-zero gradient (the mean subtraction cancels any channel offset).
pub const GRAD_CHECK_ZERO_TOL: f64 = 1e-8;

/// Compares analytic gradients against central finite differences.
///
/// Runs a train-mode forward/backward with the masked cross-entropy loss on
/// `(batch, labels)`, then perturbs every parameter by `±eps` and returns the
/// maximum relative error `|analytic - numeric| / max(|analytic|, |numeric|,
/// 1e-12)` over all parameters whose gradient is measurable; parameters where
/// both gradients fall below [`GRAD_CHECK_ZERO_TOL`] count as agreeing. A
/// correct implementation lands below `1e-4` with `eps = 1e-5`; a network
/// with no parameters returns 0 (vacuous max).
pub fn grad_check(net: &Network, batch: &Tensor, labels: &[usize], eps: f64) -> Result<f64> {
    if net.num_params() > GRAD_CHECK_MAX_PARAMS {
        return Err(Error::InvalidConfig(format!(
            "grad_check is limited to {GRAD_CHECK_MAX_PARAMS} parameters, got {}",
            net.num_params()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidConfig(
            "grad_check eps must be positive".into(),
        ));
    }
    let mask = vec![true; labels.len()];
    let mut reference = net.clone();
    reference.set_mode(Mode::Train);
    let logits = reference.forward(batch)?;
    let (_, dlogits) = cross_entropy_hard_with_grad(&logits, labels, &mask)?;
    let analytic = reference.backward(&dlogits)?;

    let mut probe = reference.clone();
    let mut max_rel = 0.0f64;
    for layer in 0..net.params().len() {
        for pi in 0..net.params()[layer].len() {
            for j in 0..net.params()[layer][pi].len() {
                let saved = probe.params()[layer][pi].data()[j];
                probe.params_mut()[layer][pi].data_mut()[j] = saved + eps;
                let plus = loss_at(&mut probe, batch, labels, &mask)?;
                probe.params_mut()[layer][pi].data_mut()[j] = saved - eps;
                let minus = loss_at(&mut probe, batch, labels, &mask)?;
                probe.params_mut()[layer][pi].data_mut()[j] = saved;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic.0[layer][pi].data()[j];
                if a.abs() < GRAD_CHECK_ZERO_TOL && numeric.abs() < GRAD_CHECK_ZERO_TOL {
                    continue;
                }
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
    }
    Ok(max_rel)
}

fn loss_at(net: &mut Network, batch: &Tensor, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let logits = net.forward(batch)?;
    cross_entropy_hard(&logits, labels, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_net(seed: u64) -> Network {
        Network::classifier(&ArchConfig::default(), 6, seed).unwrap()
    }

    fn batch(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = stream_rng(seed, 99);
        Tensor::rand_uniform(vec![rows, cols], -1.5, 1.5, &mut rng)
    }

    #[test]
    fn default_classifier_has_expected_shape_and_size() {
        let net = default_net(0);
        assert_eq!(net.input_features(), 6);
        assert_eq!(net.output_width(), 5);
        // conv1 48+16, bn1 32, conv2 1536+32, bn2 64, dense 192*64+64, dense 64*5+5
        assert_eq!(net.num_params(), 64 + 32 + 1568 + 64 + 12352 + 325);
    }

    #[test]
    fn construction_rejects_incompatible_shapes() {
        let bad = vec![
            LayerSpec::Dense {
                in_features: 4,
                out_features: 3,
            },
            LayerSpec::Dense {
                in_features: 5,
                out_features: 2,
            },
        ];
        assert!(Network::new(bad, 4, 0).is_err());
        let bad_bn = vec![LayerSpec::BatchNorm1d { features: 7 }];
        assert!(Network::new(bad_bn, 6, 0).is_err());
    }

    #[test]
    fn zero_weights_produce_zero_logits_in_both_modes() {
        let mut net = default_net(1);
        for group in net.params_mut() {
            for t in group {
                t.data_mut().fill(0.0);
            }
        }
        // Batch-norm gammas were zeroed too, so everything downstream is 0.
        let x = batch(4, 6, 7);
        let logits = net.forward(&x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let logits_eval = net.forward_eval(&x).unwrap();
        assert!(logits_eval.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_dense_net_reproduces_its_input() {
        let mut net = Network::new(
            vec![LayerSpec::Dense {
                in_features: 5,
                out_features: 5,
            }],
            5,
            0,
        )
        .unwrap();
        let w = net.params_mut()[0][0].data_mut();
        w.fill(0.0);
        for i in 0..5 {
            w[i * 5 + i] = 1.0;
        }
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn same_seed_reproduces_initialization_bit_for_bit() {
        let a = default_net(42);
        let b = default_net(42);
        assert_eq!(a.params(), b.params());
        let c = default_net(43);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn eval_forward_is_pure_and_idempotent() {
        let mut net = default_net(3);
        let x = batch(8, 6, 11);
        net.forward(&x).unwrap(); // populate running stats
        net.set_mode(Mode::Eval);
        let before = net.clone();
        let y1 = net.forward_eval(&x).unwrap();
        let y2 = net.forward_eval(&x).unwrap();
        assert_eq!(y1.data(), y2.data());
        assert_eq!(net.params(), before.params());
        assert_eq!(net.running(), before.running());
    }

    #[test]
    fn train_forward_moves_running_statistics() {
        let mut net = default_net(5);
        let before: Vec<_> = net
            .running()
            .iter()
            .flatten()
            .map(|s| s.mean.clone())
            .collect();
        net.forward(&batch(16, 6, 13)).unwrap();
        let after: Vec<_> = net
            .running()
            .iter()
            .flatten()
            .map(|s| s.mean.clone())
            .collect();
        assert_ne!(before, after);
    }

    #[test]
    fn batch_of_one_is_rejected_in_train_mode_with_batchnorm() {
        let mut net = default_net(0);
        let x = batch(1, 6, 17);
        assert!(matches!(net.forward(&x), Err(Error::DegenerateBatch)));
        // Eval mode accepts single rows.
        assert!(net.forward_eval(&x).is_ok());
    }

    #[test]
    fn backward_requires_a_cached_forward() {
        let net = default_net(0);
        let up = Tensor::zeros(vec![4, 5]);
        assert!(matches!(
            net.backward(&up),
            Err(Error::BackwardWithoutForward)
        ));
    }

    #[test]
    fn backward_after_eval_only_forward_is_rejected() {
        let mut net = default_net(0);
        net.set_mode(Mode::Eval);
        let x = batch(4, 6, 19);
        net.forward(&x).unwrap();
        let up = Tensor::zeros(vec![4, 5]);
        assert!(net.backward(&up).is_err());
    }

    #[test]
    fn forward_rejects_wrong_width_and_non_finite_rows() {
        let mut net = default_net(0);
        assert!(net.forward(&batch(4, 7, 23)).is_err());
        let mut x = batch(4, 6, 23);
        x.data_mut()[3] = f64::NAN;
        assert!(net.forward(&x).is_err());
    }

    #[test]
    fn gradients_mirror_parameter_shapes() {
        let mut net = default_net(9);
        let x = batch(6, 6, 29);
        let logits = net.forward(&x).unwrap();
        let (_, dl) =
            cross_entropy_hard_with_grad(&logits, &[0, 1, 2, 3, 4, 0], &[true; 6]).unwrap();
        let grads = net.backward(&dl).unwrap();
        assert_eq!(grads.0.len(), net.params().len());
        for (g, p) in grads.0.iter().zip(net.params()) {
            assert_eq!(g.len(), p.len());
            for (gt, pt) in g.iter().zip(p) {
                assert_eq!(gt.shape(), pt.shape());
            }
        }
        assert!(grads.all_finite());
    }

    #[test]
    fn grad_check_passes_on_small_dense_net() {
        let specs = vec![
            LayerSpec::Dense {
                in_features: 4,
                out_features: 8,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                in_features: 8,
                out_features: 3,
            },
        ];
        let net = Network::new(specs, 4, 21).unwrap();
        let x = batch(5, 4, 31);
        let rel = grad_check(&net, &x, &[0, 1, 2, 0, 1], 1e-5).unwrap();
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn grad_check_is_vacuous_for_parameter_free_nets() {
        let net = Network::new(vec![LayerSpec::Relu], 3, 0).unwrap();
        let x = batch(4, 3, 37);
        let rel = grad_check(&net, &x, &[0, 1, 2, 0], 1e-5).unwrap();
        assert_eq!(rel, 0.0);
    }

    #[test]
    fn grad_check_rejects_oversized_nets() {
        let specs = vec![LayerSpec::Dense {
            in_features: 300,
            out_features: 300,
        }];
        let net = Network::new(specs, 300, 0).unwrap();
        let x = batch(2, 300, 41);
        assert!(grad_check(&net, &x, &[0, 1], 1e-5).is_err());
    }

    #[test]
    fn parts_roundtrip_reassembles_an_identical_network() {
        let mut net = default_net(77);
        net.forward(&batch(8, 6, 43)).unwrap(); // move running stats off init
        let rebuilt = Network::from_parts(
            net.specs().to_vec(),
            net.input_features(),
            net.params().to_vec(),
            net.running().to_vec(),
        )
        .unwrap();
        assert_eq!(rebuilt.params(), net.params());
        assert_eq!(rebuilt.running(), net.running());
        let x = batch(4, 6, 47);
        assert_eq!(
            rebuilt.forward_eval(&x).unwrap().data(),
            net.forward_eval(&x).unwrap().data()
        );
    }

    #[test]
    fn from_parts_rejects_mismatched_shapes() {
        let net = default_net(0);
        let mut params = net.params().to_vec();
        params[0][0] = Tensor::zeros(vec![2, 2]);
        assert!(Network::from_parts(
            net.specs().to_vec(),
            net.input_features(),
            params,
            net.running().to_vec(),
        )
        .is_err());
    }
}
