//! The two classifier architectures: a two-stage CNN with a dense head
//! (features averaged over frames when given several), and the same CNN
//! feeding a stacked bidirectional LSTM.

use std::cmp::Ordering;
use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::cross_entropy;
use super::lstm::{bilstm_backward, bilstm_forward, BiCache, LstmGrads, LstmWeights};
use super::ops::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2d,
    maxpool2d_backward, relu_backward, relu_inplace,
};
use super::tensor::{Real, Tensor};
use super::NetError;

/// Narrowest frame the conv stack accepts; narrower frames are zero-padded
/// on the right up to this width.
pub const MIN_FRAME_WIDTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub in_channels: usize,
    pub in_height: usize,
    /// Width of each input frame in spectrogram columns.
    pub in_width: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub fc_hidden: usize,
    pub n_classes: usize,
}

impl CnnConfig {
    /// 32 → 64 filters, 3×3 kernels, 128-unit hidden layer, two classes.
    pub fn standard(in_channels: usize, in_width: usize) -> Self {
        Self {
            in_channels,
            in_height: 129,
            in_width,
            conv1_filters: 32,
            conv2_filters: 64,
            kernel: 3,
            fc_hidden: 128,
            n_classes: 2,
        }
    }

    pub fn effective_width(&self) -> usize {
        self.in_width.max(MIN_FRAME_WIDTH)
    }

    pub fn conv1_params(&self) -> usize {
        (self.in_channels * self.kernel * self.kernel + 1) * self.conv1_filters
    }

    pub fn conv2_params(&self) -> usize {
        (self.conv1_filters * self.kernel * self.kernel + 1) * self.conv2_filters
    }

    pub fn shape_trace(&self) -> Result<ShapeTrace, NetError> {
        let k = self.kernel;
        let w = self.effective_width();
        let h = self.in_height;
        let conv = |[c, h, w]: [usize; 3], f: usize| -> Result<[usize; 3], NetError> {
            if h < k || w < k {
                return Err(NetError::ShapeMismatch(format!(
                    "{c}×{h}×{w} too small for a {k}×{k} convolution"
                )));
            }
            Ok([f, h - k + 1, w - k + 1])
        };
        let input = [self.in_channels, h, w];
        let conv1 = conv(input, self.conv1_filters)?;
        if conv1[1] < 2 || conv1[2] < 2 {
            return Err(NetError::ShapeMismatch(format!(
                "conv1 output {conv1:?} too small to pool"
            )));
        }
        let pool1 = [conv1[0], conv1[1] / 2, conv1[2] / 2];
        let conv2 = conv(pool1, self.conv2_filters)?;
        let pool2_skipped = conv2[1] < 2 || conv2[2] < 2;
        let pool2 = if pool2_skipped {
            conv2
        } else {
            [conv2[0], conv2[1] / 2, conv2[2] / 2]
        };
        Ok(ShapeTrace {
            input,
            conv1,
            pool1,
            conv2,
            pool2,
            pool2_skipped,
            flatten: pool2.iter().product(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeTrace {
    /// After right-padding to the minimum frame width.
    pub input: [usize; 3],
    pub conv1: [usize; 3],
    pub pool1: [usize; 3],
    pub conv2: [usize; 3],
    pub pool2: [usize; 3],
    pub pool2_skipped: bool,
    pub flatten: usize,
}

impl fmt::Display for ShapeTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = |s: [usize; 3]| format!("{}×{}×{}", s[0], s[1], s[2]);
        write!(
            f,
            "{} → conv1 {} → pool1 {} → conv2 {} → {} → flatten {}",
            d(self.input),
            d(self.conv1),
            d(self.pool1),
            d(self.conv2),
            if self.pool2_skipped {
                "pool2 skipped".to_string()
            } else {
                format!("pool2 {}", d(self.pool2))
            },
            self.flatten
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlstmConfig {
    pub layers: usize,
    pub hidden: usize,
}

impl Default for BlstmConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Architecture {
    Cnn,
    CnnBlstm(BlstmConfig),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub cnn: CnnConfig,
    pub arch: Architecture,
}

impl ModelSpec {
    pub fn cnn(cnn: CnnConfig) -> Self {
        Self {
            cnn,
            arch: Architecture::Cnn,
        }
    }

    pub fn cnn_blstm(cnn: CnnConfig, blstm: BlstmConfig) -> Self {
        Self {
            cnn,
            arch: Architecture::CnnBlstm(blstm),
        }
    }

    /// Classifier input width: CNN feature length, or 2H after the BLSTM.
    fn head_input(&self, trace: &ShapeTrace) -> usize {
        match self.arch {
            Architecture::Cnn => trace.flatten,
            Architecture::CnnBlstm(b) => 2 * b.hidden,
        }
    }

    /// Parameter names and shapes in storage order.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>, NetError> {
        let c = &self.cnn;
        let trace = c.shape_trace()?;
        let k = c.kernel;
        let mut out = vec![
            (
                "conv1.weight".to_string(),
                vec![c.conv1_filters, c.in_channels, k, k],
            ),
            ("conv1.bias".to_string(), vec![c.conv1_filters]),
            (
                "conv2.weight".to_string(),
                vec![c.conv2_filters, c.conv1_filters, k, k],
            ),
            ("conv2.bias".to_string(), vec![c.conv2_filters]),
        ];
        if let Architecture::CnnBlstm(b) = self.arch {
            for layer in 0..b.layers {
                let input = if layer == 0 {
                    trace.flatten
                } else {
                    2 * b.hidden
                };
                for dir in ["fwd", "bwd"] {
                    let p = format!("blstm.l{layer}.{dir}");
                    out.push((format!("{p}.w_ih"), vec![4 * b.hidden, input]));
                    out.push((format!("{p}.w_hh"), vec![4 * b.hidden, b.hidden]));
                    out.push((format!("{p}.bias"), vec![4 * b.hidden]));
                }
            }
        }
        let head_in = self.head_input(&trace);
        out.push(("fc1.weight".into(), vec![c.fc_hidden, head_in]));
        out.push(("fc1.bias".into(), vec![c.fc_hidden]));
        out.push(("fc2.weight".into(), vec![c.n_classes, c.fc_hidden]));
        out.push(("fc2.bias".into(), vec![c.n_classes]));
        Ok(out)
    }

    pub fn describe(&self) -> String {
        let trace = match self.cnn.shape_trace() {
            Ok(t) => t.to_string(),
            Err(e) => e.to_string(),
        };
        let pad = if self.cnn.in_width < MIN_FRAME_WIDTH {
            format!(
                " (frames of width {} zero-padded to {})",
                self.cnn.in_width, MIN_FRAME_WIDTH
            )
        } else {
            String::new()
        };
        match self.arch {
            Architecture::Cnn => format!(
                "CNN: {trace}{pad} → fc {} → {}",
                self.cnn.fc_hidden, self.cnn.n_classes
            ),
            Architecture::CnnBlstm(b) => format!(
                "CNN-BLSTM: {trace}{pad} → BLSTM {}×{} per direction → mean → fc {} → {}",
                b.layers, b.hidden, self.cnn.fc_hidden, self.cnn.n_classes
            ),
        }
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn zeros(shapes: &[(String, Vec<usize>)]) -> Self {
        Self {
            names: shapes.iter().map(|(n, _)| n.clone()).collect(),
            tensors: shapes.iter().map(|(_, s)| Tensor::zeros(s)).collect(),
        }
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        assert_eq!(names.len(), tensors.len());
        Self { names, tensors }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(T::zero()));
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;

struct CnnCache<T> {
    input_shape: [usize; 3],
    cols1: Vec<T>,
    act1: Tensor<T>,
    arg1: Vec<u32>,
    cols2: Vec<T>,
    act2: Tensor<T>,
    arg2: Option<Vec<u32>>,
}

struct HeadCache<T> {
    input: Vec<T>,
    hidden: Vec<T>,
}

/// Per-sample state below the dense head.
struct BodyTrace<T> {
    cnn: Vec<CnnCache<T>>,
    blstm: Vec<BiCache<T>>,
    steps: usize,
}

/// Everything retained from a training forward pass.
pub struct ForwardTrace<T> {
    pub logits: Vec<f64>,
    body: BodyTrace<T>,
    head: HeadCache<T>,
}

impl<T: Real> ForwardTrace<T> {
    /// Hash of every ReLU mask and pooling argmax. Two parameter settings
    /// with the same pattern lie in the same piecewise-smooth region.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for c in &self.body.cnn {
            c.arg1.hash(&mut h);
            c.arg2.hash(&mut h);
            for v in c.act1.data().iter().chain(c.act2.data()) {
                (*v > T::zero()).hash(&mut h);
            }
        }
        for v in &self.head.hidden {
            (*v > T::zero()).hash(&mut h);
        }
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    trace: ShapeTrace,
    pub params: ParamSet<T>,
}

impl<T: Real> Model<T> {
    /// Kaiming-uniform conv/dense weights and zero biases; LSTM gate
    /// weights uniform in ±1/√fan_in with forget-gate bias 1.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, NetError> {
        let trace = spec.cnn.shape_trace()?;
        let shapes = spec.param_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::zeros(&shapes);
        for (name, t) in params.names.iter().zip(params.tensors.iter_mut()) {
            let shape = t.shape().to_vec();
            if name.ends_with(".bias") {
                if name.starts_with("blstm") {
                    let h = shape[0] / 4;
                    t.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = T::one());
                }
                continue;
            }
            let fan_in: usize = shape[1..].iter().product();
            let bound = if name.starts_with("blstm") {
                1.0 / (fan_in as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            for v in t.data_mut() {
                *v = T::of(rng.random_range(-bound..bound));
            }
        }
        Ok(Self {
            spec,
            trace,
            params,
        })
    }

    pub fn from_params(spec: ModelSpec, params: ParamSet<T>) -> Result<Self, NetError> {
        let trace = spec.cnn.shape_trace()?;
        let shapes = spec.param_shapes()?;
        if shapes.len() != params.tensors.len()
            || shapes
                .iter()
                .zip(params.names.iter().zip(&params.tensors))
                .any(|((n, s), (pn, t))| n != pn || s.as_slice() != t.shape())
        {
            return Err(NetError::ShapeMismatch(
                "parameter set does not match model spec".into(),
            ));
        }
        Ok(Self {
            spec,
            trace,
            params,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn shape_trace(&self) -> &ShapeTrace {
        &self.trace
    }

    pub fn zero_grads(&self) -> ParamSet<T> {
        ParamSet::zeros(&self.spec.param_shapes().expect("validated at construction"))
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            trace: self.trace,
            params: self.params.cast(),
        }
    }

    fn fc_base(&self) -> usize {
        match self.spec.arch {
            Architecture::Cnn => 4,
            Architecture::CnnBlstm(b) => 4 + 6 * b.layers,
        }
    }

    fn lstm_weights(&self, layer: usize, dir: usize) -> LstmWeights<'_, T> {
        let base = 4 + (layer * 2 + dir) * 3;
        LstmWeights {
            w_ih: &self.params.tensors[base],
            w_hh: &self.params.tensors[base + 1],
            bias: &self.params.tensors[base + 2],
        }
    }

    fn check_frame(&self, frame: &Tensor<T>) -> Result<(), NetError> {
        let c = &self.spec.cnn;
        let want = [c.in_channels, c.in_height, c.in_width];
        if frame.shape() != want {
            return Err(NetError::ShapeMismatch(format!(
                "frame shape {:?}, model expects {:?}",
                frame.shape(),
                want
            )));
        }
        Ok(())
    }

    fn padded(&self, frame: &Tensor<T>) -> Tensor<T> {
        let [c, h, w] = self.trace.input;
        if w == self.spec.cnn.in_width {
            return frame.clone();
        }
        let src_w = self.spec.cnn.in_width;
        let mut out = Tensor::zeros(&[c, h, w]);
        for (dst, src) in out
            .data_mut()
            .chunks_exact_mut(w)
            .zip(frame.data().chunks_exact(src_w))
        {
            dst[..src_w].copy_from_slice(src);
        }
        out
    }

    fn cnn_extract(&self, frame: &Tensor<T>) -> Result<(Vec<T>, CnnCache<T>), NetError> {
        self.check_frame(frame)?;
        let x = self.padded(frame);
        let p = &self.params.tensors;
        let (mut act1, cols1) = conv2d_forward(&x, &p[CONV1_W], &p[CONV1_B])?;
        relu_inplace(act1.data_mut());
        let (pool1, arg1) = maxpool2d(&act1)?;
        let (mut act2, cols2) = conv2d_forward(&pool1, &p[CONV2_W], &p[CONV2_B])?;
        relu_inplace(act2.data_mut());
        let (features, arg2) = if self.trace.pool2_skipped {
            (act2.data().to_vec(), None)
        } else {
            let (pool2, arg2) = maxpool2d(&act2)?;
            (pool2.into_data(), Some(arg2))
        };
        Ok((
            features,
            CnnCache {
                input_shape: self.trace.input,
                cols1,
                act1,
                arg1,
                cols2,
                act2,
                arg2,
            },
        ))
    }

    fn cnn_backward(&self, cache: &CnnCache<T>, d_features: &[T], grads: &mut ParamSet<T>) {
        let p = &self.params.tensors;
        let act2_shape = cache.act2.dims3().expect("3-d");
        let mut d_act2 = match &cache.arg2 {
            Some(arg) => maxpool2d_backward(d_features, arg, act2_shape),
            None => Tensor::from_vec(&act2_shape, d_features.to_vec()).expect("shape"),
        };
        relu_backward(d_act2.data_mut(), cache.act2.data());
        let pool1_shape = self.trace.pool1;
        let (gw2, rest) = grads.tensors.split_at_mut(CONV2_B);
        let d_pool1 = conv2d_backward(
            &d_act2,
            &cache.cols2,
            &p[CONV2_W],
            pool1_shape,
            gw2[CONV2_W].data_mut(),
            rest[0].data_mut(),
            true,
        )
        .expect("input gradient requested");
        let act1_shape = cache.act1.dims3().expect("3-d");
        let mut d_act1 = maxpool2d_backward(d_pool1.data(), &cache.arg1, act1_shape);
        relu_backward(d_act1.data_mut(), cache.act1.data());
        let (gw1, rest) = grads.tensors.split_at_mut(CONV1_B);
        conv2d_backward(
            &d_act1,
            &cache.cols1,
            &p[CONV1_W],
            cache.input_shape,
            gw1[CONV1_W].data_mut(),
            rest[0].data_mut(),
            false,
        );
    }

    fn head_forward(&self, input: Vec<T>) -> Result<(Vec<f64>, HeadCache<T>), NetError> {
        let b = self.fc_base();
        let p = &self.params.tensors;
        let mut hidden = dense_forward(&p[b], &p[b + 1], &input)?;
        relu_inplace(&mut hidden);
        let logits = dense_forward(&p[b + 2], &p[b + 3], &hidden)?;
        Ok((
            logits.iter().map(|v| v.as_f64()).collect(),
            HeadCache { input, hidden },
        ))
    }

    fn head_backward(&self, cache: &HeadCache<T>, d_logits: &[T], grads: &mut ParamSet<T>) -> Vec<T> {
        let b = self.fc_base();
        let p = &self.params.tensors;
        let (g1, g2) = grads.tensors.split_at_mut(b + 2);
        let (gw2, gb2) = g2.split_at_mut(1);
        let mut d_hidden = dense_backward(
            &p[b + 2],
            &cache.hidden,
            d_logits,
            gw2[0].data_mut(),
            gb2[0].data_mut(),
            true,
        )
        .expect("input gradient requested");
        relu_backward(&mut d_hidden, &cache.hidden);
        let (gw1, gb1) = g1[b..].split_at_mut(1);
        dense_backward(
            &p[b],
            &cache.input,
            &d_hidden,
            gw1[0].data_mut(),
            gb1[0].data_mut(),
            true,
        )
        .expect("input gradient requested")
    }

    /// Single-frame CNN: logits and the flattened feature vector.
    pub fn cnn_forward(&self, x: &Tensor<T>) -> Result<(Vec<f64>, Vec<T>), NetError> {
        let (features, _) = self.cnn_extract(x)?;
        let (logits, _) = self.head_forward(features.clone())?;
        Ok((logits, features))
    }

    pub fn forward(&self, frames: &[Tensor<T>]) -> Result<Vec<f64>, NetError> {
        Ok(self.forward_trace(frames)?.logits)
    }

    pub fn forward_trace(&self, frames: &[Tensor<T>]) -> Result<ForwardTrace<T>, NetError> {
        let (pooled, body) = self.body_forward(frames)?;
        let (logits, head) = self.head_forward(pooled)?;
        Ok(ForwardTrace { logits, body, head })
    }

    /// Accumulates parameter gradients of `loss(logits)` given `d_logits`.
    pub fn backward(&self, trace: &ForwardTrace<T>, d_logits: &[f64], grads: &mut ParamSet<T>) {
        let d_logits: Vec<T> = d_logits.iter().map(|&v| T::of(v)).collect();
        let d_pooled = self.head_backward(&trace.head, &d_logits, grads);
        self.body_backward(&trace.body, &d_pooled, grads);
    }

    fn body_forward(&self, frames: &[Tensor<T>]) -> Result<(Vec<T>, BodyTrace<T>), NetError> {
        if frames.is_empty() {
            return Err(match self.spec.arch {
                Architecture::Cnn => NetError::EmptyFrameList,
                Architecture::CnnBlstm(_) => NetError::EmptySequence,
            });
        }
        let steps = frames.len();
        let mut feats = Vec::with_capacity(steps);
        let mut cnn = Vec::with_capacity(steps);
        for f in frames {
            let (feat, cache) = self.cnn_extract(f)?;
            feats.push(feat);
            cnn.push(cache);
        }
        match self.spec.arch {
            Architecture::Cnn => {
                let body = BodyTrace {
                    cnn,
                    blstm: Vec::new(),
                    steps,
                };
                Ok((mean_order_free(&feats), body))
            }
            Architecture::CnnBlstm(b) => {
                let mut seq: Vec<T> = feats.concat();
                let mut blstm = Vec::with_capacity(b.layers);
                for layer in 0..b.layers {
                    let (out, cache) = bilstm_forward(
                        &seq,
                        steps,
                        self.lstm_weights(layer, 0),
                        self.lstm_weights(layer, 1),
                    );
                    blstm.push(cache);
                    seq = out;
                }
                let width = 2 * b.hidden;
                let mut sums = vec![0.0f64; width];
                for row in seq.chunks_exact(width) {
                    for (s, v) in sums.iter_mut().zip(row) {
                        *s += v.as_f64();
                    }
                }
                let pooled = sums.iter().map(|s| T::of(s / steps as f64)).collect();
                Ok((pooled, BodyTrace { cnn, blstm, steps }))
            }
        }
    }

    fn body_backward(&self, trace: &BodyTrace<T>, d_pooled: &[T], grads: &mut ParamSet<T>) {
        let n = T::of(trace.steps as f64);
        match self.spec.arch {
            Architecture::Cnn => {
                let d_feat: Vec<T> = d_pooled.iter().map(|&v| v / n).collect();
                for cache in &trace.cnn {
                    self.cnn_backward(cache, &d_feat, grads);
                }
            }
            Architecture::CnnBlstm(b) => {
                let row: Vec<T> = d_pooled.iter().map(|&v| v / n).collect();
                let mut d_seq: Vec<T> = row.repeat(trace.steps);
                for layer in (0..b.layers).rev() {
                    let base = 4 + layer * 6;
                    let (_, tail) = grads.tensors.split_at_mut(base);
                    let (fw, rest) = tail.split_at_mut(3);
                    let (bw, _) = rest.split_at_mut(3);
                    let (fw_ih, fw_rest) = fw.split_at_mut(1);
                    let (fw_hh, fw_b) = fw_rest.split_at_mut(1);
                    let (bw_ih, bw_rest) = bw.split_at_mut(1);
                    let (bw_hh, bw_b) = bw_rest.split_at_mut(1);
                    d_seq = bilstm_backward(
                        &trace.blstm[layer],
                        &d_seq,
                        self.lstm_weights(layer, 0),
                        self.lstm_weights(layer, 1),
                        LstmGrads {
                            w_ih: fw_ih[0].data_mut(),
                            w_hh: fw_hh[0].data_mut(),
                            bias: fw_b[0].data_mut(),
                        },
                        LstmGrads {
                            w_ih: bw_ih[0].data_mut(),
                            w_hh: bw_hh[0].data_mut(),
                            bias: bw_b[0].data_mut(),
                        },
                    );
                }
                let feat_len = self.trace.flatten;
                for (cache, d_feat) in trace.cnn.iter().zip(d_seq.chunks_exact(feat_len)) {
                    self.cnn_backward(cache, d_feat, grads);
                }
            }
        }
    }

    /// Logits for several samples at once. The dense head sees all samples
    /// as one matrix, so its weights are streamed once per call.
    pub fn forward_batch(&self, batch: &[&[Tensor<T>]]) -> Result<Vec<Vec<f64>>, NetError> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut pooled = Vec::new();
        for frames in batch {
            pooled.extend(self.body_forward(frames)?.0);
        }
        let (logits, _) = self.head_forward(pooled)?;
        let classes = logits.len() / batch.len();
        Ok(logits.chunks_exact(classes).map(<[f64]>::to_vec).collect())
    }

    /// Summed cross-entropy over `batch`; gradients of the sum are added to
    /// `grads`.
    pub fn batch_loss_and_grad(
        &self,
        batch: &[(&[Tensor<T>], usize)],
        grads: &mut ParamSet<T>,
    ) -> Result<f64, NetError> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut pooled = Vec::new();
        let mut bodies = Vec::with_capacity(batch.len());
        for (frames, _) in batch {
            let (p, body) = self.body_forward(frames)?;
            pooled.extend(p);
            bodies.push(body);
        }
        let (logits, head) = self.head_forward(pooled)?;
        let classes = logits.len() / batch.len();
        let mut total = 0.0;
        let mut d_logits = Vec::with_capacity(logits.len());
        for ((_, label), row) in batch.iter().zip(logits.chunks_exact(classes)) {
            let (loss, d) = cross_entropy(row, *label);
            total += loss;
            d_logits.extend(d.into_iter().map(T::of));
        }
        let d_pooled = self.head_backward(&head, &d_logits, grads);
        let width = d_pooled.len() / batch.len();
        for (body, d) in bodies.iter().zip(d_pooled.chunks_exact(width)) {
            self.body_backward(body, d, grads);
        }
        Ok(total)
    }

    /// Cross-entropy loss for one sample; gradients are added to `grads`.
    pub fn loss_and_grad(
        &self,
        frames: &[Tensor<T>],
        label: usize,
        grads: &mut ParamSet<T>,
    ) -> Result<f64, NetError> {
        let trace = self.forward_trace(frames)?;
        let (loss, d_logits) = cross_entropy(&trace.logits, label);
        self.backward(&trace, &d_logits, grads);
        Ok(loss)
    }

    pub fn loss(&self, frames: &[Tensor<T>], label: usize) -> Result<f64, NetError> {
        Ok(cross_entropy(&self.forward(frames)?, label).0)
    }
}

/// Mean of feature vectors summed in a canonical (content-sorted) order so
/// that the result does not depend on the order frames arrive in.
fn mean_order_free<T: Real>(feats: &[Vec<T>]) -> Vec<T> {
    let mut order: Vec<usize> = (0..feats.len()).collect();
    order.sort_by(|&a, &b| lexicographic(&feats[a], &feats[b]));
    let len = feats[0].len();
    let mut sums = vec![0.0f64; len];
    for &i in &order {
        for (s, v) in sums.iter_mut().zip(&feats[i]) {
            *s += v.as_f64();
        }
    }
    let n = feats.len() as f64;
    sums.into_iter().map(|s| T::of(s / n)).collect()
}

fn lexicographic<T: Real>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.as_f64().total_cmp(&y.as_f64()) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}
