use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::NetworkError;

/// Nonlinearity applied after each convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Relu,
    Tanh,
}

/// Position of the nonlinearity relative to batch normalization in a conv block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerOrder {
    /// conv → nonlinearity → batchnorm
    ConvActBn,
    /// conv → batchnorm → nonlinearity
    ConvBnAct,
}

/// Shape of the embedding branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub input_h: usize,
    pub input_w: usize,
    /// Output feature maps of each convolution.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Widths of the fully connected layers; the last one is the embedding length.
    pub fc_widths: Vec<usize>,
    pub nonlinearity: Nonlinearity,
    pub order: LayerOrder,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

/// Length of the feature vector produced by the last layer.
pub const EMBEDDING_LEN: usize = 5;

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self::with_resolution(300)
    }
}

impl ArchitectureConfig {
    /// Full-size branch on 300×300 inputs.
    pub fn full_resolution() -> Self {
        Self::with_resolution(300)
    }

    /// Same layer stack on 64×64 inputs; the first FC layer shrinks from 360M to 16M weights.
    pub fn desk() -> Self {
        Self::with_resolution(64)
    }

    pub fn with_resolution(side: usize) -> Self {
        Self {
            input_h: side,
            input_w: side,
            conv_channels: vec![4, 8, 8],
            kernel: 3,
            stride: 1,
            padding: 1,
            fc_widths: vec![500, 500, EMBEDDING_LEN],
            nonlinearity: Nonlinearity::Relu,
            order: LayerOrder::ConvActBn,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |msg: String| Err(NetworkError::InvalidArchitecture(msg));
        if self.input_h == 0 || self.input_w == 0 {
            return bad(format!("input {}x{}", self.input_h, self.input_w));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad(format!("conv channels {:?}", self.conv_channels));
        }
        if self.fc_widths.last() != Some(&EMBEDDING_LEN) || self.fc_widths.contains(&0) {
            return bad(format!(
                "fc widths {:?} must end with the embedding length {EMBEDDING_LEN}",
                self.fc_widths
            ));
        }
        if self.kernel == 0 || self.stride != 1 || 2 * self.padding + 1 != self.kernel {
            return bad(format!(
                "kernel {} stride {} padding {} does not preserve spatial size",
                self.kernel, self.stride, self.padding
            ));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad(format!("batchnorm eps {} momentum {}", self.bn_eps, self.bn_momentum));
        }
        Ok(())
    }

    pub fn embedding_len(&self) -> usize {
        *self.fc_widths.last().expect("validated")
    }

    /// Width of the flattened conv output feeding the first FC layer.
    pub fn flatten_width(&self) -> usize {
        self.conv_channels.last().copied().unwrap_or(1) * self.input_h * self.input_w
    }

    /// Spatial size after a convolution with this kernel, stride and padding.
    pub fn conv_output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let out = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (out(h), out(w))
    }

    /// Layer-by-layer shapes of one branch, without allocating any weights.
    pub fn plan(&self) -> Vec<LayerShape> {
        let mut layers = Vec::new();
        let (mut c, mut h, mut w) = (1, self.input_h, self.input_w);
        for (i, &out_c) in self.conv_channels.iter().enumerate() {
            let (oh, ow) = self.conv_output_size(h, w);
            layers.push(LayerShape::new(LayerKind::Conv, format!("conv{}", i + 1), &[c, h, w], &[out_c, oh, ow]));
            let act = match self.nonlinearity {
                Nonlinearity::Relu => LayerKind::Relu,
                Nonlinearity::Tanh => LayerKind::Tanh,
            };
            let shape = [out_c, oh, ow];
            let bn = LayerShape::new(LayerKind::BatchNorm, format!("bn{}", i + 1), &shape, &shape);
            let act = LayerShape::new(act, format!("act{}", i + 1), &shape, &shape);
            match self.order {
                LayerOrder::ConvActBn => layers.extend([act, bn]),
                LayerOrder::ConvBnAct => layers.extend([bn, act]),
            }
            (c, h, w) = (out_c, oh, ow);
        }
        layers.push(LayerShape::new(LayerKind::Flatten, "flatten".into(), &[c, h, w], &[c * h * w]));
        let mut width = c * h * w;
        for (i, &out) in self.fc_widths.iter().enumerate() {
            layers.push(LayerShape::new(LayerKind::Fc, format!("fc{}", i + 1), &[width], &[out]));
            if i + 1 < self.fc_widths.len() {
                layers.push(LayerShape::new(LayerKind::Relu, format!("fc_act{}", i + 1), &[out], &[out]));
            }
            width = out;
        }
        layers
    }

    /// Number of learnable parameters in one branch (shared by both).
    pub fn parameter_count(&self) -> usize {
        let mut total = 0;
        let mut cin = 1;
        for &cout in &self.conv_channels {
            total += cout * cin * self.kernel * self.kernel + cout + 2 * cout;
            cin = cout;
        }
        let mut width = self.flatten_width();
        for &out in &self.fc_widths {
            total += out * width + out;
            width = out;
        }
        total
    }

    /// Stable hash of every field, stored in checkpoints.
    pub fn fingerprint(&self) -> u64 {
        let canonical = format!(
            "in={}x{};conv={:?};k={};s={};p={};fc={:?};act={:?};order={:?};eps={:e};momentum={:e}",
            self.input_h,
            self.input_w,
            self.conv_channels,
            self.kernel,
            self.stride,
            self.padding,
            self.fc_widths,
            self.nonlinearity,
            self.order,
            self.bn_eps,
            self.bn_momentum
        );
        let digest = Sha256::digest(canonical.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Relu,
    Tanh,
    BatchNorm,
    Flatten,
    Fc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub kind: LayerKind,
    pub name: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

impl LayerShape {
    fn new(kind: LayerKind, name: String, input: &[usize], output: &[usize]) -> Self {
        Self {
            kind,
            name,
            input: input.to_vec(),
            output: output.to_vec(),
        }
    }
}

/// Optimisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Contrastive margin `m`.
    pub margin: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 500,
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            margin: 2.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |msg: &str| Err(NetworkError::InvalidConfig(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("invalid optimizer hyperparameters");
        }
        Ok(())
    }
}
