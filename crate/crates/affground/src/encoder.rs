//! Shared convolutional backbone.
//!
//! A small trainable feature extractor used identically by the exocentric
//! and egocentric branches: a 3x3 stem followed by stages of
//! (3x3 conv, ReLU, stride-2 3x3 conv, ReLU). Both branches read the same
//! parameter set, so encoding the same image in either branch yields the
//! same feature map.

use crate::error::{Error, Result};
use crate::rng::{rng_for, uniform_sym, xavier_limit};
use crate::tensor::Tensor;

/// Static geometry of the backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Expected square input size (pixels).
    pub input_size: usize,
    /// Channel widths: `widths[0]` is the stem output, `widths[i+1]` the
    /// output of stage i's stride-2 conv. `widths.len() - 1` stages total.
    pub widths: Vec<usize>,
}

impl EncoderConfig {
    /// Desk-scale default: 64x64 input, three stride-2 stages, 32 output
    /// channels (8x8 spatial).
    pub fn toy() -> Self {
        EncoderConfig { input_size: 64, widths: vec![8, 16, 32, 32] }
    }

    /// Full-scale geometry: 224x224 input, five stride-2 stages down to
    /// 7x7 with 2048 channels, mirroring a ResNet50-shaped feature map.
    pub fn paper() -> Self {
        EncoderConfig { input_size: 224, widths: vec![64, 128, 256, 512, 1024, 2048] }
    }

    pub fn n_stages(&self) -> usize {
        self.widths.len() - 1
    }

    /// Output channel count.
    pub fn c_feat(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Spatial side of the output feature map.
    pub fn out_size(&self) -> usize {
        // stride-2 conv with 3x3 kernel and padding 1: ceil(n / 2)
        let mut s = self.input_size;
        for _ in 0..self.n_stages() {
            s = s.div_ceil(2);
        }
        s
    }
}

/// One convolution with bias.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    fn init(rng: &mut impl rand::Rng, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        let limit = xavier_limit(c_in * k * k, c_out * k * k);
        let kernel = Tensor::param(
            &[c_out, c_in, k, k],
            (0..c_out * c_in * k * k).map(|_| uniform_sym(rng, limit)).collect(),
        )
        .unwrap();
        let bias = Tensor::param(&[c_out], vec![0.0; c_out]).unwrap();
        ConvLayer { kernel, bias, stride, padding: k / 2 }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.kernel, self.stride, self.padding)?.add_bias_chw(&self.bias)
    }
}

/// Trainable parameters of the backbone. A single owner is shared by both
/// branches; the trainer alone replaces tensors between forward passes.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub stem: ConvLayer,
    /// Per stage: (same-resolution conv, stride-2 conv).
    pub stages: Vec<(ConvLayer, ConvLayer)>,
}

impl EncoderParams {
    pub fn init(config: &EncoderConfig, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[0x0e0c]);
        let stem = ConvLayer::init(&mut rng, 3, config.widths[0], 3, 1);
        let stages = (0..config.n_stages())
            .map(|i| {
                let c_in = config.widths[i];
                let c_out = config.widths[i + 1];
                let same = ConvLayer::init(&mut rng, c_in, c_in, 3, 1);
                let down = ConvLayer::init(&mut rng, c_in, c_out, 3, 2);
                (same, down)
            })
            .collect();
        EncoderParams { config: config.clone(), stem, stages }
    }

    /// Feature map for one image in [-1, 1], shape `[3, s, s]`.
    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        let s = self.config.input_size;
        if image.shape() != [3, s, s] {
            return Err(Error::Shape(format!(
                "encoder expects [3, {s}, {s}] input, got {:?}",
                image.shape()
            )));
        }
        let mut x = self.stem.apply(image)?;
        for (same, down) in &self.stages {
            x = same.apply(&x)?.relu();
            x = down.apply(&x)?.relu();
        }
        Ok(x)
    }
}
