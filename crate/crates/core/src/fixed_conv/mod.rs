//! Untrained convolutional feature extractor.
//!
//! Kernels and the dense projection are sampled once from a seeded normal
//! distribution and never change. There are no biases anywhere, so an
//! all-zero frame maps to an all-zero feature vector.
//!
//! Layout conventions (recorded in checkpoints as [`LAYOUT_ID`]):
//! tensors are channel-major, rows within a channel are row-major, and the
//! flattened conv output feeds the dense layer in that same order.

mod fft;

pub use fft::FftConvPlan;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const LAYOUT_ID: &str = "chw-rowmajor";
pub const FRAME_SIZE: usize = 64;
pub const FRAME_CHANNELS: usize = 3;

/// Layers with kernels at least this wide are evaluated in the frequency
/// domain.
pub const FFT_MIN_KERNEL: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub filter_size: usize,
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub layers: Vec<ConvLayerSpec>,
    pub dense_out: usize,
    pub conv_weight_stddev: f64,
}

impl Default for ConvSpec {
    fn default() -> Self {
        let layer = |filter_size, out_channels| ConvLayerSpec {
            filter_size,
            out_channels,
            stride: 2,
        };
        ConvSpec {
            layers: vec![layer(31, 32), layer(14, 64), layer(6, 128)],
            dense_out: 512,
            conv_weight_stddev: 0.06,
        }
    }
}

impl ConvSpec {
    pub fn with_dense_out(mut self, dense_out: usize) -> Self {
        self.dense_out = dense_out;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("conv spec needs at least one layer"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.filter_size == 0 || l.out_channels == 0 || l.stride == 0 {
                return Err(Error::invalid(format!(
                    "conv layer {i}: filter size, channels and stride must be positive"
                )));
            }
        }
        if self.dense_out == 0 {
            return Err(Error::invalid("dense_out must be positive"));
        }
        if !(self.conv_weight_stddev.is_finite() && self.conv_weight_stddev > 0.0) {
            return Err(Error::invalid("conv_weight_stddev must be positive"));
        }
        Ok(())
    }

    /// `(channels, height, width)` after each conv layer for a square input.
    pub fn shape_chain(&self, input: usize) -> Vec<(usize, usize, usize)> {
        let mut side = input;
        self.layers
            .iter()
            .map(|l| {
                side = same_output_len(side, l.stride);
                (l.out_channels, side, side)
            })
            .collect()
    }

    /// Length of the flattened last conv activation.
    pub fn flattened_dim(&self) -> usize {
        self.shape_chain(FRAME_SIZE)
            .last()
            .map(|&(c, h, w)| c * h * w)
            .unwrap_or(0)
    }
}

/// Channel-major 3-D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "tensor data has {} values, shape {channels}x{height}x{width} needs {}",
                data.len(),
                channels * height * width
            )));
        }
        Ok(Tensor3 {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// `out_channels × in_channels × size × size` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    pub fn from_vec(out_channels: usize, in_channels: usize, size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != out_channels * in_channels * size * size {
            return Err(Error::invalid("kernel data length does not match its shape"));
        }
        Ok(Kernel {
            out_channels,
            in_channels,
            size,
            data,
        })
    }

    #[inline]
    pub fn at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.data[((o * self.in_channels + i) * self.size + ky) * self.size + kx]
    }
}

/// Interleaved `height × width × channels` byte image, as produced by the
/// environments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image buffer has {} bytes, {width}x{height}x{channels} needs {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(RawImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        RawImage {
            width,
            height,
            channels: 3,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * self.channels;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// A preprocessed 3×64×64 observation with values in `[0, 1]`, stored
/// channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame(Tensor3);

impl Frame {
    pub fn zeros() -> Self {
        Frame(Tensor3::zeros(FRAME_CHANNELS, FRAME_SIZE, FRAME_SIZE))
    }

    pub fn from_tensor(t: Tensor3) -> Result<Self> {
        if t.channels != FRAME_CHANNELS || t.height != FRAME_SIZE || t.width != FRAME_SIZE {
            return Err(Error::invalid("frame must be 3x64x64"));
        }
        if t.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("frame values must lie in [0, 1]"));
        }
        Ok(Frame(t))
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }
}

/// Nearest-neighbour resize to 64×64 followed by scaling bytes into `[0, 1]`.
/// Output pixel `(y, x)` samples source pixel `(⌊y·H/64⌋, ⌊x·W/64⌋)`.
pub fn preprocess(raw: &RawImage) -> Result<Frame> {
    if raw.channels != FRAME_CHANNELS {
        return Err(Error::invalid(format!(
            "expected 3 colour channels, got {}",
            raw.channels
        )));
    }
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::invalid("image must be non-empty"));
    }
    if raw.data.len() != raw.width * raw.height * raw.channels {
        return Err(Error::invalid("image buffer length does not match its shape"));
    }
    let mut t = Tensor3::zeros(FRAME_CHANNELS, FRAME_SIZE, FRAME_SIZE);
    let plane = FRAME_SIZE * FRAME_SIZE;
    for y in 0..FRAME_SIZE {
        let sy = y * raw.height / FRAME_SIZE;
        for x in 0..FRAME_SIZE {
            let sx = x * raw.width / FRAME_SIZE;
            let px = raw.pixel(sx, sy);
            for c in 0..FRAME_CHANNELS {
                t.data[c * plane + y * FRAME_SIZE + x] = px[c] as f64 / 255.0;
            }
        }
    }
    Ok(Frame(t))
}

#[inline]
pub fn same_output_len(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

/// Leading zero-padding for "same" convolution; the trailing edge receives
/// the remainder.
#[inline]
pub fn same_leading_pad(input: usize, kernel: usize, stride: usize) -> usize {
    let out = same_output_len(input, stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    total / 2
}

/// Strided cross-correlation with "same" zero padding.
pub fn conv2d(input: &Tensor3, kernel: &Kernel, stride: usize) -> Result<Tensor3> {
    if kernel.in_channels != input.channels {
        return Err(Error::invalid(format!(
            "kernel expects {} input channels, input has {}",
            kernel.in_channels, input.channels
        )));
    }
    if kernel.size == 0 || stride == 0 {
        return Err(Error::invalid("kernel size and stride must be positive"));
    }
    if input.height == 0 || input.width == 0 {
        return Err(Error::invalid("input must be non-empty"));
    }
    let k = kernel.size;
    let out_h = same_output_len(input.height, stride);
    let out_w = same_output_len(input.width, stride);
    let pad_y = same_leading_pad(input.height, k, stride);
    let pad_x = same_leading_pad(input.width, k, stride);

    // im2col: rows are (in_channel, ky, kx), columns are output positions.
    let patch = input.channels * k * k;
    let positions = out_h * out_w;
    IM2COL_SCRATCH.with(|scratch| {
        let mut cols = scratch.borrow_mut();
        cols.clear();
        cols.resize(patch * positions, 0.0);
        for c in 0..input.channels {
            let plane = input.channel(c);
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(out_h, input.height, ky, pad_y, stride);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = valid_range(out_w, input.width, kx, pad_x, stride);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad_y;
                        let src_row = &plane[iy * input.width..(iy + 1) * input.width];
                        let dst_row = &mut dst[oy * out_w..(oy + 1) * out_w];
                        let base = ox_lo * stride + kx - pad_x;
                        for (j, d) in dst_row[ox_lo..ox_hi].iter_mut().enumerate() {
                            *d = src_row[base + j * stride];
                        }
                    }
                }
            }
        }

        let mut out = Tensor3::zeros(kernel.out_channels, out_h, out_w);
        // SAFETY: the operands are dense row-major buffers of exactly
        // (out × patch), (patch × positions) and (out × positions) elements.
        unsafe {
            matrixmultiply::dgemm(
                kernel.out_channels,
                patch,
                positions,
                1.0,
                kernel.data.as_ptr(),
                patch as isize,
                1,
                cols.as_ptr(),
                positions as isize,
                1,
                0.0,
                out.data.as_mut_ptr(),
                positions as isize,
                1,
            );
        }
        Ok(out)
    })
}

thread_local! {
    static IM2COL_SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Output indices `[lo, hi)` whose tap at kernel offset `offset` lands inside
/// an input of length `input_len`.
fn valid_range(out_len: usize, input_len: usize, offset: usize, pad: usize, stride: usize) -> (usize, usize) {
    // need: pad <= o*stride + offset < input_len + pad
    let lo = pad.saturating_sub(offset).div_ceil(stride);
    let hi = if input_len + pad > offset {
        (input_len + pad - offset).div_ceil(stride)
    } else {
        0
    };
    (lo.min(out_len), hi.min(out_len).max(lo.min(out_len)))
}

/// Fixed random-weight CNN: conv layers with tanh, flatten, dense with tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    spec: ConvSpec,
    seed: u64,
    kernels: Vec<Kernel>,
    /// `flattened_dim × dense_out`, row-major.
    dense_weight: Vec<f64>,
    flattened_dim: usize,
    fft_plans: Vec<Option<FftConvPlan>>,
}

/// Every intermediate activation of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub conv: Vec<Tensor3>,
    pub features: Vec<f64>,
}

impl FeatureExtractor {
    /// Draws all weights i.i.d. from `N(0, conv_weight_stddev²)`: each kernel
    /// in layer order and `(out, in, ky, kx)` order, then the dense matrix
    /// row by row.
    pub fn build(spec: ConvSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(seed);
        let sd = spec.conv_weight_stddev;
        let mut in_channels = FRAME_CHANNELS;
        let mut side = FRAME_SIZE;
        let mut kernels = Vec::with_capacity(spec.layers.len());
        let mut fft_plans = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let mut data = vec![0.0; l.out_channels * in_channels * l.filter_size * l.filter_size];
            rng.fill_normal(&mut data, sd);
            let kernel = Kernel {
                out_channels: l.out_channels,
                in_channels,
                size: l.filter_size,
                data,
            };
            fft_plans.push(
                (l.filter_size >= FFT_MIN_KERNEL).then(|| FftConvPlan::new(&kernel, l.stride, side, side)),
            );
            kernels.push(kernel);
            in_channels = l.out_channels;
            side = same_output_len(side, l.stride);
        }
        let flattened_dim = spec.flattened_dim();
        let mut dense_weight = vec![0.0; flattened_dim * spec.dense_out];
        rng.fill_normal(&mut dense_weight, sd);
        Ok(FeatureExtractor {
            spec,
            seed,
            kernels,
            dense_weight,
            flattened_dim,
            fft_plans,
        })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn dense_weight(&self) -> &[f64] {
        &self.dense_weight
    }

    pub fn flattened_dim(&self) -> usize {
        self.flattened_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.dense_out
    }

    pub fn extract(&self, frame: &Frame) -> Vec<f64> {
        self.forward(frame).features
    }

    pub fn forward(&self, frame: &Frame) -> Activations {
        let mut conv = Vec::with_capacity(self.kernels.len());
        let mut x = frame.tensor().clone();
        for ((kernel, layer), plan) in self.kernels.iter().zip(&self.spec.layers).zip(&self.fft_plans) {
            let mut y = match plan {
                Some(plan) => plan.apply(&x),
                // Shapes are fixed at build time, so conv2d cannot fail here.
                None => conv2d(&x, kernel, layer.stride).expect("extractor shapes are consistent"),
            };
            y.data.iter_mut().for_each(|v| *v = v.tanh());
            conv.push(y.clone());
            x = y;
        }
        let d = self.spec.dense_out;
        let mut features = vec![0.0; d];
        for (i, &xi) in x.data.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.dense_weight[i * d..(i + 1) * d];
            for (f, &w) in features.iter_mut().zip(row) {
                *f += xi * w;
            }
        }
        features.iter_mut().for_each(|v| *v = v.tanh());
        Activations { conv, features }
    }
}
