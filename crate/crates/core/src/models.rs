//! U-Net generators, per-band discriminators and the bundle holding both
//! directions of the cycle.

use ndarray::{s, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bands::BandLayout;
use crate::error::{ensure, Error, Result};
use crate::nn::{
    concat_channels, conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, leaky_relu_backward,
    leaky_relu_inplace, reflect_pad_freq, reflect_pad_freq_backward, relu_backward, relu_inplace, same_dim,
    split_channels, Grads, KernelSpec, Param, Scalar,
};

/// Standard deviation of the Gaussian weight initializer.
pub const INIT_STD: f64 = 0.02;

/// One convolution layer as `(channels, filter_freq, filter_time,
/// stride_freq, stride_time)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub channels: usize,
    pub filter_freq: usize,
    pub filter_time: usize,
    pub stride_freq: usize,
    pub stride_time: usize,
}

impl LayerSpec {
    pub const fn new(channels: usize, filter_freq: usize, filter_time: usize, stride_freq: usize, stride_time: usize) -> Self {
        LayerSpec {
            channels,
            filter_freq,
            filter_time,
            stride_freq,
            stride_time,
        }
    }

    fn kernel(&self, in_channels: usize) -> KernelSpec {
        KernelSpec {
            in_channels,
            out_channels: self.channels,
            k_h: self.filter_freq,
            k_w: self.filter_time,
            s_h: self.stride_freq,
            s_w: self.stride_time,
        }
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.channels >= 1 && self.filter_freq >= 1 && self.filter_time >= 1 && self.stride_freq >= 1 && self.stride_time >= 1,
            InvalidArgument,
            "layer fields must all be >= 1: {self:?}"
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub encoder_layers: Vec<LayerSpec>,
    pub skip_connections: bool,
    /// Extra Gaussian noise channels concatenated to the input. Zero keeps
    /// the generator a deterministic mapping.
    pub noise_dim: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            encoder_layers: vec![
                LayerSpec::new(8, 3, 3, 1, 1),
                LayerSpec::new(16, 3, 3, 1, 1),
                LayerSpec::new(32, 3, 3, 2, 2),
                LayerSpec::new(64, 3, 3, 2, 2),
            ],
            skip_connections: true,
            noise_dim: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.encoder_layers.is_empty(), InvalidArgument, "generator needs at least one layer");
        for l in &self.encoder_layers {
            l.validate()?;
            ensure!(
                l.stride_freq.is_power_of_two() && l.stride_time.is_power_of_two(),
                InvalidArgument,
                "generator strides must be powers of two: {l:?}"
            );
        }
        Ok(())
    }

    /// Product of frequency strides; the padded bin count must divide by it.
    pub fn freq_factor(&self) -> usize {
        self.encoder_layers.iter().map(|l| l.stride_freq).product()
    }

    /// Product of time strides; input frame counts must divide by it.
    pub fn time_factor(&self) -> usize {
        self.encoder_layers.iter().map(|l| l.stride_time).product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub conv_layers: Vec<LayerSpec>,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            conv_layers: vec![
                LayerSpec::new(8, 4, 4, 2, 2),
                LayerSpec::new(16, 4, 4, 2, 2),
                LayerSpec::new(32, 4, 4, 2, 2),
                LayerSpec::new(64, 4, 4, 2, 2),
            ],
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.conv_layers.is_empty(), InvalidArgument, "discriminator needs at least one layer");
        for l in &self.conv_layers {
            l.validate()?;
        }
        ensure!(
            self.leaky_slope.is_finite() && self.leaky_slope >= 0.0,
            InvalidArgument,
            "leaky slope must be finite and nonnegative"
        );
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    /// One generator per direction.
    #[default]
    Single,
    /// One generator per band, each judged only by its band's discriminator.
    OneOne,
    /// One generator per band, each judged by every discriminator.
    OneMany,
}

/// Which generator of the cycle to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "x2y")]
    XToY,
    #[serde(rename = "y2x")]
    YToX,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::XToY => Direction::YToX,
            Direction::YToX => Direction::XToY,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x2y" => Ok(Direction::XToY),
            "y2x" => Ok(Direction::YToX),
            other => Err(Error::InvalidArgument(format!("unknown direction {other:?}"))),
        }
    }
}

fn gaussian_param<T: Scalar>(name: String, dims: Vec<usize>, rng: &mut ChaCha8Rng) -> Param<T> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let len = dims.iter().product();
    Param {
        name,
        dims,
        data: (0..len).map(|_| T::lit(normal.sample(rng))).collect(),
    }
}

fn check_params<T>(expected: &[(String, Vec<usize>)], params: &[Param<T>], what: &str) -> Result<()> {
    ensure!(
        expected.len() == params.len(),
        Shape,
        "{what}: expected {} parameter tensors, got {}",
        expected.len(),
        params.len()
    );
    for ((name, dims), p) in expected.iter().zip(params) {
        ensure!(
            *name == p.name && *dims == p.dims && p.data.len() == dims.iter().product::<usize>(),
            Shape,
            "{what}: parameter {} {:?} does not match expected {} {:?}",
            p.name,
            p.dims,
            name,
            dims
        );
    }
    Ok(())
}

/// U-Net generator. Frequency is reflect-padded up to a multiple of the
/// total frequency stride and cropped back on output, so the output shape
/// always equals the input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub params: Vec<Param<T>>,
    encoder: Vec<KernelSpec>,
    decoder: Vec<KernelSpec>,
}

/// Activations kept from a generator forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct GeneratorTrace<T> {
    bins: usize,
    pad_lo: usize,
    input: Array4<T>,
    enc_out: Vec<Array4<T>>,
    dec_in: Vec<Array4<T>>,
    dec_out: Vec<Array4<T>>,
}

impl<T: Scalar> Generator<T> {
    fn kernels(config: &GeneratorConfig) -> (Vec<KernelSpec>, Vec<KernelSpec>) {
        let layers = &config.encoder_layers;
        let depth = layers.len();
        let mut in_ch = 1 + config.noise_dim;
        let encoder = layers
            .iter()
            .map(|l| {
                let k = l.kernel(in_ch);
                in_ch = l.channels;
                k
            })
            .collect();
        let decoder = (0..depth)
            .map(|i| {
                let c = layers[i].channels;
                let input = if i == depth - 1 {
                    c
                } else if config.skip_connections {
                    2 * c
                } else {
                    c
                };
                let output = if i == 0 { 1 } else { layers[i - 1].channels };
                KernelSpec {
                    in_channels: input,
                    out_channels: output,
                    ..layers[i].kernel(0)
                }
            })
            .collect();
        (encoder, decoder)
    }

    /// Names and dims of every parameter tensor, in storage order.
    pub fn layout(config: &GeneratorConfig) -> Vec<(String, Vec<usize>)> {
        let (encoder, decoder) = Self::kernels(config);
        let mut out = Vec::new();
        for (i, k) in encoder.iter().enumerate() {
            out.push((format!("enc{i}.weight"), vec![k.out_channels, k.in_channels, k.k_h, k.k_w]));
            out.push((format!("enc{i}.bias"), vec![k.out_channels]));
        }
        for (i, k) in decoder.iter().enumerate() {
            out.push((format!("dec{i}.weight"), vec![k.in_channels, k.out_channels, k.k_h, k.k_w]));
            out.push((format!("dec{i}.bias"), vec![k.out_channels]));
        }
        out
    }

    pub fn init(config: GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let params = Self::layout(&config)
            .into_iter()
            .map(|(name, dims)| {
                if name.ends_with(".bias") {
                    Param::zeros(name, dims)
                } else {
                    gaussian_param(name, dims, rng)
                }
            })
            .collect();
        Self::from_params(config, params)
    }

    pub fn from_params(config: GeneratorConfig, params: Vec<Param<T>>) -> Result<Self> {
        config.validate()?;
        check_params(&Self::layout(&config), &params, "generator")?;
        let (encoder, decoder) = Self::kernels(&config);
        Ok(Generator {
            config,
            params,
            encoder,
            decoder,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            config: self.config.clone(),
            params: self.params.iter().map(Param::cast).collect(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    fn enc_w(&self, i: usize) -> usize {
        2 * i
    }

    fn dec_w(&self, i: usize) -> usize {
        2 * self.encoder.len() + 2 * i
    }

    fn check_input(&self, x: &Array4<T>, noise: Option<&Array4<T>>) -> Result<()> {
        let (_, c, f, t) = x.dim();
        ensure!(c == 1, Shape, "generator input must have one channel, got {c}");
        let tf = self.config.time_factor();
        ensure!(
            t >= tf && t % tf == 0,
            Shape,
            "frame count {t} is not a positive multiple of {tf}; crop the input first"
        );
        if let Some(z) = noise {
            ensure!(
                z.dim() == (x.dim().0, self.config.noise_dim, f, t),
                Shape,
                "noise tensor {:?} does not match input",
                z.dim()
            );
        }
        Ok(())
    }

    /// Forward pass. `noise` supplies the extra input channels when
    /// `noise_dim > 0`; `None` feeds zeros.
    pub fn forward(&self, x: &Array4<T>, noise: Option<&Array4<T>>) -> Result<Array4<T>> {
        self.forward_traced(x, noise).map(|(y, _)| y)
    }

    pub fn forward_traced(&self, x: &Array4<T>, noise: Option<&Array4<T>>) -> Result<(Array4<T>, GeneratorTrace<T>)> {
        self.check_input(x, noise)?;
        let (n, _, bins, frames) = x.dim();
        let factor = self.config.freq_factor();
        let padded = bins.div_ceil(factor) * factor;
        let pad_lo = (padded - bins) / 2;
        let mut input = reflect_pad_freq(x, pad_lo, padded - bins - pad_lo);
        if self.config.noise_dim > 0 {
            let z = match noise {
                Some(z) => reflect_pad_freq(z, pad_lo, padded - bins - pad_lo),
                None => Array4::zeros((n, self.config.noise_dim, padded, frames)),
            };
            input = concat_channels(&input, &z);
        }

        let depth = self.encoder.len();
        let mut enc_out: Vec<Array4<T>> = Vec::with_capacity(depth);
        let mut sizes = vec![(padded, frames)];
        for (i, k) in self.encoder.iter().enumerate() {
            let src = if i == 0 { &input } else { &enc_out[i - 1] };
            let mut h = conv2d(src, &self.params[self.enc_w(i)].data, &self.params[self.enc_w(i) + 1].data, k);
            relu_inplace(&mut h);
            sizes.push((h.shape()[2], h.shape()[3]));
            enc_out.push(h);
        }

        let mut dec_in = vec![Array4::zeros((0, 0, 0, 0)); depth];
        let mut dec_out = vec![Array4::zeros((0, 0, 0, 0)); depth];
        for i in (0..depth).rev() {
            let inp = if i == depth - 1 {
                enc_out[i].clone()
            } else if self.config.skip_connections {
                concat_channels(&dec_out[i + 1], &enc_out[i])
            } else {
                dec_out[i + 1].clone()
            };
            let (h, w) = sizes[i];
            let k = &self.decoder[i];
            let mut out = conv_transpose2d(&inp, &self.params[self.dec_w(i)].data, &self.params[self.dec_w(i) + 1].data, k, h, w);
            if i > 0 {
                relu_inplace(&mut out);
            }
            dec_in[i] = inp;
            dec_out[i] = out;
        }
        let y = dec_out[0].slice(s![.., .., pad_lo..pad_lo + bins, ..]).to_owned();
        let trace = GeneratorTrace {
            bins,
            pad_lo,
            input,
            enc_out,
            dec_in,
            dec_out,
        };
        Ok((y, trace))
    }

    /// Backpropagates `dy` through a traced forward pass, accumulating
    /// parameter gradients into `grads` and returning the input gradient.
    pub fn backward(&self, trace: &GeneratorTrace<T>, dy: &Array4<T>, grads: &mut Grads<T>) -> Array4<T> {
        let depth = self.encoder.len();
        let mut d = Array4::zeros(trace.dec_out[0].raw_dim());
        d.slice_mut(s![.., .., trace.pad_lo..trace.pad_lo + trace.bins, ..]).assign(dy);

        let mut d_enc: Vec<Array4<T>> = trace.enc_out.iter().map(|e| Array4::zeros(e.raw_dim())).collect();
        for i in 0..depth {
            if i > 0 {
                relu_backward(&mut d, &trace.dec_out[i]);
            }
            let (wi, bi) = (self.dec_w(i), self.dec_w(i) + 1);
            let (dw, db) = two_mut(grads, wi, bi);
            let d_in = conv_transpose2d_backward(&trace.dec_in[i], &self.params[wi].data, &self.decoder[i], &d, dw, db, true)
                .expect("input gradient requested");
            if i == depth - 1 {
                d_enc[i] += &d_in;
            } else if self.config.skip_connections {
                let (up, skip) = split_channels(&d_in, self.encoder[i].out_channels);
                d_enc[i] += &skip;
                d = up;
            } else {
                d = d_in;
            }
        }

        let mut d_input = None;
        for i in (0..depth).rev() {
            let mut g = std::mem::replace(&mut d_enc[i], Array4::zeros((0, 0, 0, 0)));
            relu_backward(&mut g, &trace.enc_out[i]);
            let src = if i == 0 { &trace.input } else { &trace.enc_out[i - 1] };
            let (wi, bi) = (self.enc_w(i), self.enc_w(i) + 1);
            let (dw, db) = two_mut(grads, wi, bi);
            let dx = conv2d_backward(src, &self.params[wi].data, &self.encoder[i], &g, dw, db, true)
                .expect("input gradient requested");
            if i == 0 {
                d_input = Some(dx);
            } else {
                d_enc[i - 1] += &dx;
            }
        }
        let d_input = d_input.expect("at least one layer");
        let d_signal = if self.config.noise_dim > 0 {
            split_channels(&d_input, 1).0
        } else {
            d_input
        };
        reflect_pad_freq_backward(&d_signal, trace.pad_lo, trace.bins)
    }
}

fn two_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// Convolutional band discriminator with a single-unit dense head. Emits a
/// raw logit per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub config: DiscriminatorConfig,
    pub params: Vec<Param<T>>,
    convs: Vec<KernelSpec>,
    input_bins: usize,
    input_frames: usize,
    fc_len: usize,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorTrace<T> {
    input: Array4<T>,
    conv_out: Vec<Array4<T>>,
}

impl<T: Scalar> Discriminator<T> {
    fn kernels(config: &DiscriminatorConfig) -> Vec<KernelSpec> {
        let mut in_ch = 1;
        config
            .conv_layers
            .iter()
            .map(|l| {
                let k = l.kernel(in_ch);
                in_ch = l.channels;
                k
            })
            .collect()
    }

    fn head_len(config: &DiscriminatorConfig, bins: usize, frames: usize) -> usize {
        let (mut h, mut w) = (bins, frames);
        for l in &config.conv_layers {
            h = same_dim(h, l.filter_freq, l.stride_freq).0;
            w = same_dim(w, l.filter_time, l.stride_time).0;
        }
        h * w * config.conv_layers.last().map_or(1, |l| l.channels)
    }

    pub fn layout(config: &DiscriminatorConfig, bins: usize, frames: usize) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, k) in Self::kernels(config).iter().enumerate() {
            out.push((format!("conv{i}.weight"), vec![k.out_channels, k.in_channels, k.k_h, k.k_w]));
            out.push((format!("conv{i}.bias"), vec![k.out_channels]));
        }
        out.push(("fc.weight".into(), vec![Self::head_len(config, bins, frames)]));
        out.push(("fc.bias".into(), vec![1]));
        out
    }

    pub fn init(config: DiscriminatorConfig, bins: usize, frames: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let params = Self::layout(&config, bins, frames)
            .into_iter()
            .map(|(name, dims)| {
                if name.ends_with(".bias") {
                    Param::zeros(name, dims)
                } else {
                    gaussian_param(name, dims, rng)
                }
            })
            .collect();
        Self::from_params(config, bins, frames, params)
    }

    pub fn from_params(config: DiscriminatorConfig, bins: usize, frames: usize, params: Vec<Param<T>>) -> Result<Self> {
        config.validate()?;
        ensure!(bins >= 1 && frames >= 1, InvalidArgument, "discriminator input must be non-empty");
        check_params(&Self::layout(&config, bins, frames), &params, "discriminator")?;
        Ok(Discriminator {
            convs: Self::kernels(&config),
            fc_len: Self::head_len(&config, bins, frames),
            config,
            params,
            input_bins: bins,
            input_frames: frames,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        Discriminator {
            config: self.config.clone(),
            params: self.params.iter().map(Param::cast).collect(),
            convs: self.convs.clone(),
            input_bins: self.input_bins,
            input_frames: self.input_frames,
            fc_len: self.fc_len,
        }
    }

    pub fn input_bins(&self) -> usize {
        self.input_bins
    }

    pub fn input_frames(&self) -> usize {
        self.input_frames
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn forward(&self, x: &Array4<T>) -> Result<Vec<T>> {
        self.forward_traced(x).map(|(l, _)| l)
    }

    pub fn forward_traced(&self, x: &Array4<T>) -> Result<(Vec<T>, DiscriminatorTrace<T>)> {
        let (n, c, f, t) = x.dim();
        ensure!(
            c == 1 && f == self.input_bins && t == self.input_frames,
            Shape,
            "discriminator expects (_, 1, {}, {}), got {:?}",
            self.input_bins,
            self.input_frames,
            x.dim()
        );
        let slope = T::lit(self.config.leaky_slope);
        let mut conv_out: Vec<Array4<T>> = Vec::with_capacity(self.convs.len());
        for (i, k) in self.convs.iter().enumerate() {
            let src = if i == 0 { x } else { &conv_out[i - 1] };
            let mut h = conv2d(src, &self.params[2 * i].data, &self.params[2 * i + 1].data, k);
            leaky_relu_inplace(&mut h, slope);
            conv_out.push(h);
        }
        let last = conv_out.last().expect("at least one layer");
        let flat = last.as_slice().expect("standard layout");
        let nl = self.params.len();
        let (w, b) = (&self.params[nl - 2].data, self.params[nl - 1].data[0]);
        let logits = flat
            .chunks_exact(self.fc_len)
            .map(|h| h.iter().zip(w).map(|(&a, &b)| a * b).sum::<T>() + b)
            .collect::<Vec<_>>();
        debug_assert_eq!(logits.len(), n);
        Ok((
            logits,
            DiscriminatorTrace {
                input: x.clone(),
                conv_out,
            },
        ))
    }

    /// Backpropagates per-sample logit gradients. Returns the input
    /// gradient when `need_dx`.
    pub fn backward(&self, trace: &DiscriminatorTrace<T>, dlogits: &[T], grads: &mut Grads<T>, need_dx: bool) -> Option<Array4<T>> {
        let nl = self.params.len();
        let last = trace.conv_out.last().expect("at least one layer");
        let flat = last.as_slice().expect("standard layout");
        let w = &self.params[nl - 2].data;
        let mut d = Array4::zeros(last.raw_dim());
        {
            let (dw, db) = two_mut(grads, nl - 2, nl - 1);
            let dflat = d.as_slice_mut().expect("standard layout");
            for ((h, dh), &g) in flat.chunks_exact(self.fc_len).zip(dflat.chunks_exact_mut(self.fc_len)).zip(dlogits) {
                db[0] += g;
                for ((dwi, dhi), (&hi, &wi)) in dw.iter_mut().zip(dh.iter_mut()).zip(h.iter().zip(w)) {
                    *dwi += g * hi;
                    *dhi = g * wi;
                }
            }
        }
        let slope = T::lit(self.config.leaky_slope);
        for i in (0..self.convs.len()).rev() {
            leaky_relu_backward(&mut d, &trace.conv_out[i], slope);
            let src = if i == 0 { &trace.input } else { &trace.conv_out[i - 1] };
            let (dw, db) = two_mut(grads, 2 * i, 2 * i + 1);
            let want = i > 0 || need_dx;
            match conv2d_backward(src, &self.params[2 * i].data, &self.convs[i], &d, dw, db, want) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }
}

/// Everything that fixes the shapes inside a [`ModelBundle`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub layout_x: BandLayout,
    pub layout_y: BandLayout,
    pub generator_mode: GeneratorMode,
    /// Frame count the discriminators' dense heads are sized for.
    pub frames: usize,
}

impl BundleConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.layout_x.validate()?;
        self.layout_y.validate()?;
        ensure!(
            self.layout_x.total_bins == self.layout_y.total_bins,
            InvalidArgument,
            "domains must share a bin count ({} vs {})",
            self.layout_x.total_bins,
            self.layout_y.total_bins
        );
        if self.generator_mode == GeneratorMode::OneOne {
            ensure!(
                self.layout_x.num_bands() == self.layout_y.num_bands(),
                InvalidArgument,
                "one_one mode needs equal band counts"
            );
        }
        let tf = self.generator.time_factor();
        ensure!(
            self.frames >= tf && self.frames % tf == 0,
            InvalidArgument,
            "frames ({}) must be a positive multiple of {tf}",
            self.frames
        );
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.layout_x.total_bins
    }

    /// Layout of the domain `dir` maps into; its discriminators judge the
    /// output.
    pub fn target_layout(&self, dir: Direction) -> &BandLayout {
        match dir {
            Direction::XToY => &self.layout_y,
            Direction::YToX => &self.layout_x,
        }
    }

    pub fn source_layout(&self, dir: Direction) -> &BandLayout {
        self.target_layout(dir.reverse())
    }

    /// Layout used to stitch per-band generator outputs; `None` in single
    /// mode.
    pub fn assembly_layout(&self, dir: Direction) -> Option<&BandLayout> {
        match self.generator_mode {
            GeneratorMode::Single => None,
            GeneratorMode::OneOne => Some(self.target_layout(dir)),
            GeneratorMode::OneMany => Some(self.source_layout(dir)),
        }
    }

    pub fn generators_per_direction(&self, dir: Direction) -> usize {
        self.assembly_layout(dir).map_or(1, BandLayout::num_bands)
    }
}

/// Both generator sets and all band discriminators of the cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T> {
    pub config: BundleConfig,
    pub gen_xy: Vec<Generator<T>>,
    pub gen_yx: Vec<Generator<T>>,
    pub disc_x: Vec<Discriminator<T>>,
    pub disc_y: Vec<Discriminator<T>>,
}

/// Builds a bundle with N(0, 0.02) weights and zero biases. Deterministic in
/// `seed`; the draws happen in `f64` so `f32` and `f64` bundles from the
/// same seed agree up to rounding.
pub fn init_parameters<T: Scalar>(config: BundleConfig, seed: u64) -> Result<ModelBundle<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gens = |dir| {
        (0..config.generators_per_direction(dir))
            .map(|_| Generator::init(config.generator.clone(), &mut rng))
            .collect::<Result<Vec<_>>>()
    };
    let gen_xy = gens(Direction::XToY)?;
    let gen_yx = gens(Direction::YToX)?;
    let mut discs = |layout: &BandLayout| {
        layout
            .widths
            .iter()
            .map(|&w| Discriminator::init(config.discriminator.clone(), w, config.frames, &mut rng))
            .collect::<Result<Vec<_>>>()
    };
    let disc_x = discs(&config.layout_x)?;
    let disc_y = discs(&config.layout_y)?;
    ModelBundle::from_parts(config, gen_xy, gen_yx, disc_x, disc_y)
}

impl<T: Scalar> ModelBundle<T> {
    pub fn from_parts(
        config: BundleConfig,
        gen_xy: Vec<Generator<T>>,
        gen_yx: Vec<Generator<T>>,
        disc_x: Vec<Discriminator<T>>,
        disc_y: Vec<Discriminator<T>>,
    ) -> Result<Self> {
        config.validate()?;
        for (dir, gens) in [(Direction::XToY, &gen_xy), (Direction::YToX, &gen_yx)] {
            ensure!(
                gens.len() == config.generators_per_direction(dir),
                Shape,
                "{dir:?}: expected {} generators, got {}",
                config.generators_per_direction(dir),
                gens.len()
            );
        }
        for (name, discs, layout) in [("x", &disc_x, &config.layout_x), ("y", &disc_y, &config.layout_y)] {
            ensure!(
                discs.len() == layout.num_bands(),
                Shape,
                "domain {name}: {} discriminators for {} bands",
                discs.len(),
                layout.num_bands()
            );
            for (d, &w) in discs.iter().zip(&layout.widths) {
                ensure!(
                    d.input_bins() == w && d.input_frames() == config.frames,
                    Shape,
                    "domain {name}: discriminator sized ({}, {}) for band ({w}, {})",
                    d.input_bins(),
                    d.input_frames(),
                    config.frames
                );
            }
        }
        Ok(ModelBundle {
            config,
            gen_xy,
            gen_yx,
            disc_x,
            disc_y,
        })
    }

    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        ModelBundle {
            config: self.config.clone(),
            gen_xy: self.gen_xy.iter().map(Generator::cast).collect(),
            gen_yx: self.gen_yx.iter().map(Generator::cast).collect(),
            disc_x: self.disc_x.iter().map(Discriminator::cast).collect(),
            disc_y: self.disc_y.iter().map(Discriminator::cast).collect(),
        }
    }

    pub fn generators(&self, dir: Direction) -> &[Generator<T>] {
        match dir {
            Direction::XToY => &self.gen_xy,
            Direction::YToX => &self.gen_yx,
        }
    }

    /// Discriminators judging the output of `dir`.
    pub fn target_discriminators(&self, dir: Direction) -> &[Discriminator<T>] {
        match dir {
            Direction::XToY => &self.disc_y,
            Direction::YToX => &self.disc_x,
        }
    }

    /// Maps a normalized batch through the generator(s) of `dir`, stitching
    /// per-band outputs in multi-generator modes.
    pub fn translate(&self, dir: Direction, x: &Array4<T>) -> Result<Array4<T>> {
        let outs = self
            .generators(dir)
            .iter()
            .map(|g| g.forward(x, None))
            .collect::<Result<Vec<_>>>()?;
        assemble(self.config.assembly_layout(dir), outs)
    }

    pub fn all_generators(&self) -> impl Iterator<Item = &Generator<T>> {
        self.gen_xy.iter().chain(&self.gen_yx)
    }

    pub fn all_discriminators(&self) -> impl Iterator<Item = &Discriminator<T>> {
        self.disc_x.iter().chain(&self.disc_y)
    }

    pub fn generator_params(&self) -> Vec<&Param<T>> {
        self.all_generators().flat_map(|g| g.params.iter()).collect()
    }

    pub fn discriminator_params(&self) -> Vec<&Param<T>> {
        self.all_discriminators().flat_map(|d| d.params.iter()).collect()
    }

    pub fn generator_params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.gen_xy
            .iter_mut()
            .chain(self.gen_yx.iter_mut())
            .flat_map(|g| g.params.iter_mut())
            .collect()
    }

    pub fn discriminator_params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.disc_x
            .iter_mut()
            .chain(self.disc_y.iter_mut())
            .flat_map(|d| d.params.iter_mut())
            .collect()
    }
}

/// Stitches per-generator full outputs: generator `b` contributes band `b`.
pub fn assemble<T: Scalar>(layout: Option<&BandLayout>, mut outs: Vec<Array4<T>>) -> Result<Array4<T>> {
    match layout {
        None => {
            ensure!(outs.len() == 1, Shape, "single mode expects one generator output");
            Ok(outs.pop().expect("one output"))
        }
        Some(layout) => {
            ensure!(outs.len() == layout.num_bands(), Shape, "one generator per band expected");
            let parts: Vec<_> = outs
                .iter()
                .enumerate()
                .map(|(b, o)| o.slice(s![.., .., layout.range(b), ..]).to_owned())
                .collect();
            layout.concat_batch(&parts)
        }
    }
}
