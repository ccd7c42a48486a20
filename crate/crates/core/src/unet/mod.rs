//! The segmentation network: optional FFT input block, `depth` contracting
//! blocks, a bottleneck, `depth` expanding blocks and a 1x1 sigmoid head.
//!
//! Blocks are numbered c1..c(2*depth+1) in data-flow order; with the default
//! depth of 4 that is c1-c4 contracting, c5 bottleneck and c6-c9 expanding.
//! All 3x3 convolutions are zero-padded "same", so skip connections are
//! concatenated without cropping.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load, save, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::grid::Grid4;
use crate::layers::{
    concat_channels, conv2d_backward, conv2d_forward, dropout, dropout_backward, elu, elu_backward, fft_input_block,
    fft_input_block_backward, maxpool2x2, maxpool2x2_backward, sigmoid, sigmoid_backward, split_channels, upconv2x2,
    upconv2x2_backward, ConvParams, ConvTape, DropoutTape, FftBlockTape, Padding, PoolTape, UpconvTape,
};
use crate::rng::{stream, Rng};
use crate::scalar::Scalar;

/// Probability threshold used to binarize predicted masks.
pub const MASK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    /// Square input side; a power of two divisible by `2^depth`.
    pub input_size: usize,
    pub base_channels: usize,
    pub depth: usize,
    /// One rate per block, c1 first; `2 * depth + 1` entries.
    pub dropout_schedule: Vec<f64>,
    pub use_fft_input: bool,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self::new(64, 16, 4, true, 42)
    }
}

impl UNetConfig {
    pub fn new(input_size: usize, base_channels: usize, depth: usize, use_fft_input: bool, seed: u64) -> Self {
        Self {
            input_size,
            base_channels,
            depth,
            dropout_schedule: Self::default_dropout(depth),
            use_fft_input,
            seed,
        }
    }

    /// 0.1 for the two outermost blocks on each side, 0.2 for the rest. For
    /// depth 4 this is c1, c2, c8, c9 at 0.1 and c3-c7 at 0.2.
    pub fn default_dropout(depth: usize) -> Vec<f64> {
        let blocks = 2 * depth + 1;
        (0..blocks).map(|i| if i < 2 || i + 2 >= blocks { 0.1 } else { 0.2 }).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(Error::InvalidArgument("depth and base_channels must be >= 1".into()));
        }
        let factor = 1usize << self.depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "input size {} is not divisible by 2^depth = {factor}",
                self.input_size
            )));
        }
        if self.use_fft_input && !self.input_size.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "FFT input block needs a power-of-two input size, got {}",
                self.input_size
            )));
        }
        if self.dropout_schedule.len() != 2 * self.depth + 1 {
            return Err(Error::InvalidArgument(format!(
                "dropout schedule has {} entries, depth {} needs {}",
                self.dropout_schedule.len(),
                self.depth,
                2 * self.depth + 1
            )));
        }
        if let Some(r) = self.dropout_schedule.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::InvalidArgument(format!("dropout rate {r} outside [0, 1)")));
        }
        Ok(())
    }

    /// Channel width of every contracting level, then the bottleneck width.
    pub fn channel_widths(&self) -> Vec<usize> {
        (0..=self.depth).map(|l| self.base_channels << l).collect()
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| k * k * cin * cout + cout;
        let widths = self.channel_widths();
        let mut total = if self.use_fft_input { conv(2, 2, 3) } else { 0 };
        for l in 0..self.depth {
            let cin = if l == 0 { 1 } else { widths[l - 1] };
            total += conv(cin, widths[l], 3) + conv(widths[l], widths[l], 3);
        }
        let c = widths[self.depth];
        total += conv(widths[self.depth - 1], c, 3) + conv(c, c, 3) + conv(c, c, 2);
        for l in 0..self.depth {
            total += conv(widths[l + 1], widths[l], 2) + conv(2 * widths[l], widths[l], 3) + conv(widths[l], widths[l], 3);
        }
        total + conv(self.base_channels, 1, 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedConv<T> {
    pub name: String,
    pub params: ConvParams<T>,
}

/// Indices into the conv list for each block.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    fft: Option<usize>,
    down: Vec<[usize; 2]>,
    bottleneck: [usize; 3],
    /// `[upconv, conv1, conv2]`, deepest level first.
    up: Vec<[usize; 3]>,
    head: usize,
}

#[derive(Debug, Clone)]
struct Unit<T> {
    conv: ConvTape<T>,
    pre: Grid4<T>,
}

#[derive(Debug, Clone)]
struct DownTape<T> {
    a: Unit<T>,
    b: Unit<T>,
    drop: DropoutTape<T>,
    pool: PoolTape,
}

#[derive(Debug, Clone)]
struct MidTape<T> {
    a: Unit<T>,
    b: Unit<T>,
    drop: DropoutTape<T>,
    c: Unit<T>,
}

#[derive(Debug, Clone)]
struct UpTape<T> {
    up: UpconvTape<T>,
    up_channels: usize,
    a: Unit<T>,
    b: Unit<T>,
    drop: DropoutTape<T>,
}

#[derive(Debug, Clone)]
struct ModelTape<T> {
    fft: Option<FftBlockTape<T>>,
    down: Vec<DownTape<T>>,
    mid: MidTape<T>,
    up: Vec<UpTape<T>>,
    head: ConvTape<T>,
    out: Grid4<T>,
}

/// Gradients in registry order: per conv, weights then bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }
}

/// One registry entry: parameter name and shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct UNetModel<T> {
    config: UNetConfig,
    convs: Vec<NamedConv<T>>,
    layout: Layout,
    tape: Option<ModelTape<T>>,
    /// Generator state recorded by the trainer; persisted in checkpoints.
    pub rng_state: u64,
}

impl<T: Scalar> PartialEq for UNetModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.convs == other.convs && self.rng_state == other.rng_state
    }
}

/// Builds a model with He-initialized weights drawn from `rng`.
pub fn build<T: Scalar>(config: UNetConfig, rng: &mut Rng) -> Result<UNetModel<T>> {
    config.validate()?;
    let widths = config.channel_widths();
    let depth = config.depth;
    let mut convs: Vec<NamedConv<T>> = Vec::new();
    let mut add = |name: String, cout: usize, cin: usize, k: usize, rng: &mut Rng| -> Result<usize> {
        convs.push(NamedConv { name, params: ConvParams::he_normal(cout, cin, k, k, rng)? });
        Ok(convs.len() - 1)
    };

    let fft = if config.use_fft_input { Some(add("fft.conv".into(), 2, 2, 3, rng)?) } else { None };
    let mut down = Vec::with_capacity(depth);
    for l in 0..depth {
        let cin = if l == 0 { 1 } else { widths[l - 1] };
        let block = l + 1;
        down.push([
            add(format!("c{block}.conv1"), widths[l], cin, 3, rng)?,
            add(format!("c{block}.conv2"), widths[l], widths[l], 3, rng)?,
        ]);
    }
    let c = widths[depth];
    let mid = depth + 1;
    let bottleneck = [
        add(format!("c{mid}.conv1"), c, widths[depth - 1], 3, rng)?,
        add(format!("c{mid}.conv2"), c, c, 3, rng)?,
        add(format!("c{mid}.conv3"), c, c, 2, rng)?,
    ];
    let mut up = Vec::with_capacity(depth);
    for (i, l) in (0..depth).rev().enumerate() {
        let block = depth + 2 + i;
        up.push([
            add(format!("c{block}.up"), widths[l], widths[l + 1], 2, rng)?,
            add(format!("c{block}.conv1"), widths[l], 2 * widths[l], 3, rng)?,
            add(format!("c{block}.conv2"), widths[l], widths[l], 3, rng)?,
        ]);
    }
    let head = add("head.conv".into(), 1, config.base_channels, 1, rng)?;

    let model = UNetModel { config, convs, layout: Layout { fft, down, bottleneck, up, head }, tape: None, rng_state: 0 };
    debug_assert_eq!(model.parameter_count(), model.config.parameter_count());
    Ok(model)
}

fn conv_elu<T: Scalar>(x: &Grid4<T>, p: &ConvParams<T>, padding: Padding) -> Result<(Grid4<T>, Unit<T>)> {
    let (pre, conv) = conv2d_forward(x, p, padding)?;
    Ok((elu(&pre), Unit { conv, pre }))
}

fn conv_elu_backward<T: Scalar>(
    unit: &Unit<T>,
    p: &ConvParams<T>,
    grad: &Grid4<T>,
    grads: &mut [Option<(Grid4<T>, Vec<T>)>],
    index: usize,
) -> Result<Grid4<T>> {
    let g = elu_backward(&unit.pre, grad)?;
    let cg = conv2d_backward(&unit.conv, p, &g)?;
    grads[index] = Some((cg.grad_w, cg.grad_b));
    Ok(cg.grad_x)
}

impl<T: Scalar> UNetModel<T> {
    /// Builds from `config.seed` through the dedicated init stream.
    pub fn new(config: UNetConfig) -> Result<Self> {
        let mut rng = Rng::derive(config.seed, stream::INIT);
        build(config, &mut rng)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn convs(&self) -> &[NamedConv<T>] {
        &self.convs
    }

    pub fn convs_mut(&mut self) -> &mut [NamedConv<T>] {
        &mut self.convs
    }

    pub fn parameter_count(&self) -> usize {
        self.convs.iter().map(|c| c.params.param_count()).sum()
    }

    /// Names and shapes in registry order.
    pub fn manifest(&self) -> Vec<ParamInfo> {
        self.convs
            .iter()
            .flat_map(|c| {
                let (o, i, kh, kw) = c.params.weights.shape();
                [
                    ParamInfo { name: format!("{}.weight", c.name), shape: vec![o, i, kh, kw] },
                    ParamInfo { name: format!("{}.bias", c.name), shape: vec![o] },
                ]
            })
            .collect()
    }

    /// Parameter tensors in registry order.
    pub fn params(&self) -> Vec<&[T]> {
        self.convs.iter().flat_map(|c| [c.params.weights.data(), c.params.bias.as_slice()]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.convs
            .iter_mut()
            .flat_map(|c| {
                let ConvParams { weights, bias } = &mut c.params;
                [weights.data_mut(), bias.as_mut_slice()]
            })
            .collect()
    }

    /// Spatial block widths actually built, c1 first, bottleneck last.
    pub fn block_widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layout.down.iter().map(|d| self.convs[d[0]].params.out_channels()).collect();
        w.push(self.convs[self.layout.bottleneck[0]].params.out_channels());
        w
    }

    fn check_input(&self, x: &Grid4<T>) -> Result<()> {
        let s = self.config.input_size;
        let (_, c, h, w) = x.shape();
        if (c, h, w) != (1, s, s) {
            return Err(Error::ShapeMismatch(format!("model expects (b, 1, {s}, {s}), got {:?}", x.shape())));
        }
        Ok(())
    }

    fn run(&self, x: &Grid4<T>, training: bool, rng: &mut Rng) -> Result<(Grid4<T>, ModelTape<T>)> {
        self.check_input(x)?;
        let p = |i: usize| &self.convs[i].params;
        let rates = &self.config.dropout_schedule;
        let depth = self.config.depth;

        let (mut h, fft) = match self.layout.fft {
            Some(i) => {
                let (y, tape) = fft_input_block(x, p(i))?;
                (y, Some(tape))
            }
            None => (x.clone(), None),
        };

        let mut skips = Vec::with_capacity(depth);
        let mut down = Vec::with_capacity(depth);
        for (l, idx) in self.layout.down.iter().enumerate() {
            let (y, a) = conv_elu(&h, p(idx[0]), Padding::Same)?;
            let (y, b) = conv_elu(&y, p(idx[1]), Padding::Same)?;
            let (y, drop) = dropout(&y, rates[l], rng, training)?;
            let (pooled, pool) = maxpool2x2(&y)?;
            skips.push(y);
            down.push(DownTape { a, b, drop, pool });
            h = pooled;
        }

        let [m0, m1, m2] = self.layout.bottleneck;
        let (y, a) = conv_elu(&h, p(m0), Padding::Same)?;
        let (y, b) = conv_elu(&y, p(m1), Padding::Same)?;
        let (y, drop) = dropout(&y, rates[depth], rng, training)?;
        let (y, c) = conv_elu(&y, p(m2), Padding::Same)?;
        let mid = MidTape { a, b, drop, c };
        h = y;

        let mut up = Vec::with_capacity(depth);
        for (i, idx) in self.layout.up.iter().enumerate() {
            let skip = &skips[depth - 1 - i];
            let (u, up_tape) = upconv2x2(&h, p(idx[0]))?;
            let up_channels = u.channels();
            let cat = concat_channels(&u, skip)?;
            let (y, a) = conv_elu(&cat, p(idx[1]), Padding::Same)?;
            let (y, b) = conv_elu(&y, p(idx[2]), Padding::Same)?;
            let (y, drop) = dropout(&y, rates[depth + 1 + i], rng, training)?;
            up.push(UpTape { up: up_tape, up_channels, a, b, drop });
            h = y;
        }

        let (logits, head) = conv2d_forward(&h, p(self.layout.head), Padding::Same)?;
        let out = sigmoid(&logits);
        Ok((out.clone(), ModelTape { fft, down, mid, up, head, out }))
    }

    /// Forward pass. In training mode dropout draws from `rng` and the tape
    /// needed by [`UNetModel::backward`] is kept.
    pub fn forward(&mut self, x: &Grid4<T>, training: bool, rng: &mut Rng) -> Result<Grid4<T>> {
        let (out, tape) = self.run(x, training, rng)?;
        self.tape = if training { Some(tape) } else { None };
        Ok(out)
    }

    /// Inference-mode forward pass; never touches the model state.
    pub fn predict(&self, x: &Grid4<T>) -> Result<Grid4<T>> {
        // Dropout is identity in inference, so the generator is never drawn from.
        let mut unused = Rng::new(0);
        Ok(self.run(x, false, &mut unused)?.0)
    }

    /// Gradients of every parameter given `d loss / d output`. Consumes the
    /// tape of the preceding training-mode forward pass.
    pub fn backward(&mut self, grad_out: &Grid4<T>) -> Result<ParamGrads<T>> {
        let tape = self.tape.take().ok_or(Error::MissingTape)?;
        if grad_out.shape() != tape.out.shape() {
            return Err(Error::ShapeMismatch(format!(
                "grad_out {:?} vs output {:?}",
                grad_out.shape(),
                tape.out.shape()
            )));
        }
        let p = |i: usize| &self.convs[i].params;
        let depth = self.config.depth;
        let mut grads: Vec<Option<(Grid4<T>, Vec<T>)>> = vec![None; self.convs.len()];

        let g = sigmoid_backward(&tape.out, grad_out)?;
        let hg = conv2d_backward(&tape.head, p(self.layout.head), &g)?;
        grads[self.layout.head] = Some((hg.grad_w, hg.grad_b));
        let mut g = hg.grad_x;

        let mut skip_grads: Vec<Option<Grid4<T>>> = vec![None; depth];
        for (i, (idx, t)) in self.layout.up.iter().zip(&tape.up).enumerate().rev() {
            let _ = i;
            g = dropout_backward(&t.drop, &g)?;
            g = conv_elu_backward(&t.b, p(idx[2]), &g, &mut grads, idx[2])?;
            g = conv_elu_backward(&t.a, p(idx[1]), &g, &mut grads, idx[1])?;
            let (g_up, g_skip) = split_channels(&g, t.up_channels)?;
            skip_grads[depth - 1 - i] = Some(g_skip);
            let ug = upconv2x2_backward(&t.up, p(idx[0]), &g_up)?;
            grads[idx[0]] = Some((ug.grad_w, ug.grad_b));
            g = ug.grad_x;
        }

        let [m0, m1, m2] = self.layout.bottleneck;
        g = conv_elu_backward(&tape.mid.c, p(m2), &g, &mut grads, m2)?;
        g = dropout_backward(&tape.mid.drop, &g)?;
        g = conv_elu_backward(&tape.mid.b, p(m1), &g, &mut grads, m1)?;
        g = conv_elu_backward(&tape.mid.a, p(m0), &g, &mut grads, m0)?;

        for (l, (idx, t)) in self.layout.down.iter().zip(&tape.down).enumerate().rev() {
            let mut gy = maxpool2x2_backward(&t.pool, &g)?;
            if let Some(gs) = &skip_grads[l] {
                for (a, &b) in gy.data_mut().iter_mut().zip(gs.data()) {
                    *a += b;
                }
            }
            g = dropout_backward(&t.drop, &gy)?;
            g = conv_elu_backward(&t.b, p(idx[1]), &g, &mut grads, idx[1])?;
            g = conv_elu_backward(&t.a, p(idx[0]), &g, &mut grads, idx[0])?;
        }

        if let (Some(i), Some(ft)) = (self.layout.fft, &tape.fft) {
            let fg = fft_input_block_backward(ft, p(i), &g)?;
            grads[i] = Some((fg.grad_w, fg.grad_b));
        }

        let mut tensors = Vec::with_capacity(2 * grads.len());
        for (i, g) in grads.into_iter().enumerate() {
            let (w, b) = g.ok_or_else(|| Error::InvalidArgument(format!("no gradient for {}", self.convs[i].name)))?;
            tensors.push(w.into_vec());
            tensors.push(b);
        }
        Ok(ParamGrads { tensors })
    }

    /// Converts parameters to another scalar type (e.g. an `f64` copy for
    /// gradient checking).
    pub fn cast<U: Scalar>(&self) -> UNetModel<U> {
        UNetModel {
            config: self.config.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| NamedConv {
                    name: c.name.clone(),
                    params: ConvParams {
                        weights: c.params.weights.cast(),
                        bias: c.params.bias.iter().map(|v| U::lit(v.to_f64().unwrap())).collect(),
                    },
                })
                .collect(),
            layout: self.layout.clone(),
            tape: None,
            rng_state: self.rng_state,
        }
    }
}
