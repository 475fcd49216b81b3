use std::fmt;
use std::str::FromStr;

use crate::dataset::{Dims, Image};
use crate::rng::{tags, SeededRng};
use crate::{Error, Result};

/// Activation shape of one sample, channel-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub const fn flat(n: usize) -> Self {
        Self { c: n, h: 1, w: 1 }
    }

    pub const fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// 3×3 convolution, zero padding 1.
    Conv3x3 {
        out_c: usize,
        stride: usize,
    },
    /// Fully connected over the flattened input.
    Dense {
        outputs: usize,
    },
    Relu,
    GlobalAvgPool,
}

/// Named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Architecture presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    /// Softmax regression on pixels.
    Linear,
    Mlp {
        hidden: usize,
    },
    /// Low-capacity student: one strided conv and a dense head.
    StudentS,
    /// Teacher: three convs and a dense head.
    TeacherL,
    /// One conv, global average pooling and a dense head.
    ConvPool,
}

impl Arch {
    pub fn layers(self, num_classes: usize) -> Vec<LayerKind> {
        use LayerKind::*;
        match self {
            Arch::Linear => vec![Dense { outputs: num_classes }],
            Arch::Mlp { hidden } => vec![Dense { outputs: hidden }, Relu, Dense { outputs: num_classes }],
            Arch::StudentS => vec![Conv3x3 { out_c: 8, stride: 2 }, Relu, Dense { outputs: num_classes }],
            Arch::TeacherL => vec![
                Conv3x3 { out_c: 8, stride: 1 },
                Relu,
                Conv3x3 { out_c: 16, stride: 2 },
                Relu,
                Conv3x3 { out_c: 32, stride: 2 },
                Relu,
                Dense { outputs: num_classes },
            ],
            Arch::ConvPool => {
                vec![Conv3x3 { out_c: 16, stride: 1 }, Relu, GlobalAvgPool, Dense { outputs: num_classes }]
            }
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Linear => f.write_str("linear"),
            Arch::Mlp { hidden } => write!(f, "mlp{hidden}"),
            Arch::StudentS => f.write_str("student-s"),
            Arch::TeacherL => f.write_str("teacher-l"),
            Arch::ConvPool => f.write_str("conv-pool"),
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(Arch::Linear),
            "student-s" => Ok(Arch::StudentS),
            "teacher-l" => Ok(Arch::TeacherL),
            "conv-pool" => Ok(Arch::ConvPool),
            other => other
                .strip_prefix("mlp")
                .and_then(|h| h.parse().ok())
                .filter(|&h: &usize| h > 0)
                .map(|hidden| Arch::Mlp { hidden })
                .ok_or_else(|| Error::invalid(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Converts images (HWC u8) to the model's CHW f32 input, scaled to roughly
/// unit range.
pub fn images_to_input(images: &[Image]) -> Vec<f32> {
    let mut out = Vec::with_capacity(images.iter().map(|i| i.data().len()).sum());
    for img in images {
        let Dims { height, width, channels } = img.dims();
        let data = img.data();
        for c in 0..channels {
            for p in 0..height * width {
                out.push((data[p * channels + c] as f32 - 128.0) / 64.0);
            }
        }
    }
    out
}

/// Cached activations of one forward pass: `acts[i]` is the input of layer
/// `i`, the last entry holds the logits.
#[derive(Clone, Debug)]
pub struct Forward {
    pub batch: usize,
    pub acts: Vec<Vec<f32>>,
}

impl Forward {
    pub fn logits(&self) -> &[f32] {
        self.acts.last().expect("at least the input")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Arch,
    input: Dims,
    num_classes: usize,
    layers: Vec<LayerKind>,
    shapes: Vec<Shape>,
    /// For each layer, the index of its weight tensor in `params` (bias
    /// follows).
    slots: Vec<Option<usize>>,
    params: Vec<Tensor>,
}

impl Model {
    /// Builds `arch` with He-uniform weights drawn from `seed`.
    pub fn new(arch: Arch, input: Dims, num_classes: usize, seed: u64) -> Result<Self> {
        input.validate()?;
        if num_classes < 2 {
            return Err(Error::invalid("a classifier needs at least 2 classes"));
        }
        let layers = arch.layers(num_classes);
        let mut shapes = vec![Shape::new(input.channels, input.height, input.width)];
        let mut slots = Vec::with_capacity(layers.len());
        let mut params = Vec::new();
        let mut rng = SeededRng::derive(seed, &[tags::INIT]);
        for (i, layer) in layers.iter().enumerate() {
            let s = *shapes.last().unwrap();
            let (out, weight_shape, fan_in) = match *layer {
                LayerKind::Conv3x3 { out_c, stride } => {
                    let o = Shape::new(out_c, (s.h - 1) / stride + 1, (s.w - 1) / stride + 1);
                    (o, Some(vec![out_c, s.c, 3, 3]), s.c * 9)
                }
                LayerKind::Dense { outputs } => (Shape::flat(outputs), Some(vec![outputs, s.len()]), s.len()),
                LayerKind::Relu => (s, None, 0),
                LayerKind::GlobalAvgPool => (Shape::flat(s.c), None, 0),
            };
            if let Some(ws) = weight_shape {
                let bound = (6.0 / fan_in as f64).sqrt();
                let n: usize = ws.iter().product();
                let bias_len = ws[0];
                slots.push(Some(params.len()));
                params.push(Tensor {
                    name: format!("layer{i}.weight"),
                    shape: ws,
                    data: (0..n).map(|_| rng.uniform_range(-bound, bound) as f32).collect(),
                });
                params.push(Tensor {
                    name: format!("layer{i}.bias"),
                    shape: vec![bias_len],
                    data: vec![0.0; bias_len],
                });
            } else {
                slots.push(None);
            }
            shapes.push(out);
        }
        Ok(Self { arch, input, num_classes, layers, shapes, slots, params })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn input_dims(&self) -> Dims {
        self.input
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[LayerKind] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    /// Replaces parameters; shapes must match the architecture.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.shape != b.shape || a.data.len() != b.data.len())
        {
            return Err(Error::invalid("parameter shapes do not match the architecture"));
        }
        self.params = params;
        Ok(())
    }

    pub fn forward(&self, input: &[f32], batch: usize) -> Result<Forward> {
        let in_len = self.shapes[0].len();
        if input.len() != batch * in_len {
            return Err(Error::DimensionMismatch {
                expected: format!("{batch} × {in_len} inputs"),
                actual: input.len().to_string(),
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = acts.last().unwrap();
            let (s_in, s_out) = (self.shapes[i], self.shapes[i + 1]);
            let y = match *layer {
                LayerKind::Conv3x3 { stride, .. } => {
                    let w = self.weight(i);
                    conv_forward(x, batch, s_in, s_out, stride, &w.0.data, &w.1.data)
                }
                LayerKind::Dense { outputs } => {
                    let w = self.weight(i);
                    dense_forward(x, batch, s_in.len(), outputs, &w.0.data, &w.1.data)
                }
                LayerKind::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
                LayerKind::GlobalAvgPool => {
                    let hw = s_in.h * s_in.w;
                    x.chunks(hw).map(|p| p.iter().sum::<f32>() / hw as f32).collect()
                }
            };
            acts.push(y);
        }
        Ok(Forward { batch, acts })
    }

    /// Class probabilities for `images` (resized by the caller).
    pub fn predict_proba(&self, images: &[Image]) -> Result<Vec<f32>> {
        if let Some(img) = images.iter().find(|im| im.dims() != self.input) {
            return Err(Error::DimensionMismatch { expected: self.input.to_string(), actual: img.dims().to_string() });
        }
        let fwd = self.forward(&images_to_input(images), images.len())?;
        let mut probs = fwd.logits().to_vec();
        for row in probs.chunks_mut(self.num_classes) {
            super::loss::softmax_in_place(row);
        }
        Ok(probs)
    }

    /// Gradients of the loss with respect to every parameter, given the
    /// gradient with respect to the logits.
    pub fn backward(&self, fwd: &Forward, grad_logits: &[f32]) -> Vec<Vec<f32>> {
        let batch = fwd.batch;
        let mut grads: Vec<Vec<f32>> = self.params.iter().map(|t| vec![0.0; t.data.len()]).collect();
        let mut g = grad_logits.to_vec();
        for i in (0..self.layers.len()).rev() {
            let x = &fwd.acts[i];
            let (s_in, s_out) = (self.shapes[i], self.shapes[i + 1]);
            let need_input_grad = i > 0;
            g = match self.layers[i] {
                LayerKind::Conv3x3 { stride, .. } => {
                    let slot = self.slots[i].unwrap();
                    let (gw, rest) = grads[slot..].split_at_mut(1);
                    conv_backward(
                        x,
                        &g,
                        batch,
                        s_in,
                        s_out,
                        stride,
                        &self.params[slot].data,
                        &mut gw[0],
                        &mut rest[0],
                        need_input_grad,
                    )
                }
                LayerKind::Dense { outputs } => {
                    let slot = self.slots[i].unwrap();
                    let (gw, rest) = grads[slot..].split_at_mut(1);
                    dense_backward(
                        x,
                        &g,
                        batch,
                        s_in.len(),
                        outputs,
                        &self.params[slot].data,
                        &mut gw[0],
                        &mut rest[0],
                        need_input_grad,
                    )
                }
                LayerKind::Relu => g.iter().zip(x).map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 }).collect(),
                LayerKind::GlobalAvgPool => {
                    let hw = s_in.h * s_in.w;
                    let mut gi = Vec::with_capacity(x.len());
                    for &gv in &g {
                        gi.extend(std::iter::repeat_n(gv / hw as f32, hw));
                    }
                    gi
                }
            };
        }
        grads
    }

    fn weight(&self, layer: usize) -> (&Tensor, &Tensor) {
        let s = self.slots[layer].expect("parametrised layer");
        (&self.params[s], &self.params[s + 1])
    }

    /// Multiply-accumulate count of one forward pass for one sample.
    pub fn forward_macs(&self) -> usize {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| match *l {
                LayerKind::Conv3x3 { .. } => self.shapes[i + 1].len() * self.shapes[i].c * 9,
                LayerKind::Dense { outputs } => outputs * self.shapes[i].len(),
                _ => 0,
            })
            .sum()
    }
}

/// Valid output range along one axis for kernel offset `k` (0..3): outputs
/// `o` with `0 ≤ o·stride + k − 1 < n_in`.
#[inline]
fn out_range(k: usize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let lo = if k == 0 { 1usize.div_ceil(stride) } else { 0 };
    // o·stride + k − 1 ≤ n_in − 1  ⇔  o ≤ (n_in − k) / stride
    let hi = if n_in + 1 > k { ((n_in - k) / stride + 1).min(n_out) } else { 0 };
    (lo, hi.max(lo))
}

/// Eight-lane dot product; the split accumulators let the compiler vectorise.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f32>() + tail
}

#[inline]
fn axpy(y: &mut [f32], a: f32, x: &[f32]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Patch matrix `[ic·9][n·ohw]` of a padded 3×3 convolution over the batch.
fn im2col(x: &[f32], batch: usize, si: Shape, so: Shape, stride: usize) -> Vec<f32> {
    let (ihw, ohw) = (si.h * si.w, so.h * so.w);
    let cols_len = batch * ohw;
    let mut cols = vec![0f32; si.c * 9 * cols_len];
    for ic in 0..si.c {
        for ky in 0..3 {
            let (oy0, oy1) = out_range(ky, stride, si.h, so.h);
            for kx in 0..3 {
                let (ox0, ox1) = out_range(kx, stride, si.w, so.w);
                let row = &mut cols[((ic * 3 + ky) * 3 + kx) * cols_len..][..cols_len];
                for n in 0..batch {
                    let xp = &x[n * si.len() + ic * ihw..][..ihw];
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - 1;
                        let dst = &mut row[n * ohw + oy * so.w..][..so.w];
                        for ox in ox0..ox1 {
                            dst[ox] = xp[iy * si.w + ox * stride + kx - 1];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adds the patch-matrix gradient back onto image layout.
fn col2im(dcols: &[f32], gx: &mut [f32], batch: usize, si: Shape, so: Shape, stride: usize) {
    let (ihw, ohw) = (si.h * si.w, so.h * so.w);
    let cols_len = batch * ohw;
    for ic in 0..si.c {
        for ky in 0..3 {
            let (oy0, oy1) = out_range(ky, stride, si.h, so.h);
            for kx in 0..3 {
                let (ox0, ox1) = out_range(kx, stride, si.w, so.w);
                let row = &dcols[((ic * 3 + ky) * 3 + kx) * cols_len..][..cols_len];
                for n in 0..batch {
                    let gp = &mut gx[n * si.len() + ic * ihw..][..ihw];
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - 1;
                        let src = &row[n * ohw + oy * so.w..][..so.w];
                        for ox in ox0..ox1 {
                            gp[iy * si.w + ox * stride + kx - 1] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &[f32], batch: usize, si: Shape, so: Shape, stride: usize, w: &[f32], b: &[f32]) -> Vec<f32> {
    let ohw = so.h * so.w;
    let cols_len = batch * ohw;
    let kk = si.c * 9;
    let cols = im2col(x, batch, si, so, stride);
    let mut yt = vec![0f32; so.c * cols_len];
    for oc in 0..so.c {
        let row = &mut yt[oc * cols_len..][..cols_len];
        row.fill(b[oc]);
        for k in 0..kk {
            axpy(row, w[oc * kk + k], &cols[k * cols_len..][..cols_len]);
        }
    }
    let mut y = vec![0f32; batch * so.len()];
    for n in 0..batch {
        for oc in 0..so.c {
            y[n * so.len() + oc * ohw..][..ohw].copy_from_slice(&yt[oc * cols_len + n * ohw..][..ohw]);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f32],
    g: &[f32],
    batch: usize,
    si: Shape,
    so: Shape,
    stride: usize,
    w: &[f32],
    gw: &mut [f32],
    gb: &mut [f32],
    need_input_grad: bool,
) -> Vec<f32> {
    let ohw = so.h * so.w;
    let cols_len = batch * ohw;
    let kk = si.c * 9;
    let cols = im2col(x, batch, si, so, stride);
    let mut gt = vec![0f32; so.c * cols_len];
    for n in 0..batch {
        for oc in 0..so.c {
            gt[oc * cols_len + n * ohw..][..ohw].copy_from_slice(&g[n * so.len() + oc * ohw..][..ohw]);
        }
    }
    for oc in 0..so.c {
        let grow = &gt[oc * cols_len..][..cols_len];
        gb[oc] += grow.iter().sum::<f32>();
        for k in 0..kk {
            gw[oc * kk + k] += dot(grow, &cols[k * cols_len..][..cols_len]);
        }
    }
    if !need_input_grad {
        return Vec::new();
    }
    let mut dcols = cols;
    dcols.fill(0.0);
    for k in 0..kk {
        let drow = &mut dcols[k * cols_len..][..cols_len];
        for oc in 0..so.c {
            axpy(drow, w[oc * kk + k], &gt[oc * cols_len..][..cols_len]);
        }
    }
    let mut gx = vec![0f32; x.len()];
    col2im(&dcols, &mut gx, batch, si, so, stride);
    gx
}

fn dense_forward(x: &[f32], batch: usize, inputs: usize, outputs: usize, w: &[f32], b: &[f32]) -> Vec<f32> {
    let mut y = Vec::with_capacity(batch * outputs);
    for n in 0..batch {
        let xr = &x[n * inputs..(n + 1) * inputs];
        for o in 0..outputs {
            let wr = &w[o * inputs..(o + 1) * inputs];
            y.push(b[o] + dot(wr, xr));
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    x: &[f32],
    g: &[f32],
    batch: usize,
    inputs: usize,
    outputs: usize,
    w: &[f32],
    gw: &mut [f32],
    gb: &mut [f32],
    need_input_grad: bool,
) -> Vec<f32> {
    let mut gx = if need_input_grad { vec![0f32; x.len()] } else { Vec::new() };
    for n in 0..batch {
        let xr = &x[n * inputs..(n + 1) * inputs];
        for o in 0..outputs {
            let gv = g[n * outputs + o];
            if gv == 0.0 {
                continue;
            }
            gb[o] += gv;
            let gwr = &mut gw[o * inputs..(o + 1) * inputs];
            for (a, &xv) in gwr.iter_mut().zip(xr) {
                *a += gv * xv;
            }
            if need_input_grad {
                let wr = &w[o * inputs..(o + 1) * inputs];
                for (a, &wv) in gx[n * inputs..(n + 1) * inputs].iter_mut().zip(wr) {
                    *a += gv * wv;
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_names_roundtrip() {
        for a in [Arch::Linear, Arch::Mlp { hidden: 32 }, Arch::StudentS, Arch::TeacherL, Arch::ConvPool] {
            assert_eq!(a.to_string().parse::<Arch>().unwrap(), a);
        }
        assert!("mlp0".parse::<Arch>().is_err());
        assert!("resnet".parse::<Arch>().is_err());
    }

    #[test]
    fn param_count_is_a_function_of_arch() {
        let d = Dims::new(16, 16, 1);
        let a = Model::new(Arch::StudentS, d, 10, 1).unwrap();
        let b = Model::new(Arch::StudentS, d, 10, 2).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        // conv 8·1·9 + 8, dense 10·(8·8·8) + 10
        assert_eq!(a.param_count(), 80 + 5130);
        assert_ne!(a.params(), b.params());
        let t = Model::new(Arch::TeacherL, d, 10, 1).unwrap();
        assert_eq!(t.param_count(), (72 + 8) + (16 * 72 + 16) + (32 * 144 + 32) + (10 * 512 + 10));
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut rng = SeededRng::new(4, 4);
        for stride in [1, 2] {
            let si = Shape::new(2, 5, 6);
            let so = Shape::new(3, (si.h - 1) / stride + 1, (si.w - 1) / stride + 1);
            let x: Vec<f32> = (0..2 * si.len()).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
            let w: Vec<f32> = (0..so.c * si.c * 9).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
            let b = vec![0.1, -0.2, 0.3];
            let y = conv_forward(&x, 2, si, so, stride, &w, &b);
            for n in 0..2 {
                for oc in 0..so.c {
                    for oy in 0..so.h {
                        for ox in 0..so.w {
                            let mut acc = b[oc] as f64;
                            for ic in 0..si.c {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iy = (oy * stride + ky) as i64 - 1;
                                        let ix = (ox * stride + kx) as i64 - 1;
                                        if iy < 0 || ix < 0 || iy >= si.h as i64 || ix >= si.w as i64 {
                                            continue;
                                        }
                                        acc += w[((oc * si.c + ic) * 3 + ky) * 3 + kx] as f64
                                            * x[n * si.len() + ic * si.h * si.w + iy as usize * si.w + ix as usize]
                                                as f64;
                                    }
                                }
                            }
                            let got = y[n * so.len() + oc * so.h * so.w + oy * so.w + ox] as f64;
                            assert!((got - acc).abs() < 1e-5, "stride {stride}: {got} vs {acc}");
                        }
                    }
                }
            }
        }
    }
}
