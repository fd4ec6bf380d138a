use super::shifted;
use super::Tensor;
use crate::error::{Error, Result};

const AXIS_NAMES: [&str; 3] = ["depth", "height", "width"];

/// Geometry of one 3D convolution layer.
///
/// For a transposed convolution, `in_channels`/`out_channels` refer to the
/// transposed op itself: it consumes `in_channels` and produces
/// `out_channels`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub in_channels: usize,
    pub out_channels: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Same kernel, stride and padding along every axis.
    pub fn cubic(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        Self {
            kernel: [kernel; 3],
            stride: [stride; 3],
            padding: [padding; 3],
            in_channels,
            out_channels,
            bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Shape("convolution channel counts must be positive".into()));
        }
        for axis in 0..3 {
            if self.kernel[axis] == 0 || self.stride[axis] == 0 {
                return Err(Error::Shape(format!(
                    "{} axis: kernel and stride must be positive",
                    AXIS_NAMES[axis]
                )));
            }
        }
        Ok(())
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// `floor((in + 2 pad - kernel) / stride) + 1` per axis.
    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for axis in 0..3 {
            let padded = input[axis] + 2 * self.padding[axis];
            if input[axis] == 0 || padded < self.kernel[axis] {
                return Err(Error::Shape(format!(
                    "{} axis: extent {} with padding {} is smaller than kernel {}",
                    AXIS_NAMES[axis], input[axis], self.padding[axis], self.kernel[axis]
                )));
            }
            out[axis] = (padded - self.kernel[axis]) / self.stride[axis] + 1;
        }
        Ok(out)
    }

    pub fn conv_weight_shape(&self) -> Vec<usize> {
        let [kd, kh, kw] = self.kernel;
        vec![self.out_channels, self.in_channels, kd, kh, kw]
    }

    pub fn transpose_weight_shape(&self) -> Vec<usize> {
        let [kd, kh, kw] = self.kernel;
        vec![self.in_channels, self.out_channels, kd, kh, kw]
    }

    /// The forward convolution whose adjoint this transposed layer computes.
    fn adjoint_geometry(&self) -> ConvSpec {
        ConvSpec {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            ..*self
        }
    }

    /// Checks that a transposed convolution from `input` can be forced to
    /// produce exactly `target`.
    pub fn check_transpose_target(&self, input: [usize; 3], target: [usize; 3]) -> Result<()> {
        let reached = self.output_extents(target)?;
        for axis in 0..3 {
            if reached[axis] != input[axis] {
                return Err(Error::Shape(format!(
                    "{} axis: target extent {} is not reachable from {} (a forward pass from {} gives {})",
                    AXIS_NAMES[axis], target[axis], input[axis], target[axis], reached[axis]
                )));
            }
        }
        Ok(())
    }
}

/// Splits a `[C, D, H, W]` or `[N, C, D, H, W]` shape into
/// `(batch, extents, batched)`.
pub(crate) fn split_volume_shape(
    shape: &[usize],
    channels: usize,
    op: &str,
) -> Result<(usize, [usize; 3], bool)> {
    let (n, rest, batched) = match shape.len() {
        4 => (1, shape, false),
        5 => (shape[0], &shape[1..], true),
        _ => {
            return Err(Error::Shape(format!(
                "{op}: expected a [C,D,H,W] or [N,C,D,H,W] input, got {shape:?}"
            )))
        }
    };
    if rest[0] != channels {
        return Err(Error::Shape(format!(
            "{op}: channel axis has extent {} but the layer expects {channels}",
            rest[0]
        )));
    }
    Ok((n, [rest[1], rest[2], rest[3]], batched))
}

fn volume_shape(n: usize, c: usize, ext: [usize; 3], batched: bool) -> Vec<usize> {
    if batched {
        vec![n, c, ext[0], ext[1], ext[2]]
    } else {
        vec![c, ext[0], ext[1], ext[2]]
    }
}

fn check_weight(weight: &Tensor, expected: Vec<usize>, op: &str) -> Result<()> {
    if weight.shape() != expected.as_slice() {
        return Err(Error::Shape(format!(
            "{op}: weight shape {:?}, expected {expected:?}",
            weight.shape()
        )));
    }
    Ok(())
}

fn check_bias(bias: Option<&Tensor>, spec: &ConvSpec, channels: usize, op: &str) -> Result<()> {
    match (bias, spec.bias) {
        (Some(b), true) if b.shape() == [channels] => Ok(()),
        (Some(b), true) => Err(Error::Shape(format!(
            "{op}: bias shape {:?}, expected [{channels}]",
            b.shape()
        ))),
        (None, false) => Ok(()),
        (Some(_), false) => Err(Error::Shape(format!("{op}: bias supplied to a bias-free layer"))),
        (None, true) => Err(Error::Shape(format!("{op}: layer declares a bias but none was supplied"))),
    }
}

/// Row-major `C = A·B + beta·C` where `A` is `m×k` and `B` is `k×n`. The
/// transpose flags say the operand is stored as its transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_trans { (1, k) } else { (n, 1) };
    // SAFETY: bounds asserted above; strides describe contiguous row-major
    // storage of the stated dimensions.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output positions `o` in `[lo, hi)` with `0 <= o*stride + offset < len`.
#[inline]
fn valid_range(out_len: usize, stride: usize, offset: isize, len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let room = len as isize - offset;
    let hi = if room <= 0 { 0 } else { (room + s - 1) / s };
    let hi = hi.min(out_len as isize).max(lo);
    (lo as usize, hi as usize)
}

/// Unfolds a `[C, D, H, W]` volume into a `[C·kd·kh·kw, D'·H'·W']` matrix.
fn im2col(x: &[f32], channels: usize, ext: [usize; 3], spec: &ConvSpec, out: [usize; 3], col: &mut [f32]) {
    let [d, h, w] = ext;
    let [od, oh, ow] = out;
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let p = od * oh * ow;
    col.fill(0.0);
    let mut row = 0;
    for c in 0..channels {
        let xc = &x[c * d * h * w..(c + 1) * d * h * w];
        for a in 0..kd {
            let off_d = a as isize - pd as isize;
            let (d_lo, d_hi) = valid_range(od, sd, off_d, d);
            for b in 0..kh {
                let off_h = b as isize - ph as isize;
                let (h_lo, h_hi) = valid_range(oh, sh, off_h, h);
                for e in 0..kw {
                    let off_w = e as isize - pw as isize;
                    let (w_lo, w_hi) = valid_range(ow, sw, off_w, w);
                    let dst = &mut col[row * p..(row + 1) * p];
                    for zo in d_lo..d_hi {
                        let zi = (zo * sd) as isize + off_d;
                        for yo in h_lo..h_hi {
                            let yi = (yo * sh) as isize + off_h;
                            let src_base = (zi as usize * h + yi as usize) * w;
                            let dst_base = (zo * oh + yo) * ow;
                            for xo in w_lo..w_hi {
                                let xi = ((xo * sw) as isize + off_w) as usize;
                                dst[dst_base + xo] = xc[src_base + xi];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into a `[C, D, H, W]`
/// volume.
fn col2im(col: &[f32], channels: usize, ext: [usize; 3], spec: &ConvSpec, out: [usize; 3], x: &mut [f32]) {
    let [d, h, w] = ext;
    let [od, oh, ow] = out;
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..channels {
        let xc = &mut x[c * d * h * w..(c + 1) * d * h * w];
        for a in 0..kd {
            let off_d = a as isize - pd as isize;
            let (d_lo, d_hi) = valid_range(od, sd, off_d, d);
            for b in 0..kh {
                let off_h = b as isize - ph as isize;
                let (h_lo, h_hi) = valid_range(oh, sh, off_h, h);
                for e in 0..kw {
                    let off_w = e as isize - pw as isize;
                    let (w_lo, w_hi) = valid_range(ow, sw, off_w, w);
                    let src = &col[row * p..(row + 1) * p];
                    for zo in d_lo..d_hi {
                        let zi = (zo * sd) as isize + off_d;
                        for yo in h_lo..h_hi {
                            let yi = (yo * sh) as isize + off_h;
                            let dst_base = (zi as usize * h + yi as usize) * w;
                            let src_base = (zo * oh + yo) * ow;
                            for xo in w_lo..w_hi {
                                let xi = ((xo * sw) as isize + off_w) as usize;
                                xc[dst_base + xi] += src[src_base + xo];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn add_channel_bias(out: &mut [f32], bias: &[f32], spatial: usize) {
    for (chunk, &b) in out.chunks_mut(spatial).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

fn channel_sums(grad: &[f32], channels: usize, spatial: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; channels];
    for (i, chunk) in grad.chunks(spatial).enumerate() {
        acc[i % channels] += chunk.iter().map(|&v| v as f64).sum::<f64>();
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// Zero-padded 3D cross-correlation of `input` (`[C_in,D,H,W]` or batched)
/// with `weight` (`[C_out, C_in, kd, kh, kw]`).
pub fn conv3d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    spec.validate()?;
    let (n, ext, batched) = split_volume_shape(input.shape(), spec.in_channels, "conv3d")?;
    check_weight(weight, spec.conv_weight_shape(), "conv3d")?;
    check_bias(bias, spec, spec.out_channels, "conv3d")?;
    let out_ext = spec.output_extents(ext)?;

    let p: usize = out_ext.iter().product();
    let in_stride = spec.in_channels * ext.iter().product::<usize>();
    let out_stride = spec.out_channels * p;
    let mut out = vec![0.0f32; n * out_stride];
    if spec.stride == [1, 1, 1] {
        let geom = shifted::Geometry::new(ext, out_ext, spec);
        for s in 0..n {
            let x = &input.data()[s * in_stride..(s + 1) * in_stride];
            let o = shifted::forward(&geom, x, weight.data(), spec);
            out[s * out_stride..(s + 1) * out_stride].copy_from_slice(&o);
        }
    } else {
        conv3d_unfolded(input.data(), weight.data(), spec, n, ext, out_ext, &mut out);
    }
    if let Some(b) = bias {
        add_channel_bias(&mut out, b.data(), p);
    }
    Tensor::new(volume_shape(n, spec.out_channels, out_ext, batched), out)
}

/// im2col + GEMM forward pass over `n` samples.
pub(crate) fn conv3d_unfolded(
    input: &[f32],
    weight: &[f32],
    spec: &ConvSpec,
    n: usize,
    ext: [usize; 3],
    out_ext: [usize; 3],
    out: &mut [f32],
) {
    let k = spec.in_channels * spec.kernel_volume();
    let p: usize = out_ext.iter().product();
    let in_stride = spec.in_channels * ext.iter().product::<usize>();
    let out_stride = spec.out_channels * p;
    let mut col = vec![0.0f32; k * p];
    for s in 0..n {
        let x = &input[s * in_stride..(s + 1) * in_stride];
        im2col(x, spec.in_channels, ext, spec, out_ext, &mut col);
        let o = &mut out[s * out_stride..(s + 1) * out_stride];
        gemm(spec.out_channels, k, p, weight, false, &col, false, o, 0.0);
    }
}

pub(crate) struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

pub(crate) fn conv3d_backward(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let (n, ext, _) = split_volume_shape(input.shape(), spec.in_channels, "conv3d backward")?;
    let out_ext = spec.output_extents(ext)?;
    let k = spec.in_channels * spec.kernel_volume();
    let p: usize = out_ext.iter().product();
    let in_stride = spec.in_channels * ext.iter().product::<usize>();
    let out_stride = spec.out_channels * p;

    let mut gw = vec![0.0f32; spec.out_channels * k];
    let mut gx = if need_input { vec![0.0f32; input.numel()] } else { Vec::new() };
    if spec.stride == [1, 1, 1] {
        let geom = shifted::Geometry::new(ext, out_ext, spec);
        for s in 0..n {
            let x = &input.data()[s * in_stride..(s + 1) * in_stride];
            let go = &grad_out.data()[s * out_stride..(s + 1) * out_stride];
            if let Some(g) = shifted::backward(&geom, x, weight.data(), spec, go, &mut gw, need_input) {
                gx[s * in_stride..(s + 1) * in_stride].copy_from_slice(&g);
            }
        }
        return finish_grads(input, weight, spec, grad_out, p, gw, gx, need_input);
    }
    let mut col = vec![0.0f32; k * p];
    let mut gcol = if need_input { vec![0.0f32; k * p] } else { Vec::new() };
    for s in 0..n {
        let x = &input.data()[s * in_stride..(s + 1) * in_stride];
        let go = &grad_out.data()[s * out_stride..(s + 1) * out_stride];
        im2col(x, spec.in_channels, ext, spec, out_ext, &mut col);
        gemm(spec.out_channels, p, k, go, false, &col, true, &mut gw, 1.0);
        if need_input {
            gemm(k, spec.out_channels, p, weight.data(), true, go, false, &mut gcol, 0.0);
            col2im(&gcol, spec.in_channels, ext, spec, out_ext, &mut gx[s * in_stride..(s + 1) * in_stride]);
        }
    }
    finish_grads(input, weight, spec, grad_out, p, gw, gx, need_input)
}

#[allow(clippy::too_many_arguments)]
fn finish_grads(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    spatial: usize,
    gw: Vec<f32>,
    gx: Vec<f32>,
    need_input: bool,
) -> Result<ConvGrads> {
    Ok(ConvGrads {
        input: if need_input { Some(Tensor::new(input.shape().to_vec(), gx)?) } else { None },
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: spec
            .bias
            .then(|| Tensor::vector(channel_sums(grad_out.data(), spec.out_channels, spatial))),
    })
}

/// Transposed 3D convolution (the adjoint of [`conv3d`] with respect to its
/// input) with the output extents forced to `target`.
///
/// `weight` has shape `[C_in, C_out, kd, kh, kw]`.
pub fn conv3d_transpose(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
    target: [usize; 3],
) -> Result<Tensor> {
    spec.validate()?;
    let (n, ext, batched) = split_volume_shape(input.shape(), spec.in_channels, "conv3d_transpose")?;
    check_weight(weight, spec.transpose_weight_shape(), "conv3d_transpose")?;
    check_bias(bias, spec, spec.out_channels, "conv3d_transpose")?;
    spec.check_transpose_target(ext, target)?;
    let geom = spec.adjoint_geometry();

    let kt = spec.out_channels * spec.kernel_volume();
    let p_in: usize = ext.iter().product();
    let p_out: usize = target.iter().product();
    let in_stride = spec.in_channels * p_in;
    let out_stride = spec.out_channels * p_out;
    let mut col = vec![0.0f32; kt * p_in];
    let mut out = vec![0.0f32; n * out_stride];
    for s in 0..n {
        let x = &input.data()[s * in_stride..(s + 1) * in_stride];
        gemm(kt, spec.in_channels, p_in, weight.data(), true, x, false, &mut col, 0.0);
        col2im(&col, spec.out_channels, target, &geom, ext, &mut out[s * out_stride..(s + 1) * out_stride]);
    }
    if let Some(b) = bias {
        add_channel_bias(&mut out, b.data(), p_out);
    }
    Tensor::new(volume_shape(n, spec.out_channels, target, batched), out)
}

pub(crate) fn conv3d_transpose_backward(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    target: [usize; 3],
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let (n, ext, _) = split_volume_shape(input.shape(), spec.in_channels, "conv3d_transpose backward")?;
    let geom = spec.adjoint_geometry();
    let kt = spec.out_channels * spec.kernel_volume();
    let p_in: usize = ext.iter().product();
    let p_out: usize = target.iter().product();
    let in_stride = spec.in_channels * p_in;
    let out_stride = spec.out_channels * p_out;

    let mut gcol = vec![0.0f32; kt * p_in];
    let mut gw = vec![0.0f32; spec.in_channels * kt];
    let mut gx = if need_input { vec![0.0f32; input.numel()] } else { Vec::new() };
    for s in 0..n {
        let x = &input.data()[s * in_stride..(s + 1) * in_stride];
        let go = &grad_out.data()[s * out_stride..(s + 1) * out_stride];
        im2col(go, spec.out_channels, target, &geom, ext, &mut gcol);
        gemm(spec.in_channels, p_in, kt, x, false, &gcol, true, &mut gw, 1.0);
        if need_input {
            let gxs = &mut gx[s * in_stride..(s + 1) * in_stride];
            gemm(spec.in_channels, kt, p_in, weight.data(), false, &gcol, false, gxs, 0.0);
        }
    }
    Ok(ConvGrads {
        input: if need_input { Some(Tensor::new(input.shape().to_vec(), gx)?) } else { None },
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: spec
            .bias
            .then(|| Tensor::vector(channel_sums(grad_out.data(), spec.out_channels, p_out))),
    })
}
