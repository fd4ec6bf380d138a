//! Direct-loop convolutions accumulated in `f64`.
//!
//! These are deliberately naive and serve as the oracle for the im2col
//! kernels. Only unbatched `[C, D, H, W]` inputs are accepted.

use super::conv::split_volume_shape;
use super::{ConvSpec, Tensor};
use crate::error::{Error, Result};

fn unbatched(t: &Tensor, channels: usize, op: &str) -> Result<[usize; 3]> {
    match split_volume_shape(t.shape(), channels, op)? {
        (_, ext, false) => Ok(ext),
        _ => Err(Error::Shape(format!("{op}: reference kernels take unbatched input"))),
    }
}

pub fn conv3d_direct(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    let [d, h, w] = unbatched(input, spec.in_channels, "conv3d_direct")?;
    let [od, oh, ow] = spec.output_extents([d, h, w])?;
    let [kd, kh, kw] = spec.kernel;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0f32; spec.out_channels * od * oh * ow];
    for co in 0..spec.out_channels {
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b.data()[co] as f64);
                    for ci in 0..spec.in_channels {
                        for a in 0..kd {
                            let zi = (z * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                            if zi < 0 || zi >= d as isize {
                                continue;
                            }
                            for b in 0..kh {
                                let yi = (y * spec.stride[1] + b) as isize - spec.padding[1] as isize;
                                if yi < 0 || yi >= h as isize {
                                    continue;
                                }
                                for e in 0..kw {
                                    let xi = (xo * spec.stride[2] + e) as isize - spec.padding[2] as isize;
                                    if xi < 0 || xi >= w as isize {
                                        continue;
                                    }
                                    let xv = x[((ci * d + zi as usize) * h + yi as usize) * w + xi as usize];
                                    let wv = wt[(((co * spec.in_channels + ci) * kd + a) * kh + b) * kw + e];
                                    acc += xv as f64 * wv as f64;
                                }
                            }
                        }
                    }
                    out[((co * od + z) * oh + y) * ow + xo] = acc as f32;
                }
            }
        }
    }
    Tensor::new(vec![spec.out_channels, od, oh, ow], out)
}

/// Scatter form: every input voxel deposits `value · kernel` at the output
/// positions a forward convolution would have read it from.
pub fn conv3d_transpose_direct(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
    target: [usize; 3],
) -> Result<Tensor> {
    let [d, h, w] = unbatched(input, spec.in_channels, "conv3d_transpose_direct")?;
    spec.check_transpose_target([d, h, w], target)?;
    let [td, th, tw] = target;
    let [kd, kh, kw] = spec.kernel;
    let x = input.data();
    let wt = weight.data();
    let mut acc = vec![0.0f64; spec.out_channels * td * th * tw];
    for ci in 0..spec.in_channels {
        for z in 0..d {
            for y in 0..h {
                for xi in 0..w {
                    let xv = x[((ci * d + z) * h + y) * w + xi] as f64;
                    for co in 0..spec.out_channels {
                        for a in 0..kd {
                            let zo = (z * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                            if zo < 0 || zo >= td as isize {
                                continue;
                            }
                            for b in 0..kh {
                                let yo = (y * spec.stride[1] + b) as isize - spec.padding[1] as isize;
                                if yo < 0 || yo >= th as isize {
                                    continue;
                                }
                                for e in 0..kw {
                                    let xo = (xi * spec.stride[2] + e) as isize - spec.padding[2] as isize;
                                    if xo < 0 || xo >= tw as isize {
                                        continue;
                                    }
                                    let wv = wt[(((ci * spec.out_channels + co) * kd + a) * kh + b) * kw + e];
                                    acc[((co * td + zo as usize) * th + yo as usize) * tw + xo as usize] +=
                                        xv * wv as f64;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = bias {
        let spatial = td * th * tw;
        for (i, v) in acc.iter_mut().enumerate() {
            *v += b.data()[i / spatial] as f64;
        }
    }
    Tensor::new(
        vec![spec.out_channels, td, th, tw],
        acc.into_iter().map(|v| v as f32).collect(),
    )
}
