//! Stride-1 convolution without an unfolded matrix.
//!
//! The input is zero-padded once. In the padded flat index space an output
//! voxel at `q` reads `q + offset(tap)`, so each (output channel, input
//! channel, tap) triple becomes a single long axpy. Positions of `q` that
//! fall in the padding rim produce values that are never read back.

use super::ConvSpec;

pub(super) struct Geometry {
    ext: [usize; 3],
    out: [usize; 3],
    padded: [usize; 3],
    pad: [usize; 3],
    /// Length of the padded volume.
    len: usize,
    /// Number of `q` positions evaluated.
    span: usize,
    offsets: Vec<usize>,
}

impl Geometry {
    pub(super) fn new(ext: [usize; 3], out: [usize; 3], spec: &ConvSpec) -> Self {
        let pad = spec.padding;
        let padded = [ext[0] + 2 * pad[0], ext[1] + 2 * pad[1], ext[2] + 2 * pad[2]];
        let plane = padded[1] * padded[2];
        let len = padded[0] * plane;
        let mut offsets = Vec::with_capacity(spec.kernel_volume());
        for a in 0..spec.kernel[0] {
            for b in 0..spec.kernel[1] {
                for e in 0..spec.kernel[2] {
                    offsets.push(a * plane + b * padded[2] + e);
                }
            }
        }
        let span = len - offsets.last().copied().unwrap_or(0);
        Self { ext, out, padded, pad, len, span, offsets }
    }

    fn q(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.padded[1] + y) * self.padded[2] + x
    }

    fn pad_input(&self, x: &[f32], channels: usize) -> Vec<f32> {
        let [d, h, w] = self.ext;
        let mut out = vec![0.0f32; channels * self.len];
        for c in 0..channels {
            for z in 0..d {
                for y in 0..h {
                    let src = ((c * d + z) * h + y) * w;
                    let dst = c * self.len + self.q(z + self.pad[0], y + self.pad[1], self.pad[2]);
                    out[dst..dst + w].copy_from_slice(&x[src..src + w]);
                }
            }
        }
        out
    }

    fn for_each_output(&self, mut f: impl FnMut(usize, usize)) {
        let [od, oh, ow] = self.out;
        let mut flat = 0;
        for z in 0..od {
            for y in 0..oh {
                let base = self.q(z, y, 0);
                for x in 0..ow {
                    f(flat, base + x);
                    flat += 1;
                }
            }
        }
    }
}

const TILE: usize = 256;
const LANES: usize = 32;

/// `out[o][q] = Σ_i Σ_t w[o][i][t] · src[i][q + offsets[t]]` for `q < n`.
///
/// Runs over blocks of `LANES` positions with a fixed-size accumulator the
/// compiler keeps in registers; the ragged tail takes a plain loop.
#[inline(always)]
fn correlate_impl(
    src: &[f32],
    src_len: usize,
    in_ch: usize,
    wmat: &[f32],
    out_ch: usize,
    offsets: &[usize],
    n: usize,
) -> Vec<f32> {
    let taps = offsets.len();
    let mut out = vec![0.0f32; out_ch * n];
    let full = n / LANES * LANES;
    for o in 0..out_ch {
        let w_o = &wmat[o * in_ch * taps..(o + 1) * in_ch * taps];
        let dst = &mut out[o * n..(o + 1) * n];
        for q0 in (0..full).step_by(LANES) {
            let mut acc = [0.0f32; LANES];
            for i in 0..in_ch {
                let s = &src[i * src_len + q0..(i + 1) * src_len];
                let w = &w_o[i * taps..(i + 1) * taps];
                for (&wv, &off) in w.iter().zip(offsets) {
                    let xs: &[f32; LANES] = s[off..off + LANES].try_into().unwrap();
                    for k in 0..LANES {
                        acc[k] += wv * xs[k];
                    }
                }
            }
            dst[q0..q0 + LANES].copy_from_slice(&acc);
        }
        for (q, d) in dst.iter_mut().enumerate().skip(full) {
            let mut a = 0.0f32;
            for i in 0..in_ch {
                let s = &src[i * src_len..(i + 1) * src_len];
                for (&wv, &off) in w_o[i * taps..(i + 1) * taps].iter().zip(offsets) {
                    a += wv * s[q + off];
                }
            }
            *d = a;
        }
    }
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn correlate_avx2(
    src: &[f32],
    src_len: usize,
    in_ch: usize,
    wmat: &[f32],
    out_ch: usize,
    offsets: &[usize],
    n: usize,
) -> Vec<f32> {
    correlate_impl(src, src_len, in_ch, wmat, out_ch, offsets, n)
}

fn correlate(
    src: &[f32],
    src_len: usize,
    in_ch: usize,
    wmat: &[f32],
    out_ch: usize,
    offsets: &[usize],
    n: usize,
) -> Vec<f32> {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { correlate_avx2(src, src_len, in_ch, wmat, out_ch, offsets, n) };
    }
    correlate_impl(src, src_len, in_ch, wmat, out_ch, offsets, n)
}

#[inline(always)]
fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let mut ia = a.chunks_exact(8);
    let mut ib = b.chunks_exact(8);
    for (x, y) in (&mut ia).zip(&mut ib) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut part: f32 = lanes.iter().sum();
    for (x, y) in ia.remainder().iter().zip(ib.remainder()) {
        part += x * y;
    }
    part
}

/// `gw[o][i][t] = Σ_q gq[o][max_off + q] · xp[i][q + offsets[t]]`, f32 partial
/// sums per tile folded into f64.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn weight_grad_impl(
    gq: &[f32],
    glen: usize,
    max_off: usize,
    xp: &[f32],
    xlen: usize,
    cin: usize,
    cout: usize,
    offsets: &[usize],
    span: usize,
) -> Vec<f64> {
    let taps = offsets.len();
    let mut gw = vec![0.0f64; cout * cin * taps];
    let mut q0 = 0;
    while q0 < span {
        let len = TILE.min(span - q0);
        for co in 0..cout {
            let gqc = &gq[co * glen + max_off + q0..][..len];
            for ci in 0..cin {
                let s = &xp[ci * xlen..(ci + 1) * xlen];
                let base = (co * cin + ci) * taps;
                for (t, &off) in offsets.iter().enumerate() {
                    gw[base + t] += dot_f32(gqc, &s[q0 + off..q0 + off + len]) as f64;
                }
            }
        }
        q0 += len;
    }
    gw
}

#[cfg(target_arch = "x86_64")]
#[allow(clippy::too_many_arguments)]
#[target_feature(enable = "avx2,fma")]
unsafe fn weight_grad_avx2(
    gq: &[f32],
    glen: usize,
    max_off: usize,
    xp: &[f32],
    xlen: usize,
    cin: usize,
    cout: usize,
    offsets: &[usize],
    span: usize,
) -> Vec<f64> {
    weight_grad_impl(gq, glen, max_off, xp, xlen, cin, cout, offsets, span)
}

#[allow(clippy::too_many_arguments)]
fn weight_grad(
    gq: &[f32],
    glen: usize,
    max_off: usize,
    xp: &[f32],
    xlen: usize,
    cin: usize,
    cout: usize,
    offsets: &[usize],
    span: usize,
) -> Vec<f64> {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { weight_grad_avx2(gq, glen, max_off, xp, xlen, cin, cout, offsets, span) };
    }
    weight_grad_impl(gq, glen, max_off, xp, xlen, cin, cout, offsets, span)
}

/// One unbatched sample: `x` is `[C_in, D, H, W]`, result is `[C_out, D', H', W']`.
pub(super) fn forward(g: &Geometry, x: &[f32], weight: &[f32], spec: &ConvSpec) -> Vec<f32> {
    let xp = g.pad_input(x, spec.in_channels);
    let acc = correlate(&xp, g.len, spec.in_channels, weight, spec.out_channels, &g.offsets, g.span);
    let p: usize = g.out.iter().product();
    let mut out = vec![0.0f32; spec.out_channels * p];
    for co in 0..spec.out_channels {
        let a = &acc[co * g.span..(co + 1) * g.span];
        let dst = &mut out[co * p..(co + 1) * p];
        g.for_each_output(|flat, q| dst[flat] = a[q]);
    }
    out
}

/// Accumulates the weight gradient into `gw` and returns the input gradient
/// when requested.
pub(super) fn backward(
    g: &Geometry,
    x: &[f32],
    weight: &[f32],
    spec: &ConvSpec,
    grad_out: &[f32],
    gw: &mut [f32],
    need_input: bool,
) -> Option<Vec<f32>> {
    let taps = g.offsets.len();
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let p: usize = g.out.iter().product();
    let xp = g.pad_input(x, cin);
    // Output gradient scattered into the padded index space, with `max_off`
    // zeros on both sides so the input-gradient gather needs no bounds checks.
    let max_off = g.offsets.last().copied().unwrap_or(0);
    let glen = g.span + 2 * max_off;
    let mut gq = vec![0.0f32; cout * glen];
    for co in 0..cout {
        let src = &grad_out[co * p..(co + 1) * p];
        let dst = &mut gq[co * glen + max_off..co * glen + max_off + g.span];
        g.for_each_output(|flat, q| dst[q] = src[flat]);
    }

    let gw64 = weight_grad(&gq, glen, max_off, &xp, g.len, cin, cout, &g.offsets, g.span);
    for (a, b) in gw.iter_mut().zip(&gw64) {
        *a += *b as f32;
    }
    if !need_input {
        return None;
    }

    // gp[r] = Σ_co Σ_t w[co][ci][t] · gq[co][r − off_t], a correlation with
    // mirrored offsets over the padded gradient.
    let flipped: Vec<usize> = g.offsets.iter().map(|&o| max_off - o).collect();
    let mut wt = vec![0.0f32; cin * cout * taps];
    for co in 0..cout {
        for ci in 0..cin {
            let from = (co * cin + ci) * taps;
            let to = (ci * cout + co) * taps;
            wt[to..to + taps].copy_from_slice(&weight[from..from + taps]);
        }
    }
    let gp = correlate(&gq, glen, cout, &wt, cin, &flipped, g.len);
    let [d, h, w] = g.ext;
    let mut gx = vec![0.0f32; cin * d * h * w];
    for ci in 0..cin {
        for z in 0..d {
            for y in 0..h {
                let src = ci * g.len + g.q(z + g.pad[0], y + g.pad[1], g.pad[2]);
                let dst = ((ci * d + z) * h + y) * w;
                gx[dst..dst + w].copy_from_slice(&gp[src..src + w]);
            }
        }
    }
    Some(gx)
}

