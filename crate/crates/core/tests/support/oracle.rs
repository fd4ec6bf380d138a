//! Independent f64 forward implementations and a central-difference
//! gradient checker for the tape's layers and the full loss.

use mmvae_core::tensor::{ConvSpec, Tape, Tensor};
use mmvae_core::vae::{ArchitectureConfig, VaeParameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;

/// Outcome of one gradient check family.
#[derive(Debug)]
pub struct CheckSummary {
    pub name: &'static str,
    pub instances: usize,
    pub coordinates: usize,
    pub worst: f64,
}

impl CheckSummary {
    pub fn passed(&self) -> bool {
        self.worst <= TOL
    }
}

/// Forward result: scalar loss and every ReLU pre-activation seen.
pub struct Eval {
    pub loss: f64,
    pub kinks: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    // Round through f32 so the oracle starts from the exact tensor values.
    (0..n).map(|_| rng.gen_range(-scale..scale) as f32 as f64).collect()
}

fn to_tensor(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), v.iter().map(|&x| x as f32).collect()).unwrap()
}

/// Compares analytic gradients with central differences over every
/// coordinate of every input. Coordinates whose ±h evaluations straddle a
/// ReLU kink are skipped. Returns the largest relative error and the number
/// of coordinates checked.
pub fn compare(inputs: &[Vec<f64>], analytic: &[Vec<f32>], f: impl Fn(&[Vec<f64>]) -> Eval) -> (f64, usize) {
    let gmax = analytic.iter().flatten().fold(0.0f64, |m, &g| m.max((g as f64).abs()));
    let floor = 1e-3 * gmax + 1e-9;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut work = inputs.to_vec();
    for (t, grads) in analytic.iter().enumerate() {
        assert_eq!(grads.len(), inputs[t].len());
        for i in 0..inputs[t].len() {
            let orig = work[t][i];
            work[t][i] = orig + H;
            let plus = f(&work);
            work[t][i] = orig - H;
            let minus = f(&work);
            work[t][i] = orig;
            let crosses = plus.kinks.iter().zip(&minus.kinks).any(|(a, b)| (*a > 0.0) != (*b > 0.0));
            if crosses {
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * H);
            let a = grads[i] as f64;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Conv {
    cin: usize,
    cout: usize,
    k: [usize; 3],
    s: [usize; 3],
    p: [usize; 3],
}

impl Conv {
    fn spec(&self, bias: bool) -> ConvSpec {
        ConvSpec {
            kernel: self.k,
            stride: self.s,
            padding: self.p,
            in_channels: self.cin,
            out_channels: self.cout,
            bias,
        }
    }

    fn out_ext(&self, e: [usize; 3]) -> [usize; 3] {
        let mut o = [0; 3];
        for a in 0..3 {
            o[a] = (e[a] + 2 * self.p[a] - self.k[a]) / self.s[a] + 1;
        }
        o
    }

    /// Direct cross-correlation, weight `[cout, cin, k]`.
    fn forward(&self, x: &[f64], e: [usize; 3], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
        let o = self.out_ext(e);
        let [kd, kh, kw] = self.k;
        let mut out = vec![0.0; self.cout * o[0] * o[1] * o[2]];
        for co in 0..self.cout {
            for z in 0..o[0] {
                for y in 0..o[1] {
                    for xo in 0..o[2] {
                        let mut acc = b.map_or(0.0, |b| b[co]);
                        for ci in 0..self.cin {
                            for a in 0..kd {
                                for bb in 0..kh {
                                    for c in 0..kw {
                                        let zi = (z * self.s[0] + a) as isize - self.p[0] as isize;
                                        let yi = (y * self.s[1] + bb) as isize - self.p[1] as isize;
                                        let xi = (xo * self.s[2] + c) as isize - self.p[2] as isize;
                                        if zi < 0 || yi < 0 || xi < 0 {
                                            continue;
                                        }
                                        let (zi, yi, xi) = (zi as usize, yi as usize, xi as usize);
                                        if zi >= e[0] || yi >= e[1] || xi >= e[2] {
                                            continue;
                                        }
                                        acc += x[((ci * e[0] + zi) * e[1] + yi) * e[2] + xi]
                                            * w[(((co * self.cin + ci) * kd + a) * kh + bb) * kw + c];
                                    }
                                }
                            }
                        }
                        out[((co * o[0] + z) * o[1] + y) * o[2] + xo] = acc;
                    }
                }
            }
        }
        out
    }

    /// Transposed convolution in gather form, weight `[cin, cout, k]`,
    /// output forced to `t`.
    fn transpose(&self, x: &[f64], e: [usize; 3], w: &[f64], b: Option<&[f64]>, t: [usize; 3]) -> Vec<f64> {
        let [kd, kh, kw] = self.k;
        let src = |o: usize, k: usize, a: usize| -> Option<usize> {
            let num = o as isize + self.p[a] as isize - k as isize;
            if num < 0 || num % self.s[a] as isize != 0 {
                return None;
            }
            let i = (num / self.s[a] as isize) as usize;
            (i < e[a]).then_some(i)
        };
        let mut out = vec![0.0; self.cout * t[0] * t[1] * t[2]];
        for co in 0..self.cout {
            for z in 0..t[0] {
                for y in 0..t[1] {
                    for xo in 0..t[2] {
                        let mut acc = b.map_or(0.0, |b| b[co]);
                        for ci in 0..self.cin {
                            for a in 0..kd {
                                let Some(zi) = src(z, a, 0) else { continue };
                                for bb in 0..kh {
                                    let Some(yi) = src(y, bb, 1) else { continue };
                                    for c in 0..kw {
                                        let Some(xi) = src(xo, c, 2) else { continue };
                                        acc += x[((ci * e[0] + zi) * e[1] + yi) * e[2] + xi]
                                            * w[(((ci * self.cout + co) * kd + a) * kh + bb) * kw + c];
                                    }
                                }
                            }
                        }
                        out[((co * t[0] + z) * t[1] + y) * t[2] + xo] = acc;
                    }
                }
            }
        }
        out
    }
}

fn random_conv(rng: &mut ChaCha8Rng, i: usize) -> (Conv, [usize; 3]) {
    let mut k = [0; 3];
    let mut s = [0; 3];
    let mut p = [0; 3];
    for a in 0..3 {
        k[a] = rng.gen_range(1..=3);
        // Every other instance is stride 1 so both convolution paths run.
        s[a] = if i % 2 == 0 { 1 } else { rng.gen_range(1..=2) };
        p[a] = rng.gen_range(0..k[a]);
    }
    // A few larger grids exercise the blocked stride-1 kernels past one tile.
    let hi = if i % 5 == 0 { 9 } else { 5 };
    let e = [rng.gen_range(3..=hi), rng.gen_range(3..=hi), rng.gen_range(3..=hi)];
    (Conv { cin: rng.gen_range(1..=3), cout: rng.gen_range(1..=3), k, s, p }, e)
}

pub fn conv3d_gradients(instances: usize) -> CheckSummary {
    let mut summary = CheckSummary { name: "conv3d", instances, coordinates: 0, worst: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for i in 0..instances {
        let (c, e) = random_conv(&mut rng, i);
        let o = c.out_ext(e);
        let with_bias = i % 3 != 1;
        let x = uniform(&mut rng, c.cin * e.iter().product::<usize>(), 1.0);
        let w = uniform(&mut rng, c.cout * c.cin * c.k.iter().product::<usize>(), 0.5);
        let b = uniform(&mut rng, c.cout, 0.5);
        let r = uniform(&mut rng, c.cout * o.iter().product::<usize>(), 1.0);

        let mut tape = Tape::new();
        let xv = tape.leaf(to_tensor(&[c.cin, e[0], e[1], e[2]], &x).with_requires_grad(true));
        let mut wshape = vec![c.cout, c.cin];
        wshape.extend(c.k);
        let wv = tape.leaf(to_tensor(&wshape, &w).with_requires_grad(true));
        let bv = with_bias.then(|| tape.leaf(to_tensor(&[c.cout], &b).with_requires_grad(true)));
        let out = tape.conv3d(xv, wv, bv, c.spec(with_bias)).unwrap();
        let rv = tape.leaf(to_tensor(tape.value(out).shape(), &r));
        let prod = tape.mul(out, rv).unwrap();
        let loss = tape.sum(prod);
        let g = tape.backward(loss).unwrap();

        let mut inputs = vec![x, w];
        let mut analytic = vec![g.get(xv).unwrap().data().to_vec(), g.get(wv).unwrap().data().to_vec()];
        if let Some(bv) = bv {
            inputs.push(b);
            analytic.push(g.get(bv).unwrap().data().to_vec());
        }
        let (err, n) = compare(&inputs, &analytic, |v| Eval {
            loss: dot(&c.forward(&v[0], e, &v[1], v.get(2).map(|b| b.as_slice())), &r),
            kinks: Vec::new(),
        });
        summary.worst = summary.worst.max(err);
        summary.coordinates += n;
    }
    summary
}

pub fn conv3d_transpose_gradients(instances: usize) -> CheckSummary {
    let mut summary = CheckSummary { name: "conv3d_transpose", instances, coordinates: 0, worst: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for i in 0..instances {
        let (c, e) = random_conv(&mut rng, i);
        // The transposed layer maps `o` back onto `e` (its forced target).
        let o = c.out_ext(e);
        let with_bias = i % 3 != 2;
        let (cin, cout) = (c.cout, c.cin);
        let x = uniform(&mut rng, cin * o.iter().product::<usize>(), 1.0);
        let w = uniform(&mut rng, cin * cout * c.k.iter().product::<usize>(), 0.5);
        let b = uniform(&mut rng, cout, 0.5);
        let r = uniform(&mut rng, cout * e.iter().product::<usize>(), 1.0);
        let t = Conv { cin, cout, k: c.k, s: c.s, p: c.p };

        let mut tape = Tape::new();
        let xv = tape.leaf(to_tensor(&[cin, o[0], o[1], o[2]], &x).with_requires_grad(true));
        let mut wshape = vec![cin, cout];
        wshape.extend(c.k);
        let wv = tape.leaf(to_tensor(&wshape, &w).with_requires_grad(true));
        let bv = with_bias.then(|| tape.leaf(to_tensor(&[cout], &b).with_requires_grad(true)));
        let out = tape.conv3d_transpose(xv, wv, bv, t.spec(with_bias), e).unwrap();
        let rv = tape.leaf(to_tensor(tape.value(out).shape(), &r));
        let prod = tape.mul(out, rv).unwrap();
        let loss = tape.sum(prod);
        let g = tape.backward(loss).unwrap();

        let mut inputs = vec![x, w];
        let mut analytic = vec![g.get(xv).unwrap().data().to_vec(), g.get(wv).unwrap().data().to_vec()];
        if let Some(bv) = bv {
            inputs.push(b);
            analytic.push(g.get(bv).unwrap().data().to_vec());
        }
        let (err, n) = compare(&inputs, &analytic, |v| Eval {
            loss: dot(&t.transpose(&v[0], o, &v[1], v.get(2).map(|b| b.as_slice()), e), &r),
            kinks: Vec::new(),
        });
        summary.worst = summary.worst.max(err);
        summary.coordinates += n;
    }
    summary
}

pub fn affine_gradients(instances: usize) -> CheckSummary {
    let mut summary = CheckSummary { name: "affine", instances, coordinates: 0, worst: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    for _ in 0..instances {
        let (n_in, n_out) = (rng.gen_range(1..12), rng.gen_range(1..8));
        let x = uniform(&mut rng, n_in, 1.0);
        let w = uniform(&mut rng, n_in * n_out, 1.0);
        let b = uniform(&mut rng, n_out, 1.0);
        let r = uniform(&mut rng, n_out, 1.0);
        let mut tape = Tape::new();
        let xv = tape.leaf(to_tensor(&[n_in], &x).with_requires_grad(true));
        let wv = tape.leaf(to_tensor(&[n_out, n_in], &w).with_requires_grad(true));
        let bv = tape.leaf(to_tensor(&[n_out], &b).with_requires_grad(true));
        let out = tape.affine(xv, wv, bv).unwrap();
        let rv = tape.leaf(to_tensor(&[n_out], &r));
        let prod = tape.mul(out, rv).unwrap();
        let loss = tape.sum(prod);
        let g = tape.backward(loss).unwrap();
        let analytic: Vec<Vec<f32>> = [xv, wv, bv].iter().map(|&v| g.get(v).unwrap().data().to_vec()).collect();
        let (err, n) = compare(&[x, w, b], &analytic, |v| {
            let y: Vec<f64> = (0..n_out).map(|o| dot(&v[1][o * n_in..(o + 1) * n_in], &v[0]) + v[2][o]).collect();
            Eval { loss: dot(&y, &r), kinks: Vec::new() }
        });
        summary.worst = summary.worst.max(err);
        summary.coordinates += n;
    }
    summary
}

/// Elementwise and reduction ops composed into one scalar:
/// `Σ r·relu(a) + Σ tanh(a)·b + ½Σ(exp(s·b) − a)² + Σ(a + c)` where `s`
/// and `c` are constants.
pub fn elementwise_gradients(instances: usize) -> CheckSummary {
    let mut summary = CheckSummary { name: "elementwise", instances, coordinates: 0, worst: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    for _ in 0..instances {
        let n = rng.gen_range(2..20);
        let s = rng.gen_range(-1.0f32..1.0);
        let c = rng.gen_range(-1.0f32..1.0);
        let a = uniform(&mut rng, n, 2.0);
        let b = uniform(&mut rng, n, 1.5);
        let r = uniform(&mut rng, n, 1.0);

        let mut tape = Tape::new();
        let av = tape.leaf(to_tensor(&[n], &a).with_requires_grad(true));
        let bv = tape.leaf(to_tensor(&[n], &b).with_requires_grad(true));
        let rv = tape.leaf(to_tensor(&[n], &r));
        let relu = tape.relu(av);
        let t1 = tape.mul(relu, rv).unwrap();
        let t1 = tape.sum(t1);
        let th = tape.tanh(av);
        let t2 = tape.mul(th, bv).unwrap();
        let t2 = tape.reshape(t2, &[1, n]).unwrap();
        let t2 = tape.sum(t2);
        let sb = tape.scale(bv, s);
        let e = tape.exp(sb);
        let d = tape.sub(e, av).unwrap();
        let t3 = tape.sum_squares(d);
        let t3 = tape.scale(t3, 0.5);
        let ac = tape.add_scalar(av, c);
        let t4 = tape.sum(ac);
        let l = tape.add(t1, t2).unwrap();
        let l = tape.add(l, t3).unwrap();
        let loss = tape.add(l, t4).unwrap();
        let g = tape.backward(loss).unwrap();
        let analytic = vec![g.get(av).unwrap().data().to_vec(), g.get(bv).unwrap().data().to_vec()];

        let (err, n) = compare(&[a, b], &analytic, |v| {
            let (a, b) = (&v[0], &v[1]);
            let mut loss = 0.0;
            for k in 0..n {
                loss += r[k] * a[k].max(0.0)
                    + a[k].tanh() * b[k]
                    + 0.5 * ((s as f64 * b[k]).exp() - a[k]).powi(2)
                    + a[k]
                    + c as f64;
            }
            Eval { loss, kinks: a.clone() }
        });
        summary.worst = summary.worst.max(err);
        summary.coordinates += n;
    }
    summary
}

fn small_arch(i: usize) -> ArchitectureConfig {
    let extents = [[6, 7, 5], [5, 5, 6], [7, 6, 6], [4, 5, 5]][i % 4];
    ArchitectureConfig {
        input_extents: extents,
        encoder_channels: vec![1, 2, 3],
        decoder_channels: vec![3, 2, 2, 2, 1],
        latent_dim: 2 + i % 3,
        kernel: 3,
        stride: 2,
        padding: 1,
    }
}

/// f64 re-implementation of the shared encoder-decoder and its loss for one
/// volume; parameters are taken in the library's layout order.
fn elbo_oracle(arch: &ArchitectureConfig, p: &[Vec<f64>], x: &[f64], eps: &[f64], beta: f64, kinks: &mut Vec<f64>) -> f64 {
    let stages = arch.encoder_stages();
    let mut ext = vec![arch.input_extents];
    let conv = |cin, cout, s| Conv { cin, cout, k: [3; 3], s: [s; 3], p: [1; 3] };
    let mut h = x.to_vec();
    let mut idx = 0;
    for s in 0..stages {
        let c = conv(arch.encoder_channels[s], arch.encoder_channels[s + 1], 2);
        let e = *ext.last().unwrap();
        h = c.forward(&h, e, &p[idx], Some(&p[idx + 1]));
        kinks.extend(&h);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        ext.push(c.out_ext(e));
        idx += 2;
    }
    let l = arch.latent_dim;
    let head = |w: &[f64], b: &[f64]| -> Vec<f64> {
        (0..l).map(|o| dot(&w[o * h.len()..(o + 1) * h.len()], &h) + b[o]).collect()
    };
    let mu = head(&p[idx], &p[idx + 1]);
    let logvar = head(&p[idx + 2], &p[idx + 3]);
    idx += 4;
    let z: Vec<f64> = (0..l).map(|d| mu[d] + (0.5 * logvar[d]).exp() * eps[d]).collect();
    let (sw, sb) = (&p[idx], &p[idx + 1]);
    idx += 2;
    let mut g: Vec<f64> = (0..sb.len()).map(|o| dot(&sw[o * l..(o + 1) * l], &z) + sb[o]).collect();
    kinks.extend(&g);
    g.iter_mut().for_each(|v| *v = v.max(0.0));
    for s in 0..stages {
        let c = conv(arch.decoder_channels[s], arch.decoder_channels[s + 1], 2);
        let from = ext[stages - s];
        let to = ext[stages - 1 - s];
        g = c.transpose(&g, from, &p[idx], Some(&p[idx + 1]), to);
        kinks.extend(&g);
        g.iter_mut().for_each(|v| *v = v.max(0.0));
        idx += 2;
    }
    let refine = arch.decoder_channels.len() - 1 - stages;
    for j in 0..refine {
        let c = conv(arch.decoder_channels[stages + j], arch.decoder_channels[stages + j + 1], 1);
        let last = j + 1 == refine;
        let bias = (!last).then(|| p[idx + 1].as_slice());
        g = c.forward(&g, arch.input_extents, &p[idx], bias);
        if last {
            g.iter_mut().for_each(|v| *v = v.tanh());
            idx += 1;
        } else {
            kinks.extend(&g);
            g.iter_mut().for_each(|v| *v = v.max(0.0));
            idx += 2;
        }
    }
    assert_eq!(idx, p.len());
    let recon: f64 = 0.5 * x.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let kl: f64 = 0.5 * (0..l).map(|d| mu[d] * mu[d] + logvar[d].exp() - 1.0 - logvar[d]).sum::<f64>();
    recon + beta * kl
}

pub fn elbo_gradients(instances: usize) -> CheckSummary {
    let mut summary = CheckSummary { name: "elbo", instances, coordinates: 0, worst: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for i in 0..instances {
        let arch = small_arch(i);
        let mut params = VaeParameters::init(&arch, &mut rng).unwrap();
        // Zero-initialized tensors would hide their own gradient paths.
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.6f64..0.6) as f32;
            }
        }
        let batch = 1 + i % 2;
        let beta = [1.0, 0.5, 2.0][i % 3];
        let vols: Vec<Vec<f64>> = (0..batch).map(|_| uniform(&mut rng, arch.voxels(), 1.0)).collect();
        let noises: Vec<Vec<f64>> = (0..batch).map(|_| uniform(&mut rng, arch.latent_dim, 1.5)).collect();
        let [d, h, w] = arch.input_extents;
        let xt: Vec<Tensor> = vols.iter().map(|v| to_tensor(&[d, h, w], v)).collect();
        let nt: Vec<Vec<f32>> = noises.iter().map(|n| n.iter().map(|&v| v as f32).collect()).collect();
        let (loss, grads) = params.batch_gradients(&xt, &nt, beta).unwrap();

        let inputs: Vec<Vec<f64>> =
            params.tensors().iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect();
        let analytic: Vec<Vec<f32>> = grads.iter().map(|g| g.data().to_vec()).collect();
        let eval = |p: &[Vec<f64>]| {
            let mut kinks = Vec::new();
            let total: f64 =
                vols.iter().zip(&noises).map(|(x, e)| elbo_oracle(&arch, p, x, e, beta, &mut kinks)).sum();
            Eval { loss: total / batch as f64, kinks }
        };
        let reference = eval(&inputs).loss;
        let (mut err, n) = compare(&inputs, &analytic, eval);
        // A forward mismatch or a check dominated by kinks counts as failure.
        if (loss.total - reference).abs() > 1e-4 * reference.abs().max(1.0) || n <= params.num_parameters() / 2 {
            err = f64::INFINITY;
        }
        summary.worst = summary.worst.max(err);
        summary.coordinates += n;
    }
    summary
}
