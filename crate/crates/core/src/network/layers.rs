//! Batched NCHW kernels with hand-written backward passes.

/// A batch of feature maps in NCHW order. Dense activations use `h = w = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Activations {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Activations {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn shape_like(&self) -> Self {
        Self::zeros(self.n, self.c, self.h, self.w)
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// 3×3 convolution, stride 1, zero padding 1, no bias. Weights `[cout][cin][3][3]`.
pub fn conv3x3_forward(x: &Activations, weight: &[f64], cout: usize) -> Activations {
    let (h, w, cin) = (x.h, x.w, x.c);
    let mut out = Activations::zeros(x.n, cout, h, w);
    let hw = h * w;
    for n in 0..x.n {
        let input = &x.data[n * cin * hw..(n + 1) * cin * hw];
        let output = &mut out.data[n * cout * hw..(n + 1) * cout * hw];
        for co in 0..cout {
            let oplane = &mut output[co * hw..(co + 1) * hw];
            for ci in 0..cin {
                let iplane = &input[ci * hw..(ci + 1) * hw];
                let k = &weight[(co * cin + ci) * 9..(co * cin + ci) * 9 + 9];
                for (ky, krow) in k.chunks_exact(3).enumerate() {
                    let dy = ky as isize - 1;
                    let (y0, y1) = span(h, dy);
                    for (kx, &wv) in krow.iter().enumerate() {
                        let dx = kx as isize - 1;
                        let (x0, x1) = span(w, dx);
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let src = &iplane[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                            let dst = &mut oplane[y * w + x0..y * w + x1];
                            for (o, &i) in dst.iter_mut().zip(src) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (weight gradient, input gradient if requested).
pub fn conv3x3_backward(
    x: &Activations,
    weight: &[f64],
    dout: &Activations,
    need_input_grad: bool,
) -> (Vec<f64>, Option<Activations>) {
    let (h, w, cin, cout) = (x.h, x.w, x.c, dout.c);
    let hw = h * w;
    let mut dweight = vec![0.0; weight.len()];
    let mut dx = need_input_grad.then(|| x.shape_like());
    for n in 0..x.n {
        let input = &x.data[n * cin * hw..(n + 1) * cin * hw];
        let grad = &dout.data[n * cout * hw..(n + 1) * cout * hw];
        for co in 0..cout {
            let gplane = &grad[co * hw..(co + 1) * hw];
            for ci in 0..cin {
                let iplane = &input[ci * hw..(ci + 1) * hw];
                let base = (co * cin + ci) * 9;
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y0, y1) = span(h, dy);
                    for kx in 0..3 {
                        let dxo = kx as isize - 1;
                        let (x0, x1) = span(w, dxo);
                        let wv = weight[base + ky * 3 + kx];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let s0 = sy * w + (x0 as isize + dxo) as usize;
                            let src = &iplane[s0..s0 + (x1 - x0)];
                            let g = &gplane[y * w + x0..y * w + x1];
                            acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(dx) = dx.as_mut() {
                                let off = n * cin * hw + ci * hw + s0;
                                let dst = &mut dx.data[off..off + (x1 - x0)];
                                for (d, &gv) in dst.iter_mut().zip(g) {
                                    *d += wv * gv;
                                }
                            }
                        }
                        dweight[base + ky * 3 + kx] += acc;
                    }
                }
            }
        }
    }
    (dweight, dx)
}

/// Output index range along one axis for a kernel offset of `d`.
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

pub struct BatchNormCache {
    pub x_hat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Normalises each channel over batch and spatial positions (training mode).
pub fn batchnorm_train(x: &Activations, gamma: &[f64], beta: &[f64], eps: f64) -> (Activations, BatchNormCache) {
    let (c, hw) = (x.c, x.plane());
    let count = (x.n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for n in 0..x.n {
        for ch in 0..c {
            let p = &x.data[(n * c + ch) * hw..(n * c + ch + 1) * hw];
            mean[ch] += p.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for n in 0..x.n {
        for ch in 0..c {
            let p = &x.data[(n * c + ch) * hw..(n * c + ch + 1) * hw];
            var[ch] += p.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = x.shape_like();
    let mut x_hat = vec![0.0; x.data.len()];
    for n in 0..x.n {
        for ch in 0..c {
            let r = (n * c + ch) * hw..(n * c + ch + 1) * hw;
            for i in r {
                let xh = (x.data[i] - mean[ch]) * inv_std[ch];
                x_hat[i] = xh;
                out.data[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (out, BatchNormCache { x_hat, inv_std, mean, var })
}

pub fn batchnorm_eval(x: &Activations, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Activations {
    let (c, hw) = (x.c, x.plane());
    let mut out = x.shape_like();
    for n in 0..x.n {
        for ch in 0..c {
            let scale = gamma[ch] / (var[ch] + eps).sqrt();
            let shift = beta[ch] - mean[ch] * scale;
            let r = (n * c + ch) * hw..(n * c + ch + 1) * hw;
            for i in r {
                out.data[i] = x.data[i] * scale + shift;
            }
        }
    }
    out
}

/// Returns (dgamma, dbeta, dx).
pub fn batchnorm_backward(dout: &Activations, gamma: &[f64], cache: &BatchNormCache) -> (Vec<f64>, Vec<f64>, Activations) {
    let (c, hw) = (dout.c, dout.plane());
    let count = (dout.n * hw) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for n in 0..dout.n {
        for ch in 0..c {
            let r = (n * c + ch) * hw..(n * c + ch + 1) * hw;
            for i in r {
                dbeta[ch] += dout.data[i];
                dgamma[ch] += dout.data[i] * cache.x_hat[i];
            }
        }
    }
    let mut dx = dout.shape_like();
    for n in 0..dout.n {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / count;
            let r = (n * c + ch) * hw..(n * c + ch + 1) * hw;
            for i in r {
                dx.data[i] = k * (count * dout.data[i] - dbeta[ch] - cache.x_hat[i] * dgamma[ch]);
            }
        }
    }
    (dgamma, dbeta, dx)
}

pub fn relu_forward(x: &mut Activations) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `dout` where the (post-activation) output was not positive.
pub fn relu_backward(out: &Activations, dout: &mut Activations) {
    for (d, &o) in dout.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

/// 2×2 max pooling, stride 2; odd trailing rows and columns are dropped.
/// Returns the output and the flat input index of each maximum.
pub fn maxpool2_forward(x: &Activations) -> (Activations, Vec<usize>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Activations::zeros(x.n, x.c, oh, ow);
    let mut argmax = vec![0usize; out.data.len()];
    for nc in 0..x.n * x.c {
        let base = nc * x.h * x.w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + 2 * y * x.w + 2 * xo;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * x.w + 2 * xo + dx;
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                let o = nc * oh * ow + y * ow + xo;
                out.data[o] = x.data[best];
                argmax[o] = best;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2_backward(input_shape: (usize, usize, usize, usize), argmax: &[usize], dout: &Activations) -> Activations {
    let (n, c, h, w) = input_shape;
    let mut dx = Activations::zeros(n, c, h, w);
    for (&src, &g) in argmax.iter().zip(&dout.data) {
        dx.data[src] += g;
    }
    dx
}

pub fn global_avg_pool_forward(x: &Activations) -> Activations {
    let hw = x.plane();
    let mut out = Activations::zeros(x.n, x.c, 1, 1);
    for (o, plane) in out.data.iter_mut().zip(x.data.chunks_exact(hw)) {
        *o = plane.iter().sum::<f64>() / hw as f64;
    }
    out
}

pub fn global_avg_pool_backward(input_shape: (usize, usize, usize, usize), dout: &Activations) -> Activations {
    let (n, c, h, w) = input_shape;
    let hw = h * w;
    let mut dx = Activations::zeros(n, c, h, w);
    for (plane, &g) in dx.data.chunks_exact_mut(hw).zip(&dout.data) {
        plane.fill(g / hw as f64);
    }
    dx
}

/// `y = x W + b` with `W` stored `[fin][fout]`.
pub fn dense_forward(x: &Activations, weight: &[f64], bias: &[f64], fout: usize) -> Activations {
    let fin = x.sample();
    let mut out = Activations::zeros(x.n, fout, 1, 1);
    for n in 0..x.n {
        let xi = &x.data[n * fin..(n + 1) * fin];
        let yo = &mut out.data[n * fout..(n + 1) * fout];
        yo.copy_from_slice(bias);
        for (i, &xv) in xi.iter().enumerate() {
            let row = &weight[i * fout..(i + 1) * fout];
            for (y, &wv) in yo.iter_mut().zip(row) {
                *y += xv * wv;
            }
        }
    }
    out
}

/// Returns (dW, db, dx).
pub fn dense_backward(x: &Activations, weight: &[f64], dout: &Activations) -> (Vec<f64>, Vec<f64>, Activations) {
    let fin = x.sample();
    let fout = dout.c;
    let mut dw = vec![0.0; fin * fout];
    let mut db = vec![0.0; fout];
    let mut dx = x.shape_like();
    for n in 0..x.n {
        let xi = &x.data[n * fin..(n + 1) * fin];
        let g = &dout.data[n * fout..(n + 1) * fout];
        for (b, &gv) in db.iter_mut().zip(g) {
            *b += gv;
        }
        for i in 0..fin {
            let row = &weight[i * fout..(i + 1) * fout];
            let drow = &mut dw[i * fout..(i + 1) * fout];
            let mut acc = 0.0;
            for ((d, &wv), &gv) in drow.iter_mut().zip(row).zip(g) {
                *d += xi[i] * gv;
                acc += wv * gv;
            }
            dx.data[n * fin + i] = acc;
        }
    }
    (dw, db, dx)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Chains a gradient with respect to softmax outputs back to its inputs.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(dprobs).map(|(p, g)| p * g).sum();
    probs.iter().zip(dprobs).map(|(p, g)| p * (g - dot)).collect()
}
