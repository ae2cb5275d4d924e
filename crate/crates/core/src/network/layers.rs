//! Batched forward/backward kernels on flat row-major buffers.
//!
//! Feature maps are laid out `[n][c][h][w]`, dense activations `[n][features]`.
//! Convolutions are stride 1 with symmetric zero padding. Every reduction runs
//! in a fixed order so results do not depend on the thread count.

use rayon::prelude::*;

use super::config::Nonlinearity;
use crate::Real;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvDims {
    fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Output rows `y` (and matching input rows) touched by kernel row `ky`.
    fn span(&self, len: usize, kk: usize) -> (usize, usize) {
        // input index = out index + kk - pad must lie in [0, len)
        let lo = self.pad.saturating_sub(kk);
        let hi = (len + self.pad).saturating_sub(kk).min(len);
        (lo, hi.max(lo))
    }
}

/// `out[n][co] = bias[co] + sum_ci w[co][ci] * input[n][ci]` (cross-correlation).
pub(crate) fn conv_forward<T: Real>(d: ConvDims, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let plane = d.plane();
    let mut out = vec![T::zero(); d.n * d.cout * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, o)| {
        let (n, co) = (idx / d.cout, idx % d.cout);
        o.fill(bias[co]);
        for ci in 0..d.cin {
            let src = &input[(n * d.cin + ci) * plane..][..plane];
            for ky in 0..d.k {
                let (y0, y1) = d.span(d.h, ky);
                for kx in 0..d.k {
                    let wv = weight[((co * d.cin + ci) * d.k + ky) * d.k + kx];
                    let (x0, x1) = d.span(d.w, kx);
                    for y in y0..y1 {
                        let iy = y + ky - d.pad;
                        let orow = &mut o[y * d.w + x0..y * d.w + x1];
                        let irow = &src[iy * d.w + x0 + kx - d.pad..][..x1 - x0];
                        for (ov, &iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Returns `(d_weight, d_bias, d_input)`; `d_input` is skipped when not needed.
pub(crate) fn conv_backward<T: Real>(
    d: ConvDims,
    input: &[T],
    weight: &[T],
    d_out: &[T],
    need_input_grad: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let plane = d.plane();
    let ksq = d.k * d.k;
    let mut d_weight = vec![T::zero(); d.cout * d.cin * ksq];
    d_weight
        .par_chunks_mut(d.cin * ksq)
        .enumerate()
        .for_each(|(co, dw)| {
            for n in 0..d.n {
                let g = &d_out[(n * d.cout + co) * plane..][..plane];
                for ci in 0..d.cin {
                    let src = &input[(n * d.cin + ci) * plane..][..plane];
                    for ky in 0..d.k {
                        let (y0, y1) = d.span(d.h, ky);
                        for kx in 0..d.k {
                            let (x0, x1) = d.span(d.w, kx);
                            let mut acc = T::zero();
                            for y in y0..y1 {
                                let iy = y + ky - d.pad;
                                let grow = &g[y * d.w + x0..y * d.w + x1];
                                let irow = &src[iy * d.w + x0 + kx - d.pad..][..x1 - x0];
                                acc += grow.iter().zip(irow).fold(T::zero(), |s, (&a, &b)| s + a * b);
                            }
                            dw[(ci * d.k + ky) * d.k + kx] += acc;
                        }
                    }
                }
            }
        });
    let d_bias: Vec<T> = (0..d.cout)
        .map(|co| {
            (0..d.n).fold(T::zero(), |s, n| {
                s + d_out[(n * d.cout + co) * plane..][..plane].iter().copied().sum::<T>()
            })
        })
        .collect();
    let d_input = need_input_grad.then(|| {
        let mut d_in = vec![T::zero(); d.n * d.cin * plane];
        d_in.par_chunks_mut(plane).enumerate().for_each(|(idx, di)| {
            let (n, ci) = (idx / d.cin, idx % d.cin);
            for co in 0..d.cout {
                let g = &d_out[(n * d.cout + co) * plane..][..plane];
                for ky in 0..d.k {
                    let (y0, y1) = d.span(d.h, ky);
                    for kx in 0..d.k {
                        let wv = weight[((co * d.cin + ci) * d.k + ky) * d.k + kx];
                        let (x0, x1) = d.span(d.w, kx);
                        for y in y0..y1 {
                            let iy = y + ky - d.pad;
                            let grow = &g[y * d.w + x0..y * d.w + x1];
                            let drow = &mut di[iy * d.w + x0 + kx - d.pad..][..x1 - x0];
                            for (dv, &gv) in drow.iter_mut().zip(grow) {
                                *dv += wv * gv;
                            }
                        }
                    }
                }
            }
        });
        d_in
    });
    (d_weight, d_bias, d_input)
}

/// Per-channel statistics of one training-mode batchnorm pass.
#[derive(Debug, Clone)]
pub(crate) struct BnBatch<T> {
    pub xhat: Vec<T>,
    pub mean: Vec<T>,
    /// Biased (population) variance used for normalisation.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    /// Elements per channel.
    pub count: usize,
}

fn channel_slices<T>(x: &[T], n: usize, c: usize, plane: usize, ch: usize) -> impl Iterator<Item = &[T]> {
    (0..n).map(move |i| &x[(i * c + ch) * plane..][..plane])
}

/// Normalises with the statistics of the batch itself.
pub(crate) fn bn_forward_train<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    plane: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, BnBatch<T>) {
    let count = n * plane;
    let m = T::of(count as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let mu = channel_slices(x, n, c, plane, ch).map(|s| s.iter().copied().sum::<T>()).sum::<T>() / m;
        let v = channel_slices(x, n, c, plane, ch)
            .map(|s| s.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>())
            .sum::<T>()
            / m;
        mean[ch] = mu;
        var[ch] = v;
        inv_std[ch] = T::one() / (v + eps).sqrt();
    }
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for (idx, ((xs, hs), ys)) in x
        .chunks(plane)
        .zip(xhat.chunks_mut(plane))
        .zip(y.chunks_mut(plane))
        .enumerate()
    {
        let ch = idx % c;
        for ((&xv, hv), yv) in xs.iter().zip(hs.iter_mut()).zip(ys.iter_mut()) {
            *hv = (xv - mean[ch]) * inv_std[ch];
            *yv = gamma[ch] * *hv + beta[ch];
        }
    }
    (
        y,
        BnBatch {
            xhat,
            mean,
            var,
            inv_std,
            count,
        },
    )
}

/// Normalises with running statistics.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_forward_eval<T: Real>(
    x: &[T],
    c: usize,
    plane: usize,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Vec<T> {
    let mut y = x.to_vec();
    for (idx, ys) in y.chunks_mut(plane).enumerate() {
        let ch = idx % c;
        let scale = gamma[ch] / (running_var[ch] + eps).sqrt();
        let shift = beta[ch] - running_mean[ch] * scale;
        for v in ys {
            *v = *v * scale + shift;
        }
    }
    y
}

/// Returns `(d_x, d_gamma, d_beta)` for a training-mode pass.
pub(crate) fn bn_backward<T: Real>(
    d_y: &[T],
    batch: &BnBatch<T>,
    n: usize,
    c: usize,
    plane: usize,
    gamma: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let m = T::of(batch.count as f64);
    let mut d_gamma = vec![T::zero(); c];
    let mut d_beta = vec![T::zero(); c];
    for ch in 0..c {
        for (g, h) in channel_slices(d_y, n, c, plane, ch).zip(channel_slices(&batch.xhat, n, c, plane, ch)) {
            d_beta[ch] += g.iter().copied().sum::<T>();
            d_gamma[ch] += g.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>();
        }
    }
    let mut d_x = vec![T::zero(); d_y.len()];
    for (idx, ((dx, g), h)) in d_x
        .chunks_mut(plane)
        .zip(d_y.chunks(plane))
        .zip(batch.xhat.chunks(plane))
        .enumerate()
    {
        let ch = idx % c;
        let k = gamma[ch] * batch.inv_std[ch] / m;
        for ((dv, &gv), &hv) in dx.iter_mut().zip(g).zip(h) {
            *dv = k * (m * gv - d_beta[ch] - hv * d_gamma[ch]);
        }
    }
    (d_x, d_gamma, d_beta)
}

pub(crate) fn activate<T: Real>(x: &mut [T], f: Nonlinearity) {
    match f {
        Nonlinearity::Relu => x.iter_mut().for_each(|v| *v = v.max(T::zero())),
        Nonlinearity::Tanh => x.iter_mut().for_each(|v| *v = v.tanh()),
    }
}

/// Multiplies `grad` in place by the derivative, expressed through the activation output.
pub(crate) fn activate_backward<T: Real>(grad: &mut [T], out: &[T], f: Nonlinearity) {
    match f {
        Nonlinearity::Relu => grad.iter_mut().zip(out).for_each(|(g, &o)| {
            if o <= T::zero() {
                *g = T::zero();
            }
        }),
        Nonlinearity::Tanh => grad
            .iter_mut()
            .zip(out)
            .for_each(|(g, &o)| *g *= T::one() - o * o),
    }
}

/// `y[n][o] = bias[o] + W[o] · x[n]` with `W` stored `[out][in]`.
pub(crate) fn dense_forward<T: Real>(x: &[T], n: usize, fin: usize, weight: &[T], bias: &[T]) -> Vec<T> {
    let fout = bias.len();
    // One pass over each weight row serves the whole batch.
    let cols: Vec<Vec<T>> = weight
        .par_chunks(fin)
        .zip(bias.par_iter())
        .map(|(row, &b)| {
            (0..n)
                .map(|i| b + dot(row, &x[i * fin..][..fin]))
                .collect()
        })
        .collect();
    let mut y = vec![T::zero(); n * fout];
    for (o, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            y[i * fout + o] = v;
        }
    }
    y
}

/// Returns `(d_weight, d_bias, d_x)`.
pub(crate) fn dense_backward<T: Real>(
    x: &[T],
    n: usize,
    fin: usize,
    weight: &[T],
    d_y: &[T],
    need_input_grad: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let fout = d_y.len() / n;
    let mut d_weight = vec![T::zero(); fout * fin];
    d_weight.par_chunks_mut(fin).enumerate().for_each(|(o, dw)| {
        for i in 0..n {
            let g = d_y[i * fout + o];
            if g != T::zero() {
                for (w, &xv) in dw.iter_mut().zip(&x[i * fin..][..fin]) {
                    *w += g * xv;
                }
            }
        }
    });
    let d_bias: Vec<T> = (0..fout)
        .map(|o| (0..n).fold(T::zero(), |s, i| s + d_y[i * fout + o]))
        .collect();
    let d_x = need_input_grad.then(|| {
        // Split the input features across threads; each element accumulates over `o` in order.
        const CHUNK: usize = 4096;
        let mut d_x = vec![T::zero(); n * fin];
        let parts: Vec<Vec<T>> = (0..fin.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(fin);
                let mut part = vec![T::zero(); n * (hi - lo)];
                for o in 0..fout {
                    let row = &weight[o * fin + lo..o * fin + hi];
                    for i in 0..n {
                        let g = d_y[i * fout + o];
                        if g != T::zero() {
                            for (p, &w) in part[i * (hi - lo)..][..hi - lo].iter_mut().zip(row) {
                                *p += g * w;
                            }
                        }
                    }
                }
                part
            })
            .collect();
        for (c, part) in parts.iter().enumerate() {
            let lo = c * CHUNK;
            let width = part.len() / n;
            for i in 0..n {
                d_x[i * fin + lo..][..width].copy_from_slice(&part[i * width..][..width]);
            }
        }
        d_x
    });
    (d_weight, d_bias, d_x)
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // Eight independent accumulators let the compiler vectorise.
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += a[c * 8 + l] * b[c * 8 + l];
        }
    }
    let mut s = acc.iter().copied().sum::<T>();
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}
