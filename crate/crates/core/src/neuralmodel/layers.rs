//! Per-sample forward and backward passes over the flat parameter vector.

use super::{ConvLayout, DenseLayout, Layout};

pub(crate) struct Cache {
    conv_inputs: Vec<Vec<f64>>,
    /// Post-ReLU conv outputs, before pooling.
    conv_acts: Vec<Vec<f64>>,
    pool_idx: Vec<Vec<usize>>,
    /// Input of every dense layer, head included.
    dense_inputs: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl Cache {
    pub(crate) fn logits(&self) -> &[f64] {
        &self.logits
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `d`.
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

fn conv_forward(l: &ConvLayout, params: &[f64], input: &[f64]) -> Vec<f64> {
    let (h, w, k) = (l.height, l.width, l.kernel);
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; l.c_out * hw];
    for f in 0..l.c_out {
        let out_f = &mut out[f * hw..(f + 1) * hw];
        out_f.fill(params[l.b_off + f]);
        for c in 0..l.c_in {
            let in_c = &input[c * hw..(c + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = span(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = span(w, dx);
                    let wv = params[l.w_off + ((f * l.c_in + c) * k + ky) * k + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let o = &mut out_f[y * w + x0..y * w + x1];
                        let i = &in_c[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (a, b) in o.iter_mut().zip(i) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    for v in &mut out {
        *v = v.max(0.0);
    }
    out
}

/// `dout` is the gradient w.r.t. the post-ReLU output, already masked.
fn conv_backward(
    l: &ConvLayout,
    params: &[f64],
    input: &[f64],
    dout: &[f64],
    grad: &mut [f64],
    din: Option<&mut [f64]>,
) {
    let (h, w, k) = (l.height, l.width, l.kernel);
    let hw = h * w;
    let pad = (k / 2) as isize;
    for f in 0..l.c_out {
        grad[l.b_off + f] += dout[f * hw..(f + 1) * hw].iter().sum::<f64>();
    }
    for f in 0..l.c_out {
        let d_f = &dout[f * hw..(f + 1) * hw];
        for c in 0..l.c_in {
            let in_c = &input[c * hw..(c + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = span(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = span(w, dx);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let d = &d_f[y * w + x0..y * w + x1];
                        let i = &in_c[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        acc += d.iter().zip(i).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad[l.w_off + ((f * l.c_in + c) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
    let Some(din) = din else { return };
    for f in 0..l.c_out {
        let d_f = &dout[f * hw..(f + 1) * hw];
        for c in 0..l.c_in {
            let din_c = &mut din[c * hw..(c + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = span(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = span(w, dx);
                    let wv = params[l.w_off + ((f * l.c_in + c) * k + ky) * k + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let d = &d_f[y * w + x0..y * w + x1];
                        let o = &mut din_c[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (a, b) in o.iter_mut().zip(d) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 max-pool (floor); returns pooled values and the argmax of each window.
fn max_pool(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[j] > input[best] {
                        best = j;
                    }
                }
                out.push(input[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

fn dense_forward(l: &DenseLayout, params: &[f64], input: &[f64], relu: bool) -> Vec<f64> {
    (0..l.n_out)
        .map(|o| {
            let row = &params[l.w_off + o * l.n_in..l.w_off + (o + 1) * l.n_in];
            let z = params[l.b_off + o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            if relu {
                z.max(0.0)
            } else {
                z
            }
        })
        .collect()
}

pub(crate) fn forward(layout: &Layout, params: &[f64], image: &[f64], side: &[f64]) -> Cache {
    let mut conv_inputs = Vec::with_capacity(layout.convs.len());
    let mut conv_acts = Vec::with_capacity(layout.convs.len());
    let mut pool_idx = Vec::with_capacity(layout.convs.len());
    let mut x = image.to_vec();
    for l in &layout.convs {
        let act = conv_forward(l, params, &x);
        let (pooled, idx) = max_pool(&act, l.c_out, l.height, l.width);
        conv_inputs.push(std::mem::replace(&mut x, pooled));
        conv_acts.push(act);
        pool_idx.push(idx);
    }
    x.extend_from_slice(side);
    let mut dense_inputs = Vec::with_capacity(layout.dense.len());
    let last = layout.dense.len() - 1;
    for (i, l) in layout.dense.iter().enumerate() {
        let y = dense_forward(l, params, &x, i < last);
        dense_inputs.push(std::mem::replace(&mut x, y));
    }
    Cache {
        conv_inputs,
        conv_acts,
        pool_idx,
        dense_inputs,
        logits: x,
    }
}

/// Accumulate `d loss / d params` into `grad` given `d loss / d logits`.
pub(crate) fn backward(layout: &Layout, params: &[f64], cache: &Cache, dlogits: &[f64], grad: &mut [f64]) {
    let mut d = dlogits.to_vec();
    for (i, l) in layout.dense.iter().enumerate().rev() {
        let input = &cache.dense_inputs[i];
        let mut din = vec![0.0; l.n_in];
        for (o, &g) in d.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[l.b_off + o] += g;
            let row = l.w_off + o * l.n_in;
            for j in 0..l.n_in {
                grad[row + j] += g * input[j];
                din[j] += g * params[row + j];
            }
        }
        if i > 0 {
            // Input of this layer is the ReLU output of the previous one.
            for (dj, xj) in din.iter_mut().zip(input) {
                if *xj <= 0.0 {
                    *dj = 0.0;
                }
            }
        }
        d = din;
    }
    d.truncate(layout.flat_dim);
    for (b, l) in layout.convs.iter().enumerate().rev() {
        let act = &cache.conv_acts[b];
        let mut dact = vec![0.0; act.len()];
        for (g, &j) in d.iter().zip(&cache.pool_idx[b]) {
            if act[j] > 0.0 {
                dact[j] += g;
            }
        }
        if b > 0 {
            let mut din = vec![0.0; cache.conv_inputs[b].len()];
            conv_backward(l, params, &cache.conv_inputs[b], &dact, grad, Some(&mut din));
            d = din;
        } else {
            conv_backward(l, params, &cache.conv_inputs[b], &dact, grad, None);
        }
    }
}
