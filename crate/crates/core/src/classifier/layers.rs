//! Forward and backward kernels over flat `f64` buffers.
//!
//! Activations are `channels x len`, channel-major. Conv weights are laid out
//! `[out][in][tap]`, dense weights `[out][in]`. Convolutions use stride 1 and
//! zero "same" padding, so the length never changes.

pub(crate) fn conv1d_forward(
    w: &[f64],
    b: &[f64],
    x: &[f64],
    in_ch: usize,
    out_ch: usize,
    len: usize,
    kernel: usize,
) -> alloc::vec::Vec<f64> {
    let pad = kernel / 2;
    let mut y = alloc::vec![0.0; out_ch * len];
    for o in 0..out_ch {
        let yo = &mut y[o * len..(o + 1) * len];
        yo.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..in_ch {
            let xc = &x[c * len..(c + 1) * len];
            let wk = &w[(o * in_ch + c) * kernel..(o * in_ch + c + 1) * kernel];
            for (t, &wt) in wk.iter().enumerate() {
                // y[i] += wt * x[i + t - pad]
                let lo = pad.saturating_sub(t);
                let hi = (len + pad).saturating_sub(t).min(len);
                for i in lo..hi {
                    yo[i] += wt * xc[i + t - pad];
                }
            }
        }
    }
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    w: &[f64],
    x: &[f64],
    gy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    in_ch: usize,
    out_ch: usize,
    len: usize,
    kernel: usize,
) -> alloc::vec::Vec<f64> {
    let pad = kernel / 2;
    let mut gx = alloc::vec![0.0; in_ch * len];
    for o in 0..out_ch {
        let go = &gy[o * len..(o + 1) * len];
        gb[o] += go.iter().sum::<f64>();
        for c in 0..in_ch {
            let xc = &x[c * len..(c + 1) * len];
            let base = (o * in_ch + c) * kernel;
            for t in 0..kernel {
                let lo = pad.saturating_sub(t);
                let hi = (len + pad).saturating_sub(t).min(len);
                let wt = w[base + t];
                let mut acc = 0.0;
                let gxc = &mut gx[c * len..(c + 1) * len];
                for i in lo..hi {
                    acc += go[i] * xc[i + t - pad];
                    gxc[i + t - pad] += go[i] * wt;
                }
                gw[base + t] += acc;
            }
        }
    }
    gx
}

pub(crate) fn dense_forward(w: &[f64], b: &[f64], x: &[f64], inp: usize, out: usize) -> alloc::vec::Vec<f64> {
    (0..out)
        .map(|o| {
            let row = &w[o * inp..(o + 1) * inp];
            b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

pub(crate) fn dense_backward(
    w: &[f64],
    x: &[f64],
    gy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    inp: usize,
    out: usize,
) -> alloc::vec::Vec<f64> {
    let mut gx = alloc::vec![0.0; inp];
    for o in 0..out {
        let g = gy[o];
        gb[o] += g;
        if g == 0.0 {
            continue;
        }
        let row = &w[o * inp..(o + 1) * inp];
        let grow = &mut gw[o * inp..(o + 1) * inp];
        for i in 0..inp {
            grow[i] += g * x[i];
            gx[i] += g * row[i];
        }
    }
    gx
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `g` where the ReLU output `y` was not positive.
pub(crate) fn relu_mask(g: &mut [f64], y: &[f64]) {
    for (gi, &yi) in g.iter_mut().zip(y) {
        if yi <= 0.0 {
            *gi = 0.0;
        }
    }
}
