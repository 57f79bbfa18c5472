//! Inner loops. Row-major everywhere; the innermost loop always runs over a
//! contiguous slice so it vectorizes. Accumulation order per output element
//! never depends on the batch size, so a frame's result is identical whether
//! it is evaluated alone or inside a batch.

#[inline]
pub(crate) fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent partial sums; fixed order keeps it deterministic.
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (pa, pb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for j in 0..8 {
            acc[j] += pa[j] * pb[j];
        }
    }
    let mut tail = 0.0f32;
    for j in chunks * 8..a.len() {
        tail += a[j] * b[j];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `out[m×n] += a[m×k] · w[k×n]`.
pub(crate) fn matmul_acc(a: &[f32], w: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                axpy(av, &w[kk * n..(kk + 1) * n], orow);
            }
        }
    }
}

/// `da[m×k] += dy[m×n] · wᵀ`.
pub(crate) fn matmul_grad_a(dy: &[f32], w: &[f32], da: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dyrow = &dy[i * n..(i + 1) * n];
        for kk in 0..k {
            da[i * k + kk] += dot(dyrow, &w[kk * n..(kk + 1) * n]);
        }
    }
}

/// `dw[k×n] += aᵀ · dy`.
pub(crate) fn matmul_grad_w(a: &[f32], dy: &[f32], dw: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dyrow = &dy[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av != 0.0 {
                axpy(av, dyrow, &mut dw[kk * n..(kk + 1) * n]);
            }
        }
    }
}

/// Range of output positions `l` for which input index `l + tap - pad_left` is valid.
#[inline]
fn conv_range(tap: usize, pad_left: usize, len_in: usize, len_out: usize) -> (usize, usize) {
    let lo = pad_left.saturating_sub(tap);
    let hi = (len_in + pad_left).saturating_sub(tap).min(len_out);
    (lo, hi.max(lo))
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub taps: usize,
    pub pad_left: usize,
}

pub(crate) fn conv1d_forward(x: &[f32], w: &[f32], out: &mut [f32], d: &ConvDims) {
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let orow = &mut out[(b * d.c_out + o) * d.len_out..][..d.len_out];
            for c in 0..d.c_in {
                let xrow = &x[(b * d.c_in + c) * d.len_in..][..d.len_in];
                for t in 0..d.taps {
                    let wv = w[(o * d.c_in + c) * d.taps + t];
                    let (lo, hi) = conv_range(t, d.pad_left, d.len_in, d.len_out);
                    if lo < hi {
                        let src = lo + t - d.pad_left;
                        axpy(wv, &xrow[src..src + (hi - lo)], &mut orow[lo..hi]);
                    }
                }
            }
        }
    }
}

pub(crate) fn conv1d_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    dx: Option<&mut [f32]>,
    dw: Option<&mut [f32]>,
    d: &ConvDims,
) {
    if let Some(dw) = dw {
        for b in 0..d.batch {
            for o in 0..d.c_out {
                let dyrow = &dy[(b * d.c_out + o) * d.len_out..][..d.len_out];
                for c in 0..d.c_in {
                    let xrow = &x[(b * d.c_in + c) * d.len_in..][..d.len_in];
                    for t in 0..d.taps {
                        let (lo, hi) = conv_range(t, d.pad_left, d.len_in, d.len_out);
                        if lo < hi {
                            let src = lo + t - d.pad_left;
                            dw[(o * d.c_in + c) * d.taps + t] +=
                                dot(&dyrow[lo..hi], &xrow[src..src + (hi - lo)]);
                        }
                    }
                }
            }
        }
    }
    if let Some(dx) = dx {
        for b in 0..d.batch {
            for o in 0..d.c_out {
                let dyrow = &dy[(b * d.c_out + o) * d.len_out..][..d.len_out];
                for c in 0..d.c_in {
                    let dxrow = &mut dx[(b * d.c_in + c) * d.len_in..][..d.len_in];
                    for t in 0..d.taps {
                        let wv = w[(o * d.c_in + c) * d.taps + t];
                        let (lo, hi) = conv_range(t, d.pad_left, d.len_in, d.len_out);
                        if lo < hi {
                            let src = lo + t - d.pad_left;
                            axpy(wv, &dyrow[lo..hi], &mut dxrow[src..src + (hi - lo)]);
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
