//! Dense loops shared by the tape primitives and the pure helpers built on them.

pub(crate) const LN_EPS: f64 = 1e-5;

pub fn linear_forward(x: &[f64], n: usize, din: usize, w: &[f64], dout: usize, b: Option<&[f64]>) -> Vec<f64> {
    let mut y = Vec::with_capacity(n * dout);
    for xr in x.chunks_exact(din).take(n) {
        for o in 0..dout {
            let wr = &w[o * din..(o + 1) * din];
            let mut acc = 0.0;
            for (a, b) in xr.iter().zip(wr) {
                acc += a * b;
            }
            y.push(acc + b.map_or(0.0, |b| b[o]));
        }
    }
    y
}

pub(crate) fn linear_backward_input(dy: &[f64], n: usize, dout: usize, w: &[f64], din: usize) -> Vec<f64> {
    let mut dx = vec![0.0; n * din];
    for (dxr, dyr) in dx.chunks_exact_mut(din).zip(dy.chunks_exact(dout)) {
        for (o, &g) in dyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, wv) in dxr.iter_mut().zip(&w[o * din..(o + 1) * din]) {
                *d += g * wv;
            }
        }
    }
    dx
}

pub(crate) fn linear_backward_weight(dy: &[f64], n: usize, dout: usize, x: &[f64], din: usize) -> Vec<f64> {
    let mut dw = vec![0.0; dout * din];
    for (xr, dyr) in x.chunks_exact(din).zip(dy.chunks_exact(dout)).take(n) {
        for (o, &g) in dyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, xv) in dw[o * din..(o + 1) * din].iter_mut().zip(xr) {
                *d += g * xv;
            }
        }
    }
    dw
}

/// Valid `(tap, source token)` pairs of a 3x3 window centred on `(i, j)`.
#[inline]
fn window(i: usize, j: usize, rows: usize, cols: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..9).filter_map(move |t| {
        let si = (i + t / 3).checked_sub(1)?;
        let sj = (j + t % 3).checked_sub(1)?;
        (si < rows && sj < cols).then_some((t, si * cols + sj))
    })
}

pub(crate) fn dwconv_forward(x: &[f64], k: &[f64], rows: usize, cols: usize, ch: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * cols * ch];
    for i in 0..rows {
        for j in 0..cols {
            let dst = (i * cols + j) * ch;
            for (t, src) in window(i, j, rows, cols) {
                let xs = &x[src * ch..(src + 1) * ch];
                for c in 0..ch {
                    y[dst + c] += k[c * 9 + t] * xs[c];
                }
            }
        }
    }
    y
}

pub(crate) fn dwconv_backward(
    dy: &[f64],
    x: &[f64],
    k: &[f64],
    rows: usize,
    cols: usize,
    ch: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    for i in 0..rows {
        for j in 0..cols {
            let dst = (i * cols + j) * ch;
            for (t, src) in window(i, j, rows, cols) {
                for c in 0..ch {
                    let g = dy[dst + c];
                    dx[src * ch + c] += k[c * 9 + t] * g;
                    dk[c * 9 + t] += x[src * ch + c] * g;
                }
            }
        }
    }
    (dx, dk)
}

pub(crate) fn layer_norm_forward(
    x: &[f64],
    n: usize,
    d: usize,
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = Vec::with_capacity(n * d);
    let mut xhat = Vec::with_capacity(n * d);
    let mut rstd = Vec::with_capacity(n);
    for row in x.chunks_exact(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(r);
        for (j, v) in row.iter().enumerate() {
            let h = (v - mean) * r;
            xhat.push(h);
            y.push(h * gamma[j] + beta[j]);
        }
    }
    (y, xhat, rstd)
}

pub(crate) fn layer_norm_backward_input(
    dy: &[f64],
    n: usize,
    d: usize,
    gamma: &[f64],
    xhat: &[f64],
    rstd: &[f64],
) -> Vec<f64> {
    let mut dx = Vec::with_capacity(n * d);
    for ((grow, hrow), &r) in dy.chunks_exact(d).zip(xhat.chunks_exact(d)).zip(rstd) {
        let mut mean_g = 0.0;
        let mut mean_gh = 0.0;
        for j in 0..d {
            let gg = grow[j] * gamma[j];
            mean_g += gg;
            mean_gh += gg * hrow[j];
        }
        mean_g /= d as f64;
        mean_gh /= d as f64;
        for j in 0..d {
            dx.push(r * (grow[j] * gamma[j] - mean_g - hrow[j] * mean_gh));
        }
    }
    dx
}
