//! Selective (input-dependent) scan with exact reverse-mode gradients.
//!
//! For every token `x_k` (a `channels`-vector):
//!
//! ```text
//! s_k        = w_delta . x_k
//! dt_{k,c}   = softplus(s_k + b_delta_c)
//! B_k        = W_B x_k,   C_k = W_C x_k                  (state-vectors)
//! h_{k,c,n}  = exp(dt a_{c,n}) h_{k-1,c,n} + dt phi1(dt a_{c,n}) B_{k,n} x_{k,c}
//! y_{k,c}    = sum_n C_{k,n} h_{k,c,n} + D_c x_{k,c}
//! ```

use crate::error::{Error, Result};
use crate::ssm_core::recurrence::step;
use crate::ssm_core::zoh::{input_coefficient, phi1_prime};

#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveScanParams {
    pub channels: usize,
    pub state: usize,
    /// Diagonal state matrix `[channels * state]`, negative for a stable system.
    pub a: Vec<f64>,
    /// `[channels]`
    pub w_delta: Vec<f64>,
    /// `[channels]`
    pub b_delta: Vec<f64>,
    /// `[state * channels]`
    pub w_b: Vec<f64>,
    /// `[state * channels]`
    pub w_c: Vec<f64>,
    /// `[channels]`
    pub d: Vec<f64>,
}

impl SelectiveScanParams {
    /// `a = -(1..=state)` per channel, zero projections, unit skip and the given step bias.
    pub fn s4d_real(channels: usize, state: usize, delta_bias: f64) -> Self {
        let a = (0..channels).flat_map(|_| (1..=state).map(|n| -(n as f64))).collect();
        Self {
            channels,
            state,
            a,
            w_delta: vec![0.0; channels],
            b_delta: vec![delta_bias; channels],
            w_b: vec![0.0; state * channels],
            w_c: vec![0.0; state * channels],
            d: vec![1.0; channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, n) = (self.channels, self.state);
        let checks = [
            ("a", self.a.len(), c * n),
            ("w_delta", self.w_delta.len(), c),
            ("b_delta", self.b_delta.len(), c),
            ("w_b", self.w_b.len(), n * c),
            ("w_c", self.w_c.len(), n * c),
            ("d", self.d.len(), c),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::shape("selective_scan", format!("{name} has {got} values, expected {want}")));
            }
        }
        Ok(())
    }
}

/// Gradients of a scalar loss with respect to every input of the selective scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrads {
    pub dx: Vec<f64>,
    pub da: Vec<f64>,
    pub dw_delta: Vec<f64>,
    pub db_delta: Vec<f64>,
    pub dw_b: Vec<f64>,
    pub dw_c: Vec<f64>,
    pub dd: Vec<f64>,
}

/// Activations kept by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ScanSaved {
    len: usize,
    x: Vec<f64>,
    /// `[len * channels]`
    delta: Vec<f64>,
    /// `sigmoid(s_k + b_delta_c)`, the softplus derivative.
    delta_slope: Vec<f64>,
    /// `[len * state]`
    b: Vec<f64>,
    c: Vec<f64>,
    /// `[len * channels * state]`
    a_bar: Vec<f64>,
    h: Vec<f64>,
}

impl ScanSaved {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Per-token step sizes `[len * channels]`.
    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// Per-token input projections `[len * state]`.
    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Per-token output projections `[len * state]`.
    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// Hidden states after each token `[len * channels * state]`.
    pub fn states(&self) -> &[f64] {
        &self.h
    }
}

#[inline]
pub(crate) fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else if u < -30.0 {
        u.exp()
    } else {
        u.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Step sizes and input/output projections for every token.
pub(crate) struct Selection {
    pub delta: Vec<f64>,
    pub delta_slope: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

pub(crate) fn select(x: &[f64], len: usize, p: &SelectiveScanParams) -> Selection {
    let (ch, n) = (p.channels, p.state);
    let mut delta = Vec::with_capacity(len * ch);
    let mut delta_slope = Vec::with_capacity(len * ch);
    let mut b = Vec::with_capacity(len * n);
    let mut c = Vec::with_capacity(len * n);
    for xk in x.chunks_exact(ch) {
        let s = dot(&p.w_delta, xk);
        for &bias in &p.b_delta {
            let u = s + bias;
            delta.push(softplus(u));
            delta_slope.push(sigmoid(u));
        }
        b.extend(p.w_b.chunks_exact(ch).map(|w| dot(w, xk)));
        c.extend(p.w_c.chunks_exact(ch).map(|w| dot(w, xk)));
    }
    Selection { delta, delta_slope, b, c }
}

pub(crate) fn check_input(x: &[f64], len: usize, p: &SelectiveScanParams) -> Result<()> {
    p.validate()?;
    if len == 0 {
        return Err(Error::shape("selective_scan", "sequence length must be at least 1"));
    }
    if x.len() != len * p.channels {
        return Err(Error::shape(
            "selective_scan",
            format!("x has {} values, expected {len} x {}", x.len(), p.channels),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "selective_scan" });
    }
    Ok(())
}

/// Runs the selective scan over `x` (`[len, channels]`, token-major).
pub fn selective_scan_forward(x: &[f64], len: usize, p: &SelectiveScanParams) -> Result<(Vec<f64>, ScanSaved)> {
    check_input(x, len, p)?;
    let (ch, n) = (p.channels, p.state);
    let sel = select(x, len, p);
    let mut h = vec![0.0; ch * n];
    let mut y = Vec::with_capacity(len * ch);
    let mut a_bar_all = Vec::with_capacity(len * ch * n);
    let mut h_all = Vec::with_capacity(len * ch * n);

    for k in 0..len {
        let bk = &sel.b[k * n..(k + 1) * n];
        let ck = &sel.c[k * n..(k + 1) * n];
        for c in 0..ch {
            let dt = sel.delta[k * ch + c];
            let xv = x[k * ch + c];
            let a_row = &p.a[c * n..(c + 1) * n];
            let h_row = &mut h[c * n..(c + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                let z = dt * a_row[j];
                let ab = z.exp();
                let bb = input_coefficient(dt, z, ab) * bk[j];
                h_row[j] = step(ab, h_row[j], bb, xv);
                acc += ck[j] * h_row[j];
                a_bar_all.push(ab);
            }
            h_all.extend_from_slice(h_row);
            y.push(acc + p.d[c] * xv);
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "selective_scan" });
    }
    let saved = ScanSaved {
        len,
        x: x.to_vec(),
        delta: sel.delta,
        delta_slope: sel.delta_slope,
        b: sel.b,
        c: sel.c,
        a_bar: a_bar_all,
        h: h_all,
    };
    Ok((y, saved))
}

/// Back-propagates `dy` (`[len, channels]`) through the forward call that produced `saved`.
pub fn selective_scan_backward(p: &SelectiveScanParams, saved: &ScanSaved, dy: &[f64]) -> Result<ScanGrads> {
    p.validate()?;
    let (len, ch, n) = (saved.len, p.channels, p.state);
    if dy.len() != len * ch || saved.x.len() != len * ch || saved.h.len() != len * ch * n {
        return Err(Error::shape(
            "selective_scan_backward",
            format!("dy has {} values, saved forward is {len} x {ch} (state {n})", dy.len()),
        ));
    }
    let x = &saved.x;
    let mut g = ScanGrads {
        dx: vec![0.0; len * ch],
        da: vec![0.0; ch * n],
        dw_delta: vec![0.0; ch],
        db_delta: vec![0.0; ch],
        dw_b: vec![0.0; n * ch],
        dw_c: vec![0.0; n * ch],
        dd: vec![0.0; ch],
    };
    // dL/dh_k carried backwards through the recurrence
    let mut gh = vec![0.0; ch * n];
    let mut d_delta = vec![0.0; ch];
    let mut d_b = vec![0.0; n];
    let mut d_c = vec![0.0; n];

    for k in (0..len).rev() {
        let bk = &saved.b[k * n..(k + 1) * n];
        let ck = &saved.c[k * n..(k + 1) * n];
        d_b.iter_mut().for_each(|v| *v = 0.0);
        d_c.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..ch {
            let idx = k * ch + c;
            let gy = dy[idx];
            let xv = x[idx];
            let dt = saved.delta[idx];
            g.dd[c] += gy * xv;
            let mut dx = gy * p.d[c];
            let mut ddt = 0.0;
            let base = idx * n;
            for j in 0..n {
                let a = p.a[c * n + j];
                let ab = saved.a_bar[base + j];
                let h_k = saved.h[base + j];
                let h_prev = if k > 0 { saved.h[base + j - ch * n] } else { 0.0 };
                let z = dt * a;
                let q = input_coefficient(dt, z, ab);

                let ghj = &mut gh[c * n + j];
                *ghj += gy * ck[j];
                d_c[j] += gy * h_k;

                let gv = *ghj;
                let d_ab = gv * h_prev;
                let d_q = gv * bk[j] * xv;
                d_b[j] += gv * q * xv;
                dx += gv * q * bk[j];
                ddt += d_ab * a * ab + d_q * ab;
                g.da[c * n + j] += d_ab * dt * ab + d_q * dt * dt * phi1_prime(z, ab);
                *ghj = gv * ab;
            }
            g.dx[idx] += dx;
            d_delta[c] = ddt;
        }

        let xk = &x[k * ch..(k + 1) * ch];
        let mut ds = 0.0;
        for c in 0..ch {
            let du = d_delta[c] * saved.delta_slope[k * ch + c];
            g.db_delta[c] += du;
            ds += du;
        }
        let dxk = &mut g.dx[k * ch..(k + 1) * ch];
        for (i, &xi) in xk.iter().enumerate() {
            g.dw_delta[i] += ds * xi;
            dxk[i] += ds * p.w_delta[i];
        }
        for j in 0..n {
            let (wb, wc) = (&p.w_b[j * ch..(j + 1) * ch], &p.w_c[j * ch..(j + 1) * ch]);
            let (gwb, gwc) = (j * ch..(j + 1) * ch, j * ch..(j + 1) * ch);
            for i in 0..ch {
                dxk[i] += d_b[j] * wb[i] + d_c[j] * wc[i];
            }
            for (dst, &xi) in g.dw_b[gwb].iter_mut().zip(xk) {
                *dst += d_b[j] * xi;
            }
            for (dst, &xi) in g.dw_c[gwc].iter_mut().zip(xk) {
                *dst += d_c[j] * xi;
            }
        }
    }
    Ok(g)
}
