//! Continuous-time reference: integrates `h' = A h + B x` with classical RK4, holding
//! each token's input, `B` and `C` constant over its step. Used as a test oracle only.

use crate::error::{Error, Result};

pub const DEFAULT_SUBSTEPS: usize = 1000;

/// Continuous diagonal SSM with token-varying `B`, `C` and step length.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousParams {
    pub channels: usize,
    pub state: usize,
    /// `[channels * state]`
    pub a: Vec<f64>,
    /// `[len * state]`
    pub b: Vec<f64>,
    /// `[len * state]`
    pub c: Vec<f64>,
    /// `[channels]`
    pub d: Vec<f64>,
    /// step length of each token per channel, `[len * channels]`
    pub delta: Vec<f64>,
}

pub fn ode_oracle(p: &ContinuousParams, x: &[f64], substeps: usize) -> Result<Vec<f64>> {
    let (ch, n) = (p.channels, p.state);
    let len = p.delta.len() / ch.max(1);
    if x.len() != len * ch || p.b.len() != len * n || p.c.len() != len * n || p.a.len() != ch * n || p.d.len() != ch {
        return Err(Error::shape("ode_oracle", "inconsistent parameter lengths"));
    }
    let substeps = substeps.max(1);
    let mut h = vec![0.0; ch * n];
    let mut y = Vec::with_capacity(len * ch);
    for k in 0..len {
        for c in 0..ch {
            let xv = x[k * ch + c];
            let s = p.delta[k * ch + c] / substeps as f64;
            let mut acc = 0.0;
            for j in 0..n {
                let a = p.a[c * n + j];
                let u = p.b[k * n + j] * xv;
                let f = |h: f64| a * h + u;
                let mut hv = h[c * n + j];
                for _ in 0..substeps {
                    let k1 = f(hv);
                    let k2 = f(hv + 0.5 * s * k1);
                    let k3 = f(hv + 0.5 * s * k2);
                    let k4 = f(hv + s * k3);
                    hv += s / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                }
                h[c * n + j] = hv;
                acc += p.c[k * n + j] * hv;
            }
            y.push(acc + p.d[c] * xv);
        }
    }
    Ok(y)
}
