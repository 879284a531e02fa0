//! Chunk-parallel evaluation of the selective scan.
//!
//! Each step of the recurrence is the affine map `h -> a h + b`. Two steps compose as
//! `(a2, b2) o (a1, b1) = (a1 a2, a2 b1 + b2)`, which is associative, so every chunk
//! reduces independently to one affine map per state element. Chaining those maps gives
//! the state entering each chunk, and a second parallel pass re-runs every chunk from
//! its carry. Scratch memory is one map per chunk rather than one per token.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ssm_core::recurrence::step;
use crate::ssm_core::selective::{check_input, select, SelectiveScanParams};
use crate::ssm_core::zoh::input_coefficient;

/// One affine step `h -> a h + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { a: 1.0, b: 0.0 };

    /// `self` applied after `first`.
    #[inline]
    pub fn after(self, first: Affine) -> Affine {
        Affine { a: first.a * self.a, b: self.a * first.b + self.b }
    }

    #[inline]
    pub fn apply(self, h: f64) -> f64 {
        self.a * h + self.b
    }
}

/// Same result as [`selective_scan_forward`](super::selective_scan_forward), evaluated in
/// chunks of `chunk` tokens with carried state.
pub fn selective_scan_chunked(x: &[f64], len: usize, p: &SelectiveScanParams, chunk: usize) -> Result<Vec<f64>> {
    if chunk == 0 {
        return Err(Error::Config("chunk length must be at least 1".into()));
    }
    check_input(x, len, p)?;
    let (ch, n) = (p.channels, p.state);
    let width = ch * n;
    let sel = select(x, len, p);
    let starts: Vec<usize> = (0..len).step_by(chunk).collect();
    if starts.is_empty() {
        return Ok(Vec::new());
    }

    // calls `f(slot, a_bar, b_bar, x)` for every state element of token k
    let discretized = |k: usize, f: &mut dyn FnMut(usize, f64, f64, f64)| {
        let bk = &sel.b[k * n..(k + 1) * n];
        for c in 0..ch {
            let dt = sel.delta[k * ch + c];
            let xv = x[k * ch + c];
            for j in 0..n {
                let z = dt * p.a[c * n + j];
                let ab = z.exp();
                let bb = input_coefficient(dt, z, ab) * bk[j];
                f(c * n + j, ab, bb, xv);
            }
        }
    };

    // the last chunk's map is never needed
    let maps: Vec<Vec<Affine>> = starts[..starts.len() - 1]
        .par_iter()
        .map(|&start| {
            let mut acc = vec![Affine::IDENTITY; width];
            for k in start..start + chunk {
                discretized(k, &mut |s, ab, bb, xv| acc[s] = Affine { a: ab, b: bb * xv }.after(acc[s]));
            }
            acc
        })
        .collect();

    // carries[i] = state entering chunk i
    let mut carries = Vec::with_capacity(starts.len());
    carries.push(vec![0.0; width]);
    for map in &maps {
        let prev = carries.last().unwrap();
        let next = map.iter().zip(prev).map(|(m, &h)| m.apply(h)).collect();
        carries.push(next);
    }

    let y_chunks: Vec<Vec<f64>> = starts
        .par_iter()
        .zip(carries.into_par_iter())
        .map(|(&start, mut h)| {
            let end = (start + chunk).min(len);
            let mut y = Vec::with_capacity((end - start) * ch);
            let mut acc = vec![0.0; ch];
            for k in start..end {
                let ck = &sel.c[k * n..(k + 1) * n];
                acc.fill(0.0);
                discretized(k, &mut |s, ab, bb, xv| {
                    h[s] = step(ab, h[s], bb, xv);
                    acc[s / n] += ck[s % n] * h[s];
                });
                y.extend(acc.iter().enumerate().map(|(c, a)| a + p.d[c] * x[k * ch + c]));
            }
            y
        })
        .collect();

    let y: Vec<f64> = y_chunks.concat();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "selective_scan_chunked" });
    }
    Ok(y)
}
