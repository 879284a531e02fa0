use crate::error::{Error, Result};

/// Discretized single-input single-output diagonal SSM, parameters stored per token.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteParams {
    pub state: usize,
    /// `[len * state]`
    pub a_bar: Vec<f64>,
    /// `[len * state]`
    pub b_bar: Vec<f64>,
    /// `[len * state]`
    pub c: Vec<f64>,
    pub d: f64,
}

impl DiscreteParams {
    /// Repeats one `(a_bar, b_bar, c)` triple over `len` tokens.
    pub fn time_invariant(a_bar: &[f64], b_bar: &[f64], c: &[f64], d: f64, len: usize) -> Self {
        let tile = |v: &[f64]| v.iter().copied().cycle().take(v.len() * len).collect();
        Self { state: a_bar.len(), a_bar: tile(a_bar), b_bar: tile(b_bar), c: tile(c), d }
    }

    pub fn len(&self) -> usize {
        if self.state == 0 {
            0
        } else {
            self.a_bar.len() / self.state
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[inline(always)]
pub(crate) fn step(a_bar: f64, h: f64, b_bar: f64, x: f64) -> f64 {
    a_bar * h + b_bar * x
}

/// Runs `h_k = a_bar_k h_{k-1} + b_bar_k x_k`, `y_k = c_k . h_k + d x_k` left to right.
///
/// Returns the outputs and the final state.
pub fn ssm_scan(x: &[f64], params: &DiscreteParams, h0: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = params.state;
    let len = x.len();
    for (name, v) in [("a_bar", &params.a_bar), ("b_bar", &params.b_bar), ("c", &params.c)] {
        if v.len() != len * n {
            return Err(Error::shape("ssm_scan", format!("{name} has {} values, expected {}", v.len(), len * n)));
        }
    }
    let mut h = match h0 {
        Some(h0) if h0.len() != n => {
            return Err(Error::shape("ssm_scan", format!("h0 has {} values, state is {n}", h0.len())))
        }
        Some(h0) => h0.to_vec(),
        None => vec![0.0; n],
    };
    if x.iter().chain(&h).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "ssm_scan" });
    }
    let mut y = Vec::with_capacity(len);
    for (k, &xk) in x.iter().enumerate() {
        let row = k * n..(k + 1) * n;
        let mut acc = 0.0;
        for (((hs, &ab), &bb), &c) in
            h.iter_mut().zip(&params.a_bar[row.clone()]).zip(&params.b_bar[row.clone()]).zip(&params.c[row])
        {
            *hs = step(ab, *hs, bb, xk);
            acc += c * *hs;
        }
        y.push(acc + params.d * xk);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "ssm_scan" });
    }
    Ok((y, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_sum() {
        let p = DiscreteParams::time_invariant(&[1.0], &[1.0], &[1.0], 0.0, 3);
        let (y, h) = ssm_scan(&[1.0, 1.0, 1.0], &p, None).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
        assert_eq!(h, vec![3.0]);
    }

    #[test]
    fn memoryless() {
        let x = [0.3, -2.0, 5.5, 1.0];
        let p = DiscreteParams::time_invariant(&[0.0], &[1.0], &[1.0], 0.0, x.len());
        assert_eq!(ssm_scan(&x, &p, None).unwrap().0, x.to_vec());
    }

    #[test]
    fn with_skip() {
        let p = DiscreteParams::time_invariant(&[0.5], &[1.0], &[1.0], 1.0, 2);
        assert_eq!(ssm_scan(&[2.0, 0.0], &p, None).unwrap().0, vec![4.0, 1.0]);
    }

    #[test]
    fn initial_state_and_errors() {
        let p = DiscreteParams::time_invariant(&[0.5], &[1.0], &[1.0], 0.0, 1);
        assert_eq!(ssm_scan(&[0.0], &p, Some(&[2.0])).unwrap().0, vec![1.0]);
        assert!(ssm_scan(&[f64::NAN], &p, None).is_err());
        assert!(ssm_scan(&[1.0, 2.0], &p, None).is_err());
        assert!(ssm_scan(&[1.0], &p, Some(&[1.0, 2.0])).is_err());
    }
}
