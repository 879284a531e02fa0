//! Central-difference gradient verification.

use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// `(input, component)` with the largest deviation inside the worst input.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Max relative error between tape gradients and central differences of the scalar
/// graph built by `f` at `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let g = |tape: &mut Tape, vars: &[Var]| f(tape, vars[0]);
    Ok(finite_diff_report(g, std::slice::from_ref(x), eps, None)?.max_rel_err)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if !v.is_scalar() {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

/// Multi-input check. `components` restricts the comparison to the listed
/// `(input, flat index)` pairs; `None` checks every component of every input.
///
/// The error of one input tensor is `max |g - fd| / max(1e-8, max |fd|)` over its
/// checked components, and the report keeps the largest such error. Scaling by the
/// tensor's own largest derivative keeps components whose true derivative sits
/// below the difference quotient's roundoff (about `1e-16 / eps`) from dominating.
pub fn finite_diff_report<F>(
    f: F,
    inputs: &[Tensor],
    eps: f64,
    components: Option<&[(usize, usize)]>,
) -> Result<FdReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let all: Vec<(usize, usize)>;
    let comps = match components {
        Some(c) => c,
        None => {
            all = inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j))).collect();
            &all
        }
    };

    let mut work = inputs.to_vec();
    // per input: (max |g - fd|, max |fd|, worst component)
    let mut acc: Vec<(f64, f64, Option<usize>)> = vec![(0.0, 0.0, None); inputs.len()];
    let mut report = FdReport { max_rel_err: 0.0, worst: None, checked: 0 };
    for &(i, j) in comps {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + eps;
        let fp = eval(&f, &work)?;
        work[i].data_mut()[j] = orig - eps;
        let fm = eval(&f, &work)?;
        work[i].data_mut()[j] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let dev = (analytic[i].data()[j] - fd).abs();
        let a = &mut acc[i];
        if dev > a.0 || a.2.is_none() {
            a.0 = a.0.max(dev);
            a.2 = Some(j);
        }
        a.1 = a.1.max(fd.abs());
        report.checked += 1;
    }
    for (i, &(dev, scale, j)) in acc.iter().enumerate() {
        let Some(j) = j else { continue };
        let err = dev / scale.max(1e-8);
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((i, j));
        }
    }
    Ok(report)
}
