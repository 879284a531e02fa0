mod common;

use std::sync::Arc;

use common::{project, rand_tensor, rng, EPS, GRAD_TOL};
use scanlab::autodiff::{finite_diff_check, finite_diff_report, GatherIndex, ScanVars, Tape, Tensor, Var};
use scanlab::blocks::bilinear_map;
use scanlab::grid_scan::GridShape;
use scanlab::Error;

fn check(name: &str, f: impl Fn(&mut Tape, &[Var]) -> scanlab::Result<Var>, inputs: &[Tensor]) {
    let r = finite_diff_report(f, inputs, EPS, None).unwrap();
    assert!(r.max_rel_err < GRAD_TOL, "{name}: max rel err {:.3e} at {:?}", r.max_rel_err, r.worst);
}

#[test]
fn linear_with_and_without_bias() {
    let mut g = rng(1);
    let inputs = [rand_tensor(&mut g, &[5, 4], 1.0), rand_tensor(&mut g, &[3, 4], 1.0), rand_tensor(&mut g, &[3], 1.0)];
    check(
        "linear",
        |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            project(t, y, 11)
        },
        &inputs,
    );
    check(
        "linear_nobias",
        |t, v| {
            let y = t.linear(v[0], v[1], None)?;
            project(t, y, 12)
        },
        &inputs[..2],
    );
}

#[test]
fn depthwise_conv_on_non_square_grid() {
    let mut g = rng(2);
    let inputs = [rand_tensor(&mut g, &[12, 3], 1.0), rand_tensor(&mut g, &[3, 9], 1.0)];
    check(
        "dwconv",
        |t, v| {
            let y = t.depthwise_conv2d(v[0], v[1], 3, 4)?;
            project(t, y, 21)
        },
        &inputs,
    );
}

#[test]
fn silu_and_layer_norm() {
    let mut g = rng(3);
    check(
        "silu",
        |t, v| {
            let y = t.silu(v[0])?;
            project(t, y, 31)
        },
        &[rand_tensor(&mut g, &[4, 5], 3.0)],
    );
    let inputs = [rand_tensor(&mut g, &[4, 6], 2.0), rand_tensor(&mut g, &[6], 1.5), rand_tensor(&mut g, &[6], 1.0)];
    check(
        "layer_norm",
        |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            project(t, y, 32)
        },
        &inputs,
    );
}

#[test]
fn elementwise_and_reductions() {
    let mut g = rng(4);
    let inputs = [rand_tensor(&mut g, &[3, 4], 1.0), rand_tensor(&mut g, &[3, 4], 1.0)];
    check(
        "add_mul_scale",
        |t, v| {
            let s = t.add(v[0], v[1])?;
            let m = t.mul(s, v[1])?;
            let m = t.mul(m, v[0])?;
            let y = t.scale(m, -1.7)?;
            project(t, y, 41)
        },
        &inputs,
    );
    // the same input feeding both operands accumulates two contributions
    check(
        "square_sum",
        |t, v| {
            let m = t.mul(v[0], v[0])?;
            t.sum(m)
        },
        &inputs[..1],
    );
}

#[test]
fn concat_gather_resample() {
    let mut g = rng(5);
    let inputs = [rand_tensor(&mut g, &[6, 2], 1.0), rand_tensor(&mut g, &[6, 3], 1.0)];
    check(
        "concat",
        |t, v| {
            let y = t.concat(&[v[0], v[1], v[0]])?;
            project(t, y, 51)
        },
        &inputs,
    );
    // repeated and missing source entries
    let map = Arc::new(GatherIndex { src_len: 12, out_shape: vec![5, 2], index: vec![3, 3, 0, 11, 7, 7, 7, 2, 1, 10] });
    check(
        "gather",
        |t, v| {
            let y = t.gather(v[0], map.clone())?;
            project(t, y, 52)
        },
        &inputs[..1],
    );
    let rs = Arc::new(bilinear_map(GridShape { rows: 2, cols: 3 }, GridShape { rows: 5, cols: 4 }));
    check(
        "resample",
        |t, v| {
            let y = t.resample(v[0], rs.clone())?;
            project(t, y, 53)
        },
        &inputs[..1],
    );
}

#[test]
fn cross_entropy_with_ignored_label() {
    let mut g = rng(6);
    let logits = rand_tensor(&mut g, &[7, 4], 2.0);
    let labels: Arc<[usize]> = vec![0, 3, 1, 2, 2, 3, 0].into();
    let err = finite_diff_check(|t, x| t.softmax_cross_entropy(x, labels.clone(), Some(2)), &logits, EPS).unwrap();
    assert!(err < GRAD_TOL, "cross entropy: {err:.3e}");
    let err = finite_diff_check(|t, x| t.softmax_cross_entropy(x, labels.clone(), None), &logits, EPS).unwrap();
    assert!(err < GRAD_TOL, "cross entropy: {err:.3e}");
}

#[test]
fn selective_scan_all_inputs() {
    let mut g = rng(7);
    let (len, ch, n) = (9, 3, 4);
    let a_log = Tensor::from_fn(&[ch, n], |i| ((i % n + 1) as f64).ln() - 1.0);
    let inputs = [
        rand_tensor(&mut g, &[len, ch], 1.0),
        a_log,
        rand_tensor(&mut g, &[ch], 0.5),
        Tensor::from_fn(&[ch], |c| -1.0 + 0.5 * c as f64),
        rand_tensor(&mut g, &[n, ch], 1.0),
        rand_tensor(&mut g, &[n, ch], 1.0),
        rand_tensor(&mut g, &[ch], 1.0),
    ];
    check(
        "selective_scan",
        |t, v| {
            let vars = ScanVars { a_log: v[1], w_delta: v[2], b_delta: v[3], w_b: v[4], w_c: v[5], d: v[6] };
            let y = t.selective_scan(v[0], vars)?;
            project(t, y, 71)
        },
        &inputs,
    );
}

#[test]
fn tape_misuse_is_reported() {
    let mut t = Tape::new();
    let x = t.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
    let s = t.sum(x).unwrap();
    t.backward(s).unwrap();
    assert!(matches!(t.backward(s), Err(Error::BackwardTwice)));

    let mut t = Tape::new();
    let c = t.constant(Tensor::scalar(3.0));
    let s = t.scale(c, 2.0).unwrap();
    assert!(matches!(t.backward(s), Err(Error::Detached)));

    let mut t = Tape::new();
    let x = t.param(Tensor::scalar(1e308));
    let y = t.scale(x, 10.0);
    assert!(matches!(y, Err(Error::NonFinite { .. })));
}

#[test]
fn gradients_accumulate_across_uses() {
    let mut t = Tape::new();
    let x = t.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
    let a = t.scale(x, 2.0).unwrap();
    let b = t.add(a, x).unwrap();
    let s = t.sum(b).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[3.0, 3.0, 3.0]);
}
