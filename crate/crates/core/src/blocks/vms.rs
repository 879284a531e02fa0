use std::sync::Arc;

use crate::autodiff::{GatherIndex, ScanVars, Tape, Var};
use crate::blocks::config::MergeMode;
use crate::blocks::params::{Bound, LinearParams, VmsBlockParams};
use crate::error::{Error, Result};
use crate::grid_scan::{cached_path, GridShape, StrategySpec, SLOT_COUNT};

fn token_count(tape: &Tape, x: Var, grid: GridShape, op: &'static str) -> Result<usize> {
    let (t, ch) = tape.value(x).dims2(op)?;
    if t != grid.len() {
        return Err(Error::InconsistentGrid { expected: grid.len(), got: t });
    }
    if t == 0 {
        return Err(Error::shape(op, "empty grid"));
    }
    Ok(ch)
}

/// Runs the shared selective scan along each of the eight slot directions and merges
/// the results, accumulating in slot order Dn1..Dn8.
pub fn eight_d_scan(
    tape: &mut Tape,
    x: Var,
    grid: GridShape,
    spec: &StrategySpec,
    scan: ScanVars,
    merge: MergeMode,
) -> Result<Var> {
    let ch = token_count(tape, x, grid, "eight_d_scan")?;
    let mut merged: Option<Var> = None;
    for &dir in spec.slots() {
        let (path, inv) = cached_path(dir, grid);
        let seq = tape.gather(x, Arc::new(GatherIndex::rows(path.order(), grid.len(), ch)))?;
        let y = tape.selective_scan(seq, scan)?;
        let back = tape.gather(y, Arc::new(GatherIndex::rows(inv.order(), grid.len(), ch)))?;
        merged = Some(match merged {
            None => back,
            Some(acc) => tape.add(acc, back)?,
        });
    }
    let merged = merged.expect("eight slots");
    match merge {
        MergeMode::Sum => Ok(merged),
        MergeMode::Mean => tape.scale(merged, 1.0 / SLOT_COUNT as f64),
    }
}

/// `x + out_proj(scan_branch * gate_branch)` with a shared pre-norm.
pub fn vms_block_forward(
    tape: &mut Tape,
    x: Var,
    grid: GridShape,
    p: &VmsBlockParams,
    b: &Bound,
    spec: &StrategySpec,
    merge: MergeMode,
) -> Result<Var> {
    let ch = token_count(tape, x, grid, "vms_block")?;
    if ch != p.dim {
        return Err(Error::shape("vms_block", format!("{ch} channels, block width {}", p.dim)));
    }
    let normed = tape.layer_norm(x, b.v(p.norm_g), b.v(p.norm_b))?;

    let h = tape.linear(normed, b.v(p.in_w), Some(b.v(p.in_b)))?;
    let h = tape.depthwise_conv2d(h, b.v(p.conv_k), grid.rows, grid.cols)?;
    let h = tape.silu(h)?;
    let scanned = eight_d_scan(tape, h, grid, spec, p.scan.bind(b), merge)?;

    let gate = tape.linear(normed, b.v(p.gate_w), Some(b.v(p.gate_b)))?;
    let gate = tape.silu(gate)?;

    let mixed = tape.mul(scanned, gate)?;
    let out = tape.linear(mixed, b.v(p.out_w), Some(b.v(p.out_b)))?;
    tape.add(x, out)
}

/// Gather map building `[x(2i,2j), x(2i,2j+1), x(2i+1,2j), x(2i+1,2j+1)]` rows,
/// replicating the last row/column on odd edges.
pub fn downsample_index(grid: GridShape, ch: usize) -> (GridShape, GatherIndex) {
    let out = GridShape { rows: grid.rows.div_ceil(2), cols: grid.cols.div_ceil(2) };
    let mut index = Vec::with_capacity(out.len() * 4 * ch);
    for i in 0..out.rows {
        for j in 0..out.cols {
            for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let si = (2 * i + di).min(grid.rows - 1);
                let sj = (2 * j + dj).min(grid.cols - 1);
                let base = (si * grid.cols + sj) * ch;
                index.extend(base..base + ch);
            }
        }
    }
    (out, GatherIndex { src_len: grid.len() * ch, out_shape: vec![out.len(), 4 * ch], index })
}

/// 2x2 neighbourhood concatenation followed by a projection to the next width.
pub fn downsample(tape: &mut Tape, x: Var, grid: GridShape, p: &LinearParams, b: &Bound) -> Result<(Var, GridShape)> {
    let ch = token_count(tape, x, grid, "downsample")?;
    let (out, index) = downsample_index(grid, ch);
    let cat = tape.gather(x, Arc::new(index))?;
    let y = tape.linear(cat, b.v(p.w), Some(b.v(p.b)))?;
    Ok((y, out))
}
