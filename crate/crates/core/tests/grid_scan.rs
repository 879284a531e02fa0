use proptest::prelude::*;
use scanlab::grid_scan::{
    apply_path, cached_path, expand_strategy, generate_path, invert_path, GridShape, ScanDirection, ScanPath,
};

fn is_permutation(order: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    order.len() == n && order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

fn cell(shape: GridShape, idx: usize) -> (usize, usize) {
    (idx / shape.cols, idx % shape.cols)
}

fn direction() -> impl Strategy<Value = ScanDirection> {
    (1usize..=12).prop_map(|k| ScanDirection::from_index(k).unwrap())
}

proptest! {
    #[test]
    fn every_path_is_a_bijection(dir in direction(), rows in 1usize..=16, cols in 1usize..=16) {
        let shape = GridShape::new(rows, cols).unwrap();
        let path = generate_path(dir, shape);
        prop_assert!(is_permutation(path.order(), rows * cols));
        prop_assert_eq!(path.direction(), dir);
    }

    #[test]
    fn reversal_partners(dir in direction(), rows in 1usize..=12, cols in 1usize..=12) {
        let shape = GridShape::new(rows, cols).unwrap();
        let mut rev = generate_path(dir.partner(), shape).order().to_vec();
        rev.reverse();
        prop_assert_eq!(generate_path(dir, shape).order().to_vec(), rev);
        prop_assert_eq!(dir.partner().partner(), dir);
    }

    #[test]
    fn invert_undoes_apply(dir in direction(), rows in 1usize..=10, cols in 1usize..=10) {
        let shape = GridShape::new(rows, cols).unwrap();
        let path = generate_path(dir, shape);
        let tokens: Vec<usize> = (0..shape.len()).map(|i| i * 31 + 7).collect();
        let seq = apply_path(&path, &tokens).unwrap();
        let back = apply_path(&invert_path(&path), &seq).unwrap();
        prop_assert_eq!(back, tokens);
        prop_assert_eq!(invert_path(&invert_path(&path)).order().to_vec(), path.order().to_vec());
    }

    #[test]
    fn serpentines_move_between_neighbours(rows in 1usize..=12, cols in 1usize..=12) {
        let shape = GridShape::new(rows, cols).unwrap();
        for dir in [ScanDirection::D9, ScanDirection::D10, ScanDirection::D11, ScanDirection::D12] {
            let p = generate_path(dir, shape);
            for w in p.order().windows(2) {
                let (a, b) = (cell(shape, w[0]), cell(shape, w[1]));
                prop_assert_eq!(a.0.abs_diff(b.0) + a.1.abs_diff(b.1), 1);
            }
        }
    }

    #[test]
    fn diagonal_paths_visit_anti_diagonals_in_order(rows in 1usize..=12, cols in 1usize..=12) {
        let shape = GridShape::new(rows, cols).unwrap();
        for (dir, rows_up) in [(ScanDirection::D5, true), (ScanDirection::D7, false)] {
            let cells: Vec<_> = generate_path(dir, shape).order().iter().map(|&i| cell(shape, i)).collect();
            for w in cells.windows(2) {
                let (d0, d1) = (w[0].0 + w[0].1, w[1].0 + w[1].1);
                prop_assert!(d1 == d0 || d1 == d0 + 1);
                if d1 == d0 {
                    prop_assert_eq!(w[1].0 > w[0].0, rows_up);
                }
            }
        }
    }

    #[test]
    fn fill_rule_repeats_cyclically(k in prop::sample::select(vec![1usize, 2, 4, 8]), start in 1usize..=12) {
        let dirs: Vec<ScanDirection> = (0..k).map(|i| ScanDirection::from_index((start + i - 1) % 12 + 1).unwrap()).collect();
        let spec = expand_strategy(&dirs).unwrap();
        for (i, slot) in spec.slots().iter().enumerate() {
            prop_assert_eq!(*slot, dirs[i % k]);
        }
    }

    #[test]
    fn other_lengths_are_rejected(k in prop::sample::select(vec![0usize, 3, 5, 6, 7, 9, 12])) {
        let dirs = vec![ScanDirection::D1; k];
        prop_assert!(expand_strategy(&dirs).is_err());
    }
}

#[test]
fn column_major_on_non_square_grid() {
    let shape = GridShape::new(2, 3).unwrap();
    assert_eq!(generate_path(ScanDirection::D3, shape).order(), &[0, 3, 1, 4, 2, 5]);
    assert_eq!(generate_path(ScanDirection::D11, shape).order(), &[0, 3, 4, 1, 2, 5]);
}

#[test]
fn cached_paths_match_fresh_ones_across_threads() {
    let shape = GridShape::new(5, 7).unwrap();
    let handles: Vec<_> = ScanDirection::ALL
        .iter()
        .map(|&d| {
            std::thread::spawn(move || {
                let (p, inv) = cached_path(d, shape);
                (d, p.order().to_vec(), inv.order().to_vec())
            })
        })
        .collect();
    for h in handles {
        let (d, p, inv) = h.join().unwrap();
        let fresh = generate_path(d, shape);
        assert_eq!(p, fresh.order());
        assert_eq!(inv, invert_path(&fresh).order());
    }
}

#[test]
fn malformed_orders_are_rejected() {
    let shape = GridShape::new(2, 2).unwrap();
    assert!(ScanPath::from_order(vec![0, 1, 1, 3], shape, ScanDirection::D1).is_err());
    assert!(ScanPath::from_order(vec![0, 1, 2], shape, ScanDirection::D1).is_err());
    assert!(GridShape::new(0, 3).is_err());
    let path = generate_path(ScanDirection::D1, shape);
    assert!(apply_path(&path, &[1, 2, 3]).is_err());
}

#[test]
fn cli_prints_golden_orders() {
    let goldens = [
        ("D3", "0,3,6,1,4,7,2,5,8"),
        ("D6", "8,7,5,6,4,2,3,1,0"),
        ("D11", "0,3,6,7,4,1,2,5,8"),
        ("D12", "8,5,2,1,4,7,6,3,0"),
    ];
    for (dir, want) in goldens {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_scanlab"))
            .args(["scan-paths", "--direction", dir, "--rows", "3", "--cols", "3"])
            .output()
            .unwrap();
        assert!(out.status.success());
        assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), want, "{dir}");
    }
}
