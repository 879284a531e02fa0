//! Serialization orders over 2-D patch grids.
//!
//! Twelve directions are supported, in three families of four:
//!
//! | id      | order                                                        |
//! |---------|--------------------------------------------------------------|
//! | D1 / D2 | row-major, rows top to bottom, each row left to right / reverse |
//! | D3 / D4 | column-major, columns left to right, top to bottom / reverse |
//! | D5 / D6 | anti-diagonals `i + j` ascending, row ascending inside / reverse |
//! | D7 / D8 | anti-diagonals `i + j` ascending, row descending inside / reverse |
//! | D9 / D10 | row serpentine starting left to right / reverse            |
//! | D11 / D12 | column serpentine starting top to bottom / reverse        |
//!
//! Even-numbered directions are the exact reversal of their odd partner.
//! A [`ScanPath`] stores `order[k]` = row-major index of the k-th visited cell.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("grid shape {rows}x{cols} must be at least 1x1")));
        }
        Ok(Self { rows, cols })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScanDirection {
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
    D7,
    D8,
    D9,
    D10,
    D11,
    D12,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 12] = [
        ScanDirection::D1,
        ScanDirection::D2,
        ScanDirection::D3,
        ScanDirection::D4,
        ScanDirection::D5,
        ScanDirection::D6,
        ScanDirection::D7,
        ScanDirection::D8,
        ScanDirection::D9,
        ScanDirection::D10,
        ScanDirection::D11,
        ScanDirection::D12,
    ];

    /// 1-based index, `D7.index() == 7`.
    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn from_index(k: usize) -> Option<Self> {
        Self::ALL.get(k.checked_sub(1)?).copied()
    }

    pub fn is_reversed(self) -> bool {
        self.index().is_multiple_of(2)
    }

    /// The forward/reverse partner (D1 <-> D2, D3 <-> D4, ...).
    pub fn partner(self) -> Self {
        let k = self.index();
        let p = if k.is_multiple_of(2) { k - 1 } else { k + 1 };
        Self::from_index(p).expect("partner index in range")
    }
}

impl fmt::Display for ScanDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.index())
    }
}

impl FromStr for ScanDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        t.strip_prefix('D')
            .or_else(|| t.strip_prefix('d'))
            .and_then(|n| n.parse::<usize>().ok())
            .and_then(Self::from_index)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanPath {
    order: Vec<usize>,
    shape: GridShape,
    direction: ScanDirection,
}

impl ScanPath {
    /// Wraps an explicit order, checking that it is a permutation of the grid cells.
    pub fn from_order(order: Vec<usize>, shape: GridShape, direction: ScanDirection) -> Result<Self> {
        if order.len() != shape.len() {
            return Err(Error::InconsistentGrid { expected: shape.len(), got: order.len() });
        }
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!("scan order is not a permutation (index {i})")));
            }
        }
        Ok(Self { order, shape, direction })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn direction(&self) -> ScanDirection {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

pub fn generate_path(direction: ScanDirection, shape: GridShape) -> ScanPath {
    use ScanDirection::*;
    let (rows, cols) = (shape.rows, shape.cols);
    let base = match direction {
        D1 | D2 => (0..rows * cols).collect::<Vec<_>>(),
        D3 | D4 => (0..cols).flat_map(|j| (0..rows).map(move |i| i * cols + j)).collect(),
        D5 | D6 => anti_diagonals(rows, cols, false),
        D7 | D8 => anti_diagonals(rows, cols, true),
        D9 | D10 => (0..rows)
            .flat_map(|i| {
                (0..cols).map(move |j| {
                    let j = if i % 2 == 0 { j } else { cols - 1 - j };
                    i * cols + j
                })
            })
            .collect(),
        D11 | D12 => (0..cols)
            .flat_map(|j| {
                (0..rows).map(move |i| {
                    let i = if j % 2 == 0 { i } else { rows - 1 - i };
                    i * cols + j
                })
            })
            .collect(),
    };
    let order = if direction.is_reversed() { base.into_iter().rev().collect() } else { base };
    ScanPath { order, shape, direction }
}

fn anti_diagonals(rows: usize, cols: usize, row_descending: bool) -> Vec<usize> {
    let mut order = Vec::with_capacity(rows * cols);
    for d in 0..rows + cols - 1 {
        let lo = d.saturating_sub(cols - 1);
        let hi = d.min(rows - 1);
        if row_descending {
            order.extend((lo..=hi).rev().map(|i| i * cols + (d - i)));
        } else {
            order.extend((lo..=hi).map(|i| i * cols + (d - i)));
        }
    }
    order
}

/// Returns the permutation that undoes `path`: `inv.order[path.order[k]] == k`.
pub fn invert_path(path: &ScanPath) -> ScanPath {
    let mut inv = vec![0; path.order.len()];
    for (k, &i) in path.order.iter().enumerate() {
        inv[i] = k;
    }
    ScanPath { order: inv, shape: path.shape, direction: path.direction }
}

/// Gathers row-major `tokens` into scan order: `out[k] = tokens[path.order[k]]`.
pub fn apply_path<T: Clone>(path: &ScanPath, tokens: &[T]) -> Result<Vec<T>> {
    if tokens.len() != path.len() {
        return Err(Error::InconsistentGrid { expected: path.len(), got: tokens.len() });
    }
    Ok(path.order.iter().map(|&i| tokens[i].clone()).collect())
}

type PathKey = (ScanDirection, GridShape);
type PathCache = RwLock<HashMap<PathKey, (Arc<ScanPath>, Arc<ScanPath>)>>;

fn path_cache() -> &'static PathCache {
    static CACHE: OnceLock<PathCache> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Cached `(path, inverse)` pair for a direction and grid shape.
pub fn cached_path(direction: ScanDirection, shape: GridShape) -> (Arc<ScanPath>, Arc<ScanPath>) {
    let key = (direction, shape);
    if let Some(hit) = path_cache().read().expect("path cache poisoned").get(&key) {
        return hit.clone();
    }
    let path = generate_path(direction, shape);
    let inv = invert_path(&path);
    let mut cache = path_cache().write().expect("path cache poisoned");
    cache.entry(key).or_insert_with(|| (Arc::new(path), Arc::new(inv))).clone()
}

/// An experiment's direction list and its expansion into the eight scan slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategySpec {
    directions: Vec<ScanDirection>,
    slots: [ScanDirection; 8],
    label: String,
}

pub const SLOT_COUNT: usize = 8;

impl StrategySpec {
    pub fn directions(&self) -> &[ScanDirection] {
        &self.directions
    }

    pub fn slots(&self) -> &[ScanDirection; SLOT_COUNT] {
        &self.slots
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Parses `"D1,D2,D3"`-style direction lists.
    pub fn parse_directions(s: &str) -> Result<Self> {
        let dirs = s.split(',').map(str::parse).collect::<Result<Vec<ScanDirection>>>()?;
        expand_strategy(&dirs)
    }
}

/// Fills the eight slots by cyclically repeating `directions` (1, 2, 4 or 8 of them).
pub fn expand_strategy(directions: &[ScanDirection]) -> Result<StrategySpec> {
    if !matches!(directions.len(), 1 | 2 | 4 | 8) {
        return Err(Error::InvalidStrategy(directions.len()));
    }
    let slots = std::array::from_fn(|n| directions[n % directions.len()]);
    let label = directions.iter().map(ToString::to_string).collect::<Vec<_>>().join("+");
    Ok(StrategySpec { directions: directions.to_vec(), slots, label })
}

#[cfg(test)]
mod tests {
    use super::ScanDirection::*;
    use super::*;

    fn order(d: ScanDirection, r: usize, c: usize) -> Vec<usize> {
        generate_path(d, GridShape::new(r, c).unwrap()).order
    }

    #[test]
    fn golden_small_orders() {
        assert_eq!(order(D1, 2, 2), vec![0, 1, 2, 3]);
        assert_eq!(order(D2, 2, 2), vec![3, 2, 1, 0]);
        assert_eq!(order(D9, 3, 3), vec![0, 1, 2, 5, 4, 3, 6, 7, 8]);
        assert_eq!(order(D5, 3, 3), vec![0, 1, 3, 2, 4, 6, 5, 7, 8]);
        assert_eq!(order(D3, 3, 3), vec![0, 3, 6, 1, 4, 7, 2, 5, 8]);
        assert_eq!(order(D7, 3, 3), vec![0, 3, 1, 6, 4, 2, 7, 5, 8]);
        assert_eq!(order(D11, 3, 3), vec![0, 3, 6, 7, 4, 1, 2, 5, 8]);
    }

    #[test]
    fn non_square_serpentine_and_diagonal() {
        // 2x3: rows [0 1 2] / [3 4 5]
        assert_eq!(order(D9, 2, 3), vec![0, 1, 2, 5, 4, 3]);
        assert_eq!(order(D11, 2, 3), vec![0, 3, 4, 1, 2, 5]);
        assert_eq!(order(D5, 2, 3), vec![0, 1, 3, 2, 4, 5]);
        assert_eq!(order(D7, 2, 3), vec![0, 3, 1, 4, 2, 5]);
    }

    #[test]
    fn single_cell_grid() {
        for d in ScanDirection::ALL {
            assert_eq!(order(d, 1, 1), vec![0]);
        }
    }

    #[test]
    fn invert_examples() {
        let s = GridShape::new(3, 3).unwrap();
        let t = generate_path(D3, s);
        assert_eq!(invert_path(&t).order, vec![0, 3, 6, 1, 4, 7, 2, 5, 8]);
        let r = generate_path(D2, GridShape::new(2, 2).unwrap());
        assert_eq!(invert_path(&r).order, vec![3, 2, 1, 0]);
    }

    #[test]
    fn apply_examples() {
        let p = generate_path(D2, GridShape::new(2, 2).unwrap());
        assert_eq!(apply_path(&p, &['a', 'b', 'c', 'd']).unwrap(), vec!['d', 'c', 'b', 'a']);
        let t = generate_path(D3, GridShape::new(3, 3).unwrap());
        let idx: Vec<usize> = (0..9).collect();
        assert_eq!(apply_path(&t, &idx).unwrap(), vec![0, 3, 6, 1, 4, 7, 2, 5, 8]);
        assert!(matches!(apply_path(&t, &idx[..8]), Err(Error::InconsistentGrid { expected: 9, got: 8 })));
    }

    #[test]
    fn expand_examples() {
        assert_eq!(expand_strategy(&[D1]).unwrap().slots, [D1; 8]);
        assert_eq!(expand_strategy(&[D1, D2, D3, D4]).unwrap().slots, [D1, D2, D3, D4, D1, D2, D3, D4]);
        assert_eq!(expand_strategy(&[D1, D2]).unwrap().slots, [D1, D2, D1, D2, D1, D2, D1, D2]);
        for bad in [0, 3, 5, 6, 7, 9] {
            let dirs = vec![D1; bad];
            assert!(matches!(expand_strategy(&dirs), Err(Error::InvalidStrategy(n)) if n == bad));
        }
    }

    #[test]
    fn direction_parsing() {
        assert_eq!("D12".parse::<ScanDirection>().unwrap(), D12);
        assert!("D13".parse::<ScanDirection>().is_err());
        assert!("X1".parse::<ScanDirection>().is_err());
        assert_eq!(D5.partner(), D6);
        assert_eq!(D12.partner(), D11);
    }

    #[test]
    fn cache_returns_consistent_pairs() {
        let s = GridShape::new(4, 5).unwrap();
        let (p, inv) = cached_path(D7, s);
        let (p2, _) = cached_path(D7, s);
        assert!(Arc::ptr_eq(&p, &p2));
        for k in 0..p.len() {
            assert_eq!(inv.order[p.order[k]], k);
        }
    }
}
