//! Finite symmetric windows `x_{-N} < … < x_N` of sampling nodes.
//!
//! A window stands in for a bi-infinite complete interpolating sequence. The
//! only property of such a sequence used downstream is two-sided separation
//! `sep_min <= x_{j+1} - x_j <= sep_max`, which every window records.

use std::ops::RangeInclusive;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NodesError {
    #[error("node list must have odd length >= 1, got {0}")]
    EvenLength(usize),
    #[error("nodes not strictly increasing at pair {index} ({left}, {right})")]
    NonIncreasing { index: usize, left: f64, right: f64 },
    #[error("empty node list")]
    Empty,
    #[error("center index {center} outside a window of {len} nodes")]
    BadCenter { center: usize, len: usize },
    #[error("non-finite node at position {0}")]
    NonFinite(usize),
    #[error("jitter amplitude must lie in [0, 1/2), got {0}")]
    JitterOutOfRange(f64),
    #[error("cannot read node file {path}: {reason}")]
    File { path: String, reason: String },
    #[error("node file {path}, line {line}: cannot parse {text:?}")]
    Parse { path: String, line: usize, text: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeWindow<T> {
    nodes: Vec<T>,
    center: usize,
    sep_min: T,
    sep_max: T,
}

/// Logical index bounds `[lo, hi]` of an interior sub-window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Core {
    pub lo: i64,
    pub hi: i64,
}

impl Core {
    pub fn contains(&self, j: i64) -> bool {
        self.lo <= j && j <= self.hi
    }

    pub fn indices(&self) -> RangeInclusive<i64> {
        self.lo..=self.hi
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }
}

impl<T: Real> NodeWindow<T> {
    /// Validates an odd-length, strictly increasing list. The middle element
    /// gets logical index 0.
    pub fn from_list(xs: Vec<T>) -> Result<Self, NodesError> {
        if xs.len() % 2 == 0 {
            return Err(NodesError::EvenLength(xs.len()));
        }
        let center = xs.len() / 2;
        Self::with_center(xs, center)
    }

    /// Any non-empty strictly increasing list, with `xs[center]` at logical
    /// index 0. Allows one-sided and even-length windows.
    pub fn with_center(xs: Vec<T>, center: usize) -> Result<Self, NodesError> {
        if xs.is_empty() {
            return Err(NodesError::Empty);
        }
        if center >= xs.len() {
            return Err(NodesError::BadCenter { center, len: xs.len() });
        }
        if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
            return Err(NodesError::NonFinite(i));
        }
        for (i, w) in xs.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(NodesError::NonIncreasing {
                    index: i,
                    left: w[0].to_f64_lossy(),
                    right: w[1].to_f64_lossy(),
                });
            }
        }
        let (sep_min, sep_max) = gap_extrema(&xs).unwrap_or((T::one(), T::one()));
        Ok(Self {
            center,
            nodes: xs,
            sep_min,
            sep_max,
        })
    }

    /// Integer lattice `x_j = j`, `|j| <= n`.
    pub fn lattice(n: usize) -> Self {
        let nodes = (0..=2 * n)
            .map(|i| T::from_i64(i as i64 - n as i64).expect("lattice index"))
            .collect();
        Self {
            nodes,
            center: n,
            sep_min: T::one(),
            sep_max: T::one(),
        }
    }

    /// Perturbed lattice `x_j = j + u_j`, `u_j` uniform on `[-delta, delta]`,
    /// drawn from a ChaCha8 stream seeded with `seed`.
    pub fn jittered(n: usize, delta: f64, seed: u64) -> Result<Self, NodesError> {
        if !(0.0..0.5).contains(&delta) {
            return Err(NodesError::JitterOutOfRange(delta));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..=2 * n)
            .map(|i| {
                let u: f64 = rng.gen();
                let x = (i as f64 - n as f64) + delta * (2.0 * u - 1.0);
                T::lit(x)
            })
            .collect();
        Self::from_list(xs)
    }

    /// Reads one decimal real per line; blank lines and `#` comments are skipped.
    pub fn from_file(path: &Path) -> Result<Self, NodesError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| NodesError::File {
            path: shown.clone(),
            reason: e.to_string(),
        })?;
        let mut xs = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let v: f64 = t.parse().map_err(|_| NodesError::Parse {
                path: shown.clone(),
                line: line_no + 1,
                text: t.to_string(),
            })?;
            xs.push(T::lit(v));
        }
        Self::from_list(xs)
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `N` in `x_{-N}, …, x_N`; the shorter side for asymmetric windows.
    pub fn half_width(&self) -> usize {
        self.center.min(self.nodes.len() - 1 - self.center)
    }

    /// Storage offset of logical index 0.
    pub fn center_index(&self) -> usize {
        self.center
    }

    pub fn first_index(&self) -> i64 {
        -(self.center as i64)
    }

    pub fn last_index(&self) -> i64 {
        (self.nodes.len() - 1 - self.center) as i64
    }

    pub fn sep_min(&self) -> T {
        self.sep_min
    }

    pub fn sep_max(&self) -> T {
        self.sep_max
    }

    /// Storage position of logical index `j`, if inside the window.
    pub fn storage(&self, j: i64) -> Option<usize> {
        let idx = j + self.center as i64;
        (0..self.nodes.len() as i64).contains(&idx).then_some(idx as usize)
    }

    pub fn logical(&self, storage: usize) -> i64 {
        storage as i64 - self.center as i64
    }

    /// Node at logical index `j`. Panics outside the window.
    pub fn at(&self, j: i64) -> T {
        self.nodes[self.storage(j).expect("logical index inside window")]
    }

    /// Interior indices at least `margin` positions from either end; never
    /// shrinks past logical index 0.
    pub fn core(&self, margin: usize) -> Core {
        let m = margin as i64;
        Core {
            lo: (self.first_index() + m).min(0),
            hi: (self.last_index() - m).max(0),
        }
    }

    /// Default margin `N / 4`.
    pub fn default_margin(&self) -> usize {
        self.half_width() / 4
    }

    /// `[x_lo, x_hi]` spanned by a core.
    pub fn hull(&self, core: Core) -> (T, T) {
        (self.at(core.lo), self.at(core.hi))
    }
}

fn gap_extrema<T: Real>(xs: &[T]) -> Option<(T, T)> {
    xs.windows(2).map(|w| w[1] - w[0]).fold(None, |acc, g| match acc {
        None => Some((g, g)),
        Some((lo, hi)) => Some((lo.min(g), hi.max(g))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lattice_windows() {
        let w0 = NodeWindow::<f64>::lattice(0);
        assert_eq!(w0.nodes(), &[0.0]);
        assert_eq!((w0.sep_min(), w0.sep_max()), (1.0, 1.0));
        let w1 = NodeWindow::<f64>::lattice(1);
        assert_eq!(w1.nodes(), &[-1.0, 0.0, 1.0]);
        let w2 = NodeWindow::<f64>::lattice(2);
        assert_eq!(w2.nodes(), &[-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!((w2.sep_min(), w2.sep_max()), (1.0, 1.0));
        assert_eq!(w2.at(-2), -2.0);
        assert_eq!(w2.storage(3), None);
    }

    #[test]
    fn zero_jitter_is_lattice() {
        let w = NodeWindow::<f64>::jittered(5, 0.0, 7).unwrap();
        assert_eq!(w, NodeWindow::lattice(5));
    }

    #[test]
    fn jitter_separation_and_determinism() {
        let a = NodeWindow::<f64>::jittered(100, 0.25, 1).unwrap();
        let b = NodeWindow::<f64>::jittered(100, 0.25, 1).unwrap();
        assert!(a.sep_min() >= 0.5 && a.sep_max() <= 1.5);
        let bits = |w: &NodeWindow<f64>| w.nodes().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a, NodeWindow::jittered(100, 0.25, 2).unwrap());
    }

    #[test]
    fn jitter_rejects_half() {
        assert!(matches!(
            NodeWindow::<f64>::jittered(3, 0.5, 0),
            Err(NodesError::JitterOutOfRange(_))
        ));
        assert!(NodeWindow::<f64>::jittered(3, -0.1, 0).is_err());
    }

    #[test]
    fn from_list_cases() {
        let w = NodeWindow::from_list(vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!((w.sep_min(), w.sep_max()), (1.0, 1.0));
        let w = NodeWindow::from_list(vec![-2.0, 0.0, 3.0]).unwrap();
        assert_eq!((w.sep_min(), w.sep_max()), (2.0, 3.0));
        assert_eq!(w.center_index(), 1);
        assert_eq!(
            NodeWindow::from_list(vec![0.0, 0.0, 1.0]),
            Err(NodesError::NonIncreasing { index: 0, left: 0.0, right: 0.0 })
        );
        assert_eq!(NodeWindow::<f64>::from_list(vec![0.0, 1.0]), Err(NodesError::EvenLength(2)));
        assert_eq!(NodeWindow::<f64>::from_list(vec![]), Err(NodesError::EvenLength(0)));
    }

    #[test]
    fn explicit_center() {
        let w = NodeWindow::with_center(vec![0.0, 1.0], 0).unwrap();
        assert_eq!((w.first_index(), w.last_index()), (0, 1));
        assert_eq!(w.core(w.default_margin()), Core { lo: 0, hi: 1 });
        assert_eq!(w.at(1), 1.0);
        assert_eq!(NodeWindow::with_center(vec![0.0], 1), Err(NodesError::BadCenter { center: 1, len: 1 }));
        assert_eq!(NodeWindow::<f64>::with_center(vec![], 0), Err(NodesError::Empty));
    }

    #[test]
    fn core_and_hull() {
        let w = NodeWindow::<f64>::lattice(100);
        let core = w.core(w.default_margin());
        assert_eq!(core, Core { lo: -75, hi: 75 });
        assert_eq!(core.len(), 151);
        assert_eq!(w.hull(core), (-75.0, 75.0));
    }

    #[test]
    fn reads_node_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nodes.txt");
        std::fs::write(&path, "# three nodes\n-1.5\n0\n\n2.25\n").unwrap();
        let w = NodeWindow::<f64>::from_file(&path).unwrap();
        assert_eq!(w.nodes(), &[-1.5, 0.0, 2.25]);
        std::fs::write(&path, "0\nabc\n1\n").unwrap();
        assert!(matches!(NodeWindow::<f64>::from_file(&path), Err(NodesError::Parse { line: 2, .. })));
        let missing = dir.path().join("missing.txt");
        assert!(matches!(NodeWindow::<f64>::from_file(&missing), Err(NodesError::File { .. })));
    }

    proptest! {
        #[test]
        fn stored_gaps_match_recomputation(n in 1usize..60, delta in 0.0f64..0.4999, seed in any::<u64>()) {
            let w = NodeWindow::<f64>::jittered(n, delta, seed).unwrap();
            let gaps: Vec<f64> = w.nodes().windows(2).map(|p| p[1] - p[0]).collect();
            let lo = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = gaps.iter().cloned().fold(0.0, f64::max);
            prop_assert_eq!(lo, w.sep_min());
            prop_assert_eq!(hi, w.sep_max());
            prop_assert!(lo > 0.0);
            prop_assert!(lo >= 1.0 - 2.0 * delta - 1e-12 && hi <= 1.0 + 2.0 * delta + 1e-12);
        }
    }
}
