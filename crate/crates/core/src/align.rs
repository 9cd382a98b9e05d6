//! Dynamic time warping over feature sequences.
//!
//! [`dtw_exact`] fills the full cost matrix; [`fast_dtw`] is the multiresolution
//! approximation of Salvador and Chan: halve both sequences by averaging
//! adjacent frames, align the coarse pair recursively, project the coarse
//! path back and solve again inside that projection widened by `radius`.
//!
//! Paths start at `(0, 0)`, end at `(len_a - 1, len_b - 1)` and advance `i`,
//! `j` or both by one per step. Backtracking breaks ties diagonal first, then
//! `i`-advance, then `j`-advance.

use alloc::vec;
use alloc::vec::Vec;

use crate::features::{FeatureSequence, Metric};
use crate::{Error, Result};

/// Largest cost matrix [`dtw_exact`] will allocate.
pub const MAX_EXACT_CELLS: usize = 25_000_000;

pub const DEFAULT_RADIUS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPath {
    pairs: Vec<(usize, usize)>,
    total_cost: f64,
}

impl AlignmentPath {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Boundary and unit-step invariants for sequences of the given lengths.
    pub fn is_valid(&self, len_a: usize, len_b: usize) -> bool {
        let p = &self.pairs;
        if p.first() != Some(&(0, 0)) || p.last() != Some(&(len_a - 1, len_b - 1)) {
            return false;
        }
        p.windows(2).all(|w| {
            let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
        })
    }

    /// Same path with the roles of the sequences swapped.
    pub fn transposed(&self) -> Self {
        Self {
            pairs: self.pairs.iter().map(|&(i, j)| (j, i)).collect(),
            total_cost: self.total_cost,
        }
    }
}

/// Row-major vectors widened to f64.
#[derive(Debug, Clone)]
struct Seq {
    data: Vec<f64>,
    dim: usize,
}

impl Seq {
    fn from_features(f: &FeatureSequence) -> Self {
        Self {
            data: f.data().iter().map(|&x| x as f64).collect(),
            dim: f.dim(),
        }
    }

    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn at(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Averages frame pairs; an odd last frame is carried unchanged.
    fn coarsen(&self) -> Self {
        let n = self.len();
        let mut data = Vec::with_capacity(n.div_ceil(2) * self.dim);
        for i in (0..n).step_by(2) {
            if i + 1 < n {
                let (a, b) = (self.at(i), self.at(i + 1));
                data.extend(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)));
            } else {
                data.extend_from_slice(self.at(i));
            }
        }
        Self {
            data,
            dim: self.dim,
        }
    }
}

/// Inclusive column range per row of the search space.
#[derive(Debug, Clone)]
struct Window {
    rows: Vec<(usize, usize)>,
}

impl Window {
    fn full(len_a: usize, len_b: usize) -> Self {
        Self {
            rows: vec![(0, len_b - 1); len_a],
        }
    }

    /// Projects a coarse path onto the fine grid and widens it by `radius`
    /// cells in every direction.
    fn from_coarse_path(
        path: &[(usize, usize)],
        len_a: usize,
        len_b: usize,
        radius: usize,
    ) -> Self {
        let mut lo = vec![usize::MAX; len_a];
        let mut hi = vec![0usize; len_a];
        for &(ci, cj) in path {
            let (c0, c1) = (2 * cj, (2 * cj + 1).min(len_b - 1));
            for r in 2 * ci..(2 * ci + 2).min(len_a) {
                lo[r] = lo[r].min(c0);
                hi[r] = hi[r].max(c1);
            }
        }
        let mut rows = Vec::with_capacity(len_a);
        for i in 0..len_a {
            let (a, b) = (i.saturating_sub(radius), (i + radius).min(len_a - 1));
            let (mut l, mut h) = (usize::MAX, 0);
            for r in a..=b {
                if lo[r] != usize::MAX {
                    l = l.min(lo[r]);
                    h = h.max(hi[r]);
                }
            }
            rows.push((l.saturating_sub(radius), (h + radius).min(len_b - 1)));
        }
        Self { rows }
    }

    fn cells(&self) -> usize {
        self.rows.iter().map(|(l, h)| h - l + 1).sum()
    }
}

/// Cumulative costs restricted to a window.
struct CostMatrix {
    window: Window,
    offsets: Vec<usize>,
    cost: Vec<f64>,
}

impl CostMatrix {
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = self.window.rows[i];
        if j < lo || j > hi {
            f64::INFINITY
        } else {
            self.cost[self.offsets[i] + j - lo]
        }
    }
}

fn windowed_dtw(a: &Seq, b: &Seq, window: Window, metric: Metric) -> AlignmentPath {
    let (la, lb) = (a.len(), b.len());
    let mut offsets = Vec::with_capacity(la);
    let mut total = 0;
    for &(lo, hi) in &window.rows {
        offsets.push(total);
        total += hi - lo + 1;
    }
    let mut m = CostMatrix {
        window,
        offsets,
        cost: vec![f64::INFINITY; total],
    };
    for i in 0..la {
        let (lo, hi) = m.window.rows[i];
        for j in lo..=hi {
            let d = metric.eval(a.at(i), b.at(j));
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 {
                    m.get(i - 1, j - 1)
                } else {
                    f64::INFINITY
                };
                let up = if i > 0 {
                    m.get(i - 1, j)
                } else {
                    f64::INFINITY
                };
                let left = if j > lo {
                    m.cost[m.offsets[i] + j - 1 - lo]
                } else {
                    f64::INFINITY
                };
                diag.min(up).min(left)
            };
            m.cost[m.offsets[i] + j - lo] = d + prev;
        }
    }
    let mut pairs = Vec::with_capacity(la + lb);
    let (mut i, mut j) = (la - 1, lb - 1);
    pairs.push((i, j));
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 {
            m.get(i - 1, j - 1)
        } else {
            f64::INFINITY
        };
        let up = if i > 0 {
            m.get(i - 1, j)
        } else {
            f64::INFINITY
        };
        let left = if j > 0 {
            m.get(i, j - 1)
        } else {
            f64::INFINITY
        };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        pairs.push((i, j));
    }
    pairs.reverse();
    let total_cost = pairs
        .iter()
        .fold(0.0, |acc, &(i, j)| acc + metric.eval(a.at(i), b.at(j)));
    AlignmentPath { pairs, total_cost }
}

fn check(a: &FeatureSequence, b: &FeatureSequence) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySequence);
    }
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch(a.dim(), b.dim()));
    }
    Ok(())
}

/// Globally optimal warping path over the full cost matrix.
pub fn dtw_exact(
    a: &FeatureSequence,
    b: &FeatureSequence,
    metric: Metric,
) -> Result<AlignmentPath> {
    check(a, b)?;
    let cells = a.len().saturating_mul(b.len());
    if cells > MAX_EXACT_CELLS {
        return Err(Error::AlignmentTooLarge(cells));
    }
    let (sa, sb) = (Seq::from_features(a), Seq::from_features(b));
    Ok(windowed_dtw(
        &sa,
        &sb,
        Window::full(sa.len(), sb.len()),
        metric,
    ))
}

/// FastDTW. Inputs whose shorter side is at most `2 * radius + 2` frames are
/// solved exactly.
pub fn fast_dtw(
    a: &FeatureSequence,
    b: &FeatureSequence,
    metric: Metric,
    radius: usize,
) -> Result<AlignmentPath> {
    check(a, b)?;
    Ok(fast_recursive(
        &Seq::from_features(a),
        &Seq::from_features(b),
        metric,
        radius,
    ))
}

fn fast_recursive(a: &Seq, b: &Seq, metric: Metric, radius: usize) -> AlignmentPath {
    let (la, lb) = (a.len(), b.len());
    if la.min(lb) <= 2 * radius + 2 {
        return windowed_dtw(a, b, Window::full(la, lb), metric);
    }
    let coarse = fast_recursive(&a.coarsen(), &b.coarsen(), metric, radius);
    let window = Window::from_coarse_path(coarse.pairs(), la, lb, radius);
    debug_assert!(window.cells() <= la * lb);
    windowed_dtw(a, b, window, metric)
}

/// Monotone piecewise-linear map from score time to performance time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMap {
    anchors: Vec<(f64, f64)>,
}

impl TimeMap {
    /// Anchors must be non-empty, strictly increasing in score time and
    /// non-decreasing in performance time.
    pub fn new(anchors: Vec<(f64, f64)>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::EmptySequence);
        }
        if anchors
            .windows(2)
            .any(|w| w[1].0 <= w[0].0 || w[1].1 < w[0].1)
        {
            return Err(Error::InvalidConfig("time map anchors must be monotone"));
        }
        Ok(Self { anchors })
    }

    pub fn identity(duration: f64) -> Self {
        Self {
            anchors: vec![(0.0, 0.0), (duration, duration)],
        }
    }

    pub fn anchors(&self) -> &[(f64, f64)] {
        &self.anchors
    }

    /// Piecewise-linear interpolation, clamped outside the anchor range.
    pub fn lookup(&self, score_time: f64) -> f64 {
        let a = &self.anchors;
        if score_time <= a[0].0 {
            return a[0].1;
        }
        let last = a[a.len() - 1];
        if score_time >= last.0 {
            return last.1;
        }
        let k = a.partition_point(|&(s, _)| s <= score_time);
        let (s0, p0) = a[k - 1];
        let (s1, p1) = a[k];
        p0 + (score_time - s0) * (p1 - p0) / (s1 - s0)
    }
}

/// Converts frame pairs to seconds. Each score frame becomes one anchor at the
/// midpoint of its performance frames; consecutive anchors sharing a
/// performance time are then merged at the midpoint of their score times.
pub fn path_to_timemap(
    path: &AlignmentPath,
    hop_a: f64,
    offset_a: usize,
    hop_b: f64,
    offset_b: usize,
) -> TimeMap {
    let ta = |i: usize| (i + offset_a) as f64 * hop_a;
    let tb = |j: usize| (j + offset_b) as f64 * hop_b;
    let mut per_row: Vec<(f64, f64)> = Vec::new();
    let p = path.pairs();
    let mut k = 0;
    while k < p.len() {
        let i = p[k].0;
        let first = p[k].1;
        let mut last = first;
        while k < p.len() && p[k].0 == i {
            last = p[k].1;
            k += 1;
        }
        per_row.push((ta(i), 0.5 * (tb(first) + tb(last))));
    }
    let mut anchors = Vec::with_capacity(per_row.len());
    let mut k = 0;
    while k < per_row.len() {
        let (s0, perf) = per_row[k];
        let mut s1 = s0;
        while k < per_row.len() && per_row[k].1 == perf {
            s1 = per_row[k].0;
            k += 1;
        }
        anchors.push((0.5 * (s0 + s1), perf));
    }
    TimeMap { anchors }
}

/// `path_to_timemap` with hops and offsets taken from the two sequences.
pub fn timemap_for(
    path: &AlignmentPath,
    score: &FeatureSequence,
    perf: &FeatureSequence,
) -> TimeMap {
    path_to_timemap(
        path,
        score.hop_seconds(),
        score.t0_offset_frames(),
        perf.hop_seconds(),
        perf.t0_offset_frames(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(v: &[f32]) -> FeatureSequence {
        FeatureSequence::new(v.to_vec(), 1, 0.02, 0).unwrap()
    }

    #[test]
    fn identical_sequences_align_diagonally() {
        let a = scalars(&[0.0, 1.0, 3.0, 2.0, 5.0]);
        let p = dtw_exact(&a, &a, Metric::Euclidean).unwrap();
        assert_eq!(p.total_cost(), 0.0);
        assert_eq!(p.pairs(), &[(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]);
    }

    #[test]
    fn one_by_three_example() {
        let p = dtw_exact(
            &scalars(&[0.0]),
            &scalars(&[0.0, 1.0, 2.0]),
            Metric::Euclidean,
        )
        .unwrap();
        assert_eq!(p.pairs(), &[(0, 0), (0, 1), (0, 2)]);
        assert_eq!(p.total_cost(), 3.0);
    }

    #[test]
    fn input_errors() {
        let e = FeatureSequence::new(vec![], 1, 0.02, 0).unwrap();
        let a = scalars(&[1.0]);
        assert_eq!(
            dtw_exact(&e, &a, Metric::Euclidean),
            Err(Error::EmptySequence)
        );
        let two = FeatureSequence::new(vec![1.0, 2.0], 2, 0.02, 0).unwrap();
        assert_eq!(
            fast_dtw(&a, &two, Metric::Euclidean, 5),
            Err(Error::DimMismatch(1, 2))
        );
    }

    #[test]
    fn exact_refuses_huge_matrices() {
        let a = FeatureSequence::new(vec![0.0; 5001], 1, 0.02, 0).unwrap();
        let b = FeatureSequence::new(vec![0.0; 5000], 1, 0.02, 0).unwrap();
        assert!(matches!(
            dtw_exact(&a, &b, Metric::Euclidean),
            Err(Error::AlignmentTooLarge(_))
        ));
        assert_eq!(
            fast_dtw(&a, &b, Metric::Euclidean, 50)
                .unwrap()
                .total_cost(),
            0.0
        );
    }

    #[test]
    fn coarsening_carries_odd_tail() {
        let s = Seq {
            data: vec![1.0, 3.0, 5.0],
            dim: 1,
        };
        assert_eq!(s.coarsen().data, vec![2.0, 5.0]);
    }

    #[test]
    fn timemap_examples() {
        let diag = AlignmentPath {
            pairs: (0..5).map(|i| (i, i)).collect(),
            total_cost: 0.0,
        };
        let h = 448.0 / 22050.0;
        let m = path_to_timemap(&diag, h, 8, h, 8);
        for &(s, p) in m.anchors() {
            assert_eq!(s, p);
        }
        assert_eq!(m.anchors()[0].0, 8.0 * h);

        let two = AlignmentPath {
            pairs: vec![(0, 0), (1, 1)],
            total_cost: 0.0,
        };
        assert_eq!(
            path_to_timemap(&two, 0.02, 0, 0.02, 0).anchors(),
            &[(0.0, 0.0), (0.02, 0.02)]
        );

        let run = AlignmentPath {
            pairs: vec![(0, 0), (0, 1), (0, 2), (1, 3)],
            total_cost: 0.0,
        };
        let m = path_to_timemap(&run, 1.0, 0, 1.0, 0);
        assert_eq!(m.anchors(), &[(0.0, 1.0), (1.0, 3.0)]);

        let flat = AlignmentPath {
            pairs: vec![(0, 0), (1, 0), (2, 0), (3, 1)],
            total_cost: 0.0,
        };
        let m = path_to_timemap(&flat, 1.0, 0, 1.0, 0);
        assert_eq!(m.anchors(), &[(1.0, 0.0), (3.0, 1.0)]);
    }

    #[test]
    fn lookup_examples() {
        let m = TimeMap::new(vec![(0.0, 0.0), (2.0, 4.0)]).unwrap();
        assert_eq!(m.lookup(1.0), 2.0);
        assert_eq!(m.lookup(2.0), 4.0);
        assert_eq!(m.lookup(0.0), 0.0);
        assert_eq!(m.lookup(-1.0), 0.0);
        assert_eq!(m.lookup(9.0), 4.0);
        let id = TimeMap::identity(10.0);
        assert_eq!(id.lookup(3.25), 3.25);
    }
}
