//! One-dimensional calibrators: step functions, histogram partitions,
//! histogram binning, isotonic regression (PAVA) and a brute-force
//! isotonic oracle.
//!
//! Cells are right-closed throughout: with breakpoints `b₁ < … < b_{m−1}`
//! the cells are `(−∞, b₁], (b₁, b₂], …, (b_{m−1}, ∞)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step function `θ: ℝ → ℝ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPiecewise")]
pub struct PiecewiseConstant {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

#[derive(Deserialize)]
struct RawPiecewise {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

impl TryFrom<RawPiecewise> for PiecewiseConstant {
    type Error = Error;

    fn try_from(raw: RawPiecewise) -> Result<Self> {
        Self::new(raw.breakpoints, raw.levels)
    }
}

impl PiecewiseConstant {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if levels.len() != breakpoints.len() + 1 {
            return Err(Error::LengthMismatch {
                left: breakpoints.len() + 1,
                right: levels.len(),
            });
        }
        if breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("breakpoints"));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("breakpoints must be strictly increasing".into()));
        }
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("levels"));
        }
        Ok(Self { breakpoints, levels })
    }

    pub fn constant(level: f64) -> Self {
        Self {
            breakpoints: Vec::new(),
            levels: vec![level],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn num_cells(&self) -> usize {
        self.levels.len()
    }

    /// Index of the cell containing `t`.
    pub fn cell_of(&self, t: f64) -> usize {
        cell_index(&self.breakpoints, t)
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        self.levels[self.cell_of(t)]
    }
}

/// Level of the cell containing `t`.
pub fn evaluate_piecewise(theta: &PiecewiseConstant, t: f64) -> f64 {
    theta.evaluate(t)
}

fn cell_index(edges: &[f64], t: f64) -> usize {
    // Number of edges strictly below t; t on an edge belongs to the left cell.
    edges.partition_point(|e| *e < t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    EqualMass,
    EqualWidth,
    Explicit,
}

/// Partition of the real line into `B` right-closed cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramPartition {
    edges: Vec<f64>,
    scheme: PartitionScheme,
}

impl HistogramPartition {
    /// Explicit partition from interior edges; repeated edges are merged.
    pub fn explicit(mut edges: Vec<f64>) -> Result<Self> {
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("partition edges"));
        }
        if edges.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("partition edges must be nondecreasing".into()));
        }
        edges.dedup();
        Ok(Self {
            edges,
            scheme: PartitionScheme::Explicit,
        })
    }

    pub fn single_cell() -> Self {
        Self {
            edges: Vec::new(),
            scheme: PartitionScheme::Explicit,
        }
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn scheme(&self) -> PartitionScheme {
        self.scheme
    }

    pub fn num_cells(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn cell_of(&self, t: f64) -> usize {
        cell_index(&self.edges, t)
    }

    /// Cell counts of `xs`.
    pub fn counts(&self, xs: &[f64]) -> Vec<usize> {
        let mut counts = vec![0; self.num_cells()];
        for &x in xs {
            counts[self.cell_of(x)] += 1;
        }
        counts
    }
}

/// Default bin count `⌈n^{1/3}⌉`.
pub fn default_bin_count(n: usize) -> usize {
    let root = (n as f64).cbrt().ceil() as usize;
    // Guard against cbrt rounding just above an exact cube.
    let root = if root > 1 && (root - 1).pow(3) >= n { root - 1 } else { root };
    root.max(1)
}

/// Builds an equal-mass (empirical quantile) or equal-width partition.
///
/// Equal-mass edges sit at the order statistics `x_(⌈kn/B⌉)`; duplicates are
/// merged, so the effective cell count can be below `bins`. All-equal input
/// yields a single cell.
pub fn make_partition(xs: &[f64], bins: usize, scheme: PartitionScheme) -> Result<HistogramPartition> {
    if xs.is_empty() {
        return Err(Error::Empty("partition input"));
    }
    if bins == 0 {
        return Err(Error::InvalidConfig("bin count must be at least 1".into()));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("partition input"));
    }
    let (min, max) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let mut edges = Vec::with_capacity(bins.saturating_sub(1));
    match scheme {
        PartitionScheme::EqualMass => {
            let mut sorted = xs.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            for k in 1..bins {
                let rank = (k * n).div_ceil(bins);
                edges.push(sorted[rank.max(1) - 1]);
            }
        }
        PartitionScheme::EqualWidth => {
            let width = (max - min) / bins as f64;
            for k in 1..bins {
                edges.push(min + width * k as f64);
            }
        }
        PartitionScheme::Explicit => {
            return Err(Error::InvalidConfig(
                "explicit partitions are built with HistogramPartition::explicit".into(),
            ))
        }
    }
    edges.dedup();
    // An edge at (or past) the maximum would leave the last cell empty.
    edges.retain(|e| *e < max);
    Ok(HistogramPartition { edges, scheme })
}

/// Bin means of `ys` grouped by the cell of `xs`. Empty cells take the level
/// of the nearest non-empty cell by index distance, ties to the left.
pub fn fit_histogram(xs: &[f64], ys: &[f64], partition: &HistogramPartition) -> Result<PiecewiseConstant> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.is_empty() {
        return Err(Error::Empty("histogram fit"));
    }
    let cells = partition.num_cells();
    let mut sums = vec![0.0; cells];
    let mut counts = vec![0usize; cells];
    for (&x, &y) in xs.iter().zip(ys) {
        let c = partition.cell_of(x);
        sums[c] += y;
        counts[c] += 1;
    }
    let means: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let levels = fill_empty_cells(&means);
    PiecewiseConstant::new(partition.edges.clone(), levels)
}

fn fill_empty_cells(means: &[Option<f64>]) -> Vec<f64> {
    let n = means.len();
    (0..n)
        .map(|i| {
            if let Some(m) = means[i] {
                return m;
            }
            for d in 1..n {
                if i >= d {
                    if let Some(m) = means[i - d] {
                        return m;
                    }
                }
                if i + d < n {
                    if let Some(m) = means[i + d] {
                        return m;
                    }
                }
            }
            unreachable!("at least one cell is non-empty")
        })
        .collect()
}

/// Distinct x-values after pooling ties: `(x, Σwy, Σw)`.
#[derive(Debug, Clone, Copy)]
struct PooledPoint {
    x: f64,
    wy: f64,
    w: f64,
}

fn pool_ties(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Result<Vec<PooledPoint>> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != xs.len() {
            return Err(Error::LengthMismatch {
                left: xs.len(),
                right: w.len(),
            });
        }
        if let Some(bad) = w.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::NonpositiveWeight(*bad));
        }
    }
    if xs.is_empty() {
        return Err(Error::Empty("isotonic fit"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("isotonic input"));
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut pooled: Vec<PooledPoint> = Vec::new();
    for i in order {
        let w = weights.map_or(1.0, |w| w[i]);
        match pooled.last_mut() {
            Some(last) if last.x == xs[i] => {
                last.wy += w * ys[i];
                last.w += w;
            }
            _ => pooled.push(PooledPoint {
                x: xs[i],
                wy: w * ys[i],
                w,
            }),
        }
    }
    Ok(pooled)
}

/// Weighted least-squares nondecreasing fit of `ys` on `xs` by
/// pool-adjacent-violators.
///
/// Equal-x samples are pooled first. Each breakpoint sits at the largest
/// x of the block to its left, so evaluation at any point depends only on
/// its order relative to the training xs.
pub fn fit_isotonic_pava(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Result<PiecewiseConstant> {
    let pooled = pool_ties(xs, ys, weights)?;

    struct Block {
        wy: f64,
        w: f64,
        last: usize,
    }

    let mut blocks: Vec<Block> = Vec::with_capacity(pooled.len());
    for (idx, p) in pooled.iter().enumerate() {
        blocks.push(Block {
            wy: p.wy,
            w: p.w,
            last: idx,
        });
        while blocks.len() >= 2 {
            let n = blocks.len();
            let (prev, cur) = (&blocks[n - 2], &blocks[n - 1]);
            if prev.wy / prev.w < cur.wy / cur.w {
                break;
            }
            let cur = blocks.pop().expect("len >= 2");
            let prev = blocks.last_mut().expect("len >= 1");
            prev.wy += cur.wy;
            prev.w += cur.w;
            prev.last = cur.last;
        }
    }
    let levels = blocks.iter().map(|b| b.wy / b.w).collect();
    let breakpoints = blocks[..blocks.len() - 1].iter().map(|b| pooled[b.last].x).collect();
    PiecewiseConstant::new(breakpoints, levels)
}

/// Exhaustive block-partition dynamic program for isotonic regression.
///
/// Enumerates every split of the (already sorted) sequence into contiguous
/// blocks whose means are nondecreasing and returns the fitted values of
/// the least-squares optimum. `O(n³)`; intended as a test oracle.
pub fn isotonic_block_dp(ys: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = ys.len();
    assert_eq!(n, weights.len());
    if n == 0 {
        return Vec::new();
    }
    let mut pw = vec![0.0; n + 1];
    let mut pwy = vec![0.0; n + 1];
    let mut pwyy = vec![0.0; n + 1];
    for i in 0..n {
        pw[i + 1] = pw[i] + weights[i];
        pwy[i + 1] = pwy[i] + weights[i] * ys[i];
        pwyy[i + 1] = pwyy[i] + weights[i] * ys[i] * ys[i];
    }
    let mean = |i: usize, j: usize| (pwy[j + 1] - pwy[i]) / (pw[j + 1] - pw[i]);
    let sse = |i: usize, j: usize| {
        let w = pw[j + 1] - pw[i];
        let wy = pwy[j + 1] - pwy[i];
        (pwyy[j + 1] - pwyy[i] - wy * wy / w).max(0.0)
    };
    // cost[i][j]: best cost of a valid prefix 0..=j whose last block is i..=j.
    let mut cost = vec![vec![f64::INFINITY; n]; n];
    let mut parent = vec![vec![usize::MAX; n]; n];
    for j in 0..n {
        cost[0][j] = sse(0, j);
        for i in 1..=j {
            let m = mean(i, j);
            let mut best = f64::INFINITY;
            let mut arg = usize::MAX;
            for h in 0..i {
                if cost[h][i - 1] < best && mean(h, i - 1) <= m {
                    best = cost[h][i - 1];
                    arg = h;
                }
            }
            if arg != usize::MAX {
                cost[i][j] = best + sse(i, j);
                parent[i][j] = arg;
            }
        }
    }
    let mut start = (0..n)
        .min_by(|&a, &b| cost[a][n - 1].total_cmp(&cost[b][n - 1]))
        .expect("n > 0");
    let mut end = n - 1;
    let mut fitted = vec![0.0; n];
    loop {
        let m = mean(start, end);
        fitted[start..=end].iter_mut().for_each(|f| *f = m);
        if start == 0 {
            break;
        }
        let prev = parent[start][end];
        end = start - 1;
        start = prev;
    }
    fitted
}

/// Isotonic fitted values at the training points via [`isotonic_block_dp`].
pub fn isotonic_oracle(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let pooled = pool_ties(xs, ys, weights)?;
    let means: Vec<f64> = pooled.iter().map(|p| p.wy / p.w).collect();
    let w: Vec<f64> = pooled.iter().map(|p| p.w).collect();
    let fitted = isotonic_block_dp(&means, &w);
    let pooled_x: Vec<f64> = pooled.iter().map(|p| p.x).collect();
    Ok(xs
        .iter()
        .map(|x| fitted[pooled_x.partition_point(|p| p < x)])
        .collect())
}

/// Merges adjacent cells of `theta` whose levels differ by at most `tol`
/// into maximal runs and returns the run boundaries as a partition.
///
/// Boundaries that would leave a cell without any of `xs` are dropped
/// (ignored when `xs` is empty).
pub fn flat_regions(theta: &PiecewiseConstant, xs: &[f64], tol: f64) -> HistogramPartition {
    let levels = theta.levels();
    let mut edges: Vec<f64> = (0..levels.len() - 1)
        .filter(|&j| (levels[j + 1] - levels[j]).abs() > tol)
        .map(|j| theta.breakpoints()[j])
        .collect();
    if !xs.is_empty() {
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut kept = Vec::with_capacity(edges.len());
        let mut below_last = 0;
        for e in edges {
            let below = sorted.partition_point(|x| *x <= e);
            if below > below_last && below < sorted.len() {
                kept.push(e);
                below_last = below;
            }
        }
        edges = kept;
    }
    HistogramPartition {
        edges,
        scheme: PartitionScheme::Explicit,
    }
}

/// Removes edges until every cell holds at least `min_count` of `xs` (or one
/// cell remains). The smallest cell is merged into its smaller neighbor,
/// ties to the left.
pub fn merge_small_cells(partition: &HistogramPartition, xs: &[f64], min_count: usize) -> HistogramPartition {
    let mut edges = partition.edges.clone();
    let mut counts = partition.counts(xs);
    while counts.len() > 1 {
        let (j, &c) = counts
            .iter()
            .enumerate()
            .min_by_key(|&(_, c)| *c)
            .expect("non-empty counts");
        if c >= min_count {
            break;
        }
        let left = j > 0;
        let right = j + 1 < counts.len();
        let merge_left = left && (!right || counts[j - 1] <= counts[j + 1]);
        let (keep, drop) = if merge_left { (j - 1, j) } else { (j, j + 1) };
        counts[keep] += counts[drop];
        counts.remove(drop);
        edges.remove(keep);
    }
    HistogramPartition {
        edges,
        scheme: partition.scheme,
    }
}
