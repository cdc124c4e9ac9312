//! Multi-class probability forest with out-of-bag class probabilities.
//!
//! Trees are grown on bootstrap samples by exhaustive Gini search over every
//! feature. Leaves store in-bag class frequencies; a row's out-of-bag
//! probability is the mean leaf frequency over the trees that did not draw it.

use std::fmt::{self, Write as _};

use rand::Rng;
use rayon::prelude::*;

use crate::data::{ColumnKind, DataMatrix};
use crate::error::{PklmError, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// Dense column-major training matrix without holes.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    n_rows: usize,
    kinds: Vec<FeatureKind>,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, kinds: Vec<FeatureKind>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.len() != kinds.len() || columns.iter().any(|c| c.len() != n_rows) {
            return Err(PklmError::InvalidData("feature columns have inconsistent shape".into()));
        }
        if kinds.is_empty() {
            return Err(PklmError::InvalidData("feature matrix has no columns".into()));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PklmError::InvalidData("feature values must be finite".into()));
        }
        Ok(Self {
            n_rows,
            kinds,
            values: columns.concat(),
        })
    }

    /// Numeric single-column matrix.
    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        Self::new(values.len(), vec![FeatureKind::Numeric], vec![values])
    }

    /// Restricts `data` to `rows x cols`; every selected cell must be present.
    pub fn from_data(data: &DataMatrix, rows: &[usize], cols: &[usize]) -> Result<Self> {
        let mut columns = Vec::with_capacity(cols.len());
        let mut kinds = Vec::with_capacity(cols.len());
        for &j in cols {
            kinds.push(match data.column_kinds()[j] {
                ColumnKind::Numeric => FeatureKind::Numeric,
                ColumnKind::Categorical { .. } => FeatureKind::Categorical,
            });
            let col = rows
                .iter()
                .map(|&i| {
                    data.get(i, j).ok_or_else(|| {
                        PklmError::InvalidData(format!("missing training cell ({i}, {j})"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            columns.push(col);
        }
        Self::new(rows.len(), kinds, columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.kinds.len()
    }

    #[inline]
    pub fn column(&self, f: usize) -> &[f64] {
        &self.values[f * self.n_rows..(f + 1) * self.n_rows]
    }

    #[inline]
    pub fn get(&self, row: usize, f: usize) -> f64 {
        self.values[f * self.n_rows + row]
    }
}

/// Every split considers all features (`mtry` equal to the feature count).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestConfig {
    pub num_trees: usize,
    pub min_node_size: usize,
    pub seed: u64,
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_trees == 0 {
            return Err(PklmError::InvalidConfig("num_trees must be at least 1".into()));
        }
        if self.min_node_size == 0 {
            return Err(PklmError::InvalidConfig("min_node_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRule {
    /// Left when `x <= threshold`.
    Threshold(f64),
    /// Left when `x == level`.
    Level(f64),
}

impl SplitRule {
    #[inline]
    fn goes_left(self, x: f64) -> bool {
        match self {
            SplitRule::Threshold(t) => x <= t,
            SplitRule::Level(c) => x == c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        rule: SplitRule,
        left: usize,
        right: usize,
    },
    /// Offset into the tree's leaf frequency table.
    Leaf { offset: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    leaf_freqs: Vec<f64>,
    n_classes: usize,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_freqs.len() / self.n_classes
    }

    pub fn leaf_frequencies(&self, offset: usize) -> &[f64] {
        &self.leaf_freqs[offset..offset + self.n_classes]
    }

    /// Leaf class frequencies reached by `row` of `x`.
    pub fn predict_row(&self, x: &FeatureMatrix, row: usize) -> &[f64] {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Split {
                    feature,
                    rule,
                    left,
                    right,
                } => k = if rule.goes_left(x.get(row, feature)) { left } else { right },
                Node::Leaf { offset } => return self.leaf_frequencies(offset),
            }
        }
    }

    fn dump_node(&self, out: &mut String, k: usize, depth: usize) -> fmt::Result {
        let pad = "  ".repeat(depth);
        match self.nodes[k] {
            Node::Split {
                feature,
                rule,
                left,
                right,
            } => {
                match rule {
                    SplitRule::Threshold(t) => writeln!(out, "{pad}x{feature} <= {t}")?,
                    SplitRule::Level(c) => writeln!(out, "{pad}x{feature} == {c}")?,
                }
                self.dump_node(out, left, depth + 1)?;
                self.dump_node(out, right, depth + 1)
            }
            Node::Leaf { offset } => {
                writeln!(out, "{pad}leaf {:?}", self.leaf_frequencies(offset))
            }
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.dump_node(&mut s, 0, 0)?;
        f.write_str(&s)
    }
}

#[derive(Debug, Clone)]
pub struct FittedForest {
    pub trees: Vec<Tree>,
    /// Per tree, the bootstrap multiplicity of every training row.
    pub inbag_counts: Vec<Vec<u32>>,
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OobProbabilities {
    n_classes: usize,
    /// Row-major `n x K`; rows with zero coverage are all zero.
    probs: Vec<f64>,
    pub coverage: Vec<u32>,
}

impl OobProbabilities {
    pub fn from_rows(rows: &[Vec<f64>], coverage: Vec<u32>) -> Result<Self> {
        let n_classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_classes) || coverage.len() != rows.len() {
            return Err(PklmError::InvalidData("ragged probability matrix".into()));
        }
        Ok(Self {
            n_classes,
            probs: rows.concat(),
            coverage,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.coverage.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn is_covered(&self, row: usize) -> bool {
        self.coverage[row] > 0
    }

    /// `None` for rows that were in-bag in every tree.
    pub fn row(&self, row: usize) -> Option<&[f64]> {
        self.is_covered(row)
            .then(|| &self.probs[row * self.n_classes..(row + 1) * self.n_classes])
    }

    pub fn uncovered_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| !self.is_covered(i)).collect()
    }
}

pub fn fit_forest(
    features: &FeatureMatrix,
    labels: &[usize],
    n_classes: usize,
    config: &ForestConfig,
) -> Result<FittedForest> {
    config.validate()?;
    let n = features.n_rows();
    if n == 0 || labels.is_empty() {
        return Err(PklmError::EmptyTraining);
    }
    if labels.len() != n {
        return Err(PklmError::InvalidData(format!(
            "{} labels for {n} training rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= n_classes) {
        return Err(PklmError::InvalidData(format!("label {bad} out of range")));
    }
    if labels.iter().all(|&c| c == labels[0]) {
        return Err(PklmError::SingleClass);
    }

    let presorted: Vec<Vec<u32>> = (0..features.n_features())
        .map(|f| {
            let col = features.column(f);
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            order
        })
        .collect();

    let grown: Vec<(Tree, Vec<u32>)> = (0..config.num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(config.seed, &[t as u64]);
            let mut counts = vec![0u32; n];
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1;
            }
            let tree = TreeGrower::new(features, labels, n_classes, &counts, &presorted)
                .grow(config.min_node_size);
            (tree, counts)
        })
        .collect();

    let (trees, inbag_counts) = grown.into_iter().unzip();
    Ok(FittedForest {
        trees,
        inbag_counts,
        n_classes,
    })
}

/// Mean leaf frequencies over the trees in which each row was out-of-bag.
pub fn oob_probabilities(forest: &FittedForest, features: &FeatureMatrix) -> OobProbabilities {
    let n = features.n_rows();
    let k = forest.n_classes;
    let mut sums = vec![0.0; n * k];
    let mut coverage = vec![0u32; n];
    for (tree, counts) in forest.trees.iter().zip(&forest.inbag_counts) {
        for i in (0..n).filter(|&i| counts[i] == 0) {
            let leaf = tree.predict_row(features, i);
            for (s, &v) in sums[i * k..(i + 1) * k].iter_mut().zip(leaf) {
                *s += v;
            }
            coverage[i] += 1;
        }
    }
    for i in 0..n {
        if coverage[i] > 0 {
            let c = f64::from(coverage[i]);
            sums[i * k..(i + 1) * k].iter_mut().for_each(|s| *s /= c);
        }
    }
    OobProbabilities {
        n_classes: k,
        probs: sums,
        coverage,
    }
}

struct TreeGrower<'a> {
    x: &'a FeatureMatrix,
    n_classes: usize,
    /// Feature `f` owns `order[f * m..(f + 1) * m]`: in-bag rows sorted by
    /// that feature. Every node is the same sub-range in each segment.
    order: Vec<Entry>,
    m: usize,
    scratch: Vec<Entry>,
    goes_left: Vec<bool>,
}

/// A row as seen from one feature segment, packed so split search scans
/// memory sequentially.
#[derive(Clone, Copy)]
struct Entry {
    x: f64,
    weight: f64,
    row: u32,
    label: u32,
}

struct Pending {
    node: usize,
    lo: usize,
    hi: usize,
}

struct BestSplit {
    score: f64,
    feature: usize,
    rule: SplitRule,
}

impl<'a> TreeGrower<'a> {
    fn new(
        x: &'a FeatureMatrix,
        labels: &'a [usize],
        n_classes: usize,
        weights: &'a [u32],
        presorted: &[Vec<u32>],
    ) -> Self {
        let m = weights.iter().filter(|&&w| w > 0).count();
        let mut order = Vec::with_capacity(m * presorted.len());
        for (f, sorted) in presorted.iter().enumerate() {
            let col = x.column(f);
            order.extend(sorted.iter().filter(|&&i| weights[i as usize] > 0).map(|&i| Entry {
                x: col[i as usize],
                weight: f64::from(weights[i as usize]),
                row: i,
                label: labels[i as usize] as u32,
            }));
        }
        Self {
            x,
            n_classes,
            order,
            m,
            scratch: Vec::with_capacity(m),
            goes_left: vec![false; x.n_rows()],
        }
    }

    fn grow(mut self, min_node_size: usize) -> Tree {
        let k = self.n_classes;
        let mut nodes = vec![Node::Leaf { offset: 0 }];
        let mut leaf_freqs = Vec::new();
        let mut stack = vec![Pending {
            node: 0,
            lo: 0,
            hi: self.m,
        }];
        let mut counts = vec![0.0; k];
        let mut left = vec![0.0; k];

        while let Some(Pending { node, lo, hi }) = stack.pop() {
            counts.iter_mut().for_each(|c| *c = 0.0);
            for e in &self.order[lo..hi] {
                counts[e.label as usize] += e.weight;
            }
            let total: f64 = counts.iter().sum();
            let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;

            let split = if pure || total < min_node_size as f64 {
                None
            } else {
                self.best_split(lo, hi, &counts, total, &mut left)
            };

            match split {
                None => {
                    let offset = leaf_freqs.len();
                    leaf_freqs.extend(counts.iter().map(|c| c / total));
                    nodes[node] = Node::Leaf { offset };
                }
                Some(best) => {
                    let n_left = self.partition(lo, hi, best.feature, best.rule);
                    let left = nodes.len();
                    nodes.push(Node::Leaf { offset: 0 });
                    nodes.push(Node::Leaf { offset: 0 });
                    nodes[node] = Node::Split {
                        feature: best.feature,
                        rule: best.rule,
                        left,
                        right: left + 1,
                    };
                    // Right first so the left subtree is expanded next.
                    stack.push(Pending {
                        node: left + 1,
                        lo: lo + n_left,
                        hi,
                    });
                    stack.push(Pending {
                        node: left,
                        lo,
                        hi: lo + n_left,
                    });
                }
            }
        }
        Tree {
            nodes,
            leaf_freqs,
            n_classes: k,
        }
    }

    /// Maximizes `sum_k L_k^2 / |L| + sum_k R_k^2 / |R|`, which is equivalent
    /// to minimizing the weighted Gini impurity of the children. Ties keep the
    /// earliest candidate: lowest feature, then smallest threshold or level.
    fn best_split(
        &self,
        lo: usize,
        hi: usize,
        counts: &[f64],
        total: f64,
        left: &mut [f64],
    ) -> Option<BestSplit> {
        let parent_score: f64 = counts.iter().map(|c| c * c).sum::<f64>() / total;
        let mut best: Option<BestSplit> = None;
        let mut best_score = parent_score + 1e-10 * total.max(1.0);

        for f in 0..self.x.n_features() {
            let seg = &self.order[f * self.m + lo..f * self.m + hi];
            left.iter_mut().for_each(|c| *c = 0.0);
            let mut left_total = 0.0;

            match self.x.kinds[f] {
                FeatureKind::Numeric => {
                    for pair in seg.windows(2) {
                        let (e, next) = (&pair[0], &pair[1]);
                        left[e.label as usize] += e.weight;
                        left_total += e.weight;
                        let (a, b) = (e.x, next.x);
                        if a == b {
                            continue;
                        }
                        let score = split_score(left, left_total, counts, total);
                        if score > best_score {
                            best_score = score;
                            let mid = a + (b - a) / 2.0;
                            // Guard against the midpoint rounding onto `b`.
                            let t = if mid < b { mid } else { a };
                            best = Some(BestSplit {
                                score,
                                feature: f,
                                rule: SplitRule::Threshold(t),
                            });
                        }
                    }
                }
                FeatureKind::Categorical => {
                    let mut start = 0;
                    while start < seg.len() {
                        let level = seg[start].x;
                        let mut end = start;
                        left.iter_mut().for_each(|c| *c = 0.0);
                        left_total = 0.0;
                        while end < seg.len() && seg[end].x == level {
                            left[seg[end].label as usize] += seg[end].weight;
                            left_total += seg[end].weight;
                            end += 1;
                        }
                        if start == 0 && end == seg.len() {
                            break;
                        }
                        let score = split_score(left, left_total, counts, total);
                        if score > best_score {
                            best_score = score;
                            best = Some(BestSplit {
                                score,
                                feature: f,
                                rule: SplitRule::Level(level),
                            });
                        }
                        start = end;
                    }
                }
            }
        }
        debug_assert!(best.as_ref().is_none_or(|b| b.score > parent_score));
        best
    }

    /// Stable partition of every feature segment; returns the left size.
    fn partition(&mut self, lo: usize, hi: usize, feature: usize, rule: SplitRule) -> usize {
        let mut n_left = 0;
        for e in &self.order[feature * self.m + lo..feature * self.m + hi] {
            let l = rule.goes_left(e.x);
            self.goes_left[e.row as usize] = l;
            n_left += usize::from(l);
        }
        for f in 0..self.x.n_features() {
            let seg = &mut self.order[f * self.m + lo..f * self.m + hi];
            self.scratch.clear();
            let mut w = 0;
            for r in 0..seg.len() {
                let e = seg[r];
                if self.goes_left[e.row as usize] {
                    seg[w] = e;
                    w += 1;
                } else {
                    self.scratch.push(e);
                }
            }
            seg[w..].copy_from_slice(&self.scratch);
        }
        n_left
    }
}

#[inline]
fn split_score(left: &[f64], left_total: f64, counts: &[f64], total: f64) -> f64 {
    let right_total = total - left_total;
    let mut l = 0.0;
    let mut r = 0.0;
    for (&a, &c) in left.iter().zip(counts) {
        l += a * a;
        let b = c - a;
        r += b * b;
    }
    l / left_total + r / right_total
}
