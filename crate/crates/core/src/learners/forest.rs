use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::LearnerSpec;

const LEAF: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Node {
    feature: usize,
    threshold: f64,
    left: usize,
    right: usize,
    value: f64,
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut k = 0;
        loop {
            let node = &self.nodes[k];
            if node.feature == LEAF {
                return node.value;
            }
            k = if x[(row, node.feature)] <= node.threshold {
                node.left
            } else {
                node.right
            };
        }
    }
}

/// Regression forest of CART trees grown on variance reduction.
#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    mtry: usize,
    min_leaf: usize,
    max_depth: usize,
    rng: ChaCha8Rng,
    features: Vec<usize>,
    buf: Vec<(f64, f64)>,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Grower<'_> {
    fn best_split_on(&mut self, idx: &[usize], feature: usize) -> Option<Split> {
        let n = idx.len();
        self.buf.clear();
        self.buf
            .extend(idx.iter().map(|&i| (self.x[(i, feature)], self.y[i])));
        self.buf.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = self.buf.iter().map(|p| p.1).sum();
        let mut left = 0.0;
        let mut best: Option<Split> = None;
        for i in 1..n {
            left += self.buf[i - 1].1;
            if i < self.min_leaf || n - i < self.min_leaf {
                continue;
            }
            let (a, b) = (self.buf[i - 1].0, self.buf[i].0);
            if a >= b {
                continue;
            }
            let right = total - left;
            let score = left * left / i as f64 + right * right / (n - i) as f64;
            if best.as_ref().is_none_or(|s| score > s.score) {
                let mid = 0.5 * (a + b);
                let threshold = if mid < b { mid } else { a };
                best = Some(Split {
                    feature,
                    threshold,
                    score,
                });
            }
        }
        best
    }

    fn find_split(&mut self, idx: &[usize]) -> Option<Split> {
        let n = idx.len() as f64;
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let parent = total * total / n;
        let mut features = std::mem::take(&mut self.features);
        features.shuffle(&mut self.rng);
        let mut best: Option<Split> = None;
        // Features beyond the first `mtry` are only consulted when none of
        // the sampled ones admits a split.
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some(s) = self.best_split_on(idx, f) {
                if s.score > parent * (1.0 + 1e-12) + 1e-300
                    && best.as_ref().is_none_or(|b| s.score > b.score)
                {
                    best = Some(s);
                }
            }
        }
        self.features = features;
        best
    }

    fn grow(&mut self, idx: &mut [usize]) -> Tree {
        let mut nodes = Vec::new();
        // (node slot, start, end, depth)
        let mut stack = vec![(0usize, 0usize, idx.len(), 0usize)];
        nodes.push(placeholder());
        while let Some((slot, start, end, depth)) = stack.pop() {
            let part = &mut idx[start..end];
            let n = part.len();
            let mean = part.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
            let first = self.y[part[0]];
            let pure = part.iter().all(|&i| self.y[i] == first);
            let split = if pure || n < 2 * self.min_leaf || depth >= self.max_depth {
                None
            } else {
                self.find_split(part)
            };
            let Some(split) = split else {
                nodes[slot].value = if pure { first } else { mean };
                continue;
            };
            let mut lo = 0;
            for k in 0..n {
                if self.x[(part[k], split.feature)] <= split.threshold {
                    part.swap(lo, k);
                    lo += 1;
                }
            }
            let left = nodes.len();
            nodes.push(placeholder());
            let right = nodes.len();
            nodes.push(placeholder());
            nodes[slot] = Node {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
                value: mean,
            };
            stack.push((right, start + lo, end, depth + 1));
            stack.push((left, start, start + lo, depth + 1));
        }
        Tree { nodes }
    }
}

fn placeholder() -> Node {
    Node {
        feature: LEAF,
        threshold: 0.0,
        left: 0,
        right: 0,
        value: 0.0,
    }
}

impl Forest {
    pub(super) fn fit(spec: &LearnerSpec, mtry: usize, x: &DMatrix<f64>, y: &[f64]) -> Forest {
        let n = y.len();
        let trees = (0..spec.trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(t as u64));
                let mut idx: Vec<usize> = if spec.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let mut g = Grower {
                    x,
                    y,
                    mtry,
                    min_leaf: spec.min_leaf,
                    max_depth: spec.max_depth.unwrap_or(usize::MAX),
                    rng,
                    features: (0..x.ncols()).collect(),
                    buf: Vec::with_capacity(n),
                };
                g.grow(&mut idx)
            })
            .collect();
        Forest { trees }
    }

    pub(super) fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let m = self.trees.len() as f64;
        (0..x.nrows())
            .into_par_iter()
            .map(|row| {
                let mut acc = 0.0;
                for t in &self.trees {
                    acc += t.predict_row(x, row);
                }
                acc / m
            })
            .collect()
    }
}
