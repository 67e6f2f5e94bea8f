//! Random survival forest: bootstrap ensemble of survival trees split on the
//! two-sample log-rank statistic, predicting the mean of per-tree leaf
//! Nelson-Aalen cumulative hazards.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::error::{Result, SurvError};
use crate::nonparametric::{nelson_aalen_from_outcomes, StepFunction};

/// Columns with more distinct values than this get a random subset of
/// `MAX_CANDIDATES` midpoints.
const MAX_EXHAUSTIVE_DISTINCT: usize = 33;
const MAX_CANDIDATES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RsfOptions {
    pub n_trees: usize,
    /// Columns tried per split; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for RsfOptions {
    fn default() -> Self {
        RsfOptions { n_trees: 200, mtry: None, min_leaf: 15, max_depth: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[column] <= threshold` go left.
    Split { column: usize, threshold: f64, left: usize, right: usize },
    Leaf { size: usize, chf: StepFunction },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTree {
    pub seed: u64,
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
    /// Bootstrap draw (with multiplicity), sorted.
    pub in_bag: Vec<usize>,
    pub out_of_bag: Vec<usize>,
}

impl SurvivalTree {
    pub fn leaf_for(&self, x: &[f64]) -> &Node {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split { column, threshold, left, right } => {
                    id = if x[*column] <= *threshold { *left } else { *right };
                }
                leaf => return leaf,
            }
        }
    }

    pub fn leaf_chf(&self, x: &[f64]) -> &StepFunction {
        match self.leaf_for(x) {
            Node::Leaf { chf, .. } => chf,
            Node::Split { .. } => unreachable!("leaf_for returns leaves"),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub column_names: Vec<String>,
    pub trees: Vec<SurvivalTree>,
    pub mtry: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
    /// Distinct training event times; the grid for [`mortality_score`].
    pub event_grid: Vec<f64>,
}

/// Seed of tree `index` under `master` (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Absolute standardized two-sample log-rank statistic for the records of
/// `times`/`events` sorted by ascending time, split by `is_left`. `None` when
/// a side is empty or the variance vanishes.
fn logrank_sorted(times: &[f64], events: &[bool], is_left: &[bool]) -> Option<f64> {
    let n = times.len();
    let n_left = is_left.iter().filter(|&&l| l).count();
    if n_left == 0 || n_left == n {
        return None;
    }
    let (mut y, mut y_left) = (n as f64, n_left as f64);
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < n {
        let t = times[i];
        let (mut d, mut d_left, mut c, mut c_left) = (0.0, 0.0, 0.0, 0.0);
        while i < n && times[i] == t {
            c += 1.0;
            if is_left[i] {
                c_left += 1.0;
            }
            if events[i] {
                d += 1.0;
                if is_left[i] {
                    d_left += 1.0;
                }
            }
            i += 1;
        }
        if d > 0.0 {
            observed += d_left;
            expected += d * y_left / y;
            if y > 1.0 {
                variance += y_left * (y - y_left) * d * (y - d) / (y * y * (y - 1.0));
            }
        }
        y -= c;
        y_left -= c_left;
    }
    if variance > 0.0 {
        Some((observed - expected).abs() / variance.sqrt())
    } else {
        None
    }
}

fn sort_by_time(times: &[f64], rows: &mut [usize]) {
    rows.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
}

/// Log-rank score of splitting `sample` (design row indices, repeats allowed)
/// at `x[column] <= threshold`.
pub fn logrank_score(design: &DesignMatrix, sample: &[usize], column: usize, threshold: f64) -> Option<f64> {
    let mut rows = sample.to_vec();
    sort_by_time(design.times(), &mut rows);
    let times: Vec<f64> = rows.iter().map(|&i| design.times()[i]).collect();
    let events: Vec<bool> = rows.iter().map(|&i| design.events()[i]).collect();
    let is_left: Vec<bool> = rows.iter().map(|&i| design.get(i, column) <= threshold).collect();
    if !events.iter().any(|&e| e) {
        return None;
    }
    logrank_sorted(&times, &events, &is_left)
}

struct Grower<'a> {
    design: &'a DesignMatrix,
    mtry: usize,
    min_leaf: usize,
    max_depth: Option<usize>,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let times: Vec<f64> = rows.iter().map(|&i| self.design.times()[i]).collect();
        let events: Vec<bool> = rows.iter().map(|&i| self.design.events()[i]).collect();
        self.nodes.push(Node::Leaf { size: rows.len(), chf: nelson_aalen_from_outcomes(&times, &events) });
        self.nodes.len() - 1
    }

    /// `rows` is sorted by time; children inherit that order.
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let d = self.design;
        let has_event = rows.iter().any(|&i| d.events()[i]);
        let depth_ok = self.max_depth.is_none_or(|m| depth < m);
        if !has_event || !depth_ok || rows.len() < 2 * self.min_leaf {
            return self.leaf(&rows);
        }
        let times: Vec<f64> = rows.iter().map(|&i| d.times()[i]).collect();
        let events: Vec<bool> = rows.iter().map(|&i| d.events()[i]).collect();
        let p = d.n_cols();
        let columns = index::sample(&mut self.rng, p, self.mtry.min(p)).into_vec();

        let mut best: Option<(f64, usize, f64)> = None;
        let mut is_left = vec![false; rows.len()];
        for column in columns {
            let xs: Vec<f64> = rows.iter().map(|&i| d.get(i, column)).collect();
            let mut distinct = xs.clone();
            distinct.sort_by(|a, b| a.total_cmp(b));
            distinct.dedup();
            if distinct.len() < 2 {
                continue;
            }
            let n_mid = distinct.len() - 1;
            let mids: Vec<usize> = if distinct.len() > MAX_EXHAUSTIVE_DISTINCT {
                let mut m = index::sample(&mut self.rng, n_mid, MAX_CANDIDATES).into_vec();
                m.sort_unstable();
                m
            } else {
                (0..n_mid).collect()
            };
            for m in mids {
                let threshold = 0.5 * (distinct[m] + distinct[m + 1]);
                let mut n_left = 0;
                for (flag, &x) in is_left.iter_mut().zip(&xs) {
                    *flag = x <= threshold;
                    n_left += *flag as usize;
                }
                if n_left < self.min_leaf || rows.len() - n_left < self.min_leaf {
                    continue;
                }
                if let Some(score) = logrank_sorted(&times, &events, &is_left) {
                    if best.map_or(score > 0.0, |(b, _, _)| score > b) {
                        best = Some((score, column, threshold));
                    }
                }
            }
        }
        let Some((_, column, threshold)) = best else {
            return self.leaf(&rows);
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| d.get(i, column) <= threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Split { column, threshold, left: 0, right: 0 });
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Split { column, threshold, left, right };
        id
    }
}

fn grow_tree(design: &DesignMatrix, options: &RsfOptions, mtry: usize, index: usize) -> SurvivalTree {
    let seed = derive_seed(options.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = design.n_rows();
    let mut in_bag: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    in_bag.sort_unstable();
    let mut seen = vec![false; n];
    for &i in &in_bag {
        seen[i] = true;
    }
    let out_of_bag = (0..n).filter(|&i| !seen[i]).collect();

    let mut rows = in_bag.clone();
    sort_by_time(design.times(), &mut rows);
    let mut grower = Grower {
        design,
        mtry,
        min_leaf: options.min_leaf.max(1),
        max_depth: options.max_depth,
        rng,
        nodes: Vec::new(),
    };
    grower.grow(rows, 0);
    SurvivalTree { seed, nodes: grower.nodes, in_bag, out_of_bag }
}

pub fn fit_forest(design: &DesignMatrix, options: &RsfOptions) -> Result<Forest> {
    if design.n_rows() == 0 {
        return Err(SurvError::InvalidInput("empty design".into()));
    }
    if design.n_events() == 0 {
        return Err(SurvError::NoEvents);
    }
    if options.n_trees == 0 {
        return Err(SurvError::Config("forest needs at least one tree".into()));
    }
    let p = design.n_cols();
    let mtry = options.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize).clamp(1, p.max(1));
    let trees: Vec<SurvivalTree> = (0..options.n_trees)
        .into_par_iter()
        .map(|b| grow_tree(design, options, mtry, b))
        .collect();

    let mut event_grid: Vec<f64> = design
        .times()
        .iter()
        .zip(design.events())
        .filter(|(_, &e)| e)
        .map(|(&t, _)| t)
        .collect();
    event_grid.sort_by(|a, b| a.total_cmp(b));
    event_grid.dedup();

    Ok(Forest {
        column_names: design.column_names().to_vec(),
        trees,
        mtry,
        min_leaf: options.min_leaf,
        max_depth: options.max_depth,
        seed: options.seed,
        event_grid,
    })
}

impl Forest {
    fn check_arity(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.column_names.len() {
            return Err(SurvError::Arity { expected: self.column_names.len(), got: x.len() });
        }
        Ok(())
    }
}

/// Ensemble cumulative hazard: mean of the leaf CHFs reached by `x`.
pub fn predict_chf(forest: &Forest, x: &[f64]) -> Result<StepFunction> {
    forest.check_arity(x)?;
    let leaves: Vec<&StepFunction> = forest.trees.iter().map(|t| t.leaf_chf(x)).collect();
    StepFunction::mean(&leaves)
}

/// Sum of the ensemble CHF over the training event times; larger means an
/// earlier predicted purchase.
pub fn mortality_score(forest: &Forest, x: &[f64]) -> Result<f64> {
    let chf = predict_chf(forest, x)?;
    Ok(forest.event_grid.iter().map(|&t| chf.eval(t)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logrank_null_and_symmetry() {
        let times = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let events = [true; 6];
        let left = [true, false, true, false, true, false];
        let s = logrank_sorted(&times, &events, &left).unwrap();
        assert!(s.abs() < 1e-12);
        let swapped: Vec<bool> = left.iter().map(|l| !l).collect();
        assert_eq!(logrank_sorted(&times, &events, &swapped), Some(s));
        assert_eq!(logrank_sorted(&times, &events, &[true; 6]), None);
    }

    #[test]
    fn seeds_differ_per_tree() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 7), derive_seed(5, 7));
    }
}
