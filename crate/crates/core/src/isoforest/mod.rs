//! Isolation forest with a contamination-calibrated score threshold.
//!
//! Each tree isolates a random subsample by splitting a random non-constant
//! feature at a uniform point strictly inside its range (left iff `x < v`).
//! A row's score is `2^(-E[h] / c(psi))` where `h` is the depth reached plus
//! `c(size)` of the external node; scores near 1 are anomalous.

mod stream;

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub use stream::{
    detect_stream, severity_for, AlertCategory, AnomalyAlert, FeatureDeviation, FeatureMode, Observation, Severity,
    StreamConfig, StreamingDetector,
};

pub const MODEL_FORMAT: &str = "smartline-isoforest";
pub const MODEL_VERSION: u32 = 1;

const EULER_GAMMA: f64 = 0.5772156649;

/// Average path length of an unsuccessful search in a binary search tree of `n` keys.
pub fn c_factor(n: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| (0..=C_TABLE_LEN).map(c_closed_form).collect());
    table.get(n).copied().unwrap_or_else(|| c_closed_form(n))
}

const C_TABLE_LEN: usize = 4096;

fn c_closed_form(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum IsoNode {
    Internal {
        feature_index: usize,
        split_value: f64,
        left: usize,
        right: usize,
    },
    External {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoTree {
    pub nodes: Vec<IsoNode>,
    pub height_limit: usize,
}

impl IsoTree {
    pub fn path_length(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        let mut depth = 0usize;
        loop {
            match &self.nodes[idx] {
                IsoNode::Internal {
                    feature_index,
                    split_value,
                    left,
                    right,
                } => {
                    idx = if row[*feature_index] < *split_value {
                        *left
                    } else {
                        *right
                    };
                    depth += 1;
                }
                IsoNode::External { size } => return depth as f64 + c_factor(*size),
            }
        }
    }

    pub fn height(&self) -> usize {
        fn walk(nodes: &[IsoNode], idx: usize) -> usize {
            match &nodes[idx] {
                IsoNode::Internal { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                IsoNode::External { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn external_sizes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                IsoNode::External { size } => *size,
                IsoNode::Internal { .. } => 0,
            })
            .sum()
    }

    /// Leaves of a univariate tree in ascending order as (lower bound, path
    /// length); the leftmost leaf has no lower bound.
    fn leaves_1d(&self, out: &mut Vec<(Option<f64>, f64)>) {
        let mut stack = vec![(0usize, None, 0usize)];
        while let Some((idx, lo, depth)) = stack.pop() {
            match &self.nodes[idx] {
                IsoNode::Internal {
                    split_value,
                    left,
                    right,
                    ..
                } => {
                    stack.push((*right, Some(*split_value), depth + 1));
                    stack.push((*left, lo, depth + 1));
                }
                IsoNode::External { size } => out.push((lo, depth as f64 + c_factor(*size))),
            }
        }
    }

    fn grow(rows: &[Vec<f64>], sample: Vec<usize>, height_limit: usize, rng: &mut SplitMix64) -> Self {
        let d = rows[0].len();
        let mut nodes = vec![IsoNode::External { size: 0 }];
        let mut stack = vec![(0usize, sample, 0usize)];
        let mut varying = Vec::with_capacity(d);
        while let Some((slot, idx, depth)) = stack.pop() {
            let size = idx.len();
            if depth >= height_limit || size <= 1 {
                nodes[slot] = IsoNode::External { size };
                continue;
            }
            varying.clear();
            for f in 0..d {
                let (lo, hi) = range(rows, &idx, f);
                if lo < hi {
                    varying.push((f, lo, hi));
                }
            }
            if varying.is_empty() {
                nodes[slot] = IsoNode::External { size };
                continue;
            }
            let (feature_index, lo, hi) = varying[rng.below(varying.len())];
            let split_value = uniform_inside(lo, hi, rng);
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][feature_index] < split_value);
            let left = nodes.len();
            nodes.push(IsoNode::External { size: 0 });
            nodes.push(IsoNode::External { size: 0 });
            nodes[slot] = IsoNode::Internal {
                feature_index,
                split_value,
                left,
                right: left + 1,
            };
            stack.push((left + 1, r, depth + 1));
            stack.push((left, l, depth + 1));
        }
        IsoTree { nodes, height_limit }
    }
}

fn range(rows: &[Vec<f64>], idx: &[usize], f: usize) -> (f64, f64) {
    idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
        (lo.min(rows[i][f]), hi.max(rows[i][f]))
    })
}

/// Uniform draw in the open interval `(lo, hi)`; requires `lo < hi`.
fn uniform_inside(lo: f64, hi: f64, rng: &mut SplitMix64) -> f64 {
    for _ in 0..64 {
        let v = lo + rng.next_f64() * (hi - lo);
        if v > lo && v < hi {
            return v;
        }
    }
    // Adjacent floats leave no interior; the upper bound still separates them.
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo {
        mid
    } else {
        hi
    }
}

/// A univariate forest is a step function of `x`. This caches the summed
/// path length on every interval so scoring is a binary search. Sums run in
/// tree order, so results are bit-identical to walking each tree.
#[derive(Debug, Clone, Default, PartialEq)]
struct StepTable {
    breaks: Vec<f64>,
    totals: Vec<f64>,
}

impl StepTable {
    fn build(trees: &[IsoTree]) -> Self {
        let mut current = vec![0.0; trees.len()];
        let mut events: Vec<(f64, usize, f64)> = Vec::new();
        let mut leaves = Vec::new();
        for (t, tree) in trees.iter().enumerate() {
            leaves.clear();
            tree.leaves_1d(&mut leaves);
            for &(lo, value) in &leaves {
                match lo {
                    None => current[t] = value,
                    Some(b) => events.push((b, t, value)),
                }
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut totals = Vec::with_capacity(events.len() + 1);
        totals.push(current.iter().sum());
        for &(_, t, value) in &events {
            current[t] = value;
            totals.push(current.iter().sum());
        }
        Self {
            breaks: events.into_iter().map(|e| e.0).collect(),
            totals,
        }
    }

    fn total(&self, x: f64) -> f64 {
        self.totals[self.breaks.partition_point(|b| *b <= x)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsoParams {
    pub n_trees: usize,
    pub subsample_size: usize,
    pub contamination: f64,
}

impl Default for IsoParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample_size: 256,
            contamination: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationModel {
    pub format: String,
    pub version: u32,
    pub params: IsoParams,
    /// `min(subsample_size, n)`: the sample each tree actually saw.
    pub effective_subsample: usize,
    pub score_threshold: f64,
    pub feature_names: Vec<String>,
    /// Training-set mean and standard deviation per feature, for z-scores.
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub seed: u64,
    pub trees: Vec<IsoTree>,
    #[serde(skip)]
    step: Option<StepTable>,
}

fn check_contamination(q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 0.5) {
        return Err(Error::validation(format!("contamination {q} outside (0, 0.5]")));
    }
    Ok(())
}

/// The `ceil(q * n)`-th largest score. Rows scoring at or above it are flagged.
pub fn threshold_from_contamination(scores: &[f64], q: f64) -> Result<f64> {
    check_contamination(q)?;
    if scores.is_empty() {
        return Err(Error::validation("cannot calibrate a threshold on zero scores"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // Slack keeps q * n = 100.000000001 from rounding up to 101.
    let k = ((q * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[k.min(sorted.len()) - 1])
}

pub fn fit(rows: &[Vec<f64>], feature_names: Vec<String>, params: IsoParams, seed: u64) -> Result<IsolationModel> {
    check_contamination(params.contamination)?;
    if rows.len() < 2 {
        return Err(Error::validation("isolation forest needs at least 2 rows"));
    }
    if params.n_trees == 0 || params.subsample_size < 2 {
        return Err(Error::validation("need at least 1 tree and a subsample of 2"));
    }
    let d = feature_names.len();
    if d == 0 {
        return Err(Error::validation("no features"));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d {
            return Err(Error::validation(format!(
                "row {i} has {} values, expected {d}",
                r.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("row {i} has a non-finite value")));
        }
    }
    let n = rows.len();
    let psi = params.subsample_size.min(n);
    let height_limit = (psi as f64).log2().ceil() as usize;
    let trees: Vec<IsoTree> = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = SplitMix64::new(seed.wrapping_add(i as u64));
            let sample = rng.sample_indices(n, psi);
            IsoTree::grow(rows, sample, height_limit, &mut rng)
        })
        .collect();

    let mut means = vec![0.0; d];
    for r in rows {
        for (m, v) in means.iter_mut().zip(r) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut stds = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in stds.iter_mut().zip(r).zip(&means) {
            *s += (v - m).powi(2);
        }
    }
    stds.iter_mut().for_each(|s| *s = (*s / n as f64).sqrt());

    let mut model = IsolationModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        params,
        effective_subsample: psi,
        score_threshold: 0.0,
        feature_names,
        feature_means: means,
        feature_stds: stds,
        seed,
        trees,
        step: None,
    };
    model.build_step_table();
    let scores = model.score_batch(rows)?;
    model.score_threshold = threshold_from_contamination(&scores, params.contamination)?;
    Ok(model)
}

impl IsolationModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn mean_path_length(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features() {
            return Err(Error::validation(format!(
                "row has {} values, model expects {}",
                row.len(),
                self.n_features()
            )));
        }
        let total = match &self.step {
            Some(step) => step.total(row[0]),
            None => self.direct_total(row),
        };
        Ok(total / self.trees.len() as f64)
    }

    fn direct_total(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(row)).sum()
    }

    fn build_step_table(&mut self) {
        self.step = (self.n_features() == 1).then(|| StepTable::build(&self.trees));
    }

    pub fn score(&self, row: &[f64]) -> Result<f64> {
        let h = self.mean_path_length(row)?;
        Ok(2f64.powf(-h / c_factor(self.effective_subsample)))
    }

    pub fn score_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.par_iter().map(|r| self.score(r)).collect()
    }

    pub fn is_anomaly(&self, score: f64) -> bool {
        score >= self.score_threshold
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::validation(format!("encode model: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::artifact::check_header(text, MODEL_FORMAT, MODEL_VERSION)?;
        let mut model: IsolationModel = serde_json::from_str(text).map_err(Error::from_json)?;
        let d = model.n_features();
        if model.trees.is_empty()
            || model.feature_means.len() != d
            || model.feature_stds.len() != d
            || model.effective_subsample < 2
        {
            return Err(Error::SchemaMismatch("isolation model fields are inconsistent".into()));
        }
        for t in &model.trees {
            let n = t.nodes.len();
            let bad = t.nodes.iter().any(|node| match node {
                IsoNode::Internal {
                    feature_index,
                    left,
                    right,
                    ..
                } => *feature_index >= d || *left >= n || *right >= n,
                IsoNode::External { .. } => false,
            });
            if n == 0 || bad {
                return Err(Error::SchemaMismatch(
                    "isolation tree has an out-of-range reference".into(),
                ));
            }
        }
        model.build_step_table();
        Ok(model)
    }
}

pub fn save_model(model: &IsolationModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<IsolationModel> {
    IsolationModel::from_json(&fs::read_to_string(path)?)
}
