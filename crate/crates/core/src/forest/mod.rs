//! Random-forest classifier and regressor built from CART trees.
//!
//! Classifiers use Gini impurity and hard voting; regressors use variance
//! reduction and average the per-tree leaf means. Each tree draws its own
//! bootstrap sample from a substream seeded with `seed + tree_index`, so
//! parallel and sequential training produce identical models.

mod split;
mod tree;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub use split::{best_split, Criterion, SplitCandidate, SplitRule};
pub use tree::{Tree, TreeNode};

pub const MODEL_FORMAT: &str = "smartline-forest";
pub const MODEL_VERSION: u32 = 1;

/// Dense row-major feature matrix with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
    classes: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(Error::validation(format!(
                "{} rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        let d = feature_names.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::validation(format!(
                    "row {i} has {} values, expected {d}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("row {i} has a non-finite value")));
            }
        }
        if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
            return Err(Error::validation(format!("target {i} is not finite")));
        }
        // Class ids are only meaningful for non-negative integer targets;
        // regression targets get a placeholder.
        let integral = targets.iter().all(|t| *t >= 0.0 && t.fract() == 0.0 && *t < 1e6);
        let classes: Vec<usize> = if integral {
            targets.iter().map(|t| *t as usize).collect()
        } else {
            vec![0; targets.len()]
        };
        let n_classes = classes.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            feature_names,
            rows,
            targets,
            classes,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn value(&self, i: usize, f: usize) -> f64 {
        self.rows[i][f]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn class_of(&self, i: usize) -> usize {
        self.classes[i]
    }

    fn is_integral(&self) -> bool {
        self.targets.iter().all(|t| *t >= 0.0 && t.fract() == 0.0 && *t < 1e6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestKind {
    Classifier,
    Regressor,
}

/// How many features each node may consider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((d as f64).sqrt().ceil() as usize).clamp(1, d.max(1)),
            MaxFeatures::All => d,
            MaxFeatures::Count(k) => k.clamp(1, d.max(1)),
        }
    }

    pub fn default_for(kind: ForestKind) -> Self {
        match kind {
            ForestKind::Classifier => MaxFeatures::Sqrt,
            ForestKind::Regressor => MaxFeatures::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// `None` picks the per-kind default.
    pub max_features: Option<MaxFeatures>,
    /// When false every tree sees the full training set once.
    pub bootstrap: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: None,
            min_samples_split: 2,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format: String,
    pub version: u32,
    pub kind: ForestKind,
    pub n_estimators: usize,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    pub importances: Vec<f64>,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importances {
    /// Sorted by descending importance, then by name.
    pub ranked: Vec<FeatureImportance>,
    /// True when no tree ever split, in which case every entry is zero.
    pub degenerate: bool,
}

pub fn fit(data: &Dataset, kind: ForestKind, hyperparams: Hyperparams, seed: u64) -> Result<ForestModel> {
    if data.is_empty() {
        return Err(Error::validation("cannot fit a forest on an empty dataset"));
    }
    if data.n_features() == 0 {
        return Err(Error::validation("dataset has no features"));
    }
    if hyperparams.n_estimators == 0 {
        return Err(Error::validation("n_estimators must be at least 1"));
    }
    if kind == ForestKind::Classifier && !data.is_integral() {
        return Err(Error::validation(
            "classifier targets must be non-negative integer class ids",
        ));
    }
    let (criterion, n_classes) = match kind {
        ForestKind::Classifier => (Criterion::Gini, data.n_classes()),
        ForestKind::Regressor => (Criterion::Variance, 0),
    };
    let params = tree::TreeParams {
        criterion,
        n_classes,
        max_depth: hyperparams.max_depth,
        min_samples_split: hyperparams.min_samples_split,
        max_features: hyperparams.max_features.unwrap_or(MaxFeatures::default_for(kind)),
    };
    let n = data.len();
    let trees: Vec<Tree> = (0..hyperparams.n_estimators)
        .into_par_iter()
        .map(|i| {
            let mut rng = SplitMix64::new(seed.wrapping_add(i as u64));
            let sample: Vec<usize> = if hyperparams.bootstrap {
                (0..n).map(|_| rng.below(n)).collect()
            } else {
                (0..n).collect()
            };
            tree::grow(data, sample, &params, &mut rng)
        })
        .collect();

    let d = data.n_features();
    let mut importances = vec![0.0; d];
    for t in &trees {
        let root_samples = t.nodes[0].samples() as f64;
        for node in &t.nodes {
            if let TreeNode::Internal {
                rule,
                impurity_decrease,
                samples,
                ..
            } = node
            {
                importances[rule.feature_index] += impurity_decrease * *samples as f64 / root_samples;
            }
        }
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        for v in &mut importances {
            *v /= total;
        }
    }

    Ok(ForestModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        kind,
        n_estimators: hyperparams.n_estimators,
        n_classes,
        feature_names: data.feature_names().to_vec(),
        importances,
        seed,
        hyperparams,
        trees,
    })
}

impl ForestModel {
    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.feature_names.len() {
            return Err(Error::validation(format!(
                "row has {} values, model expects {}",
                row.len(),
                self.feature_names.len()
            )));
        }
        Ok(())
    }

    /// Vote share per class id. A forest trained on one class returns a
    /// distribution with all mass on that class.
    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>> {
        if self.kind != ForestKind::Classifier {
            return Err(Error::validation("predict_proba needs a classifier"));
        }
        self.check_row(row)?;
        let mut votes = vec![0usize; self.n_classes.max(1)];
        for t in &self.trees {
            votes[t.vote(row)] += 1;
        }
        let n = self.trees.len() as f64;
        Ok(votes.into_iter().map(|v| v as f64 / n).collect())
    }

    pub fn predict_class(&self, row: &[f64]) -> Result<usize> {
        Ok(tree::argmax(&self.predict_proba(row)?))
    }

    /// Probability of class 1, or 0 when the model never saw that class.
    pub fn positive_probability(&self, row: &[f64]) -> Result<f64> {
        Ok(self.predict_proba(row)?.get(1).copied().unwrap_or(0.0))
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if self.kind != ForestKind::Regressor {
            return Err(Error::validation("predict needs a regressor"));
        }
        self.check_row(row)?;
        let sum: f64 = self.trees.iter().map(|t| t.leaf_for(row)[0]).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn feature_importances(&self) -> Importances {
        let mut ranked: Vec<FeatureImportance> = self
            .feature_names
            .iter()
            .zip(&self.importances)
            .map(|(name, &importance)| FeatureImportance {
                name: name.clone(),
                importance,
            })
            .collect();
        ranked.sort_by(|a, b| b.importance.total_cmp(&a.importance).then_with(|| a.name.cmp(&b.name)));
        Importances {
            degenerate: self.importances.iter().all(|v| *v == 0.0),
            ranked,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::validation(format!("encode model: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::artifact::check_header(text, MODEL_FORMAT, MODEL_VERSION)?;
        let model: ForestModel = serde_json::from_str(text).map_err(Error::from_json)?;
        model.check_structure()?;
        Ok(model)
    }

    fn check_structure(&self) -> Result<()> {
        if self.trees.len() != self.n_estimators || self.trees.is_empty() {
            return Err(Error::SchemaMismatch("tree count does not match n_estimators".into()));
        }
        if self.importances.len() != self.feature_names.len() {
            return Err(Error::SchemaMismatch("importance vector length mismatch".into()));
        }
        let d = self.feature_names.len();
        for (t, tree) in self.trees.iter().enumerate() {
            let n = tree.nodes.len();
            if n == 0 {
                return Err(Error::SchemaMismatch(format!("tree {t} is empty")));
            }
            for node in &tree.nodes {
                match node {
                    TreeNode::Internal { rule, left, right, .. } => {
                        if rule.feature_index >= d || *left >= n || *right >= n {
                            return Err(Error::SchemaMismatch(format!("tree {t} has an out-of-range reference")));
                        }
                    }
                    TreeNode::Leaf { value, .. } => {
                        let want = match self.kind {
                            ForestKind::Classifier => self.n_classes.max(1),
                            ForestKind::Regressor => 1,
                        };
                        if value.len() != want {
                            return Err(Error::SchemaMismatch(format!(
                                "tree {t} leaf has {} values, expected {want}",
                                value.len()
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ForestModel> {
    ForestModel::from_json(&fs::read_to_string(path)?)
}
