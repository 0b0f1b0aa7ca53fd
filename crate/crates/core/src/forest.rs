//! Random-forest posture classifier.
//!
//! Trees are grown on bootstrap resamples with best-Gini-decrease splits over
//! a random subset of features per node. Each tree draws from its own ChaCha
//! stream seeded by [`crate::rng::child_seed`]`(seed, [tree_index])`, so
//! results do not depend on thread scheduling and growing the forest leaves
//! existing trees untouched.
//!
//! # Model file
//!
//! Little-endian binary:
//!
//! ```text
//! magic      4 bytes  "NCRF"
//! version    u32      1
//! n_classes  u32      followed by one u8 class code per class
//! n_features u32      followed by n_features f64 importances
//! n_trees    u32
//! per tree:  n_nodes u32, then per node a u8 tag:
//!            0 = split: feature u32, threshold f64, left u32, right u32
//!            1 = leaf:  n_classes f64 class weights
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::posture::PostureLabel;
use crate::rng;

pub const N_CLASSES: usize = 5;
const MAGIC: &[u8; 4] = b"NCRF";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_features: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
    /// Restrict splits to these feature indices (modality ablations).
    pub feature_subset: Option<Vec<usize>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: 5, // floor(sqrt(32))
            min_samples_leaf: 1,
            max_depth: None,
            bootstrap: true,
            seed: 42,
            feature_subset: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self, n_features: usize) -> Result<Vec<usize>> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        let allowed: Vec<usize> = match &self.feature_subset {
            Some(s) => {
                let mut s = s.clone();
                s.sort_unstable();
                s.dedup();
                s
            }
            None => (0..n_features).collect(),
        };
        if allowed.is_empty() || allowed.iter().any(|&f| f >= n_features) {
            return Err(Error::Config(format!(
                "feature subset must be nonempty with indices below {n_features}"
            )));
        }
        if self.max_features == 0 || self.max_features > allowed.len() {
            return Err(Error::Config(format!(
                "max_features {} outside 1..={}",
                self.max_features,
                allowed.len()
            )));
        }
        Ok(allowed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        weights: [f64; N_CLASSES],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    /// Leaf class weights reached by `x` (root is node 0).
    pub fn leaf(&self, x: &[f64]) -> &[f64; N_CLASSES] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    }
                }
                Node::Leaf { weights } => return weights,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + go(t, *left as usize).max(go(t, *right as usize)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTree>,
    pub classes: Vec<PostureLabel>,
    pub n_features: usize,
    pub importances: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: PostureLabel,
    pub probabilities: [f64; N_CLASSES],
}

struct TrainingSet<'a> {
    rows: &'a [&'a [f64]],
    labels: &'a [usize],
}

/// Train on labelled feature vectors. Every vector must carry a label.
pub fn train(features: &[FeatureVector], cfg: &TrainConfig) -> Result<RandomForestModel> {
    let mut rows = Vec::with_capacity(features.len());
    let mut labels = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let l = f
            .label
            .ok_or_else(|| Error::Input(format!("feature vector {i} has no label")))?;
        rows.push(&f.values[..]);
        labels.push(l);
    }
    train_rows(&rows, &labels, cfg)
}

/// Train on arbitrary equal-width rows.
pub fn train_rows(rows: &[&[f64]], labels: &[PostureLabel], cfg: &TrainConfig) -> Result<RandomForestModel> {
    if rows.len() != labels.len() {
        return Err(Error::Input("rows and labels differ in length".into()));
    }
    if rows.is_empty() {
        return Err(Error::Input("no training samples".into()));
    }
    let n_features = rows[0].len();
    if n_features == 0 || rows.iter().any(|r| r.len() != n_features) {
        return Err(Error::Input("training rows must share a nonzero width".into()));
    }
    if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Input("non-finite training feature".into()));
    }
    let allowed = cfg.validate(n_features)?;
    let y: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let mut present = y.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        log::warn!("training data has a single class; the model is a single leaf per tree");
    }
    let data = TrainingSet { rows, labels: &y };

    let grown: Vec<(DecisionTree, Vec<f64>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(&data, cfg, &allowed, n_features, t as u64))
        .collect();

    let mut importances = vec![0.0; n_features];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, imp) in grown {
        for (a, b) in importances.iter_mut().zip(&imp) {
            *a += b;
        }
        trees.push(tree);
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(RandomForestModel {
        trees,
        classes: PostureLabel::ALL.to_vec(),
        n_features,
        importances,
    })
}

fn gini(counts: &[f64; N_CLASSES], n: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
}

struct Grower<'a, R> {
    data: &'a TrainingSet<'a>,
    cfg: &'a TrainConfig,
    allowed: &'a [usize],
    rng: R,
    nodes: Vec<Node>,
    importance: Vec<f64>,
    root_n: f64,
    // scratch for sorting one feature column
    column: Vec<(f64, usize)>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

fn grow_tree(
    data: &TrainingSet<'_>,
    cfg: &TrainConfig,
    allowed: &[usize],
    n_features: usize,
    tree_index: u64,
) -> (DecisionTree, Vec<f64>) {
    let mut rng = rng::rng_for(cfg.seed, &[tree_index]);
    let n = data.rows.len();
    let mut sample: Vec<usize> = if cfg.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    // canonical in-node order: by index, so bootstrap draws fix the tree
    sample.sort_unstable();
    let mut g = Grower {
        data,
        cfg,
        allowed,
        rng,
        nodes: Vec::new(),
        importance: vec![0.0; n_features],
        root_n: n as f64,
        column: Vec::with_capacity(n),
    };
    g.build(&mut sample, 0);
    (DecisionTree { nodes: g.nodes }, g.importance)
}

impl<R: Rng> Grower<'_, R> {
    fn counts(&self, idx: &[usize]) -> [f64; N_CLASSES] {
        let mut c = [0.0; N_CLASSES];
        for &i in idx {
            c[self.data.labels[i]] += 1.0;
        }
        c
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let counts = self.counts(idx);
        self.nodes.push(Node::Leaf { weights: counts });

        let n = idx.len();
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        let depth_capped = self.cfg.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || n < 2 * self.cfg.min_samples_leaf {
            return id;
        }
        let Some(best) = self.find_split(idx, &counts) else {
            return id;
        };

        self.importance[best.feature] += (n as f64 / self.root_n) * best.decrease;
        let rows = self.data.rows;
        let mid = partition(idx, |&i| rows[i][best.feature] <= best.threshold);
        let (left_idx, right_idx) = idx.split_at_mut(mid);
        let left = self.build(left_idx, depth + 1);
        let right = self.build(right_idx, depth + 1);
        self.nodes[id as usize] = Node::Split {
            feature: best.feature as u32,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Best split over `max_features` random candidates. If none of them can
    /// split the node, the remaining features are tried one at a time in the
    /// same random order.
    fn find_split(&mut self, idx: &[usize], counts: &[f64; N_CLASSES]) -> Option<BestSplit> {
        let mut order = self.allowed.to_vec();
        order.shuffle(&mut self.rng);
        let k = self.cfg.max_features;
        let mut first: Vec<usize> = order[..k].to_vec();
        first.sort_unstable();

        let parent = gini(counts, idx.len() as f64);
        let mut best: Option<BestSplit> = None;
        for &f in &first {
            self.consider(f, idx, counts, parent, &mut best);
        }
        for &f in &order[k..] {
            if best.is_some() {
                break;
            }
            self.consider(f, idx, counts, parent, &mut best);
        }
        best
    }

    fn consider(
        &mut self,
        feature: usize,
        idx: &[usize],
        counts: &[f64; N_CLASSES],
        parent: f64,
        best: &mut Option<BestSplit>,
    ) {
        let rows = self.data.rows;
        let labels = self.data.labels;
        self.column.clear();
        self.column.extend(idx.iter().map(|&i| (rows[i][feature], labels[i])));
        self.column.sort_by(|a, b| a.0.total_cmp(&b.0));

        let n = idx.len();
        let nf = n as f64;
        let min_leaf = self.cfg.min_samples_leaf;
        let mut left = [0.0; N_CLASSES];
        for i in 0..n - 1 {
            left[self.column[i].1] += 1.0;
            let (x0, x1) = (self.column[i].0, self.column[i + 1].0);
            if x0 == x1 {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let mut right = *counts;
            for (r, l) in right.iter_mut().zip(&left) {
                *r -= l;
            }
            let (nlf, nrf) = (nl as f64, nr as f64);
            let decrease = parent - (nlf / nf) * gini(&left, nlf) - (nrf / nf) * gini(&right, nrf);
            let mut threshold = 0.5 * (x0 + x1);
            // midpoint can round up onto x1 for adjacent floats
            if threshold >= x1 {
                threshold = x0;
            }
            if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                *best = Some(BestSplit {
                    feature,
                    threshold,
                    decrease,
                });
            }
        }
    }
}

/// Stable partition: elements satisfying `pred` first. Returns the split point.
fn partition<T: Copy>(v: &mut [T], pred: impl Fn(&T) -> bool) -> usize {
    let (yes, no): (Vec<T>, Vec<T>) = v.iter().partition(|x| pred(x));
    let mid = yes.len();
    for (dst, src) in v.iter_mut().zip(yes.into_iter().chain(no)) {
        *dst = src;
    }
    mid
}

impl RandomForestModel {
    pub fn predict_values(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.n_features {
            return Err(Error::Input(format!(
                "expected {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("feature {i} is not finite")));
        }
        let mut probs = [0.0; N_CLASSES];
        for tree in &self.trees {
            let w = tree.leaf(x);
            let total: f64 = w.iter().sum();
            for (p, c) in probs.iter_mut().zip(w) {
                *p += c / total;
            }
        }
        let k = self.trees.len() as f64;
        probs.iter_mut().for_each(|p| *p /= k);
        let best = (0..N_CLASSES).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        Ok(Prediction {
            label: self.classes[best],
            probabilities: probs,
        })
    }

    pub fn predict(&self, v: &FeatureVector) -> Result<Prediction> {
        self.predict_values(&v.values)
    }

    pub fn importances(&self) -> &[f64] {
        &self.importances
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.classes.len() as u32).to_le_bytes());
        b.extend(self.classes.iter().map(|c| c.index() as u8));
        b.extend_from_slice(&(self.n_features as u32).to_le_bytes());
        for v in &self.importances {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&(self.trees.len() as u32).to_le_bytes());
        for t in &self.trees {
            b.extend_from_slice(&(t.nodes.len() as u32).to_le_bytes());
            for node in &t.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        b.push(0);
                        b.extend_from_slice(&feature.to_le_bytes());
                        b.extend_from_slice(&threshold.to_le_bytes());
                        b.extend_from_slice(&left.to_le_bytes());
                        b.extend_from_slice(&right.to_le_bytes());
                    }
                    Node::Leaf { weights } => {
                        b.push(1);
                        for w in weights {
                            b.extend_from_slice(&w.to_le_bytes());
                        }
                    }
                }
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Model("bad magic, not a model file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported model version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let n_classes = r.u32()? as usize;
        if n_classes != N_CLASSES {
            return Err(Error::Model(format!("expected {N_CLASSES} classes, found {n_classes}")));
        }
        let classes = (0..n_classes)
            .map(|_| {
                let code = r.take(1)?[0] as usize;
                PostureLabel::from_index(code).ok_or_else(|| Error::Model(format!("unknown class code {code}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n_features = r.u32()? as usize;
        if n_features == 0 || n_features > 1 << 16 {
            return Err(Error::Model(format!("implausible feature count {n_features}")));
        }
        let importances = (0..n_features).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let n_trees = r.u32()? as usize;
        if n_trees == 0 {
            return Err(Error::Model("model has no trees".into()));
        }
        let mut trees = Vec::with_capacity(n_trees.min(1 << 12));
        for t in 0..n_trees {
            let n_nodes = r.u32()? as usize;
            if n_nodes == 0 || n_nodes > bytes.len() {
                return Err(Error::Model(format!("tree {t}: bad node count {n_nodes}")));
            }
            let mut nodes = Vec::with_capacity(n_nodes);
            for i in 0..n_nodes {
                let node = match r.take(1)?[0] {
                    0 => {
                        let feature = r.u32()?;
                        let threshold = r.f64()?;
                        let left = r.u32()?;
                        let right = r.u32()?;
                        let child_ok = |c: u32| (c as usize) > i && (c as usize) < n_nodes;
                        if feature as usize >= n_features || !child_ok(left) || !child_ok(right) {
                            return Err(Error::Model(format!("tree {t} node {i}: invalid split")));
                        }
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        }
                    }
                    1 => {
                        let mut weights = [0.0; N_CLASSES];
                        for w in &mut weights {
                            *w = r.f64()?;
                        }
                        if !(weights.iter().sum::<f64>() > 0.0) {
                            return Err(Error::Model(format!("tree {t} node {i}: empty leaf")));
                        }
                        Node::Leaf { weights }
                    }
                    tag => return Err(Error::Model(format!("tree {t} node {i}: bad tag {tag}"))),
                };
                nodes.push(node);
            }
            trees.push(DecisionTree { nodes });
        }
        if r.pos != bytes.len() {
            return Err(Error::Model(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            trees,
            classes,
            n_features,
            importances,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Indented text rendering of every tree, for debugging.
    pub fn dump_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "forest: {} trees, {} features", self.trees.len(), self.n_features);
        for (t, tree) in self.trees.iter().enumerate() {
            let _ = writeln!(s, "tree {t}");
            let mut stack = vec![(0usize, 1usize)];
            while let Some((i, depth)) = stack.pop() {
                let pad = "  ".repeat(depth);
                match &tree.nodes[i] {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        let _ = writeln!(s, "{pad}[{i}] f{feature:02} <= {threshold}");
                        stack.push((*right as usize, depth + 1));
                        stack.push((*left as usize, depth + 1));
                    }
                    Node::Leaf { weights } => {
                        let _ = writeln!(s, "{pad}[{i}] leaf {weights:?}");
                    }
                }
            }
        }
        s
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Model(format!("truncated file at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Number of trainable features when only `subset` is allowed: floor(sqrt(k)), at least 1.
pub fn default_max_features(subset_len: usize) -> usize {
    ((subset_len as f64).sqrt().floor() as usize).max(1)
}
