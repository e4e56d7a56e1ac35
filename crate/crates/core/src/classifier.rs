//! One-vs-rest SVMs with the exponential χ² kernel, trained by SMO.

use std::collections::{HashMap, VecDeque};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

const CHI2_EPS: f64 = 1e-10;

/// `Σ (x_i - y_i)² / (x_i + y_i + ε)`.
#[inline]
pub fn chi2_distance(x: &[f32], y: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (a as f64, b as f64);
        let s = a + b;
        if s > 0.0 {
            let d = a - b;
            acc += d * d / (s + CHI2_EPS);
        }
    }
    acc
}

/// `exp(-γ D(x, y))` for non-negative vectors of equal length.
pub fn chi2_kernel(x: &[f32], y: &[f32], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !(*v >= 0.0)) {
        return Err(Error::Input("chi-square kernel needs non-negative finite entries".into()));
    }
    Ok((-gamma * chi2_distance(x, y)).exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaMode {
    /// Inverse of the mean χ² distance over random training pairs.
    Auto,
    Explicit(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub c_grid: Vec<f64>,
    pub gamma: GammaMode,
    pub folds: usize,
    pub seed: u64,
    /// Upper bound on SMO iterations per binary problem.
    pub max_iter: usize,
    pub tol: f64,
    /// Gram matrices up to this many rows are precomputed; larger problems
    /// use an LRU row cache of this many rows.
    pub cache_rows: usize,
    pub gamma_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c_grid: vec![0.1, 1.0, 10.0, 100.0],
            gamma: GammaMode::Auto,
            folds: 4,
            seed: 42,
            max_iter: 10_000_000,
            tol: 1e-3,
            cache_rows: 4000,
            gamma_pairs: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::Config("C grid must be non-empty and positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("at least 2 cross-validation folds required".into()));
        }
        if let GammaMode::Explicit(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma {g} must be positive")));
            }
        }
        if !(self.tol > 0.0) || self.cache_rows < 2 {
            return Err(Error::Config("invalid solver tolerance or cache size".into()));
        }
        Ok(())
    }
}

/// Row access to a kernel matrix restricted to some subset of samples.
trait KernelRows {
    fn len(&self) -> usize;
    fn row(&mut self, i: usize) -> Arc<[f64]>;
    fn diag(&self, i: usize) -> f64;
}

/// Kernel over training rows, either fully precomputed or cached by row.
struct Gram<'a> {
    data: &'a [Vec<f32>],
    gamma: f64,
    full: Option<Vec<Arc<[f64]>>>,
    cache: HashMap<usize, Arc<[f64]>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> Gram<'a> {
    fn new(data: &'a [Vec<f32>], gamma: f64, cache_rows: usize) -> Self {
        let n = data.len();
        let full = (n <= cache_rows).then(|| {
            let dist: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|i| (0..i).map(|j| chi2_distance(&data[i], &data[j])).collect())
                .collect();
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| match i.cmp(&j) {
                            std::cmp::Ordering::Equal => 1.0,
                            std::cmp::Ordering::Greater => (-gamma * dist[i][j]).exp(),
                            std::cmp::Ordering::Less => (-gamma * dist[j][i]).exp(),
                        })
                        .collect::<Vec<f64>>()
                        .into()
                })
                .collect()
        });
        Self {
            data,
            gamma,
            full,
            cache: HashMap::new(),
            order: VecDeque::new(),
            capacity: cache_rows,
        }
    }

    fn row(&mut self, i: usize) -> Arc<[f64]> {
        if let Some(full) = &self.full {
            return full[i].clone();
        }
        if let Some(r) = self.cache.get(&i) {
            let r = r.clone();
            if let Some(p) = self.order.iter().position(|&x| x == i) {
                self.order.remove(p);
            }
            self.order.push_back(i);
            return r;
        }
        let xi = &self.data[i];
        let g = self.gamma;
        let r: Arc<[f64]> = self
            .data
            .par_iter()
            .map(|xj| (-g * chi2_distance(xi, xj)).exp())
            .collect::<Vec<f64>>()
            .into();
        if self.cache.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.cache.remove(&old);
            }
        }
        self.cache.insert(i, r.clone());
        self.order.push_back(i);
        r
    }
}

struct Subset<'g, 'a> {
    gram: &'g mut Gram<'a>,
    idx: &'g [usize],
    local: HashMap<usize, Arc<[f64]>>,
}

impl KernelRows for Subset<'_, '_> {
    fn len(&self) -> usize {
        self.idx.len()
    }

    fn row(&mut self, i: usize) -> Arc<[f64]> {
        if self.idx.len() == self.gram.data.len() && self.idx.iter().enumerate().all(|(a, &b)| a == b) {
            return self.gram.row(i);
        }
        if let Some(r) = self.local.get(&i) {
            return r.clone();
        }
        let full = self.gram.row(self.idx[i]);
        let r: Arc<[f64]> = self.idx.iter().map(|&j| full[j]).collect::<Vec<f64>>().into();
        if self.local.len() < self.gram.capacity {
            self.local.insert(i, r.clone());
        }
        r
    }

    fn diag(&self, _i: usize) -> f64 {
        1.0
    }
}

/// Dual solution of one binary problem.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    /// Final `max_{I_up} -y∇f - min_{I_low} -y∇f`.
    pub kkt_gap: f64,
    /// Dual objective `Σα - ½αᵀQα` after every iteration, when requested.
    pub objective_trace: Vec<f64>,
}

/// Solves `min ½αᵀQα - eᵀα, 0 <= α <= C, yᵀα = 0` with second-order working-set selection.
fn smo(k: &mut dyn KernelRows, y: &[f64], c: f64, tol: f64, max_iter: usize, trace: bool) -> SmoSolution {
    let n = k.len();
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let mut trace_v = Vec::new();
    let tau = 1e-12;
    let mut iterations = 0;
    let mut gap;
    loop {
        // i = argmax over I_up of -y_t G_t.
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if up && v > gmax {
                gmax = v;
                i = t;
            }
            if low && v < gmin {
                gmin = v;
            }
        }
        gap = gmax - gmin;
        if i == usize::MAX || gap < tol || iterations >= max_iter {
            break;
        }
        let qi = k.row(i);
        let kii = k.diag(i);
        let (mut j, mut best) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            let v = -y[t] * grad[t];
            if !low || v >= gmax {
                continue;
            }
            let b = gmax - v;
            let mut a = kii + k.diag(t) - 2.0 * qi[t];
            if a <= 0.0 {
                a = tau;
            }
            let score = -(b * b) / a;
            if score < best {
                best = score;
                j = t;
            }
        }
        if j == usize::MAX {
            break;
        }
        let qj = k.row(j);
        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let mut a = kii + k.diag(j) - 2.0 * qi[j];
        if a <= 0.0 {
            a = tau;
        }
        // Update along the direction that keeps yᵀα fixed (libsvm's two cases).
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / a;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / a;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai_old, alpha[j] - aj_old);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * qi[t] * di + y[j] * qj[t] * dj);
        }
        iterations += 1;
        if trace {
            let f: f64 = alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>() * 0.5;
            trace_v.push(-f);
        }
    }
    // ρ from free vectors, else the midpoint of the feasible interval.
    let (mut sum, mut nfree) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            nfree += 1;
        } else {
            let at_upper = alpha[t] >= c;
            if (at_upper && y[t] < 0.0) || (!at_upper && y[t] > 0.0) {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        }
    }
    let rho = if nfree > 0 {
        sum / nfree as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else if lb.is_finite() {
        lb
    } else {
        0.0
    };
    SmoSolution {
        alpha,
        rho,
        iterations,
        kkt_gap: gap,
        objective_trace: trace_v,
    }
}

/// One binary machine: `f(x) = Σ coef_i K(sv_i, x) - rho`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMachine {
    /// Indices into [`SvmModel::vectors`].
    pub sv: Vec<usize>,
    /// `α_i y_i` per support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
}

/// Per-dimension min-max scaling of the non-histogram blocks.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Scaler {
    /// `(dimension, min, range)`; dimensions not listed pass through.
    pub dims: Vec<(usize, f64, f64)>,
}

impl Scaler {
    pub fn fit(data: &[Vec<f64>], mask: &[bool]) -> Scaler {
        let mut dims = Vec::new();
        for (d, &m) in mask.iter().enumerate() {
            if !m {
                continue;
            }
            let (lo, hi) = data
                .iter()
                .map(|x| x[d])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            dims.push((d, lo, hi - lo));
        }
        Scaler { dims }
    }

    /// Scales, clamps to `[0, 1]` and converts to single precision.
    pub fn transform(&self, x: &[f64]) -> Vec<f32> {
        let mut out: Vec<f64> = x.to_vec();
        for &(d, lo, range) in &self.dims {
            out[d] = if range > 0.0 { ((x[d] - lo) / range).clamp(0.0, 1.0) } else { 0.0 };
        }
        out.into_iter().map(|v| v as f32).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub classes: Vec<String>,
    pub dim: usize,
    pub gamma: f64,
    pub c: f64,
    pub scaler: Scaler,
    /// Scaled training rows referenced by at least one machine.
    pub vectors: Vec<Vec<f32>>,
    pub machines: Vec<BinaryMachine>,
    /// Cross-validation accuracy per C of the grid, in grid order.
    pub cv_accuracy: Vec<(f64, f64)>,
}

fn check_features(features: &[Vec<f64>]) -> Result<usize> {
    let dim = features.first().map(|f| f.len()).ok_or_else(|| Error::Input("no training samples".into()))?;
    for (i, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite feature in sample {i}")));
        }
    }
    Ok(dim)
}

/// `1 / mean χ²` over up to `pairs` random distinct pairs (1 if all distances vanish).
pub fn auto_gamma(data: &[Vec<f32>], pairs: usize, seed: u64) -> f64 {
    let n = data.len();
    if n < 2 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        sum += chi2_distance(&data[i], &data[j]);
    }
    let mean = sum / pairs as f64;
    if mean > 0.0 {
        1.0 / mean
    } else {
        1.0
    }
}

/// Trains one-vs-rest machines on the samples `idx` of the Gram matrix.
/// Returns per-class (alpha·y over `idx`, rho).
fn train_machines(
    gram: &mut Gram,
    idx: &[usize],
    labels: &[usize],
    num_classes: usize,
    c: f64,
    cfg: &TrainConfig,
) -> Vec<(Vec<f64>, f64)> {
    let mut sub = Subset {
        gram,
        idx,
        local: HashMap::new(),
    };
    let mut out = Vec::with_capacity(num_classes);
    let solve_for = if num_classes == 2 { 1 } else { num_classes };
    for class in 0..solve_for {
        let y: Vec<f64> = idx.iter().map(|&i| if labels[i] == class { 1.0 } else { -1.0 }).collect();
        let s = smo(&mut sub, &y, c, cfg.tol, cfg.max_iter, false);
        let coef: Vec<f64> = s.alpha.iter().zip(&y).map(|(a, y)| a * y).collect();
        out.push((coef, s.rho));
    }
    if num_classes == 2 {
        let (coef, rho) = &out[0];
        out.push((coef.iter().map(|v| -v).collect(), -rho));
    }
    out
}

fn decision_values(gram: &mut Gram, train_idx: &[usize], machines: &[(Vec<f64>, f64)], probe: usize) -> Vec<f64> {
    let row = gram.row(probe);
    machines
        .iter()
        .map(|(coef, rho)| {
            train_idx
                .iter()
                .zip(coef)
                .filter(|(_, c)| **c != 0.0)
                .map(|(&i, c)| c * row[i])
                .sum::<f64>()
                - rho
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut offset = 0;
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for (k, &i) in members.iter().enumerate() {
            fold[i] = (offset + k) % folds;
        }
        offset += members.len();
    }
    fold
}

/// Trains the one-vs-rest model, selecting C by stratified cross-validation.
///
/// `labels` index into `classes`; `global_mask` flags dimensions that are
/// min-max scaled rather than used as histograms.
pub fn train_ovr(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: &[String],
    global_mask: &[bool],
    cfg: &TrainConfig,
) -> Result<SvmModel> {
    cfg.validate()?;
    let dim = check_features(features)?;
    if labels.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: labels.len(),
        });
    }
    if global_mask.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: global_mask.len(),
        });
    }
    if classes.len() < 2 {
        return Err(Error::Input("at least two classes are required".into()));
    }
    for (c, name) in classes.iter().enumerate() {
        let count = labels.iter().filter(|&&l| l == c).count();
        if count < 2 {
            return Err(Error::Input(format!("class '{name}' has {count} samples, need at least 2")));
        }
    }
    if labels.iter().any(|&l| l >= classes.len()) {
        return Err(Error::Input("label index outside class table".into()));
    }
    let scaler = Scaler::fit(features, global_mask);
    let data: Vec<Vec<f32>> = features.iter().map(|f| scaler.transform(f)).collect();
    if data.iter().flatten().any(|v| *v < 0.0) {
        return Err(Error::Input("histogram blocks must be non-negative".into()));
    }
    let gamma = match cfg.gamma {
        GammaMode::Auto => auto_gamma(&data, cfg.gamma_pairs, cfg.seed),
        GammaMode::Explicit(g) => g,
    };
    let mut gram = Gram::new(&data, gamma, cfg.cache_rows);
    let nc = classes.len();

    let fold = stratified_folds(labels, cfg.folds, cfg.seed);
    let mut grid = cfg.c_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut cv_accuracy = Vec::with_capacity(grid.len());
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &c in &grid {
        let mut correct = 0usize;
        for f in 0..cfg.folds {
            let train: Vec<usize> = (0..data.len()).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..data.len()).filter(|&i| fold[i] == f).collect();
            if test.is_empty() {
                continue;
            }
            let machines = train_machines(&mut gram, &train, labels, nc, c, cfg);
            for &t in &test {
                if argmax(&decision_values(&mut gram, &train, &machines, t)) == labels[t] {
                    correct += 1;
                }
            }
        }
        let acc = correct as f64 / data.len() as f64;
        cv_accuracy.push((c, acc));
        if acc > best.1 {
            best = (c, acc);
        }
    }

    let all: Vec<usize> = (0..data.len()).collect();
    let trained = train_machines(&mut gram, &all, labels, nc, best.0, cfg);
    let mut used: Vec<usize> = Vec::new();
    let mut remap = vec![usize::MAX; data.len()];
    let mut machines = Vec::with_capacity(nc);
    for (coef, rho) in trained {
        let mut m = BinaryMachine {
            sv: Vec::new(),
            coef: Vec::new(),
            rho,
        };
        for (i, &c) in coef.iter().enumerate() {
            if c != 0.0 {
                if remap[i] == usize::MAX {
                    remap[i] = used.len();
                    used.push(i);
                }
                m.sv.push(remap[i]);
                m.coef.push(c);
            }
        }
        machines.push(m);
    }
    if machines.iter().any(|m| m.sv.is_empty()) {
        return Err(Error::Numerical("a binary machine ended without support vectors".into()));
    }
    Ok(SvmModel {
        classes: classes.to_vec(),
        dim,
        gamma,
        c: best.0,
        scaler,
        vectors: used.into_iter().map(|i| data[i].clone()).collect(),
        machines,
        cv_accuracy,
    })
}

/// Solves a single binary problem on precomputed data (exposed for inspection and tests).
pub fn solve_binary(data: &[Vec<f32>], y: &[f64], gamma: f64, c: f64, cfg: &TrainConfig, trace: bool) -> SmoSolution {
    let mut gram = Gram::new(data, gamma, cfg.cache_rows);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut sub = Subset {
        gram: &mut gram,
        idx: &idx,
        local: HashMap::new(),
    };
    smo(&mut sub, y, c, cfg.tol, cfg.max_iter, trace)
}

/// Largest KKT violation `max_{I_up} -y∇f - min_{I_low} -y∇f` of a dual solution.
pub fn kkt_gap(data: &[Vec<f32>], y: &[f64], alpha: &[f64], gamma: f64, c: f64) -> f64 {
    let n = data.len();
    let grad: Vec<f64> = (0..n)
        .map(|t| {
            (0..n)
                .map(|s| y[t] * y[s] * alpha[s] * (-gamma * chi2_distance(&data[t], &data[s])).exp())
                .sum::<f64>()
                - 1.0
        })
        .collect();
    let (mut gmax, mut gmin) = (f64::NEG_INFINITY, f64::INFINITY);
    for t in 0..n {
        let v = -y[t] * grad[t];
        if (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0) {
            gmax = gmax.max(v);
        }
        if (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c) {
            gmin = gmin.min(v);
        }
    }
    gmax - gmin
}

impl SvmModel {
    /// Per-class decision values and the winning class (ties to the first).
    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature".into()));
        }
        let z = self.scaler.transform(x);
        let k: Vec<f64> = self
            .vectors
            .par_iter()
            .map(|v| (-self.gamma * chi2_distance(v, &z)).exp())
            .collect();
        let scores: Vec<f64> = self
            .machines
            .iter()
            .map(|m| m.sv.iter().zip(&m.coef).map(|(&i, c)| c * k[i]).sum::<f64>() - m.rho)
            .collect();
        Ok((argmax(&scores), scores))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let u32_ = |v: usize| (v as u32).to_le_bytes();
        w.write_all(b"SVM1")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&u32_(self.classes.len()))?;
        for c in &self.classes {
            w.write_all(&u32_(c.len()))?;
            w.write_all(c.as_bytes())?;
        }
        w.write_all(&u32_(self.dim))?;
        w.write_all(&self.gamma.to_le_bytes())?;
        w.write_all(&self.c.to_le_bytes())?;
        w.write_all(&u32_(self.scaler.dims.len()))?;
        for &(d, lo, range) in &self.scaler.dims {
            w.write_all(&u32_(d))?;
            w.write_all(&lo.to_le_bytes())?;
            w.write_all(&range.to_le_bytes())?;
        }
        w.write_all(&u32_(self.vectors.len()))?;
        let mut buf = Vec::with_capacity(self.vectors.len() * self.dim * 4);
        for v in &self.vectors {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        w.write_all(&u32_(self.machines.len()))?;
        for m in &self.machines {
            w.write_all(&m.rho.to_le_bytes())?;
            w.write_all(&u32_(m.sv.len()))?;
            for (&i, c) in m.sv.iter().zip(&m.coef) {
                w.write_all(&u32_(i))?;
                w.write_all(&c.to_le_bytes())?;
            }
        }
        w.write_all(&u32_(self.cv_accuracy.len()))?;
        for (c, a) in &self.cv_accuracy {
            w.write_all(&c.to_le_bytes())?;
            w.write_all(&a.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> std::io::Result<SvmModel> {
        let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SVM1" {
            return Err(bad("bad SVM1 magic"));
        }
        let mut rd = Reader(r);
        if rd.u32()? != 1 {
            return Err(bad("unsupported model version"));
        }
        let nc = rd.u32()?;
        let mut classes = Vec::with_capacity(nc);
        for _ in 0..nc {
            let len = rd.u32()?;
            let mut b = vec![0u8; len];
            rd.0.read_exact(&mut b)?;
            classes.push(String::from_utf8(b).map_err(|_| bad("label is not UTF-8"))?);
        }
        let dim = rd.u32()?;
        let gamma = rd.f64()?;
        let c = rd.f64()?;
        let ns = rd.u32()?;
        let mut dims = Vec::with_capacity(ns);
        for _ in 0..ns {
            dims.push((rd.u32()?, rd.f64()?, rd.f64()?));
        }
        let nv = rd.u32()?;
        let mut buf = vec![0u8; nv * dim * 4];
        rd.0.read_exact(&mut buf)?;
        let flat: Vec<f32> = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let vectors = if dim == 0 { vec![Vec::new(); nv] } else { flat.chunks(dim).map(|c| c.to_vec()).collect() };
        let nm = rd.u32()?;
        let mut machines = Vec::with_capacity(nm);
        for _ in 0..nm {
            let rho = rd.f64()?;
            let n = rd.u32()?;
            let (mut sv, mut coef) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for _ in 0..n {
                let i = rd.u32()?;
                if i >= nv {
                    return Err(bad("support vector index out of range"));
                }
                sv.push(i);
                coef.push(rd.f64()?);
            }
            machines.push(BinaryMachine { sv, coef, rho });
        }
        let ncv = rd.u32()?;
        let mut cv_accuracy = Vec::with_capacity(ncv);
        for _ in 0..ncv {
            cv_accuracy.push((rd.f64()?, rd.f64()?));
        }
        if machines.len() != classes.len() {
            return Err(bad("machine count does not match class count"));
        }
        Ok(SvmModel {
            classes,
            dim,
            gamma,
            c,
            scaler: Scaler { dims },
            vectors,
            machines,
            cv_accuracy,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SvmModel> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut std::io::BufReader::new(f)).map_err(|e| Error::format(path, e.to_string()))
    }
}

struct Reader<'a, R: Read>(&'a mut R);

impl<R: Read> Reader<'_, R> {
    fn u32(&mut self) -> std::io::Result<usize> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b) as usize)
    }

    fn f64(&mut self) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n_per: usize, dim: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for class in 0..2 {
            for _ in 0..n_per {
                let v: Vec<f64> = (0..dim)
                    .map(|d| {
                        let centre = if (d % 2 == 0) == (class == 0) { sep } else { 0.0 };
                        (centre + rng.random_range(0.0..0.1)).max(0.0)
                    })
                    .collect();
                x.push(v);
                y.push(class);
            }
        }
        (x, y)
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(chi2_kernel(&[0.3, 0.7], &[0.3, 0.7], 2.0).unwrap(), 1.0);
        let k = chi2_kernel(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap();
        assert!((k - (-2.0f64).exp()).abs() < 1e-9);
        assert!(chi2_kernel(&[1.0], &[1.0, 0.0], 1.0).is_err());
        assert!(chi2_kernel(&[-1.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn separable_blobs_train_perfectly() {
        let (x, y) = blobs(30, 6, 1.0, 1);
        let m = train_ovr(&x, &y, &names(2), &vec![false; 6], &TrainConfig::default()).unwrap();
        let acc = x.iter().zip(&y).filter(|(v, &l)| m.predict(v).unwrap().0 == l).count();
        assert_eq!(acc, 60);
        assert!(m.cv_accuracy.iter().filter(|(c, _)| *c >= 1.0).all(|(_, a)| *a >= 0.95));
        for mach in &m.machines {
            assert!(mach.coef.iter().all(|c| c.abs() <= m.c + 1e-12));
        }
    }

    #[test]
    fn two_class_scores_are_opposite() {
        let (x, y) = blobs(20, 4, 1.0, 2);
        let m = train_ovr(&x, &y, &names(2), &vec![false; 4], &TrainConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.2)).collect();
            let (_, s) = m.predict(&p).unwrap();
            assert!((s[0] + s[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_points_give_chance_cv() {
        let x = vec![vec![0.5, 0.5]; 6];
        let y = vec![0, 0, 0, 1, 1, 1];
        let m = train_ovr(&x, &y, &names(2), &[false, false], &TrainConfig::default()).unwrap();
        // Identical inputs get identical predictions in each fold, so no fold beats its majority.
        assert!(m.cv_accuracy.iter().all(|(_, a)| *a <= 0.5 + 1e-12));
    }

    #[test]
    fn rejects_singleton_and_non_finite() {
        let x = vec![vec![0.1], vec![0.2], vec![0.3]];
        assert!(train_ovr(&x, &[0, 0, 1], &names(2), &[false], &TrainConfig::default()).is_err());
        let x = vec![vec![0.1], vec![f64::NAN], vec![0.3], vec![0.4]];
        assert!(train_ovr(&x, &[0, 0, 1, 1], &names(2), &[false], &TrainConfig::default()).is_err());
    }

    #[test]
    fn smo_objective_monotone_and_kkt() {
        let (x, y) = blobs(25, 5, 0.3, 4);
        let data: Vec<Vec<f32>> = x.iter().map(|v| v.iter().map(|&a| a as f32).collect()).collect();
        let yy: Vec<f64> = y.iter().map(|&l| if l == 0 { 1.0 } else { -1.0 }).collect();
        let gamma = auto_gamma(&data, 1000, 1);
        let cfg = TrainConfig::default();
        let s = solve_binary(&data, &yy, gamma, 1.0, &cfg, true);
        assert!(s.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(kkt_gap(&data, &yy, &s.alpha, gamma, 1.0) < 1e-3 + 1e-9);
        assert!(s.alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
    }

    #[test]
    fn lazy_rows_match_full_gram() {
        let (x, y) = blobs(15, 4, 0.5, 6);
        let full = train_ovr(&x, &y, &names(2), &vec![false; 4], &TrainConfig::default()).unwrap();
        let lazy_cfg = TrainConfig {
            cache_rows: 7,
            ..Default::default()
        };
        let lazy = train_ovr(&x, &y, &names(2), &vec![false; 4], &lazy_cfg).unwrap();
        assert_eq!(full.c, lazy.c);
        for v in &x {
            let (a, b) = (full.predict(v).unwrap().1, lazy.predict(v).unwrap().1);
            assert!((a[0] - b[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn scaler_clamps_globals() {
        let data = vec![vec![0.2, 10.0], vec![0.4, 20.0]];
        let s = Scaler::fit(&data, &[false, true]);
        assert_eq!(s.transform(&[0.2, 15.0]), vec![0.2f32, 0.5]);
        assert_eq!(s.transform(&[0.2, 30.0])[1], 1.0);
        assert_eq!(s.transform(&[0.2, -5.0])[1], 0.0);
    }

    #[test]
    fn model_roundtrip() {
        let (x, y) = blobs(10, 3, 1.0, 7);
        let m = train_ovr(&x, &y, &names(2), &[false, false, true], &TrainConfig::default()).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SVM1");
        assert_eq!(SvmModel::read_from(&mut buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn gram_is_numerically_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [5usize, 20, 50] {
            let data: Vec<Vec<f32>> = (0..n)
                .map(|_| {
                    let v: Vec<f32> = (0..8).map(|_| rng.random::<f32>()).collect();
                    let s: f32 = v.iter().sum();
                    v.into_iter().map(|x| x / s).collect()
                })
                .collect();
            let gamma = auto_gamma(&data, 1000, 1);
            let g = nalgebra::DMatrix::from_fn(n, n, |i, j| chi2_kernel(&data[i], &data[j], gamma).unwrap());
            assert_eq!(g, g.transpose());
            let min = g.symmetric_eigenvalues().min();
            assert!(min >= -1e-8, "min eigenvalue {min}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = blobs(12, 4, 0.2, 12);
        let a = train_ovr(&x, &y, &names(2), &vec![false; 4], &TrainConfig::default()).unwrap();
        let b = train_ovr(&x, &y, &names(2), &vec![false; 4], &TrainConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn symmetric_midpoint_is_a_near_tie() {
        // Class 1 is class 0 with coordinates swapped; the midpoint is swap-invariant.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut x = Vec::new();
        for _ in 0..15 {
            let (a, b) = (0.8 + rng.random_range(0.0..0.1), 0.1 + rng.random_range(0.0..0.1));
            x.push(vec![a, b]);
        }
        let mirrored: Vec<Vec<f64>> = x.iter().map(|v| vec![v[1], v[0]]).collect();
        x.extend(mirrored);
        let y: Vec<usize> = (0..30).map(|i| i / 15).collect();
        let m = train_ovr(&x, &y, &names(2), &[false, false], &TrainConfig::default()).unwrap();
        let (_, mid) = m.predict(&[0.5, 0.5]).unwrap();
        let scale = x.iter().map(|v| m.predict(v).unwrap().1[0].abs()).fold(0.0, f64::max);
        assert!((mid[0] - mid[1]).abs() <= 0.1 * scale, "{mid:?} vs {scale}");
    }

    #[test]
    fn three_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in 0..3 {
            for _ in 0..12 {
                let mut v = vec![0.05; 3];
                v[c] = 1.0 + rng.random_range(0.0..0.1);
                x.push(v);
                y.push(c);
            }
        }
        let m = train_ovr(&x, &y, &names(3), &[false; 3], &TrainConfig::default()).unwrap();
        assert_eq!(m.machines.len(), 3);
        assert!(x.iter().zip(&y).all(|(v, &l)| m.predict(v).unwrap().0 == l));
    }
}
