//! Temporal smoothing of per-frame classifier scores with a Potts MRF.

pub mod maxflow;

use crate::descriptor::orientation_bin;
use crate::error::{Error, Result};
use crate::flow::FlowField;

pub use maxflow::FlowGraph;

/// Whole-frame HOF (orientation bins then the zero bin), L1-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowHistogram(pub Vec<f64>);

impl FlowHistogram {
    pub fn distance(&self, other: &FlowHistogram) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Global HOF of a frame with the same binning as the trajectory HOF descriptor.
pub fn global_hof(flow: &FlowField, bins: usize, zero_thresh: f32) -> FlowHistogram {
    let orient = bins - 1;
    let mut h = vec![0.0f64; bins];
    for (&u, &v) in flow.u.iter().zip(&flow.v) {
        let m = u.hypot(v);
        if m < zero_thresh {
            h[orient] += 1.0;
        } else {
            h[orientation_bin(u, v, orient)] += m as f64;
        }
    }
    let s: f64 = h.iter().sum();
    if s > 0.0 {
        h.iter_mut().for_each(|v| *v /= s);
    }
    FlowHistogram(h)
}

/// Frame-chain MRF with Potts smoothness between frames up to `radius` apart.
#[derive(Clone, Debug, PartialEq)]
pub struct MrfProblem {
    pub num_frames: usize,
    pub num_labels: usize,
    /// Row-major `num_frames × num_labels` costs.
    pub unary: Vec<f64>,
    pub radius: usize,
    /// `weights[i * radius + (d - 1)]` couples frames `i` and `i + d`.
    pub weights: Vec<f64>,
}

impl MrfProblem {
    pub fn unary(&self, frame: usize, label: usize) -> f64 {
        self.unary[frame * self.num_labels + label]
    }

    /// Weight between frames `i` and `j` (0 outside the radius).
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (i.min(j), i.max(j));
        let d = b - a;
        if d == 0 || d > self.radius || b >= self.num_frames {
            0.0
        } else {
            self.weights[a * self.radius + d - 1]
        }
    }

    /// Neighbour pairs `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_frames).flat_map(move |i| {
            (1..=self.radius)
                .filter(move |d| i + d < self.num_frames)
                .map(move |d| (i, i + d, self.weights[i * self.radius + d - 1]))
        })
    }

    pub fn energy(&self, labels: &[usize]) -> f64 {
        let u: f64 = labels.iter().enumerate().map(|(f, &l)| self.unary(f, l)).sum();
        let p: f64 = self
            .edges()
            .filter(|&(i, j, _)| labels[i] != labels[j])
            .map(|(_, _, w)| w)
            .sum();
        u + p
    }

    /// Lowest-cost label per frame, ties to the lower index.
    pub fn argmax_labels(&self) -> Vec<usize> {
        (0..self.num_frames)
            .map(|f| {
                let row = &self.unary[f * self.num_labels..(f + 1) * self.num_labels];
                let mut best = 0;
                for (l, &c) in row.iter().enumerate() {
                    if c < row[best] {
                        best = l;
                    }
                }
                best
            })
            .collect()
    }
}

/// Unary costs as margins to each frame's best score; contrast-sensitive
/// Potts weights `λ·exp(-|h_i - h_j| / β)` with β the mean neighbour distance.
pub fn build_mrf(scores: &[Vec<f64>], hofs: &[FlowHistogram], lambda: f64, radius: usize) -> Result<MrfProblem> {
    if scores.len() != hofs.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: hofs.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Input("no frames to segment".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("smoothness weight {lambda} must be finite and >= 0")));
    }
    let num_labels = scores[0].len();
    if num_labels == 0 {
        return Err(Error::Input("score vectors are empty".into()));
    }
    let mut unary = Vec::with_capacity(scores.len() * num_labels);
    for (f, row) in scores.iter().enumerate() {
        if row.len() != num_labels {
            return Err(Error::DimensionMismatch {
                expected: num_labels,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite score at frame {f}")));
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        unary.extend(row.iter().map(|s| m - s));
    }
    let n = scores.len();
    let mut dists = vec![0.0; n * radius];
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..n {
        for d in 1..=radius {
            if i + d < n {
                let dist = hofs[i].distance(&hofs[i + d]);
                dists[i * radius + d - 1] = dist;
                sum += dist;
                count += 1;
            }
        }
    }
    let beta = if count > 0 { (sum / count as f64).max(1e-6) } else { 1e-6 };
    let weights = (0..n * radius)
        .map(|k| {
            let (i, d) = (k / radius, k % radius + 1);
            if i + d < n {
                lambda * (-dists[k] / beta).exp()
            } else {
                0.0
            }
        })
        .collect();
    Ok(MrfProblem {
        num_frames: n,
        num_labels,
        unary,
        radius,
        weights,
    })
}

/// Labeling with the energy before and after every sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct MrfSolution {
    pub labels: Vec<usize>,
    /// `energies[0]` is the initial energy, then one entry per sweep.
    pub energies: Vec<f64>,
}

impl MrfSolution {
    pub fn energy(&self) -> f64 {
        *self.energies.last().unwrap()
    }
}

/// Minimizes the MRF energy from `init` (per-frame argmax if `None`).
///
/// Two-label problems are solved exactly by a single cut. Otherwise
/// α-expansion sweeps labels in ascending order until a sweep brings no
/// improvement.
pub fn minimize_labeling(p: &MrfProblem, init: Option<&[usize]>) -> Result<MrfSolution> {
    let mut labels = match init {
        Some(l) => {
            if l.len() != p.num_frames || l.iter().any(|&x| x >= p.num_labels) {
                return Err(Error::Input("initial labeling does not fit the problem".into()));
            }
            l.to_vec()
        }
        None => p.argmax_labels(),
    };
    let mut energies = vec![p.energy(&labels)];
    if p.num_labels == 1 {
        return Ok(MrfSolution { labels, energies });
    }
    if p.num_labels == 2 {
        let cut = binary_cut(p)?;
        let e = p.energy(&cut);
        if e < energies[0] {
            labels = cut;
        }
        energies.push(p.energy(&labels));
        return Ok(MrfSolution { labels, energies });
    }
    loop {
        let start = *energies.last().unwrap();
        let mut current = start;
        for alpha in 0..p.num_labels {
            let proposal = expand(p, &labels, alpha)?;
            let e = p.energy(&proposal);
            if e < current - 1e-12 * current.abs().max(1.0) {
                labels = proposal;
                current = e;
            }
        }
        energies.push(current);
        if current >= start {
            break;
        }
    }
    Ok(MrfSolution { labels, energies })
}

/// Accumulates a pseudo-boolean energy over variables `x_i` (sink side = 1).
struct BinaryEnergy {
    graph: FlowGraph,
    unary0: Vec<f64>,
    unary1: Vec<f64>,
}

impl BinaryEnergy {
    fn new(n: usize) -> Self {
        Self {
            graph: FlowGraph::new(n),
            unary0: vec![0.0; n],
            unary1: vec![0.0; n],
        }
    }

    /// Submodular pair term with costs `e00, e01, e10, e11`.
    fn add_pair(&mut self, i: usize, j: usize, e: [f64; 4]) -> Result<()> {
        let [a, b, c, d] = e;
        self.unary1[i] += c - a;
        self.unary1[j] += d - c;
        let w = b + c - a - d;
        if w < -1e-12 {
            return Err(Error::Numerical(format!("non-submodular pair term {e:?}")));
        }
        self.graph.add_edge(i, j, w.max(0.0), 0.0)
    }

    fn solve(mut self) -> Result<Vec<bool>> {
        for i in 0..self.unary0.len() {
            let (c0, c1) = (self.unary0[i], self.unary1[i]);
            let m = c0.min(c1);
            self.graph.add_tweights(i, c1 - m, c0 - m)?;
        }
        self.graph.max_flow();
        Ok((0..self.unary0.len()).map(|i| !self.graph.in_source_side(i)).collect())
    }
}

fn binary_cut(p: &MrfProblem) -> Result<Vec<usize>> {
    let mut be = BinaryEnergy::new(p.num_frames);
    for f in 0..p.num_frames {
        be.unary0[f] = p.unary(f, 0);
        be.unary1[f] = p.unary(f, 1);
    }
    for (i, j, w) in p.edges() {
        be.add_pair(i, j, [0.0, w, w, 0.0])?;
    }
    Ok(be.solve()?.into_iter().map(usize::from).collect())
}

fn expand(p: &MrfProblem, labels: &[usize], alpha: usize) -> Result<Vec<usize>> {
    let mut be = BinaryEnergy::new(p.num_frames);
    for (f, &l) in labels.iter().enumerate() {
        be.unary0[f] = p.unary(f, l);
        be.unary1[f] = p.unary(f, alpha);
    }
    let potts = |a: usize, b: usize, w: f64| if a != b { w } else { 0.0 };
    for (i, j, w) in p.edges() {
        let (li, lj) = (labels[i], labels[j]);
        be.add_pair(
            i,
            j,
            [potts(li, lj, w), potts(li, alpha, w), potts(alpha, lj, w), 0.0],
        )?;
    }
    let switch = be.solve()?;
    Ok(labels
        .iter()
        .zip(switch)
        .map(|(&l, s)| if s { alpha } else { l })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(p: &MrfProblem) -> f64 {
        let total = p.num_labels.pow(p.num_frames as u32);
        let mut labels = vec![0; p.num_frames];
        let mut best = f64::INFINITY;
        for code in 0..total {
            let mut c = code;
            for l in labels.iter_mut() {
                *l = c % p.num_labels;
                c /= p.num_labels;
            }
            best = best.min(p.energy(&labels));
        }
        best
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, labels: usize, lambda: f64, radius: usize) -> MrfProblem {
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..labels).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let hofs: Vec<FlowHistogram> = (0..n)
            .map(|_| {
                let mut h: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
                let s: f64 = h.iter().sum();
                h.iter_mut().for_each(|v| *v /= s);
                FlowHistogram(h)
            })
            .collect();
        build_mrf(&scores, &hofs, lambda, radius).unwrap()
    }

    #[test]
    fn global_hof_cases() {
        let h = global_hof(&FlowField::zeros(10, 10), 9, 0.4);
        assert_eq!(h.0, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let h = global_hof(&FlowField::constant(10, 10, 3.0, 0.0), 9, 0.4);
        assert_eq!(h.0[0], 1.0);
        let half = FlowField::from_fn(10, 10, |x, _| if x < 5 { (3.0, 0.0) } else { (0.0, 0.0) });
        let h = global_hof(&half, 9, 0.4);
        assert!((h.0[0] - 150.0 / 200.0).abs() < 1e-12 && (h.0[8] - 50.0 / 200.0).abs() < 1e-12);
    }

    #[test]
    fn identical_hofs_give_lambda_weights() {
        let scores = vec![vec![0.0, 1.0]; 8];
        let hofs = vec![FlowHistogram(vec![0.5, 0.5]); 8];
        let p = build_mrf(&scores, &hofs, 2.5, 5).unwrap();
        assert!(p.edges().all(|(_, _, w)| w == 2.5));
        assert_eq!(p.edges().count(), 7 + 6 + 5 + 4 + 3);
    }

    #[test]
    fn weights_decrease_with_distance() {
        let a = FlowHistogram(vec![1.0, 0.0]);
        let b = FlowHistogram(vec![0.0, 1.0]);
        let p = build_mrf(&vec![vec![0.0, 0.0]; 3], &[a.clone(), a, b], 1.0, 1).unwrap();
        assert!(p.weight(0, 1) > p.weight(1, 2));
        assert_eq!(p.weight(1, 0), p.weight(0, 1));
    }

    #[test]
    fn build_rejects_misaligned() {
        assert!(build_mrf(&[vec![0.0]], &[], 1.0, 5).is_err());
    }

    #[test]
    fn zero_lambda_is_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 12, 4, 0.0, 5);
            let s = minimize_labeling(&p, None).unwrap();
            assert_eq!(s.labels, p.argmax_labels());
        }
    }

    #[test]
    fn binary_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [2, 5, 9, 12] {
            for _ in 0..10 {
                let lambda = rng.random_range(0.1..3.0);
                let p = random_problem(&mut rng, n, 2, lambda, 5);
                let s = minimize_labeling(&p, None).unwrap();
                assert!((s.energy() - brute_force(&p)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn expansion_on_chain_is_optimal_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 8, 3, 1.0, 1);
            let s = minimize_labeling(&p, None).unwrap();
            assert!(s.energies.windows(2).all(|w| w[1] <= w[0]));
            assert!((s.energy() - brute_force(&p)).abs() < 1e-9);
        }
    }

    #[test]
    fn huge_lambda_gives_constant_labeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_problem(&mut rng, 10, 3, 1e4, 5);
        let s = minimize_labeling(&p, None).unwrap();
        assert!(s.labels.iter().all(|&l| l == s.labels[0]));
        let best = (0..3)
            .min_by(|&a, &b| {
                let ea: f64 = (0..10).map(|f| p.unary(f, a)).sum();
                let eb: f64 = (0..10).map(|f| p.unary(f, b)).sum();
                ea.total_cmp(&eb)
            })
            .unwrap();
        assert_eq!(s.labels[0], best);
    }
}
