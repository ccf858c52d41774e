//! Two-dimensional UMAP layout with out-of-sample transform.
//!
//! The fit follows the reference algorithm step by step: exact k-nearest
//! neighbours (brute force), per-point smooth-kNN calibration, fuzzy-union
//! symmetrization, spectral initialization (per connected component), and
//! stochastic gradient descent over graph edges with negative sampling. The
//! layout loop is sequential and driven by one seeded ChaCha generator, so a
//! fit is bitwise reproducible for a given input and configuration.
//!
//! A top-two principal-components projection is provided as a light
//! alternative for smoke tests.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{ContainerError, Reader, Writer};

const SMOOTH_K_TOLERANCE: f64 = 1e-5;
const MIN_K_DIST_SCALE: f64 = 1e-3;
const SIGMA_SEARCH_STEPS: usize = 32;
const SPREAD: f64 = 1.0;
const AB_GRID_POINTS: usize = 300;
const DENSE_EIGEN_LIMIT: usize = 1500;
const TRANSFORM_STREAM: u64 = 0x7472_616e_7366_6f72;

pub type Point2 = [f64; 2];

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("need more than {n_neighbors} points, got {got}")]
    TooFewPoints { n_neighbors: usize, got: usize },
    #[error("all pairwise distances are zero")]
    DegenerateDistances,
    #[error("model has not been fitted")]
    NotFitted,
    #[error("no input vectors")]
    EmptyInput,
    #[error("vector {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("vector {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UmapConfig {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub n_epochs_fit: usize,
    pub n_epochs_transform: usize,
    pub negative_sample_rate: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl UmapConfig {
    pub fn new(seed: u64) -> Self {
        UmapConfig {
            n_neighbors: 15,
            min_dist: 0.1,
            n_epochs_fit: 500,
            n_epochs_transform: 100,
            negative_sample_rate: 5,
            learning_rate: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        let bad = |m: &str| Err(ProjectionError::InvalidConfig(m.to_string()));
        if self.n_neighbors < 2 {
            return bad("n_neighbors must be at least 2");
        }
        if !(self.min_dist > 0.0 && self.min_dist < 1.0) {
            return bad("min_dist must lie in (0, 1)");
        }
        if self.n_epochs_fit == 0 || self.n_epochs_transform == 0 {
            return bad("epoch counts must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Fits `(a, b)` of `1 / (1 + a d^(2b))` to the offset-exponential target
/// curve by Levenberg-Marquardt least squares on 300 points over `[0, 3]`.
pub fn fit_ab(min_dist: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..AB_GRID_POINTS)
        .map(|i| 3.0 * SPREAD * i as f64 / (AB_GRID_POINTS - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / SPREAD).exp() })
        .collect();

    let sse = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let r = 1.0 / (1.0 + a * x.powf(2.0 * b)) - y;
                r * r
            })
            .sum()
    };

    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut lambda = 1e-3;
    let mut cost = sse(a, b);
    for _ in 0..500 {
        // Normal equations J^T J and J^T r.
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for (&x, &y) in xs.iter().zip(&ys) {
            let xb = if x > 0.0 { x.powf(2.0 * b) } else { 0.0 };
            let den = 1.0 + a * xb;
            let r = 1.0 / den - y;
            let da = -xb / (den * den);
            let db = if x > 0.0 { -a * xb * 2.0 * x.ln() / (den * den) } else { 0.0 };
            let j = [da, db];
            for p in 0..2 {
                jtr[p] += j[p] * r;
                for q in 0..2 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let m00 = jtj[0][0] * (1.0 + lambda);
            let m11 = jtj[1][1] * (1.0 + lambda);
            let det = m00 * m11 - jtj[0][1] * jtj[1][0];
            if det == 0.0 || !det.is_finite() {
                lambda *= 10.0;
                continue;
            }
            let step_a = -(m11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
            let step_b = -(m00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
            let (na, nb) = (a + step_a, b + step_b);
            let new_cost = if na > 0.0 && nb > 0.0 { sse(na, nb) } else { f64::INFINITY };
            if new_cost < cost {
                let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                a = na;
                b = nb;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    sq_dist(x, y).sqrt()
}

fn check_vectors(vectors: &[Vec<f64>], expected: Option<usize>) -> Result<usize, ProjectionError> {
    let dim = expected.unwrap_or_else(|| vectors.first().map_or(0, Vec::len));
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(ProjectionError::DimensionMismatch {
                index: i,
                expected: dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ProjectionError::NonFinite(i));
        }
    }
    Ok(dim)
}

/// `k` nearest rows of `data` to `query`, ties broken by index.
fn nearest(data: &[Vec<f64>], query: &[f64], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = data
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(j, x)| (j, dist(x, query)))
        .collect();
    let k = k.min(all.len());
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if k < all.len() {
        all.select_nth_unstable_by(k, cmp);
        all.truncate(k);
    }
    all.sort_by(cmp);
    all
}

/// Calibrated `(sigma, rho)` for one point's neighbour distances so that the
/// memberships sum to `log2(k)`. `connectivity` is 1 for fit, 0 for transform.
fn smooth_knn(dists: &[f64], k: usize, connectivity: usize, mean_all: f64) -> (f64, f64) {
    let target = (k as f64).log2();
    let rho = if connectivity == 0 {
        0.0
    } else {
        dists
            .iter()
            .copied()
            .filter(|&d| d > 0.0)
            .nth(connectivity - 1)
            .unwrap_or_else(|| dists.iter().copied().fold(0.0, f64::max))
    };
    let (mut lo, mut hi, mut mid) = (0.0f64, f64::INFINITY, 1.0f64);
    for _ in 0..SIGMA_SEARCH_STEPS {
        let psum: f64 = dists
            .iter()
            .map(|&d| {
                let e = d - rho;
                if e > 0.0 { (-e / mid).exp() } else { 1.0 }
            })
            .sum();
        if (psum - target).abs() < SMOOTH_K_TOLERANCE {
            break;
        }
        if psum > target {
            hi = mid;
            mid = 0.5 * (lo + hi);
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { 0.5 * (lo + hi) };
        }
    }
    let mean_here = if dists.is_empty() { 0.0 } else { dists.iter().sum::<f64>() / dists.len() as f64 };
    let floor = if rho > 0.0 { MIN_K_DIST_SCALE * mean_here } else { MIN_K_DIST_SCALE * mean_all };
    (mid.max(floor), rho)
}

fn membership(d: f64, rho: f64, sigma: f64) -> f64 {
    let e = d - rho;
    if e <= 0.0 || sigma == 0.0 { 1.0 } else { (-e / sigma).exp() }
}

#[derive(Debug, Clone)]
struct Edge {
    head: usize,
    tail: usize,
    weight: f64,
}

/// Fuzzy simplicial set of the training data as a sorted, symmetric edge list.
fn fuzzy_graph(data: &[Vec<f64>], n_neighbors: usize) -> Vec<Edge> {
    let n = data.len();
    let knn: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| nearest(data, &data[i], n_neighbors - 1, Some(i)))
        .collect();
    let total: f64 = knn.iter().flatten().map(|&(_, d)| d).sum();
    let count = knn.iter().map(Vec::len).sum::<usize>().max(1);
    let mean_all = total / count as f64;

    let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, row) in knn.iter().enumerate() {
        let dists: Vec<f64> = row.iter().map(|&(_, d)| d).collect();
        let (sigma, rho) = smooth_knn(&dists, n_neighbors, 1, mean_all);
        for &(j, d) in row {
            directed.insert((i, j), membership(d, rho, sigma));
        }
    }

    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(i, j), &w) in &directed {
        let wt = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let v = w + wt - w * wt;
        sym.insert((i, j), v);
        sym.insert((j, i), v);
    }
    sym.into_iter()
        .filter(|&(_, w)| w > 0.0)
        .map(|((head, tail), weight)| Edge { head, tail, weight })
        .collect()
}

fn connected_components(n: usize, edges: &[Edge]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for e in edges {
        let (a, b) = (find(&mut parent, e.head), find(&mut parent, e.tail));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    // Relabel roots 0.. in order of first appearance.
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    (0..n)
        .map(|i| {
            let r = find(&mut parent, i);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            label[r]
        })
        .collect()
}

/// Eigenvectors for the 2nd and 3rd largest eigenvalues of the normalized
/// adjacency `D^-1/2 W D^-1/2` of one component (local indices).
fn spectral_coords(n: usize, edges: &[(usize, usize, f64)], rng: &mut ChaCha8Rng) -> Option<Vec<Point2>> {
    let mut degree = vec![0.0f64; n];
    for &(i, _, w) in edges {
        degree[i] += w;
    }
    if degree.iter().any(|&d| d <= 0.0) {
        return None;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let norm_edges: Vec<(usize, usize, f64)> = edges
        .iter()
        .map(|&(i, j, w)| (i, j, w * inv_sqrt[i] * inv_sqrt[j]))
        .collect();

    let vecs = if n <= DENSE_EIGEN_LIMIT {
        let mut m = DMatrix::<f64>::zeros(n, n);
        for &(i, j, w) in &norm_edges {
            m[(i, j)] += w;
        }
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
        order[1..3]
            .iter()
            .map(|&c| eig.eigenvectors.column(c).iter().copied().collect::<Vec<f64>>())
            .collect::<Vec<_>>()
    } else {
        subspace_iteration(n, &norm_edges, 8, rng)
    };
    let coords: Vec<Point2> = (0..n).map(|i| [vecs[0][i], vecs[1][i]]).collect();
    if coords.iter().flatten().any(|x| !x.is_finite()) {
        return None;
    }
    Some(coords)
}

/// Block power iteration on `(N + I) / 2` with Rayleigh-Ritz; returns the
/// Ritz vectors ranked 2nd and 3rd.
fn subspace_iteration(
    n: usize,
    edges: &[(usize, usize, f64)],
    block: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        for &(i, j, w) in edges {
            y[i] += 0.5 * w * x[j];
        }
        y
    };
    let mut q: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    orthonormalize(&mut q);
    for _ in 0..1000 {
        let mut z: Vec<Vec<f64>> = q.iter().map(|v| apply(v)).collect();
        orthonormalize(&mut z);
        let delta: f64 = z
            .iter()
            .zip(&q)
            .map(|(a, b)| 1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().abs())
            .take(3)
            .fold(0.0, f64::max);
        q = z;
        if delta < 1e-10 {
            break;
        }
    }
    // Rayleigh-Ritz in the converged block.
    let aq: Vec<Vec<f64>> = q.iter().map(|v| apply(v)).collect();
    let h = DMatrix::from_fn(block, block, |r, c| q[r].iter().zip(&aq[c]).map(|(x, y)| x * y).sum());
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..block).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    order[1..3]
        .iter()
        .map(|&c| {
            let coef = eig.eigenvectors.column(c);
            (0..n).map(|i| (0..block).map(|r| coef[r] * q[r][i]).sum()).collect()
        })
        .collect()
}

fn orthonormalize(vs: &mut [Vec<f64>]) {
    for i in 0..vs.len() {
        for j in 0..i {
            let dot: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = vs.split_at_mut(i);
            for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                *x -= dot * y;
            }
        }
        let norm = vs[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            vs[i].iter_mut().for_each(|x| *x /= norm);
        }
    }
}

/// Anchor positions for disconnected components.
fn meta_positions(n_comp: usize, data: &[Vec<f64>], labels: &[usize]) -> Vec<Point2> {
    if n_comp <= 4 {
        let base = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        return if n_comp == 1 { vec![[0.0, 0.0]] } else { base[..n_comp].to_vec() };
    }
    // Classical MDS of the component centroids.
    let dim = data[0].len();
    let mut centroids = vec![vec![0.0; dim]; n_comp];
    let mut counts = vec![0usize; n_comp];
    for (x, &l) in data.iter().zip(labels) {
        counts[l] += 1;
        for (c, v) in centroids[l].iter_mut().zip(x) {
            *c += v;
        }
    }
    for (c, &k) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= k as f64);
    }
    let pca = PcaModel::fit(&centroids).ok();
    let mut pts: Vec<Point2> = match pca {
        Some(m) => centroids.iter().map(|c| m.project(c)).collect(),
        None => vec![[0.0, 0.0]; n_comp],
    };
    let scale = pts.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale > 0.0 {
        pts.iter_mut().flatten().for_each(|v| *v /= scale);
    } else {
        for (i, p) in pts.iter_mut().enumerate() {
            let t = 2.0 * std::f64::consts::PI * i as f64 / n_comp as f64;
            *p = [t.cos(), t.sin()];
        }
    }
    pts
}

fn spectral_layout(data: &[Vec<f64>], edges: &[Edge], rng: &mut ChaCha8Rng) -> Vec<Point2> {
    let n = data.len();
    let labels = connected_components(n, edges);
    let n_comp = labels.iter().max().map_or(0, |m| m + 1);
    let meta = meta_positions(n_comp, data, &labels);
    let mut out = vec![[0.0; 2]; n];

    for comp in 0..n_comp {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == comp).collect();
        let mut local = vec![usize::MAX; n];
        for (li, &g) in members.iter().enumerate() {
            local[g] = li;
        }
        let range = meta
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != comp)
            .map(|(_, m)| dist(m, &meta[comp]))
            .filter(|&d| d > 0.0)
            .fold(f64::INFINITY, f64::min);
        let range = if range.is_finite() { range / 2.0 } else { 1.0 };

        let sub_edges: Vec<(usize, usize, f64)> = edges
            .iter()
            .filter(|e| labels[e.head] == comp)
            .map(|e| (local[e.head], local[e.tail], e.weight))
            .collect();
        let m = members.len();
        let coords = if m < 4 { None } else { spectral_coords(m, &sub_edges, rng) };
        match coords {
            Some(c) => {
                let max = c.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
                let expansion = if max > 0.0 { range / max } else { 0.0 };
                for (li, &g) in members.iter().enumerate() {
                    out[g] = [
                        c[li][0] * expansion + meta[comp][0],
                        c[li][1] * expansion + meta[comp][1],
                    ];
                }
            }
            None => {
                for &g in &members {
                    out[g] = [
                        rng.gen_range(-range..range) + meta[comp][0],
                        rng.gen_range(-range..range) + meta[comp][1],
                    ];
                }
            }
        }
    }
    out
}

/// Rescales to max-abs 10, adds tiny Gaussian jitter, then min-max scales each
/// axis to `[0, 10]`.
fn normalize_init(pos: &mut [Point2], rng: &mut ChaCha8Rng) {
    let max = pos.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let expansion = if max > 0.0 { 10.0 / max } else { 1.0 };
    let noise = Normal::new(0.0, 1e-4).expect("valid normal");
    for p in pos.iter_mut() {
        for v in p.iter_mut() {
            *v = *v * expansion + noise.sample(rng);
        }
    }
    for axis in 0..2 {
        let lo = pos.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
        let hi = pos.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for p in pos.iter_mut() {
            p[axis] = if span > 0.0 { 10.0 * (p[axis] - lo) / span } else { 5.0 };
        }
    }
}

fn clip(v: f64) -> f64 {
    v.clamp(-4.0, 4.0)
}

struct Schedule {
    per_sample: Vec<f64>,
    next_sample: Vec<f64>,
    per_negative: Vec<f64>,
    next_negative: Vec<f64>,
}

impl Schedule {
    fn new(weights: &[f64], n_epochs: usize, negative_rate: usize) -> Self {
        let max = weights.iter().copied().fold(0.0f64, f64::max);
        let per_sample: Vec<f64> = weights
            .iter()
            .map(|&w| {
                let samples = n_epochs as f64 * w / max;
                if samples > 0.0 { n_epochs as f64 / samples } else { f64::INFINITY }
            })
            .collect();
        let per_negative: Vec<f64> = per_sample.iter().map(|e| e / negative_rate.max(1) as f64).collect();
        Schedule {
            next_sample: per_sample.clone(),
            next_negative: per_negative.clone(),
            per_sample,
            per_negative,
        }
    }
}

struct Layout<'a> {
    a: f64,
    b: f64,
    heads: &'a [usize],
    tails: &'a [usize],
}

impl Layout<'_> {
    /// SGD over the edge list. With `tail_pos == None` the tails index into
    /// `head_pos` and both ends move.
    fn optimize(
        &self,
        head_pos: &mut [Point2],
        mut tail_pos: Option<&[Point2]>,
        schedule: &mut Schedule,
        n_epochs: usize,
        initial_alpha: f64,
        rng: &mut ChaCha8Rng,
    ) {
        let (a, b) = (self.a, self.b);
        let n_vertices = tail_pos.map_or(head_pos.len(), <[Point2]>::len);
        let mut alpha = initial_alpha;
        for epoch in 0..n_epochs {
            let n = epoch as f64;
            for e in 0..self.heads.len() {
                if schedule.next_sample[e] > n {
                    continue;
                }
                let (j, k) = (self.heads[e], self.tails[e]);
                let current = head_pos[j];
                let other = match tail_pos.as_mut() {
                    Some(t) => t[k],
                    None => head_pos[k],
                };
                let d2 = sq_dist(&current, &other);
                let coeff = if d2 > 0.0 {
                    -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0)
                } else {
                    0.0
                };
                let mut cur = current;
                for d in 0..2 {
                    let g = clip(coeff * (current[d] - other[d]));
                    cur[d] += g * alpha;
                    if tail_pos.is_none() {
                        head_pos[k][d] -= g * alpha;
                    }
                }
                head_pos[j] = cur;
                schedule.next_sample[e] += schedule.per_sample[e];

                let n_neg = ((n - schedule.next_negative[e]) / schedule.per_negative[e]).floor();
                let n_neg = if n_neg > 0.0 { n_neg as usize } else { 0 };
                for _ in 0..n_neg {
                    let k = rng.gen_range(0..n_vertices);
                    let other = match tail_pos {
                        Some(t) => t[k],
                        None => head_pos[k],
                    };
                    let current = head_pos[j];
                    let d2 = sq_dist(&current, &other);
                    let coeff = if d2 > 0.0 {
                        2.0 * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0))
                    } else if tail_pos.is_none() && j == k {
                        continue;
                    } else {
                        0.0
                    };
                    for d in 0..2 {
                        let g = if coeff > 0.0 { clip(coeff * (current[d] - other[d])) } else { 4.0 };
                        head_pos[j][d] += g * alpha;
                    }
                }
                schedule.next_negative[e] += n_neg as f64 * schedule.per_negative[e];
            }
            alpha = initial_alpha * (1.0 - (epoch + 1) as f64 / n_epochs as f64);
        }
    }
}

fn prune(edges: Vec<Edge>, n_epochs: usize) -> Vec<Edge> {
    let max = edges.iter().map(|e| e.weight).fold(0.0f64, f64::max);
    let cutoff = max / n_epochs as f64;
    edges.into_iter().filter(|e| e.weight >= cutoff && e.weight > 0.0).collect()
}

/// A fitted layout: training vectors, their 2-D positions and the curve
/// parameters of the low-dimensional similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct UmapModel {
    pub config: UmapConfig,
    pub a: f64,
    pub b: f64,
    data: Vec<Vec<f64>>,
    positions: Vec<Point2>,
}

impl UmapModel {
    pub fn fit(vectors: &[Vec<f64>], config: &UmapConfig) -> Result<UmapModel, ProjectionError> {
        config.validate()?;
        if vectors.len() <= config.n_neighbors {
            return Err(ProjectionError::TooFewPoints {
                n_neighbors: config.n_neighbors,
                got: vectors.len(),
            });
        }
        check_vectors(vectors, None)?;
        if vectors.iter().all(|v| v == &vectors[0]) {
            return Err(ProjectionError::DegenerateDistances);
        }

        let (a, b) = fit_ab(config.min_dist);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let edges = fuzzy_graph(vectors, config.n_neighbors);
        let mut positions = spectral_layout(vectors, &edges, &mut rng);
        normalize_init(&mut positions, &mut rng);

        let edges = prune(edges, config.n_epochs_fit);
        let heads: Vec<usize> = edges.iter().map(|e| e.head).collect();
        let tails: Vec<usize> = edges.iter().map(|e| e.tail).collect();
        let weights: Vec<f64> = edges.iter().map(|e| e.weight).collect();
        let mut schedule = Schedule::new(&weights, config.n_epochs_fit, config.negative_sample_rate);
        let layout = Layout {
            a,
            b,
            heads: &heads,
            tails: &tails,
        };
        layout.optimize(
            &mut positions,
            None,
            &mut schedule,
            config.n_epochs_fit,
            config.learning_rate,
            &mut rng,
        );

        Ok(UmapModel {
            config: config.clone(),
            a,
            b,
            data: vectors.to_vec(),
            positions,
        })
    }

    pub fn training_vectors(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn positions(&self) -> &[Point2] {
        &self.positions
    }

    pub fn dimension(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    /// Places new vectors into the frozen training layout.
    pub fn transform(&self, vectors: &[Vec<f64>]) -> Result<Vec<Point2>, ProjectionError> {
        if self.data.is_empty() || self.positions.len() != self.data.len() {
            return Err(ProjectionError::NotFitted);
        }
        if vectors.is_empty() {
            return Err(ProjectionError::EmptyInput);
        }
        check_vectors(vectors, Some(self.dimension()))?;
        let k = self.config.n_neighbors.min(self.data.len());

        let knn: Vec<Vec<(usize, f64)>> = vectors
            .par_iter()
            .map(|v| nearest(&self.data, v, k, None))
            .collect();
        let total: f64 = knn.iter().flatten().map(|&(_, d)| d).sum();
        let mean_all = total / knn.iter().map(Vec::len).sum::<usize>().max(1) as f64;

        let mut edges = Vec::new();
        let mut positions = Vec::with_capacity(vectors.len());
        for (i, row) in knn.iter().enumerate() {
            let dists: Vec<f64> = row.iter().map(|&(_, d)| d).collect();
            let (sigma, rho) = smooth_knn(&dists, k, 0, mean_all);
            let ws: Vec<f64> = dists.iter().map(|&d| membership(d, rho, sigma)).collect();
            let wsum: f64 = ws.iter().sum();
            let mut init = [0.0; 2];
            for (&(j, _), &w) in row.iter().zip(&ws) {
                init[0] += w / wsum * self.positions[j][0];
                init[1] += w / wsum * self.positions[j][1];
                edges.push(Edge {
                    head: i,
                    tail: j,
                    weight: w,
                });
            }
            positions.push(init);
        }

        let n_epochs = self.config.n_epochs_transform;
        let edges = prune(edges, n_epochs);
        let heads: Vec<usize> = edges.iter().map(|e| e.head).collect();
        let tails: Vec<usize> = edges.iter().map(|e| e.tail).collect();
        let weights: Vec<f64> = edges.iter().map(|e| e.weight).collect();
        let mut schedule = Schedule::new(&weights, n_epochs, self.config.negative_sample_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(TRANSFORM_STREAM);
        Layout {
            a: self.a,
            b: self.b,
            heads: &heads,
            tails: &tails,
        }
        .optimize(
            &mut positions,
            Some(&self.positions),
            &mut schedule,
            n_epochs,
            self.config.learning_rate / 4.0,
            &mut rng,
        );
        Ok(positions)
    }

    /// `UMP1` container: config, curve parameters, training vectors and
    /// fitted positions, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = Writer::with_magic(b"UMP1");
        w.u32(c.n_neighbors as u32)
            .f64(c.min_dist)
            .u32(c.n_epochs_fit as u32)
            .u32(c.n_epochs_transform as u32)
            .u32(c.negative_sample_rate as u32)
            .f64(c.learning_rate)
            .u64(c.seed)
            .f64(self.a)
            .f64(self.b)
            .u32(self.data.len() as u32)
            .u32(self.dimension() as u32);
        for v in &self.data {
            w.f64s(v);
        }
        for p in &self.positions {
            w.f64s(p);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<UmapModel, ProjectionError> {
        let mut r = Reader::open(bytes, "UMP1")?;
        let config = UmapConfig {
            n_neighbors: r.u32()? as usize,
            min_dist: r.f64()?,
            n_epochs_fit: r.u32()? as usize,
            n_epochs_transform: r.u32()? as usize,
            negative_sample_rate: r.u32()? as usize,
            learning_rate: r.f64()?,
            seed: r.u64()?,
        };
        config.validate()?;
        let (a, b) = (r.f64()?, r.f64()?);
        if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
            return Err(ContainerError::Invalid("curve parameters must be positive".into()).into());
        }
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let expected = n
            .checked_mul(dim.saturating_add(2))
            .and_then(|c| c.checked_mul(8));
        if expected != Some(r.remaining()) {
            return Err(ContainerError::Invalid(format!(
                "{n} points of dimension {dim} do not match a {}-byte payload",
                r.remaining()
            ))
            .into());
        }
        if n <= config.n_neighbors || dim == 0 {
            return Err(ContainerError::Invalid("model holds too few points".into()).into());
        }
        let data: Vec<Vec<f64>> = (0..n).map(|_| r.f64s(dim)).collect::<Result<_, _>>()?;
        let positions: Vec<Point2> = (0..n)
            .map(|_| r.f64s(2).map(|p| [p[0], p[1]]))
            .collect::<Result<_, _>>()?;
        r.finish()?;
        check_vectors(&data, Some(dim))?;
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ContainerError::Invalid("non-finite fitted position".into()).into());
        }
        Ok(UmapModel {
            config,
            a,
            b,
            data,
            positions,
        })
    }
}

pub fn fit(vectors: &[Vec<f64>], config: &UmapConfig) -> Result<UmapModel, ProjectionError> {
    UmapModel::fit(vectors, config)
}

pub fn transform(model: &UmapModel, vectors: &[Vec<f64>]) -> Result<Vec<Point2>, ProjectionError> {
    model.transform(vectors)
}

/// Mean Euclidean distance of the points to their centroid.
pub fn dispersion(points: &[Point2]) -> Result<f64, ProjectionError> {
    if points.len() < 2 {
        return Err(ProjectionError::TooFewPoints {
            n_neighbors: 1,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    Ok(points.iter().map(|p| dist(p, &[cx, cy])).sum::<f64>() / n)
}

/// Trustworthiness of a low-dimensional embedding: 1 minus the normalized
/// rank penalty of low-dimensional neighbours that are not high-dimensional
/// neighbours. Brute force, `O(n^2 log n)`.
pub fn trustworthiness(high: &[Vec<f64>], low: &[Point2], k: usize) -> f64 {
    let n = high.len();
    assert_eq!(n, low.len(), "point counts differ");
    assert!(k >= 1 && 2 * n > 3 * k + 1, "k too large for {n} points");
    let penalty: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut order: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, sq_dist(&high[i], &high[j])))
                .collect();
            order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let mut rank = vec![0usize; n];
            for (r, &(j, _)) in order.iter().enumerate() {
                rank[j] = r + 1;
            }
            let mut low_order: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, sq_dist(&low[i], &low[j])))
                .collect();
            low_order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            low_order[..k]
                .iter()
                .map(|&(j, _)| rank[j].saturating_sub(k) as f64)
                .sum::<f64>()
        })
        .sum();
    let (nf, kf) = (n as f64, k as f64);
    1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty
}

/// Top-two principal-components projection.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    axes: [Vec<f64>; 2],
}

impl PcaModel {
    pub fn fit(vectors: &[Vec<f64>]) -> Result<PcaModel, ProjectionError> {
        if vectors.len() < 2 {
            return Err(ProjectionError::TooFewPoints {
                n_neighbors: 1,
                got: vectors.len(),
            });
        }
        let dim = check_vectors(vectors, None)?;
        let n = vectors.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|d| vectors.iter().map(|v| v[d]).sum::<f64>() / n).collect();
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for v in vectors {
            for r in 0..dim {
                let dr = v[r] - mean[r];
                for c in r..dim {
                    cov[(r, c)] += dr * (v[c] - mean[c]);
                }
            }
        }
        for r in 0..dim {
            for c in 0..r {
                cov[(r, c)] = cov[(c, r)];
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
        let axis = |c: usize| -> Vec<f64> {
            if c >= dim {
                return vec![0.0; dim];
            }
            let mut v: Vec<f64> = eig.eigenvectors.column(order[c]).iter().copied().collect();
            // Sign convention: largest-magnitude component positive.
            let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        };
        Ok(PcaModel {
            mean,
            axes: [axis(0), axis(1)],
        })
    }

    pub fn project(&self, v: &[f64]) -> Point2 {
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        let dot = |a: &[f64]| centered.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
        [dot(&self.axes[0]), dot(&self.axes[1])]
    }

    pub fn transform(&self, vectors: &[Vec<f64>]) -> Result<Vec<Point2>, ProjectionError> {
        if vectors.is_empty() {
            return Err(ProjectionError::EmptyInput);
        }
        check_vectors(vectors, Some(self.mean.len()))?;
        Ok(vectors.iter().map(|v| self.project(v)).collect())
    }
}
