//! Seeded synthetic inputs shared by the property tests and the acceptance run.

use pmfscope::pmf::Pmf;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const DIM: usize = 160;

/// A random PMF with `bins` bins, about a fifth of them empty.
pub fn random_pmf(rng: &mut ChaCha8Rng, bins: usize) -> Pmf {
    let mut w: Vec<f64> = (0..bins)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    Pmf::from_weights(&w).unwrap()
}

/// Three isotropic 16-dim Gaussian blobs, zero-padded to 160 dims.
pub fn blobs(seed: u64, per_blob: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let centers: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..16).map(|_| rng.gen_range(-10.0..10.0)).collect())
        .collect();
    let mut out = Vec::new();
    for c in &centers {
        for _ in 0..per_blob {
            let mut v = vec![0.0; DIM];
            for (d, x) in c.iter().enumerate() {
                v[d] = x + noise.sample(&mut rng);
            }
            out.push(v);
        }
    }
    out
}

/// Unit square embedded in 160 dims through random orthonormal columns.
pub fn square_embedding(rng: &mut ChaCha8Rng, lo: f64, hi: f64, n: usize, basis: &[Vec<f64>; 2]) -> Vec<Vec<f64>> {
    let noise = Normal::new(0.0, 0.01).unwrap();
    (0..n)
        .map(|_| {
            let (u, v) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
            (0..DIM).map(|d| u * basis[0][d] + v * basis[1][d] + noise.sample(rng)).collect()
        })
        .collect()
}

pub fn orthonormal_pair(rng: &mut ChaCha8Rng) -> [Vec<f64>; 2] {
    let g = Normal::new(0.0, 1.0).unwrap();
    let mut a: Vec<f64> = (0..DIM).map(|_| g.sample(rng)).collect();
    let mut b: Vec<f64> = (0..DIM).map(|_| g.sample(rng)).collect();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    a.iter_mut().for_each(|x| *x /= na);
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    b.iter_mut().zip(&a).for_each(|(y, x)| *y -= dot * x);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    b.iter_mut().for_each(|x| *x /= nb);
    [a, b]
}
