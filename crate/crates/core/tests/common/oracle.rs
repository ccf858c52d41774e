//! Independent reference computations the library is checked against.

use astro_float::{BigFloat, Consts, Radix, RoundingMode};
use pmfscope::similarity::MeasureId;

const PREC: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;
/// Smoothing floor the oracle replicates for the log-based measures.
pub const EPS: f64 = 1e-10;

pub struct MeasureOracle {
    cc: Consts,
}

impl MeasureOracle {
    pub fn new() -> Self {
        MeasureOracle { cc: Consts::new().unwrap() }
    }
    fn f(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, PREC)
    }
    fn ln(&mut self, x: &BigFloat) -> BigFloat {
        x.ln(PREC, RM, &mut self.cc)
    }
    fn round_to_f64(&mut self, x: &BigFloat) -> f64 {
        x.format(Radix::Dec, RM, &mut self.cc).unwrap().parse().unwrap()
    }

    /// Smoothing in probability units, carried out exactly.
    fn smooth(&self, p: &[f64]) -> Vec<BigFloat> {
        let eps = self.f(EPS);
        let denom = self.f(1.0).add(&self.f(p.len() as f64).mul(&eps, PREC, RM), PREC, RM);
        p.iter().map(|&x| self.f(x).add(&eps, PREC, RM).div(&denom, PREC, RM)).collect()
    }

    pub fn value(&mut self, id: MeasureId, p: &[f64], q: &[f64]) -> f64 {
        let zero = self.f(0.0);
        let half = self.f(0.5);
        let big = |v: &[f64]| v.iter().map(|&x| BigFloat::from_f64(x, PREC)).collect::<Vec<_>>();
        let (bp, bq) = if id.needs_smoothing() { (self.smooth(p), self.smooth(q)) } else { (big(p), big(q)) };
        let abs = |x: BigFloat| if x < BigFloat::from_f64(0.0, PREC) { x.neg() } else { x };
        let r = match id {
            MeasureId::SymmetricKL => {
                let mut s = zero.clone();
                for (a, b) in bp.iter().zip(&bq) {
                    let d = a.sub(b, PREC, RM);
                    let l = self.ln(a).sub(&self.ln(b), PREC, RM);
                    s = s.add(&d.mul(&l, PREC, RM), PREC, RM);
                }
                s.mul(&half, PREC, RM)
            }
            MeasureId::ModifiedKS => {
                let (mut cp, mut cq, mut best) = (zero.clone(), zero.clone(), zero.clone());
                for (a, b) in bp.iter().zip(&bq) {
                    cp = cp.add(a, PREC, RM);
                    cq = cq.add(b, PREC, RM);
                    let d = abs(cp.sub(&cq, PREC, RM));
                    if d > best {
                        best = d;
                    }
                }
                best
            }
            MeasureId::Hellinger => {
                let mut s = zero.clone();
                for (a, b) in bp.iter().zip(&bq) {
                    let d = a.sqrt(PREC, RM).sub(&b.sqrt(PREC, RM), PREC, RM);
                    s = s.add(&d.mul(&d, PREC, RM), PREC, RM);
                }
                s.mul(&half, PREC, RM).sqrt(PREC, RM)
            }
            MeasureId::JensenShannon => {
                let mut s = zero.clone();
                for (a, b) in bp.iter().zip(&bq) {
                    let m = a.add(b, PREC, RM).mul(&half, PREC, RM);
                    for x in [a, b] {
                        if !x.is_zero() {
                            let t = x.mul(&self.ln(&x.div(&m, PREC, RM)), PREC, RM);
                            s = s.add(&t, PREC, RM);
                        }
                    }
                }
                s.mul(&half, PREC, RM)
            }
            MeasureId::QuadraticChi => {
                let mut s = zero.clone();
                for (a, b) in bp.iter().zip(&bq) {
                    let sum = a.add(b, PREC, RM);
                    if !sum.is_zero() {
                        let d = a.sub(b, PREC, RM);
                        s = s.add(&d.mul(&d, PREC, RM).div(&sum, PREC, RM), PREC, RM);
                    }
                }
                s.sqrt(PREC, RM)
            }
            MeasureId::NccDissimilarity => {
                let (mut dot, mut pp, mut qq) = (zero.clone(), zero.clone(), zero.clone());
                for (a, b) in bp.iter().zip(&bq) {
                    dot = dot.add(&a.mul(b, PREC, RM), PREC, RM);
                    pp = pp.add(&a.mul(a, PREC, RM), PREC, RM);
                    qq = qq.add(&b.mul(b, PREC, RM), PREC, RM);
                }
                let norm = pp.mul(&qq, PREC, RM).sqrt(PREC, RM);
                self.f(1.0).sub(&dot.div(&norm, PREC, RM), PREC, RM)
            }
            MeasureId::Bhattacharyya => {
                let mut bc = zero.clone();
                for (a, b) in bp.iter().zip(&bq) {
                    bc = bc.add(&a.mul(b, PREC, RM).sqrt(PREC, RM), PREC, RM);
                }
                self.ln(&bc).neg()
            }
            MeasureId::TotalVariation => {
                let mut s = zero.clone();
                for (a, b) in bp.iter().zip(&bq) {
                    s = s.add(&abs(a.sub(b, PREC, RM)), PREC, RM);
                }
                s.mul(&half, PREC, RM)
            }
        };
        self.round_to_f64(&r)
    }
}

/// Brute-force trustworthiness straight from its definition, as an oracle for
/// the library version.
pub fn trustworthiness_oracle(high: &[Vec<f64>], low: &[[f64; 2]], k: usize) -> f64 {
    let n = high.len();
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut sum = 0.0;
    for i in 0..n {
        let mut hi: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        hi.sort_by(|&a, &b| d(&high[i], &high[a]).total_cmp(&d(&high[i], &high[b])).then(a.cmp(&b)));
        let mut lo: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        lo.sort_by(|&a, &b| d(&low[i], &low[a]).total_cmp(&d(&low[i], &low[b])).then(a.cmp(&b)));
        for &j in &lo[..k] {
            let rank = hi.iter().position(|&x| x == j).unwrap() + 1;
            if rank > k {
                sum += (rank - k) as f64;
            }
        }
    }
    1.0 - 2.0 / (n as f64 * k as f64 * (2.0 * n as f64 - 3.0 * k as f64 - 1.0)) * sum
}

/// EER as the crossing of the piecewise-linear DET polyline with the
/// diagonal, with operating points taken at every distinct score.
pub fn eer_oracle(bona: &[f64], spoof: &[f64]) -> f64 {
    let mut ts: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.push(f64::INFINITY);
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .map(|&t| {
            let miss = bona.iter().filter(|&&s| s < t).count() as f64 / bona.len() as f64;
            let fa = spoof.iter().filter(|&&s| s >= t).count() as f64 / spoof.len() as f64;
            (miss, fa)
        })
        .collect();
    for w in pts.windows(2) {
        let ((m0, f0), (m1, f1)) = (w[0], w[1]);
        if m0 == f0 {
            return m0;
        }
        if m1 >= f1 {
            let l = (f0 - m0) / ((m1 - m0) - (f1 - f0));
            return m0 + l * (m1 - m0);
        }
    }
    unreachable!()
}
