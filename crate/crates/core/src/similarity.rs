//! Similarity and divergence measures between two PMFs.
//!
//! All logarithms are natural, so KL-type values are in nats. Every measure
//! is written so that swapping its operands performs the same floating-point
//! operations in a commuted order, which makes symmetry exact rather than
//! approximate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pmf::{Pmf, PmfError};

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("bin counts differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("{measure} needs strictly positive support; bin {bin} is empty on one side only (smooth first)")]
    NonPositiveSupport { measure: MeasureId, bin: usize },
    #[error(transparent)]
    Pmf(#[from] PmfError),
}

/// The eight-measure battery, in embedding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeasureId {
    SymmetricKL,
    ModifiedKS,
    Hellinger,
    JensenShannon,
    QuadraticChi,
    NccDissimilarity,
    Bhattacharyya,
    TotalVariation,
}

impl MeasureId {
    pub const ALL: [MeasureId; 8] = [
        MeasureId::SymmetricKL,
        MeasureId::ModifiedKS,
        MeasureId::Hellinger,
        MeasureId::JensenShannon,
        MeasureId::QuadraticChi,
        MeasureId::NccDissimilarity,
        MeasureId::Bhattacharyya,
        MeasureId::TotalVariation,
    ];

    /// The three measures reported for class-PMF comparisons.
    pub const HEADLINE: [MeasureId; 3] = [
        MeasureId::SymmetricKL,
        MeasureId::ModifiedKS,
        MeasureId::Hellinger,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MeasureId::SymmetricKL => "symmetric_kl",
            MeasureId::ModifiedKS => "modified_ks",
            MeasureId::Hellinger => "hellinger",
            MeasureId::JensenShannon => "jensen_shannon",
            MeasureId::QuadraticChi => "quadratic_chi",
            MeasureId::NccDissimilarity => "ncc_dissimilarity",
            MeasureId::Bhattacharyya => "bhattacharyya",
            MeasureId::TotalVariation => "total_variation",
        }
    }

    /// Log-based measures; these see smoothed operands in [`measure_all`].
    pub fn needs_smoothing(self) -> bool {
        matches!(
            self,
            MeasureId::SymmetricKL | MeasureId::JensenShannon | MeasureId::Bhattacharyya
        )
    }
}

impl fmt::Display for MeasureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MeasureId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown measure `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureValue {
    pub measure: MeasureId,
    pub value: f64,
}

/// How the two directed KL divergences are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlConvention {
    /// `(KL(p||q) + KL(q||p)) / 2`
    #[default]
    Mean,
    /// `KL(p||q) + KL(q||p)` (Jeffreys divergence)
    Sum,
}

impl FromStr for KlConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(KlConvention::Mean),
            "sum" => Ok(KlConvention::Sum),
            other => Err(format!("unknown KL convention `{other}`")),
        }
    }
}

fn operands<'a>(p: &'a Pmf, q: &'a Pmf) -> Result<(&'a [f64], &'a [f64]), MeasureError> {
    if p.len() != q.len() {
        return Err(MeasureError::DimensionMismatch(p.len(), q.len()));
    }
    Ok((p.probs(), q.probs()))
}

fn value(measure: MeasureId, value: f64) -> MeasureValue {
    MeasureValue { measure, value }
}

pub fn symmetric_kl(p: &Pmf, q: &Pmf) -> Result<MeasureValue, MeasureError> {
    symmetric_kl_with(p, q, KlConvention::Mean)
}

/// Bins empty on both sides contribute nothing; a bin empty on exactly one
/// side makes the divergence infinite and is reported as an error.
pub fn symmetric_kl_with(
    p: &Pmf,
    q: &Pmf,
    convention: KlConvention,
) -> Result<MeasureValue, MeasureError> {
    let (p, q) = operands(p, q)?;
    let mut sum = 0.0;
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a == 0.0 && b == 0.0 {
            continue;
        }
        if a == 0.0 || b == 0.0 {
            return Err(MeasureError::NonPositiveSupport {
                measure: MeasureId::SymmetricKL,
                bin: i,
            });
        }
        // KL(p||q) + KL(q||p) = sum (p - q)(ln p - ln q)
        sum += (a - b) * (a.ln() - b.ln());
    }
    let jeffreys = sum.max(0.0);
    let v = match convention {
        KlConvention::Mean => 0.5 * jeffreys,
        KlConvention::Sum => jeffreys,
    };
    Ok(value(MeasureId::SymmetricKL, v))
}

/// Largest absolute CDF difference over the bin order.
pub fn modified_ks(p: &Pmf, q: &Pmf) -> Result<MeasureValue, MeasureError> {
    operands(p, q)?;
    let (cp, cq) = (p.cdf(), q.cdf());
    let d = cp
        .iter()
        .zip(&cq)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    Ok(value(MeasureId::ModifiedKS, d.min(1.0)))
}

/// `0.5 * sum (sqrt p - sqrt q)^2`, which equals `1 - BC` for normalized
/// inputs and is exactly zero for identical ones.
fn squared_hellinger(p: &[f64], q: &[f64]) -> f64 {
    let s: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    (0.5 * s).clamp(0.0, 1.0)
}

pub fn hellinger(p: &Pmf, q: &Pmf) -> Result<MeasureValue, MeasureError> {
    let (p, q) = operands(p, q)?;
    Ok(value(MeasureId::Hellinger, squared_hellinger(p, q).sqrt()))
}

pub fn jensen_shannon(p: &Pmf, q: &Pmf) -> Result<MeasureValue, MeasureError> {
    let (p, q) = operands(p, q)?;
    let mut sum = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if m == 0.0 {
            continue;
        }
        let ln_m = m.ln();
        let ta = if a > 0.0 { a * (a.ln() - ln_m) } else { 0.0 };
        let tb = if b > 0.0 { b * (b.ln() - ln_m) } else { 0.0 };
        sum += ta + tb;
    }
    Ok(value(
        MeasureId::JensenShannon,
        (0.5 * sum).clamp(0.0, std::f64::consts::LN_2),
    ))
}

/// Quadratic-chi distance with a diagonal bin-similarity matrix:
/// `sqrt(sum (p - q)^2 / (p + q))`, skipping bins empty on both sides.
pub fn quadratic_chi(p: &Pmf, q: &Pmf) -> Result<MeasureValue, MeasureError> {
    let (p, q) = operands(p, q)?;
    let s: f64 = p
        .iter()
        .zip(q)
        .filter(|(&a, &b)| a + b > 0.0)
        .map(|(&a, &b)| {
            let d = a - b;
            d * d / (a + b)
        })
        .sum();
    Ok(value(MeasureId::QuadraticChi, s.sqrt()))
}

/// One minus the normalized cross-correlation of the two probability vectors.
pub fn ncc_dissimilarity(p: &Pmf, q: &Pmf) -> Result<MeasureValue, MeasureError> {
    let (p, q) = operands(p, q)?;
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let np2: f64 = p.iter().map(|a| a * a).sum();
    let nq2: f64 = q.iter().map(|b| b * b).sum();
    // A single square root keeps identical operands at exactly 1.
    let ncc = dot / (np2 * nq2).sqrt();
    Ok(value(MeasureId::NccDissimilarity, (1.0 - ncc).clamp(0.0, 1.0)))
}

/// `-ln BC` with `BC = sum sqrt(p q)`. Disjoint supports give `BC = 0`, an
/// infinite distance, and are reported as an error.
pub fn bhattacharyya(p: &Pmf, q: &Pmf) -> Result<MeasureValue, MeasureError> {
    let (p, q) = operands(p, q)?;
    let bc: f64 = p.iter().zip(q).map(|(&a, &b)| (a * b).sqrt()).sum();
    if bc <= 0.0 {
        let bin = p.iter().position(|&a| a > 0.0).unwrap_or(0);
        return Err(MeasureError::NonPositiveSupport {
            measure: MeasureId::Bhattacharyya,
            bin,
        });
    }
    let h2 = squared_hellinger(p, q);
    // 1 - h2 is the same coefficient as `bc` but exact at identity.
    let v = if h2 < 1.0 { -(-h2).ln_1p() } else { -bc.min(1.0).ln() };
    Ok(value(MeasureId::Bhattacharyya, v.max(0.0)))
}

pub fn total_variation(p: &Pmf, q: &Pmf) -> Result<MeasureValue, MeasureError> {
    let (p, q) = operands(p, q)?;
    let s: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    Ok(value(MeasureId::TotalVariation, (0.5 * s).clamp(0.0, 1.0)))
}

/// Dispatches one measure on unsmoothed operands.
pub fn measure(id: MeasureId, p: &Pmf, q: &Pmf) -> Result<MeasureValue, MeasureError> {
    measure_with(id, p, q, KlConvention::Mean)
}

pub fn measure_with(
    id: MeasureId,
    p: &Pmf,
    q: &Pmf,
    kl: KlConvention,
) -> Result<MeasureValue, MeasureError> {
    match id {
        MeasureId::SymmetricKL => symmetric_kl_with(p, q, kl),
        MeasureId::ModifiedKS => modified_ks(p, q),
        MeasureId::Hellinger => hellinger(p, q),
        MeasureId::JensenShannon => jensen_shannon(p, q),
        MeasureId::QuadraticChi => quadratic_chi(p, q),
        MeasureId::NccDissimilarity => ncc_dissimilarity(p, q),
        MeasureId::Bhattacharyya => bhattacharyya(p, q),
        MeasureId::TotalVariation => total_variation(p, q),
    }
}

/// All eight measures in [`MeasureId::ALL`] order. Log-based measures run on
/// copies of `p` and `q` smoothed by `epsilon`; the rest see the raw inputs.
pub fn measure_all(p: &Pmf, q: &Pmf, epsilon: f64) -> Result<Vec<MeasureValue>, MeasureError> {
    measure_roster(p, q, epsilon, &MeasureId::ALL, KlConvention::Mean)
}

pub fn measure_roster(
    p: &Pmf,
    q: &Pmf,
    epsilon: f64,
    roster: &[MeasureId],
    kl: KlConvention,
) -> Result<Vec<MeasureValue>, MeasureError> {
    operands(p, q)?;
    let smoothed = if roster.iter().any(|m| m.needs_smoothing()) {
        Some((p.smoothed(epsilon)?, q.smoothed(epsilon)?))
    } else {
        None
    };
    roster
        .iter()
        .map(|&id| match (&smoothed, id.needs_smoothing()) {
            (Some((ps, qs)), true) => measure_with(id, ps, qs, kl),
            _ => measure_with(id, p, q, kl),
        })
        .collect()
}
