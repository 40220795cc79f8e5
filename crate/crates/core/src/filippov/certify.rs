//! Checks for the hypotheses of the ergodicity results: the matching
//! condition on the switching surface, contraction on average of a random map
//! family, and an incremental-stability probe for the controller.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dist, dot, FilippovError, PiecewiseMap, VectorFn};
use crate::control::ControllerState;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingReport {
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub pass: bool,
}

/// |α⁺·∇h(x)ᵀ·F⁺(x) − α⁻·∇h(x)ᵀ·F⁻(x)| at each boundary point; passes iff
/// every residual is at most `tol`.
pub fn check_matching_condition(
    map: &PiecewiseMap,
    alpha_minus: f64,
    alpha_plus: f64,
    boundary_points: &[Vec<f64>],
    tol: f64,
) -> Result<MatchingReport, FilippovError> {
    let mut residuals = Vec::with_capacity(boundary_points.len());
    for (index, x) in boundary_points.iter().enumerate() {
        if !map.on_boundary(x) {
            return Err(FilippovError::NotOnBoundary { index, h: map.h(x) });
        }
        let g = (map.event_grad)(x);
        let plus = dot(&g, &(map.branch_plus)(x));
        let minus = dot(&g, &(map.branch_minus)(x));
        residuals.push((alpha_plus * plus - alpha_minus * minus).abs());
    }
    let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(MatchingReport {
        pass: max_residual <= tol,
        max_residual,
        residuals,
    })
}

/// Probability vector over the family's maps, as a function of the signal π.
pub type ProbabilityFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Maps F_m chosen with probabilities p_m(π).
#[derive(Clone)]
pub struct ContractionFamily {
    pub name: String,
    pub dim: usize,
    pub maps: Vec<VectorFn>,
    pub probs: ProbabilityFn,
}

impl std::fmt::Debug for ContractionFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContractionFamily")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("maps", &self.maps.len())
            .finish_non_exhaustive()
    }
}

/// Axis-aligned box to draw sample points from.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SamplingBox {
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        SamplingBox {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    /// A point on the 2⁻²⁰ grid, so that halving and adding small dyadic
    /// constants stay exact.
    fn sample_dyadic(&self, rng: &mut impl Rng) -> Vec<f64> {
        const SCALE: f64 = (1u64 << 20) as f64;
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&lo, &hi)| ((lo + rng.random::<f64>() * (hi - lo)) * SCALE).round() / SCALE)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    /// Largest Σ p_m·‖F_m(x) − F_m(x̂)‖ / ‖x − x̂‖ over the sampled triples.
    pub max_ratio: f64,
    /// (x, x̂, π) attaining it.
    pub worst: (Vec<f64>, Vec<f64>, f64),
    pub pairs_evaluated: usize,
    pub pass: bool,
}

/// Empirical contraction-on-average constant of a map family. Passes iff
/// the largest observed ratio is below `1 − margin`.
pub fn check_average_contraction(
    family: &ContractionFamily,
    signals: &[f64],
    sample_pairs: usize,
    domain: &SamplingBox,
    margin: f64,
    seed: u64,
) -> Result<ContractionReport, FilippovError> {
    if signals.is_empty() || sample_pairs == 0 {
        return Err(FilippovError::InvalidArgument("need at least one signal and one pair".into()));
    }
    if domain.lo.len() != family.dim || domain.hi.len() != family.dim {
        return Err(FilippovError::InvalidArgument("sampling box dimension mismatch".into()));
    }
    let probs: Vec<Vec<f64>> = signals.iter().map(|&pi| (family.probs)(pi)).collect();
    for (p, &signal) in probs.iter().zip(signals) {
        let sum: f64 = p.iter().sum();
        if p.len() != family.maps.len() || (sum - 1.0).abs() > 1e-12 || p.iter().any(|&v| v < 0.0) {
            return Err(FilippovError::ProbabilitySum { signal, sum });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = ContractionReport {
        max_ratio: f64::NEG_INFINITY,
        worst: (Vec::new(), Vec::new(), 0.0),
        pairs_evaluated: 0,
        pass: false,
    };
    for _ in 0..sample_pairs {
        let x = domain.sample_dyadic(&mut rng);
        let mut y = domain.sample_dyadic(&mut rng);
        let mut tries = 0;
        while x == y {
            tries += 1;
            if tries > 1000 {
                return Err(FilippovError::InvalidArgument("sampling box is degenerate".into()));
            }
            y = domain.sample_dyadic(&mut rng);
        }
        let gap = dist(&x, &y);
        let images: Vec<f64> = family.maps.iter().map(|f| dist(&f(&x), &f(&y))).collect();
        for (p, &signal) in probs.iter().zip(signals) {
            let ratio = p.iter().zip(&images).map(|(p, d)| p * d).sum::<f64>() / gap;
            if ratio > best.max_ratio {
                best.max_ratio = ratio;
                best.worst = (x.clone(), y.clone(), signal);
            }
            best.pairs_evaluated += 1;
        }
    }
    best.pass = best.max_ratio < 1.0 - margin;
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssVerdict {
    Contractive,
    NonContractive,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IssReport {
    /// d(j) = |x_c^A(j) − x_c^B(j)| for j = 0..=k.
    pub gaps: Vec<f64>,
    /// Fitted decay factor ρ of d(j) ≈ d(0)·ρʲ.
    pub rho: f64,
    /// Integrator leak of the probed controller.
    pub leak: f64,
    /// max_j |d(j) − leakʲ·d(0)| / d(0).
    pub deviation_from_leak: f64,
    pub verdict: IssVerdict,
}

/// Runs two copies of `template` (deadband disabled) from `xc_a` and `xc_b`
/// on input sequences `inputs_a` and `inputs_b` for `k` steps and fits a
/// geometric decay to their state gap.
///
/// Contractive iff ρ < 1 and d(j)/d(0) ≤ ρʲ·(1 + tol) for every j;
/// non-contractive iff d(j) stays within tol·d(0) of d(0).
pub fn probe_incremental_iss(
    template: &ControllerState,
    inputs_a: &[f64],
    inputs_b: &[f64],
    xc_a: f64,
    xc_b: f64,
    k: usize,
    tol: f64,
) -> Result<IssReport, FilippovError> {
    if inputs_a.len() < k || inputs_b.len() < k {
        return Err(FilippovError::InvalidArgument(format!("need {k} inputs per instance")));
    }
    let d0 = (xc_a - xc_b).abs();
    if d0 == 0.0 {
        return Err(FilippovError::ZeroInitialGap);
    }
    let make = |x_c| ControllerState {
        x_c,
        deadband: 0.0,
        ..*template
    };
    let (mut a, mut b) = (make(xc_a), make(xc_b));
    let mut gaps = Vec::with_capacity(k + 1);
    gaps.push(d0);
    for j in 0..k {
        a.step(inputs_a[j]);
        b.step(inputs_b[j]);
        gaps.push((a.x_c - b.x_c).abs());
    }

    let leak = template.leak();
    let mut deviation_from_leak = 0.0f64;
    let mut lp = 1.0;
    for &d in &gaps {
        deviation_from_leak = deviation_from_leak.max((d - lp * d0).abs() / d0);
        lp *= leak;
    }

    // least-squares slope of ln(d(j)/d(0)) through the origin
    let (mut num, mut den) = (0.0, 0.0);
    for (j, &d) in gaps.iter().enumerate().skip(1) {
        if d > 0.0 {
            num += j as f64 * (d / d0).ln();
            den += (j * j) as f64;
        }
    }
    let rho = if den > 0.0 { (num / den).exp() } else { 0.0 };

    let flat = gaps.iter().all(|&d| (d - d0).abs() <= tol * d0);
    let decaying = rho < 1.0
        && gaps
            .iter()
            .enumerate()
            .all(|(j, &d)| d / d0 <= rho.powi(j as i32) * (1.0 + tol));
    let verdict = if flat {
        IssVerdict::NonContractive
    } else if decaying {
        IssVerdict::Contractive
    } else {
        IssVerdict::Inconclusive
    };
    Ok(IssReport {
        gaps,
        rho,
        leak,
        deviation_from_leak,
        verdict,
    })
}
