//! Long-run averages, fairness, the squared-quantile Wasserstein criterion
//! and mixing-time estimation over ensembles of runs.

use rayon::prelude::*;
use thiserror::Error;

use crate::agents::Logistic;
use crate::control::ControllerKind;
use crate::sim::{run_ensemble_with, Retention, RunSet, SimConfig, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErgodicsError {
    #[error("empty series")]
    EmptySeries,
    #[error("distribution needs at least 2 finite samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite sample")]
    NonFinite,
    #[error("need at least 2 initial-state labels, got {0}")]
    TooFewLabels(usize),
    #[error("label {label} has {valid} valid runs, need at least 2")]
    TooFewRuns { label: usize, valid: usize },
    #[error("mixing sweep requires the lag controller")]
    NotLag,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// (1/(k+1))·Σ_{j≤k} series(j) over the whole series.
pub fn long_run_average(series: &[f64]) -> Result<f64, ErgodicsError> {
    if series.is_empty() {
        return Err(ErgodicsError::EmptySeries);
    }
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

/// Running average trace: element k is the mean of series[0..=k].
pub fn running_average(series: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    series
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            sum += x;
            sum / (k + 1) as f64
        })
        .collect()
}

/// Largest |r̄ᵢ − r̄ⱼ| over pairs within the same group.
pub fn fairness_gap(groups: &[Vec<f64>]) -> f64 {
    groups
        .iter()
        .filter(|g| g.len() >= 2)
        .map(|g| {
            let lo = g.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Sorted samples of a scalar empirical measure.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self, ErgodicsError> {
        if samples.len() < 2 {
            return Err(ErgodicsError::TooFewSamples(samples.len()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(ErgodicsError::NonFinite);
        }
        samples.sort_by(f64::total_cmp);
        Ok(EmpiricalDistribution { sorted: samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    pub fn count(&self) -> usize {
        self.sorted.len()
    }
}

/// ∫₀¹ |F_A⁻¹(q) − F_B⁻¹(q)|² dq for two empirical measures.
///
/// Equal counts reduce to the mean squared difference of order statistics.
/// Otherwise the integral is taken exactly over the merged quantile
/// breakpoints i/n and j/m.
pub fn wasserstein2_sq(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> f64 {
    let (xa, xb) = (&a.sorted, &b.sorted);
    let (n, m) = (xa.len(), xb.len());
    if n == m {
        return xa
            .iter()
            .zip(xb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n as f64;
    }
    // Walk breakpoints i/n and j/m, compared as i·m vs j·n to stay exact.
    let (mut i, mut j) = (1usize, 1usize);
    let mut prev = 0.0;
    let mut total = 0.0;
    while i <= n && j <= m {
        let d = xa[i - 1] - xb[j - 1];
        let (im, jn) = (i * m, j * n);
        let next = if im <= jn { i as f64 / n as f64 } else { j as f64 / m as f64 };
        total += (next - prev) * d * d;
        prev = next;
        if im <= jn {
            i += 1;
        }
        if jn <= im {
            j += 1;
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingReport {
    pub deadband_fraction: f64,
    pub threshold_fraction: f64,
    /// First k (1-based) at which every pair satisfies W ≤ threshold·Δ.
    pub mixing_time: Option<usize>,
    pub horizon: usize,
    /// Label pairs (a, b), a < b.
    pub pairs: Vec<(usize, usize)>,
    /// Per-pair Δ = W at k = 1.
    pub delta_ref: Vec<f64>,
    /// Per-pair W for k = 1..=horizon.
    pub trace: Vec<Vec<f64>>,
    /// Some pair had Δ = 0, which makes its threshold 0.
    pub degenerate: bool,
}

impl MixingReport {
    /// Smallest per-pair Δ (the only one for two labels).
    pub fn min_delta(&self) -> f64 {
        self.delta_ref.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Smallest W/Δ observed for `pair` over steps k ≥ `from` (1-based).
    pub fn min_ratio_from(&self, pair: usize, from: usize) -> f64 {
        let delta = self.delta_ref[pair];
        self.trace[pair][from - 1..]
            .iter()
            .map(|w| w / delta)
            .fold(f64::INFINITY, f64::min)
    }

    /// Mixing time, counting "not mixed" as the horizon.
    pub fn time_or_horizon(&self) -> usize {
        self.mixing_time.unwrap_or(self.horizon)
    }
}

/// Mixing time of the controller state across initial-state labels.
///
/// At each k the x_c(k) values of each label form an empirical distribution
/// across repetitions. Failed runs are left out.
pub fn mixing_time(runs: &RunSet, threshold_fraction: f64) -> Result<MixingReport, ErgodicsError> {
    let labels = runs.labels();
    if labels < 2 {
        return Err(ErgodicsError::TooFewLabels(labels));
    }
    let mut per_label: Vec<Vec<&[f64]>> = vec![Vec::new(); labels];
    for (_, label, r) in runs.iter() {
        if let Ok(t) = r {
            per_label[label].push(&t.x_c);
        }
    }
    for (label, v) in per_label.iter().enumerate() {
        if v.len() < 2 {
            return Err(ErgodicsError::TooFewRuns { label, valid: v.len() });
        }
    }
    let pairs: Vec<(usize, usize)> = (0..labels)
        .flat_map(|a| (a + 1..labels).map(move |b| (a, b)))
        .collect();
    let horizon = runs.horizon;

    let by_k: Vec<Vec<f64>> = (0..horizon)
        .into_par_iter()
        .map(|k| {
            let dists: Vec<EmpiricalDistribution> = per_label
                .iter()
                .map(|series| EmpiricalDistribution::new(series.iter().map(|s| s[k]).collect()))
                .collect::<Result<_, _>>()?;
            Ok(pairs
                .iter()
                .map(|&(a, b)| wasserstein2_sq(&dists[a], &dists[b]))
                .collect())
        })
        .collect::<Result<_, ErgodicsError>>()?;

    let trace: Vec<Vec<f64>> = (0..pairs.len())
        .map(|p| by_k.iter().map(|row| row[p]).collect())
        .collect();
    let delta_ref: Vec<f64> = trace.iter().map(|t| t[0]).collect();
    let degenerate = delta_ref.iter().any(|&d| d == 0.0);
    let mixing_time = (0..horizon)
        .find(|&k| {
            by_k[k]
                .iter()
                .zip(&delta_ref)
                .all(|(w, d)| *w <= threshold_fraction * d)
        })
        .map(|k| k + 1);

    Ok(MixingReport {
        deadband_fraction: runs.deadband_fraction,
        threshold_fraction,
        mixing_time,
        horizon,
        pairs,
        delta_ref,
        trace,
        degenerate,
    })
}

/// One mixing report per deadband fraction, each from a fresh run set with
/// the same master seed.
pub fn mixing_sweep(
    cfg: &SimConfig,
    deadband_fractions: &[f64],
    threshold_fraction: f64,
) -> Result<Vec<MixingReport>, ErgodicsError> {
    if cfg.controller.kind != ControllerKind::Lag {
        return Err(ErgodicsError::NotLag);
    }
    deadband_fractions
        .iter()
        .map(|&f| {
            let mut c = cfg.clone();
            c.controller.deadband_fraction = f;
            let runs = run_ensemble_with(&c, Retention::ControllerState, &Logistic)?;
            mixing_time(&runs, threshold_fraction)
        })
        .collect()
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with tie-averaged ranks. `None` if either
/// input has constant rank.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn averages() {
        assert_eq!(long_run_average(&[3.0; 7]).unwrap(), 3.0);
        let alt: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        assert_eq!(long_run_average(&alt).unwrap(), 0.5);
        assert_eq!(long_run_average(&[]), Err(ErgodicsError::EmptySeries));
        assert_eq!(running_average(&[1.0, 3.0, 5.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn fairness_examples() {
        assert_eq!(fairness_gap(&[vec![0.3, 0.3, 0.3]]), 0.0);
        assert!((fairness_gap(&[vec![0.4, 0.5, 0.45]]) - 0.1).abs() < 1e-15);
        assert_eq!(fairness_gap(&[vec![0.1, 0.2], vec![0.5, 0.9]]), 0.4);
    }

    #[test]
    fn w2_examples() {
        assert_eq!(wasserstein2_sq(&dist(&[1.0, 5.0, 2.0]), &dist(&[5.0, 2.0, 1.0])), 0.0);
        assert_eq!(wasserstein2_sq(&dist(&[0.0, 0.0]), &dist(&[1.0, 1.0])), 1.0);
        assert_eq!(wasserstein2_sq(&dist(&[0.0, 2.0]), &dist(&[1.0, 3.0])), 1.0);
    }

    #[test]
    fn w2_unequal_counts() {
        // quantiles of {0,1} vs {0,0,3}: on (0,1/3] 0 vs 0, (1/3,1/2] 0 vs 0,
        // (1/2,2/3] 1 vs 0, (2/3,1] 1 vs 3
        let w = wasserstein2_sq(&dist(&[0.0, 1.0]), &dist(&[0.0, 0.0, 3.0]));
        assert!((w - (1.0 / 6.0 + 4.0 / 3.0)).abs() < 1e-15);
        let w = wasserstein2_sq(&dist(&[0.0, 0.0]), &dist(&[1.0, 1.0, 1.0]));
        assert!((w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_samples() {
        assert_eq!(
            EmpiricalDistribution::new(vec![1.0]),
            Err(ErgodicsError::TooFewSamples(1))
        );
    }

    #[test]
    fn ranks_and_spearman() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        let r = spearman(&[0.0, 1.0, 2.0, 3.0], &[1.0, 4.0, 9.0, 16.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        let r = spearman(&[0.0, 1.0, 2.0, 3.0], &[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert!((r + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&[0.0, 1.0], &[2.0, 2.0]), None);
    }

    fn sample_set() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 8)
    }

    proptest! {
        #[test]
        fn w2_symmetric_and_shift_invariant(a in sample_set(), b in sample_set(), c in -50.0f64..50.0) {
            let (da, db) = (dist(&a), dist(&b));
            prop_assert_eq!(wasserstein2_sq(&da, &db), wasserstein2_sq(&db, &da));
            let sa = dist(&a.iter().map(|x| x + c).collect::<Vec<_>>());
            let sb = dist(&b.iter().map(|x| x + c).collect::<Vec<_>>());
            let (w, ws) = (wasserstein2_sq(&da, &db), wasserstein2_sq(&sa, &sb));
            prop_assert!((w - ws).abs() <= 1e-9 * (1.0 + w));
        }

        #[test]
        fn w2_point_mass_shift(x in -50.0f64..50.0, c in -50.0f64..50.0) {
            let w = wasserstein2_sq(&dist(&[x, x]), &dist(&[x + c, x + c]));
            prop_assert!((w - c * c).abs() <= 1e-9 * (1.0 + c * c));
        }

        #[test]
        fn w2_zero_iff_identical(a in sample_set(), b in sample_set()) {
            let (da, db) = (dist(&a), dist(&b));
            prop_assert_eq!(wasserstein2_sq(&da, &db) == 0.0, da.samples() == db.samples());
        }

        #[test]
        fn w2_triangle(a in sample_set(), b in sample_set(), c in sample_set()) {
            let (da, db, dc) = (dist(&a), dist(&b), dist(&c));
            let ab = wasserstein2_sq(&da, &db).sqrt();
            let bc = wasserstein2_sq(&db, &dc).sqrt();
            let ac = wasserstein2_sq(&da, &dc).sqrt();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn average_within_range(v in prop::collection::vec(-10.0f64..10.0, 1..50)) {
            let m = long_run_average(&v).unwrap();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        }
    }
}
