//! Set-valued tools for piecewise-smooth discrete maps with a single
//! codimension-1 switching surface {h = 0}.
//!
//! Off the surface the map is one of its two smooth branches. On it (within a
//! relative tolerance band) the Filippov convexification is the closed segment
//! between the two one-sided values.

mod certify;
mod measure;
mod presets;

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use certify::{
    check_average_contraction, check_matching_condition, probe_incremental_iss, ContractionFamily,
    ContractionReport, IssReport, IssVerdict, MatchingReport, SamplingBox,
};
pub use measure::{check_measure_preservation, MeasureCheck, MeasureReport, MeasureSpec, SetCheck};
pub use presets::{agent_family, contraction_preset, piecewise_preset, CONTRACTION_PRESETS, PIECEWISE_PRESETS};

pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Default relative width of the boundary band.
pub const DEFAULT_BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilippovError {
    #[error("solution tree exceeds {cap} nodes")]
    TreeTooLarge { cap: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point {index} is not on the switching surface (h = {h:e})")]
    NotOnBoundary { index: usize, h: f64 },
    #[error("probabilities sum to {sum} at signal {signal}")]
    ProbabilitySum { signal: f64, sum: f64 },
    #[error("every test set has estimated measure 0")]
    DegenerateSampler,
    #[error("measure density integrates to {0}, not 1")]
    BadDensity(f64),
    #[error("initial gap is zero")]
    ZeroInitialGap,
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

/// A map that switches between two smooth branches across {h = 0}.
#[derive(Clone)]
pub struct PiecewiseMap {
    pub name: String,
    pub dim: usize,
    /// Used where h < 0.
    pub branch_minus: VectorFn,
    /// Used where h > 0.
    pub branch_plus: VectorFn,
    pub event_fn: ScalarFn,
    pub event_grad: VectorFn,
    /// Relative band: |h(x)| ≤ tol·(1 + ‖x‖∞) counts as on the surface.
    pub boundary_tol: f64,
}

impl fmt::Debug for PiecewiseMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PiecewiseMap")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("boundary_tol", &self.boundary_tol)
            .finish_non_exhaustive()
    }
}

impl PiecewiseMap {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        branch_minus: VectorFn,
        branch_plus: VectorFn,
        event_fn: ScalarFn,
        event_grad: VectorFn,
    ) -> Self {
        PiecewiseMap {
            name: name.into(),
            dim,
            branch_minus,
            branch_plus,
            event_fn,
            event_grad,
            boundary_tol: DEFAULT_BOUNDARY_TOL,
        }
    }

    pub fn h(&self, x: &[f64]) -> f64 {
        (self.event_fn)(x)
    }

    fn band(&self, x: &[f64]) -> f64 {
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.boundary_tol * (1.0 + scale)
    }

    pub fn on_boundary(&self, x: &[f64]) -> bool {
        self.h(x).abs() <= self.band(x)
    }

    /// Single-valued evaluation by the sign of h, with h = 0 sent to the plus
    /// branch.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        if self.h(x) < 0.0 {
            (self.branch_minus)(x)
        } else {
            (self.branch_plus)(x)
        }
    }
}

/// A point or the closed segment between two distinct points.
#[derive(Debug, Clone, PartialEq)]
pub enum SetValue {
    Point(Vec<f64>),
    Segment(Vec<f64>, Vec<f64>),
}

impl SetValue {
    pub fn is_point(&self) -> bool {
        matches!(self, SetValue::Point(_))
    }

    /// Whether `y` lies in the set, up to `tol` in the Euclidean norm.
    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        match self {
            SetValue::Point(p) => dist(p, y) <= tol,
            SetValue::Segment(a, b) => {
                let ab: Vec<f64> = b.iter().zip(a).map(|(b, a)| b - a).collect();
                let ay: Vec<f64> = y.iter().zip(a).map(|(y, a)| y - a).collect();
                let len2: f64 = ab.iter().map(|v| v * v).sum();
                let t = (dot(&ab, &ay) / len2).clamp(0.0, 1.0);
                let proj: Vec<f64> = a.iter().zip(&ab).map(|(a, d)| a + t * d).collect();
                dist(&proj, y) <= tol
            }
        }
    }

    /// `count` representatives: the point itself, or the two endpoints plus
    /// evenly spaced interior points.
    pub fn representatives(&self, count: usize) -> Vec<Vec<f64>> {
        match self {
            SetValue::Point(p) => vec![p.clone()],
            SetValue::Segment(a, b) => {
                let count = count.max(2);
                let mut out = vec![a.clone(), b.clone()];
                for i in 1..count - 1 {
                    let t = i as f64 / (count - 1) as f64;
                    out.push(a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect());
                }
                out
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Filippov convexification at `x`.
pub fn convexify(map: &PiecewiseMap, x: &[f64]) -> SetValue {
    let h = map.h(x);
    let band = map.band(x);
    if h < -band {
        SetValue::Point((map.branch_minus)(x))
    } else if h > band {
        SetValue::Point((map.branch_plus)(x))
    } else {
        let a = (map.branch_minus)(x);
        let b = (map.branch_plus)(x);
        if a == b {
            SetValue::Point(a)
        } else {
            SetValue::Segment(a, b)
        }
    }
}

/// Breadth-first tree of solution representatives x(1..=k) from `x0`.
///
/// Point values give one child, segment values give `per_step_cap` children
/// (endpoints first). Fails once the tree would hold more than `node_cap`
/// nodes.
pub fn enumerate_solutions(
    map: &PiecewiseMap,
    x0: &[f64],
    k: usize,
    per_step_cap: usize,
    node_cap: usize,
) -> Result<Vec<Vec<Vec<f64>>>, FilippovError> {
    if k < 1 {
        return Err(FilippovError::InvalidArgument("k must be at least 1".into()));
    }
    if per_step_cap < 2 {
        return Err(FilippovError::InvalidArgument("per_step_cap must be at least 2".into()));
    }
    let mut frontier: VecDeque<Vec<Vec<f64>>> = VecDeque::from([Vec::new()]);
    let mut nodes = 1usize;
    for _ in 0..k {
        let mut next = VecDeque::with_capacity(frontier.len());
        while let Some(path) = frontier.pop_front() {
            let here = path.last().map(Vec::as_slice).unwrap_or(x0);
            for child in convexify(map, here).representatives(per_step_cap) {
                nodes += 1;
                if nodes > node_cap {
                    return Err(FilippovError::TreeTooLarge { cap: node_cap });
                }
                let mut p = path.clone();
                p.push(child);
                next.push_back(p);
            }
        }
        frontier = next;
    }
    Ok(frontier.into())
}
