//! Stochastic on/off ensemble.
//!
//! Each agent commits (turns on) at the next step with a logistic probability
//! of the broadcast signal π. Agents of kind [`AgentKind::G1`] respond
//! positively to π, agents of kind [`AgentKind::G2`] negatively. Given π the
//! agents are sampled independently.

use rand::Rng;
use thiserror::Error;

const FLOOR: f64 = 0.02;
const SPAN: f64 = 0.95;
const CEIL: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    G1,
    G2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentParams {
    pub kind: AgentKind,
    /// Signal gain ξ.
    pub xi: f64,
    /// Logistic offset.
    pub x0: f64,
    /// MW produced while committed.
    pub capacity: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("ensemble size must be even and at least 2, got {0}")]
    BadSize(usize),
    #[error("agent capacity must be positive and finite, got {0}")]
    BadCapacity(f64),
    #[error("signal gain must be finite, got {0}")]
    BadGain(f64),
    #[error("{commitments} commitments for {params} agents")]
    LengthMismatch { commitments: usize, params: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub commitments: Vec<bool>,
    pub params: Vec<AgentParams>,
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probability that an agent is committed at the next step given signal π.
///
/// G1: `0.02 + 0.95 / (1 + exp(−ξπ − x0))`, G2: `0.98 − 0.95 / (1 + exp(−ξπ − x0))`.
pub fn commitment_probability(params: &AgentParams, pi: f64) -> f64 {
    let s = SPAN * logistic(params.xi * pi + params.x0);
    match params.kind {
        AgentKind::G1 => FLOOR + s,
        AgentKind::G2 => CEIL - s,
    }
}

impl EnsembleState {
    pub fn new(commitments: Vec<bool>, params: Vec<AgentParams>) -> Result<Self, EnsembleError> {
        if commitments.len() != params.len() {
            return Err(EnsembleError::LengthMismatch {
                commitments: commitments.len(),
                params: params.len(),
            });
        }
        let n = params.len();
        if n < 2 || n % 2 != 0 {
            return Err(EnsembleError::BadSize(n));
        }
        for p in &params {
            if !(p.capacity > 0.0 && p.capacity.is_finite()) {
                return Err(EnsembleError::BadCapacity(p.capacity));
            }
            if !p.xi.is_finite() {
                return Err(EnsembleError::BadGain(p.xi));
            }
        }
        Ok(EnsembleState {
            commitments,
            params,
        })
    }

    /// The standard split: agents `0..n/2` are G1 and start off, the rest
    /// are G2 and start on.
    pub fn half_split(
        n: usize,
        xi: f64,
        x01: f64,
        x02: f64,
        capacity: f64,
    ) -> Result<Self, EnsembleError> {
        let params = (0..n)
            .map(|i| {
                let (kind, x0) = if i < n / 2 {
                    (AgentKind::G1, x01)
                } else {
                    (AgentKind::G2, x02)
                };
                AgentParams {
                    kind,
                    xi,
                    x0,
                    capacity,
                }
            })
            .collect();
        let commitments = (0..n).map(|i| i >= n / 2).collect();
        Self::new(commitments, params)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn committed_count(&self) -> usize {
        self.commitments.iter().filter(|&&c| c).count()
    }
}

/// Aggregate output y = Σ yᵢ, MW.
pub fn ensemble_output(state: &EnsembleState) -> f64 {
    state
        .commitments
        .iter()
        .zip(&state.params)
        .filter(|(&on, _)| on)
        .map(|(_, p)| p.capacity)
        .sum()
}

/// How agents turn a signal into a commitment probability.
pub trait Response {
    fn probability(&self, params: &AgentParams, pi: f64) -> f64;
}

/// The logistic response of [`commitment_probability`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Logistic;

impl Response for Logistic {
    fn probability(&self, params: &AgentParams, pi: f64) -> f64 {
        commitment_probability(params, pi)
    }
}

/// Every agent commits with the same fixed probability, whatever the signal.
#[derive(Debug, Clone, Copy)]
pub struct Fixed(pub f64);

impl Response for Fixed {
    fn probability(&self, _: &AgentParams, _: f64) -> f64 {
        self.0
    }
}

/// Draw the next commitments in place. One uniform draw per agent, in index
/// order; agent `i` is on iff its draw is below its probability.
pub fn sample_commitments_in_place<R: Rng + ?Sized>(
    state: &mut EnsembleState,
    pi: f64,
    response: &impl Response,
    rng: &mut R,
) {
    for (c, p) in state.commitments.iter_mut().zip(&state.params) {
        let u: f64 = rng.random();
        *c = u < response.probability(p, pi);
    }
}

/// Next ensemble state under the logistic response.
pub fn sample_commitments<R: Rng + ?Sized>(
    state: &EnsembleState,
    pi: f64,
    rng: &mut R,
) -> EnsembleState {
    let mut next = state.clone();
    sample_commitments_in_place(&mut next, pi, &Logistic, rng);
    next
}
