//! Named maps for the checkers and the `check` subcommand.

use std::sync::Arc;

use super::certify::ContractionFamily;
use super::{FilippovError, PiecewiseMap, VectorFn};
use crate::agents::{commitment_probability, AgentKind, AgentParams};

pub const PIECEWISE_PRESETS: &[&str] = &["identity", "deadband", "split-affine", "shift", "collapse"];
pub const CONTRACTION_PRESETS: &[&str] = &["affine-pair", "expanding-pair", "agent-family"];

fn scalar(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> VectorFn {
    Arc::new(move |x: &[f64]| vec![f(x[0])])
}

/// Scalar piecewise maps. `param` is δ for `deadband`, the shift c for
/// `shift`, and the target point for `collapse`; the others ignore it.
///
/// - `identity`: x on both sides of h = x.
/// - `deadband`: 0 where |x| < δ, x where |x| > δ; h = |x| − δ.
/// - `split-affine`: x/2 for x < 0, x/2 + 1 for x > 0.
/// - `shift`: x + c mod 1 on [0, 1), switching at x = 1 − c.
/// - `collapse`: constant map onto `param`, with h = x − 1/2.
pub fn piecewise_preset(name: &str, param: f64) -> Result<PiecewiseMap, FilippovError> {
    let m = match name {
        "identity" => PiecewiseMap::new(
            name,
            1,
            scalar(|x| x),
            scalar(|x| x),
            Arc::new(|x: &[f64]| x[0]),
            scalar(|_| 1.0),
        ),
        "deadband" => {
            if !(param > 0.0) {
                return Err(FilippovError::InvalidArgument(format!("deadband needs δ > 0, got {param}")));
            }
            PiecewiseMap::new(
                name,
                1,
                scalar(|_| 0.0),
                scalar(|x| x),
                Arc::new(move |x: &[f64]| x[0].abs() - param),
                scalar(|x| x.signum()),
            )
        }
        "split-affine" => PiecewiseMap::new(
            name,
            1,
            scalar(|x| x / 2.0),
            scalar(|x| x / 2.0 + 1.0),
            Arc::new(|x: &[f64]| x[0]),
            scalar(|_| 1.0),
        ),
        "shift" => {
            if !(0.0..1.0).contains(&param) {
                return Err(FilippovError::InvalidArgument(format!("shift needs 0 ≤ c < 1, got {param}")));
            }
            PiecewiseMap::new(
                name,
                1,
                scalar(move |x| x + param),
                scalar(move |x| x + param - 1.0),
                Arc::new(move |x: &[f64]| x[0] - (1.0 - param)),
                scalar(|_| 1.0),
            )
        }
        "collapse" => PiecewiseMap::new(
            name,
            1,
            scalar(move |_| param),
            scalar(move |_| param),
            Arc::new(|x: &[f64]| x[0] - 0.5),
            scalar(|_| 1.0),
        ),
        _ => return Err(FilippovError::UnknownPreset(name.to_string())),
    };
    Ok(m)
}

/// Random map families for the average-contraction check.
///
/// - `affine-pair`: x/2 and x/2 + 1 with probabilities ½, ½.
/// - `expanding-pair`: 2x and x/4 with probabilities ½, ½.
/// - `agent-family`: one G1 and one G2 agent with unit gain and zero offset.
pub fn contraction_preset(name: &str) -> Result<ContractionFamily, FilippovError> {
    match name {
        "affine-pair" => Ok(ContractionFamily {
            name: name.into(),
            dim: 1,
            maps: vec![scalar(|x| x / 2.0), scalar(|x| x / 2.0 + 1.0)],
            probs: Arc::new(|_| vec![0.5, 0.5]),
        }),
        "expanding-pair" => Ok(ContractionFamily {
            name: name.into(),
            dim: 1,
            maps: vec![scalar(|x| 2.0 * x), scalar(|x| x / 4.0)],
            probs: Arc::new(|_| vec![0.5, 0.5]),
        }),
        "agent-family" => Ok(agent_family(1.0, 0.0, 0.0)),
        _ => Err(FilippovError::UnknownPreset(name.to_string())),
    }
}

/// Transition maps of a (G1, G2) agent pair on the commitment space {0,1}².
///
/// The next commitment does not depend on the current one, so each map sends
/// every state to one fixed outcome, chosen with the product of the agents'
/// commitment probabilities.
pub fn agent_family(xi: f64, x01: f64, x02: f64) -> ContractionFamily {
    let outcomes = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];
    let maps = outcomes
        .iter()
        .map(|&(a, b)| -> VectorFn { Arc::new(move |_: &[f64]| vec![a, b]) })
        .collect();
    let g1 = AgentParams {
        kind: AgentKind::G1,
        xi,
        x0: x01,
        capacity: 1.0,
    };
    let g2 = AgentParams {
        kind: AgentKind::G2,
        x0: x02,
        ..g1
    };
    ContractionFamily {
        name: "agent-family".into(),
        dim: 2,
        maps,
        probs: Arc::new(move |pi| {
            let (p1, p2) = (commitment_probability(&g1, pi), commitment_probability(&g2, pi));
            outcomes
                .iter()
                .map(|&(a, b)| {
                    let q1 = if a == 1.0 { p1 } else { 1.0 - p1 };
                    let q2 = if b == 1.0 { p2 } else { 1.0 - p2 };
                    q1 * q2
                })
                .collect()
        }),
    }
}
