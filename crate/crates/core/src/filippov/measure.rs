//! Sampled check that every Filippov solution preserves a measure.
//!
//! For random sub-boxes A the image 𝒮_F(A)(k) is rasterised on a grid by
//! pushing a dense stratified sample of A forward, branching wherever a point
//! lands on the switching surface. The marked cells bound the image from
//! above; dropping the cells on the edge of the marked region bounds it from
//! below. Both bounds and μ(A) are estimated from one sample of the measure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{convexify, FilippovError, PiecewiseMap, ScalarFn, SetValue};

/// Probability measure on a box, with density relative to the uniform one.
#[derive(Clone)]
pub struct MeasureSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// (α⁻, α⁺, h): density α⁻ where h < 0 and α⁺ elsewhere. `None` is uniform.
    pub scaled: Option<(f64, f64, ScalarFn)>,
}

impl std::fmt::Debug for MeasureSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MeasureSpec")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("scaled", &self.scaled.as_ref().map(|(a, b, _)| (*a, *b)))
            .finish()
    }
}

impl MeasureSpec {
    pub fn uniform(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        MeasureSpec { lo, hi, scaled: None }
    }

    pub fn piecewise_scaled(lo: Vec<f64>, hi: Vec<f64>, alpha_minus: f64, alpha_plus: f64, event: ScalarFn) -> Self {
        MeasureSpec {
            lo,
            hi,
            scaled: Some((alpha_minus, alpha_plus, event)),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Density with respect to the uniform probability on the box.
    pub fn density(&self, x: &[f64]) -> f64 {
        match &self.scaled {
            None => 1.0,
            Some((am, ap, h)) => {
                if h(x) < 0.0 {
                    *am
                } else {
                    *ap
                }
            }
        }
    }

    /// Midpoint-rule integral of the density over the box.
    pub fn quadrature(&self) -> f64 {
        let n = self.dim();
        let per_dim = (4.0e6f64).powf(1.0 / n as f64).floor().max(1.0) as usize;
        let total = per_dim.pow(n as u32);
        let mut x = vec![0.0; n];
        let mut sum = 0.0;
        for idx in 0..total {
            let mut r = idx;
            for d in 0..n {
                let i = r % per_dim;
                r /= per_dim;
                x[d] = self.lo[d] + (i as f64 + 0.5) / per_dim as f64 * (self.hi[d] - self.lo[d]);
            }
            sum += self.density(&x);
        }
        sum / total as f64
    }

    pub fn validate(&self) -> Result<(), FilippovError> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() || self.lo.iter().zip(&self.hi).any(|(l, h)| !(l < h))
        {
            return Err(FilippovError::InvalidArgument("measure box is empty".into()));
        }
        if let Some((am, ap, _)) = &self.scaled {
            if *am < 0.0 || *ap < 0.0 {
                return Err(FilippovError::InvalidArgument("negative density".into()));
            }
        }
        let q = self.quadrature();
        if (q - 1.0).abs() > 1e-6 {
            return Err(FilippovError::BadDensity(q));
        }
        Ok(())
    }

    fn max_density(&self) -> f64 {
        match &self.scaled {
            None => 1.0,
            Some((am, ap, _)) => am.max(*ap),
        }
    }

    /// Rejection sampling from the uniform proposal on the box.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let top = self.max_density();
        loop {
            let x: Vec<f64> = self
                .lo
                .iter()
                .zip(&self.hi)
                .map(|(l, h)| l + rng.random::<f64>() * (h - l))
                .collect();
            if self.scaled.is_none() || rng.random::<f64>() * top < self.density(&x) {
                return x;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureCheck {
    pub n_sets: usize,
    pub n_samples: usize,
    pub k: usize,
    pub cells_per_dim: usize,
    pub seed: u64,
}

impl Default for MeasureCheck {
    fn default() -> Self {
        MeasureCheck {
            n_sets: 20,
            n_samples: 100_000,
            k: 1,
            cells_per_dim: 1000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetCheck {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub mu_set: f64,
    pub mu_image_lower: f64,
    pub mu_image_upper: f64,
    /// 3σ half-width of the μ(A) estimate.
    pub band: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureReport {
    pub sets: Vec<SetCheck>,
    pub pass: bool,
}

struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: usize,
    dim: usize,
}

impl Grid {
    fn cell_width(&self, d: usize) -> f64 {
        (self.hi[d] - self.lo[d]) / self.n as f64
    }

    fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for d in (0..self.dim).rev() {
            let t = (x[d] - self.lo[d]) / (self.hi[d] - self.lo[d]);
            if !(0.0..1.0).contains(&t) {
                return None;
            }
            idx = idx * self.n + ((t * self.n as f64) as usize).min(self.n - 1);
        }
        Some(idx)
    }

    /// Marked cells with every in-grid neighbour marked.
    fn interior(&self, marked: &[bool]) -> Vec<bool> {
        let mut out = vec![false; marked.len()];
        for (idx, &m) in marked.iter().enumerate() {
            if !m {
                continue;
            }
            let mut all = true;
            let mut stride = 1;
            for _ in 0..self.dim {
                let coord = (idx / stride) % self.n;
                if coord > 0 && !marked[idx - stride] {
                    all = false;
                }
                if coord + 1 < self.n && !marked[idx + stride] {
                    all = false;
                }
                stride *= self.n;
            }
            out[idx] = all;
        }
        out
    }
}

const ORBIT_NODE_CAP: usize = 20_000_000;

fn push_forward(
    map: &PiecewiseMap,
    start: Vec<f64>,
    k: usize,
    grid: &Grid,
    marked: &mut [bool],
    nodes: &mut usize,
) -> Result<(), FilippovError> {
    let spacing = (0..grid.dim).map(|d| grid.cell_width(d)).fold(f64::INFINITY, f64::min) / 2.0;
    let mut stack = vec![(start, 0usize)];
    while let Some((x, step)) = stack.pop() {
        if step == k {
            if let Some(c) = grid.cell_of(&x) {
                marked[c] = true;
            }
            continue;
        }
        let children = match convexify(map, &x) {
            SetValue::Point(p) => vec![p],
            seg @ SetValue::Segment(..) => {
                let len = match &seg {
                    SetValue::Segment(a, b) => super::dist(a, b),
                    SetValue::Point(_) => 0.0,
                };
                seg.representatives((len / spacing).ceil() as usize + 2)
            }
        };
        *nodes += children.len();
        if *nodes > ORBIT_NODE_CAP {
            return Err(FilippovError::TreeTooLarge { cap: ORBIT_NODE_CAP });
        }
        stack.extend(children.into_iter().map(|c| (c, step + 1)));
    }
    Ok(())
}

/// Sampled measure-preservation check over `cfg.n_sets` random sub-boxes.
///
/// A set passes when μ(A) ± 3σ overlaps the interval spanned by the lower
/// and upper image estimates, each widened by its own 3σ.
pub fn check_measure_preservation(
    map: &PiecewiseMap,
    measure: &MeasureSpec,
    cfg: &MeasureCheck,
) -> Result<MeasureReport, FilippovError> {
    measure.validate()?;
    let dim = measure.dim();
    if dim != map.dim {
        return Err(FilippovError::InvalidArgument("map and measure dimensions differ".into()));
    }
    if cfg.n_sets == 0 || cfg.n_samples == 0 || cfg.k == 0 || cfg.cells_per_dim < 4 {
        return Err(FilippovError::InvalidArgument("empty measure check".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<Vec<f64>> = (0..cfg.n_samples).map(|_| measure.sample(&mut rng)).collect();
    let grid = Grid {
        lo: measure.lo.clone(),
        hi: measure.hi.clone(),
        n: cfg.cells_per_dim,
        dim,
    };
    let sample_cells: Vec<Option<usize>> = samples.iter().map(|x| grid.cell_of(x)).collect();
    let n = cfg.n_samples as f64;
    let sigma3 = |p: f64| 3.0 * (p * (1.0 - p) / n).sqrt();

    let mut sets = Vec::with_capacity(cfg.n_sets);
    for _ in 0..cfg.n_sets {
        let (mut lo, mut hi) = (Vec::with_capacity(dim), Vec::with_capacity(dim));
        for d in 0..dim {
            let span = measure.hi[d] - measure.lo[d];
            let w = span * (0.1 + 0.4 * rng.random::<f64>());
            let a = measure.lo[d] + rng.random::<f64>() * (span - w);
            lo.push(a);
            hi.push(a + w);
        }
        let in_set = samples
            .iter()
            .filter(|x| x.iter().enumerate().all(|(d, v)| *v >= lo[d] && *v < hi[d]))
            .count();
        let mu_set = in_set as f64 / n;

        // stratified points of A, four per cell width in each direction
        let counts: Vec<usize> = (0..dim)
            .map(|d| (((hi[d] - lo[d]) / grid.cell_width(d)) * 4.0).ceil() as usize)
            .collect();
        let total: usize = counts.iter().product();
        let mut marked = vec![false; grid.n.pow(dim as u32)];
        let mut nodes = 0;
        for idx in 0..total {
            let mut r = idx;
            let x: Vec<f64> = (0..dim)
                .map(|d| {
                    let i = r % counts[d];
                    r /= counts[d];
                    lo[d] + (i as f64 + 0.5) / counts[d] as f64 * (hi[d] - lo[d])
                })
                .collect();
            push_forward(map, x, cfg.k, &grid, &mut marked, &mut nodes)?;
        }
        let interior = grid.interior(&marked);
        let frac = |mask: &[bool]| sample_cells.iter().filter(|c| c.is_some_and(|c| mask[c])).count() as f64 / n;
        let (upper, lower) = (frac(&marked), frac(&interior));
        let band = sigma3(mu_set);
        let pass = mu_set - band <= upper + sigma3(upper) && mu_set + band >= lower - sigma3(lower);
        sets.push(SetCheck {
            lo,
            hi,
            mu_set,
            mu_image_lower: lower,
            mu_image_upper: upper,
            band,
            pass,
        });
    }
    if sets.iter().all(|s| s.mu_set == 0.0) {
        return Err(FilippovError::DegenerateSampler);
    }
    let pass = sets.iter().all(|s| s.pass);
    Ok(MeasureReport { sets, pass })
}
