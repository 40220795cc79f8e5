//! Brute-force reference computations that do not share code paths with
//! the library.

/// Quantile function of an empirical sample: F⁻¹(q) = smallest x with F(x) ≥ q.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// ∫₀¹ |F_A⁻¹(q) − F_B⁻¹(q)|² dq by midpoint rule on a grid fine enough that
/// every quantile breakpoint is a grid node (so the rule is exact).
pub fn quantile_integral_w2(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let cells = a.len() / gcd(a.len(), b.len()) * b.len();
    let h = 1.0 / cells as f64;
    (0..cells)
        .map(|i| {
            let q = (i as f64 + 0.5) * h;
            let d = quantile(&a, q) - quantile(&b, q);
            d * d * h
        })
        .sum()
}
