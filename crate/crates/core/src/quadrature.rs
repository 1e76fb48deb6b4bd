//! One-dimensional quadrature for integrands with integrable power
//! singularities `|x - x0|^{-s}`, `0 <= s < 1`.

/// Integrate `f` over `[lo, hi]` when `f` may blow up like `|x - c|^{-s}` at
/// the points `singular`. Each piece between breakpoints is split at its
/// midpoint; a half that ends at a singular point is mapped by
/// `x = c ± h w^p`, `p = 1/(1-s)`, which turns the singular factor into a
/// bounded one. Each half is then integrated with `n` midpoint nodes.
pub fn singular_integral<F>(f: F, lo: f64, hi: f64, singular: &[f64], s: f64, n: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    assert!((0.0..1.0).contains(&s), "exponent must lie in [0,1)");
    let mut breaks: Vec<f64> = singular
        .iter()
        .copied()
        .filter(|c| *c > lo && *c < hi)
        .collect();
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let power = 1.0 / (1.0 - s);
    let is_singular = |x: f64| singular.iter().any(|c| (c - x).abs() <= 1e-15 * (1.0 + x.abs()));
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let h = mid - a;
        if h <= 0.0 {
            continue;
        }
        // from a upward and from b downward
        for (anchor, dir) in [(a, 1.0), (b, -1.0)] {
            let p = if is_singular(anchor) { power } else { 1.0 };
            let mut acc = 0.0;
            for k in 0..n {
                let u = (k as f64 + 0.5) / n as f64;
                let x = anchor + dir * h * u.powf(p);
                let jac = h * p * u.powf(p - 1.0);
                acc += f(x) * jac;
            }
            total += acc / n as f64;
        }
    }
    total
}
