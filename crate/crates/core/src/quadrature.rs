//! Lattice quadrature rules shared by every age integral.
//!
//! Age integrals use the endpoint-corrected trapezoid rule (Gregory's rule
//! with three correction weights at each end). Interior weights equal the
//! lattice step, so shifting a cohort by one cell never changes its weight
//! away from the ends, and the rule is fourth-order accurate for smooth
//! integrands.

/// Relative corrections applied to the first three and last three nodes.
const GREGORY_END: [f64; 3] = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];

/// Smallest number of intervals for which the corrected rule is used.
pub const GREGORY_MIN_INTERVALS: usize = 5;

/// Quadrature weights for `intervals + 1` equispaced nodes with spacing `h`.
///
/// Falls back to the plain trapezoid rule when the lattice is too short for
/// the end corrections.
pub fn lattice_weights(intervals: usize, h: f64) -> Vec<f64> {
    let n = intervals + 1;
    if intervals == 0 {
        return vec![0.0];
    }
    let mut w = vec![h; n];
    if intervals < GREGORY_MIN_INTERVALS {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
        return w;
    }
    for (k, c) in GREGORY_END.iter().enumerate() {
        w[k] = c * h;
        w[n - 1 - k] = c * h;
    }
    w
}

/// Integral of `values` (sampled at consecutive lattice nodes) over the
/// covered range.
pub fn lattice_integral(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let w = lattice_weights(values.len() - 1, h);
    values.iter().zip(&w).map(|(v, w)| v * w).sum()
}

/// Tail integrals `T_j = ∫_{a_j}^{a_n} g(a) S(a) da / S(a_j)` on a lattice,
/// where `S` is a positive decreasing factor known only through the ratios
/// `step_ratio[j] = S(a_{j+1}) / S(a_j)`.
///
/// Working with ratios keeps the result finite where `S` underflows. The
/// same corrected rule as [`lattice_weights`] is applied to each tail.
pub fn scaled_tail_integrals(g: &[f64], step_ratio: &[f64], h: f64) -> Vec<f64> {
    let n = g.len();
    assert_eq!(step_ratio.len() + 1, n.max(1), "one ratio per lattice step");
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    let last = n - 1;
    // Plain sums U_j = Σ_{m≥j} g_m S_m / S_j with the far-end corrections
    // already folded in.
    let far: Vec<f64> = {
        let w = if last >= GREGORY_MIN_INTERVALS {
            lattice_weights(last, 1.0)
        } else {
            vec![1.0; n]
        };
        (0..n)
            .map(|m| {
                let from_end = last - m;
                if last >= GREGORY_MIN_INTERVALS && from_end < 3 {
                    w[m]
                } else {
                    1.0
                }
            })
            .collect()
    };
    let mut suffix = vec![0.0; n];
    suffix[last] = g[last] * far[last];
    for j in (0..last).rev() {
        suffix[j] = g[j] * far[j] + step_ratio[j] * suffix[j + 1];
    }
    for j in 0..last {
        let intervals = last - j;
        if intervals >= GREGORY_MIN_INTERVALS && j + 3 <= last - 3 {
            // Replace the unit weight of the first three nodes by the
            // start corrections.
            let mut scale = 1.0;
            let mut corr = 0.0;
            for (k, c) in GREGORY_END.iter().enumerate() {
                corr += (c - 1.0) * g[j + k] * scale;
                scale *= step_ratio[j + k];
            }
            out[j] = h * (suffix[j] + corr);
        } else {
            // Short tail: plain trapezoid on the scaled integrand.
            let mut scale = 1.0;
            let mut acc = 0.0;
            for m in j..last {
                let next = scale * step_ratio[m];
                acc += 0.5 * h * (g[m] * scale + g[m + 1] * next);
                scale = next;
            }
            out[j] = acc;
        }
    }
    out
}

/// Composite Simpson rule with `intervals` (rounded up to even) subintervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, intervals: usize) -> f64 {
    let n = (intervals.max(2) + 1) & !1;
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..n {
        let x = lo + k as f64 * h;
        acc += if k % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    acc * h / 3.0
}
