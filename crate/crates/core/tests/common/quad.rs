// Independent numerical oracles shared by unit and integration tests.

/// Adaptive Simpson quadrature of `f` over `[a, b]` to relative tolerance `rel`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel: f64) -> f64 {
    const PANELS: usize = 64;
    let h = (b - a) / PANELS as f64;
    let panels: Vec<(f64, f64, f64, f64, f64, f64)> = (0..PANELS)
        .map(|i| {
            let (lo, hi) = (a + h * i as f64, if i + 1 == PANELS { b } else { a + h * (i + 1) as f64 });
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            (lo, hi, fa, fm, fb, (hi - lo) / 6.0 * (fa + 4.0 * fm + fb))
        })
        .collect();
    let scale: f64 = panels.iter().map(|p| p.5.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    // tolerance per unit length, so refinement stops above rounding noise
    let density = rel * scale / (b - a);
    panels.iter().map(|&(lo, hi, fa, fm, fb, whole)| simpson(f, lo, hi, fa, fm, fb, whole, density, 40)).sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    density: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * density * (b - a) {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, density, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, density, depth - 1)
}

/// `E[W | W < d]` for exponential `W` with rate `lambda`, by quadrature of
/// the defining integrals.
pub fn fresh_duration_by_quadrature(d: f64, lambda: f64) -> f64 {
    let num = integrate(&|x: f64| lambda * x * (-lambda * x).exp(), 0.0, d, 1e-13);
    let den = integrate(&|x: f64| lambda * (-lambda * x).exp(), 0.0, d, 1e-13);
    num / den
}
