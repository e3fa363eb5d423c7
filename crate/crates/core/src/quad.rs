//! Composite Gauss-Legendre quadrature on finite intervals.
//!
//! The transition kernels this crate integrates can be extremely narrow
//! (standard deviation down to 1e-4 on a unit interval), so a single
//! fixed-order rule is not enough. Integrals are therefore evaluated as a
//! composite rule: the interval is split into panels and a fixed-order
//! Gauss-Legendre rule is applied per panel.

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
///
/// Computed by Newton iteration on the Legendre polynomial, accurate to
/// machine precision for the orders used here (n <= 64).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x) by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Integrate `f` over `[a, b]` with `panels` equal panels of an
/// `order`-point Gauss-Legendre rule each.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        let half = 0.5 * h;
        let mut panel = 0.0;
        for (x, w) in nodes.iter().zip(weights.iter()) {
            panel += w * f(mid + half * x);
        }
        total += panel * half;
    }
    total
}

/// Integrate over [0, 1] with panel count adapted to a feature width.
///
/// `width` is the smallest length scale of the integrand (for transition
/// kernels, the standard deviation sqrt(v)). Panels are sized to at most
/// two feature widths so the 16-point rule per panel resolves the peak.
pub fn integrate_unit_adaptive<F: FnMut(f64) -> f64>(f: F, width: f64) -> f64 {
    let panels = ((0.5 / width.max(1e-6)).ceil() as usize).clamp(8, 4096);
    integrate(f, 0.0, 1.0, panels, 16)
}
