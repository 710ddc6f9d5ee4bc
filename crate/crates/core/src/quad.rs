//! One-dimensional Gauss–Legendre quadrature used by the Dini tests, the slab
//! reductions of the trivial-cone energy, and the envelope integrals.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Integral of `f` over [a, b].
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite rule on `panels` equal panels.
pub fn composite<F: Fn(f64) -> f64>(rule: &GaussLegendre, f: F, a: f64, b: f64, panels: usize) -> f64 {
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|k| rule.integrate(&f, a + k as f64 * w, a + (k + 1) as f64 * w))
        .sum()
}

/// Integral over [a, b] for integrands with an integrable power singularity
/// at `a`: panels shrink geometrically (ratio 1/2) toward `a` until their
/// width drops below `(b - a) * 1e-14`.
pub fn graded_left<F: Fn(f64) -> f64>(rule: &GaussLegendre, f: F, a: f64, b: f64) -> f64 {
    let mut total = 0.0;
    let mut hi = b;
    let width = b - a;
    loop {
        let lo = a + 0.5 * (hi - a);
        total += rule.integrate(&f, lo, hi);
        hi = lo;
        if hi - a < width * 1e-14 {
            break;
        }
    }
    total + rule.integrate(&f, a, hi)
}

/// Graded toward both endpoints; `f` may have power singularities at either end.
pub fn graded_both<F: Fn(f64) -> f64>(rule: &GaussLegendre, f: F, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    graded_left(rule, &f, a, mid) + graded_left(rule, |t| f(a + b - t), a, mid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_polynomials() {
        let rule = GaussLegendre::new(6);
        // degree 11 is integrated exactly by 6 nodes
        let v = rule.integrate(|x| x.powi(10) + 3.0 * x.powi(3), -1.0, 1.0);
        assert!((v - 2.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn weights_sum_to_interval_length() {
        for n in [1, 2, 5, 16, 31] {
            let rule = GaussLegendre::new(n);
            let s: f64 = rule.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n = {n}: {s}");
        }
    }

    #[test]
    fn graded_handles_sqrt_singularity() {
        let rule = GaussLegendre::new(12);
        let v = graded_left(&rule, |t| t.powf(-0.5), 0.0, 1.0);
        assert!((v - 2.0).abs() < 1e-7, "{v}");
        let w = graded_both(&rule, |t| (1.0 - t * t).sqrt(), -1.0, 1.0);
        assert!((w - PI / 2.0).abs() < 1e-12, "{w}");
    }
}
