//! Gauss–Legendre rules and adaptive Gauss–Kronrod integration in one and
//! two dimensions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`, found by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Fixed-order Gauss–Legendre integral of `f` over `[a, b]`.
pub fn gauss_legendre_integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    rule.0.iter().zip(&rule.1).map(|(&x, &w)| w * f(c + h * x)).sum::<f64>() * h
}

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// The 15 Kronrod abscissae on `[-1, 1]` with their Kronrod weights and the
/// embedded Gauss weights (zero where the node is Kronrod-only).
fn kronrod_table() -> [(f64, f64, f64); 15] {
    let mut out = [(0.0, 0.0, 0.0); 15];
    for j in 0..7 {
        let wg = if j % 2 == 1 { WG[j / 2] } else { 0.0 };
        out[j] = (-XGK[j], WGK[j], wg);
        out[14 - j] = (XGK[j], WGK[j], wg);
    }
    out[7] = (0.0, WGK[7], WG[3]);
    out
}

/// Result of an adaptive integration.
#[derive(Clone, Copy, Debug)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub subdivisions: usize,
}

#[derive(Clone, Copy, Debug)]
struct Piece1 {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece1 {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Piece1 {}
impl PartialOrd for Piece1 {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece1 {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error)
    }
}

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    let (mut k, mut g) = (0.0, 0.0);
    for (x, wk, wg) in kronrod_table() {
        let fx = f(c + h * x);
        k += wk * fx;
        g += wg * fx;
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive 15-point Gauss–Kronrod integration of `f` on `[a, b]`.
///
/// Stops once the summed error estimate falls below
/// `max(abs_tol, rel_tol * |value|)`.
pub fn integrate(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_subdivisions: usize,
) -> Result<QuadResult> {
    let (value, error) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Piece1 { a, b, value, error });
    let (mut total, mut err_total) = (value, error);
    let mut evaluations = 15;
    let mut subdivisions = 0;
    while err_total > abs_tol.max(rel_tol * total.abs()) {
        if subdivisions >= max_subdivisions {
            return Err(Error::Convergence {
                func: "integrate",
                iterations: subdivisions,
                residual: err_total,
            });
        }
        let worst = heap.pop().expect("heap never empties");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval at machine resolution; accept what we have
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        evaluations += 30;
        subdivisions += 1;
        total += v1 + v2 - worst.value;
        err_total += e1 + e2 - worst.error;
        heap.push(Piece1 {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Piece1 {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    // re-sum to shed accumulated update roundoff
    let value = heap.iter().map(|p| p.value).sum();
    let error = heap.iter().map(|p| p.error).sum();
    Ok(QuadResult {
        value,
        error,
        evaluations,
        subdivisions,
    })
}

/// `integrate` over a union of consecutive panels `[p0,p1], [p1,p2], ...`,
/// useful when the integrand has a known feature location.
pub fn integrate_breakpoints(
    f: impl Fn(f64) -> f64,
    points: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_subdivisions: usize,
) -> Result<QuadResult> {
    let mut acc = QuadResult {
        value: 0.0,
        error: 0.0,
        evaluations: 0,
        subdivisions: 0,
    };
    let panels = (points.len().saturating_sub(1)).max(1) as f64;
    for w in points.windows(2) {
        let r = integrate(&f, w[0], w[1], abs_tol / panels, rel_tol, max_subdivisions)?;
        acc.value += r.value;
        acc.error += r.error;
        acc.evaluations += r.evaluations;
        acc.subdivisions += r.subdivisions;
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug)]
struct Piece2 {
    x: (f64, f64),
    y: (f64, f64),
    value: f64,
    error: f64,
    split_x: bool,
}

impl PartialEq for Piece2 {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Piece2 {}
impl PartialOrd for Piece2 {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece2 {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error)
    }
}

/// Tensor-product Gauss–Kronrod rule on a rectangle. The rectangle's error
/// is split into per-axis parts (Kronrod vs Gauss along one axis with
/// Kronrod on the other), and the rectangle is later bisected along the
/// axis contributing more.
///
/// The integrand is evaluated with `y` in the outer loop, so callers may
/// cache expensive work that depends on `y` alone.
fn gk15_2d(f: &mut impl FnMut(f64, f64) -> f64, x: (f64, f64), y: (f64, f64)) -> Piece2 {
    let table = kronrod_table();
    let (cx, hx) = (0.5 * (x.0 + x.1), 0.5 * (x.1 - x.0));
    let (cy, hy) = (0.5 * (y.0 + y.1), 0.5 * (y.1 - y.0));
    let (mut kk, mut gk_x, mut kg_y) = (0.0, 0.0, 0.0);
    for &(ty, wky, wgy) in &table {
        let yy = cy + hy * ty;
        let (mut row_k, mut row_g) = (0.0, 0.0);
        for &(tx, wkx, wgx) in &table {
            let v = f(cx + hx * tx, yy);
            row_k += wkx * v;
            row_g += wgx * v;
        }
        kk += wky * row_k;
        gk_x += wky * row_g;
        kg_y += wgy * row_k;
    }
    let area = hx * hy;
    let err_x = ((kk - gk_x) * area).abs();
    let err_y = ((kk - kg_y) * area).abs();
    Piece2 {
        x,
        y,
        value: kk * area,
        error: err_x + err_y,
        split_x: err_x >= err_y,
    }
}

/// Globally adaptive 2D integration over `[x0,x1] x [y0,y1]` by recursive
/// bisection of the rectangle with the largest error estimate.
pub fn integrate_2d(
    mut f: impl FnMut(f64, f64) -> f64,
    x: (f64, f64),
    y: (f64, f64),
    abs_tol: f64,
    rel_tol: f64,
    max_subdivisions: usize,
) -> Result<QuadResult> {
    let first = gk15_2d(&mut f, x, y);
    let (mut total, mut err_total) = (first.value, first.error);
    let mut heap = BinaryHeap::new();
    heap.push(first);
    let mut subdivisions = 0;
    while err_total > abs_tol.max(rel_tol * total.abs()) {
        if subdivisions >= max_subdivisions {
            return Err(Error::Convergence {
                func: "integrate_2d",
                iterations: subdivisions,
                residual: err_total,
            });
        }
        let p = heap.pop().expect("heap never empties");
        let (a, b) = if p.split_x {
            let m = 0.5 * (p.x.0 + p.x.1);
            (gk15_2d(&mut f, (p.x.0, m), p.y), gk15_2d(&mut f, (m, p.x.1), p.y))
        } else {
            let m = 0.5 * (p.y.0 + p.y.1);
            (gk15_2d(&mut f, p.x, (p.y.0, m)), gk15_2d(&mut f, p.x, (m, p.y.1)))
        };
        subdivisions += 1;
        total += a.value + b.value - p.value;
        err_total += a.error + b.error - p.error;
        heap.push(a);
        heap.push(b);
    }
    let value = heap.iter().map(|p| p.value).sum();
    let error = heap.iter().map(|p| p.error).sum();
    Ok(QuadResult {
        value,
        error,
        evaluations: (2 * subdivisions + 1) * 225,
        subdivisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials_exactly() {
        let rule = gauss_legendre(64);
        let s: f64 = rule.1.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        // degree 127 is the exactness limit; x^20 on [0,1] -> 1/21
        let v = gauss_legendre_integrate(|x| x.powi(20), 0.0, 1.0, &rule);
        assert!((v - 1.0 / 21.0).abs() < 1e-15);
        let small = gauss_legendre(5);
        let v = gauss_legendre_integrate(|x| x.powi(9) + x * x, -1.0, 1.0, &small);
        assert!((v - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn kronrod_weights_sum_to_two() {
        let t = kronrod_table();
        let k: f64 = t.iter().map(|r| r.1).sum();
        let g: f64 = t.iter().map(|r| r.2).sum();
        assert!((k - 2.0).abs() < 1e-14);
        assert!((g - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        // int_0^1 x^{-1/2} dx = 2
        let r = integrate(|x| x.powf(-0.5), 0.0, 1.0, 1e-12, 1e-12, 2000).unwrap();
        assert!((r.value - 2.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn adaptive_2d_gaussian_bump() {
        use std::f64::consts::PI;
        // int over [-9,9]^2 of exp(-(x^2+y^2)/2) = 2 pi (tails ~1e-18)
        let r = integrate_2d(
            |x, y| (-(x * x + y * y) / 2.0).exp(),
            (-9.0, 9.0),
            (-9.0, 9.0),
            1e-13,
            1e-13,
            5000,
        )
        .unwrap();
        assert!((r.value - 2.0 * PI).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn non_convergence_is_reported() {
        let r = integrate(|x| (1.0 / x).sin(), 1e-9, 1.0, 1e-15, 0.0, 5);
        assert!(matches!(r, Err(Error::Convergence { .. })));
    }
}
