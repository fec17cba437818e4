//! Gauss–Legendre rules and adaptive Gauss–Kronrod integration.

use std::collections::BinaryHeap;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
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

/// Gauss–Legendre rule mapped to [a, b]; weights sum to b − a.
pub fn gauss_legendre_interval(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|xi| mid + half * xi).collect(),
        w.iter().map(|wi| half * wi).collect(),
    )
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive G7/K15 integration of `f` over [a, b].
///
/// Bisects the interval with the largest error estimate until the total
/// error falls below `max(abs_tol, rel_tol·|value|)` or `max_intervals`
/// is reached.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> QuadResult {
    if a == b {
        return QuadResult {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        };
    }
    let (v, e) = kronrod15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment {
        a,
        b,
        value: v,
        error: e,
    });
    let mut total = v;
    let mut err = e;
    while heap.len() < max_intervals && err > abs_tol.max(rel_tol * total.abs()) {
        let worst = heap.pop().expect("heap is never empty");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            heap.push(worst);
            break;
        }
        let (v1, e1) = kronrod15(&f, worst.a, m);
        let (v2, e2) = kronrod15(&f, m, worst.b);
        total += v1 + v2 - worst.value;
        err += e1 + e2 - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: m,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: m,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to shed the drift of the running totals.
    let value = heap.iter().map(|s| s.value).sum();
    let error = heap.iter().map(|s| s.error).sum();
    QuadResult {
        value,
        error,
        intervals: heap.len(),
    }
}

/// ∫₀^L g(r) dr for integrands behaving like r^{p−1} near the origin.
///
/// Substitutes r = L·w^{1/p}, which turns the endpoint singularity into a
/// bounded integrand before handing off to [`integrate`].
pub fn integrate_origin_singular<F: Fn(f64) -> f64>(
    g: F,
    length: f64,
    p: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> QuadResult {
    let scale = length / p;
    let inner = |w: f64| {
        if w <= 0.0 {
            return 0.0;
        }
        let r = length * w.powf(1.0 / p);
        g(r) * w.powf(1.0 / p - 1.0)
    };
    let res = integrate(inner, 0.0, 1.0, abs_tol / scale, rel_tol, 2000);
    QuadResult {
        value: res.value * scale,
        error: res.error * scale,
        intervals: res.intervals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        // x^14 is exact for 8 nodes
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn legendre_interval_weights_sum_to_length() {
        let (x, w) = gauss_legendre_interval(32, 0.5, 0.75);
        assert!((w.iter().sum::<f64>() - 0.25).abs() < 1e-15);
        assert!(x.iter().all(|&xi| xi > 0.5 && xi < 0.75));
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn odd_rule_has_zero_node() {
        let (x, _) = gauss_legendre(5);
        assert!(x[2].abs() < 1e-16);
    }

    #[test]
    fn adaptive_handles_smooth_and_singular() {
        let r = integrate(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-14, 1e-14, 100);
        assert!((r.value - 2.0).abs() < 1e-13);
        let h = 0.1;
        let r = integrate_origin_singular(|x: f64| x.powf(2.0 * h - 1.0), 1.0, 2.0 * h, 1e-14, 1e-14);
        assert!((r.value - 1.0 / (2.0 * h)).abs() < 1e-12);
    }

    #[test]
    fn zero_width_interval() {
        assert_eq!(integrate(|x| x, 1.0, 1.0, 1e-12, 1e-12, 10).value, 0.0);
    }
}
