//! Oracles shared by integration tests.

use std::f64::consts::FRAC_PI_2;

/// Welch statistic by direct sums, and its two-sided p-value by integrating
/// the Student-t density under `x = √ν·tan θ`, where it becomes
/// `cos^{ν−1} θ` on `(−π/2, π/2)`.
pub fn brute_welch(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let moments = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = moments(a);
    let (nb, mb, vb) = moments(b);
    let (sa, sb) = (va / na, vb / nb);
    let t = (ma - mb) / (sa + sb).sqrt();
    let nu = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let f = |th: f64| th.cos().powf(nu - 1.0);
    let simpson = |lo: f64, hi: f64| {
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let theta = (t.abs() / nu.sqrt()).atan();
    let p = 2.0 * simpson(theta, FRAC_PI_2) / simpson(-FRAC_PI_2, FRAC_PI_2);
    (t, p, nu)
}
