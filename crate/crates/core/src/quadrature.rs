//! Gauss-Legendre and adaptive Simpson quadrature.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
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

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// 16-point Gauss-Legendre on [a, b].
pub fn integrate_gl16<F>(mut f: F, a: f64, b: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (nodes, weights) = gl16();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * f(mid + half * x)?;
    }
    Ok(acc * half)
}

const MAX_DEPTH: u32 = 50;

/// Adaptive Simpson with absolute tolerance `tol`.
pub fn adaptive_simpson<F>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut evals = 0usize;
    simpson_rec(&mut f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut evals)
        .map_err(|_| Error::QuadratureFailure { a, b, tol })
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    evals: &mut usize,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    *evals += 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 || !delta.is_finite() || *evals > 2_000_000 {
        return Err(Error::QuadratureFailure { a, b, tol });
    }
    let l = simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, evals)?;
    let r = simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, evals)?;
    Ok(l + r)
}
