//! Classical fixed-step fourth-order Runge-Kutta.

use crate::error::Result;

/// One RK4 step of the autonomous system `x' = f(x)`.
pub fn rk4_step<const N: usize, F>(mut f: F, x: &[f64; N], dt: f64) -> Result<[f64; N]>
where
    F: FnMut(&[f64; N]) -> Result<[f64; N]>,
{
    let axpy = |a: &[f64; N], s: f64, b: &[f64; N]| -> [f64; N] {
        let mut out = *a;
        for (o, bi) in out.iter_mut().zip(b) {
            *o += s * bi;
        }
        out
    };
    let k1 = f(x)?;
    let k2 = f(&axpy(x, 0.5 * dt, &k1))?;
    let k3 = f(&axpy(x, 0.5 * dt, &k2))?;
    let k4 = f(&axpy(x, dt, &k3))?;
    let mut out = *x;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}
