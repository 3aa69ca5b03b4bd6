//! Elementwise proximal steps and penalty adaptation.

use rayon::prelude::*;

const CHUNK: usize = 4096;

/// Soft threshold `sign(v)·max(|v| − κ, 0)`.
#[inline]
pub fn shrinkage(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

/// `y = shrinkage(dx − u_y, κ)`.
pub fn update_y(dx: &[f64], u_y: &[f64], kappa: f64, y: &mut [f64]) {
    assert!(dx.len() == u_y.len() && dx.len() == y.len());
    y.par_chunks_mut(CHUNK).enumerate().for_each(|(b, out)| {
        let o = b * CHUNK;
        for (i, yi) in out.iter_mut().enumerate() {
            *yi = shrinkage(dx[o + i] - u_y[o + i], kappa);
        }
    });
}

/// `z = max(0, x − u_z)`.
pub fn update_z(x: &[f64], u_z: &[f64], z: &mut [f64]) {
    assert!(x.len() == u_z.len() && x.len() == z.len());
    z.par_chunks_mut(CHUNK).enumerate().for_each(|(b, out)| {
        let o = b * CHUNK;
        for (i, zi) in out.iter_mut().enumerate() {
            *zi = (x[o + i] - u_z[o + i]).max(0.0);
        }
    });
}

/// `u += v − cx`, one block of the scaled dual ascent.
pub fn update_dual(u: &mut [f64], v: &[f64], cx: &[f64]) {
    assert!(u.len() == v.len() && u.len() == cx.len());
    u.par_chunks_mut(CHUNK).enumerate().for_each(|(b, out)| {
        let o = b * CHUNK;
        for (i, ui) in out.iter_mut().enumerate() {
            *ui += v[o + i] - cx[o + i];
        }
    });
}

/// Residual-balancing penalty rule.
pub fn update_rho(rho: f64, r_norm: f64, s_norm: f64, tau: f64, mu: f64) -> f64 {
    if r_norm > mu * s_norm {
        tau * rho
    } else if s_norm > mu * r_norm {
        rho / tau
    } else {
        rho
    }
}
