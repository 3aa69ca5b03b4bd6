//! Flat-slice arithmetic shared by the solvers.
//!
//! Reductions split their input into fixed-size blocks, sum each block
//! sequentially and combine the partials in block order, so the result does not
//! depend on how many worker threads rayon happens to use.

use rayon::prelude::*;

const BLOCK: usize = 4096;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.len() <= BLOCK {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let partials: Vec<f64> = a
        .par_chunks(BLOCK)
        .zip(b.par_chunks(BLOCK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    partials.iter().sum()
}

pub fn sum(a: &[f64]) -> f64 {
    let partials: Vec<f64> = a.par_chunks(BLOCK).map(|c| c.iter().sum::<f64>()).collect();
    partials.iter().sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `‖a − b‖²`
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let partials: Vec<f64> = a
        .par_chunks(BLOCK)
        .zip(b.par_chunks(BLOCK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .collect();
    partials.iter().sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len());
    y.par_chunks_mut(BLOCK).zip(x.par_chunks(BLOCK)).for_each(|(cy, cx)| {
        for (yi, xi) in cy.iter_mut().zip(cx) {
            *yi += alpha * xi;
        }
    });
}

/// `y = x + beta * y`
pub fn xpby(x: &[f64], beta: f64, y: &mut [f64]) {
    assert_eq!(x.len(), y.len());
    y.par_chunks_mut(BLOCK).zip(x.par_chunks(BLOCK)).for_each(|(cy, cx)| {
        for (yi, xi) in cy.iter_mut().zip(cx) {
            *yi = xi + beta * *yi;
        }
    });
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    x.par_chunks_mut(BLOCK).for_each(|c| c.iter_mut().for_each(|v| *v *= alpha));
}
