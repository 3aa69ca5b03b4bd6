//! Joint splitting baseline: each basis is updated by Levenberg–Marquardt on the
//! full nonlinear data term plus the augmented-Lagrangian penalty, with the
//! Gauss–Newton systems solved by a few CG iterations.

use rayon::prelude::*;

use super::state::BasisState;
use crate::error::Result;
use crate::linsolve::{cg_core, diff_forward, diff_normal, NormalOp};
use crate::physics::{ModelPair, RayIntegralPair};
use crate::projector::{Projector, SinogramPair};
use crate::vecops::{dist_sq, sum};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    Compton,
    Pe,
}

/// Data residuals and derivatives of all rays with respect to one basis.
struct RayData {
    cost: f64,
    grad: Vec<f64>,
    curv: Vec<f64>,
}

fn ray_data(
    models: &ModelPair,
    measured: &SinogramPair,
    weights: &SinogramPair,
    own: &[f64],
    other: &[f64],
    basis: Basis,
    proj: &Projector,
) -> Option<RayData> {
    let (mh, ml) = (measured.high.as_slice(), measured.low.as_slice());
    let (wh, wl) = (weights.high.as_slice(), weights.low.as_slice());
    let per_ray: Vec<Option<(f64, f64, f64)>> = (0..own.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let a = match basis {
                Basis::Compton => RayIntegralPair::new(own[i], other[i]),
                Basis::Pe => RayIntegralPair::new(other[i], own[i]),
            };
            let h = models.high.evaluate(a).ok()?;
            let l = models.low.evaluate(a).ok()?;
            let (dh, dl) = match basis {
                Basis::Compton => (h.d_compton, l.d_compton),
                Basis::Pe => (h.d_pe, l.d_pe),
            };
            let (eh, el) = (h.value - mh[i], l.value - ml[i]);
            let cost = 0.5 * (wh[i] * eh * eh + wl[i] * el * el);
            Some((cost, wh[i] * eh * dh + wl[i] * el * dl, wh[i] * dh * dh + wl[i] * dl * dl))
        })
        .collect();
    proj.counters().add_fwd_model(4);
    let mut costs = Vec::with_capacity(own.len());
    let mut grad = Vec::with_capacity(own.len());
    let mut curv = Vec::with_capacity(own.len());
    for v in per_ray {
        let (c, g, h) = v?;
        costs.push(c);
        grad.push(g);
        curv.push(h);
    }
    Some(RayData { cost: sum(&costs), grad, curv })
}

/// `ρ/2·(‖D x − y − u_y‖² + ‖x − z − u_z‖²)`.
fn penalty_cost(st: &BasisState, x: &[f64]) -> f64 {
    let n = x.len();
    let mut dx = vec![0.0; 2 * n];
    diff_forward(x, st.side, &mut dx);
    let ty: Vec<f64> = st.y.iter().zip(&st.u_y).map(|(a, b)| a + b).collect();
    let tz: Vec<f64> = st.z.iter().zip(&st.u_z).map(|(a, b)| a + b).collect();
    0.5 * st.rho * (dist_sq(&dx, &ty) + dist_sq(x, &tz))
}

/// `RᵀWR + ρ(DᵀD + I) + damping·I`.
struct GaussNewton<'a> {
    proj: &'a Projector,
    side: usize,
    curv: &'a [f64],
    rho: f64,
    damping: f64,
    rp: Vec<f64>,
    tmp: Vec<f64>,
}

impl NormalOp for GaussNewton<'_> {
    fn len(&self) -> usize {
        self.side * self.side
    }

    fn apply(&mut self, p: &[f64], q: &mut [f64]) {
        self.proj.forward_raw(p, &mut self.rp);
        self.rp.iter_mut().zip(self.curv).for_each(|(v, w)| *v *= w);
        self.proj.backward_raw(&self.rp, q);
        diff_normal(p, self.side, &mut self.tmp);
        for i in 0..q.len() {
            q[i] += self.rho * (self.tmp[i] + p[i]) + self.damping * p[i];
        }
    }
}

pub(crate) struct LmInputs<'a> {
    pub proj: &'a Projector,
    pub models: &'a ModelPair,
    pub measured: &'a SinogramPair,
    pub weights: &'a SinogramPair,
    pub cg_iters: usize,
    pub lm_iters: usize,
    pub max_rejects: usize,
}

/// `m` LM iterations on one basis with the other basis held at `other_rx`.
///
/// Each iteration costs one backprojection for the gradient, `n` forward and
/// backprojection pairs inside CG and one forward projection of the trial
/// point; a rejected trial repeats the solve with ten times the damping.
pub(crate) fn lm_primal_update(st: &mut BasisState, other_rx: &[f64], basis: Basis, inp: &LmInputs<'_>) -> Result<()> {
    let n = st.x.len();
    let geom = inp.proj.geometry();
    let Some(mut data) = ray_data(inp.models, inp.measured, inp.weights, &st.rx, other_rx, basis, inp.proj) else {
        log::warn!("baseline update skipped: forward model not finite at the current iterate");
        return Ok(());
    };
    let mut cost = data.cost + penalty_cost(st, &st.x);
    for _ in 0..inp.lm_iters {
        // Gradient of the data term plus the penalty.
        let mut g = vec![0.0; n];
        inp.proj.backward_raw(&data.grad, &mut g);
        let mut dx = vec![0.0; 2 * n];
        diff_forward(&st.x, st.side, &mut dx);
        let t: Vec<f64> = (0..2 * n).map(|i| dx[i] - st.y[i] - st.u_y[i]).collect();
        let mut dtt = vec![0.0; n];
        crate::linsolve::diff_adjoint(&t, st.side, &mut dtt);
        for i in 0..n {
            g[i] += st.rho * (dtt[i] + st.x[i] - st.z[i] - st.u_z[i]);
        }
        let scale = sum(&data.curv) / data.curv.len().max(1) as f64 * geom.n_angles() as f64 * geom.pixel_pitch.powi(2);
        let mut accepted = false;
        for _ in 0..=inp.max_rejects {
            let mut op = GaussNewton {
                proj: inp.proj,
                side: st.side,
                curv: &data.curv,
                rho: st.rho,
                damping: st.lm_lambda * (scale + st.rho),
                rp: vec![0.0; geom.n_rays()],
                tmp: vec![0.0; n],
            };
            let mut delta = vec![0.0; n];
            let r0: Vec<f64> = g.iter().map(|v| -v).collect();
            cg_core(&mut op, None, &mut delta, r0, inp.cg_iters, 0.0)?;
            let trial: Vec<f64> = st.x.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let mut trial_rx = vec![0.0; geom.n_rays()];
            inp.proj.forward_raw(&trial, &mut trial_rx);
            let trial_data = ray_data(inp.models, inp.measured, inp.weights, &trial_rx, other_rx, basis, inp.proj);
            if let Some(td) = trial_data {
                let trial_cost = td.cost + penalty_cost(st, &trial);
                if trial_cost < cost {
                    st.x = trial;
                    st.rx = trial_rx;
                    data = td;
                    cost = trial_cost;
                    st.lm_lambda = (st.lm_lambda / 10.0).max(1e-12);
                    accepted = true;
                    break;
                }
            }
            st.lm_lambda *= 10.0;
        }
        if !accepted {
            log::warn!("baseline LM step rejected {} times; keeping the current iterate", inp.max_rejects + 1);
            break;
        }
    }
    Ok(())
}
