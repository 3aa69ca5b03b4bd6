use super::prox;
use crate::error::Result;
use crate::linsolve::{cg_core, diff_adjoint, diff_forward, CgReport, Preconditioner, StackedSystem, TrackedSystem};
use crate::projector::Projector;
use crate::vecops::{dist_sq, norm};

/// ADMM variables of one basis.
///
/// Besides the primal, auxiliary and scaled dual variables, the state keeps
/// `R x`, `RᵀR x`, `Rᵀ a` and `Rᵀ u_a` so that an iteration needs no
/// projections beyond those inside the solver and one backprojection of `a`.
#[derive(Clone, Debug)]
pub struct BasisState {
    pub side: usize,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub u_a: Vec<f64>,
    pub u_y: Vec<f64>,
    pub u_z: Vec<f64>,
    pub rho: f64,
    pub rx: Vec<f64>,
    pub rtrx: Vec<f64>,
    pub rta: Vec<f64>,
    pub rtua: Vec<f64>,
    /// `D x` for the current `x`, refreshed by `update_y`.
    pub dx: Vec<f64>,
    pub y_prev: Vec<f64>,
    pub z_prev: Vec<f64>,
    pub rta_prev: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub(crate) lm_lambda: f64,
}

impl BasisState {
    /// `y = D x`, `z = x⁺`, zero duals. An empty `a` drops the projection block.
    pub fn new(proj: &Projector, x: Vec<f64>, a: Vec<f64>, rho: f64) -> Self {
        let side = proj.geometry().image_side;
        let n = side * side;
        let m = proj.geometry().n_rays();
        let mut dx = vec![0.0; 2 * n];
        diff_forward(&x, side, &mut dx);
        let z: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        let mut rx = vec![0.0; m];
        proj.forward_raw(&x, &mut rx);
        let has_a = !a.is_empty();
        let (rtrx, rta, rtua) = if has_a {
            let mut rtrx = vec![0.0; n];
            proj.backward_raw(&rx, &mut rtrx);
            let mut rta = vec![0.0; n];
            proj.backward_raw(&a, &mut rta);
            (rtrx, rta, vec![0.0; n])
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        BasisState {
            side,
            u_a: vec![0.0; a.len()],
            u_y: vec![0.0; 2 * n],
            u_z: vec![0.0; n],
            y: dx.clone(),
            y_prev: dx.clone(),
            z_prev: z.clone(),
            rta_prev: rta.clone(),
            x_prev: x.clone(),
            x,
            a,
            z,
            rho,
            rx,
            rtrx,
            rta,
            rtua,
            dx,
            lm_lambda: 1e-3,
        }
    }

    pub fn has_a(&self) -> bool {
        !self.a.is_empty()
    }

    /// Residual `Aᵀ(v + u) − AᵀA x` of the normal equations, from cached products.
    pub fn normal_residual(&self) -> Vec<f64> {
        let n = self.x.len();
        let mut dx = vec![0.0; 2 * n];
        diff_forward(&self.x, self.side, &mut dx);
        let t: Vec<f64> = (0..2 * n).map(|i| self.y[i] + self.u_y[i] - dx[i]).collect();
        let mut r = vec![0.0; n];
        diff_adjoint(&t, self.side, &mut r);
        for i in 0..n {
            r[i] += self.z[i] + self.u_z[i] - self.x[i];
            if self.has_a() {
                r[i] += self.rta[i] + self.rtua[i] - self.rtrx[i];
            }
        }
        r
    }

    /// `n` (P)CG iterations on the tomographic subproblem, warm-started at `x`.
    pub fn reconstruct_x(
        &mut self,
        sys: &StackedSystem<'_>,
        prec: Option<&Preconditioner>,
        iters: usize,
    ) -> Result<CgReport> {
        self.x_prev.copy_from_slice(&self.x);
        let r0 = self.normal_residual();
        let rx = std::mem::take(&mut self.rx);
        let rtrx = std::mem::take(&mut self.rtrx);
        let mut op = TrackedSystem::new(*sys, rx, rtrx)?;
        let res = cg_core(&mut op, prec, &mut self.x, r0, iters, 0.0);
        let (rx, rtrx) = op.into_parts();
        self.rx = rx;
        self.rtrx = rtrx;
        res
    }

    /// Installs a new `a` and refreshes `Rᵀ a` (one backprojection).
    pub fn set_a(&mut self, proj: &Projector, a: Vec<f64>) {
        std::mem::swap(&mut self.rta_prev, &mut self.rta);
        self.a = a;
        proj.backward_raw(&self.a, &mut self.rta);
    }

    /// Anchors `R x − u_a` of the penalized decomposition.
    pub fn anchors(&self) -> Vec<f64> {
        self.rx.iter().zip(&self.u_a).map(|(r, u)| r - u).collect()
    }

    pub fn update_y(&mut self, lambda: f64) {
        diff_forward(&self.x, self.side, &mut self.dx);
        std::mem::swap(&mut self.y_prev, &mut self.y);
        prox::update_y(&self.dx, &self.u_y, lambda / self.rho, &mut self.y);
    }

    pub fn update_z(&mut self) {
        std::mem::swap(&mut self.z_prev, &mut self.z);
        prox::update_z(&self.x, &self.u_z, &mut self.z);
    }

    pub fn update_duals(&mut self) {
        if self.has_a() {
            prox::update_dual(&mut self.u_a, &self.a, &self.rx);
            prox::update_dual(&mut self.rtua, &self.rta, &self.rtrx);
        }
        prox::update_dual(&mut self.u_y, &self.y, &self.dx);
        prox::update_dual(&mut self.u_z, &self.z, &self.x);
    }

    /// Primal `‖v − A x‖` and dual `ρ‖Aᵀ(v − v_prev)‖` residual norms.
    pub fn residuals(&self) -> (f64, f64) {
        let n = self.x.len();
        let mut r2 = dist_sq(&self.y, &self.dx) + dist_sq(&self.z, &self.x);
        if self.has_a() {
            r2 += dist_sq(&self.a, &self.rx);
        }
        let dy: Vec<f64> = self.y.iter().zip(&self.y_prev).map(|(a, b)| a - b).collect();
        let mut s = vec![0.0; n];
        diff_adjoint(&dy, self.side, &mut s);
        for i in 0..n {
            s[i] += self.z[i] - self.z_prev[i];
            if self.has_a() {
                s[i] += self.rta[i] - self.rta_prev[i];
            }
        }
        (r2.sqrt(), self.rho * norm(&s))
    }

    /// Sets a new penalty and rescales the scaled duals so that `ρ·u` is unchanged.
    pub fn set_rho(&mut self, rho: f64) {
        if rho == self.rho {
            return;
        }
        let f = self.rho / rho;
        for u in [&mut self.u_a, &mut self.u_y, &mut self.u_z, &mut self.rtua] {
            u.iter_mut().for_each(|v| *v *= f);
        }
        self.rho = rho;
    }

    /// `‖x − x_prev‖ / ‖x_prev‖` for the last reconstruction step.
    pub fn relative_change(&self) -> f64 {
        let d = dist_sq(&self.x, &self.x_prev).sqrt();
        let base = norm(&self.x_prev);
        if base > 0.0 {
            d / base
        } else {
            d
        }
    }
}
