//! Per-ray dual-energy decomposition.
//!
//! Each ray carries two log projections `(m_h, m_l)` and is converted to a
//! Compton/photoelectric line-integral pair by minimizing
//!
//! ```text
//! ½·[w_h(f_h(a) − m_h)² + w_l(f_l(a) − m_l)²] + ½·[ρ_c(a_c − r_c)² + ρ_p(a_p − r_p)²]
//! ```
//!
//! with a two-variable Levenberg–Marquardt iteration. The constrained mode
//! drops the penalty and keeps the iterate in the nonnegative quadrant; the
//! penalized mode has no sign constraint and starts at the anchor `r`.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{DectError, Result};
use crate::physics::{LogProjectionPair, ModelEval, ModelPair, RayIntegralPair};
use crate::projector::{OpCounters, Sinogram, SinogramPair};

/// Diagonal of the measurement weight for one ray (detected photon counts).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RayWeight {
    pub w_h: f64,
    pub w_l: f64,
}

impl RayWeight {
    pub fn new(w_h: f64, w_l: f64) -> Result<Self> {
        for (what, v) in [("w_h", w_h), ("w_l", w_l)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DectError::Domain { what: what.into(), value: v });
            }
        }
        Ok(RayWeight { w_h, w_l })
    }

    pub fn is_dead(&self) -> bool {
        self.w_h == 0.0 && self.w_l == 0.0
    }
}

/// Per-basis quadratic penalty weights.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Penalty {
    pub compton: f64,
    pub pe: f64,
}

impl Penalty {
    pub fn new(compton: f64, pe: f64) -> Result<Self> {
        for (what, v) in [("rho_c", compton), ("rho_p", pe)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DectError::Domain { what: what.into(), value: v });
            }
        }
        Ok(Penalty { compton, pe })
    }
}

/// One penalized per-ray problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecompositionProblem {
    pub measured: LogProjectionPair,
    pub weight: RayWeight,
    pub rho: Penalty,
    pub anchor: RayIntegralPair,
}

impl DecompositionProblem {
    pub fn validate(&self) -> Result<()> {
        RayWeight::new(self.weight.w_h, self.weight.w_l)?;
        Penalty::new(self.rho.compton, self.rho.pe)?;
        for (what, v) in [
            ("m_h", self.measured.high),
            ("m_l", self.measured.low),
            ("r_c", self.anchor.compton),
            ("r_p", self.anchor.pe),
        ] {
            if !v.is_finite() {
                return Err(DectError::Domain { what: what.into(), value: v });
            }
        }
        Ok(())
    }

    /// Objective value at `a`, or `None` when the forward model saturates.
    pub fn objective(&self, a: RayIntegralPair, models: &ModelPair) -> Option<f64> {
        let fh = models.high.forward(a).ok()?;
        let fl = models.low.forward(a).ok()?;
        Some(self.cost_from(a, fh, fl))
    }

    fn cost_from(&self, a: RayIntegralPair, fh: f64, fl: f64) -> f64 {
        let eh = fh - self.measured.high;
        let el = fl - self.measured.low;
        let dc = a.compton - self.anchor.compton;
        let dp = a.pe - self.anchor.pe;
        0.5 * (self.weight.w_h * eh * eh
            + self.weight.w_l * el * el
            + self.rho.compton * dc * dc
            + self.rho.pe * dp * dp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmSettings {
    pub max_iters: usize,
    pub lambda_init: f64,
    pub lambda_max: f64,
    pub step_tol: f64,
    /// Absolute step floor in units of each variable's spread `1/√H_ii`.
    pub scaled_step_tol: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings { max_iters: 50, lambda_init: 1e-3, lambda_max: 1e16, step_tol: 1e-10, scaled_step_tol: 1e-12 }
    }
}

impl LmSettings {
    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RayStatus {
    Converged,
    MaxIterations,
    Stalled,
    NonFinite,
}

impl RayStatus {
    pub fn is_converged(self) -> bool {
        self == RayStatus::Converged
    }

    pub fn reason(self) -> &'static str {
        match self {
            RayStatus::Converged => "converged",
            RayStatus::MaxIterations => "max-iterations",
            RayStatus::Stalled => "stalled",
            RayStatus::NonFinite => "non-finite",
        }
    }
}

impl fmt::Display for RayStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.reason())
    }
}

/// Result of one per-ray solve; `a` is the best iterate even when not converged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySolution {
    pub a: RayIntegralPair,
    pub status: RayStatus,
    pub cost: f64,
    pub iterations: usize,
    /// Forward-model evaluations, counting value and Jacobian per spectrum.
    pub evaluations: u64,
}

struct Eval {
    cost: f64,
    /// Model residuals `f − m` of both spectra.
    r: [f64; 2],
    g: [f64; 2],
    h: [[f64; 2]; 2],
}

fn eval_at(p: &DecompositionProblem, a: RayIntegralPair, models: &ModelPair) -> Option<Eval> {
    let eh: ModelEval = models.high.evaluate(a).ok()?;
    let el: ModelEval = models.low.evaluate(a).ok()?;
    let (wh, wl) = (p.weight.w_h, p.weight.w_l);
    let rh = eh.value - p.measured.high;
    let rl = el.value - p.measured.low;
    let g = [
        wh * rh * eh.d_compton + wl * rl * el.d_compton + p.rho.compton * (a.compton - p.anchor.compton),
        wh * rh * eh.d_pe + wl * rl * el.d_pe + p.rho.pe * (a.pe - p.anchor.pe),
    ];
    let hcc = wh * eh.d_compton * eh.d_compton + wl * el.d_compton * el.d_compton + p.rho.compton;
    let hpp = wh * eh.d_pe * eh.d_pe + wl * el.d_pe * el.d_pe + p.rho.pe;
    let hcp = wh * eh.d_compton * eh.d_pe + wl * el.d_compton * el.d_pe;
    let cost = p.cost_from(a, eh.value, el.value);
    if !(cost.is_finite() && g.iter().all(|v| v.is_finite())) {
        return None;
    }
    Some(Eval { cost, r: [rh, rl], g, h: [[hcc, hcp], [hcp, hpp]] })
}

// Cost change from `a` to `b`, formed from differences so that decreases far
// below the rounding level of the cost itself are still resolved.
fn cost_change(p: &DecompositionProblem, a: RayIntegralPair, ea: &Eval, b: RayIntegralPair, eb: &Eval) -> f64 {
    let w = [p.weight.w_h, p.weight.w_l];
    let mut d = 0.0;
    for k in 0..2 {
        d += w[k] * (eb.r[k] - ea.r[k]) * (eb.r[k] + ea.r[k]);
    }
    d += p.rho.compton * (b.compton - a.compton) * (b.compton + a.compton - 2.0 * p.anchor.compton);
    d += p.rho.pe * (b.pe - a.pe) * (b.pe + a.pe - 2.0 * p.anchor.pe);
    0.5 * d
}

// Marquardt step on the free variables: (H + λ·diag H) δ = −g.
fn damped_step(ev: &Eval, free: [bool; 2], lambda: f64) -> Option<[f64; 2]> {
    let scale = [ev.h[0][0].max(f64::MIN_POSITIVE).sqrt(), ev.h[1][1].max(f64::MIN_POSITIVE).sqrt()];
    let gs = [ev.g[0] / scale[0], ev.g[1] / scale[1]];
    let hs01 = ev.h[0][1] / (scale[0] * scale[1]);
    let d00 = ev.h[0][0] / (scale[0] * scale[0]) * (1.0 + lambda);
    let d11 = ev.h[1][1] / (scale[1] * scale[1]) * (1.0 + lambda);
    let step = match free {
        [true, true] => {
            let det = d00 * d11 - hs01 * hs01;
            if !(det > 0.0) {
                return None;
            }
            [(-gs[0] * d11 + gs[1] * hs01) / det, (-gs[1] * d00 + gs[0] * hs01) / det]
        }
        [true, false] => [-gs[0] / d00, 0.0],
        [false, true] => [0.0, -gs[1] / d11],
        [false, false] => [0.0, 0.0],
    };
    let step = [step[0] / scale[0], step[1] / scale[1]];
    step.iter().all(|v| v.is_finite()).then_some(step)
}

// A decrease, or a step whose predicted and measured changes both lie below
// the rounding level of the cost, where only the quadratic model is reliable.
fn accept(ev: &Eval, step: [f64; 2], change: f64) -> bool {
    if change < 0.0 {
        return true;
    }
    let quad = ev.h[0][0] * step[0] * step[0] + 2.0 * ev.h[0][1] * step[0] * step[1] + ev.h[1][1] * step[1] * step[1];
    let predicted = -(ev.g[0] * step[0] + ev.g[1] * step[1] + 0.5 * quad);
    let noise = 1e3 * f64::EPSILON * (1.0 + ev.cost);
    predicted > 0.0 && predicted <= noise && change <= noise
}

fn solve(
    p: &DecompositionProblem,
    start: RayIntegralPair,
    constrained: bool,
    models: &ModelPair,
    settings: &LmSettings,
) -> RaySolution {
    let mut a = start;
    let mut evaluations = 4u64;
    let Some(mut ev) = eval_at(p, a, models) else {
        return RaySolution { a, status: RayStatus::NonFinite, cost: f64::NAN, iterations: 0, evaluations };
    };
    let mut lambda = settings.lambda_init;
    let done = |a, ev: &Eval, status, iterations, evaluations| RaySolution {
        a,
        status,
        cost: ev.cost,
        iterations,
        evaluations,
    };

    for iter in 0..settings.max_iters {
        let x = [a.compton, a.pe];
        let free = if constrained {
            [x[0] > 0.0 || ev.g[0] < 0.0, x[1] > 0.0 || ev.g[1] < 0.0]
        } else {
            [true, true]
        };
        let (tol, floor) = (settings.step_tol, settings.scaled_step_tol);
        let spread = [1.0 / ev.h[0][0].sqrt(), 1.0 / ev.h[1][1].sqrt()];
        let small = |step: [f64; 2]| (0..2).all(|i| step[i].abs() <= tol * x[i].abs() + floor * spread[i]);
        let pg = [if free[0] { ev.g[0] } else { 0.0 }, if free[1] { ev.g[1] } else { 0.0 }];
        if pg == [0.0, 0.0] || damped_step(&ev, free, 0.0).is_some_and(small) {
            return done(a, &ev, RayStatus::Converged, iter, evaluations);
        }
        loop {
            let Some(step) = damped_step(&ev, free, lambda) else {
                lambda *= 10.0;
                if lambda > settings.lambda_max {
                    return done(a, &ev, RayStatus::Stalled, iter, evaluations);
                }
                continue;
            };
            let mut trial = [x[0] + step[0], x[1] + step[1]];
            if constrained {
                trial = [trial[0].max(0.0), trial[1].max(0.0)];
            }
            if small([trial[0] - x[0], trial[1] - x[1]]) {
                return done(a, &ev, RayStatus::Converged, iter, evaluations);
            }
            let ta = RayIntegralPair::new(trial[0], trial[1]);
            evaluations += 4;
            match eval_at(p, ta, models) {
                Some(tev) if accept(&ev, [trial[0] - x[0], trial[1] - x[1]], cost_change(p, a, &ev, ta, &tev)) => {
                    a = ta;
                    ev = tev;
                    lambda = (lambda / 10.0).max(1e-12);
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > settings.lambda_max {
                        return done(a, &ev, RayStatus::Stalled, iter, evaluations);
                    }
                }
            }
        }
    }
    done(a, &ev, RayStatus::MaxIterations, settings.max_iters, evaluations)
}

/// Constrained decomposition: unpenalized weighted fit with `a ≥ 0`.
pub fn decompose_ray_cdm(
    m: LogProjectionPair,
    w: RayWeight,
    models: &ModelPair,
    settings: &LmSettings,
) -> RaySolution {
    let start = RayIntegralPair::new((m.high / models.high.mean_klein_nishina()).max(0.0), 0.0);
    let p = DecompositionProblem { measured: m, weight: w, rho: Penalty::default(), anchor: start };
    if w.is_dead() {
        return RaySolution { a: start, status: RayStatus::Converged, cost: 0.0, iterations: 0, evaluations: 0 };
    }
    solve(&p, start, true, models, settings)
}

/// Penalized decomposition started at the anchor, without sign constraint.
pub fn decompose_ray_udm(p: &DecompositionProblem, models: &ModelPair, settings: &LmSettings) -> RaySolution {
    if p.weight.is_dead() {
        return RaySolution { a: p.anchor, status: RayStatus::Converged, cost: 0.0, iterations: 0, evaluations: 0 };
    }
    solve(p, p.anchor, false, models, settings)
}

/// Compton and photoelectric sinograms (line integrals per ray).
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSinogram {
    pub compton: Sinogram,
    pub pe: Sinogram,
}

impl BasisSinogram {
    pub fn zeros(n_angles: usize, n_detectors: usize) -> Self {
        BasisSinogram { compton: Sinogram::zeros(n_angles, n_detectors), pe: Sinogram::zeros(n_angles, n_detectors) }
    }

    pub fn ray(&self, i: usize) -> RayIntegralPair {
        RayIntegralPair::new(self.compton.as_slice()[i], self.pe.as_slice()[i])
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Mode<'a> {
    Constrained,
    Penalized { anchors: &'a BasisSinogram, rho: Penalty },
}

/// Rays that did not converge, in ray order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FailureReport {
    pub failures: Vec<(usize, RayStatus)>,
}

impl FailureReport {
    pub fn count(&self) -> usize {
        self.failures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.failures.iter().map(|(i, s)| format!("{i}\t{s}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| DectError::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub a: BasisSinogram,
    pub report: FailureReport,
    pub evaluations: u64,
    pub iterations: u64,
}

/// Decompose every ray independently.
///
/// Adds `ceil(evaluations / rays)` to the forward-model counter when given.
pub fn decompose_all(
    measured: &SinogramPair,
    weights: &SinogramPair,
    mode: Mode<'_>,
    models: &ModelPair,
    settings: &LmSettings,
    counters: Option<&OpCounters>,
) -> Result<Decomposition> {
    let (na, nd) = (measured.high.n_angles(), measured.high.n_detectors());
    let shape = |s: &Sinogram| format!("{}x{}", s.n_angles(), s.n_detectors());
    if !measured.same_shape(weights) || !weights.high.same_shape(&weights.low) {
        return Err(DectError::dims(shape(&measured.high), shape(&weights.high)));
    }
    if let Mode::Penalized { anchors, rho } = mode {
        if !anchors.compton.same_shape(&measured.high) || !anchors.pe.same_shape(&measured.high) {
            return Err(DectError::dims(shape(&measured.high), shape(&anchors.compton)));
        }
        Penalty::new(rho.compton, rho.pe)?;
    }
    let (mh, ml) = (measured.high.as_slice(), measured.low.as_slice());
    let (wh, wl) = (weights.high.as_slice(), weights.low.as_slice());
    for v in wh.iter().chain(wl) {
        if !(*v >= 0.0 && v.is_finite()) {
            return Err(DectError::Domain { what: "weight", value: *v });
        }
    }
    for v in mh.iter().chain(ml) {
        if !v.is_finite() {
            return Err(DectError::Domain { what: "measurement", value: *v });
        }
    }

    let n = mh.len();
    let solutions: Vec<RaySolution> = (0..n)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let m = LogProjectionPair { high: mh[i], low: ml[i] };
            let w = RayWeight { w_h: wh[i], w_l: wl[i] };
            match mode {
                Mode::Constrained => decompose_ray_cdm(m, w, models, settings),
                Mode::Penalized { anchors, rho } => {
                    let p = DecompositionProblem { measured: m, weight: w, rho, anchor: anchors.ray(i) };
                    decompose_ray_udm(&p, models, settings)
                }
            }
        })
        .collect();

    let mut a = BasisSinogram::zeros(na, nd);
    let mut report = FailureReport::default();
    let (mut evaluations, mut iterations) = (0u64, 0u64);
    for (i, s) in solutions.iter().enumerate() {
        a.compton.as_mut_slice()[i] = s.a.compton;
        a.pe.as_mut_slice()[i] = s.a.pe;
        evaluations += s.evaluations;
        iterations += s.iterations as u64;
        if !s.status.is_converged() {
            report.failures.push((i, s.status));
        }
    }
    if let Some(c) = counters {
        if n > 0 {
            c.add_fwd_model(evaluations.div_ceil(n as u64));
        }
    }
    Ok(Decomposition { a, report, evaluations, iterations })
}
