//! ADMM reconstruction of Compton and photoelectric images.
//!
//! The proposed splitting alternates a linear tomographic solve per basis
//! with an independent per-ray decomposition. The baseline updates each basis
//! against the full nonlinear data term instead. Both share the TV shrinkage,
//! the nonnegativity projection, the scaled dual ascent and the
//! residual-balancing penalty rule.

mod baseline;
mod prox;
mod state;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

pub use baseline::Basis;
pub use prox::{shrinkage, update_dual, update_rho, update_y, update_z};
pub use state::BasisState;

use crate::decompose::{decompose_all, BasisSinogram, Decomposition, FailureReport, LmSettings, Mode, Penalty};
use crate::error::{DectError, Result};
use crate::linsolve::{Preconditioner, StackedSystem};
use crate::metrics::error_db;
use crate::physics::ModelPair;
use crate::projector::{BasisImage, Image, OpCount, Projector, Sinogram, SinogramPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    CdmFbp,
    AdmmLm,
    AdmmCg,
    AdmmPcg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::CdmFbp => "cdm-fbp",
            Method::AdmmLm => "admm-lm",
            Method::AdmmCg => "admm-cg",
            Method::AdmmPcg => "admm-pcg",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = DectError;

    fn from_str(s: &str) -> Result<Self> {
        [Method::CdmFbp, Method::AdmmLm, Method::AdmmCg, Method::AdmmPcg]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| DectError::Unknown(format!("method '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmmConfig {
    pub method: Method,
    pub lambda_c: f64,
    pub lambda_p: f64,
    pub rho0: f64,
    pub tau: f64,
    pub mu: f64,
    /// Adapt ρ from the residual balance; off keeps ρ at `rho0`.
    pub adapt_rho: bool,
    pub cg_iters: usize,
    /// LM iterations per basis of the baseline.
    pub lm_iters: usize,
    /// LM iteration cap of the per-ray decomposition.
    pub udm_iters: usize,
    pub lm_max_rejects: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub pe_init_scale: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            method: Method::AdmmPcg,
            lambda_c: 1e-5,
            lambda_p: 1e-5,
            rho0: 1e-3,
            tau: 2.0,
            mu: 10.0,
            adapt_rho: true,
            cg_iters: 5,
            lm_iters: 1,
            udm_iters: 50,
            lm_max_rejects: 10,
            max_iters: 100,
            tol: 1e-4,
            pe_init_scale: 1e3,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |what: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(DectError::Domain { what, value: v })
            }
        };
        pos("rho0", self.rho0)?;
        pos("pe_init_scale", self.pe_init_scale)?;
        for (what, v) in [("lambda_c", self.lambda_c), ("lambda_p", self.lambda_p), ("tol", self.tol)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DectError::Domain { what, value: v });
            }
        }
        if !(self.tau > 1.0) {
            return Err(DectError::Domain { what: "tau", value: self.tau });
        }
        if !(self.mu > 1.0) {
            return Err(DectError::Domain { what: "mu", value: self.mu });
        }
        if self.udm_iters == 0 {
            return Err(DectError::Config("udm_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Inputs of one reconstruction.
#[derive(Clone, Copy)]
pub struct ReconProblem<'a> {
    pub projector: &'a Projector,
    pub models: &'a ModelPair,
    pub measured: &'a SinogramPair,
    pub weights: &'a SinogramPair,
    pub reference: Option<&'a BasisImage>,
    pub roi: Option<&'a [bool]>,
}

/// Telemetry of one iteration; iteration 0 describes the initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub e_c_db: f64,
    pub e_p_db: f64,
    pub r_c: f64,
    pub s_c: f64,
    pub r_p: f64,
    pub s_p: f64,
    pub rho_c: f64,
    pub rho_p: f64,
    /// Cumulative counts since the start of the run.
    pub ops: OpCount,
    /// Cumulative wall time since the start of the run.
    pub wall_ms: f64,
    pub unconverged_rays: usize,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str = "iter,e_c_db,e_p_db,r_c,s_c,r_p,s_p,rho_c,rho_p,nR,nRt,nf,wall_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.iteration,
            self.e_c_db,
            self.e_p_db,
            self.r_c,
            self.s_c,
            self.r_p,
            self.s_p,
            self.rho_c,
            self.rho_p,
            self.ops.forward,
            self.ops.backward,
            self.ops.fwd_model,
            self.wall_ms
        )
    }

    /// The row without the wall-clock column, for reproducibility checks.
    pub fn csv_row_untimed(&self) -> String {
        let row = self.csv_row();
        row[..row.rfind(',').expect("fixed columns")].to_string()
    }
}

#[derive(Clone, Debug)]
pub struct ReconOutput {
    pub image: BasisImage,
    pub records: Vec<IterationRecord>,
    pub init_failures: FailureReport,
    pub last_failures: FailureReport,
    pub converged: bool,
}

/// ADMM state machine; `new` initializes, `step` runs one iteration.
pub struct Admm<'a> {
    config: AdmmConfig,
    problem: ReconProblem<'a>,
    sys: StackedSystem<'a>,
    prec: Option<Preconditioner>,
    pub c: BasisState,
    pub p: BasisState,
    iteration: usize,
    start: Instant,
    init_failures: FailureReport,
    last_failures: FailureReport,
}

impl<'a> Admm<'a> {
    /// Constrained decomposition, filtered backprojection, `y = D x`, `z = x⁺`.
    pub fn new(config: AdmmConfig, problem: ReconProblem<'a>) -> Result<Self> {
        config.validate()?;
        let start = Instant::now();
        let proj = problem.projector;
        let geom = proj.geometry();
        let (na, nd) = (geom.n_angles(), geom.detector_count);
        for s in [&problem.measured.high, &problem.measured.low, &problem.weights.high, &problem.weights.low] {
            if s.n_angles() != na || s.n_detectors() != nd {
                return Err(DectError::dims(format!("{na}x{nd}"), format!("{}x{}", s.n_angles(), s.n_detectors())));
            }
        }
        if let Some(r) = problem.reference {
            geom.check_image(&r.compton)?;
            geom.check_image(&r.pe)?;
        }
        if let Some(m) = problem.roi {
            if m.len() != geom.n_pixels() {
                return Err(DectError::dims(geom.n_pixels(), m.len()));
            }
        }

        let cdm = decompose_all(
            problem.measured,
            problem.weights,
            Mode::Constrained,
            problem.models,
            &LmSettings::default(),
            Some(proj.counters()),
        )?;
        let init_failures = cdm.report.clone();
        let BasisSinogram { compton: a_c, pe: a_p } = cdm.a;
        let x_c = proj.fbp(&a_c)?.into_vec();
        let x_p = match config.method {
            Method::CdmFbp => proj.fbp(&a_p)?.into_vec(),
            _ => x_c.iter().map(|v| v * config.pe_init_scale).collect(),
        };
        let (a_c, a_p) = match config.method {
            Method::AdmmCg | Method::AdmmPcg => (a_c.into_vec(), a_p.into_vec()),
            _ => (Vec::new(), Vec::new()),
        };
        let sys = StackedSystem::full(proj);
        let c = BasisState::new(proj, x_c, a_c, config.rho0);
        let p = BasisState::new(proj, x_p, a_p, config.rho0);
        let prec = match config.method {
            Method::AdmmPcg => Some(Preconditioner::build(&sys)?),
            _ => None,
        };
        Ok(Admm {
            config,
            problem,
            sys,
            prec,
            c,
            p,
            iteration: 0,
            start,
            last_failures: init_failures.clone(),
            init_failures,
        })
    }

    pub fn config(&self) -> &AdmmConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn preconditioner(&self) -> Option<&Preconditioner> {
        self.prec.as_ref()
    }

    pub fn image(&self) -> BasisImage {
        let side = self.c.side;
        BasisImage {
            compton: Image::from_vec(side, self.c.x.clone()).expect("square"),
            pe: Image::from_vec(side, self.p.x.clone()).expect("square"),
        }
    }

    /// Both per-basis (P)CG solves, run concurrently.
    pub fn reconstruct_x(&mut self) -> Result<()> {
        let (sys, prec, n) = (&self.sys, self.prec.as_ref(), self.config.cg_iters);
        let (c, p) = (&mut self.c, &mut self.p);
        let (rc, rp) = rayon::join(|| c.reconstruct_x(sys, prec, n), || p.reconstruct_x(sys, prec, n));
        rc?;
        rp?;
        Ok(())
    }

    /// Anchors `R x − u_a` of both bases as sinograms.
    pub fn anchors(&self) -> BasisSinogram {
        let g = self.problem.projector.geometry();
        let (na, nd) = (g.n_angles(), g.detector_count);
        BasisSinogram {
            compton: Sinogram::from_vec(na, nd, self.c.anchors()).expect("ray count"),
            pe: Sinogram::from_vec(na, nd, self.p.anchors()).expect("ray count"),
        }
    }

    /// Penalized per-ray decomposition around the current anchors.
    pub fn decompose_a(&mut self) -> Result<Decomposition> {
        let anchors = self.anchors();
        let rho = Penalty::new(self.c.rho, self.p.rho)?;
        let d = decompose_all(
            self.problem.measured,
            self.problem.weights,
            Mode::Penalized { anchors: &anchors, rho },
            self.problem.models,
            &LmSettings::default().with_max_iters(self.config.udm_iters),
            Some(self.problem.projector.counters()),
        )?;
        let proj = self.problem.projector;
        self.c.set_a(proj, d.a.compton.as_slice().to_vec());
        self.p.set_a(proj, d.a.pe.as_slice().to_vec());
        self.last_failures = d.report.clone();
        Ok(d)
    }

    /// Baseline primal update: Compton first, then photoelectric against the new Compton.
    pub fn lm_primal_update(&mut self) -> Result<()> {
        let inp = baseline::LmInputs {
            proj: self.problem.projector,
            models: self.problem.models,
            measured: self.problem.measured,
            weights: self.problem.weights,
            cg_iters: self.config.cg_iters,
            lm_iters: self.config.lm_iters,
            max_rejects: self.config.lm_max_rejects,
        };
        self.c.x_prev.copy_from_slice(&self.c.x);
        self.p.x_prev.copy_from_slice(&self.p.x);
        baseline::lm_primal_update(&mut self.c, &self.p.rx, Basis::Compton, &inp)?;
        baseline::lm_primal_update(&mut self.p, &self.c.rx, Basis::Pe, &inp)
    }

    /// One ADMM iteration. Returns the record and whether the stop rule fired.
    pub fn step(&mut self) -> Result<(IterationRecord, bool)> {
        match self.config.method {
            Method::CdmFbp => return Err(DectError::Config("cdm-fbp has no iterations".into())),
            Method::AdmmLm => self.lm_primal_update()?,
            Method::AdmmCg | Method::AdmmPcg => {
                self.reconstruct_x()?;
                self.decompose_a()?;
            }
        }
        let (lc, lp) = (self.config.lambda_c, self.config.lambda_p);
        self.c.update_y(lc);
        self.p.update_y(lp);
        self.c.update_z();
        self.p.update_z();
        self.c.update_duals();
        self.p.update_duals();
        let (r_c, s_c) = self.c.residuals();
        let (r_p, s_p) = self.p.residuals();
        let (rho_c, rho_p) = (self.c.rho, self.p.rho);
        if self.config.adapt_rho {
            let (tau, mu) = (self.config.tau, self.config.mu);
            self.c.set_rho(update_rho(rho_c, r_c, s_c, tau, mu));
            self.p.set_rho(update_rho(rho_p, r_p, s_p, tau, mu));
        }
        self.iteration += 1;
        let done = self.c.relative_change() < self.config.tol && self.p.relative_change() < self.config.tol;
        let record = self.record(r_c, s_c, r_p, s_p)?;
        Ok((record, done))
    }

    /// Record of the current state; residuals are supplied by the caller.
    fn record(&self, r_c: f64, s_c: f64, r_p: f64, s_p: f64) -> Result<IterationRecord> {
        let (e_c_db, e_p_db) = match self.problem.reference {
            Some(r) => (
                error_db(&self.c.x, r.compton.as_slice(), self.problem.roi)?,
                error_db(&self.p.x, r.pe.as_slice(), self.problem.roi)?,
            ),
            None => (f64::NAN, f64::NAN),
        };
        Ok(IterationRecord {
            iteration: self.iteration,
            e_c_db,
            e_p_db,
            r_c,
            s_c,
            r_p,
            s_p,
            rho_c: self.c.rho,
            rho_p: self.p.rho,
            ops: self.problem.projector.counters().snapshot(),
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
            unconverged_rays: self.last_failures.count(),
        })
    }

    pub fn initial_record(&self) -> Result<IterationRecord> {
        self.record(0.0, 0.0, 0.0, 0.0)
    }

    pub fn failures(&self) -> (&FailureReport, &FailureReport) {
        (&self.init_failures, &self.last_failures)
    }
}

/// Initializes, iterates until the stop rule or `max_iters`, and reports each record.
pub fn run(
    config: AdmmConfig,
    problem: ReconProblem<'_>,
    mut on_record: impl FnMut(&IterationRecord) -> Result<()>,
) -> Result<ReconOutput> {
    let mut admm = Admm::new(config, problem)?;
    let first = admm.initial_record()?;
    on_record(&first)?;
    let mut records = vec![first];
    let mut converged = false;
    if admm.config.method != Method::CdmFbp {
        for _ in 0..admm.config.max_iters {
            let (rec, done) = admm.step()?;
            on_record(&rec)?;
            records.push(rec);
            if done {
                converged = true;
                break;
            }
        }
    }
    let (init, last) = admm.failures();
    Ok(ReconOutput {
        image: admm.image(),
        records,
        init_failures: init.clone(),
        last_failures: last.clone(),
        converged,
    })
}
