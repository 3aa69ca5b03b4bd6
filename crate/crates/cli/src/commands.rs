use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use dect_core::admm::{run, AdmmConfig, Method, ReconProblem};
use dect_core::io::{self, TelemetryWriter};
use dect_core::linsolve::{Preconditioner, StackedSystem};
use dect_core::metrics::{disc_mask, error_db};
use dect_core::phantom::{self, MaterialTable, Noise, PhantomSpec};
use dect_core::projector::{BasisImage, SinogramPair};
use dect_core::{Image, Projector, ScanGeometry, Spectrum, SpectrumPair};

use crate::manifest::{self, Manifest};
use crate::{MetricsArgs, PrecondArgs, ReconArgs, SimulateArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn save_with_preview(dir: &Path, name: &str, img: &Image, pitch: f64) -> Result<()> {
    io::save_image(&dir.join(format!("{name}.raw")), img, pitch)?;
    let (lo, hi) = io::auto_window(img);
    io::write_pgm(&dir.join(format!("{name}.pgm")), img, lo, hi)?;
    Ok(())
}

fn parse_mono(text: &str) -> Result<SpectrumPair> {
    let (h, l) = text.split_once(',').context("--mono expects HIGH,LOW in keV")?;
    let h: f64 = h.trim().parse().context("--mono high energy")?;
    let l: f64 = l.trim().parse().context("--mono low energy")?;
    Ok(SpectrumPair::monochromatic(h, l)?)
}

fn load_phantom(name: &str) -> Result<PhantomSpec> {
    match name {
        "sim18" | "clutter" => Ok(phantom::builtin_phantom(name)?),
        path => Ok(PhantomSpec::load(Path::new(path))?),
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    ensure!(args.photons > 0.0 && args.photons.is_finite(), "--photons must be positive");
    let geom = ScanGeometry::parse_preset(&args.geometry)?;
    let spec = load_phantom(&args.phantom)?;
    let table = match &args.materials {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            MaterialTable::parse(&text, &p.display().to_string())?
        }
        None => MaterialTable::standard(),
    };
    let spectra = match &args.mono {
        Some(m) => parse_mono(m)?,
        None => SpectrumPair::standard(),
    };
    let noise = if args.noiseless { Noise::None } else { Noise::Poisson { seed: args.seed } };

    let truth = phantom::rasterize(&spec, &table, &geom)?;
    let proj = Projector::new(geom.clone());
    let sim = phantom::simulate(&truth, &proj, &spectra, args.photons, noise)?;
    if !sim.flagged.is_empty() {
        log::warn!("{} rays recorded no photons in at least one spectrum", sim.flagged.len());
    }

    let out = &args.out;
    create_dir(out)?;
    let pitch = geom.pixel_pitch;
    save_with_preview(out, "truth_c", &truth.compton, pitch)?;
    save_with_preview(out, "truth_p", &truth.pe, pitch)?;
    let angles = Some(manifest::ANGLES);
    let sinograms = [
        ("line_c", &sim.line_integrals.0),
        ("line_p", &sim.line_integrals.1),
        ("noiseless_high", &sim.noiseless.high),
        ("noiseless_low", &sim.noiseless.low),
        ("measured_high", &sim.measured.high),
        ("measured_low", &sim.measured.low),
        ("weights_high", &sim.weights.high),
        ("weights_low", &sim.weights.low),
    ];
    for (name, s) in sinograms {
        io::save_sinogram(&out.join(format!("{name}.raw")), s, angles)?;
    }
    io::write_angles(&out.join(manifest::ANGLES), &geom.angles)?;
    spectra.high.save(&out.join(manifest::SPECTRUM_HIGH), "high-energy spectrum")?;
    spectra.low.save(&out.join(manifest::SPECTRUM_LOW), "low-energy spectrum")?;
    let phantom_path = out.join("phantom.txt");
    fs::write(&phantom_path, spec.to_text()).with_context(|| format!("writing {}", phantom_path.display()))?;

    let m = Manifest {
        generator: phantom::GENERATOR.into(),
        phantom: args.phantom.clone(),
        side: geom.image_side,
        pixel_pitch_cm: geom.pixel_pitch,
        detector_count: geom.detector_count,
        detector_pitch_cm: geom.detector_pitch,
        photons: args.photons,
        seed: args.seed,
        noise: if args.noiseless { "none".into() } else { "poisson".into() },
        flagged_rays: sim.flagged.len(),
    };
    let mpath = out.join(manifest::FILE);
    fs::write(&mpath, m.to_text()).with_context(|| format!("writing {}", mpath.display()))?;
    log::info!(
        "simulated {}x{} image, {}x{} sinograms into {}",
        geom.image_side,
        geom.image_side,
        geom.n_angles(),
        geom.detector_count,
        out.display()
    );
    Ok(())
}

fn stem_file(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_basis(stem: &Path) -> Result<BasisImage> {
    let compton = io::load_image(&stem_file(stem, "_c.raw"))?;
    let pe = io::load_image(&stem_file(stem, "_p.raw"))?;
    ensure!(compton.side() == pe.side(), "{}: basis images differ in size", stem.display());
    Ok(BasisImage { compton, pe })
}

fn load_pair(dir: &Path, name: &str) -> Result<SinogramPair> {
    let high = io::load_sinogram(&dir.join(format!("{name}_high.raw")))?;
    let low = io::load_sinogram(&dir.join(format!("{name}_low.raw")))?;
    Ok(SinogramPair::new(high, low)?)
}

fn config_from(args: &ReconArgs) -> AdmmConfig {
    AdmmConfig {
        method: args.method,
        lambda_c: args.lambda_c.unwrap_or(args.lambda),
        lambda_p: args.lambda_p.unwrap_or(args.lambda),
        rho0: args.rho0,
        adapt_rho: !args.fixed_rho,
        cg_iters: args.cg_iters,
        lm_iters: args.lm_iters,
        udm_iters: args.udm_iters,
        max_iters: args.max_iters,
        tol: args.tol,
        pe_init_scale: args.pe_init_scale,
        ..AdmmConfig::default()
    }
}

fn config_text(cfg: &AdmmConfig) -> String {
    format!(
        "method {}\nlambda_c {}\nlambda_p {}\nrho0 {}\ntau {}\nmu {}\nadapt_rho {}\ncg_iters {}\nlm_iters {}\n\
         udm_iters {}\nlm_max_rejects {}\nmax_iters {}\ntol {}\npe_init_scale {}\n",
        cfg.method,
        cfg.lambda_c,
        cfg.lambda_p,
        cfg.rho0,
        cfg.tau,
        cfg.mu,
        cfg.adapt_rho,
        cfg.cg_iters,
        cfg.lm_iters,
        cfg.udm_iters,
        cfg.lm_max_rejects,
        cfg.max_iters,
        cfg.tol,
        cfg.pe_init_scale
    )
}

pub fn recon(args: &ReconArgs) -> Result<ExitCode> {
    let cfg = config_from(args);
    cfg.validate()?;
    let input = &args.input;
    let m = Manifest::load(input)?;
    let geom = m.geometry(input)?;
    let spectra = SpectrumPair::new(
        Spectrum::load(&input.join(manifest::SPECTRUM_HIGH))?,
        Spectrum::load(&input.join(manifest::SPECTRUM_LOW))?,
    );
    let measured = load_pair(input, "measured")?;
    let weights = load_pair(input, "weights")?;
    ensure!(
        measured.high.n_angles() == geom.n_angles() && measured.high.n_detectors() == geom.detector_count,
        "measured sinograms do not match the manifest geometry"
    );
    let reference = if args.no_reference {
        None
    } else {
        let stem = args.reference.clone().unwrap_or_else(|| input.join("truth"));
        let r = load_basis(&stem)?;
        ensure!(r.compton.side() == geom.image_side, "reference size does not match the geometry");
        Some(r)
    };
    let roi = args.roi_radius.map(|r| disc_mask(geom.image_side, r));

    let out = &args.out;
    create_dir(out)?;
    let proj = Projector::new(geom.clone());
    let models = spectra.models();
    let problem = ReconProblem {
        projector: &proj,
        models: &models,
        measured: &measured,
        weights: &weights,
        reference: reference.as_ref(),
        roi: roi.as_deref(),
    };
    let mut telemetry = TelemetryWriter::create(&out.join("telemetry.csv"), !args.untimed)?;
    let method = cfg.method;
    let config_dump = config_text(&cfg);
    let result = run(cfg, problem, |rec| {
        log::info!(
            "{method} iter {}: e_c {:.2} dB, e_p {:.2} dB, rho {:.3e}/{:.3e}",
            rec.iteration,
            rec.e_c_db,
            rec.e_p_db,
            rec.rho_c,
            rec.rho_p
        );
        telemetry.write(rec)
    })?;

    save_with_preview(out, "x_c", &result.image.compton, geom.pixel_pitch)?;
    save_with_preview(out, "x_p", &result.image.pe, geom.pixel_pitch)?;
    let failures = if method == Method::CdmFbp { &result.init_failures } else { &result.last_failures };
    if let Some(path) = &args.failure_report {
        failures.write(path)?;
    }
    let iterations = result.records.last().map_or(0, |r| r.iteration);
    let summary = format!(
        "{config_dump}iterations {iterations}\nconverged {}\nunconverged_rays_init {}\nunconverged_rays_final {}\n",
        result.converged,
        result.init_failures.count(),
        failures.count()
    );
    let spath = out.join("run.txt");
    fs::write(&spath, summary).with_context(|| format!("writing {}", spath.display()))?;

    if failures.count() > args.max_unconverged {
        log::error!("{} unconverged rays exceed the limit of {}", failures.count(), args.max_unconverged);
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn print_errors(label: &str, x: &Image, reference: &Image, roi: Option<&[bool]>) -> Result<()> {
    ensure!(x.side() == reference.side(), "{label}: image is {0}x{0}, reference is {1}x{1}", x.side(), reference.side());
    println!("{label}_db {}", error_db(x.as_slice(), reference.as_slice(), None)?);
    if let Some(mask) = roi {
        println!("{label}_roi_db {}", error_db(x.as_slice(), reference.as_slice(), Some(mask))?);
    }
    Ok(())
}

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    if args.image.is_file() {
        if !args.reference.is_file() {
            bail!("{} is a file but {} is not", args.image.display(), args.reference.display());
        }
        let x = io::load_image(&args.image)?;
        let r = io::load_image(&args.reference)?;
        let roi = args.roi_radius.map(|rad| disc_mask(r.side(), rad));
        return print_errors("e", &x, &r, roi.as_deref());
    }
    let x = load_basis(&args.image)?;
    let r = load_basis(&args.reference)?;
    let roi = args.roi_radius.map(|rad| disc_mask(r.compton.side(), rad));
    print_errors("e_c", &x.compton, &r.compton, roi.as_deref())?;
    print_errors("e_p", &x.pe, &r.pe, roi.as_deref())
}

pub fn precond_dump(args: &PrecondArgs) -> Result<()> {
    let geom = match &args.input {
        Some(dir) => Manifest::load(dir)?.geometry(dir)?,
        None => ScanGeometry::parse_preset(&args.geometry)?,
    };
    let proj = Projector::new(geom.clone());
    let prec = Preconditioner::build(&StackedSystem::full(&proj))?;
    create_dir(&args.out)?;
    save_with_preview(&args.out, "psf", &prec.psf(), geom.pixel_pitch)?;
    save_with_preview(&args.out, "gains", &prec.gains_image(), geom.pixel_pitch)?;
    log::info!("wrote preconditioner PSF and gains to {}", args.out.display());
    Ok(())
}
