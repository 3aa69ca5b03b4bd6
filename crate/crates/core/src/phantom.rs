//! Disc phantoms and dual-spectrum measurement simulation.

use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{DectError, Result};
use crate::physics::{ModelPair, RayIntegralPair, SpectrumPair};
use crate::projector::{BasisImage, Image, Projector, ScanGeometry, Sinogram, SinogramPair};

/// Name and version of the noise generator, recorded alongside simulated data.
pub const GENERATOR: &str = "chacha8-stream-v1";

const MATERIALS_TXT: &str = include_str!("../data/materials.txt");
pub const ATTENUATION_TSV: &str = include_str!("../data/attenuation.tsv");

#[derive(Clone, Debug, PartialEq)]
pub struct Material {
    pub name: String,
    /// Compton coefficient, cm⁻¹.
    pub x_c: f64,
    /// Photoelectric coefficient, keV³·cm⁻¹.
    pub x_p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialTable {
    materials: Vec<Material>,
}

impl MaterialTable {
    /// Coefficients fitted to tabulated attenuation data, shipped with the crate.
    pub fn standard() -> Self {
        Self::parse(MATERIALS_TXT, "materials.txt").expect("bundled material table")
    }

    /// Lines of `name x_c x_p`; `#` starts a comment.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut materials: Vec<Material> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| DectError::parse(source_name, i + 1, m);
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(err("expected: name x_c x_p"));
            }
            let x_c: f64 = f[1].parse().map_err(|_| err("x_c is not a number"))?;
            let x_p: f64 = f[2].parse().map_err(|_| err("x_p is not a number"))?;
            if !(x_c >= 0.0 && x_p >= 0.0 && x_c.is_finite() && x_p.is_finite()) {
                return Err(err("coefficients must be finite and nonnegative"));
            }
            if materials.iter().any(|m| m.name == f[0]) {
                return Err(err("duplicate material"));
            }
            materials.push(Material { name: f[0].to_string(), x_c, x_p });
        }
        Ok(MaterialTable { materials })
    }

    pub fn get(&self, name: &str) -> Result<&Material> {
        self.materials
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| DectError::Unknown(format!("material '{name}'")))
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Disc {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub material: String,
}

/// Discs painted in order over a background; positions and radii in cm.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub background: String,
    /// Background fills only this radius when set, vacuum elsewhere.
    pub background_radius: Option<f64>,
    pub discs: Vec<Disc>,
}

impl PhantomSpec {
    pub fn vacuum() -> Self {
        PhantomSpec { background: "vacuum".into(), background_radius: None, discs: Vec::new() }
    }

    /// Lines of `disc cx cy r material` and at most one `background material [radius]`.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut spec = PhantomSpec::vacuum();
        let mut seen_background = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| DectError::parse(source_name, i + 1, m);
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(&format!("{what} is not a number")))
            };
            match f[0] {
                "disc" if f.len() == 5 => {
                    let r = num(f[3], "radius")?;
                    if r <= 0.0 {
                        return Err(err("radius must be positive"));
                    }
                    spec.discs.push(Disc { cx: num(f[1], "cx")?, cy: num(f[2], "cy")?, r, material: f[4].into() });
                }
                "disc" => return Err(err("expected: disc cx cy r material")),
                "background" if !seen_background && (f.len() == 2 || f.len() == 3) => {
                    seen_background = true;
                    spec.background = f[1].into();
                    if f.len() == 3 {
                        let r = num(f[2], "radius")?;
                        if r <= 0.0 {
                            return Err(err("radius must be positive"));
                        }
                        spec.background_radius = Some(r);
                    }
                }
                "background" => return Err(err("expected one line: background material [radius]")),
                other => return Err(err(&format!("unknown shape '{other}'"))),
            }
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DectError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = match self.background_radius {
            Some(r) => format!("background {} {r}\n", self.background),
            None => format!("background {}\n", self.background),
        };
        for d in &self.discs {
            out.push_str(&format!("disc {} {} {} {}\n", d.cx, d.cy, d.r, d.material));
        }
        out
    }
}

/// Built-in phantoms: `sim18` and `clutter`.
pub fn builtin_phantom(name: &str) -> Result<PhantomSpec> {
    let disc = |cx: f64, cy: f64, r: f64, m: &str| Disc { cx, cy, r, material: m.into() };
    match name {
        "sim18" => {
            let ring = ["polypropylene", "pmma", "glycerin", "teflon", "graphite", "silicon"];
            let mut discs = vec![disc(0.0, 0.0, 1.5, "aluminum")];
            for (k, m) in ring.iter().enumerate() {
                let t = k as f64 * std::f64::consts::PI / 3.0;
                discs.push(disc(5.5 * t.cos(), 5.5 * t.sin(), 1.5, m));
            }
            Ok(PhantomSpec { background: "water".into(), background_radius: Some(10.0), discs })
        }
        "clutter" => Ok(PhantomSpec {
            background: "polypropylene".into(),
            background_radius: Some(11.0),
            discs: vec![
                disc(-3.5, 3.0, 4.5, "pmma"),
                disc(2.5, -1.5, 5.0, "water"),
                disc(5.0, 5.0, 2.5, "glycerin"),
                disc(-6.0, -3.5, 2.0, "teflon"),
                disc(-1.0, 5.5, 1.8, "graphite"),
                disc(-2.0, -5.0, 0.8, "iron"),
                disc(5.5, -0.5, 0.6, "iron"),
            ],
        }),
        other => Err(DectError::Unknown(format!("phantom '{other}'"))),
    }
}

/// Paints the phantom by centre-of-pixel membership.
pub fn rasterize(spec: &PhantomSpec, table: &MaterialTable, geom: &ScanGeometry) -> Result<BasisImage> {
    let half = geom.image_side as f64 * geom.pixel_pitch / 2.0;
    for d in &spec.discs {
        if d.cx.abs() + d.r > half + 1e-9 || d.cy.abs() + d.r > half + 1e-9 {
            return Err(DectError::Geometry(format!(
                "disc at ({}, {}) radius {} leaves the {:.2} cm field of view",
                d.cx,
                d.cy,
                d.r,
                2.0 * half
            )));
        }
    }
    let background = table.get(&spec.background)?;
    let discs: Vec<(&Disc, &Material)> =
        spec.discs.iter().map(|d| table.get(&d.material).map(|m| (d, m))).collect::<Result<_>>()?;
    let n = geom.image_side;
    let mut compton = Image::zeros(n);
    let mut pe = Image::zeros(n);
    for row in 0..n {
        for col in 0..n {
            let (x, y) = geom.pixel_center(row, col);
            let mut mat = match spec.background_radius {
                Some(r) if x.hypot(y) > r => None,
                _ => Some(background),
            };
            for (d, m) in &discs {
                if (x - d.cx).hypot(y - d.cy) <= d.r {
                    mat = Some(m);
                }
            }
            if let Some(m) = mat {
                compton.set(row, col, m.x_c);
                pe.set(row, col, m.x_p);
            }
        }
    }
    Ok(BasisImage { compton, pe })
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Poisson draw: inversion below a mean of 50, rounded clamped Gaussian above.
pub fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < 50.0 {
        let u = uniform(rng);
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut k = 0u64;
        while u > cdf && k < 1000 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
        }
        return k;
    }
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    (mean + mean.sqrt() * z).round().max(0.0) as u64
}

/// Generator for ray `ray` and spectrum `spectrum` (0 high, 1 low).
pub fn ray_rng(seed: u64, ray: usize, spectrum: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ray as u64 * 2 + spectrum as u64);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Noise {
    None,
    Poisson { seed: u64 },
}

#[derive(Clone, Debug)]
pub struct Simulation {
    /// Compton and photoelectric line integrals.
    pub line_integrals: (Sinogram, Sinogram),
    pub noiseless: SinogramPair,
    pub measured: SinogramPair,
    /// Detected counts (expected counts in noiseless mode).
    pub weights: SinogramPair,
    /// Rays with a zero draw in either spectrum; their weight is zero.
    pub flagged: Vec<usize>,
}

/// Projects the phantom and simulates log measurements for both spectra.
///
/// A noisy ray stores `m = −ln(N / photons)` with weight `N`; a zero draw
/// stores `−ln(0.5 / photons)` with weight zero.
pub fn simulate(
    img: &BasisImage,
    projector: &Projector,
    spectra: &SpectrumPair,
    photons: f64,
    noise: Noise,
) -> Result<Simulation> {
    if !(photons > 0.0 && photons.is_finite()) {
        return Err(DectError::Domain { what: "photons", value: photons });
    }
    let a_c = projector.forward_project(&img.compton)?;
    let a_p = projector.forward_project(&img.pe)?;
    let models: ModelPair = spectra.models();
    let (na, nd) = (a_c.n_angles(), a_c.n_detectors());
    let (ac, ap) = (a_c.as_slice(), a_p.as_slice());
    let per_ray: Vec<[f64; 6]> = (0..ac.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let a = RayIntegralPair::new(ac[i], ap[i]);
            let f = [models.high.forward(a)?, models.low.forward(a)?];
            let mut out = [f[0], f[1], 0.0, 0.0, 0.0, 0.0];
            for s in 0..2 {
                let expected = photons * (-f[s]).exp();
                let (m, w) = match noise {
                    Noise::None => (f[s], expected),
                    Noise::Poisson { seed } => {
                        let n = poisson(&mut ray_rng(seed, i, s), expected) as f64;
                        if n == 0.0 {
                            (-(0.5 / photons).ln(), 0.0)
                        } else {
                            (-(n / photons).ln(), n)
                        }
                    }
                };
                out[2 + s] = m;
                out[4 + s] = w;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let column = |k: usize| Sinogram::from_vec(na, nd, per_ray.iter().map(|r| r[k]).collect()).expect("ray count");
    let flagged = match noise {
        Noise::None => Vec::new(),
        Noise::Poisson { .. } => (0..per_ray.len()).filter(|i| per_ray[*i][4] == 0.0 || per_ray[*i][5] == 0.0).collect(),
    };
    let mut weights = SinogramPair { high: column(4), low: column(5) };
    for i in &flagged {
        weights.high.as_mut_slice()[*i] = 0.0;
        weights.low.as_mut_slice()[*i] = 0.0;
    }
    Ok(Simulation {
        line_integrals: (a_c, a_p),
        noiseless: SinogramPair { high: column(0), low: column(1) },
        measured: SinogramPair { high: column(2), low: column(3) },
        weights,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vacuum_is_zero() {
        let g = ScanGeometry::square(16, 4, 23).unwrap();
        let img = rasterize(&PhantomSpec::vacuum(), &MaterialTable::standard(), &g).unwrap();
        assert!(img.compton.as_slice().iter().chain(img.pe.as_slice()).all(|v| *v == 0.0));
    }

    #[test]
    fn full_field_is_constant() {
        let g = ScanGeometry::square(16, 4, 23).unwrap();
        let t = MaterialTable::standard();
        let spec = PhantomSpec { background: "water".into(), background_radius: None, discs: vec![] };
        let img = rasterize(&spec, &t, &g).unwrap();
        let w = t.get("water").unwrap();
        assert!(img.compton.as_slice().iter().all(|v| *v == w.x_c));
        assert!(img.pe.as_slice().iter().all(|v| *v == w.x_p));
    }

    #[test]
    fn disc_area() {
        let g = ScanGeometry::square(256, 4, 363).unwrap();
        let t = MaterialTable::standard();
        let r = 4.3;
        let spec = PhantomSpec::parse(&format!("disc 1.1 -0.7 {r} aluminum\n"), "test").unwrap();
        let img = rasterize(&spec, &t, &g).unwrap();
        let count = img.compton.as_slice().iter().filter(|v| **v > 0.0).count() as f64;
        let expect = std::f64::consts::PI * r * r / (g.pixel_pitch * g.pixel_pitch);
        assert!((count - expect).abs() <= 0.02 * expect, "{count} vs {expect}");
    }

    #[test]
    fn sim18_has_seven_regions() {
        let s = builtin_phantom("sim18").unwrap();
        assert_eq!(s.discs.len(), 7);
        assert_eq!(s.discs[0].material, "aluminum");
        let names: std::collections::HashSet<_> = s.discs.iter().map(|d| &d.material).collect();
        assert_eq!(names.len(), 7);
        assert!(!names.contains(&s.background));
        assert!(builtin_phantom("nope").is_err());
    }

    #[test]
    fn clutter_inserts_are_dense() {
        let t = MaterialTable::standard();
        let s = builtin_phantom("clutter").unwrap();
        let water = t.get("water").unwrap().x_c;
        let iron: Vec<_> = s.discs.iter().filter(|d| d.material == "iron").collect();
        assert_eq!(iron.len(), 2);
        assert!(t.get("iron").unwrap().x_c >= 5.0 * water);
    }

    #[test]
    fn spec_round_trip_and_errors() {
        let s = builtin_phantom("sim18").unwrap();
        assert_eq!(PhantomSpec::parse(&s.to_text(), "x").unwrap(), s);
        assert!(PhantomSpec::parse("disc 0 0 -1 water", "x").is_err());
        assert!(PhantomSpec::parse("box 0 0 1 water", "x").is_err());
        let g = ScanGeometry::square(16, 4, 23).unwrap();
        let far = PhantomSpec::parse("disc 12 0 2 water", "x").unwrap();
        assert!(rasterize(&far, &MaterialTable::standard(), &g).is_err());
    }

    #[test]
    fn poisson_small_mean_moments() {
        let mut rng = ray_rng(7, 0, 0);
        let n = 20000;
        let draws: Vec<f64> = (0..n).map(|_| poisson(&mut rng, 3.5) as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 3.5).abs() < 0.05, "{mean}");
        assert!((var - 3.5).abs() < 0.15, "{var}");
    }

    #[test]
    fn zero_attenuation_noiseless() {
        let g = ScanGeometry::square(8, 5, 13).unwrap();
        let p = Projector::new(g);
        let sim = simulate(&BasisImage::zeros(8), &p, &SpectrumPair::standard(), 1e5, Noise::None).unwrap();
        assert!(sim.measured.high.as_slice().iter().chain(sim.measured.low.as_slice()).all(|v| *v == 0.0));
        assert!(sim.weights.high.as_slice().iter().all(|v| *v == 1e5));
    }
}
