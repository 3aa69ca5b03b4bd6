//! Energy basis functions, source spectra and the dual-energy forward model.
//!
//! Attenuation at energy `E` is modelled as `μ(E) = x_c·f_KN(E) + x_p·f_p(E)`
//! with the Klein–Nishina function for Compton scattering and an `E⁻³` law for
//! photoelectric absorption. Integrating along a ray gives the pair of line
//! integrals `(a_c, a_p)`; the logarithmic projection recorded for a spectrum
//! `S` is
//!
//! ```text
//! m = −ln Σᵢ S(Eᵢ)·exp(−f_KN(Eᵢ)·a_c − f_p(Eᵢ)·a_p) + ln Σᵢ S(Eᵢ)
//! ```
//!
//! where the sums run over 1-keV spectrum bins.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{DectError, Result};

/// Electron rest energy used for the Klein–Nishina argument, keV.
pub const ELECTRON_REST_KEV: f64 = 510.975;

const SPECTRUM_95_KVP: &str = include_str!("../data/spectrum_95kvp.txt");
const SPECTRUM_130_KVP: &str = include_str!("../data/spectrum_130kvp.txt");

/// Klein–Nishina energy dependence of the Compton cross section, normalised
/// so that it tends to 4/3 as `E → 0`.
pub fn klein_nishina(energy_kev: f64) -> Result<f64> {
    if !(energy_kev > 0.0) {
        return Err(DectError::Domain { what: "photon energy", value: energy_kev });
    }
    let a = energy_kev / ELECTRON_REST_KEV;
    if a < 1e-4 {
        // The closed form cancels catastrophically for tiny alpha.
        let series = 4.0 / 3.0 - 8.0 / 3.0 * a + 104.0 / 15.0 * a * a - 266.0 / 15.0 * a * a * a
            + 4576.0 / 105.0 * a * a * a * a;
        return Ok(series);
    }
    let l = (2.0 * a).ln_1p();
    let one_2a = 1.0 + 2.0 * a;
    Ok((1.0 + a) / (a * a) * (2.0 * (1.0 + a) / one_2a - l / a) + l / (2.0 * a)
        - (1.0 + 3.0 * a) / (one_2a * one_2a))
}

/// Photoelectric energy dependence, `E⁻³` with `E` in keV.
pub fn pe_basis(energy_kev: f64) -> Result<f64> {
    if !(energy_kev > 0.0) {
        return Err(DectError::Domain { what: "photon energy", value: energy_kev });
    }
    Ok(energy_kev.powi(-3))
}

/// Photon counts emitted per energy bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    energies: Vec<f64>,
    counts: Vec<f64>,
    total: f64,
}

impl Spectrum {
    pub fn new(energies: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        if energies.is_empty() {
            return Err(DectError::InvalidSpectrum("no energy bins".into()));
        }
        if energies.len() != counts.len() {
            return Err(DectError::InvalidSpectrum(format!(
                "{} energies but {} counts",
                energies.len(),
                counts.len()
            )));
        }
        if energies.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(DectError::InvalidSpectrum("energies must be finite and positive".into()));
        }
        if energies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DectError::InvalidSpectrum("energies must be strictly increasing".into()));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(DectError::InvalidSpectrum("counts must be finite and nonnegative".into()));
        }
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(DectError::InvalidSpectrum("total count must be positive".into()));
        }
        Ok(Spectrum { energies, counts, total })
    }

    /// A single bin at `energy_kev`.
    pub fn monochromatic(energy_kev: f64) -> Result<Self> {
        Spectrum::new(vec![energy_kev], vec![1.0])
    }

    /// Triangular tube spectrum over 1-keV bins, zero at 10 keV and at the
    /// tube voltage, peaking at two thirds of the tube voltage. Only bins with
    /// nonzero counts are kept.
    pub fn triangle(kvp: u32) -> Result<Self> {
        const LOW_CUTOFF: u32 = 10;
        if kvp < LOW_CUTOFF + 3 {
            return Err(DectError::InvalidSpectrum(format!("tube voltage {kvp} kVp too low")));
        }
        let peak = (2.0 * kvp as f64 / 3.0).round();
        let lo = LOW_CUTOFF as f64;
        let hi = kvp as f64;
        let (energies, counts) = (LOW_CUTOFF + 1..kvp)
            .map(|e| {
                let e = e as f64;
                let shape = if e <= peak { (e - lo) / (peak - lo) } else { (hi - e) / (hi - peak) };
                (e, (shape * 1000.0 * 1e6).round() / 1e6)
            })
            .unzip();
        Spectrum::new(energies, counts)
    }

    /// Shipped 95 kVp low-energy spectrum.
    pub fn default_low() -> Self {
        Spectrum::parse(SPECTRUM_95_KVP, "spectrum_95kvp.txt").expect("bundled spectrum is valid")
    }

    /// Shipped 130 kVp high-energy spectrum.
    pub fn default_high() -> Self {
        Spectrum::parse(SPECTRUM_130_KVP, "spectrum_130kvp.txt").expect("bundled spectrum is valid")
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// Same bins with every count multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Spectrum::new(self.energies.clone(), self.counts.iter().map(|c| c * factor).collect())
    }

    /// Count-weighted mean of the Klein–Nishina function over the spectrum.
    pub fn mean_klein_nishina(&self) -> f64 {
        self.energies
            .iter()
            .zip(&self.counts)
            .map(|(e, c)| c * klein_nishina(*e).expect("validated energy"))
            .sum::<f64>()
            / self.total
    }

    /// Parses `energy_keV<TAB>count` lines; `#` starts a comment.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut energies = Vec::new();
        let mut counts = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let mut next = |name: &str| -> Result<f64> {
                let tok = fields
                    .next()
                    .ok_or_else(|| DectError::parse(source_name, idx + 1, format!("missing {name}")))?;
                tok.parse::<f64>()
                    .map_err(|e| DectError::parse(source_name, idx + 1, format!("bad {name} {tok:?}: {e}")))
            };
            energies.push(next("energy")?);
            counts.push(next("count")?);
            if fields.next().is_some() {
                return Err(DectError::parse(source_name, idx + 1, "expected two columns"));
            }
        }
        Spectrum::new(energies, counts)
    }

    pub fn to_text(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {title}");
        let _ = writeln!(out, "# electron rest energy {ELECTRON_REST_KEV} keV");
        let _ = writeln!(out, "# energy_keV\tcount");
        for (e, c) in self.energies.iter().zip(&self.counts) {
            let _ = writeln!(out, "{e}\t{c}");
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DectError::io(path, e))?;
        Spectrum::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path, title: &str) -> Result<()> {
        std::fs::write(path, self.to_text(title)).map_err(|e| DectError::io(path, e))
    }
}

/// Compton and photoelectric line integrals along one ray.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RayIntegralPair {
    pub compton: f64,
    pub pe: f64,
}

impl RayIntegralPair {
    pub fn new(compton: f64, pe: f64) -> Self {
        RayIntegralPair { compton, pe }
    }
}

/// Log projections measured with the high and low spectra.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LogProjectionPair {
    pub high: f64,
    pub low: f64,
}

/// Forward-model value and its partial derivatives at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelEval {
    pub value: f64,
    pub d_compton: f64,
    pub d_pe: f64,
}

/// Spectrum tabulated for fast repeated evaluation of the forward model.
#[derive(Clone, Debug)]
pub struct SpectralModel {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    kn: Vec<f64>,
    pe: Vec<f64>,
    mean_kn: f64,
    mean_pe: f64,
}

impl SpectralModel {
    pub fn new(spectrum: &Spectrum) -> Self {
        let mut weights = Vec::new();
        let mut kn = Vec::new();
        let mut pe = Vec::new();
        for (e, c) in spectrum.energies.iter().zip(&spectrum.counts) {
            if *c > 0.0 {
                weights.push(c / spectrum.total);
                kn.push(klein_nishina(*e).expect("validated energy"));
                pe.push(pe_basis(*e).expect("validated energy"));
            }
        }
        let mean_kn = weights.iter().zip(&kn).map(|(w, k)| w * k).sum();
        let mean_pe = weights.iter().zip(&pe).map(|(w, p)| w * p).sum();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        SpectralModel { weights, log_weights, kn, pe, mean_kn, mean_pe }
    }

    pub fn bins(&self) -> usize {
        self.weights.len()
    }

    pub fn mean_klein_nishina(&self) -> f64 {
        self.mean_kn
    }

    pub fn mean_pe(&self) -> f64 {
        self.mean_pe
    }

    pub fn forward(&self, a: RayIntegralPair) -> Result<f64> {
        self.evaluate(a).map(|e| e.value)
    }

    /// Value and Jacobian in one pass over the bins.
    ///
    /// Nonnegative attenuation uses `−ln1p(Σ pᵢ·expm1(−τᵢ))`, which is exact at
    /// zero and never negative; strongly attenuated or negative arguments fall
    /// back to a shifted log-sum-exp.
    pub fn evaluate(&self, a: RayIntegralPair) -> Result<ModelEval> {
        if a.compton == 0.0 && a.pe == 0.0 {
            return Ok(ModelEval { value: 0.0, d_compton: self.mean_kn, d_pe: self.mean_pe });
        }
        let mut min_tau = f64::INFINITY;
        let mut max_log = f64::NEG_INFINITY;
        for i in 0..self.weights.len() {
            let tau = self.kn[i] * a.compton + self.pe[i] * a.pe;
            min_tau = min_tau.min(tau);
            max_log = max_log.max(self.log_weights[i] - tau);
        }
        if !(min_tau.is_finite() && max_log.is_finite()) {
            return Err(DectError::Saturated { max: f64::MAX });
        }

        if min_tau >= 0.0 {
            let (mut s, mut sc, mut sp) = (0.0, 0.0, 0.0);
            for i in 0..self.weights.len() {
                let tau = self.kn[i] * a.compton + self.pe[i] * a.pe;
                let em1 = (-tau).exp_m1();
                s += self.weights[i] * em1;
                let t = self.weights[i] * (1.0 + em1);
                sc += t * self.kn[i];
                sp += t * self.pe[i];
            }
            if s > -0.5 {
                let norm = 1.0 + s;
                return Ok(ModelEval { value: -s.ln_1p(), d_compton: sc / norm, d_pe: sp / norm });
            }
        }

        let (mut norm, mut sc, mut sp) = (0.0, 0.0, 0.0);
        for i in 0..self.weights.len() {
            let tau = self.kn[i] * a.compton + self.pe[i] * a.pe;
            let t = (self.log_weights[i] - tau - max_log).exp();
            norm += t;
            sc += t * self.kn[i];
            sp += t * self.pe[i];
        }
        let value = -(max_log + norm.ln());
        if !value.is_finite() {
            return Err(DectError::Saturated { max: f64::MAX });
        }
        let value = if min_tau >= 0.0 { value.max(0.0) } else { value };
        Ok(ModelEval { value, d_compton: sc / norm, d_pe: sp / norm })
    }
}

/// Forward model `f(a)` for a single spectrum.
pub fn forward_f(a: RayIntegralPair, spectrum: &Spectrum) -> Result<f64> {
    SpectralModel::new(spectrum).forward(a)
}

/// `(∂m/∂a_c, ∂m/∂a_p)` for a single spectrum.
pub fn forward_f_jacobian(a: RayIntegralPair, spectrum: &Spectrum) -> Result<(f64, f64)> {
    SpectralModel::new(spectrum).evaluate(a).map(|e| (e.d_compton, e.d_pe))
}

/// High- and low-energy spectra of a dual-energy scan.
#[derive(Clone, Debug)]
pub struct SpectrumPair {
    pub high: Spectrum,
    pub low: Spectrum,
}

impl SpectrumPair {
    pub fn new(high: Spectrum, low: Spectrum) -> Self {
        SpectrumPair { high, low }
    }

    /// 130 kVp / 95 kVp triangular spectra shipped with the crate.
    pub fn standard() -> Self {
        SpectrumPair { high: Spectrum::default_high(), low: Spectrum::default_low() }
    }

    pub fn monochromatic(high_kev: f64, low_kev: f64) -> Result<Self> {
        Ok(SpectrumPair { high: Spectrum::monochromatic(high_kev)?, low: Spectrum::monochromatic(low_kev)? })
    }

    pub fn models(&self) -> ModelPair {
        ModelPair { high: SpectralModel::new(&self.high), low: SpectralModel::new(&self.low) }
    }
}

#[derive(Clone, Debug)]
pub struct ModelPair {
    pub high: SpectralModel,
    pub low: SpectralModel,
}

#[cfg(test)]
mod tests {
    use super::*;

    // 50-digit evaluations of the closed form (mpmath).
    const KN_60: f64 = 1.093561657703319840072948;
    const KN_95: f64 = 0.9992600512261043782747014;
    const KN_130: f64 = 0.924961355102244413557521;
    // Taylor series 4/3 − 8a/3 + 104a²/15 − 266a³/15 + 4576a⁴/105 (sympy) at 0.01 keV.
    const KN_SERIES_0_01: f64 = 1.333281148177794413870987;
    // High-precision two-bin {(60,1),(80,1)} forward model at (1, 1e5).
    const TWO_BIN_FWD: f64 = 1.38120333635862155143705;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn klein_nishina_low_energy_limit() {
        let v = klein_nishina(0.01).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-4);
        assert!(rel(v, KN_SERIES_0_01) < 1e-12);
    }

    #[test]
    fn klein_nishina_matches_high_precision() {
        for (e, want) in [(60.0, KN_60), (95.0, KN_95), (130.0, KN_130)] {
            assert!(rel(klein_nishina(e).unwrap(), want) < 1e-12, "E = {e}");
        }
        // the series branch and the closed form agree where they meet
        let e = 1e-4 * ELECTRON_REST_KEV;
        let a = e / ELECTRON_REST_KEV;
        let l = (2.0 * a).ln_1p();
        let closed = (1.0 + a) / (a * a) * (2.0 * (1.0 + a) / (1.0 + 2.0 * a) - l / a) + l / (2.0 * a)
            - (1.0 + 3.0 * a) / ((1.0 + 2.0 * a) * (1.0 + 2.0 * a));
        assert!(rel(klein_nishina(e).unwrap(), closed) < 1e-7);
    }

    #[test]
    fn klein_nishina_decreasing() {
        assert!(klein_nishina(100.0).unwrap() > klein_nishina(130.0).unwrap());
        let mut prev = klein_nishina(10.0).unwrap();
        for e in 11..=200 {
            let v = klein_nishina(e as f64).unwrap();
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
    }

    #[test]
    fn basis_domain_errors() {
        assert!(matches!(klein_nishina(0.0), Err(DectError::Domain { .. })));
        assert!(matches!(klein_nishina(-3.0), Err(DectError::Domain { .. })));
        assert!(matches!(pe_basis(0.0), Err(DectError::Domain { .. })));
        assert!(klein_nishina(f64::NAN).is_err());
    }

    #[test]
    fn pe_basis_cubic_decay() {
        assert_eq!(pe_basis(1.0).unwrap(), 1.0);
        assert_eq!(pe_basis(2.0).unwrap(), 0.125);
        for e in [0.3, 7.0, 60.0, 130.0] {
            assert!(rel(pe_basis(2.0 * e).unwrap() / pe_basis(e).unwrap(), 0.125) < 1e-15);
        }
    }

    #[test]
    fn spectrum_validation() {
        assert!(Spectrum::new(vec![], vec![]).is_err());
        assert!(Spectrum::new(vec![50.0, 40.0], vec![1.0, 1.0]).is_err());
        assert!(Spectrum::new(vec![40.0, 50.0], vec![1.0, -1.0]).is_err());
        assert!(Spectrum::new(vec![40.0, 50.0], vec![0.0, 0.0]).is_err());
        assert!(Spectrum::new(vec![0.0, 50.0], vec![1.0, 1.0]).is_err());
        let s = Spectrum::new(vec![40.0, 50.0], vec![0.0, 2.0]).unwrap();
        assert_eq!(s.total(), 2.0);
    }

    #[test]
    fn shipped_spectra_match_generator() {
        assert_eq!(Spectrum::default_low(), Spectrum::triangle(95).unwrap());
        assert_eq!(Spectrum::default_high(), Spectrum::triangle(130).unwrap());
        let high = Spectrum::default_high();
        assert_eq!(high.energies().first(), Some(&11.0));
        assert_eq!(high.energies().last(), Some(&129.0));
        let peak = high.counts().iter().cloned().fold(0.0, f64::max);
        let at = high.counts().iter().position(|c| *c == peak).unwrap();
        assert_eq!(high.energies()[at], 87.0);
    }

    #[test]
    fn spectrum_text_round_trip() {
        let s = Spectrum::triangle(95).unwrap();
        let back = Spectrum::parse(&s.to_text("test"), "mem").unwrap();
        assert_eq!(s, back);
        let err = Spectrum::parse("60\t1\n70 x\n", "mem").unwrap_err();
        assert!(matches!(err, DectError::Parse { line: 2, .. }));
    }

    #[test]
    fn forward_zero_is_zero() {
        for s in [Spectrum::default_high(), Spectrum::default_low(), Spectrum::monochromatic(70.0).unwrap()] {
            assert_eq!(forward_f(RayIntegralPair::new(0.0, 0.0), &s).unwrap(), 0.0);
        }
    }

    #[test]
    fn forward_single_bin_is_linear() {
        let e0 = 73.0;
        let s = Spectrum::new(vec![e0], vec![5.0]).unwrap();
        let (kn, pe) = (klein_nishina(e0).unwrap(), pe_basis(e0).unwrap());
        for (ac, ap) in [(1.0, 1e5), (0.3, 0.0), (2.0, 3e4), (0.01, 10.0)] {
            let v = forward_f(RayIntegralPair::new(ac, ap), &s).unwrap();
            assert!(rel(v, kn * ac + pe * ap) < 1e-13);
            let (dc, dp) = forward_f_jacobian(RayIntegralPair::new(ac, ap), &s).unwrap();
            assert!(rel(dc, kn) < 1e-14 && rel(dp, pe) < 1e-14);
        }
    }

    #[test]
    fn forward_two_bin_high_precision() {
        let s = Spectrum::new(vec![60.0, 80.0], vec![1.0, 1.0]).unwrap();
        let v = forward_f(RayIntegralPair::new(1.0, 1e5), &s).unwrap();
        assert!(rel(v, TWO_BIN_FWD) < 1e-12, "{v}");
    }

    #[test]
    fn jacobian_at_origin_is_weighted_mean() {
        let s = Spectrum::default_high();
        let (dc, dp) = forward_f_jacobian(RayIntegralPair::default(), &s).unwrap();
        let mean_pe: f64 =
            s.energies().iter().zip(s.counts()).map(|(e, c)| c * e.powi(-3)).sum::<f64>() / s.total();
        assert!(rel(dc, s.mean_klein_nishina()) < 1e-14);
        assert!(rel(dp, mean_pe) < 1e-14);
        // tiny perturbation away from the origin takes the general branch
        let (dc2, dp2) = forward_f_jacobian(RayIntegralPair::new(1e-12, 0.0), &s).unwrap();
        assert!(rel(dc2, dc) < 1e-9 && rel(dp2, dp) < 1e-9);
    }

    #[test]
    fn jacobian_finite_difference_at_reference_point() {
        let s = Spectrum::default_low();
        let model = SpectralModel::new(&s);
        let a = RayIntegralPair::new(1.0, 1e5);
        let e = model.evaluate(a).unwrap();
        let h = 1e-6;
        let fd_c = (model.forward(RayIntegralPair::new(1.0 + h, 1e5)).unwrap()
            - model.forward(RayIntegralPair::new(1.0 - h, 1e5)).unwrap())
            / (2.0 * h);
        let hp = h * 1e5;
        let fd_p = (model.forward(RayIntegralPair::new(1.0, 1e5 + hp)).unwrap()
            - model.forward(RayIntegralPair::new(1.0, 1e5 - hp)).unwrap())
            / (2.0 * hp);
        assert!(rel(e.d_compton, fd_c) < 1e-5);
        assert!(rel(e.d_pe, fd_p) < 1e-5);
    }

    #[test]
    fn log_sum_exp_branch_handles_heavy_and_negative_attenuation() {
        let s = Spectrum::new(vec![60.0, 120.0], vec![1.0, 1.0]).unwrap();
        let model = SpectralModel::new(&s);
        // far beyond the point where every exp(−τ) underflows; the 60 keV bin
        // is suppressed by a further e^-300
        let v = model.forward(RayIntegralPair::new(2000.0, 0.0)).unwrap();
        let expected = klein_nishina(120.0).unwrap() * 2000.0 + 2f64.ln();
        assert!(rel(v, expected) < 1e-12, "{v}");
        let neg = model.forward(RayIntegralPair::new(-0.5, 0.0)).unwrap();
        assert!(neg < 0.0);
        assert!(matches!(model.forward(RayIntegralPair::new(f64::INFINITY, 0.0)), Err(DectError::Saturated { .. })));
    }
}
