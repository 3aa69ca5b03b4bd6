use std::f64::consts::PI;

use crate::error::{DectError, Result};

/// Field of view edge length used by the named presets, cm.
pub const DEFAULT_FOV_CM: f64 = 25.6;

/// Parallel-beam scan over a square pixel grid centred on the rotation axis.
///
/// Pixel `(row, col)` has its centre at
/// `x = (col − (n−1)/2)·pitch`, `y = ((n−1)/2 − row)·pitch`; detector bin `k`
/// sits at `t = (k − (D−1)/2)·detector_pitch`. A ray at angle θ is the line
/// `x·cosθ + y·sinθ = t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGeometry {
    pub image_side: usize,
    pub pixel_pitch: f64,
    pub angles: Vec<f64>,
    pub detector_count: usize,
    pub detector_pitch: f64,
}

impl ScanGeometry {
    pub fn new(
        image_side: usize,
        pixel_pitch: f64,
        angles: Vec<f64>,
        detector_count: usize,
        detector_pitch: f64,
    ) -> Result<Self> {
        if image_side == 0 {
            return Err(DectError::Geometry("image side must be at least one pixel".into()));
        }
        if detector_count == 0 {
            return Err(DectError::Geometry("need at least one detector bin".into()));
        }
        if angles.is_empty() {
            return Err(DectError::Geometry("need at least one projection angle".into()));
        }
        if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
            return Err(DectError::Geometry(format!("pixel pitch {pixel_pitch} must be positive")));
        }
        if !(detector_pitch > 0.0 && detector_pitch.is_finite()) {
            return Err(DectError::Geometry(format!("detector pitch {detector_pitch} must be positive")));
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(DectError::Geometry("angles must be finite".into()));
        }
        let geom = ScanGeometry { image_side, pixel_pitch, angles, detector_count, detector_pitch };
        if !geom.covers_diagonal() {
            log::warn!(
                "detector span {:.3} cm does not cover the image diagonal {:.3} cm",
                geom.detector_span(),
                geom.image_diagonal()
            );
        }
        Ok(geom)
    }

    /// `count` angles evenly spaced over `[0, π)`.
    pub fn uniform_angles(count: usize) -> Vec<f64> {
        (0..count).map(|k| k as f64 * PI / count as f64).collect()
    }

    /// Square image of `side` pixels over the default field of view with
    /// detector pitch equal to the pixel pitch.
    pub fn square(side: usize, n_angles: usize, n_detectors: usize) -> Result<Self> {
        if side == 0 {
            return Err(DectError::Geometry("image side must be at least one pixel".into()));
        }
        let pitch = DEFAULT_FOV_CM / side as f64;
        ScanGeometry::new(side, pitch, Self::uniform_angles(n_angles), n_detectors, pitch)
    }

    /// 128×128 pixels, 180 angles, 185 detectors.
    pub fn desk() -> Self {
        Self::square(128, 180, 185).expect("valid preset")
    }

    /// 512×512 pixels, 720 angles, 725 detectors.
    pub fn paper() -> Self {
        Self::square(512, 720, 725).expect("valid preset")
    }

    /// `desk`, `paper` or `WxH:A:D` (W must equal H).
    pub fn parse_preset(text: &str) -> Result<Self> {
        match text {
            "desk" => return Ok(Self::desk()),
            "paper" => return Ok(Self::paper()),
            _ => {}
        }
        let bad = || DectError::Geometry(format!("expected desk, paper or WxH:A:D, got {text:?}"));
        let mut parts = text.split(':');
        let (dims, angles, dets) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(d), Some(a), Some(k), None) => (d, a, k),
            _ => return Err(bad()),
        };
        let (w, h) = dims.split_once(['x', 'X']).ok_or_else(bad)?;
        let w: usize = w.trim().parse().map_err(|_| bad())?;
        let h: usize = h.trim().parse().map_err(|_| bad())?;
        if w != h {
            return Err(DectError::Geometry(format!("only square images are supported, got {w}x{h}")));
        }
        let a: usize = angles.trim().parse().map_err(|_| bad())?;
        let d: usize = dets.trim().parse().map_err(|_| bad())?;
        Self::square(w, a, d)
    }

    pub fn n_pixels(&self) -> usize {
        self.image_side * self.image_side
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn n_rays(&self) -> usize {
        self.angles.len() * self.detector_count
    }

    pub fn detector_span(&self) -> f64 {
        self.detector_count as f64 * self.detector_pitch
    }

    pub fn image_diagonal(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.image_side as f64 * self.pixel_pitch
    }

    pub fn covers_diagonal(&self) -> bool {
        self.detector_span() >= self.image_diagonal() - 1e-9
    }

    /// Detector coordinate of bin `k`, cm.
    pub fn detector_position(&self, k: usize) -> f64 {
        (k as f64 - (self.detector_count as f64 - 1.0) / 2.0) * self.detector_pitch
    }

    /// Centre of pixel `(row, col)`, cm.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let half = (self.image_side as f64 - 1.0) / 2.0;
        ((col as f64 - half) * self.pixel_pitch, (half - row as f64) * self.pixel_pitch)
    }

    pub fn blank_image(&self) -> Image {
        Image::zeros(self.image_side)
    }

    pub fn blank_sinogram(&self) -> Sinogram {
        Sinogram::zeros(self.n_angles(), self.detector_count)
    }

    pub(crate) fn check_image(&self, img: &Image) -> Result<()> {
        if img.side() != self.image_side {
            return Err(DectError::dims(
                format!("{0}x{0} image", self.image_side),
                format!("{0}x{0} image", img.side()),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_sinogram(&self, s: &Sinogram) -> Result<()> {
        if s.n_angles() != self.n_angles() || s.n_detectors() != self.detector_count {
            return Err(DectError::dims(
                format!("{}x{} sinogram", self.n_angles(), self.detector_count),
                format!("{}x{} sinogram", s.n_angles(), s.n_detectors()),
            ));
        }
        Ok(())
    }
}

/// Square image stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    side: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(side: usize) -> Self {
        Image { side, data: vec![0.0; side * side] }
    }

    pub fn filled(side: usize, value: f64) -> Self {
        Image { side, data: vec![value; side * side] }
    }

    pub fn from_vec(side: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != side * side {
            return Err(DectError::dims(format!("{} pixels", side * side), format!("{} values", data.len())));
        }
        Ok(Image { side, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.side + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.side + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image { side: self.side, data: self.data.iter().map(|v| f(*v)).collect() }
    }
}

/// Projection data, angle-major: `values[angle * detectors + bin]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    n_angles: usize,
    n_detectors: usize,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(n_angles: usize, n_detectors: usize) -> Self {
        Sinogram { n_angles, n_detectors, data: vec![0.0; n_angles * n_detectors] }
    }

    pub fn from_vec(n_angles: usize, n_detectors: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_angles * n_detectors {
            return Err(DectError::dims(
                format!("{} values", n_angles * n_detectors),
                format!("{} values", data.len()),
            ));
        }
        Ok(Sinogram { n_angles, n_detectors, data })
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, angle: usize, bin: usize) -> f64 {
        self.data[angle * self.n_detectors + bin]
    }

    pub fn row(&self, angle: usize) -> &[f64] {
        &self.data[angle * self.n_detectors..(angle + 1) * self.n_detectors]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Sinogram) -> bool {
        self.n_angles == other.n_angles && self.n_detectors == other.n_detectors
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Sinogram {
        Sinogram { n_angles: self.n_angles, n_detectors: self.n_detectors, data: self.data.iter().map(|v| f(*v)).collect() }
    }
}

/// Per-spectrum pair of sinogram-shaped arrays (log projections, weights).
#[derive(Clone, Debug, PartialEq)]
pub struct SinogramPair {
    pub high: Sinogram,
    pub low: Sinogram,
}

impl SinogramPair {
    pub fn new(high: Sinogram, low: Sinogram) -> Result<Self> {
        if !high.same_shape(&low) {
            return Err(DectError::dims(
                format!("{}x{}", high.n_angles(), high.n_detectors()),
                format!("{}x{}", low.n_angles(), low.n_detectors()),
            ));
        }
        Ok(SinogramPair { high, low })
    }

    pub fn zeros(n_angles: usize, n_detectors: usize) -> Self {
        SinogramPair { high: Sinogram::zeros(n_angles, n_detectors), low: Sinogram::zeros(n_angles, n_detectors) }
    }

    pub fn n_rays(&self) -> usize {
        self.high.len()
    }

    pub fn same_shape(&self, other: &SinogramPair) -> bool {
        self.high.same_shape(&other.high)
    }
}

/// Compton and photoelectric coefficient images.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisImage {
    pub compton: Image,
    pub pe: Image,
}

impl BasisImage {
    pub fn zeros(side: usize) -> Self {
        BasisImage { compton: Image::zeros(side), pe: Image::zeros(side) }
    }
}
