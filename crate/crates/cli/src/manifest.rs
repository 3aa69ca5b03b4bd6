//! `manifest.txt` of a simulation directory: `key value` lines naming the
//! geometry, the noise settings and the files written next to it.

use std::path::Path;

use anyhow::{bail, Context, Result};
use dect_core::io::read_angles;
use dect_core::ScanGeometry;

pub const FILE: &str = "manifest.txt";
pub const ANGLES: &str = "angles.txt";
pub const SPECTRUM_HIGH: &str = "spectrum_high.txt";
pub const SPECTRUM_LOW: &str = "spectrum_low.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub generator: String,
    pub phantom: String,
    pub side: usize,
    pub pixel_pitch_cm: f64,
    pub detector_count: usize,
    pub detector_pitch_cm: f64,
    pub photons: f64,
    pub seed: u64,
    pub noise: String,
    pub flagged_rays: usize,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        format!(
            "generator {}\nphantom {}\nside {}\npixel_pitch_cm {}\ndetector_count {}\ndetector_pitch_cm {}\n\
             angles_file {ANGLES}\nspectrum_high {SPECTRUM_HIGH}\nspectrum_low {SPECTRUM_LOW}\n\
             photons {}\nseed {}\nnoise {}\nflagged_rays {}\n",
            self.generator,
            self.phantom,
            self.side,
            self.pixel_pitch_cm,
            self.detector_count,
            self.detector_pitch_cm,
            self.photons,
            self.seed,
            self.noise,
            self.flagged_rays
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest {
            generator: String::new(),
            phantom: String::new(),
            side: 0,
            pixel_pitch_cm: 0.0,
            detector_count: 0,
            detector_pitch_cm: 0.0,
            photons: 0.0,
            seed: 0,
            noise: String::new(),
            flagged_rays: 0,
        };
        let mut seen = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) =
                line.split_once(' ').with_context(|| format!("{FILE} line {}: expected `key value`", i + 1))?;
            let value = value.trim();
            let ctx = || format!("{FILE} line {}: bad value for {key}", i + 1);
            match key {
                "generator" => m.generator = value.into(),
                "phantom" => m.phantom = value.into(),
                "side" => m.side = value.parse().with_context(ctx)?,
                "pixel_pitch_cm" => m.pixel_pitch_cm = value.parse().with_context(ctx)?,
                "detector_count" => m.detector_count = value.parse().with_context(ctx)?,
                "detector_pitch_cm" => m.detector_pitch_cm = value.parse().with_context(ctx)?,
                "photons" => m.photons = value.parse().with_context(ctx)?,
                "seed" => m.seed = value.parse().with_context(ctx)?,
                "noise" => m.noise = value.into(),
                "flagged_rays" => m.flagged_rays = value.parse().with_context(ctx)?,
                "angles_file" | "spectrum_high" | "spectrum_low" => {
                    let expected = match key {
                        "angles_file" => ANGLES,
                        "spectrum_high" => SPECTRUM_HIGH,
                        _ => SPECTRUM_LOW,
                    };
                    if value != expected {
                        bail!("{FILE}: {key} must be {expected}, got {value}");
                    }
                }
                other => bail!("{FILE} line {}: unknown key '{other}'", i + 1),
            }
            seen.push(key.to_string());
        }
        for key in ["side", "pixel_pitch_cm", "detector_count", "detector_pitch_cm"] {
            if !seen.iter().any(|k| k == key) {
                bail!("{FILE}: missing key '{key}'");
            }
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn geometry(&self, dir: &Path) -> Result<ScanGeometry> {
        let angles = read_angles(&dir.join(ANGLES))?;
        Ok(ScanGeometry::new(self.side, self.pixel_pitch_cm, angles, self.detector_count, self.detector_pitch_cm)?)
    }
}
