//! File formats: raw little-endian `f32` arrays with a text header, 16-bit
//! PGM previews, angle lists and telemetry CSV.
//!
//! A raw array `name.raw` is described by `name.hdr`, a list of `key value`
//! lines: `kind` (`image` or `sinogram`), `rows`, `cols` and optionally
//! `pitch_cm` and `angles_file`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::admm::IterationRecord;
use crate::error::{DectError, Result};
use crate::projector::{Image, Sinogram};

#[derive(Clone, Debug, PartialEq)]
pub struct RawHeader {
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    pub pitch_cm: Option<f64>,
    pub angles_file: Option<String>,
}

impl RawHeader {
    pub fn to_text(&self) -> String {
        let mut s = format!("kind {}\nrows {}\ncols {}\n", self.kind, self.rows, self.cols);
        if let Some(p) = self.pitch_cm {
            s.push_str(&format!("pitch_cm {p}\n"));
        }
        if let Some(a) = &self.angles_file {
            s.push_str(&format!("angles_file {a}\n"));
        }
        s
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let (mut kind, mut rows, mut cols, mut pitch_cm, mut angles_file) = (None, None, None, None, None);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: &str| DectError::parse(source_name, i + 1, m);
            let (key, value) = line.split_once(char::is_whitespace).ok_or_else(|| err("expected: key value"))?;
            let value = value.trim();
            match key {
                "kind" => kind = Some(value.to_string()),
                "rows" => rows = Some(value.parse().map_err(|_| err("rows is not an integer"))?),
                "cols" => cols = Some(value.parse().map_err(|_| err("cols is not an integer"))?),
                "pitch_cm" => pitch_cm = Some(value.parse().map_err(|_| err("pitch_cm is not a number"))?),
                "angles_file" => angles_file = Some(value.to_string()),
                other => return Err(err(&format!("unknown key '{other}'"))),
            }
        }
        let missing = |k: &str| DectError::parse(source_name, 0, &format!("missing key '{k}'"));
        Ok(RawHeader {
            kind: kind.ok_or_else(|| missing("kind"))?,
            rows: rows.ok_or_else(|| missing("rows"))?,
            cols: cols.ok_or_else(|| missing("cols"))?,
            pitch_cm,
            angles_file,
        })
    }
}

pub fn header_path(data: &Path) -> PathBuf {
    data.with_extension("hdr")
}

pub fn write_raw(path: &Path, header: &RawHeader, data: &[f64]) -> Result<()> {
    if data.len() != header.rows * header.cols {
        return Err(DectError::dims(header.rows * header.cols, data.len()));
    }
    let bytes: Vec<u8> = data.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| DectError::io(path, e))?;
    let hp = header_path(path);
    std::fs::write(&hp, header.to_text()).map_err(|e| DectError::io(hp, e))
}

pub fn read_raw(path: &Path) -> Result<(RawHeader, Vec<f64>)> {
    let hp = header_path(path);
    let text = std::fs::read_to_string(&hp).map_err(|e| DectError::io(&hp, e))?;
    let header = RawHeader::parse(&text, &hp.display().to_string())?;
    let bytes = std::fs::read(path).map_err(|e| DectError::io(path, e))?;
    let expected = header.rows * header.cols * 4;
    if bytes.len() != expected {
        return Err(DectError::dims(format!("{expected} bytes"), format!("{} bytes", bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok((header, data))
}

pub fn save_image(path: &Path, img: &Image, pitch_cm: f64) -> Result<()> {
    let h = RawHeader { kind: "image".into(), rows: img.side(), cols: img.side(), pitch_cm: Some(pitch_cm), angles_file: None };
    write_raw(path, &h, img.as_slice())
}

pub fn load_image(path: &Path) -> Result<Image> {
    let (h, data) = read_raw(path)?;
    if h.kind != "image" || h.rows != h.cols {
        return Err(DectError::Config(format!("{} is not a square image", path.display())));
    }
    Image::from_vec(h.rows, data)
}

pub fn save_sinogram(path: &Path, s: &Sinogram, angles_file: Option<&str>) -> Result<()> {
    let h = RawHeader {
        kind: "sinogram".into(),
        rows: s.n_angles(),
        cols: s.n_detectors(),
        pitch_cm: None,
        angles_file: angles_file.map(str::to_string),
    };
    write_raw(path, &h, s.as_slice())
}

pub fn load_sinogram(path: &Path) -> Result<Sinogram> {
    let (h, data) = read_raw(path)?;
    if h.kind != "sinogram" {
        return Err(DectError::Config(format!("{} is not a sinogram", path.display())));
    }
    Sinogram::from_vec(h.rows, h.cols, data)
}

/// One angle in radians per line.
pub fn write_angles(path: &Path, angles: &[f64]) -> Result<()> {
    let text: String = angles.iter().map(|a| format!("{a:.17e}\n")).collect();
    std::fs::write(path, text).map_err(|e| DectError::io(path, e))
}

pub fn read_angles(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| DectError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|_| DectError::parse(&path.display().to_string(), i + 1, "not a number"))
        })
        .collect()
}

/// 16-bit binary PGM mapping `[lo, hi]` to `[0, 65535]`; the window is
/// recorded in a comment.
pub fn write_pgm(path: &Path, img: &Image, lo: f64, hi: f64) -> Result<()> {
    if !(hi > lo) {
        return Err(DectError::Config(format!("empty display window [{lo}, {hi}]")));
    }
    let n = img.side();
    let mut bytes = format!("P5\n# window {lo} {hi}\n{n} {n}\n65535\n").into_bytes();
    for v in img.as_slice() {
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        bytes.extend_from_slice(&((t * 65535.0).round() as u16).to_be_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| DectError::io(path, e))
}

/// Display window spanning the 0.5th to 99.5th percentile.
pub fn auto_window(img: &Image) -> (f64, f64) {
    let mut v: Vec<f64> = img.as_slice().iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (0.0, 1.0);
    }
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
    let (lo, hi) = (at(0.005), at(0.995));
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

/// Telemetry CSV, flushed after every row. Untimed files omit `wall_ms`.
pub struct TelemetryWriter {
    out: BufWriter<File>,
    path: PathBuf,
    timed: bool,
}

impl TelemetryWriter {
    pub fn create(path: &Path, timed: bool) -> Result<Self> {
        let file = File::create(path).map_err(|e| DectError::io(path, e))?;
        let mut w = TelemetryWriter { out: BufWriter::new(file), path: path.to_path_buf(), timed };
        let header = IterationRecord::CSV_HEADER;
        w.line(if timed { header } else { &header[..header.rfind(',').expect("fixed columns")] })?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").and_then(|_| self.out.flush()).map_err(|e| DectError::io(&self.path, e))
    }

    pub fn write(&mut self, rec: &IterationRecord) -> Result<()> {
        let row = if self.timed { rec.csv_row() } else { rec.csv_row_untimed() };
        self.line(&row)
    }
}
