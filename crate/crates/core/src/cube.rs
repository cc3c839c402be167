//! Hypercube container, ENVI-style file I/O, panel reflectance conversion and
//! noisy-band masking.
//!
//! Cubes are held in memory as `f64` in band-interleaved-by-pixel order, so a
//! pixel spectrum is a contiguous slice. On disk a cube is a pair of files:
//! `<name>.hdr` (UTF-8 `key = value` lines) and `<name>.raw` (little-endian
//! samples in `bip`, `bil` or `bsq` order).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Raw,
    Radiance,
    Reflectance,
    Abundance,
}

impl Units {
    fn as_str(self) -> &'static str {
        match self {
            Units::Raw => "raw",
            Units::Radiance => "radiance",
            Units::Reflectance => "reflectance",
            Units::Abundance => "abundance",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Some(Units::Raw),
            "radiance" => Some(Units::Radiance),
            "reflectance" => Some(Units::Reflectance),
            "abundance" => Some(Units::Abundance),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interleave {
    Bip,
    Bil,
    Bsq,
}

impl Interleave {
    fn as_str(self) -> &'static str {
        match self {
            Interleave::Bip => "bip",
            Interleave::Bil => "bil",
            Interleave::Bsq => "bsq",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bip" => Some(Interleave::Bip),
            "bil" => Some(Interleave::Bil),
            "bsq" => Some(Interleave::Bsq),
            _ => None,
        }
    }

    /// Offset (in samples) of element (row, col, band) in the on-disk order.
    fn offset(self, rows: usize, cols: usize, bands: usize, r: usize, c: usize, b: usize) -> usize {
        match self {
            Interleave::Bip => (r * cols + c) * bands + b,
            Interleave::Bil => (r * bands + b) * cols + c,
            Interleave::Bsq => (b * rows + r) * cols + c,
        }
    }
}

/// On-disk sample type, numbered as in ENVI headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleType {
    U16,
    F32,
    F64,
}

impl SampleType {
    fn code(self) -> u32 {
        match self {
            SampleType::F32 => 4,
            SampleType::F64 => 5,
            SampleType::U16 => 12,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            4 => Some(SampleType::F32),
            5 => Some(SampleType::F64),
            12 => Some(SampleType::U16),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            SampleType::U16 => 2,
            SampleType::F32 => 4,
            SampleType::F64 => 8,
        }
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl PixelRect {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.height == 0 || self.width == 0
    }

    pub fn fits(&self, rows: usize, cols: usize) -> bool {
        self.top + self.height <= rows && self.left + self.width <= cols
    }
}

/// A rows x cols x bands raster with per-band wavelengths in nanometres.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    rows: usize,
    cols: usize,
    bands: usize,
    wavelengths: Vec<f64>,
    data: Vec<f64>,
    units: Units,
}

impl HyperCube {
    /// Builds a cube from BIP-ordered data (`data[(r * cols + c) * bands + b]`).
    pub fn new(
        rows: usize,
        cols: usize,
        wavelengths: Vec<f64>,
        data: Vec<f64>,
        units: Units,
    ) -> Result<Self> {
        let bands = wavelengths.len();
        if bands == 0 {
            return Err(Error::InvalidCube("cube has no bands".into()));
        }
        if wavelengths.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidCube(
                "wavelengths must be strictly increasing".into(),
            ));
        }
        if data.len() != rows * cols * bands {
            return Err(Error::InvalidCube(format!(
                "data length {} != {rows} x {cols} x {bands}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidCube(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            rows,
            cols,
            bands,
            wavelengths,
            data,
            units,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, r: usize, c: usize) -> &[f64] {
        let start = (r * self.cols + c) * self.bands;
        &self.data[start..start + self.bands]
    }

    /// Pixel by linear (row-major) index.
    pub fn pixel_at(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.bands..(idx + 1) * self.bands]
    }

    pub fn get(&self, r: usize, c: usize, b: usize) -> f64 {
        self.data[(r * self.cols + c) * self.bands + b]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.bands)
    }

    /// Copy of the sub-cube covering `rect`.
    pub fn crop(&self, rect: PixelRect) -> Result<HyperCube> {
        if rect.is_empty() || !rect.fits(self.rows, self.cols) {
            return Err(Error::Dimension(format!(
                "crop {rect:?} outside {}x{} cube",
                self.rows, self.cols
            )));
        }
        let mut data = Vec::with_capacity(rect.height * rect.width * self.bands);
        for r in rect.top..rect.top + rect.height {
            let start = (r * self.cols + rect.left) * self.bands;
            data.extend_from_slice(&self.data[start..start + rect.width * self.bands]);
        }
        Ok(HyperCube {
            rows: rect.height,
            cols: rect.width,
            bands: self.bands,
            wavelengths: self.wavelengths.clone(),
            data,
            units: self.units,
        })
    }
}

/// Per-band keep flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandMask {
    keep: Vec<bool>,
}

impl BandMask {
    pub fn new(keep: Vec<bool>) -> Self {
        Self { keep }
    }

    pub fn all(bands: usize) -> Self {
        Self {
            keep: vec![true; bands],
        }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        (0..self.keep.len()).filter(|&i| self.keep[i]).collect()
    }
}

/// Wavelength rule producing a [`BandMask`]: keep `[min_nm, max_nm]` minus
/// each absorption window `center ± width / 2` (inclusive bounds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMaskSpec {
    pub min_nm: f64,
    pub max_nm: f64,
    #[serde(default)]
    pub absorption_windows: Vec<AbsorptionWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionWindow {
    pub center_nm: f64,
    pub width_nm: f64,
}

impl Default for BandMaskSpec {
    /// 430-870 nm with the O2 (760 nm) and H2O (820 nm) windows removed; on
    /// the 240-band 400-900 nm grid this keeps 190 bands.
    fn default() -> Self {
        Self {
            min_nm: 430.0,
            max_nm: 870.0,
            absorption_windows: vec![
                AbsorptionWindow {
                    center_nm: 760.0,
                    width_nm: 20.0,
                },
                AbsorptionWindow {
                    center_nm: 820.0,
                    width_nm: 24.0,
                },
            ],
        }
    }
}

impl BandMaskSpec {
    pub fn mask_for(&self, wavelengths: &[f64]) -> BandMask {
        let keep = wavelengths
            .iter()
            .map(|&w| {
                w >= self.min_nm
                    && w <= self.max_nm
                    && !self
                        .absorption_windows
                        .iter()
                        .any(|a| (w - a.center_nm).abs() <= a.width_nm / 2.0)
            })
            .collect();
        BandMask { keep }
    }
}

/// Band centres of a 240-channel imager spanning 400-900 nm.
pub fn pika_wavelengths() -> Vec<f64> {
    linspace(400.0, 900.0, 240)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

pub fn apply_band_mask(cube: &HyperCube, mask: &BandMask) -> Result<HyperCube> {
    if mask.len() != cube.bands {
        return Err(Error::Dimension(format!(
            "mask has {} entries, cube has {} bands",
            mask.len(),
            cube.bands
        )));
    }
    let idx = mask.kept_indices();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut data = Vec::with_capacity(cube.pixel_count() * idx.len());
    for px in cube.pixels() {
        data.extend(idx.iter().map(|&b| px[b]));
    }
    Ok(HyperCube {
        rows: cube.rows,
        cols: cube.cols,
        bands: idx.len(),
        wavelengths: idx.iter().map(|&b| cube.wavelengths[b]).collect(),
        data,
        units: cube.units,
    })
}

/// Single-panel ratio correction: `out = in / mean_panel * panel_reflectance`
/// per band, clamped below at zero.
pub fn to_reflectance(
    cube: &HyperCube,
    panel_region: PixelRect,
    panel_reflectance: &[f64],
) -> Result<HyperCube> {
    if !matches!(cube.units, Units::Raw | Units::Radiance) {
        return Err(Error::Input(format!(
            "reflectance conversion needs raw or radiance input, got {}",
            cube.units.as_str()
        )));
    }
    if panel_region.is_empty() || !panel_region.fits(cube.rows, cube.cols) {
        return Err(Error::Input(format!(
            "panel region {panel_region:?} is empty or outside the {}x{} cube",
            cube.rows, cube.cols
        )));
    }
    if panel_reflectance.len() != cube.bands {
        return Err(Error::Dimension(format!(
            "panel reflectance has {} values, cube has {} bands",
            panel_reflectance.len(),
            cube.bands
        )));
    }
    if let Some(b) = panel_reflectance.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::Input(format!(
            "panel reflectance must be positive (band {b})"
        )));
    }
    let mut mean = vec![0.0; cube.bands];
    for r in panel_region.top..panel_region.top + panel_region.height {
        for c in panel_region.left..panel_region.left + panel_region.width {
            for (m, v) in mean.iter_mut().zip(cube.pixel(r, c)) {
                *m += v;
            }
        }
    }
    let n = (panel_region.height * panel_region.width) as f64;
    for (b, m) in mean.iter_mut().enumerate() {
        *m /= n;
        if !(*m > 0.0) {
            return Err(Error::DegeneratePanel { band: b, mean: *m });
        }
    }
    let gain: Vec<f64> = panel_reflectance
        .iter()
        .zip(&mean)
        .map(|(p, m)| p / m)
        .collect();
    let mut data = cube.data.clone();
    for px in data.chunks_exact_mut(cube.bands) {
        for (v, g) in px.iter_mut().zip(&gain) {
            *v = (*v * g).max(0.0);
        }
    }
    Ok(HyperCube {
        data,
        units: Units::Reflectance,
        ..cube.clone_header()
    })
}

impl HyperCube {
    fn clone_header(&self) -> HyperCube {
        HyperCube {
            rows: self.rows,
            cols: self.cols,
            bands: self.bands,
            wavelengths: self.wavelengths.clone(),
            data: Vec::new(),
            units: self.units,
        }
    }
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

/// Resolves `path` (either file of the pair, or the bare stem) to the
/// `(header, payload)` paths.
pub fn cube_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("hdr") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("hdr"), with("raw"))
}

struct Header {
    samples: usize,
    lines: usize,
    bands: usize,
    interleave: Interleave,
    sample_type: SampleType,
    units: Units,
    wavelengths: Vec<f64>,
}

fn parse_header(path: &Path, text: &str) -> Result<Header> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut samples = None;
    let mut lines = None;
    let mut bands = None;
    let mut interleave = Interleave::Bsq;
    let mut sample_type = None;
    let mut units = Units::Raw;
    let mut wavelengths = None;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with(';') || (lineno == 1 && line == "ENVI") {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| perr(lineno, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        let count = |v: &str| {
            v.parse::<usize>()
                .map_err(|e| perr(lineno, format!("bad {key} `{v}`: {e}")))
        };
        match key.as_str() {
            "samples" => samples = Some(count(value)?),
            "lines" => lines = Some(count(value)?),
            "bands" => bands = Some(count(value)?),
            "header offset" => {
                if count(value)? != 0 {
                    return Err(perr(lineno, "non-zero header offset unsupported".into()));
                }
            }
            "interleave" => {
                interleave = Interleave::parse(value)
                    .ok_or_else(|| perr(lineno, format!("unknown interleave `{value}`")))?
            }
            "data type" => {
                let code: u32 = value
                    .parse()
                    .map_err(|e| perr(lineno, format!("bad data type `{value}`: {e}")))?;
                sample_type = Some(
                    SampleType::from_code(code)
                        .ok_or_else(|| perr(lineno, format!("unsupported data type {code}")))?,
                );
            }
            "byte order" => {
                if value != "0" {
                    return Err(perr(lineno, "only little-endian (byte order = 0) supported".into()));
                }
            }
            "units" => {
                units = Units::parse(value)
                    .ok_or_else(|| perr(lineno, format!("unknown units `{value}`")))?
            }
            "wavelength" => {
                let inner = value.trim_start_matches('{').trim_end_matches('}');
                let wl = inner
                    .split(',')
                    .map(|s| s.trim())
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|e| perr(lineno, format!("bad wavelength `{s}`: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                wavelengths = Some(wl);
            }
            _ => {}
        }
    }
    let missing = |k: &str| perr(0, format!("missing required key `{k}`"));
    let samples = samples.ok_or_else(|| missing("samples"))?;
    let lines = lines.ok_or_else(|| missing("lines"))?;
    let bands = bands.ok_or_else(|| missing("bands"))?;
    let sample_type = sample_type.ok_or_else(|| missing("data type"))?;
    let wavelengths = wavelengths.ok_or_else(|| missing("wavelength"))?;
    if wavelengths.len() != bands {
        return Err(perr(
            0,
            format!("{} wavelengths for {bands} bands", wavelengths.len()),
        ));
    }
    Ok(Header {
        samples,
        lines,
        bands,
        interleave,
        sample_type,
        units,
        wavelengths,
    })
}

/// Band wavelengths from a cube header, without reading the payload.
pub fn read_header_wavelengths(path: &Path) -> Result<Vec<f64>> {
    let (hdr_path, _) = cube_paths(path);
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    Ok(parse_header(&hdr_path, &text)?.wavelengths)
}

pub fn read_cube(path: &Path) -> Result<HyperCube> {
    let (hdr_path, raw_path) = cube_paths(path);
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let h = parse_header(&hdr_path, &text)?;
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let n = h.lines * h.samples * h.bands;
    let expected = (n * h.sample_type.size()) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::PayloadSize {
            path: raw_path,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let decoded: Vec<f64> = match h.sample_type {
        SampleType::U16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        SampleType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        SampleType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    };
    let (rows, cols, bands) = (h.lines, h.samples, h.bands);
    let data = if h.interleave == Interleave::Bip {
        decoded
    } else {
        let mut data = vec![0.0; n];
        for r in 0..rows {
            for c in 0..cols {
                for b in 0..bands {
                    data[(r * cols + c) * bands + b] =
                        decoded[h.interleave.offset(rows, cols, bands, r, c, b)];
                }
            }
        }
        data
    };
    HyperCube::new(rows, cols, h.wavelengths, data, h.units)
}

/// Writes `cube` as 32-bit float BIP.
pub fn write_cube(cube: &HyperCube, path: &Path) -> Result<()> {
    write_cube_with(cube, path, Interleave::Bip, SampleType::F32)
}

pub fn write_cube_with(
    cube: &HyperCube,
    path: &Path,
    interleave: Interleave,
    sample_type: SampleType,
) -> Result<()> {
    let (hdr_path, raw_path) = cube_paths(path);
    let mut hdr = String::from("ENVI\n");
    let _ = writeln!(hdr, "samples = {}", cube.cols);
    let _ = writeln!(hdr, "lines = {}", cube.rows);
    let _ = writeln!(hdr, "bands = {}", cube.bands);
    let _ = writeln!(hdr, "header offset = 0");
    let _ = writeln!(hdr, "interleave = {}", interleave.as_str());
    let _ = writeln!(hdr, "data type = {}", sample_type.code());
    let _ = writeln!(hdr, "byte order = 0");
    let _ = writeln!(hdr, "units = {}", cube.units.as_str());
    let wl: Vec<String> = cube.wavelengths.iter().map(|w| format!("{w}")).collect();
    let _ = writeln!(hdr, "wavelength = {{{}}}", wl.join(", "));

    let (rows, cols, bands) = (cube.rows, cube.cols, cube.bands);
    let mut bytes = Vec::with_capacity(cube.data.len() * sample_type.size());
    let mut push = |v: f64| match sample_type {
        SampleType::U16 => bytes.extend_from_slice(&(v.round().clamp(0.0, 65535.0) as u16).to_le_bytes()),
        SampleType::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
        SampleType::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
    };
    match interleave {
        Interleave::Bip => cube.data.iter().for_each(|&v| push(v)),
        Interleave::Bil => {
            for r in 0..rows {
                for b in 0..bands {
                    for c in 0..cols {
                        push(cube.get(r, c, b));
                    }
                }
            }
        }
        Interleave::Bsq => {
            for b in 0..bands {
                for r in 0..rows {
                    for c in 0..cols {
                        push(cube.get(r, c, b));
                    }
                }
            }
        }
    }
    if let Some(dir) = hdr_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(&hdr_path, hdr).map_err(|e| Error::io(&hdr_path, e))?;
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

/// One reflectance value per band, as `wavelength_nm,reflectance` rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub wavelength_nm: f64,
    pub reflectance: f64,
}

pub fn write_spectrum_csv(wavelengths: &[f64], values: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for (&wavelength_nm, &reflectance) in wavelengths.iter().zip(values) {
        w.serialize(SpectrumRow {
            wavelength_nm,
            reflectance,
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_spectrum_csv(path: &Path) -> Result<Vec<SpectrumRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<SpectrumRow>, _>>()
        .map_err(|e| Error::csv(path, e))
}

/// Values of `rows` at `wavelengths`, each matched to the nearest row
/// within `tol_nm`.
pub fn spectrum_at(rows: &[SpectrumRow], wavelengths: &[f64], tol_nm: f64) -> Result<Vec<f64>> {
    wavelengths
        .iter()
        .map(|&w| {
            rows.iter()
                .min_by(|a, b| (a.wavelength_nm - w).abs().total_cmp(&(b.wavelength_nm - w).abs()))
                .filter(|r| (r.wavelength_nm - w).abs() <= tol_nm)
                .map(|r| r.reflectance)
                .ok_or_else(|| Error::Dimension(format!("no spectrum value within {tol_nm} nm of {w} nm")))
        })
        .collect()
}
