//! Plot segmentation: NDPSI index, thresholding, hole filling, rectangular
//! opening and connected-component bounding boxes.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cube::{HyperCube, PixelRect};
use crate::error::{Error, Result};

pub const RED_WINDOW: (f64, f64) = (665.0, 675.0);
pub const BLUE_WINDOW: (f64, f64) = (445.0, 455.0);

/// Single-channel `f64` image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "gray image size");
        Self { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), rows * cols, "mask size");
        Self { rows, cols, bits }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![false; rows * cols])
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.cols + c] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub area_px: usize,
}

impl PlotBox {
    pub fn rect(&self) -> PixelRect {
        PixelRect::new(self.top, self.left, self.height, self.width)
    }

    /// Intersection over union of the two box extents.
    pub fn iou(&self, other: &PixelRect) -> f64 {
        iou(&self.rect(), other)
    }
}

pub fn iou(a: &PixelRect, b: &PixelRect) -> f64 {
    let r0 = a.top.max(b.top);
    let r1 = (a.top + a.height).min(b.top + b.height);
    let c0 = a.left.max(b.left);
    let c1 = (a.left + a.width).min(b.left + b.width);
    let inter = r1.saturating_sub(r0) * c1.saturating_sub(c0);
    let union = a.height * a.width + b.height * b.width - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
#[derive(Default)]
pub enum Threshold {
    Fixed(f64),
    #[default]
    Otsu,
}


fn window_bands(wavelengths: &[f64], (lo, hi): (f64, f64)) -> Vec<usize> {
    (0..wavelengths.len())
        .filter(|&i| wavelengths[i] >= lo && wavelengths[i] <= hi)
        .collect()
}

/// Normalized difference plant senescence index,
/// `(red - blue) / (red + blue)` with red and blue the mean reflectance over
/// 670 ± 5 nm and 450 ± 5 nm. A zero denominator yields 0.
pub fn ndpsi(cube: &HyperCube) -> Result<GrayImage> {
    let red = window_bands(cube.wavelengths(), RED_WINDOW);
    let blue = window_bands(cube.wavelengths(), BLUE_WINDOW);
    if red.is_empty() {
        return Err(Error::WavelengthCoverage {
            window: "red",
            lo: RED_WINDOW.0,
            hi: RED_WINDOW.1,
        });
    }
    if blue.is_empty() {
        return Err(Error::WavelengthCoverage {
            window: "blue",
            lo: BLUE_WINDOW.0,
            hi: BLUE_WINDOW.1,
        });
    }
    let data = cube
        .pixels()
        .map(|px| {
            let r = red.iter().map(|&b| px[b]).sum::<f64>() / red.len() as f64;
            let b = blue.iter().map(|&b| px[b]).sum::<f64>() / blue.len() as f64;
            let s = r + b;
            if s == 0.0 {
                0.0
            } else {
                (r - b) / s
            }
        })
        .collect();
    Ok(GrayImage::new(cube.rows(), cube.cols(), data))
}

/// Otsu's threshold over a 256-bin histogram spanning `[min, max]` of the
/// image. The returned value is the upper edge of the last background bin.
pub fn otsu_threshold(img: &GrayImage) -> Result<f64> {
    let (lo, hi) = img
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Err(Error::DegenerateHistogram);
    }
    let width = (hi - lo) / 256.0;
    let mut hist = [0u64; 256];
    for &v in &img.data {
        let bin = (((v - lo) / width) as usize).min(255);
        hist[bin] += 1;
    }
    let total = img.data.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best_k, mut best) = (0usize, -1.0);
    for (k, &h) in hist.iter().enumerate().take(255) {
        w0 += h as f64;
        sum0 += k as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_k = k;
        }
    }
    Ok(lo + (best_k + 1) as f64 * width)
}

/// Foreground iff value > threshold.
pub fn threshold_mask(img: &GrayImage, threshold: Threshold) -> Result<BinaryMask> {
    let t = match threshold {
        Threshold::Fixed(t) => t,
        Threshold::Otsu => otsu_threshold(img)?,
    };
    Ok(BinaryMask::new(
        img.rows,
        img.cols,
        img.data.iter().map(|&v| v > t).collect(),
    ))
}

/// Fills background regions not 4-connected to the image border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (rows, cols) = (mask.rows, mask.cols);
    let mut outside = vec![false; rows * cols];
    let mut queue = VecDeque::new();
    let mut seed = |r: usize, c: usize, q: &mut VecDeque<(usize, usize)>| {
        let i = r * cols + c;
        if !mask.bits[i] && !outside[i] {
            outside[i] = true;
            q.push_back((r, c));
        }
    };
    for c in 0..cols {
        seed(0, c, &mut queue);
        seed(rows.saturating_sub(1), c, &mut queue);
    }
    for r in 0..rows {
        seed(r, 0, &mut queue);
        seed(r, cols.saturating_sub(1), &mut queue);
    }
    while let Some((r, c)) = queue.pop_front() {
        let mut visit = |rr: usize, cc: usize| {
            let i = rr * cols + cc;
            if !mask.bits[i] && !outside[i] {
                outside[i] = true;
                queue.push_back((rr, cc));
            }
        };
        if r > 0 {
            visit(r - 1, c);
        }
        if r + 1 < rows {
            visit(r + 1, c);
        }
        if c > 0 {
            visit(r, c - 1);
        }
        if c + 1 < cols {
            visit(r, c + 1);
        }
    }
    BinaryMask::new(rows, cols, outside.into_iter().map(|o| !o).collect())
}

/// Sliding-window "all" / "any" along one axis using prefix counts.
/// For each position `p`, inspects `[p + lo, p + hi]`; out-of-range samples
/// count as background.
fn line_filter(line: &[bool], lo: isize, hi: isize, all: bool) -> Vec<bool> {
    let n = line.len() as isize;
    let mut prefix = vec![0usize; line.len() + 1];
    for (i, &b) in line.iter().enumerate() {
        prefix[i + 1] = prefix[i] + b as usize;
    }
    (0..n)
        .map(|p| {
            let a = p + lo;
            let b = p + hi;
            if all {
                if a < 0 || b >= n {
                    return false;
                }
                prefix[(b + 1) as usize] - prefix[a as usize] == (b - a + 1) as usize
            } else {
                let a = a.max(0);
                let b = b.min(n - 1);
                a <= b && prefix[(b + 1) as usize] - prefix[a as usize] > 0
            }
        })
        .collect()
}

fn separable(mask: &BinaryMask, row_range: (isize, isize), col_range: (isize, isize), all: bool) -> BinaryMask {
    let (rows, cols) = (mask.rows, mask.cols);
    let mut tmp = vec![false; rows * cols];
    for r in 0..rows {
        let out = line_filter(&mask.bits[r * cols..(r + 1) * cols], col_range.0, col_range.1, all);
        tmp[r * cols..(r + 1) * cols].copy_from_slice(&out);
    }
    let mut bits = vec![false; rows * cols];
    let mut column = vec![false; rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = tmp[r * cols + c];
        }
        let out = line_filter(&column, row_range.0, row_range.1, all);
        for r in 0..rows {
            bits[r * cols + c] = out[r];
        }
    }
    BinaryMask::new(rows, cols, bits)
}

/// Structuring-element offsets relative to the origin at
/// `(se_height / 2, se_width / 2)`.
fn se_offsets(se_height: usize, se_width: usize) -> ((isize, isize), (isize, isize)) {
    let oh = (se_height / 2) as isize;
    let ow = (se_width / 2) as isize;
    (
        (-oh, se_height as isize - 1 - oh),
        (-ow, se_width as isize - 1 - ow),
    )
}

/// Erosion by a filled rectangle; pixels outside the image are background.
pub fn erode(mask: &BinaryMask, se_height: usize, se_width: usize) -> BinaryMask {
    let (rr, cr) = se_offsets(se_height, se_width);
    separable(mask, rr, cr, true)
}

/// Dilation by the same rectangle (reflected offsets).
pub fn dilate(mask: &BinaryMask, se_height: usize, se_width: usize) -> BinaryMask {
    let (rr, cr) = se_offsets(se_height, se_width);
    separable(mask, (-rr.1, -rr.0), (-cr.1, -cr.0), false)
}

/// Morphological opening: the union of every placement of the
/// `se_height x se_width` rectangle that fits inside the mask.
pub fn open(mask: &BinaryMask, se_height: usize, se_width: usize) -> BinaryMask {
    assert!(se_height >= 1 && se_width >= 1, "structuring element must be non-empty");
    dilate(&erode(mask, se_height, se_width), se_height, se_width)
}

/// 8-connected components of at least `min_area_px` pixels, as tight boxes
/// sorted by `(top, left)`.
pub fn extract_plots(mask: &BinaryMask, min_area_px: usize) -> Vec<PlotBox> {
    let (rows, cols) = (mask.rows, mask.cols);
    let mut seen = vec![false; rows * cols];
    let mut boxes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..rows * cols {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        let mut area = 0;
        while let Some(i) = stack.pop() {
            let (r, c) = (i / cols, i % cols);
            area += 1;
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                        continue;
                    }
                    let j = nr as usize * cols + nc as usize;
                    if mask.bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if area >= min_area_px {
            boxes.push(PlotBox {
                top: r0,
                left: c0,
                height: r1 - r0 + 1,
                width: c1 - c0 + 1,
                area_px: area,
            });
        }
    }
    boxes.sort_by_key(|b| (b.top, b.left));
    boxes
}

pub fn crop_plot(cube: &HyperCube, b: &PlotBox) -> Result<HyperCube> {
    cube.crop(b.rect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    #[serde(default)]
    pub threshold: Threshold,
    #[serde(default = "default_se")]
    pub se_height: usize,
    #[serde(default = "default_se_w")]
    pub se_width: usize,
    #[serde(default = "default_min_area")]
    pub min_area_px: usize,
}

fn default_se() -> usize {
    10
}
fn default_se_w() -> usize {
    5
}
fn default_min_area() -> usize {
    1000
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            threshold: Threshold::Otsu,
            se_height: default_se(),
            se_width: default_se_w(),
            min_area_px: default_min_area(),
        }
    }
}

/// Output of the full segmentation chain.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub index: GrayImage,
    pub raw_mask: BinaryMask,
    pub mask: BinaryMask,
    pub boxes: Vec<PlotBox>,
}

/// NDPSI → threshold → fill holes → open → area filter → boxes.
pub fn segment_plots(cube: &HyperCube, params: &SegmentParams) -> Result<Segmentation> {
    let index = ndpsi(cube)?;
    let raw_mask = threshold_mask(&index, params.threshold)?;
    let mask = open(&fill_holes(&raw_mask), params.se_height, params.se_width);
    let boxes = extract_plots(&mask, params.min_area_px);
    Ok(Segmentation {
        index,
        raw_mask,
        mask,
        boxes,
    })
}

/// Binary PBM (P4); foreground written as 1 (black).
pub fn write_pbm(mask: &BinaryMask, path: &Path) -> Result<()> {
    let mut out = format!("P4\n{} {}\n", mask.cols, mask.rows).into_bytes();
    let stride = mask.cols.div_ceil(8);
    for r in 0..mask.rows {
        let mut row = vec![0u8; stride];
        for c in 0..mask.cols {
            if mask.get(r, c) {
                row[c / 8] |= 0x80 >> (c % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a mask written by [`write_pbm`].
pub fn read_pbm(path: &Path) -> Result<BinaryMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: m.to_string(),
    };
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 3 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated PBM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    i += 1;
    if fields[0] != "P4" {
        return Err(bad("not a binary PBM (P4)"));
    }
    let cols: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let rows: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let stride = cols.div_ceil(8);
    if bytes.len() < i + stride * rows {
        return Err(bad("truncated PBM payload"));
    }
    let mut mask = BinaryMask::zeros(rows, cols);
    for r in 0..rows {
        let row = &bytes[i + r * stride..i + (r + 1) * stride];
        for c in 0..cols {
            mask.set(r, c, row[c / 8] & (0x80 >> (c % 8)) != 0);
        }
    }
    Ok(mask)
}

/// Binary PGM (P5) of an index image in `[-1, 1]`, linearly mapped to
/// `0..=255`; the mapping is recorded in a comment line.
pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    let mut out = format!(
        "P5\n# value = -1 + 2 * pixel / 255\n{} {}\n255\n",
        img.cols, img.rows
    )
    .into_bytes();
    out.extend(
        img.data
            .iter()
            .map(|&v| (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8),
    );
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::Units;

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let r = rows.len();
        let c = rows[0].len();
        BinaryMask::new(
            r,
            c,
            rows.iter().flat_map(|s| s.chars().map(|ch| ch == '#')).collect(),
        )
    }

    fn spectrum_cube(wl: Vec<f64>, px: Vec<f64>) -> HyperCube {
        HyperCube::new(1, 1, wl, px, Units::Reflectance).unwrap()
    }

    #[test]
    fn ndpsi_values() {
        let wl: Vec<f64> = (0..=30).map(|i| 440.0 + 10.0 * i as f64 / 1.0).collect();
        let px = |red: f64, blue: f64| -> Vec<f64> {
            wl.iter()
                .map(|&w| if (665.0..=675.0).contains(&w) { red } else if (445.0..=455.0).contains(&w) { blue } else { 0.9 })
                .collect()
        };
        let v = |red, blue| ndpsi(&spectrum_cube(wl.clone(), px(red, blue))).unwrap().data[0];
        assert_eq!(v(0.2, 0.2), 0.0);
        assert_eq!(v(0.4, 0.0), 1.0);
        assert!((v(0.3, 0.1) - 0.5).abs() < 1e-12);
        assert_eq!(v(0.0, 0.0), 0.0);
    }

    #[test]
    fn ndpsi_requires_both_windows() {
        let cube = spectrum_cube(vec![600.0, 670.0, 700.0], vec![0.1, 0.2, 0.3]);
        assert!(matches!(ndpsi(&cube), Err(Error::WavelengthCoverage { window: "blue", .. })));
    }

    #[test]
    fn fixed_threshold() {
        let img = GrayImage::new(1, 2, vec![0.1, 0.3]);
        let m = threshold_mask(&img, Threshold::Fixed(0.2)).unwrap();
        assert_eq!(m.bits, vec![false, true]);
        let m = threshold_mask(&img, Threshold::Fixed(0.5)).unwrap();
        assert_eq!(m.count(), 0);
        let flat = GrayImage::new(2, 2, vec![0.4; 4]);
        assert!(matches!(threshold_mask(&flat, Threshold::Otsu), Err(Error::DegenerateHistogram)));
    }

    #[test]
    fn fill_ring() {
        let m = mask_from(&[
            ".......", ".#####.", ".#####.", ".##.##.", ".#####.", ".#####.", ".......",
        ]);
        let f = fill_holes(&m);
        assert_eq!(f.count(), 25);
        assert!(f.get(3, 3));
    }

    #[test]
    fn border_connected_gap_not_filled() {
        let m = mask_from(&["#####", "#...#", "#.#.#", "#....", "#####"]);
        assert_eq!(fill_holes(&m), m);
    }

    #[test]
    fn opening_keeps_blocks_and_drops_specks() {
        let mut m = BinaryMask::zeros(50, 50);
        for r in 5..35 {
            for c in 5..35 {
                m.set(r, c, true);
            }
        }
        assert_eq!(open(&m, 10, 5), m);
        for r in 40..43 {
            for c in 40..43 {
                m.set(r, c, true);
            }
        }
        let o = open(&m, 10, 5);
        assert_eq!(o.count(), 900);
    }

    #[test]
    fn components_and_area_filter() {
        let mut m = BinaryMask::zeros(30, 30);
        for r in 0..10 {
            for c in 0..10 {
                m.set(r, c, true);
            }
        }
        for c in 20..25 {
            m.set(20, c, true);
        }
        let boxes = extract_plots(&m, 50);
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0], PlotBox { top: 0, left: 0, height: 10, width: 10, area_px: 100 });
        let d = mask_from(&["#..", ".#.", "..#"]);
        let b = extract_plots(&d, 1);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].area_px, 3);
    }

    #[test]
    fn crop_cases() {
        let cube = HyperCube::new(
            3,
            4,
            vec![450.0, 670.0],
            (0..24).map(|v| v as f64).collect(),
            Units::Reflectance,
        )
        .unwrap();
        let full = PlotBox { top: 0, left: 0, height: 3, width: 4, area_px: 12 };
        let c = crop_plot(&cube, &full).unwrap();
        assert_eq!(c, cube);
        assert_eq!(crop_plot(&c, &full).unwrap(), c);
        let one = PlotBox { top: 2, left: 1, height: 1, width: 1, area_px: 1 };
        assert_eq!(crop_plot(&cube, &one).unwrap().pixel(0, 0), cube.pixel(2, 1));
    }

    #[test]
    fn pnm_headers() {
        let dir = tempfile::tempdir().unwrap();
        let m = mask_from(&["#.#.#.#.#", "........."]);
        let p = dir.path().join("m.pbm");
        write_pbm(&m, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P4\n9 2\n"));
        assert_eq!(&bytes[7..], &[0b1010_1010, 0b1000_0000, 0, 0]);
        let g = GrayImage::new(1, 3, vec![-1.0, 0.0, 1.0]);
        let p = dir.path().join("g.pgm");
        write_pgm(&g, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    }
}
