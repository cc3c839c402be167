//! Sub-plot windows, SL-proportional yield allocation, per-window features
//! and the middle-one-third uniformity statistic.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cube::HyperCube;
use crate::error::{Error, Result};
use crate::segment::BinaryMask;

/// One square window of a plot. Windows tile the plot after padding it with
/// background on the right and bottom up to a multiple of the window size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub window_row: usize,
    pub window_col: usize,
    /// Linear (row-major, unpadded) indices of the SL pixels inside.
    pub sl_pixels: Vec<usize>,
}

impl Window {
    pub fn n_sl(&self) -> usize {
        self.sl_pixels.len()
    }
}

/// `ceil(rows / w) * ceil(cols / w)` windows in row-major order.
pub fn tile_plot(sl: &BinaryMask, window: usize) -> Result<Vec<Window>> {
    if window < 2 {
        return Err(Error::Input(format!("window must be at least 2 px, got {window}")));
    }
    let wr = sl.rows.div_ceil(window);
    let wc = sl.cols.div_ceil(window);
    let mut out = Vec::with_capacity(wr * wc);
    for i in 0..wr {
        for j in 0..wc {
            let mut px = Vec::new();
            for r in i * window..((i + 1) * window).min(sl.rows) {
                for c in j * window..((j + 1) * window).min(sl.cols) {
                    if sl.get(r, c) {
                        px.push(r * sl.cols + c);
                    }
                }
            }
            out.push(Window {
                window_row: i,
                window_col: j,
                sl_pixels: px,
            });
        }
    }
    Ok(out)
}

/// `y_i = n_i / N * y` with `N = Σ n_i`.
pub fn allocate_yield(counts: &[usize], plot_yield: f64) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyPlot("(unnamed)".into()));
    }
    let n = total as f64;
    Ok(counts.iter().map(|&c| c as f64 / n * plot_yield).collect())
}

/// `[means(d), population stds(d), n_sl]` over the given pixels, computed in
/// one streaming pass.
pub fn extract_features(plot: &HyperCube, pixels: &[usize]) -> Result<Vec<f64>> {
    if pixels.is_empty() {
        return Err(Error::Input("feature window has no SL pixels".into()));
    }
    let d = plot.bands();
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for (k, &p) in pixels.iter().enumerate() {
        let n = (k + 1) as f64;
        for ((m, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(plot.pixel_at(p)) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
    }
    let n = pixels.len() as f64;
    let mut out = Vec::with_capacity(2 * d + 1);
    out.extend_from_slice(&mean);
    out.extend(m2.iter().map(|s| (s / n).max(0.0).sqrt()));
    out.push(n);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotYieldRecord {
    pub plot_id: String,
    pub yield_grams: f64,
}

pub fn read_yields(path: &Path) -> Result<Vec<PlotYieldRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let recs = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<PlotYieldRecord>, _>>()
        .map_err(|e| Error::csv(path, e))?;
    if let Some(r) = recs.iter().find(|r| !(r.yield_grams >= 0.0)) {
        return Err(Error::Input(format!("negative yield for plot {}", r.plot_id)));
    }
    Ok(recs)
}

pub fn write_yields(records: &[PlotYieldRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SubPlotRecord {
    pub plot_id: String,
    pub window_row: usize,
    pub window_col: usize,
    pub n_sl: usize,
    pub features: Vec<f64>,
    pub allocated_yield: f64,
}

/// Records for every window of one plot with at least one SL pixel.
/// Empty windows carry zero yield and are left out.
pub fn plot_records(
    plot_id: &str,
    plot: &HyperCube,
    sl: &BinaryMask,
    window: usize,
    plot_yield: f64,
) -> Result<Vec<SubPlotRecord>> {
    if sl.rows != plot.rows() || sl.cols != plot.cols() {
        return Err(Error::Dimension("SL mask and plot cube sizes differ".into()));
    }
    let windows = tile_plot(sl, window)?;
    let counts: Vec<usize> = windows.iter().map(Window::n_sl).collect();
    let yields = allocate_yield(&counts, plot_yield).map_err(|_| Error::EmptyPlot(plot_id.to_string()))?;
    windows
        .iter()
        .zip(yields)
        .filter(|(w, _)| w.n_sl() > 0)
        .map(|(w, y)| {
            Ok(SubPlotRecord {
                plot_id: plot_id.to_string(),
                window_row: w.window_row,
                window_col: w.window_col,
                n_sl: w.n_sl(),
                features: extract_features(plot, &w.sl_pixels)?,
                allocated_yield: y,
            })
        })
        .collect()
}

pub fn write_records(records: &[SubPlotRecord], path: &Path) -> Result<()> {
    let nf = records.first().map_or(0, |r| r.features.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header: Vec<String> = ["plot_id", "window_row", "window_col", "n_sl", "yield_g"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=nf).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for r in records {
        if r.features.len() != nf {
            return Err(Error::Dimension("records differ in feature count".into()));
        }
        let mut row = vec![
            r.plot_id.clone(),
            r.window_row.to_string(),
            r.window_col.to_string(),
            r.n_sl.to_string(),
            format!("{}", r.allocated_yield),
        ];
        row.extend(r.features.iter().map(|v| format!("{v}")));
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<SubPlotRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::csv(path, "short row"));
        let num = |i: usize| -> Result<f64> {
            field(i)?.parse::<f64>().map_err(|e| Error::csv(path, e))
        };
        let int = |i: usize| -> Result<usize> {
            field(i)?.parse::<usize>().map_err(|e| Error::csv(path, e))
        };
        out.push(SubPlotRecord {
            plot_id: field(0)?.to_string(),
            window_row: int(1)?,
            window_col: int(2)?,
            n_sl: int(3)?,
            allocated_yield: num(4)?,
            features: (5..rec.len()).map(num).collect::<Result<Vec<_>>>()?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UniformityClass {
    Uniform,
    OneSideHeavy,
    MiddleHeavy,
}

impl UniformityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            UniformityClass::Uniform => "uniform",
            UniformityClass::OneSideHeavy => "one-side-heavy",
            UniformityClass::MiddleHeavy => "middle-heavy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiddleThird {
    pub middle_fraction: f64,
    pub class: UniformityClass,
}

/// Share of plot yield produced in the middle third along the plot's long
/// axis.
///
/// The long axis (columns unless the plot is taller than wide) is cut into
/// thirds of `floor(L / 3)` pixels at each end, the remainder going to the
/// middle. A window straddling a cut contributes to each third in proportion
/// to the pixel columns (rows) it covers there, clipped to the unpadded plot.
pub fn middle_third_ratio(
    windows: &[(usize, usize, f64)],
    plot_rows: usize,
    plot_cols: usize,
    window: usize,
    tau: f64,
) -> Result<MiddleThird> {
    let by_cols = plot_cols >= plot_rows;
    let len = if by_cols { plot_cols } else { plot_rows };
    let third = len / 3;
    let (mid_lo, mid_hi) = (third, len - third);
    let total: f64 = windows.iter().map(|w| w.2).sum();
    if !(total > 0.0) {
        return Err(Error::Input("plot has no allocated yield".into()));
    }
    let mut middle = 0.0;
    for &(wr, wc, y) in windows {
        let k = if by_cols { wc } else { wr };
        let lo = (k * window).min(len);
        let hi = ((k + 1) * window).min(len);
        if hi <= lo {
            continue;
        }
        let overlap = hi.min(mid_hi).saturating_sub(lo.max(mid_lo));
        middle += y * overlap as f64 / (hi - lo) as f64;
    }
    let middle_fraction = middle / total;
    let class = if middle_fraction < 1.0 / 3.0 - tau {
        UniformityClass::OneSideHeavy
    } else if middle_fraction > 1.0 / 3.0 + tau {
        UniformityClass::MiddleHeavy
    } else {
        UniformityClass::Uniform
    };
    Ok(MiddleThird {
        middle_fraction,
        class,
    })
}

/// Fraction of records whose allocated yield exactly equals that of another
/// record of the same plot.
pub fn shared_yield_fraction(records: &[SubPlotRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<(&str, u64), usize> = HashMap::new();
    for r in records {
        *counts.entry((&r.plot_id, r.allocated_yield.to_bits())).or_default() += 1;
    }
    let shared = records
        .iter()
        .filter(|r| counts[&(r.plot_id.as_str(), r.allocated_yield.to_bits())] > 1)
        .count();
    shared as f64 / records.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::Units;

    fn full(rows: usize, cols: usize) -> BinaryMask {
        BinaryMask::new(rows, cols, vec![true; rows * cols])
    }

    #[test]
    fn window_counts() {
        assert_eq!(tile_plot(&full(30, 30), 15).unwrap().len(), 4);
        let w = tile_plot(&full(31, 31), 15).unwrap();
        assert_eq!(w.len(), 9);
        // the padded corner holds a single real pixel
        assert_eq!(w[8].n_sl(), 1);
        assert_eq!(w.iter().map(Window::n_sl).sum::<usize>(), 31 * 31);
        assert!(tile_plot(&full(4, 4), 1).is_err());
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate_yield(&[0, 12, 0], 7.5).unwrap(), vec![0.0, 7.5, 0.0]);
        assert_eq!(allocate_yield(&[30, 10], 40.0).unwrap(), vec![30.0, 10.0]);
        assert!(matches!(allocate_yield(&[0, 0], 3.0), Err(Error::EmptyPlot(_))));
    }

    #[test]
    fn features_single_and_pair() {
        let cube = HyperCube::new(1, 2, vec![500.0, 600.0], vec![0.2, 0.4, 0.6, 0.1], Units::Reflectance).unwrap();
        let f = extract_features(&cube, &[0]).unwrap();
        assert_eq!(f, vec![0.2, 0.4, 0.0, 0.0, 1.0]);
        let f = extract_features(&cube, &[0, 1]).unwrap();
        let want = [0.4, 0.25, 0.2, 0.15, 2.0];
        for (a, b) in f.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{f:?}");
        }
    }

    #[test]
    fn middle_third_cases() {
        // 1 x 8 windows of 15 px along a 120 px plot
        let uniform: Vec<_> = (0..8).map(|c| (0, c, 1.0)).collect();
        let m = middle_third_ratio(&uniform, 45, 120, 15, 0.05).unwrap();
        assert!((m.middle_fraction - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.class, UniformityClass::Uniform);
        let middle: Vec<_> = (0..8).map(|c| (0, c, if c == 3 || c == 4 { 5.0 } else { 0.0 })).collect();
        let m = middle_third_ratio(&middle, 45, 120, 15, 0.05).unwrap();
        assert_eq!(m.middle_fraction, 1.0);
        assert_eq!(m.class, UniformityClass::MiddleHeavy);
        let sides: Vec<_> = (0..8).map(|c| (0, c, if c == 0 || c == 7 { 5.0 } else { 1.0 })).collect();
        let m = middle_third_ratio(&sides, 45, 120, 15, 0.05).unwrap();
        assert_eq!(m.class, UniformityClass::OneSideHeavy);
    }

    #[test]
    fn records_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![SubPlotRecord {
            plot_id: "P-7".into(),
            window_row: 1,
            window_col: 2,
            n_sl: 3,
            features: vec![0.1, 0.30000000000000004, 3.0],
            allocated_yield: 1.0 / 3.0,
        }];
        let p = dir.path().join("d.csv");
        write_records(&recs, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("plot_id,window_row,window_col,n_sl,yield_g,f1,f2,f3\n"));
        assert_eq!(read_records(&p).unwrap(), recs);
    }

    #[test]
    fn shared_fraction() {
        let mk = |id: &str, y: f64| SubPlotRecord {
            plot_id: id.into(),
            window_row: 0,
            window_col: 0,
            n_sl: 1,
            features: vec![],
            allocated_yield: y,
        };
        let recs = [mk("a", 1.0), mk("a", 1.0), mk("a", 2.0), mk("b", 2.0)];
        assert_eq!(shared_yield_fraction(&recs), 0.5);
    }
}
