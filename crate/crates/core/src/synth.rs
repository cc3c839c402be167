//! Synthetic scenes with planted endmembers, abundances, plot layouts and
//! yields. Every quantity the pipeline estimates has a known truth here.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::cube::{linspace, write_cube, write_spectrum_csv, HyperCube, PixelRect, Units};
use crate::endmember::EndmemberSet;
use crate::error::{Error, Result};
use crate::gridmap::{Anchor, AnchorTarget, PlotMap, PlotMapEntry};
use crate::segment::{write_pbm, BinaryMask, PlotBox};
use crate::subplot::{tile_plot, write_yields, PlotYieldRecord, SubPlotRecord};

pub const LABELS: [&str; 6] = ["spike", "leaf", "soil", "shadow", "winter_wheat", "panel"];
const SPIKE: usize = 0;
const LEAF: usize = 1;
const SOIL: usize = 2;
const SHADOW: usize = 3;
const WHEAT: usize = 4;
const PANEL: usize = 5;

fn gauss(l: f64, mu: f64, s: f64) -> f64 {
    (-0.5 * ((l - mu) / s).powi(2)).exp()
}

fn sigmoid(l: f64, mu: f64, s: f64) -> f64 {
    1.0 / (1.0 + (-(l - mu) / s).exp())
}

/// Analytic reflectance of one library class at `l` nm.
pub fn reflectance(label: &str, l: f64) -> Option<f64> {
    let t = (l - 400.0) / 500.0;
    Some(match label {
        // senescent ear: tan, high red, mild NIR plateau
        "spike" => 0.10 + 0.25 * sigmoid(l, 560.0, 30.0) + 0.12 * sigmoid(l, 720.0, 25.0) + 0.03 * gauss(l, 480.0, 30.0),
        // senescent leaf: browner, residual chlorophyll dip and red edge
        "leaf" => 0.06 + 0.16 * sigmoid(l, 590.0, 35.0) - 0.05 * gauss(l, 675.0, 18.0) + 0.22 * sigmoid(l, 715.0, 18.0),
        "soil" => 0.08 + 0.22 * t + 0.04 * sigmoid(l, 600.0, 60.0),
        "shadow" => 0.025 + 0.02 * t + 0.01 * sigmoid(l, 650.0, 40.0),
        // green canopy: green peak, red well, steep red edge
        "winter_wheat" => 0.035 + 0.07 * gauss(l, 550.0, 45.0) - 0.025 * gauss(l, 675.0, 25.0) + 0.45 * sigmoid(l, 720.0, 12.0),
        "panel" => 0.5 + 0.02 * ((l - 400.0) / 80.0).sin(),
        _ => return None,
    })
}

/// The six library spectra sampled at `wavelengths`.
pub fn library(wavelengths: &[f64]) -> EndmemberSet {
    let spectra = LABELS
        .iter()
        .map(|l| wavelengths.iter().map(|&w| reflectance(l, w).unwrap()).collect())
        .collect();
    EndmemberSet::new(
        wavelengths.to_vec(),
        spectra,
        LABELS.iter().map(|s| s.to_string()).collect(),
    )
    .expect("library spectra are valid")
}

/// Smooth positive illumination curve in radiance units.
pub fn illumination(wavelengths: &[f64]) -> Vec<f64> {
    wavelengths
        .iter()
        .map(|&l| 2000.0 * (0.35 + gauss(l, 560.0, 160.0)))
        .collect()
}

/// Noise standard deviation giving `snr_db` for a signal of mean power
/// `mean(signal^2)`.
pub fn noise_sigma(signal: &[f64], snr_db: f64) -> f64 {
    let p = signal.iter().map(|x| x * x).sum::<f64>() / signal.len() as f64;
    (p / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// Adds white Gaussian noise at `snr_db` in place; returns the noise sigma.
pub fn add_noise(data: &mut [f64], snr_db: f64, rng: &mut ChaCha8Rng) -> f64 {
    let sigma = noise_sigma(data, snr_db);
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    for v in data.iter_mut() {
        *v += n.sample(rng);
    }
    sigma
}

/// Realized SNR in dB of `noisy` against `clean`.
pub fn realized_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let ps: f64 = clean.iter().map(|x| x * x).sum();
    let pn: f64 = clean.iter().zip(noisy).map(|(a, b)| (a - b) * (a - b)).sum();
    10.0 * (ps / pn).log10()
}

/// Dirichlet(alpha, ..., alpha) sample of length `e`.
pub fn dirichlet(e: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive alpha");
    loop {
        let v: Vec<f64> = (0..e).map(|_| g.sample(rng)).collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            return v.into_iter().map(|x| x / s).collect();
        }
    }
}

/// `X = W H` (plus optional noise): `rows x cols` pixels with Dirichlet
/// abundances over `endmembers`. Returns the cube and the planted
/// pixel-major abundances.
pub fn mixed_cube(
    endmembers: &EndmemberSet,
    rows: usize,
    cols: usize,
    alpha: f64,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<(HyperCube, Vec<f64>)> {
    let e = endmembers.len();
    let d = endmembers.bands();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = Vec::with_capacity(rows * cols * e);
    let mut x = Vec::with_capacity(rows * cols * d);
    for _ in 0..rows * cols {
        let a = dirichlet(e, alpha, &mut rng);
        for b in 0..d {
            x.push((0..e).map(|k| endmembers.spectra[k][b] * a[k]).sum());
        }
        h.extend(a);
    }
    if let Some(snr) = snr_db {
        let mut nrng = ChaCha8Rng::seed_from_u64(seed);
        nrng.set_stream(1);
        add_noise(&mut x, snr, &mut nrng);
    }
    let cube = HyperCube::new(rows, cols, endmembers.wavelengths.clone(), x, Units::Reflectance)?;
    Ok((cube, h))
}

/// Sum of random plane waves, roughly unit variance.
#[derive(Debug, Clone)]
pub struct SmoothField {
    waves: Vec<(f64, f64, f64)>,
}

impl SmoothField {
    pub fn new(rng: &mut ChaCha8Rng, components: usize, min_period: f64, max_period: f64) -> Self {
        let waves = (0..components)
            .map(|_| {
                let period = rng.random_range(min_period..max_period);
                let theta = rng.random_range(0.0..PI);
                let k = 2.0 * PI / period;
                (k * theta.cos(), k * theta.sin(), rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        SmoothField { waves }
    }

    pub fn at(&self, r: f64, c: f64) -> f64 {
        let s: f64 = self.waves.iter().map(|(kr, kc, ph)| (kr * r + kc * c + ph).cos()).sum();
        s * (2.0 / self.waves.len().max(1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Plot height and width in pixels.
    pub plot_size_px: [usize; 2],
    pub alley_px: usize,
    /// Background border around the plot grid.
    pub border_px: usize,
    pub bands: usize,
    pub min_nm: f64,
    pub max_nm: f64,
    /// Per-plot position jitter as a fraction of the row and column pitch,
    /// truncated so neighbouring plots stay at least 2 px apart.
    pub jitter_fraction: f64,
    /// Grid cells left without a plot.
    pub missing_plots: usize,
    pub snr_db: f64,
    /// Skip the sensor noise entirely.
    pub noiseless: bool,
    pub yield_per_sl_pixel: f64,
    /// Expected sub-plot R² of the ideal `n_sl`-proportional predictor; sets
    /// the per-plot yield noise. 1 plants noiseless yields.
    pub target_r2: f64,
    /// Window used to compute the per-plot yield noise.
    pub window: usize,
    pub base_density: f64,
    pub density_amplitude: f64,
    pub plot_vigor: f64,
    pub pixel_sd: f64,
    /// Density multiplier at both ends of a side-heavy plot.
    pub margin_boost: f64,
    /// Share of the long axis boosted at each end.
    pub margin_share: f64,
    /// Fraction of plots that receive the margin boost.
    pub side_heavy_fraction: f64,
    pub panel_px: usize,
    pub lowalt_size_px: usize,
    pub lowalt_patch_px: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 1,
            grid_rows: 8,
            grid_cols: 8,
            plot_size_px: [60, 150],
            alley_px: 12,
            border_px: 16,
            bands: 64,
            min_nm: 400.0,
            max_nm: 900.0,
            jitter_fraction: 0.0,
            missing_plots: 0,
            snr_db: 40.0,
            noiseless: false,
            yield_per_sl_pixel: 0.3,
            target_r2: 0.85,
            window: 15,
            base_density: 0.55,
            density_amplitude: 0.05,
            plot_vigor: 0.1,
            pixel_sd: 0.15,
            margin_boost: 1.0,
            margin_share: 1.0 / 6.0,
            side_heavy_fraction: 0.0,
            panel_px: 10,
            lowalt_size_px: 48,
            lowalt_patch_px: 8,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.grid_rows == 0 || self.grid_cols == 0 || self.plot_size_px.contains(&0) || self.bands < 2 {
            return bad("grid, plot size and band counts must be at least 1");
        }
        if self.missing_plots >= self.grid_rows * self.grid_cols {
            return bad("every plot would be missing");
        }
        if !self.noiseless && !(self.snr_db > 0.0) {
            return bad("snr_db must be positive");
        }
        if !(self.target_r2 > 0.0 && self.target_r2 <= 1.0) {
            return bad("target_r2 must lie in (0, 1]");
        }
        if self.border_px < self.panel_px + 4 {
            return bad("border must leave room for the panel");
        }
        if self.lowalt_size_px < 5 * (self.lowalt_patch_px + 1) + 1 {
            return bad("low-altitude scene too small for its pure patches");
        }
        if self.window < 2 {
            return bad("window must be at least 2");
        }
        Ok(())
    }

    /// Sensor SNR, `None` when noiseless.
    pub fn snr(&self) -> Option<f64> {
        (!self.noiseless).then_some(self.snr_db)
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        linspace(self.min_nm, self.max_nm, self.bands)
    }

    pub fn pitch(&self) -> (usize, usize) {
        (self.plot_size_px[0] + self.alley_px, self.plot_size_px[1] + self.alley_px)
    }

    pub fn image_size(&self) -> (usize, usize) {
        let (pr, pc) = self.pitch();
        (
            2 * self.border_px + self.grid_rows * pr - self.alley_px,
            2 * self.border_px + self.grid_cols * pc - self.alley_px,
        )
    }

    pub fn panel_rect(&self) -> PixelRect {
        PixelRect::new(2, 2, self.panel_px, self.panel_px)
    }
}

pub fn plot_id(grid_row: usize, grid_col: usize) -> String {
    format!("P{:02}{:02}", grid_row + 1, grid_col + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPlot {
    pub plot_id: String,
    pub grid_row: usize,
    pub grid_col: usize,
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub side_heavy: bool,
    pub sl_count: usize,
    pub yield_factor: f64,
    pub yield_grams: f64,
}

impl PlantedPlot {
    pub fn rect(&self) -> PixelRect {
        PixelRect::new(self.top, self.left, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSummary {
    pub noise_sigma: f64,
    pub realized_snr_db: Option<f64>,
    pub yield_noise_sd: f64,
    pub theoretical_r2: f64,
}

#[derive(Debug, Clone)]
pub struct SynthTruth {
    /// Pixel-major abundances over [`LABELS`].
    pub abundances: Vec<f64>,
    pub sl: BinaryMask,
    pub plots: Vec<PlantedPlot>,
    pub endmembers: EndmemberSet,
    pub summary: TruthSummary,
}

impl SynthTruth {
    pub fn abundance(&self, r: usize, c: usize) -> &[f64] {
        let i = (r * self.sl.cols + c) * LABELS.len();
        &self.abundances[i..i + LABELS.len()]
    }

    /// SL mask restricted to one plot.
    pub fn plot_sl(&self, p: &PlantedPlot) -> BinaryMask {
        let mut m = BinaryMask::zeros(p.height, p.width);
        for r in 0..p.height {
            for c in 0..p.width {
                m.set(r, c, self.sl.get(p.top + r, p.left + c));
            }
        }
        m
    }

    /// True per-window yields of a plot in `tile_plot` order.
    pub fn window_yields(&self, p: &PlantedPlot, window: usize) -> Result<Vec<f64>> {
        let w = tile_plot(&self.plot_sl(p), window)?;
        let g = p.yield_grams / p.sl_count.max(1) as f64;
        Ok(w.iter().map(|w| w.n_sl() as f64 * g).collect())
    }

    pub fn boxes(&self) -> Vec<PlotBox> {
        self.plots
            .iter()
            .map(|p| PlotBox {
                top: p.top,
                left: p.left,
                height: p.height,
                width: p.width,
                area_px: p.height * p.width,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub spec: SynthSpec,
    /// Radiance: reflectance times [`illumination`].
    pub radiance: HyperCube,
    pub truth: SynthTruth,
    pub plot_map: PlotMap,
    pub yields: Vec<PlotYieldRecord>,
    pub panel_reflectance: Vec<f64>,
}

impl SynthScene {
    /// Noise-carrying reflectance, i.e. the radiance divided by the
    /// illumination.
    pub fn reflectance(&self) -> Result<HyperCube> {
        let l = illumination(self.radiance.wavelengths());
        let mut data = self.radiance.data().to_vec();
        for px in data.chunks_exact_mut(l.len()) {
            px.iter_mut().zip(&l).for_each(|(v, i)| *v /= i);
        }
        HyperCube::new(
            self.radiance.rows(),
            self.radiance.cols(),
            self.radiance.wavelengths().to_vec(),
            data,
            Units::Reflectance,
        )
    }
}

fn planted_positions(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, usize, usize)> {
    let (pr, pc) = spec.pitch();
    let max_r = (spec.alley_px / 2).saturating_sub(1) as f64;
    let max_c = max_r;
    let nr = Normal::new(0.0, (spec.jitter_fraction * pr as f64).max(1e-300)).unwrap();
    let nc = Normal::new(0.0, (spec.jitter_fraction * pc as f64).max(1e-300)).unwrap();
    let mut out = Vec::new();
    for i in 0..spec.grid_rows {
        for j in 0..spec.grid_cols {
            let (dr, dc) = if spec.jitter_fraction > 0.0 {
                (
                    nr.sample(rng).clamp(-max_r, max_r).round() as i64,
                    nc.sample(rng).clamp(-max_c, max_c).round() as i64,
                )
            } else {
                (0, 0)
            };
            let top = (spec.border_px + i * pr) as i64 + dr;
            let left = (spec.border_px + j * pc) as i64 + dc;
            out.push((i, j, top as usize, left as usize));
        }
    }
    out
}

/// Generates the high-altitude field scene.
pub fn generate_scene(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let wl = spec.wavelengths();
    let lib = library(&wl);
    let (rows, cols) = spec.image_size();
    let e = LABELS.len();
    let d = wl.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let positions = planted_positions(spec, &mut rng);
    let mut cells: Vec<usize> = (0..positions.len()).collect();
    let mut missing = vec![false; positions.len()];
    for k in 0..spec.missing_plots {
        let pick = rng.random_range(k..cells.len());
        cells.swap(k, pick);
        missing[cells[k]] = true;
    }
    let field = SmoothField::new(&mut rng, 8, 80.0, 400.0);
    let n_side = (spec.side_heavy_fraction * positions.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..positions.len()).collect();
    for k in 0..order.len() {
        let pick = rng.random_range(k..order.len());
        order.swap(k, pick);
    }
    let mut side_heavy = vec![false; positions.len()];
    if spec.margin_boost != 1.0 {
        for &k in &order[..n_side] {
            side_heavy[k] = true;
        }
    }

    // background: green canopy with a little soil
    let mut h = vec![0.0; rows * cols * e];
    for px in h.chunks_exact_mut(e) {
        let s = rng.random_range(0.0..0.1);
        px[WHEAT] = 1.0 - s;
        px[SOIL] = s;
    }
    let pn = spec.panel_rect();
    for r in pn.top..pn.top + pn.height {
        for c in pn.left..pn.left + pn.width {
            let px = &mut h[(r * cols + c) * e..(r * cols + c + 1) * e];
            px.iter_mut().for_each(|v| *v = 0.0);
            px[PANEL] = 1.0;
        }
    }

    let [ph, pw] = spec.plot_size_px;
    let pix = Normal::new(0.0, spec.pixel_sd.max(1e-300)).unwrap();
    let mut sl = BinaryMask::zeros(rows, cols);
    let mut plots = Vec::new();
    for (k, &(gi, gj, top, left)) in positions.iter().enumerate() {
        if missing[k] {
            continue;
        }
        let vigor = rng.random_range(-spec.plot_vigor..=spec.plot_vigor);
        let by_cols = pw >= ph;
        let len = if by_cols { pw } else { ph };
        let end = (spec.margin_share * len as f64).round() as usize;
        let mut count = 0;
        for r in 0..ph {
            for c in 0..pw {
                let (gr, gc) = (top + r, left + c);
                let mut rho = spec.base_density + spec.density_amplitude * field.at(gr as f64, gc as f64) + vigor;
                let pos = if by_cols { c } else { r };
                if side_heavy[k] && (pos < end || pos >= len - end) {
                    rho *= spec.margin_boost;
                }
                let rho = rho.clamp(0.02, 0.95);
                let veg = if spec.pixel_sd > 0.0 {
                    (rho + pix.sample(&mut rng)).clamp(0.0, 1.0)
                } else {
                    rho
                };
                let spike_share = rng.random_range(0.35..0.75);
                let shadow_share = rng.random_range(0.1..0.4);
                let px = &mut h[(gr * cols + gc) * e..(gr * cols + gc + 1) * e];
                px.iter_mut().for_each(|v| *v = 0.0);
                px[SPIKE] = veg * spike_share;
                px[LEAF] = veg - px[SPIKE];
                px[SHADOW] = (1.0 - veg) * shadow_share;
                px[SOIL] = (1.0 - veg) - px[SHADOW];
                if px[SPIKE] + px[LEAF] > 0.5 {
                    sl.set(gr, gc, true);
                    count += 1;
                }
            }
        }
        plots.push(PlantedPlot {
            plot_id: plot_id(gi, gj),
            grid_row: gi,
            grid_col: gj,
            top,
            left,
            height: ph,
            width: pw,
            side_heavy: side_heavy[k],
            sl_count: count,
            yield_factor: 1.0,
            yield_grams: 0.0,
        });
    }

    // per-plot yield noise sized for the requested sub-plot R²
    let mut n_all = Vec::new();
    for p in &plots {
        let mut m = BinaryMask::zeros(p.height, p.width);
        for r in 0..p.height {
            for c in 0..p.width {
                m.set(r, c, sl.get(p.top + r, p.left + c));
            }
        }
        n_all.extend(tile_plot(&m, spec.window)?.iter().map(|w| w.n_sl() as f64).filter(|&n| n > 0.0));
    }
    let yield_noise_sd = match spec.target_r2 {
        r2 if r2 < 1.0 && !n_all.is_empty() => {
            let nn = n_all.len() as f64;
            let mean = n_all.iter().sum::<f64>() / nn;
            let var = n_all.iter().map(|n| (n - mean) * (n - mean)).sum::<f64>() / nn;
            let m2 = n_all.iter().map(|n| n * n).sum::<f64>() / nn;
            (var * (1.0 - r2) / (r2 * m2)).sqrt()
        }
        _ => 0.0,
    };
    let theoretical_r2 = spec.target_r2;
    // standardized draws, so the realized noise level is the planned one
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut z: Vec<f64> = plots.iter().map(|_| std.sample(&mut rng)).collect();
    if z.len() > 1 {
        let n = z.len() as f64;
        let m = z.iter().sum::<f64>() / n;
        let s = (z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        z.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    for (p, z) in plots.iter_mut().zip(z) {
        p.yield_factor = (1.0 + yield_noise_sd * z).max(0.05);
        p.yield_grams = spec.yield_per_sl_pixel * p.sl_count as f64 * p.yield_factor;
    }

    // X = W H (+ noise), then radiance
    let mut x = vec![0.0; rows * cols * d];
    for (xp, hp) in x.chunks_exact_mut(d).zip(h.chunks_exact(e)) {
        for (k, &a) in hp.iter().enumerate() {
            if a != 0.0 {
                for (v, w) in xp.iter_mut().zip(&lib.spectra[k]) {
                    *v += a * w;
                }
            }
        }
    }
    let (noise_sigma, realized) = match spec.snr() {
        Some(snr) => {
            let mut nrng = ChaCha8Rng::seed_from_u64(spec.seed);
            nrng.set_stream(1);
            let clean_power = x.iter().map(|v| v * v).sum::<f64>();
            let sigma = noise_sigma(&x, snr);
            let n = Normal::new(0.0, sigma).unwrap();
            let mut pn = 0.0;
            for v in x.iter_mut() {
                let z = n.sample(&mut nrng);
                pn += z * z;
                *v += z;
            }
            (sigma, Some(10.0 * (clean_power / pn).log10()))
        }
        None => (0.0, None),
    };
    let illum = illumination(&wl);
    for px in x.chunks_exact_mut(d) {
        px.iter_mut().zip(&illum).for_each(|(v, l)| *v *= l);
    }
    let radiance = HyperCube::new(rows, cols, wl.clone(), x, Units::Radiance)?;

    let entries = positions
        .iter()
        .map(|&(i, j, _, _)| PlotMapEntry {
            plot_id: plot_id(i, j),
            field_row: i as i64,
            field_col: j as i64,
        })
        .collect();
    let yields = plots
        .iter()
        .map(|p| PlotYieldRecord {
            plot_id: p.plot_id.clone(),
            yield_grams: p.yield_grams,
        })
        .collect();
    let panel_reflectance = lib.spectra[PANEL].clone();
    Ok(SynthScene {
        spec: spec.clone(),
        radiance,
        truth: SynthTruth {
            abundances: h,
            sl,
            plots,
            endmembers: lib,
            summary: TruthSummary {
                noise_sigma,
                realized_snr_db: realized,
                yield_noise_sd,
                theoretical_r2,
            },
        },
        plot_map: PlotMap::new(entries)?,
        yields,
        panel_reflectance,
    })
}

/// Low-altitude reflectance scene: one pure square patch per vegetation,
/// soil, shadow and canopy class along the top, Dirichlet mixtures of those
/// five elsewhere. Returns the cube and the top-left corner of each patch.
pub fn generate_lowalt(spec: &SynthSpec) -> Result<(HyperCube, Vec<(usize, usize)>)> {
    spec.validate()?;
    let wl = spec.wavelengths();
    let lib = library(&wl);
    let classes = [SPIKE, LEAF, SOIL, SHADOW, WHEAT];
    let n = spec.lowalt_size_px;
    let p = spec.lowalt_patch_px;
    let d = wl.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(3);
    let corners: Vec<(usize, usize)> = (0..classes.len()).map(|k| (1, 1 + k * (p + 1))).collect();
    let mut x = Vec::with_capacity(n * n * d);
    for r in 0..n {
        for c in 0..n {
            let pure = corners
                .iter()
                .position(|&(t, l)| r >= t && r < t + p && c >= l && c < l + p);
            let a = match pure {
                Some(k) => {
                    let mut a = vec![0.0; classes.len()];
                    a[k] = 1.0;
                    a
                }
                None => dirichlet(classes.len(), 1.0, &mut rng),
            };
            for b in 0..d {
                x.push(classes.iter().zip(&a).map(|(&k, w)| lib.spectra[k][b] * w).sum());
            }
        }
    }
    if let Some(snr) = spec.snr() {
        let mut nrng = ChaCha8Rng::seed_from_u64(spec.seed);
        nrng.set_stream(4);
        add_noise(&mut x, snr, &mut nrng);
    }
    Ok((HyperCube::new(n, n, wl, x, Units::Reflectance)?, corners))
}

/// Boxes of a jittered `rows x cols` grid (jitter `sd = fraction * pitch`
/// per axis) with `missing` randomly deleted, in shuffled order. Also
/// returns each box's grid cell.
pub fn jittered_grid(
    rows: usize,
    cols: usize,
    pitch: (f64, f64),
    size: (usize, usize),
    jitter_fraction: f64,
    missing: usize,
    seed: u64,
) -> (Vec<PlotBox>, Vec<(usize, usize)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut items = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let top = 100.0 + i as f64 * pitch.0 + jitter_fraction * pitch.0 * std.sample(&mut rng);
            let left = 100.0 + j as f64 * pitch.1 + jitter_fraction * pitch.1 * std.sample(&mut rng);
            items.push((
                PlotBox {
                    top: top.round().max(0.0) as usize,
                    left: left.round().max(0.0) as usize,
                    height: size.0,
                    width: size.1,
                    area_px: size.0 * size.1,
                },
                (i, j),
            ));
        }
    }
    for k in (1..items.len()).rev() {
        let pick = rng.random_range(0..=k);
        items.swap(k, pick);
    }
    items.truncate(items.len() - missing.min(items.len()));
    items.into_iter().unzip()
}

/// Inputs of a written scene, as consumed by the pipeline. Paths are
/// relative to the directory holding `scene.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInputs {
    pub cube: PathBuf,
    pub panel_region: PixelRect,
    pub panel_reflectance: PathBuf,
    pub plot_map: PathBuf,
    pub yields: PathBuf,
    pub endmember_cube: PathBuf,
    pub reference_library: PathBuf,
    pub pitch_px: f64,
    pub anchor: Anchor,
}

pub const SCENE_FILE: &str = "scene.toml";

/// Writes the field cube, low-altitude cube, panel spectrum, reference
/// library, plot map, yields and truth files into `dir`.
pub fn write_scene(scene: &SynthScene, dir: &Path) -> Result<SceneInputs> {
    let io = |p: &Path, e| Error::io(p, e);
    std::fs::create_dir_all(dir.join("truth")).map_err(|e| io(dir, e))?;
    let spec = &scene.spec;
    write_cube(&scene.radiance, &dir.join("field.hdr"))?;
    let (low, _) = generate_lowalt(spec)?;
    write_cube(&low, &dir.join("lowalt.hdr"))?;
    write_spectrum_csv(scene.radiance.wavelengths(), &scene.panel_reflectance, &dir.join("panel.csv"))?;
    scene.truth.endmembers.write_csv(&dir.join("reference.csv"))?;
    scene.plot_map.write_csv(&dir.join("plot_map.csv"))?;
    write_yields(&scene.yields, &dir.join("yields.csv"))?;

    let tp = dir.join("truth").join("plots.csv");
    let mut w = csv::Writer::from_path(&tp).map_err(|e| Error::csv(&tp, e))?;
    for p in &scene.truth.plots {
        w.serialize(p).map_err(|e| Error::csv(&tp, e))?;
    }
    w.flush().map_err(|e| io(&tp, e))?;
    write_pbm(&scene.truth.sl, &dir.join("truth").join("sl.pbm"))?;
    let sp = dir.join("truth").join("summary.json");
    let json = serde_json::to_string_pretty(&scene.truth.summary).expect("plain struct");
    std::fs::write(&sp, json + "\n").map_err(|e| io(&sp, e))?;

    let (pr, pc) = spec.pitch();
    // detected boxes are ordered by (top, left)
    let first = scene
        .truth
        .plots
        .iter()
        .min_by_key(|p| (p.top, p.left))
        .ok_or_else(|| Error::Config("scene has no plots".into()))?;
    let inputs = SceneInputs {
        cube: "field.hdr".into(),
        panel_region: spec.panel_rect(),
        panel_reflectance: "panel.csv".into(),
        plot_map: "plot_map.csv".into(),
        yields: "yields.csv".into(),
        endmember_cube: "lowalt.hdr".into(),
        reference_library: "reference.csv".into(),
        pitch_px: pr.min(pc) as f64,
        anchor: Anchor {
            target: AnchorTarget::Box(0),
            plot_id: first.plot_id.clone(),
        },
    };
    let text = toml::to_string(&inputs).map_err(|e| Error::Config(e.to_string()))?;
    let p = dir.join(SCENE_FILE);
    std::fs::write(&p, text).map_err(|e| io(&p, e))?;
    Ok(inputs)
}

pub fn read_scene_inputs(dir: &Path) -> Result<SceneInputs> {
    let p = dir.join(SCENE_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let mut s: SceneInputs = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    for f in [
        &mut s.cube,
        &mut s.panel_reflectance,
        &mut s.plot_map,
        &mut s.yields,
        &mut s.endmember_cube,
        &mut s.reference_library,
    ] {
        *f = dir.join(&*f);
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// `b0 + Σ c_k mean_k + γ n_sl`.
    Linear,
    /// `g n_sl (1 + κ (mean_red - mean_blue))`.
    Product,
    /// Noise around a constant.
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionSpec {
    pub seed: u64,
    pub records: usize,
    pub bands: usize,
    pub target: TargetKind,
    /// Sets the noise level for `Linear` and `Product`; `None` is noiseless.
    pub target_r2: Option<f64>,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        RegressionSpec {
            seed: 1,
            records: 2000,
            bands: 190,
            target: TargetKind::Linear,
            target_r2: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegressionSet {
    pub records: Vec<SubPlotRecord>,
    /// Noise-free target per record.
    pub signal: Vec<f64>,
    pub noise_sd: f64,
    /// Variance share of the signal in the generated targets' model.
    pub expected_r2: f64,
}

/// Window records whose features come from random spike/leaf/soil/shadow
/// mixtures and whose targets follow a recorded function plus noise. Records
/// are grouped five to a plot.
pub fn generate_regression_set(spec: &RegressionSpec) -> Result<RegressionSet> {
    if spec.records == 0 || spec.bands < 2 {
        return Err(Error::Config("regression set needs records and at least 2 bands".into()));
    }
    let wl = linspace(430.0, 870.0, spec.bands);
    let lib = library(&wl);
    let d = spec.bands;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let coef: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let red = wl.iter().position(|&w| w >= 665.0).unwrap_or(d - 1);
    let blue = wl.iter().position(|&w| w >= 445.0).unwrap_or(0);
    let mut records = Vec::with_capacity(spec.records);
    let mut signal = Vec::with_capacity(spec.records);
    for i in 0..spec.records {
        let a = dirichlet(4, 1.0, &mut rng);
        let n_sl = rng.random_range(1..=225usize);
        let spread = rng.random_range(0.0..0.02);
        let mut feats = Vec::with_capacity(2 * d + 1);
        for b in 0..d {
            feats.push((0..4).map(|k| lib.spectra[k][b] * a[k]).sum::<f64>());
        }
        for b in 0..d {
            feats.push(spread * feats[b]);
        }
        feats.push(n_sl as f64);
        let s = match spec.target {
            TargetKind::Linear => {
                10.0 + 20.0 * coef.iter().zip(&feats[..d]).map(|(c, m)| c * m).sum::<f64>() / (d as f64).sqrt()
                    + 0.1 * n_sl as f64
            }
            TargetKind::Product => 0.3 * n_sl as f64 * (1.0 + 2.0 * (feats[red] - feats[blue])),
            TargetKind::Noise => 10.0,
        };
        signal.push(s);
        records.push(SubPlotRecord {
            plot_id: format!("R{:05}", i / 5),
            window_row: 0,
            window_col: i % 5,
            n_sl,
            features: feats,
            allocated_yield: 0.0,
        });
    }
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let var = signal.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let (noise_sd, expected_r2) = match (spec.target, spec.target_r2) {
        (TargetKind::Noise, _) => (1.0, 0.0),
        (_, Some(r2)) if r2 < 1.0 => ((var * (1.0 - r2) / r2).sqrt(), r2),
        _ => (0.0, 1.0),
    };
    let nd = Normal::new(0.0, noise_sd.max(1e-300)).unwrap();
    for (r, s) in records.iter_mut().zip(&signal) {
        r.allocated_yield = s + if noise_sd > 0.0 { nd.sample(&mut rng) } else { 0.0 };
    }
    Ok(RegressionSet {
        records,
        signal,
        noise_sd,
        expected_r2,
    })
}
