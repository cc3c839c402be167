//! Fully constrained spectral unmixing.
//!
//! Each pixel `x` is decomposed as `x ≈ W h` with `h` on the probability
//! simplex (`h >= 0`, `1ᵀh = 1`) by minimizing `‖x - W h‖²`, i.e. the
//! quadratic program `min ½ hᵀQh + cᵀh` with `Q = 2WᵀW`, `c = -2Wᵀx`.
//! The upper bound `h <= 1` is implied by the other two constraints.
//!
//! The solver enumerates every non-empty support set `S` of the `e`
//! endmembers and solves the equality-constrained problem on `S` through its
//! KKT system
//!
//! ```text
//! [ G_S  1 ] [ h_S ]   [ (Wᵀx)_S ]
//! [ 1ᵀ   0 ] [  μ  ] = [    1    ]      G = WᵀW
//! ```
//!
//! keeping the primal-feasible candidate with the lowest objective. The KKT
//! inverses depend only on `W`, so they are computed once per endmember set
//! and a pixel costs one `Wᵀx` product plus `2^e - 1` tiny mat-vecs.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::cube::{HyperCube, Units};
use crate::endmember::EndmemberSet;
use crate::error::{Error, Result};
use crate::segment::BinaryMask;

/// Largest endmember count accepted by the enumeration solver.
pub const MAX_ENDMEMBERS: usize = 12;

const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Support {
    members: Vec<usize>,
    /// Row-major `s x s` block of the KKT inverse acting on `(Wᵀx)_S`.
    gain: Vec<f64>,
    /// Column of the KKT inverse acting on the sum-to-one right-hand side.
    offset: Vec<f64>,
}

/// Precomputed solver for one endmember matrix.
#[derive(Debug, Clone)]
pub struct Unmixer {
    bands: usize,
    e: usize,
    /// Endmember spectra, band-major per endmember.
    w: Vec<Vec<f64>>,
    gram: Vec<f64>,
    supports: Vec<Support>,
}

/// Inverts a small dense matrix by Gauss-Jordan elimination with partial
/// pivoting; `None` when a pivot falls below `tol`.
fn invert(mut a: Vec<f64>, n: usize, tol: f64) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() <= tol {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
                inv.swap(piv * n + k, col * n + k);
            }
        }
        let p = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                a[r * n + k] -= f * a[col * n + k];
                inv[r * n + k] -= f * inv[col * n + k];
            }
        }
    }
    Some(inv)
}

impl Unmixer {
    pub fn new(endmembers: &EndmemberSet) -> Result<Self> {
        let e = endmembers.len();
        if e == 0 || e > MAX_ENDMEMBERS {
            return Err(Error::Size(format!(
                "enumeration solver supports 1..={MAX_ENDMEMBERS} endmembers, got {e}"
            )));
        }
        let w = endmembers.spectra.clone();
        let bands = w[0].len();
        if w.iter().any(|s| s.len() != bands) {
            return Err(Error::Dimension("endmembers differ in band count".into()));
        }
        if w.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input("endmember spectra must be finite".into()));
        }
        let mut gram = vec![0.0; e * e];
        for i in 0..e {
            for j in 0..e {
                gram[i * e + j] = w[i].iter().zip(&w[j]).map(|(a, b)| a * b).sum();
            }
        }
        let scale = (0..e).map(|i| gram[i * e + i]).fold(1.0f64, f64::max);
        let mut supports = Vec::new();
        for mask in 1usize..(1 << e) {
            let members: Vec<usize> = (0..e).filter(|i| mask & (1 << i) != 0).collect();
            let s = members.len();
            let n = s + 1;
            let mut kkt = vec![0.0; n * n];
            for (a, &i) in members.iter().enumerate() {
                for (b, &j) in members.iter().enumerate() {
                    kkt[a * n + b] = gram[i * e + j];
                }
                kkt[a * n + s] = 1.0;
                kkt[s * n + a] = 1.0;
            }
            // affinely dependent supports are skipped; some smaller support
            // attains the same optimum
            let Some(inv) = invert(kkt, n, scale * 1e-12) else {
                continue;
            };
            let mut gain = vec![0.0; s * s];
            let mut offset = vec![0.0; s];
            for a in 0..s {
                for b in 0..s {
                    gain[a * s + b] = inv[a * n + b];
                }
                offset[a] = inv[a * n + s];
            }
            supports.push(Support {
                members,
                gain,
                offset,
            });
        }
        Ok(Self {
            bands,
            e,
            w,
            gram,
            supports,
        })
    }

    pub fn endmember_count(&self) -> usize {
        self.e
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Abundances for one pixel; writes `e` values into `out` and returns the
    /// squared residual `‖x - W h‖²`.
    pub fn solve_into(&self, x: &[f64], out: &mut [f64]) -> Result<f64> {
        if x.len() != self.bands {
            return Err(Error::Dimension(format!(
                "pixel has {} bands, endmembers have {}",
                x.len(),
                self.bands
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("pixel spectrum is not finite".into()));
        }
        let e = self.e;
        let mut wtx = [0.0f64; MAX_ENDMEMBERS];
        for (i, s) in self.w.iter().enumerate() {
            wtx[i] = s.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        let xx: f64 = x.iter().map(|v| v * v).sum();

        let mut best_obj = f64::INFINITY;
        let mut best_norm = f64::INFINITY;
        let mut best = [0.0f64; MAX_ENDMEMBERS];
        let mut h = [0.0f64; MAX_ENDMEMBERS];
        for sup in &self.supports {
            let s = sup.members.len();
            let mut feasible = true;
            let mut total = 0.0;
            h[..e].iter_mut().for_each(|v| *v = 0.0);
            for a in 0..s {
                let mut v = sup.offset[a];
                for (b, &j) in sup.members.iter().enumerate() {
                    v += sup.gain[a * s + b] * wtx[j];
                }
                if v < -FEASIBILITY_TOL {
                    feasible = false;
                    break;
                }
                let v = v.max(0.0);
                h[sup.members[a]] = v;
                total += v;
            }
            if !feasible || !(total > 0.0) {
                continue;
            }
            for &i in &sup.members {
                h[i] /= total;
            }
            let mut obj = xx;
            for &i in &sup.members {
                obj -= 2.0 * h[i] * wtx[i];
                for &j in &sup.members {
                    obj += h[i] * h[j] * self.gram[i * e + j];
                }
            }
            let norm: f64 = h[..e].iter().map(|v| v * v).sum();
            let tie = 1e-12 * (1.0 + best_obj.abs());
            if obj < best_obj - tie || (obj <= best_obj + tie && norm < best_norm) {
                best_obj = obj;
                best_norm = norm;
                best[..e].copy_from_slice(&h[..e]);
            }
        }
        out[..e].copy_from_slice(&best[..e]);
        Ok(best_obj.max(0.0))
    }

    pub fn solve(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = vec![0.0; self.e];
        self.solve_into(x, &mut h)?;
        Ok(h)
    }

    /// `‖x - W h‖²` evaluated directly from the spectra.
    pub fn residual(&self, x: &[f64], h: &[f64]) -> f64 {
        (0..self.bands)
            .map(|b| {
                let m: f64 = self.w.iter().zip(h).map(|(s, hi)| s[b] * hi).sum();
                (x[b] - m) * (x[b] - m)
            })
            .sum()
    }
}

/// Simplex-constrained least-squares abundances of one pixel.
pub fn unmix_pixel(x: &[f64], endmembers: &EndmemberSet) -> Result<Vec<f64>> {
    Unmixer::new(endmembers)?.solve(x)
}

/// Per-pixel abundance vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMap {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<String>,
    /// Pixel-major: `values[(r * cols + c) * e + k]`.
    pub values: Vec<f64>,
    /// `‖X - WH‖_F`.
    pub residual_frobenius: f64,
}

impl AbundanceMap {
    pub fn e(&self) -> usize {
        self.labels.len()
    }

    pub fn pixel(&self, r: usize, c: usize) -> &[f64] {
        let e = self.e();
        let i = (r * self.cols + c) * e;
        &self.values[i..i + e]
    }

    pub fn plane(&self, k: usize) -> Vec<f64> {
        self.values.chunks_exact(self.e()).map(|h| h[k]).collect()
    }

    /// Abundance cube: one band per endmember, numbered 1..=e.
    pub fn to_cube(&self) -> Result<HyperCube> {
        HyperCube::new(
            self.rows,
            self.cols,
            (1..=self.e()).map(|i| i as f64).collect(),
            self.values.clone(),
            Units::Abundance,
        )
    }
}

/// Unmixes every pixel independently. Output is identical for any thread
/// count.
pub fn unmix_cube(cube: &HyperCube, endmembers: &EndmemberSet) -> Result<AbundanceMap> {
    if cube.bands() != endmembers.spectra[0].len() {
        return Err(Error::Dimension(format!(
            "cube has {} bands, endmembers have {}",
            cube.bands(),
            endmembers.spectra[0].len()
        )));
    }
    if !endmembers.wavelengths.is_empty()
        && endmembers
            .wavelengths
            .iter()
            .zip(cube.wavelengths())
            .any(|(a, b)| (a - b).abs() > 1e-6)
    {
        return Err(Error::Dimension("cube and endmember wavelengths differ".into()));
    }
    let solver = Unmixer::new(endmembers)?;
    let e = solver.endmember_count();
    let n = cube.pixel_count();
    let mut values = vec![0.0; n * e];
    let mut resid = vec![0.0; n];
    values
        .par_chunks_mut(e)
        .zip(resid.par_iter_mut())
        .enumerate()
        .try_for_each(|(i, (h, r))| -> Result<()> {
            *r = solver.solve_into(cube.pixel_at(i), h)?;
            Ok(())
        })?;
    let residual_frobenius = resid.iter().sum::<f64>().sqrt();
    Ok(AbundanceMap {
        rows: cube.rows(),
        cols: cube.cols(),
        labels: endmembers.labels.clone(),
        values,
        residual_frobenius,
    })
}

/// Spike-and-leaf mask with its per-pixel score.
#[derive(Debug, Clone, PartialEq)]
pub struct SlMask {
    pub mask: BinaryMask,
    pub score: Vec<f64>,
}

/// Score = spike + leaf abundance; foreground iff score > 0.5 (exactly 0.5
/// is background).
pub fn sl_mask(abund: &AbundanceMap, spike_idx: usize, leaf_idx: usize) -> SlMask {
    let score: Vec<f64> = abund
        .values
        .chunks_exact(abund.e())
        .map(|h| h[spike_idx] + h[leaf_idx])
        .collect();
    SlMask {
        mask: BinaryMask::new(abund.rows, abund.cols, score.iter().map(|&s| s > 0.5).collect()),
        score,
    }
}

/// [`sl_mask`] with the spike and leaf planes found by label.
pub fn sl_mask_by_label(abund: &AbundanceMap, spike: &str, leaf: &str) -> Result<SlMask> {
    let find = |l: &str| {
        abund
            .labels
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| Error::Input(format!("abundance map has no `{l}` plane")))
    };
    Ok(sl_mask(abund, find(spike)?, find(leaf)?))
}

/// Colour of ramp entry `i`: `(255 - i, i, (255 - i) / 2)`, running from
/// soil-brown-ish red to green. The green channel equals the entry index.
pub fn ramp(i: u8) -> [u8; 3] {
    [255 - i, i, (255 - i) / 2]
}

pub fn ramp_index(score: f64) -> u8 {
    (score.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes per-pixel scores in `[0, 1]` as a binary PPM (P6) via [`ramp`].
pub fn write_colormap(scores: &[f64], rows: usize, cols: usize, path: &Path) -> Result<()> {
    if scores.len() != rows * cols {
        return Err(Error::Dimension("score image size".into()));
    }
    let mut out = format!("P6\n{cols} {rows}\n255\n").into_bytes();
    for &s in scores {
        out.extend_from_slice(&ramp(ramp_index(s)));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Inverse of [`write_colormap`] (quantized to 1/255).
pub fn read_colormap(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: m.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PPM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    if fields[0] != "P6" {
        return Err(bad("not a P6 file"));
    }
    let cols: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let rows: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let body = &bytes[pos..];
    if body.len() != rows * cols * 3 {
        return Err(bad("pixel data length"));
    }
    let scores = body.chunks_exact(3).map(|p| p[1] as f64 / 255.0).collect();
    Ok((rows, cols, scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(spectra: Vec<Vec<f64>>) -> EndmemberSet {
        let d = spectra[0].len();
        let labels = (0..spectra.len()).map(|i| format!("m{i}")).collect();
        EndmemberSet::new((0..d).map(|i| 400.0 + i as f64).collect(), spectra, labels).unwrap()
    }

    fn four() -> EndmemberSet {
        set(vec![
            vec![0.9, 0.1, 0.2, 0.3, 0.1],
            vec![0.1, 0.8, 0.1, 0.2, 0.4],
            vec![0.2, 0.1, 0.7, 0.1, 0.2],
            vec![0.05, 0.05, 0.05, 0.6, 0.5],
        ])
    }

    #[test]
    fn vertex_recovery() {
        let w = four();
        for j in 0..4 {
            let h = unmix_pixel(&w.spectra[j], &w).unwrap();
            for (i, v) in h.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-9, "{h:?}");
            }
        }
    }

    #[test]
    fn interior_face() {
        let w = four();
        let x: Vec<f64> = w.spectra[0].iter().zip(&w.spectra[1]).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
        let h = unmix_pixel(&x, &w).unwrap();
        for (v, want) in h.iter().zip([0.5, 0.5, 0.0, 0.0]) {
            assert!((v - want).abs() < 1e-8);
        }
    }

    #[test]
    fn kkt_conditions_hold() {
        let w = four();
        let solver = Unmixer::new(&w).unwrap();
        let x = [0.4, 0.9, -0.2, 0.0, 1.3];
        let h = solver.solve(&x).unwrap();
        // gradient of ½‖x - Wh‖²: Gh - Wᵀx
        let g: Vec<f64> = (0..4)
            .map(|i| {
                let gh: f64 = (0..4).map(|j| solver.gram[i * 4 + j] * h[j]).sum();
                let wtx: f64 = w.spectra[i].iter().zip(&x).map(|(a, b)| a * b).sum();
                gh - wtx
            })
            .collect();
        let active: Vec<usize> = (0..4).filter(|&i| h[i] > 1e-12).collect();
        let mu = g[active[0]];
        for i in 0..4 {
            if active.contains(&i) {
                assert!((g[i] - mu).abs() < 1e-9);
            } else {
                assert!(g[i] >= mu - 1e-9);
            }
        }
    }

    #[test]
    fn dependent_columns_choose_min_norm() {
        // the third spectrum is the midpoint of the first two: (0, 0, 1) and
        // (0.5, 0.5, 0) are both optimal, the latter has the smaller norm
        let w = set(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        let h = unmix_pixel(&[0.5, 0.5], &w).unwrap();
        assert!((h[0] - 0.5).abs() < 1e-12 && (h[1] - 0.5).abs() < 1e-12, "{h:?}");
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(unmix_pixel(&[f64::NAN, 0.0, 0.0, 0.0, 0.0], &four()), Err(Error::Input(_))));
    }

    #[test]
    fn cube_of_one_endmember() {
        let w = four();
        let data: Vec<f64> = (0..6).flat_map(|_| w.spectra[2].clone()).collect();
        let cube = HyperCube::new(2, 3, w.wavelengths.clone(), data, Units::Reflectance).unwrap();
        let a = unmix_cube(&cube, &w).unwrap();
        assert!(a.plane(2).iter().all(|&v| (v - 1.0).abs() < 1e-9));
        assert!(a.plane(0).iter().all(|&v| v.abs() < 1e-9));
        assert!(a.residual_frobenius < 1e-6);
        let bad = HyperCube::new(1, 1, vec![1.0, 2.0], vec![0.0, 0.0], Units::Reflectance).unwrap();
        assert!(matches!(unmix_cube(&bad, &w), Err(Error::Dimension(_))));
    }

    #[test]
    fn sl_rule_and_tie() {
        let a = AbundanceMap {
            rows: 1,
            cols: 2,
            labels: vec!["spike".into(), "leaf".into(), "soil".into(), "shadow".into()],
            values: vec![0.6, 0.2, 0.1, 0.1, 0.25, 0.25, 0.25, 0.25],
            residual_frobenius: 0.0,
        };
        let m = sl_mask_by_label(&a, "spike", "leaf").unwrap();
        assert_eq!(m.mask.bits, vec![true, false]);
        assert!((m.score[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn colormap_endpoints_and_round_trip() {
        assert_eq!(ramp(ramp_index(0.0)), ramp(0));
        assert_eq!(ramp_index(1.0), 255);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        let scores = vec![0.0, 0.1234, 0.5, 0.77, 1.0, 0.999];
        write_colormap(&scores, 2, 3, &p).unwrap();
        let (r, c, back) = read_colormap(&p).unwrap();
        assert_eq!((r, c), (2, 3));
        for (a, b) in scores.iter().zip(&back) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
        write_colormap(&[0.3; 4], 2, 2, &p).unwrap();
        let body = fs::read(&p).unwrap();
        let px = &body[body.len() - 12..];
        assert!(px.chunks(3).all(|c| c == &px[..3]));
    }
}
