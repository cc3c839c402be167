//! Endmember extraction: PCA, successive volume maximization (SVMAX) and
//! spectral-neighbourhood refinement.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::cube::HyperCube;
use crate::error::{Error, Result};

/// Borrowed view of `N` spectra of `bands` values each, stored contiguously
/// (the columns of a `bands x N` matrix). `cols` maps a pixel index back to
/// image coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Spectra<'a> {
    bands: usize,
    cols: usize,
    data: &'a [f64],
}

impl<'a> Spectra<'a> {
    pub fn new(bands: usize, data: &'a [f64]) -> Self {
        assert!(bands > 0 && data.len().is_multiple_of(bands), "spectra length");
        Self {
            bands,
            cols: data.len() / bands,
            data,
        }
    }

    pub fn from_cube(cube: &'a HyperCube) -> Self {
        Self {
            bands: cube.bands(),
            cols: cube.cols().max(1),
            data: cube.data(),
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.bands
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, j: usize) -> &'a [f64] {
        &self.data[j * self.bands..(j + 1) * self.bands]
    }

    fn coords(&self, j: usize) -> (usize, usize) {
        (j / self.cols, j % self.cols)
    }
}

/// `e` spectra over a common band set, one label each.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberSet {
    pub wavelengths: Vec<f64>,
    /// One spectrum per endmember (columns of W).
    pub spectra: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub source_pixels: Vec<Option<(usize, usize)>>,
}

impl EndmemberSet {
    pub fn new(wavelengths: Vec<f64>, spectra: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        let set = Self {
            source_pixels: vec![None; spectra.len()],
            wavelengths,
            spectra,
            labels,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let d = self.wavelengths.len();
        if self.spectra.len() < 2 {
            return Err(Error::Input("an endmember set needs at least 2 spectra".into()));
        }
        if self.labels.len() != self.spectra.len() {
            return Err(Error::Input("one label per endmember required".into()));
        }
        for (i, s) in self.spectra.iter().enumerate() {
            if s.len() != d {
                return Err(Error::Dimension(format!(
                    "endmember {i} has {} bands, expected {d}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("endmember {i} is not finite")));
            }
        }
        let mut sorted = self.labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.labels.len() {
            return Err(Error::Input("endmember labels must be unique".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Sub-set with the given labels, in that order.
    pub fn select(&self, labels: &[&str]) -> Result<EndmemberSet> {
        let mut out = EndmemberSet {
            wavelengths: self.wavelengths.clone(),
            spectra: Vec::new(),
            labels: Vec::new(),
            source_pixels: Vec::new(),
        };
        for l in labels {
            let i = self
                .index_of(l)
                .ok_or_else(|| Error::Input(format!("no endmember labelled `{l}`")))?;
            out.spectra.push(self.spectra[i].clone());
            out.labels.push(self.labels[i].clone());
            out.source_pixels.push(self.source_pixels[i]);
        }
        out.validate()?;
        Ok(out)
    }

    /// Restricts every spectrum to the bands whose wavelengths appear in
    /// `wavelengths` (within 1e-6 nm).
    pub fn restrict_to(&self, wavelengths: &[f64]) -> Result<EndmemberSet> {
        let idx = wavelengths
            .iter()
            .map(|w| {
                self.wavelengths
                    .iter()
                    .position(|v| (v - w).abs() < 1e-6)
                    .ok_or_else(|| Error::Dimension(format!("endmembers lack band at {w} nm")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EndmemberSet {
            wavelengths: wavelengths.to_vec(),
            spectra: self
                .spectra
                .iter()
                .map(|s| idx.iter().map(|&i| s[i]).collect())
                .collect(),
            labels: self.labels.clone(),
            source_pixels: self.source_pixels.clone(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header = vec!["label".to_string()];
        header.extend(self.wavelengths.iter().map(|v| format!("{v}")));
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for (l, s) in self.labels.iter().zip(&self.spectra) {
            let mut row = vec![l.clone()];
            row.extend(s.iter().map(|v| format!("{v}")));
            w.write_record(&row).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<EndmemberSet> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        if header.get(0) != Some("label") {
            return Err(Error::csv(path, "first column must be `label`"));
        }
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::csv(path, format!("`{s}`: {e}")));
        let wavelengths = header.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
        let mut spectra = Vec::new();
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            labels.push(rec.get(0).unwrap_or_default().to_string());
            spectra.push(rec.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?);
        }
        EndmemberSet::new(wavelengths, spectra, labels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `k` orthonormal component vectors of length `d`.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl PcaBasis {
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|v| v.iter().zip(x).zip(&self.mean).map(|((a, b), m)| a * (b - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (v, &c) in self.components.iter().zip(y) {
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi += c * vi;
            }
        }
        x
    }
}

fn pca_eigen(pixels: Spectra<'_>) -> (Vec<f64>, Vec<(f64, Vec<f64>)>) {
    let d = pixels.bands();
    let n = pixels.len();
    let mut mean = vec![0.0; d];
    for j in 0..n {
        for (m, v) in mean.iter_mut().zip(pixels.get(j)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    let mut centred = vec![0.0; d];
    for j in 0..n {
        for ((c, v), m) in centred.iter_mut().zip(pixels.get(j)).zip(&mean) {
            *c = v - m;
        }
        for a in 0..d {
            let ca = centred[a];
            let row = &mut cov[a * d..a * d + a + 1];
            for (b, slot) in row.iter_mut().enumerate() {
                *slot += ca * centred[b];
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    let cov = DMatrix::from_fn(d, d, |a, b| {
        let (a, b) = if b <= a { (a, b) } else { (b, a) };
        cov[a * d + b] / denom
    });
    let eig = SymmetricEigen::new(cov);
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
        .map(|i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let big = v
                .iter()
                .copied()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (eig.eigenvalues[i].max(0.0), v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    (mean, pairs)
}

/// PCA by covariance eigendecomposition. Each component's largest-magnitude
/// element is made positive.
pub fn pca_fit(pixels: Spectra<'_>, k: usize) -> Result<PcaBasis> {
    let n = pixels.len();
    if k == 0 || k > pixels.bands() || n <= k {
        return Err(Error::Size(format!(
            "pca needs 1 <= k <= bands and N > k (k = {k}, bands = {}, N = {n})",
            pixels.bands()
        )));
    }
    let (mean, pairs) = pca_eigen(pixels);
    let total: f64 = pairs.iter().map(|p| p.0).sum();
    let top = pairs[0].0;
    let rank = pairs.iter().filter(|p| p.0 > top * 1e-12 && p.0 > 0.0).count();
    if k > rank {
        return Err(Error::Rank { requested: k, rank });
    }
    let pairs: Vec<_> = pairs.into_iter().take(k).collect();
    Ok(PcaBasis {
        mean,
        explained_variance: pairs.iter().map(|p| p.0).collect(),
        components: pairs.into_iter().map(|p| p.1).collect(),
        total_variance: total,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the maximum score; the lowest index wins ties.
fn argmax(scores: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &s) in scores.iter().enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

/// Successive volume maximization over pure pixels.
///
/// Pixels are reduced to `e - 1` dimensions by affine PCA. The first
/// endmember is the pixel farthest from the data mean; each subsequent one is
/// the pixel farthest from the affine hull of those already chosen, which is
/// the pixel that maximizes the volume of the growing simplex.
pub fn svmax(pixels: Spectra<'_>, e: usize) -> Result<EndmemberSet> {
    let n = pixels.len();
    let d = pixels.bands();
    if e < 2 {
        return Err(Error::Size(format!("need at least 2 endmembers, got {e}")));
    }
    if e > n {
        return Err(Error::Size(format!("{e} endmembers requested from {n} pixels")));
    }
    if d + 1 < e {
        return Err(Error::Size(format!("{e} endmembers need at least {} bands, have {d}", e - 1)));
    }
    if pixels.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("pixels contain non-finite values".into()));
    }
    let k = e - 1;
    let (mean, pairs) = pca_eigen(pixels);
    let basis: Vec<&Vec<f64>> = pairs.iter().take(k).map(|p| &p.1).collect();
    let reduced: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let centred: Vec<f64> = pixels.get(j).iter().zip(&mean).map(|(v, m)| v - m).collect();
            basis.iter().map(|b| dot(b, &centred)).collect()
        })
        .collect();

    let norms: Vec<f64> = reduced.iter().map(|y| dot(y, y)).collect();
    let (first, scale) = argmax(&norms);
    if !(scale > 0.0) {
        return Err(Error::DegenerateSimplex("all pixels are identical".into()));
    }
    let mut chosen = vec![first];
    let origin = reduced[first].clone();
    let mut residuals: Vec<Vec<f64>> = reduced
        .iter()
        .map(|y| y.iter().zip(&origin).map(|(a, b)| a - b).collect())
        .collect();
    while chosen.len() < e {
        // residuals are kept orthogonal to the current hull directions
        let scores: Vec<f64> = residuals.iter().map(|r| dot(r, r)).collect();
        let (best, dist2) = argmax(&scores);
        if !(dist2 > scale * 1e-18) {
            return Err(Error::DegenerateSimplex(format!(
                "data spans fewer than {} affinely independent pixels",
                chosen.len() + 1
            )));
        }
        chosen.push(best);
        let norm = dist2.sqrt();
        let dir: Vec<f64> = residuals[best].iter().map(|v| v / norm).collect();
        for r in residuals.iter_mut() {
            let p = dot(r, &dir);
            r.iter_mut().zip(&dir).for_each(|(ri, di)| *ri -= p * di);
        }
    }
    Ok(EndmemberSet {
        wavelengths: Vec::new(),
        spectra: chosen.iter().map(|&j| pixels.get(j).to_vec()).collect(),
        labels: (1..=e).map(|i| format!("synthetic-{i}")).collect(),
        source_pixels: chosen.iter().map(|&j| Some(pixels.coords(j))).collect(),
    })
}

/// [`svmax`] on a cube, carrying its wavelengths.
pub fn svmax_cube(cube: &HyperCube, e: usize) -> Result<EndmemberSet> {
    let mut set = svmax(Spectra::from_cube(cube), e)?;
    set.wavelengths = cube.wavelengths().to_vec();
    Ok(set)
}

/// Replaces every endmember by the mean of its `k_neighbors` spectrally
/// nearest pixels (Euclidean, the pixel itself included; ties by index).
pub fn refine_by_neighborhood(
    pixels: Spectra<'_>,
    selected: &EndmemberSet,
    k_neighbors: usize,
) -> Result<EndmemberSet> {
    if k_neighbors == 0 {
        return Err(Error::Input("k_neighbors must be at least 1".into()));
    }
    let n = pixels.len();
    let k = k_neighbors.min(n);
    let mut out = selected.clone();
    for s in out.spectra.iter_mut() {
        if s.len() != pixels.bands() {
            return Err(Error::Dimension("endmember and pixel band counts differ".into()));
        }
        let mut dist: Vec<(f64, usize)> = (0..n)
            .map(|j| {
                let d2 = pixels.get(j).iter().zip(s.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, j)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < n {
            dist.select_nth_unstable_by(k - 1, cmp);
        }
        let mut nearest: Vec<usize> = dist[..k].iter().map(|p| p.1).collect();
        nearest.sort_unstable();
        let mut mean = vec![0.0; s.len()];
        for j in nearest {
            mean.iter_mut().zip(pixels.get(j)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= k as f64);
        *s = mean;
    }
    Ok(out)
}

/// `(e-1)`-dimensional volume of the simplex with the given vertices, from
/// the Gram determinant of the edge vectors.
pub fn simplex_volume(vertices: &[&[f64]]) -> f64 {
    let m = vertices.len();
    if m < 2 {
        return 0.0;
    }
    let edges: Vec<Vec<f64>> = vertices[1..]
        .iter()
        .map(|v| v.iter().zip(vertices[0]).map(|(a, b)| a - b).collect())
        .collect();
    let g = DMatrix::from_fn(m - 1, m - 1, |i, j| dot(&edges[i], &edges[j]));
    let det = g.determinant().max(0.0);
    let fact: f64 = (1..m).map(|i| i as f64).product();
    det.sqrt() / fact
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Labels each endmember after a reference spectrum so that the summed
/// cosine similarity of the one-to-one matching is maximal.
pub fn label_by_reference(set: &EndmemberSet, reference: &EndmemberSet) -> Result<EndmemberSet> {
    let e = set.len();
    let m = reference.len();
    if m < e {
        return Err(Error::Input(format!("{m} reference spectra cannot label {e} endmembers")));
    }
    if m > 16 {
        return Err(Error::Input("at most 16 reference spectra supported".into()));
    }
    let refr = reference.restrict_to(&set.wavelengths)?;
    let sim: Vec<Vec<f64>> = set
        .spectra
        .iter()
        .map(|s| refr.spectra.iter().map(|r| cosine(s, r)).collect())
        .collect();
    // dp over (endmember index, used-reference mask)
    let full = 1usize << m;
    let mut best = vec![vec![f64::NEG_INFINITY; full]; e + 1];
    let mut choice = vec![vec![usize::MAX; full]; e + 1];
    best[0][0] = 0.0;
    for i in 0..e {
        for mask in 0..full {
            if best[i][mask] == f64::NEG_INFINITY {
                continue;
            }
            for r in 0..m {
                if mask & (1 << r) != 0 {
                    continue;
                }
                let next = mask | (1 << r);
                let v = best[i][mask] + sim[i][r];
                if v > best[i + 1][next] {
                    best[i + 1][next] = v;
                    choice[i + 1][next] = r;
                }
            }
        }
    }
    let (mut mask, _) = (0..full)
        .map(|mk| (mk, best[e][mk]))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let mut labels = vec![String::new(); e];
    for i in (1..=e).rev() {
        let r = choice[i][mask];
        labels[i - 1] = reference.labels[r].clone();
        mask &= !(1 << r);
    }
    let mut out = set.clone();
    out.labels = labels;
    Ok(out)
}
