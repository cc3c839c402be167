//! Plot identification: cluster bounding-box corners into grid lines and
//! propagate plot IDs from one anchored plot using the field plot map.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::PlotBox;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotMapEntry {
    pub plot_id: String,
    pub field_row: i64,
    pub field_col: i64,
}

/// Field layout: plot ID per (field_row, field_col).
#[derive(Debug, Clone, Default)]
pub struct PlotMap {
    entries: Vec<PlotMapEntry>,
    by_pos: HashMap<(i64, i64), usize>,
    by_id: HashMap<String, usize>,
}

impl PlotMap {
    pub fn new(entries: Vec<PlotMapEntry>) -> Result<Self> {
        let mut by_pos = HashMap::new();
        let mut by_id = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if by_pos.insert((e.field_row, e.field_col), i).is_some() {
                return Err(Error::Input(format!(
                    "plot map position ({}, {}) used twice",
                    e.field_row, e.field_col
                )));
            }
            if by_id.insert(e.plot_id.clone(), i).is_some() {
                return Err(Error::Input(format!("plot id {} used twice", e.plot_id)));
            }
        }
        Ok(Self {
            entries,
            by_pos,
            by_id,
        })
    }

    pub fn entries(&self) -> &[PlotMapEntry] {
        &self.entries
    }

    pub fn at(&self, row: i64, col: i64) -> Option<&PlotMapEntry> {
        self.by_pos.get(&(row, col)).map(|&i| &self.entries[i])
    }

    pub fn get(&self, plot_id: &str) -> Option<&PlotMapEntry> {
        self.by_id.get(plot_id).map(|&i| &self.entries[i])
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let entries = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<PlotMapEntry>, _>>()
            .map_err(|e| Error::csv(path, e))?;
        Self::new(entries)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        for e in &self.entries {
            w.serialize(e).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// One 1-D cluster: member box indices and their coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub members: Vec<usize>,
    pub coords: Vec<f64>,
}

impl Cluster {
    pub fn mean(&self) -> f64 {
        self.coords.iter().sum::<f64>() / self.coords.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerClusters {
    pub rows: Vec<Cluster>,
    pub cols: Vec<Cluster>,
}

fn single_linkage(values: &[(usize, f64)], cutoff: f64) -> Vec<Cluster> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (idx, v) in sorted {
        match clusters.last_mut() {
            Some(c) if v - last <= cutoff => {
                c.members.push(idx);
                c.coords.push(v);
            }
            _ => clusters.push(Cluster {
                members: vec![idx],
                coords: vec![v],
            }),
        }
        last = v;
    }
    clusters
}

/// Single-linkage clustering of box tops (rows) and lefts (columns) with
/// cutoff `pitch_px / 2`; clusters come out in ascending coordinate order.
pub fn cluster_corners(boxes: &[PlotBox], pitch_px: f64) -> Result<CornerClusters> {
    if boxes.is_empty() {
        return Err(Error::Input("no boxes to cluster".into()));
    }
    if !(pitch_px > 0.0) {
        return Err(Error::Input(format!("pitch must be positive, got {pitch_px}")));
    }
    let cutoff = pitch_px / 2.0;
    let tops: Vec<(usize, f64)> = boxes.iter().enumerate().map(|(i, b)| (i, b.top as f64)).collect();
    let lefts: Vec<(usize, f64)> = boxes.iter().enumerate().map(|(i, b)| (i, b.left as f64)).collect();
    Ok(CornerClusters {
        rows: single_linkage(&tops, cutoff),
        cols: single_linkage(&lefts, cutoff),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridLines {
    pub horizontal: Vec<f64>,
    pub vertical: Vec<f64>,
}

/// Each line sits at the mean coordinate of its cluster.
pub fn build_grid(clusters: &CornerClusters) -> GridLines {
    GridLines {
        horizontal: clusters.rows.iter().map(Cluster::mean).collect(),
        vertical: clusters.cols.iter().map(Cluster::mean).collect(),
    }
}

/// Index of the nearest line; ties go to the lower index.
fn nearest(lines: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (i, &l) in lines.iter().enumerate().skip(1) {
        if (l - v).abs() < (lines[best] - v).abs() {
            best = i;
        }
    }
    best
}

impl GridLines {
    pub fn cell_of(&self, b: &PlotBox) -> (usize, usize) {
        (
            nearest(&self.horizontal, b.top as f64),
            nearest(&self.vertical, b.left as f64),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorTarget {
    /// Index into the box list handed to [`assign_ids`].
    Box(usize),
    Cell { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub target: AnchorTarget,
    pub plot_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignedCell {
    pub box_index: usize,
    pub plot_box: PlotBox,
    pub plot_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridAssignment {
    pub horizontal_lines: Vec<f64>,
    pub vertical_lines: Vec<f64>,
    /// Row-major `horizontal_lines.len() x vertical_lines.len()` cells.
    pub cells: Vec<Option<AssignedCell>>,
    pub warnings: Vec<String>,
}

impl GridAssignment {
    pub fn grid_rows(&self) -> usize {
        self.horizontal_lines.len()
    }

    pub fn grid_cols(&self) -> usize {
        self.vertical_lines.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&AssignedCell> {
        self.cells[row * self.grid_cols() + col].as_ref()
    }

    /// Assigned cells in row-major order with their grid coordinates.
    pub fn assigned(&self) -> impl Iterator<Item = (usize, usize, &AssignedCell)> {
        let nc = self.grid_cols();
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(i, c)| c.as_ref().map(|c| (i / nc, i % nc, c)))
    }

    /// Plot ID given to box `index`, if any.
    pub fn id_of_box(&self, index: usize) -> Option<&str> {
        self.cells
            .iter()
            .flatten()
            .find(|c| c.box_index == index)
            .map(|c| c.plot_id.as_str())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["plot_id", "top", "left", "height", "width", "grid_row", "grid_col"])
            .map_err(|e| Error::csv(path, e))?;
        for (r, c, cell) in self.assigned() {
            let b = &cell.plot_box;
            w.write_record([
                cell.plot_id.clone(),
                b.top.to_string(),
                b.left.to_string(),
                b.height.to_string(),
                b.width.to_string(),
                r.to_string(),
                c.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Row read back from a grid-assignment CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub plot_id: String,
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub grid_row: usize,
    pub grid_col: usize,
}

pub fn read_assignment_csv(path: &Path) -> Result<Vec<AssignmentRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<AssignmentRow>, _>>()
        .map_err(|e| Error::csv(path, e))
}

/// Places every box in the cell of its nearest horizontal/vertical lines and
/// labels cell `(r, c)` with the plot at field position
/// `anchor_field + (r - anchor_r, c - anchor_c)`.
pub fn assign_ids(
    grid: &GridLines,
    boxes: &[PlotBox],
    plot_map: &PlotMap,
    anchor: &Anchor,
) -> Result<GridAssignment> {
    let (nr, nc) = (grid.horizontal.len(), grid.vertical.len());
    if nr == 0 || nc == 0 {
        return Err(Error::Input("grid has no lines".into()));
    }
    let anchor_entry = plot_map
        .get(&anchor.plot_id)
        .ok_or_else(|| Error::Anchor(format!("plot id {} not in plot map", anchor.plot_id)))?;
    let (ar, ac) = match anchor.target {
        AnchorTarget::Box(i) => {
            let b = boxes
                .get(i)
                .ok_or_else(|| Error::Anchor(format!("anchor box {i} does not exist")))?;
            grid.cell_of(b)
        }
        AnchorTarget::Cell { row, col } => {
            if row >= nr || col >= nc {
                return Err(Error::Anchor(format!(
                    "anchor cell ({row}, {col}) outside {nr}x{nc} grid"
                )));
            }
            (row, col)
        }
    };

    let mut occupant: Vec<Option<usize>> = vec![None; nr * nc];
    for (i, b) in boxes.iter().enumerate() {
        let (r, c) = grid.cell_of(b);
        let slot = &mut occupant[r * nc + c];
        if let Some(prev) = *slot {
            return Err(Error::Ambiguity {
                first: prev,
                second: i,
                row: r,
                col: c,
            });
        }
        *slot = Some(i);
    }

    let mut warnings = Vec::new();
    let mut cells = vec![None; nr * nc];
    for r in 0..nr {
        for c in 0..nc {
            let Some(bi) = occupant[r * nc + c] else {
                continue;
            };
            let fr = anchor_entry.field_row + r as i64 - ar as i64;
            let fc = anchor_entry.field_col + c as i64 - ac as i64;
            match plot_map.at(fr, fc) {
                Some(e) => {
                    cells[r * nc + c] = Some(AssignedCell {
                        box_index: bi,
                        plot_box: boxes[bi],
                        plot_id: e.plot_id.clone(),
                    })
                }
                None => {
                    let msg = format!(
                        "cell ({r}, {c}) maps to field position ({fr}, {fc}) outside the plot map; left empty"
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
            }
        }
    }
    Ok(GridAssignment {
        horizontal_lines: grid.horizontal.clone(),
        vertical_lines: grid.vertical.clone(),
        cells,
        warnings,
    })
}
