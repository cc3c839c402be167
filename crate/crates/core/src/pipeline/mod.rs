//! Stage orchestration. Every stage reads files, writes files into
//! `<out>/<stage>/` and records a manifest; a stage whose manifest still
//! matches its inputs and configuration is skipped.

mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use config::{
    CalibrateConfig, DatasetConfig, EndmemberConfig, GridmapConfig, InputsConfig, PipelineConfig, ReportConfig,
    SplitConfig, UnmixConfig,
};
pub use manifest::{hash_bytes, hash_file, FileHash, Manifest, MANIFEST_FILE};

use crate::cube::{
    apply_band_mask, cube_paths, read_cube, read_spectrum_csv, spectrum_at, to_reflectance, write_cube,
    write_cube_with, HyperCube, Interleave, PixelRect, SampleType, Units,
};
use crate::endmember::{label_by_reference, refine_by_neighborhood, svmax_cube, EndmemberSet, Spectra};
use crate::error::{Error, Result};
use crate::gridmap::{assign_ids, build_grid, cluster_corners, read_assignment_csv, Anchor, AssignmentRow, PlotMap};
use crate::mlp::{
    evaluate, holdout_plots, read_checkpoint, stratified_split, train, write_checkpoint, write_log, Dataset,
    Evaluation,
};
use crate::segment::{read_pbm, segment_plots, write_pbm, write_pgm, BinaryMask, PlotBox};
use crate::subplot::{
    middle_third_ratio, plot_records, read_records, read_yields, write_records, SubPlotRecord, UniformityClass,
};
use crate::synth::{generate_scene, read_scene_inputs, write_scene};
use crate::unmix::{sl_mask_by_label, unmix_cube, write_colormap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Calibrate,
    Segment,
    Gridmap,
    Endmembers,
    Unmix,
    Dataset,
    Train,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Synth,
        Stage::Calibrate,
        Stage::Segment,
        Stage::Gridmap,
        Stage::Endmembers,
        Stage::Unmix,
        Stage::Dataset,
        Stage::Train,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Calibrate => "calibrate",
            Stage::Segment => "segment",
            Stage::Gridmap => "gridmap",
            Stage::Endmembers => "endmembers",
            Stage::Unmix => "unmix",
            Stage::Dataset => "dataset",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// Stages whose outputs this stage reads (besides the synthetic scene).
    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Synth | Stage::Calibrate => &[],
            Stage::Segment | Stage::Endmembers => &[Stage::Calibrate],
            Stage::Gridmap => &[Stage::Segment],
            Stage::Unmix => &[Stage::Calibrate, Stage::Endmembers],
            Stage::Dataset => &[Stage::Calibrate, Stage::Gridmap, Stage::Unmix],
            Stage::Train => &[Stage::Dataset],
            Stage::Evaluate => &[Stage::Dataset, Stage::Train],
            Stage::Report => &[Stage::Gridmap, Stage::Endmembers, Stage::Unmix, Stage::Evaluate],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

/// Inputs with every path resolved.
#[derive(Debug, Clone)]
struct Inputs {
    cube: PathBuf,
    panel_region: Option<PixelRect>,
    panel_reflectance: Option<PathBuf>,
    plot_map: PathBuf,
    yields: PathBuf,
    endmember_cube: Option<PathBuf>,
    endmember_csv: Option<PathBuf>,
    reference_library: Option<PathBuf>,
    pitch_px: f64,
    anchor: Anchor,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitRow {
    plot_id: String,
    window_row: usize,
    window_col: usize,
    partition: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    plot_id: String,
    window_row: usize,
    window_col: usize,
    partition: String,
    actual: f64,
    predicted: f64,
}

pub struct Runner {
    cfg: PipelineConfig,
    out: PathBuf,
    force: bool,
}

impl Runner {
    pub fn new(cfg: &PipelineConfig, out: &Path, force: bool) -> Runner {
        Runner {
            cfg: cfg.seeded(),
            out: out.to_path_buf(),
            force,
        }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    /// The stages `run-all` executes, in order.
    pub fn plan(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| *s != Stage::Synth || self.cfg.inputs.synthetic)
            .collect()
    }

    pub fn run_all(&self) -> Result<Vec<(Stage, StageStatus)>> {
        self.plan().into_iter().map(|s| Ok((s, self.run(s)?))).collect()
    }

    pub fn run(&self, stage: Stage) -> Result<StageStatus> {
        for &req in stage.requires() {
            self.require(stage, req)?;
        }
        match stage {
            Stage::Synth => self.synth(),
            Stage::Calibrate => self.calibrate(),
            Stage::Segment => self.segment(),
            Stage::Gridmap => self.gridmap(),
            Stage::Endmembers => self.endmembers(),
            Stage::Unmix => self.unmix(),
            Stage::Dataset => self.dataset(),
            Stage::Train => self.train(),
            Stage::Evaluate => self.evaluate(),
            Stage::Report => self.report(),
        }
    }

    fn require(&self, stage: Stage, required: Stage) -> Result<()> {
        match Manifest::read(&self.stage_dir(required))? {
            Some(_) => Ok(()),
            None => Err(Error::Dependency {
                stage: stage.name().into(),
                required: required.name().into(),
            }),
        }
    }

    fn inputs(&self, stage: Stage) -> Result<Inputs> {
        let i = &self.cfg.inputs;
        let g = &self.cfg.gridmap;
        if i.synthetic {
            self.require(stage, Stage::Synth)?;
            let s = read_scene_inputs(&self.stage_dir(Stage::Synth))?;
            return Ok(Inputs {
                cube: s.cube,
                panel_region: Some(s.panel_region),
                panel_reflectance: Some(s.panel_reflectance),
                plot_map: s.plot_map,
                yields: s.yields,
                endmember_cube: Some(s.endmember_cube),
                endmember_csv: None,
                reference_library: Some(s.reference_library),
                pitch_px: g.pitch_px.unwrap_or(s.pitch_px),
                anchor: g.anchor.clone().unwrap_or(s.anchor),
            });
        }
        let missing = |name: &str| Error::Config(format!("inputs.{name} is not set"));
        Ok(Inputs {
            cube: i.cube.clone().ok_or_else(|| missing("cube"))?,
            panel_region: i.panel_region,
            panel_reflectance: i.panel_reflectance.clone(),
            plot_map: i.plot_map.clone().ok_or_else(|| missing("plot_map"))?,
            yields: i.yields.clone().ok_or_else(|| missing("yields"))?,
            endmember_cube: i.endmember_cube.clone(),
            endmember_csv: i.endmember_csv.clone(),
            reference_library: i.reference_library.clone(),
            pitch_px: g.pitch_px.ok_or_else(|| missing("gridmap.pitch_px"))?,
            anchor: g.anchor.clone().ok_or_else(|| missing("gridmap.anchor"))?,
        })
    }

    fn out_file(&self, stage: Stage, name: &str) -> PathBuf {
        self.stage_dir(stage).join(name)
    }

    fn cube_files(path: &Path) -> Vec<PathBuf> {
        let (h, r) = cube_paths(path);
        vec![h, r]
    }

    /// Runs `body` unless the stage's manifest matches `inputs` and
    /// `config`; `body` returns the files it wrote.
    fn execute(
        &self,
        stage: Stage,
        inputs: Vec<PathBuf>,
        config: serde_json::Value,
        body: impl FnOnce(&Path) -> Result<Vec<PathBuf>>,
    ) -> Result<StageStatus> {
        let dir = self.stage_dir(stage);
        let version = env!("CARGO_PKG_VERSION").to_string();
        let config_sha256 = hash_bytes(
            serde_json::to_string(&json!({ "stage": stage.name(), "config": config }))
                .expect("json")
                .as_bytes(),
        );
        let input_hashes = manifest::hash_files(&inputs, &self.out)?;
        if !self.force {
            if let Some(m) = Manifest::read(&dir)? {
                if m.version == version
                    && m.config_sha256 == config_sha256
                    && m.inputs == input_hashes
                    && m.outputs_intact(&self.out)
                {
                    log::info!("{}: up to date, skipped", stage.name());
                    return Ok(StageStatus::Skipped);
                }
            }
        }
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        log::info!("{}: running", stage.name());
        let mut outputs = body(&dir)?;
        outputs.sort();
        let m = Manifest {
            stage: stage.name().into(),
            version,
            config_sha256,
            inputs: input_hashes,
            outputs: manifest::hash_files(&outputs, &self.out)?,
        };
        m.write(&dir)?;
        Ok(StageStatus::Ran)
    }

    fn synth(&self) -> Result<StageStatus> {
        let spec = self.cfg.synth.clone();
        self.execute(Stage::Synth, vec![], json!(spec), |dir| {
            let scene = generate_scene(&spec)?;
            log::info!(
                "synth: {} plots, {}x{} px, {} bands",
                scene.truth.plots.len(),
                scene.radiance.rows(),
                scene.radiance.cols(),
                scene.radiance.bands()
            );
            write_scene(&scene, dir)?;
            list_files(dir)
        })
    }

    fn calibrate(&self) -> Result<StageStatus> {
        let inp = self.inputs(Stage::Calibrate)?;
        let mut files = Self::cube_files(&inp.cube);
        files.extend(inp.panel_reflectance.clone());
        let band_mask = self.cfg.calibrate.band_mask.clone();
        let cfg = json!({ "band_mask": band_mask, "panel_region": inp.panel_region });
        self.execute(Stage::Calibrate, files, cfg, |dir| {
            let cube = read_cube(&inp.cube)?;
            let refl = match cube.units() {
                Units::Raw | Units::Radiance => {
                    let region = inp
                        .panel_region
                        .ok_or_else(|| Error::Config("inputs.panel_region is required to calibrate".into()))?;
                    let pp = inp.panel_reflectance.as_ref().ok_or_else(|| {
                        Error::Config("inputs.panel_reflectance is required to calibrate".into())
                    })?;
                    let rows = read_spectrum_csv(pp)?;
                    let panel = spectrum_at(&rows, cube.wavelengths(), half_spacing(cube.wavelengths()))?;
                    to_reflectance(&cube, region, &panel)?
                }
                Units::Reflectance => cube,
                Units::Abundance => return Err(Error::Input("cannot calibrate an abundance cube".into())),
            };
            let mask = band_mask.mask_for(refl.wavelengths());
            let out = apply_band_mask(&refl, &mask)?;
            log::info!("calibrate: kept {} of {} bands", out.bands(), refl.bands());
            let p = dir.join("reflectance.hdr");
            write_cube(&out, &p)?;
            Ok(Self::cube_files(&p))
        })
    }

    fn reflectance_path(&self) -> PathBuf {
        self.out_file(Stage::Calibrate, "reflectance.hdr")
    }

    fn segment(&self) -> Result<StageStatus> {
        let params = self.cfg.segment.clone();
        let refl = self.reflectance_path();
        self.execute(Stage::Segment, Self::cube_files(&refl), json!(params), |dir| {
            let cube = read_cube(&refl)?;
            let seg = segment_plots(&cube, &params)?;
            log::info!("segment: {} plot boxes", seg.boxes.len());
            let files = vec![dir.join("ndpsi.pgm"), dir.join("mask.pbm"), dir.join("boxes.csv")];
            write_pgm(&seg.index, &files[0])?;
            write_pbm(&seg.mask, &files[1])?;
            write_csv_rows(&files[2], &seg.boxes)?;
            Ok(files)
        })
    }

    fn gridmap(&self) -> Result<StageStatus> {
        let inp = self.inputs(Stage::Gridmap)?;
        let boxes_path = self.out_file(Stage::Segment, "boxes.csv");
        let cfg = json!({ "pitch_px": inp.pitch_px, "anchor": inp.anchor });
        self.execute(Stage::Gridmap, vec![boxes_path.clone(), inp.plot_map.clone()], cfg, |dir| {
            let boxes: Vec<PlotBox> = read_csv_rows(&boxes_path)?;
            let map = PlotMap::read_csv(&inp.plot_map)?;
            let clusters = cluster_corners(&boxes, inp.pitch_px)?;
            let grid = build_grid(&clusters);
            let assignment = assign_ids(&grid, &boxes, &map, &inp.anchor)?;
            for w in &assignment.warnings {
                log::warn!("gridmap: {w}");
            }
            log::info!(
                "gridmap: {}x{} grid, {} plots labelled",
                assignment.grid_rows(),
                assignment.grid_cols(),
                assignment.assigned().count()
            );
            let p = dir.join("assignment.csv");
            assignment.write_csv(&p)?;
            Ok(vec![p])
        })
    }

    fn endmembers(&self) -> Result<StageStatus> {
        let inp = self.inputs(Stage::Endmembers)?;
        let refl_hdr = self.reflectance_path();
        let mut files = vec![refl_hdr.clone()];
        if let Some(csv) = &inp.endmember_csv {
            files.push(csv.clone());
        } else {
            let cube = inp
                .endmember_cube
                .as_ref()
                .ok_or_else(|| Error::Config("no endmember source configured".into()))?;
            files.extend(Self::cube_files(cube));
            files.extend(inp.reference_library.clone());
        }
        let ec = self.cfg.endmembers.clone();
        let band_mask = self.cfg.calibrate.band_mask.clone();
        let cfg = json!({ "endmembers": ec, "band_mask": band_mask });
        self.execute(Stage::Endmembers, files, cfg, |dir| {
            let kept = crate::cube::read_header_wavelengths(&refl_hdr)?;
            let labels: Vec<&str> = ec.select.iter().map(String::as_str).collect();
            let extracted = if let Some(csv) = &inp.endmember_csv {
                EndmemberSet::read_csv(csv)?.restrict_to(&kept)?
            } else {
                let low = read_cube(inp.endmember_cube.as_ref().unwrap())?;
                if low.units() != Units::Reflectance {
                    return Err(Error::Input("endmember cube must be in reflectance units".into()));
                }
                let low = apply_band_mask(&low, &band_mask.mask_for(low.wavelengths()))?;
                let picked = svmax_cube(&low, ec.count)?;
                let refined = refine_by_neighborhood(Spectra::from_cube(&low), &picked, ec.refine_k)?;
                let reference = EndmemberSet::read_csv(
                    inp.reference_library
                        .as_ref()
                        .ok_or_else(|| Error::Config("inputs.reference_library is not set".into()))?,
                )?;
                let labelled = label_by_reference(&refined, &reference)?;
                labelled.restrict_to(&kept)?
            };
            log::info!("endmembers: {}", extracted.labels.join(", "));
            let all = dir.join("extracted.csv");
            extracted.write_csv(&all)?;
            let sel = dir.join("endmembers.csv");
            extracted.select(&labels)?.write_csv(&sel)?;
            Ok(vec![all, sel])
        })
    }

    fn unmix(&self) -> Result<StageStatus> {
        let refl = self.reflectance_path();
        let em = self.out_file(Stage::Endmembers, "endmembers.csv");
        let mut files = Self::cube_files(&refl);
        files.push(em.clone());
        let uc = self.cfg.unmix.clone();
        self.execute(Stage::Unmix, files, json!(uc), |dir| {
            let cube = read_cube(&refl)?;
            let set = EndmemberSet::read_csv(&em)?;
            let abund = unmix_cube(&cube, &set)?;
            let sl = sl_mask_by_label(&abund, &uc.spike_label, &uc.leaf_label)?;
            log::info!(
                "unmix: residual {:.6}, {} SL pixels",
                abund.residual_frobenius,
                sl.mask.count()
            );
            let ap = dir.join("abundance.hdr");
            write_cube_with(&abund.to_cube()?, &ap, Interleave::Bip, SampleType::F64)?;
            let sp = dir.join("sl.pbm");
            write_pbm(&sl.mask, &sp)?;
            let summary = dir.join("summary.json");
            let text = serde_json::to_string_pretty(&json!({
                "labels": abund.labels,
                "residual_frobenius": abund.residual_frobenius,
                "sl_pixels": sl.mask.count(),
            }))
            .expect("json");
            std::fs::write(&summary, text + "\n").map_err(|e| Error::io(&summary, e))?;
            let mut out = Self::cube_files(&ap);
            out.extend([sp, summary]);
            Ok(out)
        })
    }

    fn dataset(&self) -> Result<StageStatus> {
        let inp = self.inputs(Stage::Dataset)?;
        let refl = self.reflectance_path();
        let assignment = self.out_file(Stage::Gridmap, "assignment.csv");
        let sl_path = self.out_file(Stage::Unmix, "sl.pbm");
        let mut files = Self::cube_files(&refl);
        files.extend([assignment.clone(), sl_path.clone(), inp.yields.clone()]);
        let window = self.cfg.dataset.window;
        self.execute(Stage::Dataset, files, json!({ "window": window }), |dir| {
            let cube = read_cube(&refl)?;
            let sl = read_pbm(&sl_path)?;
            let yields: BTreeMap<String, f64> = read_yields(&inp.yields)?
                .into_iter()
                .map(|r| (r.plot_id, r.yield_grams))
                .collect();
            let mut rows = read_assignment_csv(&assignment)?;
            rows.sort_by(|a, b| a.plot_id.cmp(&b.plot_id));
            let per_plot: Vec<Result<Vec<SubPlotRecord>>> = rows
                .par_iter()
                .map(|row| {
                    let Some(&y) = yields.get(&row.plot_id) else {
                        return Ok(Vec::new());
                    };
                    let rect = PixelRect::new(row.top, row.left, row.height, row.width);
                    let plot = cube.crop(rect)?;
                    let mask = crop_mask(&sl, rect);
                    match plot_records(&row.plot_id, &plot, &mask, window, y) {
                        Err(Error::EmptyPlot(_)) => Ok(Vec::new()),
                        other => other,
                    }
                })
                .collect();
            let mut records = Vec::new();
            for (row, r) in rows.iter().zip(per_plot) {
                let r = r?;
                if r.is_empty() {
                    log::warn!("dataset: plot {} contributes no records (no yield or no SL pixels)", row.plot_id);
                }
                records.extend(r);
            }
            log::info!("dataset: {} records from {} plots", records.len(), rows.len());
            let p = dir.join("records.csv");
            write_records(&records, &p)?;
            Ok(vec![p])
        })
    }

    fn train(&self) -> Result<StageStatus> {
        let inp = self.inputs(Stage::Train)?;
        let rec_path = self.out_file(Stage::Dataset, "records.csv");
        let cfg = json!({
            "seed": self.cfg.seed,
            "split": self.cfg.split,
            "model": self.cfg.model,
            "train": self.cfg.train,
        });
        self.execute(Stage::Train, vec![rec_path.clone(), inp.yields.clone()], cfg, |dir| {
            let records = read_records(&rec_path)?;
            if records.is_empty() {
                return Err(Error::Input("dataset has no records".into()));
            }
            let yields = plot_yield_map(&inp.yields)?;
            let mut plots: BTreeMap<&str, f64> = BTreeMap::new();
            for r in &records {
                let y = yields.get(&r.plot_id).copied().unwrap_or(0.0);
                plots.insert(&r.plot_id, y);
            }
            let plot_list: Vec<(String, f64)> = plots.iter().map(|(k, v)| (k.to_string(), *v)).collect();
            let sc = &self.cfg.split;
            let test = holdout_plots(&plot_list, sc.test_plots, sc.strata, self.cfg.seed)?;
            let ids: Vec<&str> = records.iter().map(|r| r.plot_id.as_str()).collect();
            let ys: Vec<f64> = records.iter().map(|r| r.allocated_yield).collect();
            let split = stratified_split(&ids, &ys, &test, &sc.spec(self.cfg.seed))?;
            for w in &split.warnings {
                log::warn!("split: {w}");
            }
            log::info!(
                "split: {} train, {} validation, {} test records ({} test plots)",
                split.train.len(),
                split.validation.len(),
                split.test.len(),
                test.len()
            );
            let tr = Dataset::from_records(&records, &split.train)?;
            let va = Dataset::from_records(&records, &split.validation)?;
            let outcome = train(&tr, &va, &self.cfg.model, &self.cfg.train)?;
            log::info!(
                "train: best epoch {} (validation RMSE {:.4} g)",
                outcome.model.best_epoch,
                outcome.log[outcome.model.best_epoch].val_rmse
            );
            let files = vec![dir.join("model.ckpt"), dir.join("training_log.csv"), dir.join("split.csv")];
            write_checkpoint(&outcome.model, &files[0])?;
            write_log(&outcome.log, &files[1])?;
            let mut part = vec![""; records.len()];
            for (name, idx) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
                for &i in idx.iter() {
                    part[i] = name;
                }
            }
            let rows: Vec<SplitRow> = records
                .iter()
                .zip(part)
                .map(|(r, p)| SplitRow {
                    plot_id: r.plot_id.clone(),
                    window_row: r.window_row,
                    window_col: r.window_col,
                    partition: p.into(),
                })
                .collect();
            write_csv_rows(&files[2], &rows)?;
            Ok(files)
        })
    }

    fn evaluate(&self) -> Result<StageStatus> {
        let inp = self.inputs(Stage::Evaluate)?;
        let rec_path = self.out_file(Stage::Dataset, "records.csv");
        let model_path = self.out_file(Stage::Train, "model.ckpt");
        let split_path = self.out_file(Stage::Train, "split.csv");
        let files = vec![rec_path.clone(), model_path.clone(), split_path.clone(), inp.yields.clone()];
        self.execute(Stage::Evaluate, files, json!({}), |dir| {
            let records = read_records(&rec_path)?;
            let model = read_checkpoint(&model_path)?;
            let split: Vec<SplitRow> = read_csv_rows(&split_path)?;
            if split.len() != records.len() {
                return Err(Error::Input("split does not match the dataset".into()));
            }
            let all: Vec<usize> = (0..records.len()).collect();
            let pred = model.predict(&Dataset::from_records(&records, &all)?);
            let rows: Vec<PredictionRow> = records
                .iter()
                .zip(&split)
                .zip(&pred)
                .map(|((r, s), &p)| PredictionRow {
                    plot_id: r.plot_id.clone(),
                    window_row: r.window_row,
                    window_col: r.window_col,
                    partition: s.partition.clone(),
                    actual: r.allocated_yield,
                    predicted: p,
                })
                .collect();
            let ev = evaluate_rows(&rows, &plot_yield_map(&inp.yields)?)?;
            println!(
                "sub-plot R2 = {:.4}, RMSE = {:.4} g (n = {})",
                ev.subplot.r2, ev.subplot.rmse, ev.subplot.n
            );
            let files = vec![dir.join("predictions.csv"), dir.join("metrics.json")];
            write_csv_rows(&files[0], &rows)?;
            let text = serde_json::to_string_pretty(&json!({
                "subplot": ev.subplot,
                "plot": ev.plot,
                "field": ev.field,
            }))
            .expect("json");
            std::fs::write(&files[1], text + "\n").map_err(|e| Error::io(&files[1], e))?;
            Ok(files)
        })
    }

    fn report(&self) -> Result<StageStatus> {
        let inp = self.inputs(Stage::Report)?;
        let pred_path = self.out_file(Stage::Evaluate, "predictions.csv");
        let assignment = self.out_file(Stage::Gridmap, "assignment.csv");
        let em = self.out_file(Stage::Endmembers, "endmembers.csv");
        let abund = self.out_file(Stage::Unmix, "abundance.hdr");
        let mut files = vec![pred_path.clone(), assignment.clone(), em.clone(), inp.yields.clone()];
        files.extend(Self::cube_files(&abund));
        let cfg = json!({
            "report": self.cfg.report,
            "window": self.cfg.dataset.window,
            "unmix": self.cfg.unmix,
        });
        let window = self.cfg.dataset.window;
        let tau = self.cfg.report.tau;
        self.execute(Stage::Report, files, cfg, |dir| {
            let rows: Vec<PredictionRow> = read_csv_rows(&pred_path)?;
            let ev = evaluate_rows(&rows, &plot_yield_map(&inp.yields)?)?;
            let mut out = Vec::new();

            let p = dir.join("metrics.csv");
            let mut t = String::from("level,n,r2,rmse,nrmse,actual_total,predicted_total,percent_error\n");
            for (name, m) in [("subplot", ev.subplot), ("plot", ev.plot)] {
                let _ = writeln!(t, "{name},{},{},{},{},,,", m.n, m.r2, m.rmse, m.nrmse);
            }
            let _ = writeln!(
                t,
                "field,{},,,,{},{},{}",
                ev.plots.len(),
                ev.field.actual,
                ev.field.predicted,
                ev.field.percent_error
            );
            write_text(&p, &t)?;
            out.push(p);

            let p = dir.join("scatter_subplot.csv");
            let mut t = String::from("plot_id,window_row,window_col,actual,predicted\n");
            for r in rows.iter().filter(|r| r.partition == "test") {
                let _ = writeln!(
                    t,
                    "{},{},{},{},{}",
                    r.plot_id,
                    r.window_row,
                    r.window_col,
                    r.actual,
                    r.predicted.max(0.0)
                );
            }
            write_text(&p, &t)?;
            out.push(p);

            let p = dir.join("scatter_plot.csv");
            let mut t = String::from("plot_id,actual,predicted\n");
            for pt in &ev.plots {
                let _ = writeln!(t, "{},{},{}", pt.plot_id, pt.actual, pt.predicted);
            }
            write_text(&p, &t)?;
            out.push(p);

            // middle-third analysis on predicted sub-plot yields of every plot
            let layout: BTreeMap<String, AssignmentRow> = read_assignment_csv(&assignment)?
                .into_iter()
                .map(|r| (r.plot_id.clone(), r))
                .collect();
            let mut by_plot: BTreeMap<&str, Vec<(usize, usize, f64)>> = BTreeMap::new();
            for r in &rows {
                by_plot
                    .entry(&r.plot_id)
                    .or_default()
                    .push((r.window_row, r.window_col, r.predicted.max(0.0)));
            }
            let p = dir.join("middle_third.csv");
            let mut t = String::from("plot_id,middle_fraction,class\n");
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for (id, w) in &by_plot {
                let Some(a) = layout.get(*id) else { continue };
                match middle_third_ratio(w, a.height, a.width, window, tau) {
                    Ok(m) => {
                        let _ = writeln!(t, "{id},{},{}", m.middle_fraction, m.class.as_str());
                        *counts.entry(m.class.as_str()).or_default() += 1;
                    }
                    Err(e) => log::warn!("report: plot {id}: {e}"),
                }
            }
            write_text(&p, &t)?;
            out.push(p);

            // SL colormaps
            let set = EndmemberSet::read_csv(&em)?;
            let acube = read_cube(&abund)?;
            let k_spike = label_index(&set, &self.cfg.unmix.spike_label)?;
            let k_leaf = label_index(&set, &self.cfg.unmix.leaf_label)?;
            let cm = dir.join("colormaps");
            std::fs::create_dir_all(&cm).map_err(|e| Error::io(&cm, e))?;
            for a in layout.values() {
                let rect = PixelRect::new(a.top, a.left, a.height, a.width);
                let scores = sl_scores(&acube, rect, k_spike, k_leaf)?;
                let p = cm.join(format!("{}.ppm", a.plot_id));
                write_colormap(&scores, a.height, a.width, &p)?;
                out.push(p);
            }

            let p = dir.join("summary.txt");
            let mut t = String::new();
            let _ = writeln!(
                t,
                "sub-plot: R2 {:.4}, RMSE {:.4} g, normalized RMSE {:.4} (n = {})",
                ev.subplot.r2, ev.subplot.rmse, ev.subplot.nrmse, ev.subplot.n
            );
            let _ = writeln!(
                t,
                "plot: R2 {:.4}, RMSE {:.4} g, normalized RMSE {:.4} (n = {})",
                ev.plot.r2, ev.plot.rmse, ev.plot.nrmse, ev.plot.n
            );
            let _ = writeln!(
                t,
                "field: total actual {:.2} g, total predicted {:.2} g, error {:.2}%",
                ev.field.actual, ev.field.predicted, ev.field.percent_error
            );
            for class in [UniformityClass::Uniform, UniformityClass::OneSideHeavy, UniformityClass::MiddleHeavy] {
                let n = counts.get(class.as_str()).copied().unwrap_or(0);
                let _ = writeln!(t, "middle third {}: {} of {} plots", class.as_str(), n, by_plot.len());
            }
            write_text(&p, &t)?;
            print!("{t}");
            out.push(p);
            Ok(out)
        })
    }
}

fn half_spacing(wl: &[f64]) -> f64 {
    let min = wl.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if min.is_finite() {
        min / 2.0
    } else {
        1.0
    }
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = e.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != MANIFEST_FILE) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::csv(path, e))
}

fn plot_yield_map(path: &Path) -> Result<BTreeMap<String, f64>> {
    Ok(read_yields(path)?
        .into_iter()
        .map(|r| (r.plot_id, r.yield_grams))
        .collect())
}

fn evaluate_rows(rows: &[PredictionRow], yields: &BTreeMap<String, f64>) -> Result<Evaluation> {
    let test: Vec<&PredictionRow> = rows.iter().filter(|r| r.partition == "test").collect();
    if test.is_empty() {
        return Err(Error::Input("no test records to evaluate".into()));
    }
    let ids: Vec<&str> = test.iter().map(|r| r.plot_id.as_str()).collect();
    let a: Vec<f64> = test.iter().map(|r| r.actual).collect();
    let p: Vec<f64> = test.iter().map(|r| r.predicted).collect();
    evaluate(&ids, &a, &p, yields)
}

fn crop_mask(mask: &BinaryMask, rect: PixelRect) -> BinaryMask {
    let mut m = BinaryMask::zeros(rect.height, rect.width);
    for r in 0..rect.height {
        for c in 0..rect.width {
            m.set(r, c, mask.get(rect.top + r, rect.left + c));
        }
    }
    m
}

fn label_index(set: &EndmemberSet, label: &str) -> Result<usize> {
    set.index_of(label)
        .ok_or_else(|| Error::Input(format!("endmember set has no `{label}`")))
}

fn sl_scores(abund: &HyperCube, rect: PixelRect, k_spike: usize, k_leaf: usize) -> Result<Vec<f64>> {
    let crop = abund.crop(rect)?;
    Ok(crop.pixels().map(|h| h[k_spike] + h[k_leaf]).collect())
}
