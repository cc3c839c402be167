use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cube::{BandMaskSpec, PixelRect};
use crate::error::{Error, Result};
use crate::gridmap::Anchor;
use crate::mlp::{ModelConfig, SplitSpec, TrainConfig};
use crate::segment::SegmentParams;
use crate::synth::SynthSpec;

/// Everything a pipeline run needs. Serialized as TOML; every field has a
/// default, so an empty file runs the synthetic scene end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds scene generation, the data split and network training.
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub inputs: InputsConfig,
    pub synth: SynthSpec,
    pub calibrate: CalibrateConfig,
    pub segment: SegmentParams,
    pub gridmap: GridmapConfig,
    pub endmembers: EndmemberConfig,
    pub unmix: UnmixConfig,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub report: ReportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            threads: 0,
            inputs: InputsConfig::default(),
            synth: SynthSpec::default(),
            calibrate: CalibrateConfig::default(),
            segment: SegmentParams::default(),
            gridmap: GridmapConfig::default(),
            endmembers: EndmemberConfig::default(),
            unmix: UnmixConfig::default(),
            dataset: DatasetConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Input files. With `synthetic = true` the files written by the `synth`
/// stage are used and the explicit paths are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputsConfig {
    pub synthetic: bool,
    pub cube: Option<PathBuf>,
    pub panel_region: Option<PixelRect>,
    /// CSV with `wavelength_nm,reflectance`.
    pub panel_reflectance: Option<PathBuf>,
    pub plot_map: Option<PathBuf>,
    pub yields: Option<PathBuf>,
    /// Low-altitude reflectance cube for endmember extraction...
    pub endmember_cube: Option<PathBuf>,
    /// ...or a ready endmember CSV (`label,<wavelengths>`).
    pub endmember_csv: Option<PathBuf>,
    pub reference_library: Option<PathBuf>,
}

impl Default for InputsConfig {
    fn default() -> Self {
        InputsConfig {
            synthetic: true,
            cube: None,
            panel_region: None,
            panel_reflectance: None,
            plot_map: None,
            yields: None,
            endmember_cube: None,
            endmember_csv: None,
            reference_library: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub band_mask: BandMaskSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridmapConfig {
    /// Expected plot pitch; taken from the scene when synthetic.
    pub pitch_px: Option<f64>,
    pub anchor: Option<Anchor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndmemberConfig {
    /// Number of extremes picked before labelling.
    pub count: usize,
    pub refine_k: usize,
    /// Labelled endmembers passed on to unmixing.
    pub select: Vec<String>,
}

impl Default for EndmemberConfig {
    fn default() -> Self {
        EndmemberConfig {
            count: 5,
            refine_k: 25,
            select: ["spike", "leaf", "soil", "shadow"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnmixConfig {
    pub spike_label: String,
    pub leaf_label: String,
}

impl Default for UnmixConfig {
    fn default() -> Self {
        UnmixConfig {
            spike_label: "spike".into(),
            leaf_label: "leaf".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub window: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { window: 15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Plots held out for testing before the record-level split.
    pub test_plots: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub strata: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_plots: 16,
            train_fraction: 0.9,
            validation_fraction: 0.1,
            strata: 10,
        }
    }
}

impl SplitConfig {
    pub fn spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            validation_fraction: self.validation_fraction,
            strata: self.strata,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Half-width of the uniform band around 1/3 for the middle-third class.
    pub tau: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { tau: 0.05 }
    }
}

impl PipelineConfig {
    /// Parses TOML. Relative input paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let i = &mut cfg.inputs;
        for p in [
            &mut i.cube,
            &mut i.panel_reflectance,
            &mut i.plot_map,
            &mut i.yields,
            &mut i.endmember_cube,
            &mut i.endmember_csv,
            &mut i.reference_library,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.split.spec(self.seed).validate()?;
        self.train.validate()?;
        if self.dataset.window < 2 {
            return Err(Error::Config("dataset.window must be at least 2".into()));
        }
        if self.endmembers.count < 2 || self.endmembers.refine_k == 0 {
            return Err(Error::Config("endmembers.count must be >= 2 and refine_k >= 1".into()));
        }
        if !(self.report.tau >= 0.0) {
            return Err(Error::Config("report.tau must be non-negative".into()));
        }
        if !self.inputs.synthetic {
            let i = &self.inputs;
            let need = [
                ("cube", i.cube.is_some()),
                ("plot_map", i.plot_map.is_some()),
                ("yields", i.yields.is_some()),
                ("endmember_cube or endmember_csv", i.endmember_cube.is_some() || i.endmember_csv.is_some()),
            ];
            if let Some((name, _)) = need.iter().find(|(_, ok)| !ok) {
                return Err(Error::Config(format!("inputs.{name} is required when inputs.synthetic = false")));
            }
            if self.gridmap.pitch_px.is_none() || self.gridmap.anchor.is_none() {
                return Err(Error::Config("gridmap.pitch_px and gridmap.anchor are required for real inputs".into()));
            }
            if i.endmember_csv.is_none() && i.reference_library.is_none() {
                return Err(Error::Config("inputs.reference_library is required to label extracted endmembers".into()));
            }
        }
        Ok(())
    }

    /// Copy with the global seed pushed into every seeded section.
    pub fn seeded(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.synth.seed = self.seed;
        c.train.seed = self.seed;
        c
    }
}
