//! All tunable constants, loadable from one JSON file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::billing::PriceTable;
use crate::cnn::TrainConfig;
use crate::dishfeat::LabelSet;
use crate::error::{Error, Result};
use crate::eval::MatchParams;
use crate::pipeline::PipelineConfig;
use crate::synth::{Palette, SceneRanges};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub pipeline: PipelineConfig,
    pub matching: MatchParams,
    pub cnn: TrainConfig,
    pub prices: PriceTable,
    pub palette: Palette,
    pub scenes: SceneRanges,
}

impl Default for Config {
    fn default() -> Self {
        let palette = Palette::default();
        let mut prices = PriceTable::uniform(&palette.names, 0, "KRW");
        for (k, name) in palette.names.iter().enumerate() {
            prices.prices.insert(name.clone(), 1000 + 500 * k as u64);
        }
        Config {
            pipeline: PipelineConfig::default(),
            matching: MatchParams::default(),
            cnn: TrainConfig::default(),
            prices,
            palette,
            scenes: SceneRanges::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.palette.validate()?;
        self.cnn.validate()?;
        self.prices.covers(&self.palette.names)?;
        if self.palette.len() != self.cnn.architecture.classes {
            return Err(Error::InvalidParameter(format!(
                "{} palette colors for {} classifier outputs",
                self.palette.len(),
                self.cnn.architecture.classes
            )));
        }
        let c = &self.pipeline.canny;
        if !(0.0 <= c.t_low && c.t_low <= c.t_high && c.t_high <= 1.0) {
            return Err(Error::InvalidParameter("canny thresholds must satisfy 0 <= low <= high <= 1".into()));
        }
        Ok(())
    }

    pub fn labels(&self) -> Result<LabelSet> {
        LabelSet::new(self.palette.names.clone())
    }
}
