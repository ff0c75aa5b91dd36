use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generator hyperparameters. Defaults follow the published architecture;
/// [`ArchConfig::desk`] shrinks hidden widths for single-core fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub z_dim: usize,
    /// Feature-grid channels `M_v`.
    pub grid_channels: usize,
    /// Field feature channels `M_f`.
    pub feature_dim: usize,
    pub pos_bands: usize,
    pub sky_bands: usize,
    /// Hidden channels of the 3D conv stack.
    pub vol_width: usize,
    /// Width of the per-normalization projection of `z_wld`.
    pub vol_code_dim: usize,
    pub stuff_depth: usize,
    pub stuff_hidden: usize,
    pub obj_depth: usize,
    pub obj_hidden: usize,
    /// Hidden layer after which the encoded input is concatenated again.
    pub obj_skip: usize,
    pub sky_depth: usize,
    pub sky_hidden: usize,
    /// Hidden channels of the neural renderer.
    pub render_width: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            z_dim: 256,
            grid_channels: 16,
            feature_dim: 32,
            pos_bands: 10,
            sky_bands: 4,
            vol_width: 64,
            vol_code_dim: 16,
            stuff_depth: 4,
            stuff_hidden: 256,
            obj_depth: 8,
            obj_hidden: 128,
            obj_skip: 4,
            sky_depth: 5,
            sky_hidden: 256,
            render_width: 64,
        }
    }
}

impl ArchConfig {
    pub fn desk() -> Self {
        Self {
            grid_channels: 8,
            feature_dim: 16,
            pos_bands: 6,
            vol_width: 8,
            vol_code_dim: 4,
            stuff_depth: 3,
            stuff_hidden: 32,
            obj_depth: 4,
            obj_hidden: 32,
            obj_skip: 2,
            sky_depth: 3,
            sky_hidden: 32,
            render_width: 16,
            ..Self::default()
        }
    }

    /// Smallest useful configuration, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            z_dim: 4,
            grid_channels: 3,
            feature_dim: 3,
            pos_bands: 2,
            sky_bands: 1,
            vol_width: 3,
            vol_code_dim: 2,
            stuff_depth: 2,
            stuff_hidden: 4,
            obj_depth: 3,
            obj_hidden: 4,
            obj_skip: 1,
            sky_depth: 2,
            sky_hidden: 4,
            render_width: 3,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("z_dim", self.z_dim),
            ("grid_channels", self.grid_channels),
            ("feature_dim", self.feature_dim),
            ("vol_width", self.vol_width),
            ("vol_code_dim", self.vol_code_dim),
            ("stuff_depth", self.stuff_depth),
            ("stuff_hidden", self.stuff_hidden),
            ("obj_depth", self.obj_depth),
            ("obj_hidden", self.obj_hidden),
            ("sky_depth", self.sky_depth),
            ("sky_hidden", self.sky_hidden),
            ("render_width", self.render_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::format("arch", format!("{name} must be positive")));
        }
        if self.obj_skip >= self.obj_depth {
            return Err(Error::format("arch", "obj_skip must be below obj_depth"));
        }
        Ok(())
    }
}
