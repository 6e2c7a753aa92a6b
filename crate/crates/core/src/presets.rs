//! Named problem sizes.

use serde::{Deserialize, Serialize};

use crate::sequence::MoledParams;

/// Grid sizes and sequence parameters for one simulation scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    /// Edge of the template / spin grid.
    pub spin_grid: usize,
    /// Edge of the acquisition matrix.
    pub matrix: usize,
    pub fov_cm: f64,
    pub esp_ms: f64,
    pub tes_ms: [f64; 4],
    pub alpha_deg: f64,
    pub beta_deg: f64,
    /// Acceleration of the under-sampling mask.
    pub acceleration: usize,
    /// Edge of the down-sampled motion labels.
    pub label_size: usize,
    /// Edge of the zero-padded motion input.
    pub pad_size: usize,
    pub num_coils: usize,
}

impl Preset {
    /// 128-spin grid and 64x64 acquisition; minutes for a full test run.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            spin_grid: 128,
            matrix: 64,
            fov_cm: 22.0,
            esp_ms: 0.93,
            tes_ms: [22.0, 52.0, 82.0, 110.0],
            alpha_deg: 30.0,
            beta_deg: 180.0,
            acceleration: 2,
            label_size: 64,
            pad_size: 64,
            num_coils: 8,
        }
    }

    /// 512-spin grid, 128x128 acquisition, 256x256 labels. Expensive.
    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            spin_grid: 512,
            matrix: 128,
            esp_ms: 0.465,
            label_size: 256,
            pad_size: 256,
            ..Self::desk()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    pub fn moled_params(&self) -> MoledParams {
        MoledParams {
            matrix: self.matrix,
            fov_cm: self.fov_cm,
            esp_ms: self.esp_ms,
            tes_ms: self.tes_ms,
            alpha_deg: self.alpha_deg,
            beta_deg: self.beta_deg,
            acceleration: self.acceleration,
            ..MoledParams::default()
        }
    }
}
