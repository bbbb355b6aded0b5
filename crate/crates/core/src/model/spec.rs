use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ButaneModel, ButaneParams, DoubleWell2D, DoubleWellParams, HamiltonianModel};

/// Serializable model selection: a preset name plus parameter overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum ModelSpec {
    DoubleWell2d(DoubleWellParams),
    ButaneUa(ButaneParams),
}

impl ModelSpec {
    pub fn from_preset(name: &str) -> Option<Self> {
        match name {
            "double_well_2d" => Some(Self::DoubleWell2d(DoubleWellParams::default())),
            "butane_ua" => Some(Self::ButaneUa(ButaneParams::default())),
            _ => None,
        }
    }

    pub fn preset_name(&self) -> &'static str {
        match self {
            Self::DoubleWell2d(_) => "double_well_2d",
            Self::ButaneUa(_) => "butane_ua",
        }
    }

    pub fn build(&self) -> Arc<dyn HamiltonianModel> {
        match self {
            Self::DoubleWell2d(p) => Arc::new(DoubleWell2D::new(p.clone())),
            Self::ButaneUa(p) => Arc::new(ButaneModel::new(p.clone())),
        }
    }
}
