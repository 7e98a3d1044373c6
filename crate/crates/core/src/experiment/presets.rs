//! Built-in experiment configurations.

use super::config::{parse_config, ExperimentConfig};
use crate::error::{Error, Result};

const PRESETS: [(&str, &str); 8] = [
    ("example1_bkw_sbtm", include_str!("presets/example1_bkw_sbtm.toml")),
    ("example1_bkw_blob", include_str!("presets/example1_bkw_blob.toml")),
    (
        "example2_anisotropic_d3_sbtm",
        include_str!("presets/example2_anisotropic_d3_sbtm.toml"),
    ),
    (
        "example2_anisotropic_d3_blob",
        include_str!("presets/example2_anisotropic_d3_blob.toml"),
    ),
    (
        "example2_anisotropic_d10_sbtm",
        include_str!("presets/example2_anisotropic_d10_sbtm.toml"),
    ),
    (
        "example2_anisotropic_d10_blob",
        include_str!("presets/example2_anisotropic_d10_blob.toml"),
    ),
    ("example3_coulomb_sbtm", include_str!("presets/example3_coulomb_sbtm.toml")),
    ("example3_coulomb_blob", include_str!("presets/example3_coulomb_blob.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

/// TOML source of a preset.
pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn load_preset(name: &str) -> Result<ExperimentConfig> {
    let text = preset_text(name).ok_or_else(|| Error::config("preset", format!("unknown preset `{name}`")))?;
    parse_config(text)
}
