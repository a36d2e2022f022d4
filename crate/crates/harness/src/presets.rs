//! Built-in configurations. `desk-*` presets fit a workstation; `full-*`
//! presets use the full budgets.

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

const PRESETS: &[(&str, &str)] = &[
    (
        "desk-mnist-ff-oinit",
        include_str!("../presets/desk-mnist-ff-oinit.toml"),
    ),
    ("desk-mnist-ff-open", include_str!("../presets/desk-mnist-ff-open.toml")),
    (
        "desk-mnist-ff-vanilla",
        include_str!("../presets/desk-mnist-ff-vanilla.toml"),
    ),
    (
        "desk-mnist-seq-oinit",
        include_str!("../presets/desk-mnist-seq-oinit.toml"),
    ),
    (
        "desk-mnist-seq-open",
        include_str!("../presets/desk-mnist-seq-open.toml"),
    ),
    (
        "desk-mnist-seq-vanilla",
        include_str!("../presets/desk-mnist-seq-vanilla.toml"),
    ),
    (
        "desk-temporal-oinit",
        include_str!("../presets/desk-temporal-oinit.toml"),
    ),
    ("desk-temporal-open", include_str!("../presets/desk-temporal-open.toml")),
    (
        "desk-temporal-vanilla",
        include_str!("../presets/desk-temporal-vanilla.toml"),
    ),
    (
        "full-mnist-ff-oinit",
        include_str!("../presets/full-mnist-ff-oinit.toml"),
    ),
    ("full-mnist-ff-open", include_str!("../presets/full-mnist-ff-open.toml")),
    (
        "full-mnist-ff-vanilla",
        include_str!("../presets/full-mnist-ff-vanilla.toml"),
    ),
    (
        "full-mnist-seq-oinit",
        include_str!("../presets/full-mnist-seq-oinit.toml"),
    ),
    (
        "full-mnist-seq-open",
        include_str!("../presets/full-mnist-seq-open.toml"),
    ),
    (
        "full-mnist-seq-vanilla",
        include_str!("../presets/full-mnist-seq-vanilla.toml"),
    ),
    (
        "full-temporal-oinit",
        include_str!("../presets/full-temporal-oinit.toml"),
    ),
    ("full-temporal-open", include_str!("../presets/full-temporal-open.toml")),
    (
        "full-temporal-vanilla",
        include_str!("../presets/full-temporal-vanilla.toml"),
    ),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<ExperimentConfig> {
    let text = source(name).ok_or_else(|| {
        HarnessError::Config(format!(
            "unknown preset {name:?}; known: {}",
            names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    ExperimentConfig::from_toml(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses() {
        for n in names() {
            let cfg = load(n).unwrap_or_else(|e| panic!("{n}: {e}"));
            assert_eq!(cfg.name.as_deref(), Some(n));
        }
    }

    #[test]
    fn unknown() {
        assert!(load("nope").is_err());
    }
}
