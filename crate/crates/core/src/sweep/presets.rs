//! Shipped scenario presets, compiled into the library so the CLI can run
//! them by name without any files on disk.

const PRESETS: &[(&str, &str)] = &[
    ("table1_replay", include_str!("presets/table1_replay.toml")),
    ("table2_replay", include_str!("presets/table2_replay.toml")),
    ("fig3_heatmap", include_str!("presets/fig3_heatmap.toml")),
    ("fig4_sensitivity", include_str!("presets/fig4_sensitivity.toml")),
    ("sec33_async", include_str!("presets/sec33_async.toml")),
];

/// Names of the shipped presets, in listing order.
pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(name, _)| *name).collect()
}

pub(super) fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}
