//! Named hyperparameter presets for every train/test combination of the
//! four corpora.

use crate::error::{Error, Result};

use super::ExperimentConfig;

pub const PRESETS: [(&str, &str); 28] = [
    ("row1_covid_to_mftc", include_str!("../../presets/row1_covid_to_mftc.conf")),
    ("row2_congress_to_mftc", include_str!("../../presets/row2_congress_to_mftc.conf")),
    ("row3_emfd_to_mftc", include_str!("../../presets/row3_emfd_to_mftc.conf")),
    ("row4_covid_emfd_to_mftc", include_str!("../../presets/row4_covid_emfd_to_mftc.conf")),
    ("row5_covid_congress_to_mftc", include_str!("../../presets/row5_covid_congress_to_mftc.conf")),
    ("row6_emfd_congress_to_mftc", include_str!("../../presets/row6_emfd_congress_to_mftc.conf")),
    ("row7_covid_congress_emfd_to_mftc", include_str!("../../presets/row7_covid_congress_emfd_to_mftc.conf")),
    ("row8_covid_to_congress", include_str!("../../presets/row8_covid_to_congress.conf")),
    ("row9_emfd_to_congress", include_str!("../../presets/row9_emfd_to_congress.conf")),
    ("row10_mftc_to_congress", include_str!("../../presets/row10_mftc_to_congress.conf")),
    ("row11_covid_emfd_to_congress", include_str!("../../presets/row11_covid_emfd_to_congress.conf")),
    ("row12_covid_mftc_to_congress", include_str!("../../presets/row12_covid_mftc_to_congress.conf")),
    ("row13_emfd_mftc_to_congress", include_str!("../../presets/row13_emfd_mftc_to_congress.conf")),
    ("row14_covid_emfd_mftc_to_congress", include_str!("../../presets/row14_covid_emfd_mftc_to_congress.conf")),
    ("row15_congress_to_covid", include_str!("../../presets/row15_congress_to_covid.conf")),
    ("row16_emfd_to_covid", include_str!("../../presets/row16_emfd_to_covid.conf")),
    ("row17_mftc_to_covid", include_str!("../../presets/row17_mftc_to_covid.conf")),
    ("row18_congress_emfd_to_covid", include_str!("../../presets/row18_congress_emfd_to_covid.conf")),
    ("row19_congress_mftc_to_covid", include_str!("../../presets/row19_congress_mftc_to_covid.conf")),
    ("row20_emfd_mftc_to_covid", include_str!("../../presets/row20_emfd_mftc_to_covid.conf")),
    ("row21_congress_emfd_mftc_to_covid", include_str!("../../presets/row21_congress_emfd_mftc_to_covid.conf")),
    ("row22_covid_to_emfd", include_str!("../../presets/row22_covid_to_emfd.conf")),
    ("row23_congress_to_emfd", include_str!("../../presets/row23_congress_to_emfd.conf")),
    ("row24_mftc_to_emfd", include_str!("../../presets/row24_mftc_to_emfd.conf")),
    ("row25_covid_congress_to_emfd", include_str!("../../presets/row25_covid_congress_to_emfd.conf")),
    ("row26_covid_mftc_to_emfd", include_str!("../../presets/row26_covid_mftc_to_emfd.conf")),
    ("row27_congress_mftc_to_emfd", include_str!("../../presets/row27_congress_mftc_to_emfd.conf")),
    ("row28_covid_congress_mftc_to_emfd", include_str!("../../presets/row28_covid_congress_mftc_to_emfd.conf")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn load_preset(name: &str) -> Result<ExperimentConfig> {
    let text = preset_text(name).ok_or_else(|| Error::invalid(format!("unknown preset '{name}'")))?;
    ExperimentConfig::parse(text)
}
