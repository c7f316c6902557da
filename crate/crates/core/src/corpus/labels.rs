use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 10;

/// Canonical class order shared by every dataset.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "care",
    "harm",
    "fairness",
    "cheating",
    "loyalty",
    "betrayal",
    "authority",
    "subversion",
    "purity",
    "degradation",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoralClass {
    Care,
    Harm,
    Fairness,
    Cheating,
    Loyalty,
    Betrayal,
    Authority,
    Subversion,
    Purity,
    Degradation,
}

impl MoralClass {
    pub const ALL: [MoralClass; NUM_CLASSES] = [
        MoralClass::Care,
        MoralClass::Harm,
        MoralClass::Fairness,
        MoralClass::Cheating,
        MoralClass::Loyalty,
        MoralClass::Betrayal,
        MoralClass::Authority,
        MoralClass::Subversion,
        MoralClass::Purity,
        MoralClass::Degradation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }
}

impl fmt::Display for MoralClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MoralClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let needle = s.trim();
        CLASS_NAMES
            .iter()
            .position(|name| *name == needle)
            .map(|i| MoralClass::ALL[i])
            .ok_or_else(|| Error::UnknownClass(s.to_string()))
    }
}

/// Ten binary moral-foundation targets. All-false means non-moral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MoralLabelVector {
    flags: [bool; NUM_CLASSES],
}

impl MoralLabelVector {
    pub const NON_MORAL: MoralLabelVector = MoralLabelVector {
        flags: [false; NUM_CLASSES],
    };

    pub fn new(flags: [bool; NUM_CLASSES]) -> Self {
        Self { flags }
    }

    pub fn from_classes<I: IntoIterator<Item = MoralClass>>(classes: I) -> Self {
        let mut flags = [false; NUM_CLASSES];
        for c in classes {
            flags[c.index()] = true;
        }
        Self { flags }
    }

    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let classes = names
            .into_iter()
            .map(|n| n.as_ref().parse::<MoralClass>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_classes(classes))
    }

    pub fn one_hot(class: usize) -> Self {
        let mut flags = [false; NUM_CLASSES];
        flags[class] = true;
        Self { flags }
    }

    pub fn flags(&self) -> &[bool; NUM_CLASSES] {
        &self.flags
    }

    pub fn get(&self, class: usize) -> bool {
        self.flags[class]
    }

    pub fn set(&mut self, class: usize, value: bool) {
        self.flags[class] = value;
    }

    pub fn is_non_moral(&self) -> bool {
        self.flags.iter().all(|f| !f)
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn classes(&self) -> impl Iterator<Item = MoralClass> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, f)| **f)
            .map(|(i, _)| MoralClass::ALL[i])
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.classes().map(MoralClass::name).collect()
    }

    pub fn as_f64(&self) -> [f64; NUM_CLASSES] {
        let mut out = [0.0; NUM_CLASSES];
        for (o, f) in out.iter_mut().zip(self.flags.iter()) {
            *o = if *f { 1.0 } else { 0.0 };
        }
        out
    }
}

// Serialized as the list of positive class names, the same shape the corpus file uses.
impl Serialize for MoralLabelVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.names().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MoralLabelVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(deserializer)?;
        MoralLabelVector::from_names(&names).map_err(serde::de::Error::custom)
    }
}
