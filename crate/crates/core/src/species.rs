//! Class/species configuration. Index 0 is always soil.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeciesId(pub u8);

impl SpeciesId {
    pub const SOIL: SpeciesId = SpeciesId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_soil(self) -> bool {
        self.0 == 0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SpeciesError {
    #[error("species set must start with soil followed by at least one species")]
    TooFew,
    #[error("class 0 must be named \"soil\", got {0:?}")]
    FirstNotSoil(String),
    #[error("duplicate species name {0:?}")]
    Duplicate(String),
    #[error("at most 255 classes are supported")]
    TooMany,
    #[error("unknown preset {0:?} (expected \"irish\" or \"grassclover\")")]
    UnknownPreset(String),
}

/// Ordered class names; `names[0]` is soil, the rest are paste-able species.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct SpeciesSet {
    names: Vec<String>,
}

impl SpeciesSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, SpeciesError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(SpeciesError::TooFew);
        }
        if names.len() > 255 {
            return Err(SpeciesError::TooMany);
        }
        if names[0] != "soil" {
            return Err(SpeciesError::FirstNotSoil(names[0].clone()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(SpeciesError::Duplicate(n.clone()));
            }
        }
        Ok(Self { names })
    }

    /// soil, grass, clover, weeds
    pub fn irish() -> Self {
        Self::new(["soil", "grass", "clover", "weeds"]).unwrap()
    }

    /// soil, grass, white_clover, red_clover, weeds
    pub fn grassclover() -> Self {
        Self::new(["soil", "grass", "white_clover", "red_clover", "weeds"]).unwrap()
    }

    pub fn preset(name: &str) -> Result<Self, SpeciesError> {
        match name {
            "irish" => Ok(Self::irish()),
            "grassclover" => Ok(Self::grassclover()),
            other => Err(SpeciesError::UnknownPreset(other.to_string())),
        }
    }

    /// Number of classes including soil.
    pub fn n_classes(&self) -> usize {
        self.names.len()
    }

    pub fn n_species(&self) -> usize {
        self.names.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Names of the paste-able species (everything but soil).
    pub fn species_names(&self) -> &[String] {
        &self.names[1..]
    }

    pub fn name(&self, id: SpeciesId) -> Option<&str> {
        self.names.get(id.index()).map(String::as_str)
    }

    pub fn lookup(&self, name: &str) -> Option<SpeciesId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| SpeciesId(i as u8))
    }

    pub fn species_ids(&self) -> impl Iterator<Item = SpeciesId> {
        (1..self.names.len()).map(|i| SpeciesId(i as u8))
    }
}

impl TryFrom<Vec<String>> for SpeciesSet {
    type Error = SpeciesError;

    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SpeciesSet> for Vec<String> {
    fn from(s: SpeciesSet) -> Self {
        s.names
    }
}
