//! Challenge-program labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the twelve challenge programs, or no program at all.
///
/// Variants are declared in canonical order (case-insensitive alphabetical
/// on the display name). Argmax tie-breaks and model persistence rely on
/// this order, so do not reorder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProgramLabel {
    AgingInPlace,
    AiForDesign,
    AiForLogistics,
    AppliedQuantumComputing,
    ArcticAndNorthern,
    CriticalBatteryMaterials,
    CellAndGeneTherapy,
    HighThroughputSecureNetworks,
    QuantumSensors,
    MaterialsForCleanFuels,
    NoProgram,
    PandemicResponse,
    SustainableProteinProduction,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("INVALID_LABEL: {0:?} is not a challenge program")]
pub struct InvalidLabel(pub String);

impl ProgramLabel {
    pub const COUNT: usize = 13;

    pub const ALL: [ProgramLabel; Self::COUNT] = [
        Self::AgingInPlace,
        Self::AiForDesign,
        Self::AiForLogistics,
        Self::AppliedQuantumComputing,
        Self::ArcticAndNorthern,
        Self::CriticalBatteryMaterials,
        Self::CellAndGeneTherapy,
        Self::HighThroughputSecureNetworks,
        Self::QuantumSensors,
        Self::MaterialsForCleanFuels,
        Self::NoProgram,
        Self::PandemicResponse,
        Self::SustainableProteinProduction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AgingInPlace => "Aging in Place",
            Self::AiForDesign => "AI for Design",
            Self::AiForLogistics => "AI for Logistics",
            Self::AppliedQuantumComputing => "Applied Quantum Computing",
            Self::ArcticAndNorthern => "Arctic and Northern",
            Self::CriticalBatteryMaterials => "Critical Battery Materials",
            Self::CellAndGeneTherapy => "Disruptive Technology Solutions for Cell and Gene Therapy",
            Self::HighThroughputSecureNetworks => "High-throughput and Secure Networks",
            Self::QuantumSensors => "Internet of Things: Quantum Sensors",
            Self::MaterialsForCleanFuels => "Materials for Clean Fuels",
            Self::NoProgram => "No Program",
            Self::PandemicResponse => "Pandemic Response",
            Self::SustainableProteinProduction => "Sustainable Protein Production",
        }
    }

    /// Position in canonical order, usable as a row/column index.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }
}

impl fmt::Display for ProgramLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProgramLabel {
    type Err = InvalidLabel;

    /// Case-insensitive, whitespace-trimmed. `NO_PROGRAM` and `none` are
    /// accepted as spellings of [`ProgramLabel::NoProgram`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim();
        if wanted.eq_ignore_ascii_case("no_program") || wanted.eq_ignore_ascii_case("none") {
            return Ok(Self::NoProgram);
        }
        Self::ALL
            .iter()
            .copied()
            .find(|label| label.as_str().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| InvalidLabel(s.to_string()))
    }
}

impl Serialize for ProgramLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ProgramLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Where a stored label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelSource {
    GroundTruth,
    Predicted,
    UserCorrected,
}

impl LabelSource {
    pub const ALL: [LabelSource; 3] = [Self::GroundTruth, Self::Predicted, Self::UserCorrected];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::GroundTruth => "GROUND_TRUTH",
            Self::Predicted => "PREDICTED",
            Self::UserCorrected => "USER_CORRECTED",
        }
    }

    /// Human-provided labels are never replaced by a prediction.
    pub fn is_human(self) -> bool {
        !matches!(self, Self::Predicted)
    }
}

impl FromStr for LabelSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| format!("unknown label source {s:?}"))
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirteen_distinct_labels_in_canonical_order() {
        assert_eq!(ProgramLabel::ALL.len(), 13);
        let names: Vec<String> = ProgramLabel::ALL
            .iter()
            .map(|l| l.as_str().to_lowercase())
            .collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        sorted.dedup();
        assert_eq!(sorted.len(), 13);
        for (i, label) in ProgramLabel::ALL.iter().enumerate() {
            assert_eq!(label.index(), i);
        }
    }

    #[test]
    fn parse_is_case_insensitive_and_trims() {
        assert_eq!(
            "  materials FOR clean fuels ".parse::<ProgramLabel>(),
            Ok(ProgramLabel::MaterialsForCleanFuels)
        );
        assert_eq!("NO_PROGRAM".parse(), Ok(ProgramLabel::NoProgram));
        assert_eq!("no program".parse(), Ok(ProgramLabel::NoProgram));
        assert!("Nonexistent Program".parse::<ProgramLabel>().is_err());
        assert!("".parse::<ProgramLabel>().is_err());
    }

    #[test]
    fn display_round_trips() {
        for label in ProgramLabel::ALL {
            assert_eq!(label.to_string().parse::<ProgramLabel>(), Ok(label));
        }
    }
}
