//! Mode registry: the table mapping a recognised mode id to its order,
//! frequency coefficient, benchmark frequency and nodal-line count.
//!
//! The registry is loaded from a line-oriented calibration file
//! (`mode_id,n,m,lambda,source`, `#` comments). Frequencies are never read from
//! disk; they are recomputed from `lambda` for the registry's plate.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{natural_frequency, nodal_line_count, ModeOrder, NodalSettings, PhysicsError, PlateSpec};

/// Grid resolution used when counting a mode's nodal lines.
pub const NODAL_COUNT_RESOLUTION: usize = 128;

const SHIPPED_CALIBRATION: &str = include_str!("../data/modes.csv");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("calibration line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mode ids must be dense from 0: {0}")]
    Ids(String),
    #[error("unknown mode id {0}")]
    UnknownMode(usize),
    #[error("registry is empty")]
    Empty,
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("reading calibration file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Paper,
    Derived,
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Self::Paper),
            "derived" => Ok(Self::Derived),
            other => Err(format!("unknown source {other:?} (expected paper or derived)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeEntry {
    pub mode_id: usize,
    pub order: ModeOrder,
    pub lambda: f64,
    pub frequency_hz: f64,
    pub nodal_lines: usize,
    pub source: Source,
}

/// Result of looking a mode id up.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrequencyMapping {
    pub frequency_hz: f64,
    pub order: ModeOrder,
    pub nodal_lines: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeRegistry {
    plate: PlateSpec,
    entries: Vec<ModeEntry>,
}

impl ModeRegistry {
    /// The fifteen-mode table bundled with the crate, for the default plate.
    pub fn shipped() -> Self {
        Self::parse(SHIPPED_CALIBRATION, &PlateSpec::default()).expect("bundled calibration file is valid")
    }

    pub fn shipped_calibration_text() -> &'static str {
        SHIPPED_CALIBRATION
    }

    pub fn load(path: impl AsRef<Path>, plate: &PlateSpec) -> Result<Self, RegistryError> {
        Self::parse(&std::fs::read_to_string(path)?, plate)
    }

    pub fn parse(text: &str, plate: &PlateSpec) -> Result<Self, RegistryError> {
        plate.validate()?;
        let settings = NodalSettings::for_plate(plate);
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| RegistryError::Parse { line, message };
            let fields: Vec<&str> = content.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 comma-separated fields, got {}", fields.len())));
            }
            let mode_id: usize = fields[0].parse().map_err(|e| err(format!("mode_id: {e}")))?;
            let n: u32 = fields[1].parse().map_err(|e| err(format!("n: {e}")))?;
            let m: u32 = fields[2].parse().map_err(|e| err(format!("m: {e}")))?;
            let lambda: f64 = fields[3].parse().map_err(|e| err(format!("lambda: {e}")))?;
            let source: Source = fields[4].parse().map_err(err)?;
            let order = ModeOrder::new(n, m).map_err(|e| err(e.to_string()))?;
            let frequency_hz = natural_frequency(plate, lambda).map_err(|e| err(e.to_string()))?;
            let nodal_lines = nodal_line_count(&settings.mask(order, NODAL_COUNT_RESOLUTION)?);
            entries.push(ModeEntry { mode_id, order, lambda, frequency_hz, nodal_lines, source });
        }
        if entries.is_empty() {
            return Err(RegistryError::Empty);
        }
        entries.sort_by_key(|e| e.mode_id);
        for (expected, e) in entries.iter().enumerate() {
            if e.mode_id != expected {
                return Err(RegistryError::Ids(format!("expected id {expected}, found {}", e.mode_id)));
            }
        }
        Ok(Self { plate: *plate, entries })
    }

    pub fn plate(&self) -> &PlateSpec {
        &self.plate
    }

    pub fn entries(&self) -> &[ModeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, mode_id: usize) -> Option<&ModeEntry> {
        self.entries.get(mode_id)
    }

    /// Registry restricted to its first `count` modes (ids stay dense).
    pub fn truncated(&self, count: usize) -> Self {
        Self { plate: self.plate, entries: self.entries[..count.min(self.entries.len())].to_vec() }
    }

    /// Entry whose frequency is closest to `frequency_hz`.
    pub fn nearest_by_frequency(&self, frequency_hz: f64) -> &ModeEntry {
        self.entries
            .iter()
            .min_by(|a, b| (a.frequency_hz - frequency_hz).abs().total_cmp(&(b.frequency_hz - frequency_hz).abs()))
            .expect("registry is never empty")
    }
}

/// Pure lookup of a recognised mode's benchmark frequency and metadata.
pub fn map_mode_to_frequency(mode_id: usize, registry: &ModeRegistry) -> Result<FrequencyMapping, RegistryError> {
    let entry = registry.get(mode_id).ok_or(RegistryError::UnknownMode(mode_id))?;
    Ok(FrequencyMapping { frequency_hz: entry.frequency_hz, order: entry.order, nodal_lines: entry.nodal_lines })
}
