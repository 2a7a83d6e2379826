//! The shipped message catalogue: eight semantic event patterns, the
//! eight positional 2x2-square baselines, and the three-pulse alert that
//! precedes every event.
//!
//! All timing and intensity values live in `patterns/library.json`. Slow
//! heartbeat is 2 beats/s at intensity 60, fast heartbeat 4 beats/s at 80.
//!
//! Positional squares (top-left motor of each 2x2 square):
//!
//! | event              | panel | rows | cols |
//! |--------------------|-------|------|------|
//! | uninjured_person   | front | 0-1  | 0-1  |
//! | injured_person     | front | 0-1  | 2-3  |
//! | unconscious_person | front | 3-4  | 0-1  |
//! | fire               | front | 3-4  | 2-3  |
//! | low_oxygen         | back  | 0-1  | 0-1  |
//! | biohazard          | back  | 0-1  | 2-3  |
//! | robot_error        | back  | 3-4  | 0-1  |
//! | connection_lost    | back  | 3-4  | 2-3  |
//!
//! Biohazard chevrons sit on front rows 1-3: `>` at (1,0) (2,1) (3,0) and
//! `<` at (1,3) (2,2) (3,3).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pattern::{validate, PatternSpec, Violation};

const BUILTIN: &str = include_str!("../patterns/library.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    UninjuredPerson,
    InjuredPerson,
    UnconsciousPerson,
    Fire,
    LowOxygen,
    Biohazard,
    RobotError,
    ConnectionLost,
}

impl EventKind {
    pub const ALL: [EventKind; 8] = [
        EventKind::UninjuredPerson,
        EventKind::InjuredPerson,
        EventKind::UnconsciousPerson,
        EventKind::Fire,
        EventKind::LowOxygen,
        EventKind::Biohazard,
        EventKind::RobotError,
        EventKind::ConnectionLost,
    ];

    /// Stable code used in logs and file names.
    pub fn code(self) -> &'static str {
        match self {
            EventKind::UninjuredPerson => "uninjured_person",
            EventKind::InjuredPerson => "injured_person",
            EventKind::UnconsciousPerson => "unconscious_person",
            EventKind::Fire => "fire",
            EventKind::LowOxygen => "low_oxygen",
            EventKind::Biohazard => "biohazard",
            EventKind::RobotError => "robot_error",
            EventKind::ConnectionLost => "connection_lost",
        }
    }

    /// Position in [`EventKind::ALL`].
    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown code `{0}`")]
pub struct UnknownCode(pub String);

impl FromStr for EventKind {
    type Err = UnknownCode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|e| e.code() == s)
            .ok_or_else(|| UnknownCode(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodingStrategy {
    Semantic,
    Positional,
}

impl CodingStrategy {
    pub const ALL: [CodingStrategy; 2] = [CodingStrategy::Semantic, CodingStrategy::Positional];

    pub fn code(self) -> &'static str {
        match self {
            CodingStrategy::Semantic => "semantic",
            CodingStrategy::Positional => "positional",
        }
    }
}

impl fmt::Display for CodingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for CodingStrategy {
    type Err = UnknownCode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CodingStrategy::ALL
            .into_iter()
            .find(|e| e.code() == s)
            .ok_or_else(|| UnknownCode(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("pattern `{name}` does not name a library slot (expected `alert`, `semantic.<event>` or `positional.<event>`)")]
    UnknownSlot { name: String },
    #[error("pattern `{name}` is missing from the library")]
    Missing { name: String },
    #[error("pattern `{name}` is invalid: {violations:?}")]
    Invalid {
        name: String,
        violations: Vec<Violation>,
    },
}

#[derive(Debug, Deserialize)]
struct LibraryFile {
    alert: PatternSpec,
    semantic: BTreeMap<EventKind, PatternSpec>,
    positional: BTreeMap<EventKind, PatternSpec>,
}

/// Complete, validated set of patterns used by the mixer.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternLibrary {
    alert: PatternSpec,
    semantic: BTreeMap<EventKind, PatternSpec>,
    positional: BTreeMap<EventKind, PatternSpec>,
}

impl PatternLibrary {
    pub fn builtin() -> &'static PatternLibrary {
        static LIB: OnceLock<PatternLibrary> = OnceLock::new();
        LIB.get_or_init(|| Self::from_json(BUILTIN, "builtin").expect("builtin library is valid"))
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, LibraryError> {
        let file: LibraryFile = serde_json::from_str(text).map_err(|source| LibraryError::Parse {
            path: origin.to_string(),
            source,
        })?;
        let lib = Self {
            alert: file.alert,
            semantic: file.semantic,
            positional: file.positional,
        };
        lib.check()?;
        Ok(lib)
    }

    /// Built-in library with every `*.json` file in `dir` layered on top.
    /// Each file holds one pattern spec; its `name` picks the slot it
    /// replaces.
    pub fn with_overrides(dir: &Path) -> Result<Self, LibraryError> {
        let mut lib = Self::builtin().clone();
        let io = |source| LibraryError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|source| LibraryError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let spec: PatternSpec = serde_json::from_str(&text).map_err(|source| LibraryError::Parse {
                path: path.display().to_string(),
                source,
            })?;
            lib.insert(spec)?;
        }
        lib.check()?;
        Ok(lib)
    }

    /// Replace the slot named by `spec.name`.
    pub fn insert(&mut self, spec: PatternSpec) -> Result<(), LibraryError> {
        let unknown = || LibraryError::UnknownSlot {
            name: spec.name.clone(),
        };
        if spec.name == "alert" {
            self.alert = spec;
            return Ok(());
        }
        let (group, code) = spec.name.split_once('.').ok_or_else(unknown)?;
        let event: EventKind = code.parse().map_err(|_| unknown())?;
        match group {
            "semantic" => self.semantic.insert(event, spec),
            "positional" => self.positional.insert(event, spec),
            _ => return Err(unknown()),
        };
        Ok(())
    }

    fn check(&self) -> Result<(), LibraryError> {
        for spec in self.all() {
            let violations = validate(spec);
            if !violations.is_empty() {
                return Err(LibraryError::Invalid {
                    name: spec.name.clone(),
                    violations,
                });
            }
        }
        for event in EventKind::ALL {
            for (group, map) in [("semantic", &self.semantic), ("positional", &self.positional)] {
                if !map.contains_key(&event) {
                    return Err(LibraryError::Missing {
                        name: format!("{group}.{event}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn alert(&self) -> &PatternSpec {
        &self.alert
    }

    pub fn pattern(&self, event: EventKind, strategy: CodingStrategy) -> &PatternSpec {
        let map = match strategy {
            CodingStrategy::Semantic => &self.semantic,
            CodingStrategy::Positional => &self.positional,
        };
        &map[&event]
    }

    /// Alert followed by every semantic and positional pattern.
    pub fn all(&self) -> impl Iterator<Item = &PatternSpec> {
        std::iter::once(&self.alert)
            .chain(self.semantic.values())
            .chain(self.positional.values())
    }

    /// Library serialized in the same layout as the built-in data file.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            alert: &'a PatternSpec,
            semantic: &'a BTreeMap<EventKind, PatternSpec>,
            positional: &'a BTreeMap<EventKind, PatternSpec>,
        }
        serde_json::to_string_pretty(&Out {
            alert: &self.alert,
            semantic: &self.semantic,
            positional: &self.positional,
        })
        .expect("library serializes")
    }
}

pub fn semantic_pattern(event: EventKind) -> PatternSpec {
    PatternLibrary::builtin()
        .pattern(event, CodingStrategy::Semantic)
        .clone()
}

pub fn positional_pattern(event: EventKind) -> PatternSpec {
    PatternLibrary::builtin()
        .pattern(event, CodingStrategy::Positional)
        .clone()
}

pub fn alert_prefix() -> PatternSpec {
    PatternLibrary::builtin().alert().clone()
}
