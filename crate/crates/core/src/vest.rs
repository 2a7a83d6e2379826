//! Motor topology of the 40-motor vest.
//!
//! Each panel (front and back) is a 5-row by 4-column grid. Row 0 is the
//! top of the panel (base of the neck), column 0 is on the wearer's left
//! on both panels. Motors are indexed front panel first, row-major:
//!
//! ```text
//!   front            back (seen from behind the wearer)
//!   col 0 1 2 3      col 0 1 2 3
//! r0   0  1  2  3     20 21 22 23
//! r1   4  5  6  7     24 25 26 27
//! r2   8  9 10 11     28 29 30 31
//! r3  12 13 14 15     32 33 34 35
//! r4  16 17 18 19     36 37 38 39   <- bottom rows form the stomach band
//! ```
//!
//! Region catalogue (all coordinates are `(row, col)`):
//!
//! | region         | motors                                         |
//! |----------------|------------------------------------------------|
//! | `neck_base`    | front (0,1) (0,2)                              |
//! | `chest`        | front rows 1-2 x cols 1-2                      |
//! | `lung_area`    | front rows 1-2 x cols 0-3                      |
//! | `centre_front` | front rows 1-3 x cols 0-3                      |
//! | `front`        | every front motor                              |
//! | `back`         | every back motor                               |
//! | `stomach`      | the 8 band motors (row 4 of both panels)       |
//! | `lower_band`   | the 8 band motors, in ring order               |

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROWS: u8 = 5;
pub const COLS: u8 = 4;
pub const MOTORS_PER_PANEL: usize = (ROWS as usize) * (COLS as usize);
pub const MOTOR_COUNT: usize = 2 * MOTORS_PER_PANEL;

/// Row of each panel used for the direction band.
pub const BAND_ROW: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Panel {
    Front,
    Back,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VestError {
    #[error("motor coordinate out of range: row {row}, col {col}")]
    OutOfRange { row: u8, col: u8 },
    #[error("motor index {0} out of range 0..40")]
    IndexOutOfRange(usize),
    #[error("unknown region `{0}`")]
    UnknownRegion(String),
}

/// One physical motor, addressed by panel and grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawMotorId", into = "RawMotorId")]
pub struct MotorId {
    panel: Panel,
    row: u8,
    col: u8,
}

#[derive(Serialize, Deserialize)]
struct RawMotorId {
    panel: Panel,
    row: u8,
    col: u8,
}

impl TryFrom<RawMotorId> for MotorId {
    type Error = VestError;

    fn try_from(raw: RawMotorId) -> Result<Self, Self::Error> {
        MotorId::new(raw.panel, raw.row, raw.col)
    }
}

impl From<MotorId> for RawMotorId {
    fn from(id: MotorId) -> Self {
        RawMotorId {
            panel: id.panel,
            row: id.row,
            col: id.col,
        }
    }
}

impl MotorId {
    pub fn new(panel: Panel, row: u8, col: u8) -> Result<Self, VestError> {
        if row >= ROWS || col >= COLS {
            return Err(VestError::OutOfRange { row, col });
        }
        Ok(Self { panel, row, col })
    }

    pub const fn front(row: u8, col: u8) -> Self {
        assert!(row < ROWS && col < COLS);
        Self {
            panel: Panel::Front,
            row,
            col,
        }
    }

    pub const fn back(row: u8, col: u8) -> Self {
        assert!(row < ROWS && col < COLS);
        Self {
            panel: Panel::Back,
            row,
            col,
        }
    }

    pub fn panel(&self) -> Panel {
        self.panel
    }

    pub fn row(&self) -> u8 {
        self.row
    }

    pub fn col(&self) -> u8 {
        self.col
    }

    /// Position in a 40-element intensity array.
    pub fn index(&self) -> usize {
        let offset = match self.panel {
            Panel::Front => 0,
            Panel::Back => MOTORS_PER_PANEL,
        };
        offset + self.row as usize * COLS as usize + self.col as usize
    }

    pub fn from_index(index: usize) -> Result<Self, VestError> {
        if index >= MOTOR_COUNT {
            return Err(VestError::IndexOutOfRange(index));
        }
        let (panel, local) = if index < MOTORS_PER_PANEL {
            (Panel::Front, index)
        } else {
            (Panel::Back, index - MOTORS_PER_PANEL)
        };
        Ok(Self {
            panel,
            row: (local / COLS as usize) as u8,
            col: (local % COLS as usize) as u8,
        })
    }

    /// All 40 motors in index order.
    pub fn all() -> impl Iterator<Item = MotorId> {
        (0..MOTOR_COUNT).map(|i| MotorId::from_index(i).expect("index in range"))
    }
}

impl fmt::Display for MotorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.panel {
            Panel::Front => 'F',
            Panel::Back => 'B',
        };
        write!(f, "{p}{}{}", self.row, self.col)
    }
}

/// Index of a motor. Free-function form of [`MotorId::index`].
pub fn motor_index(id: MotorId) -> usize {
    id.index()
}

/// A named set of motors. Motor order is preserved because some
/// primitives (band wraps, spirals over explicit paths) depend on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub motors: Vec<MotorId>,
}

impl Region {
    pub fn contains(&self, id: MotorId) -> bool {
        self.motors.contains(&id)
    }
}

/// The eight stomach-band motors used by the direction channel.
///
/// Ring order runs clockwise seen from above, starting at the front-left
/// motor: `mf0..mf3` are the front band motors left to right, `mb0..mb3`
/// are the back band motors right to left. Azimuths are wearer-relative
/// degrees in `(-180, 180]`, 0 = straight ahead, positive to the right.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandRing {
    pub motors: [MotorId; 8],
    pub azimuths: [f64; 8],
}

impl BandRing {
    /// Position of a motor within the ring.
    pub fn position(&self, id: MotorId) -> Option<usize> {
        self.motors.iter().position(|m| *m == id)
    }

    /// True when the two motors are neighbours on the ring.
    pub fn adjacent(&self, a: MotorId, b: MotorId) -> bool {
        match (self.position(a), self.position(b)) {
            (Some(i), Some(j)) => (i + 1) % 8 == j || (j + 1) % 8 == i,
            _ => false,
        }
    }

    pub fn azimuth(&self, id: MotorId) -> Option<f64> {
        self.position(id).map(|i| self.azimuths[i])
    }
}

pub fn band_ring() -> BandRing {
    BandRing {
        motors: [
            MotorId::front(BAND_ROW, 0),
            MotorId::front(BAND_ROW, 1),
            MotorId::front(BAND_ROW, 2),
            MotorId::front(BAND_ROW, 3),
            MotorId::back(BAND_ROW, 3),
            MotorId::back(BAND_ROW, 2),
            MotorId::back(BAND_ROW, 1),
            MotorId::back(BAND_ROW, 0),
        ],
        azimuths: [-67.5, -22.5, 22.5, 67.5, 112.5, 157.5, -157.5, -112.5],
    }
}

pub const REGION_NAMES: [&str; 8] = [
    "neck_base",
    "chest",
    "lung_area",
    "centre_front",
    "front",
    "back",
    "stomach",
    "lower_band",
];

fn block(panel: Panel, rows: std::ops::RangeInclusive<u8>, cols: std::ops::RangeInclusive<u8>) -> Vec<MotorId> {
    rows.flat_map(|r| cols.clone().map(move |c| MotorId { panel, row: r, col: c }))
        .collect()
}

/// Look up a region from the fixed catalogue.
pub fn region(name: &str) -> Result<Region, VestError> {
    let motors = match name {
        "neck_base" => block(Panel::Front, 0..=0, 1..=2),
        "chest" => block(Panel::Front, 1..=2, 1..=2),
        "lung_area" => block(Panel::Front, 1..=2, 0..=3),
        "centre_front" => block(Panel::Front, 1..=3, 0..=3),
        "front" => block(Panel::Front, 0..=4, 0..=3),
        "back" => block(Panel::Back, 0..=4, 0..=3),
        "stomach" => {
            let mut m = band_ring().motors.to_vec();
            m.sort();
            m
        }
        "lower_band" => band_ring().motors.to_vec(),
        other => return Err(VestError::UnknownRegion(other.to_string())),
    };
    Ok(Region {
        name: name.to_string(),
        motors,
    })
}

/// Serializable topology description consumed by the browser console.
#[derive(Debug, Clone, Serialize)]
pub struct Topology {
    pub rows: u8,
    pub cols: u8,
    pub motor_count: usize,
    pub motors: Vec<TopologyMotor>,
    pub band_ring: BandRing,
    pub regions: Vec<Region>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TopologyMotor {
    pub index: usize,
    #[serde(flatten)]
    pub id: MotorId,
}

pub fn topology() -> Topology {
    Topology {
        rows: ROWS,
        cols: COLS,
        motor_count: MOTOR_COUNT,
        motors: MotorId::all()
            .map(|id| TopologyMotor {
                index: id.index(),
                id,
            })
            .collect(),
        band_ring: band_ring(),
        regions: REGION_NAMES
            .iter()
            .map(|n| region(n).expect("catalogue region"))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn index_examples() {
        assert_eq!(motor_index(MotorId::front(0, 0)), 0);
        assert_eq!(motor_index(MotorId::front(4, 3)), 19);
        assert_eq!(motor_index(MotorId::back(0, 0)), 20);
        assert_eq!(motor_index(MotorId::back(4, 3)), 39);
    }

    #[test]
    fn index_is_bijective() {
        let ids: BTreeSet<MotorId> = MotorId::all().collect();
        assert_eq!(ids.len(), 40);
        for i in 0..MOTOR_COUNT {
            assert_eq!(MotorId::from_index(i).unwrap().index(), i);
        }
        assert!(MotorId::from_index(40).is_err());
        assert!(MotorId::new(Panel::Front, 5, 0).is_err());
        assert!(MotorId::new(Panel::Back, 0, 4).is_err());
    }

    #[test]
    fn band_ring_layout() {
        let ring = band_ring();
        let front = ring.motors.iter().filter(|m| m.panel() == Panel::Front).count();
        assert_eq!(front, 4);
        assert!(ring.motors.iter().all(|m| m.row() == BAND_ROW));
        assert_eq!(ring.azimuth(MotorId::front(4, 1)), Some(-22.5));
        for k in 0..8 {
            let a = ring.azimuths[k];
            let b = ring.azimuths[(k + 1) % 8];
            assert_eq!((b - a).rem_euclid(360.0), 45.0);
        }
        let mut sorted: Vec<f64> = ring.azimuths.iter().map(|a| a.rem_euclid(360.0)).collect();
        sorted.sort_by(f64::total_cmp);
        let odd: Vec<f64> = (0..8).map(|k| 22.5 + 45.0 * k as f64).collect();
        assert_eq!(sorted, odd);
    }

    #[test]
    fn region_examples() {
        let chest = region("chest").unwrap();
        assert_eq!(
            chest.motors,
            vec![
                MotorId::front(1, 1),
                MotorId::front(1, 2),
                MotorId::front(2, 1),
                MotorId::front(2, 2)
            ]
        );
        let stomach: BTreeSet<_> = region("stomach").unwrap().motors.into_iter().collect();
        let ring: BTreeSet<_> = band_ring().motors.into_iter().collect();
        assert_eq!(stomach, ring);
        assert_eq!(
            region("neck_base").unwrap().motors,
            vec![MotorId::front(0, 1), MotorId::front(0, 2)]
        );
        assert_eq!(
            region("nonexistent"),
            Err(VestError::UnknownRegion("nonexistent".into()))
        );
    }

    #[test]
    fn catalogue_regions_are_valid_and_stable() {
        for name in REGION_NAMES {
            let a = region(name).unwrap();
            let b = region(name).unwrap();
            assert_eq!(a, b);
            assert!(!a.motors.is_empty());
            let unique: BTreeSet<_> = a.motors.iter().collect();
            assert_eq!(unique.len(), a.motors.len(), "{name} has duplicates");
        }
    }

    #[test]
    fn motor_id_serde_rejects_out_of_range() {
        let ok: MotorId = serde_json::from_str(r#"{"panel":"back","row":4,"col":3}"#).unwrap();
        assert_eq!(ok.index(), 39);
        assert!(serde_json::from_str::<MotorId>(r#"{"panel":"back","row":5,"col":3}"#).is_err());
    }
}
