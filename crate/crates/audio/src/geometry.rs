use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AudioError, Result};

/// Azimuth in whole degrees on the 10-degree grid. 0 is straight ahead and
/// angles grow clockwise seen from above, so 90 is the listener's right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct Azimuth(u16);

pub const AZIMUTH_STEP: u16 = 10;
pub const NUM_AZIMUTHS: usize = 36;

impl Azimuth {
    pub fn new(degrees: u16) -> Result<Self> {
        if degrees >= 360 || degrees % AZIMUTH_STEP != 0 {
            return Err(AudioError::Parameter(format!(
                "azimuth {degrees} is not on the 10-degree grid in [0, 360)"
            )));
        }
        Ok(Self(degrees))
    }

    /// All 36 grid azimuths in increasing order.
    pub fn all() -> Vec<Self> {
        (0..360).step_by(AZIMUTH_STEP as usize).map(Self).collect()
    }

    pub fn degrees(self) -> u16 {
        self.0
    }

    /// Position on the grid, 0..36.
    pub fn index(self) -> usize {
        (self.0 / AZIMUTH_STEP) as usize
    }

    /// Angle in radians wrapped to (-π, π], so mirrored azimuths have
    /// exactly negated angles.
    pub fn signed_radians(self) -> f64 {
        let d = if self.0 > 180 { self.0 as f64 - 360.0 } else { self.0 as f64 };
        d.to_radians()
    }

    /// Unit vector (x, y): x to the right, y straight ahead. Cardinal
    /// directions are exact.
    pub fn coordinate(self) -> [f64; 2] {
        match self.0 {
            0 => [0.0, 1.0],
            90 => [1.0, 0.0],
            180 => [0.0, -1.0],
            270 => [-1.0, 0.0],
            _ => {
                let a = self.signed_radians();
                [a.sin(), a.cos()]
            }
        }
    }

    /// Reflection across the median plane.
    pub fn mirror(self) -> Self {
        Self((360 - self.0) % 360)
    }

    pub fn hemifield(self) -> Hemifield {
        match self.0 {
            0 | 180 => Hemifield::Midline,
            1..=179 => Hemifield::Right,
            _ => Hemifield::Left,
        }
    }
}

impl TryFrom<u16> for Azimuth {
    type Error = AudioError;
    fn try_from(d: u16) -> Result<Self> {
        Self::new(d)
    }
}

impl From<Azimuth> for u16 {
    fn from(a: Azimuth) -> u16 {
        a.0
    }
}

impl fmt::Display for Azimuth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Hemifield {
    Left,
    Right,
    Midline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Environment {
    #[serde(rename = "AE")]
    Anechoic,
    #[serde(rename = "RV")]
    Reverberant,
}

impl Environment {
    pub const ALL: [Environment; 2] = [Environment::Anechoic, Environment::Reverberant];

    pub fn tag(self) -> &'static str {
        match self {
            Environment::Anechoic => "AE",
            Environment::Reverberant => "RV",
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Environment {
    type Err = AudioError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AE" | "ae" => Ok(Environment::Anechoic),
            "RV" | "rv" => Ok(Environment::Reverberant),
            _ => Err(AudioError::Parameter(format!("unknown environment `{s}`"))),
        }
    }
}

/// Ground truth for one rendered sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationTarget {
    pub azimuth: Azimuth,
    pub coordinate: [f64; 2],
    pub environment: Environment,
}

impl LocalizationTarget {
    pub fn new(azimuth: Azimuth, environment: Environment) -> Self {
        Self {
            azimuth,
            coordinate: azimuth.coordinate(),
            environment,
        }
    }
}
