use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference constitutive constants.
pub mod constants {
    /// Young's modulus shared by every material.
    pub const YOUNG: f64 = 1e4;
    pub const POISSON: f64 = 0.2;
    /// Areal density (kg/m²) of every material.
    pub const DENSITY: f64 = 100.0;
    /// Snow plastic clamp on singular values: `[1 - COMPRESSION, 1 + STRETCH]`.
    pub const SNOW_CRITICAL_COMPRESSION: f64 = 2.5e-2;
    pub const SNOW_CRITICAL_STRETCH: f64 = 4.5e-3;
    pub const SNOW_HARDENING: f64 = 10.0;
    /// Bounds on the snow plastic volume ratio, keeping the hardened wave
    /// speed inside the CFL limit of the default time step.
    pub const SNOW_JP_MIN: f64 = 0.85;
    pub const SNOW_JP_MAX: f64 = 20.0;
    pub const SAND_DEFAULT_FRICTION_DEG: f64 = 45.0;

    pub fn lame() -> (f64, f64) {
        let mu = YOUNG / (2.0 * (1.0 + POISSON));
        let lambda = YOUNG * POISSON / ((1.0 + POISSON) * (1.0 - 2.0 * POISSON));
        (mu, lambda)
    }
}

/// The four simulated system classes. The discriminant is the on-disk class id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialKind {
    Water = 0,
    Sand = 1,
    Snow = 2,
    Elastic = 3,
}

impl MaterialKind {
    pub const ALL: [MaterialKind; 4] = [
        MaterialKind::Water,
        MaterialKind::Sand,
        MaterialKind::Snow,
        MaterialKind::Elastic,
    ];

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn from_id(id: u32) -> Result<Self> {
        MaterialKind::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Range(format!("class id {id} (expected 0..4)")))
    }

    pub fn name(self) -> &'static str {
        match self {
            MaterialKind::Water => "water",
            MaterialKind::Sand => "sand",
            MaterialKind::Snow => "snow",
            MaterialKind::Elastic => "elastic",
        }
    }
}

impl fmt::Display for MaterialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaterialKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MaterialKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown material class `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub kind: MaterialKind,
    /// Drucker-Prager friction angle; only sand reads it.
    pub friction_angle_deg: f64,
}

impl MaterialSpec {
    pub fn new(kind: MaterialKind) -> Self {
        MaterialSpec {
            kind,
            friction_angle_deg: constants::SAND_DEFAULT_FRICTION_DEG,
        }
    }

    pub fn sand(friction_angle_deg: f64) -> Result<Self> {
        if !(0.0..=45.0).contains(&friction_angle_deg) {
            return Err(Error::Range(format!(
                "friction angle {friction_angle_deg} outside [0, 45] degrees"
            )));
        }
        Ok(MaterialSpec {
            kind: MaterialKind::Sand,
            friction_angle_deg,
        })
    }

    /// Drucker-Prager cone coefficient for the friction angle.
    pub(crate) fn drucker_prager_alpha(&self) -> f64 {
        let s = self.friction_angle_deg.to_radians().sin();
        (2.0f64 / 3.0).sqrt() * 2.0 * s / (3.0 - s)
    }
}
