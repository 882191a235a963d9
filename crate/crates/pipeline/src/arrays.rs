use std::fmt;
use std::str::FromStr;

use clap::ValueEnum;
use moe_core::manifold::ArrayGeometry;

use crate::error::{Error, Result};

/// The four array configurations the tools know by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum)]
pub enum ArrayPreset {
    /// 2×3 rectangular array.
    Ura,
    /// Six-element circular array.
    Uca6,
    /// Twelve-element circular array of the same radius.
    Uca12,
    /// Single six-component vector sensor.
    Vs,
}

impl ArrayPreset {
    pub const ALL: [ArrayPreset; 4] = [ArrayPreset::Ura, ArrayPreset::Uca6, ArrayPreset::Uca12, ArrayPreset::Vs];

    pub fn geometry(self) -> ArrayGeometry {
        match self {
            ArrayPreset::Ura => ArrayGeometry::default_ura(),
            ArrayPreset::Uca6 => ArrayGeometry::default_uca(),
            ArrayPreset::Uca12 => ArrayGeometry::dense_uca(),
            ArrayPreset::Vs => ArrayGeometry::default_vector_sensor(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArrayPreset::Ura => "ura",
            ArrayPreset::Uca6 => "uca6",
            ArrayPreset::Uca12 => "uca12",
            ArrayPreset::Vs => "vs",
        }
    }
}

impl fmt::Display for ArrayPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArrayPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::setting("array", format!("unknown array {s:?} (ura, uca6, uca12, vs)")))
    }
}
