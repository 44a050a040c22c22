use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::binary::Architecture;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bitness {
    B32,
    B64,
}

impl Bitness {
    pub const ALL: [Bitness; 2] = [Bitness::B32, Bitness::B64];

    pub fn bits(self) -> u32 {
        match self {
            Bitness::B32 => 32,
            Bitness::B64 => 64,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Bitness> {
        match bits {
            32 => Some(Bitness::B32),
            64 => Some(Bitness::B64),
            _ => None,
        }
    }

    /// `-m32` / `-m64`.
    pub fn compiler_flag(self) -> &'static str {
        match self {
            Bitness::B32 => "-m32",
            Bitness::B64 => "-m64",
        }
    }

    pub fn architecture(self) -> Architecture {
        match self {
            Bitness::B32 => Architecture::X86,
            Bitness::B64 => Architecture::X86_64,
        }
    }
}

impl From<Architecture> for Bitness {
    fn from(arch: Architecture) -> Self {
        match arch {
            Architecture::X86 => Bitness::B32,
            Architecture::X86_64 => Bitness::B64,
        }
    }
}

impl fmt::Display for Bitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

impl FromStr for Bitness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim_start_matches("-m")
            .parse::<u32>()
            .ok()
            .and_then(Bitness::from_bits)
            .ok_or_else(|| format!("bitness must be 32 or 64, got `{s}`"))
    }
}

impl Serialize for Bitness {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u32(self.bits())
    }
}

impl<'de> Deserialize<'de> for Bitness {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let bits = u32::deserialize(d)?;
        Bitness::from_bits(bits).ok_or_else(|| serde::de::Error::custom(format!("unsupported bitness {bits}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptLevel {
    O0,
    O1,
    O2,
    O3,
}

impl OptLevel {
    pub const ALL: [OptLevel; 4] = [OptLevel::O0, OptLevel::O1, OptLevel::O2, OptLevel::O3];

    pub fn compiler_flag(self) -> &'static str {
        match self {
            OptLevel::O0 => "-O0",
            OptLevel::O1 => "-O1",
            OptLevel::O2 => "-O2",
            OptLevel::O3 => "-O3",
        }
    }

    pub fn as_str(self) -> &'static str {
        &self.compiler_flag()[1..]
    }
}

impl fmt::Display for OptLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim_start_matches('-').to_ascii_uppercase().as_str() {
            "O0" => Ok(OptLevel::O0),
            "O1" => Ok(OptLevel::O1),
            "O2" => Ok(OptLevel::O2),
            "O3" => Ok(OptLevel::O3),
            _ => Err(format!("optimization level must be one of O0..O3, got `{s}`")),
        }
    }
}
