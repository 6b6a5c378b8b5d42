use std::fmt;
use std::str::FromStr;

use super::ModelError;
use crate::audio::FRAME_DIM;

/// Shape of the encoder; the decoder mirrors it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub lstm_layers: usize,
    pub fc_layers: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub input_dim: usize,
}

impl EncoderConfig {
    /// 2 LSTM + 1 FC, 64 units.
    pub fn desk() -> Self {
        Self {
            lstm_layers: 2,
            fc_layers: 1,
            hidden: 64,
            feature_dim: 12,
            input_dim: FRAME_DIM,
        }
    }

    /// 2 LSTM + 1 FC, 800 units.
    pub fn small() -> Self {
        Self {
            hidden: 800,
            ..Self::desk()
        }
    }

    /// 3 LSTM + 2 FC, 800 units.
    pub fn large() -> Self {
        Self {
            lstm_layers: 3,
            fc_layers: 2,
            hidden: 800,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lstm_layers == 0 || self.hidden == 0 || self.feature_dim == 0 || self.input_dim == 0 {
            return Err(ModelError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Small,
    Large,
}

impl Preset {
    pub fn config(self) -> EncoderConfig {
        match self {
            Preset::Desk => EncoderConfig::desk(),
            Preset::Small => EncoderConfig::small(),
            Preset::Large => EncoderConfig::large(),
        }
    }
}

impl FromStr for Preset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "small" => Ok(Preset::Small),
            "large" => Ok(Preset::Large),
            other => Err(ModelError::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Small => "small",
            Preset::Large => "large",
        })
    }
}
