//! Developmental labels attached to each annotated frame.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown {kind} label `{value}`")]
pub struct UnknownLabel {
    pub kind: &'static str,
    pub value: String,
}

/// Embryonic cell cycle stage of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EccLabel {
    Oocyte,
    Zygote,
    Ecc1,
    Ecc2,
    Ecc3,
    Morula,
    Blastocyst,
}

impl EccLabel {
    pub const ALL: [EccLabel; 7] = [
        EccLabel::Oocyte,
        EccLabel::Zygote,
        EccLabel::Ecc1,
        EccLabel::Ecc2,
        EccLabel::Ecc3,
        EccLabel::Morula,
        EccLabel::Blastocyst,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EccLabel::Oocyte => "oocyte",
            EccLabel::Zygote => "zygote",
            EccLabel::Ecc1 => "ECC1",
            EccLabel::Ecc2 => "ECC2",
            EccLabel::Ecc3 => "ECC3",
            EccLabel::Morula => "morula",
            EccLabel::Blastocyst => "blastocyst",
        }
    }
}

impl FromStr for EccLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        EccLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(trimmed))
            .ok_or_else(|| UnknownLabel {
                kind: "ECC",
                value: s.to_string(),
            })
    }
}

/// Timed developmental event annotated on a frame. Declaration order is the
/// canonical reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MorphokineticVariable {
    TPb2,
    TPna,
    TPnf,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
    T8,
    T9Plus,
    TM,
    TSb,
    TB,
    TEb,
}

impl MorphokineticVariable {
    pub const ALL: [MorphokineticVariable; 15] = [
        MorphokineticVariable::TPb2,
        MorphokineticVariable::TPna,
        MorphokineticVariable::TPnf,
        MorphokineticVariable::T2,
        MorphokineticVariable::T3,
        MorphokineticVariable::T4,
        MorphokineticVariable::T5,
        MorphokineticVariable::T6,
        MorphokineticVariable::T7,
        MorphokineticVariable::T8,
        MorphokineticVariable::T9Plus,
        MorphokineticVariable::TM,
        MorphokineticVariable::TSb,
        MorphokineticVariable::TB,
        MorphokineticVariable::TEb,
    ];

    pub fn as_str(self) -> &'static str {
        use MorphokineticVariable::*;
        match self {
            TPb2 => "tPB2",
            TPna => "tPNa",
            TPnf => "tPNf",
            T2 => "t2",
            T3 => "t3",
            T4 => "t4",
            T5 => "t5",
            T6 => "t6",
            T7 => "t7",
            T8 => "t8",
            T9Plus => "t9+",
            TM => "tM",
            TSb => "tSB",
            TB => "tB",
            TEb => "tEB",
        }
    }
}

impl FromStr for MorphokineticVariable {
    type Err = UnknownLabel;

    // Case matters: `tB` and `tb` are not distinguished by anything else.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        MorphokineticVariable::ALL
            .into_iter()
            .find(|v| v.as_str() == trimmed)
            .ok_or_else(|| UnknownLabel {
                kind: "morphokinetic variable",
                value: s.to_string(),
            })
    }
}

macro_rules! string_conversions {
    ($ty:ty) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl TryFrom<String> for $ty {
            type Error = UnknownLabel;

            fn try_from(value: String) -> Result<Self, Self::Error> {
                value.parse()
            }
        }

        impl From<$ty> for String {
            fn from(value: $ty) -> String {
                value.as_str().to_string()
            }
        }
    };
}

string_conversions!(EccLabel);
string_conversions!(MorphokineticVariable);
