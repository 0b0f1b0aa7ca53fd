use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// The five postures the classifier distinguishes.
///
/// Declaration order is the canonical class order used for probability
/// vectors, confusion matrices and argmax tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PostureLabel {
    Neutral,
    ForwardHead,
    SlightBend,
    SevereBend,
    Hunch,
}

impl PostureLabel {
    pub const ALL: [PostureLabel; 5] = [
        PostureLabel::Neutral,
        PostureLabel::ForwardHead,
        PostureLabel::SlightBend,
        PostureLabel::SevereBend,
        PostureLabel::Hunch,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PostureLabel::Neutral => "neutral",
            PostureLabel::ForwardHead => "forward_head",
            PostureLabel::SlightBend => "slight_bend",
            PostureLabel::SevereBend => "severe_bend",
            PostureLabel::Hunch => "hunch",
        }
    }
}

impl fmt::Display for PostureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PostureLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == norm)
            .or(match norm.as_str() {
                "fhp" | "forwardhead" => Some(PostureLabel::ForwardHead),
                "slightbend" => Some(PostureLabel::SlightBend),
                "severebend" => Some(PostureLabel::SevereBend),
                "hunching" => Some(PostureLabel::Hunch),
                _ => None,
            })
            .ok_or_else(|| Error::Input(format!("unknown posture label '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip_through_text() {
        for l in PostureLabel::ALL {
            assert_eq!(l.as_str().parse::<PostureLabel>().unwrap(), l);
            assert_eq!(PostureLabel::from_index(l.index()), Some(l));
        }
        assert_eq!("FHP".parse::<PostureLabel>().unwrap(), PostureLabel::ForwardHead);
        assert!("slouch".parse::<PostureLabel>().is_err());
    }
}
