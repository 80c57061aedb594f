use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Processing stages, in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Align,
    Blur,
    Color,
    Cut,
    Blend,
    Crop,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Align,
        Stage::Blur,
        Stage::Color,
        Stage::Cut,
        Stage::Blend,
        Stage::Crop,
    ];

    /// Direct inputs of each stage. Blur of B feeds color, and color feeds
    /// both the cut and the blend.
    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Align => &[],
            Stage::Blur => &[Stage::Align],
            Stage::Color => &[Stage::Blur],
            Stage::Cut => &[Stage::Align, Stage::Blur, Stage::Color],
            Stage::Blend => &[Stage::Blur, Stage::Color, Stage::Cut],
            Stage::Crop => &[Stage::Blend],
        }
    }

    /// Blur and color may be switched off; the others always run.
    pub fn is_optional(self) -> bool {
        matches!(self, Stage::Blur | Stage::Color)
    }

    /// This stage and everything downstream of it.
    pub fn closure(self) -> BTreeSet<Stage> {
        let mut out = BTreeSet::from([self]);
        // ALL is in dependency order, so one sweep suffices.
        for s in Stage::ALL {
            if s.deps().iter().any(|d| out.contains(d)) {
                out.insert(s);
            }
        }
        out
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Align => "align",
            Stage::Blur => "blur",
            Stage::Color => "color",
            Stage::Cut => "cut",
            Stage::Blend => "blend",
            Stage::Crop => "crop",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| crate::Error::Config(format!("unknown stage {s:?}")))
    }
}

/// Inputs and parameter groups a project edit can touch, with the first
/// stage that reads each.
pub const INPUTS: [(&str, Stage); 12] = [
    ("clips", Stage::Align),
    ("offset", Stage::Align),
    ("anchor", Stage::Align),
    ("align", Stage::Align),
    ("realign", Stage::Align),
    ("blur", Stage::Blur),
    ("color", Stage::Color),
    ("strokes", Stage::Cut),
    ("keyframes", Stage::Cut),
    ("seam", Stage::Cut),
    ("blend", Stage::Blend),
    ("crop", Stage::Crop),
];

/// Stages made stale by editing the named inputs: the union of their
/// downstream closures.
pub fn invalidate(changed: &[&str]) -> crate::Result<BTreeSet<Stage>> {
    let mut out = BTreeSet::new();
    for id in changed {
        let (_, stage) = INPUTS
            .iter()
            .find(|(name, _)| name == id)
            .ok_or_else(|| crate::Error::Config(format!("unknown project input {id:?}")))?;
        out.extend(stage.closure());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert!("paint".parse::<Stage>().is_err());
    }

    #[test]
    fn deps_point_backwards() {
        for (i, s) in Stage::ALL.iter().enumerate() {
            for d in s.deps() {
                assert!(Stage::ALL[..i].contains(d), "{s} -> {d}");
            }
        }
    }

    #[test]
    fn edits_dirty_their_downstream() {
        use Stage::*;
        assert_eq!(invalidate(&["blend"]).unwrap(), BTreeSet::from([Blend, Crop]));
        assert_eq!(invalidate(&["strokes"]).unwrap(), BTreeSet::from([Cut, Blend, Crop]));
        assert_eq!(invalidate(&["color"]).unwrap(), BTreeSet::from([Color, Cut, Blend, Crop]));
        assert_eq!(invalidate(&["blur"]).unwrap(), BTreeSet::from([Blur, Color, Cut, Blend, Crop]));
        assert_eq!(invalidate(&["offset"]).unwrap(), Stage::ALL.into_iter().collect());
        assert!(invalidate(&[]).unwrap().is_empty());
        assert!(invalidate(&["lambda"]).is_err());
    }
}
