// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::{grade, Color};
use crate::ledger::RunRecord;

/// Mandate level of a venue, in the only order it may advance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PolicyMode {
    Optional,
    MandatoryUnscored,
    MandatoryScored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VenuePolicy {
    pub venue_id: String,
    pub mode: PolicyMode,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("venue {venue} cannot move from {from:?} back to {to:?}")]
    Regression { venue: String, from: PolicyMode, to: PolicyMode },
    #[error("venue {0} requires a reproducibility run")]
    MissingArtifact(String),
}

impl PolicyError {
    pub fn code(&self) -> &'static str {
        match self {
            PolicyError::Regression { .. } => "POLICY_REGRESSION",
            PolicyError::MissingArtifact(_) => "MISSING_ARTIFACT",
        }
    }
}

impl VenuePolicy {
    pub fn new(venue_id: impl Into<String>, mode: PolicyMode, label: impl Into<String>) -> Self {
        Self { venue_id: venue_id.into(), mode, label: label.into() }
    }

    /// Moves the mandate forward (or keeps it). Never backwards.
    pub fn advance(&mut self, mode: PolicyMode) -> Result<(), PolicyError> {
        if mode < self.mode {
            return Err(PolicyError::Regression { venue: self.venue_id.clone(), from: self.mode, to: mode });
        }
        self.mode = mode;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewAnnotation {
    pub venue_id: String,
    pub mode: PolicyMode,
    pub note: String,
    pub grade: Option<Color>,
    /// The grade may inform the review decision.
    pub scored: bool,
    pub run_id: Option<String>,
}

pub fn apply_policy(policy: &VenuePolicy, record: Option<&RunRecord>) -> Result<ReviewAnnotation, PolicyError> {
    let color = record.map(|r| grade(r).color);
    let (note, scored) = match policy.mode {
        PolicyMode::Optional => ("voluntary; not used in decision", false),
        PolicyMode::MandatoryUnscored => ("required; informational only, not used in decision", false),
        PolicyMode::MandatoryScored => ("required; used to assess reproducibility", true),
    };
    if policy.mode != PolicyMode::Optional && record.is_none() {
        return Err(PolicyError::MissingArtifact(policy.venue_id.clone()));
    }
    Ok(ReviewAnnotation {
        venue_id: policy.venue_id.clone(),
        mode: policy.mode,
        note: note.to_string(),
        grade: color,
        scored,
        run_id: record.map(|r| r.run_id.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::CellStatus;
    use crate::testkit::records::{cell, record};

    #[test]
    fn annotations_per_mode() {
        let optional = VenuePolicy::new("v", PolicyMode::Optional, "Year t");
        let a = apply_policy(&optional, None).unwrap();
        assert_eq!((a.grade, a.scored), (None, false));

        let unscored = VenuePolicy::new("v", PolicyMode::MandatoryUnscored, "Year t+1");
        assert_eq!(apply_policy(&unscored, None), Err(PolicyError::MissingArtifact("v".into())));

        let amber = record("p", "c1", 0, &[cell("b1", "a", CellStatus::Fail)]);
        let scored = VenuePolicy::new("v", PolicyMode::MandatoryScored, "Year t+2");
        let a = apply_policy(&scored, Some(&amber)).unwrap();
        assert_eq!((a.grade, a.scored), (Some(Color::Amber), true));
        let a = apply_policy(&unscored, Some(&amber)).unwrap();
        assert_eq!((a.grade, a.scored), (Some(Color::Amber), false));
    }

    #[test]
    fn modes_only_move_forward() {
        let mut p = VenuePolicy::new("v", PolicyMode::Optional, "");
        p.advance(PolicyMode::MandatoryUnscored).unwrap();
        p.advance(PolicyMode::MandatoryUnscored).unwrap();
        assert!(p.advance(PolicyMode::Optional).is_err());
        p.advance(PolicyMode::MandatoryScored).unwrap();
        assert_eq!(p.mode, PolicyMode::MandatoryScored);
    }
}
