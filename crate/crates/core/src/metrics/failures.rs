//! Attribution of unsuccessful episodes to perception, decision or action.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    Perception,
    Decision,
    Action,
}

impl std::fmt::Display for FailureClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FailureClass::Perception => "perception",
            FailureClass::Decision => "decision",
            FailureClass::Action => "action",
        })
    }
}

/// A defect observed during an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defect {
    pub step: usize,
    pub class: FailureClass,
    pub detail: String,
}

/// Class of an unsuccessful episode: its earliest defect, else the
/// end-of-episode attribution. Successful episodes have none.
pub fn classify_episode(
    success: bool,
    defects: &[Defect],
    end_attribution: Option<FailureClass>,
) -> Option<FailureClass> {
    if success {
        return None;
    }
    defects
        .iter()
        .min_by_key(|d| d.step)
        .map(|d| d.class)
        .or(end_attribution)
        .or(Some(FailureClass::Decision))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub perception: usize,
    pub decision: usize,
    pub action: usize,
}

impl FailureCounts {
    pub fn add(&mut self, class: FailureClass) {
        match class {
            FailureClass::Perception => self.perception += 1,
            FailureClass::Decision => self.decision += 1,
            FailureClass::Action => self.action += 1,
        }
    }
}
