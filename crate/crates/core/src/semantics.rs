//! Label lexicon: what kind of object a label names and which skills it
//! affords.

use crate::scene::{ObjectKind, SkillKind};

/// Labels of object parts. Parts attach to a parent and afford no skill.
pub const PART_LABELS: [&str; 4] = ["handle", "knob", "door", "drawer_front"];

pub fn is_part_label(label: &str) -> bool {
    PART_LABELS.contains(&label)
}

pub fn kind_for_label(label: &str) -> ObjectKind {
    match label {
        "cabinet" | "drawer" | "dresser" | "cupboard" => ObjectKind::Container,
        "box" | "crate" | "bin" => ObjectKind::OpenBox,
        "cloth" | "towel" | "blanket" => ObjectKind::CoveredPile,
        "large_box" | "chair" => ObjectKind::MovableBlocker,
        "table" | "desk" | "bed" => ObjectKind::FurnitureWithUnderspace,
        _ => ObjectKind::Plain,
    }
}

/// Whether objects with this label can hold others inside.
pub fn is_container_like(label: &str) -> bool {
    matches!(
        kind_for_label(label),
        ObjectKind::Container | ObjectKind::OpenBox
    )
}

pub fn skills_for_label(label: &str) -> Vec<SkillKind> {
    if is_part_label(label) {
        return Vec::new();
    }
    match kind_for_label(label).exploration_skill() {
        Some(s) => vec![s],
        None => vec![SkillKind::Collect],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon() {
        assert_eq!(skills_for_label("cabinet"), vec![SkillKind::Open]);
        assert_eq!(skills_for_label("table"), vec![SkillKind::Sit]);
        assert_eq!(skills_for_label("toy"), vec![SkillKind::Collect]);
        assert!(skills_for_label("handle").is_empty());
        assert!(is_container_like("box"));
        assert!(!is_container_like("cloth"));
    }
}
