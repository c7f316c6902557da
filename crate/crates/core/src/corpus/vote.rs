use serde::{Deserialize, Serialize};

use super::labels::{MoralLabelVector, NUM_CLASSES};
use crate::error::{Error, Result};

/// Raw per-annotator labels for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub doc_id: String,
    pub per_annotator: Vec<MoralLabelVector>,
}

impl AnnotationSet {
    pub fn new(doc_id: impl Into<String>, per_annotator: Vec<MoralLabelVector>) -> Self {
        Self {
            doc_id: doc_id.into(),
            per_annotator,
        }
    }
}

/// Per-class strict-majority aggregation.
///
/// A class is positive when more than half of the annotators flagged it.
/// Returns `None` (discard) when no class has a positive majority and at
/// least one class is split exactly in half.
pub fn majority_vote(ann: &AnnotationSet, num_annotators: usize) -> Result<Option<MoralLabelVector>> {
    if ann.per_annotator.is_empty() {
        return Err(Error::NoAnnotations);
    }
    if num_annotators != ann.per_annotator.len() {
        return Err(Error::invalid(format!(
            "document `{}`: expected {} annotators, got {}",
            ann.doc_id,
            num_annotators,
            ann.per_annotator.len()
        )));
    }

    let mut counts = [0usize; NUM_CLASSES];
    for vote in &ann.per_annotator {
        for (count, flag) in counts.iter_mut().zip(vote.flags()) {
            *count += usize::from(*flag);
        }
    }

    let mut out = MoralLabelVector::NON_MORAL;
    let mut tied = false;
    for (c, count) in counts.iter().enumerate() {
        let twice = 2 * count;
        if twice > num_annotators {
            out.set(c, true);
        } else if twice == num_annotators {
            tied = true;
        }
    }

    if out.is_non_moral() && tied {
        Ok(None)
    } else {
        Ok(Some(out))
    }
}
