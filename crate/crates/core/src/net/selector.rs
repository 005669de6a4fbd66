//! Target selectors: pick detections by class, by confidence index, or by
//! per-class ordinal.
//!
//! Grammar (one token, no whitespace):
//! - `"vase"`    every detection with that class label
//! - `"2"`       the detection at index 2 of the confidence-sorted list
//! - `"vase:1"`  the second-highest-confidence detection of class `vase`
//!
//! A bare integer always means an index; class names made only of digits are
//! not addressable by name.

use std::fmt;
use std::str::FromStr;

use super::{Detection, NetworkError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSelector {
    ByClass(String),
    ByIndex(usize),
    ByClassOrdinal(String, usize),
}

impl FromStr for TargetSelector {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = |why: &str| NetworkError::SelectorParse(format!("{s:?}: {why}"));
        if s.is_empty() {
            return Err(malformed("empty selector"));
        }
        let mut parts = s.split(':');
        let head = parts.next().expect("split yields at least one part");
        match (parts.next(), parts.next()) {
            (None, _) => {
                if head.chars().all(|c| c.is_ascii_digit()) {
                    let idx = head
                        .parse::<usize>()
                        .map_err(|_| malformed("index out of range"))?;
                    Ok(TargetSelector::ByIndex(idx))
                } else {
                    Ok(TargetSelector::ByClass(head.to_string()))
                }
            }
            (Some(ord), None) => {
                if head.is_empty() {
                    return Err(malformed("empty class name"));
                }
                if ord.is_empty() || !ord.chars().all(|c| c.is_ascii_digit()) {
                    return Err(malformed("ordinal must be a non-negative integer"));
                }
                let idx = ord
                    .parse::<usize>()
                    .map_err(|_| malformed("ordinal out of range"))?;
                Ok(TargetSelector::ByClassOrdinal(head.to_string(), idx))
            }
            (Some(_), Some(_)) => Err(malformed("too many ':' separators")),
        }
    }
}

impl fmt::Display for TargetSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSelector::ByClass(c) => write!(f, "{c}"),
            TargetSelector::ByIndex(i) => write!(f, "{i}"),
            TargetSelector::ByClassOrdinal(c, i) => write!(f, "{c}:{i}"),
        }
    }
}

/// Indices of the detections a selector picks, in input order. An empty
/// result is legal.
pub fn select_indices(detections: &[Detection], selector: &TargetSelector) -> Vec<usize> {
    match selector {
        TargetSelector::ByClass(class) => detections
            .iter()
            .enumerate()
            .filter(|(_, d)| d.class_label == *class)
            .map(|(i, _)| i)
            .collect(),
        TargetSelector::ByIndex(idx) => {
            if *idx < detections.len() {
                vec![*idx]
            } else {
                vec![]
            }
        }
        TargetSelector::ByClassOrdinal(class, ord) => detections
            .iter()
            .enumerate()
            .filter(|(_, d)| d.class_label == *class)
            .nth(*ord)
            .map(|(i, _)| vec![i])
            .unwrap_or_default(),
    }
}

/// Filters a confidence-sorted detection list down to the selector's targets.
/// The result preserves input order; an empty result is legal.
pub fn select_targets<'a>(
    detections: &'a [Detection],
    selector: &TargetSelector,
) -> Vec<&'a Detection> {
    select_indices(detections, selector)
        .into_iter()
        .map(|i| &detections[i])
        .collect()
}
