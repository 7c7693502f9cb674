//! Treatment binarization: intervention counts become None/Low/Moderate/High
//! levels; self-reported ordinals split at a discrete threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    None,
    Low,
    Moderate,
    High,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::None => "none",
            Level::Low => "low",
            Level::Moderate => "moderate",
            Level::High => "high",
        }
    }

    pub fn parse(s: &str) -> Result<Level> {
        match s {
            "none" => Ok(Level::None),
            "low" => Ok(Level::Low),
            "moderate" => Ok(Level::Moderate),
            "high" => Ok(Level::High),
            other => Err(Error::Validation(format!("unknown level '{other}'"))),
        }
    }
}

/// Four-level binarization of nonnegative counts.
///
/// Zero maps to `None`. Positive values are ranked among the strictly
/// positive values only and split into thirds of the percentile scale:
/// rank fraction in (0, 1/3] is Low, (1/3, 2/3] Moderate, (2/3, 1] High.
/// Ties share a rank fraction, so equal counts always land in the same
/// level, and a lone positive value ranks at 1.0 and lands in High.
pub fn binarize_four_level(values: &[u32]) -> Result<Vec<Level>> {
    let mut positives: Vec<u32> = values.iter().copied().filter(|&v| v > 0).collect();
    if positives.is_empty() {
        return Err(Error::Validation(
            "four-level binarization needs at least one positive value".into(),
        ));
    }
    positives.sort_unstable();
    let n = positives.len();
    Ok(values
        .iter()
        .map(|&v| {
            if v == 0 {
                return Level::None;
            }
            // Count of positives <= v; exact thirds via integer arithmetic.
            let le = positives.partition_point(|&p| p <= v);
            if 3 * le <= n {
                Level::Low
            } else if 3 * le <= 2 * n {
                Level::Moderate
            } else {
                Level::High
            }
        })
        .collect())
}

/// Threshold binarization for an ordinal variable with `n_levels` levels:
/// values `<= t` are control, values `> t` treated. `t` must leave at least
/// one level on each side.
pub fn binarize_threshold(values: &[u8], t: u8, n_levels: u8) -> Result<Vec<bool>> {
    if n_levels < 2 || t > n_levels - 2 {
        return Err(Error::Validation(format!(
            "threshold {t} invalid for a {n_levels}-level variable"
        )));
    }
    for &v in values {
        if v >= n_levels {
            return Err(Error::Validation(format!(
                "value {v} outside 0-{}",
                n_levels - 1
            )));
        }
    }
    Ok(values.iter().map(|&v| v > t).collect())
}
