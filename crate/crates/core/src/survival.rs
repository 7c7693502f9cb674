//! Survival-streak metric: consecutive membership weeks with at least one
//! visit, tolerating isolated absent weeks (gap weeks). A streak breaks at
//! the first run of more than `gap_tolerance` consecutive absent weeks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{week_index, MemberId, VisitEvent};
use crate::par;

/// Annual contracts span exactly 52 membership weeks.
pub const CONTRACT_WEEKS: usize = 52;

/// Per-week attendance booleans over the 52-week contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeeklyAttendance {
    pub member_id: MemberId,
    /// attended[w - 1] is true when week w had at least one visit.
    pub attended: Vec<bool>,
}

impl WeeklyAttendance {
    pub fn from_bools(member_id: MemberId, attended: Vec<bool>) -> Result<Self> {
        if attended.len() != CONTRACT_WEEKS {
            return Err(Error::Validation(format!(
                "attendance series must cover {CONTRACT_WEEKS} weeks, got {}",
                attended.len()
            )));
        }
        Ok(WeeklyAttendance {
            member_id,
            attended,
        })
    }

    pub fn week(&self, w: u32) -> bool {
        self.attended[(w - 1) as usize]
    }
}

/// Marks each membership week that saw at least one visit. Visits beyond
/// week 52 are outside the contract and ignored.
pub fn weekly_attendance(
    member_id: MemberId,
    visits: &[VisitEvent],
    contract_start: NaiveDate,
) -> Result<WeeklyAttendance> {
    let mut attended = vec![false; CONTRACT_WEEKS];
    for v in visits {
        let w = week_index(v.date, contract_start)? as usize;
        if (1..=CONTRACT_WEEKS).contains(&w) {
            attended[w - 1] = true;
        }
    }
    Ok(WeeklyAttendance {
        member_id,
        attended,
    })
}

/// Outcome of the streak scan for one member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub member_id: MemberId,
    /// Index of the last attended week before the streak broke (0 = no streak).
    pub streak_weeks: u32,
    pub gaps_used: u32,
    /// Absent weeks inside [1, streak_weeks]; the streak's final week is
    /// always attended, so these never include it.
    pub gap_week_indices: Vec<u32>,
}

/// Scans attendance from week 1. The streak ends immediately before the first
/// run of `gap_tolerance + 1` consecutive absent weeks; its length is the last
/// attended week before that run (a trailing shorter absence does not extend
/// it). Absent weeks inside the streak are the consumed gap weeks.
pub fn survival_streak(att: &WeeklyAttendance, gap_tolerance: u32) -> SurvivalRecord {
    let break_run = gap_tolerance as usize + 1;
    let mut last_attended: u32 = 0;
    let mut absent_run = 0usize;
    for (i, &present) in att.attended.iter().enumerate() {
        if present {
            last_attended = (i + 1) as u32;
            absent_run = 0;
        } else {
            absent_run += 1;
            if absent_run >= break_run {
                break;
            }
        }
    }
    let streak_weeks = last_attended;
    let gap_week_indices: Vec<u32> = (1..=streak_weeks)
        .filter(|&w| !att.attended[(w - 1) as usize])
        .collect();
    SurvivalRecord {
        member_id: att.member_id.clone(),
        gaps_used: gap_week_indices.len() as u32,
        gap_week_indices,
        streak_weeks,
    }
}

/// Attendance plus streak scan for a whole cohort, parallel over members.
pub fn survival_records(
    attendance: &[WeeklyAttendance],
    gap_tolerance: u32,
) -> Vec<SurvivalRecord> {
    par::map_slice(attendance, |att| survival_streak(att, gap_tolerance))
}

/// `member_id,streak_weeks,gaps_used,gap_week_indices` with indices
/// semicolon-separated.
pub fn records_to_csv(records: &[SurvivalRecord]) -> String {
    let mut out = String::from("member_id,streak_weeks,gaps_used,gap_week_indices\n");
    for r in records {
        let gaps = r
            .gap_week_indices
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(out, "{},{},{},{}", r.member_id, r.streak_weeks, r.gaps_used, gaps);
    }
    out
}

/// One empirical survival CDF curve for a labeled member group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalCdf {
    pub group: String,
    pub n: usize,
    /// (streak length, cumulative fraction with streak <= length), sorted.
    pub points: Vec<(u32, f64)>,
    /// Fraction with streak_weeks >= 6.
    pub surviving_week6: f64,
    /// Fraction with streak_weeks >= 17.
    pub surviving_week17: f64,
}

fn empirical_cdf_u32(mut values: Vec<u32>) -> Vec<(u32, f64)> {
    values.sort_unstable();
    let n = values.len() as f64;
    let mut points: Vec<(u32, f64)> = Vec::new();
    for (i, v) in values.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == *v => last.1 = p,
            _ => points.push((*v, p)),
        }
    }
    points
}

/// Per-group empirical CDFs of streak length. `group_of` must label every
/// member; an unlabeled member is a validation error.
pub fn survival_cdf(
    records: &[SurvivalRecord],
    group_of: impl Fn(&MemberId) -> Option<String>,
) -> Result<Vec<SurvivalCdf>> {
    let mut groups: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for r in records {
        let label = group_of(&r.member_id).ok_or_else(|| {
            Error::Validation(format!("no grouping key for member {}", r.member_id))
        })?;
        groups.entry(label).or_default().push(r.streak_weeks);
    }
    Ok(groups
        .into_iter()
        .map(|(group, streaks)| {
            let n = streaks.len();
            let surviving_week6 = streaks.iter().filter(|&&s| s >= 6).count() as f64 / n as f64;
            let surviving_week17 = streaks.iter().filter(|&&s| s >= 17).count() as f64 / n as f64;
            SurvivalCdf {
                group,
                n,
                points: empirical_cdf_u32(streaks),
                surviving_week6,
                surviving_week17,
            }
        })
        .collect())
}

/// Inclusive streak-length bins used to stratify gap-position analysis.
pub const DEFAULT_SURVIVAL_BINS: [(u32, u32); 4] = [(1, 5), (6, 16), (17, 29), (30, 52)];

/// Number of relative-position buckets in the gap-position distribution.
pub const POSITION_BUCKETS: usize = 10;

/// Gap usage inside one streak-length bin, by relative position in the streak.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapPositionDist {
    pub bin_lo: u32,
    pub bin_hi: u32,
    pub members: usize,
    /// Gap counts by decile of (gap week / streak length].
    pub counts: Vec<u64>,
    /// Counts normalized to fractions of the bin's total gaps (all zero when
    /// the bin used no gaps).
    pub fractions: Vec<f64>,
}

/// Aggregate gap-week statistics for a cohort.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapUsageStats {
    /// Gap weeks observed at each membership week 1..=52.
    pub gaps_per_week: Vec<u64>,
    /// Gap position distribution per survival bin.
    pub by_survival_bin: Vec<GapPositionDist>,
    /// (streak_weeks, gaps_used) -> member count.
    pub joint: BTreeMap<(u32, u32), u64>,
}

pub fn gap_usage_stats(records: &[SurvivalRecord], bins: &[(u32, u32)]) -> GapUsageStats {
    let mut gaps_per_week = vec![0u64; CONTRACT_WEEKS];
    let mut joint: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut by_survival_bin: Vec<GapPositionDist> = bins
        .iter()
        .map(|&(bin_lo, bin_hi)| GapPositionDist {
            bin_lo,
            bin_hi,
            members: 0,
            counts: vec![0; POSITION_BUCKETS],
            fractions: vec![0.0; POSITION_BUCKETS],
        })
        .collect();

    for r in records {
        *joint.entry((r.streak_weeks, r.gaps_used)).or_default() += 1;
        for &w in &r.gap_week_indices {
            gaps_per_week[(w - 1) as usize] += 1;
        }
        if r.streak_weeks == 0 {
            continue;
        }
        if let Some(bin) = by_survival_bin
            .iter_mut()
            .find(|b| (b.bin_lo..=b.bin_hi).contains(&r.streak_weeks))
        {
            bin.members += 1;
            for &w in &r.gap_week_indices {
                let rel = w as f64 / r.streak_weeks as f64;
                let bucket = ((rel * POSITION_BUCKETS as f64).ceil() as usize)
                    .clamp(1, POSITION_BUCKETS)
                    - 1;
                bin.counts[bucket] += 1;
            }
        }
    }
    for bin in &mut by_survival_bin {
        let total: u64 = bin.counts.iter().sum();
        if total > 0 {
            for (f, &c) in bin.fractions.iter_mut().zip(&bin.counts) {
                *f = c as f64 / total as f64;
            }
        }
    }
    GapUsageStats {
        gaps_per_week,
        by_survival_bin,
        joint,
    }
}

/// Empirical CDF of absence-run lengths that are flanked by attended weeks on
/// both sides, pooled over the whole cohort.
pub fn intermediate_gap_cdf(attendance: &[WeeklyAttendance]) -> Vec<(u32, f64)> {
    let mut lengths: Vec<u32> = Vec::new();
    for att in attendance {
        let mut run = 0u32;
        let mut seen_attended = false;
        for &present in &att.attended {
            if present {
                if seen_attended && run > 0 {
                    lengths.push(run);
                }
                seen_attended = true;
                run = 0;
            } else if seen_attended {
                run += 1;
            }
        }
        // A trailing absence run has no attended week after it: not intermediate.
    }
    empirical_cdf_u32(lengths)
}
