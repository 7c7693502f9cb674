//! Critical visit counts: for each week w, the in-window visit count that
//! best separates members whose streak ended by week w from those who kept
//! going, found by maximizing the gap between the two groups' visit-count
//! CDFs. The per-week counts feed the milestone outcome used downstream.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{week_index, CohortDataset, MemberId, VisitEvent};
use crate::par;
use crate::survival::SurvivalRecord;

/// Number of visits with membership week index <= `w`.
pub fn visit_count_in_window(visits: &[VisitEvent], contract_start: NaiveDate, w: u32) -> u32 {
    visits
        .iter()
        .filter(|v| week_index(v.date, contract_start).map(|wi| wi <= w).unwrap_or(false))
        .count() as u32
}

fn ecdf_at(sorted: &[u32], x: u32) -> f64 {
    // Fraction of values <= x.
    let idx = sorted.partition_point(|&v| v <= x);
    idx as f64 / sorted.len() as f64
}

/// Finds the visit count maximizing `CDF_short(x) - CDF_long(x)` over the
/// union of observed counts plus zero, ties broken toward the smallest count.
/// The one-sided difference matches the "minimum visits to keep going"
/// reading: short-streak members accumulate fewer visits.
pub fn critical_from_counts(short: &[u32], long: &[u32], w: u32) -> Result<(u32, f64)> {
    if short.is_empty() {
        return Err(Error::Estimation(format!(
            "week {w}: no members with streak <= {w}"
        )));
    }
    if long.is_empty() {
        return Err(Error::Estimation(format!(
            "week {w}: no members with streak > {w}"
        )));
    }
    let mut short_sorted = short.to_vec();
    let mut long_sorted = long.to_vec();
    short_sorted.sort_unstable();
    long_sorted.sort_unstable();

    let mut support: Vec<u32> = Vec::with_capacity(short.len() + long.len() + 1);
    support.push(0);
    support.extend_from_slice(&short_sorted);
    support.extend_from_slice(&long_sorted);
    support.sort_unstable();
    support.dedup();

    let mut best_x = support[0];
    let mut best_diff = f64::NEG_INFINITY;
    for &x in &support {
        let diff = ecdf_at(&short_sorted, x) - ecdf_at(&long_sorted, x);
        if diff > best_diff {
            best_diff = diff;
            best_x = x;
        }
    }
    Ok((best_x, best_diff))
}

/// Splits the cohort at week `w` by streak length and returns the critical
/// count and the maximal CDF difference.
pub fn critical_visits(
    cohort: &CohortDataset,
    records: &[SurvivalRecord],
    w: u32,
) -> Result<(u32, f64)> {
    if cohort.is_empty() {
        return Err(Error::Estimation("empty cohort".into()));
    }
    let counts: BTreeMap<&MemberId, u32> = cohort
        .members
        .iter()
        .map(|m| {
            (
                &m.member_id,
                visit_count_in_window(cohort.visits.of(&m.member_id), m.contract_start, w),
            )
        })
        .collect();
    let mut short = Vec::new();
    let mut long = Vec::new();
    for r in records {
        if let Some(&c) = counts.get(&r.member_id) {
            if r.streak_weeks <= w {
                short.push(c);
            } else {
                long.push(c);
            }
        }
    }
    critical_from_counts(&short, &long, w)
}

/// One estimated milestone entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalEntry {
    pub week: u32,
    pub critical_visits: u32,
    pub max_cdf_diff: f64,
}

/// Per-week critical counts over a week range; weeks where either streak
/// group is empty are recorded as skipped rather than estimated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalVisitTable {
    pub entries: Vec<CriticalEntry>,
    pub skipped_weeks: Vec<u32>,
}

impl CriticalVisitTable {
    pub fn get(&self, week: u32) -> Option<&CriticalEntry> {
        self.entries.iter().find(|e| e.week == week)
    }

    /// `week,critical_visits,max_cdf_diff`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("week,critical_visits,max_cdf_diff\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{}", e.week, e.critical_visits, e.max_cdf_diff);
        }
        out
    }
}

/// Estimates critical counts for every week in `weeks` (inclusive range),
/// parallel across weeks.
pub fn critical_visit_table(
    cohort: &CohortDataset,
    records: &[SurvivalRecord],
    weeks: std::ops::RangeInclusive<u32>,
) -> CriticalVisitTable {
    let week_list: Vec<u32> = weeks.collect();
    let results = par::map_range(week_list.len(), |i| {
        let w = week_list[i];
        (w, critical_visits(cohort, records, w))
    });
    let mut entries = Vec::new();
    let mut skipped_weeks = Vec::new();
    for (week, res) in results {
        match res {
            Ok((critical_visits, max_cdf_diff)) => entries.push(CriticalEntry {
                week,
                critical_visits,
                max_cdf_diff,
            }),
            Err(_) => skipped_weeks.push(week),
        }
    }
    CriticalVisitTable {
        entries,
        skipped_weeks,
    }
}

/// Ordinary least squares fit of critical count against week.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MilestoneFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_milestone_line(table: &CriticalVisitTable) -> Result<MilestoneFit> {
    let n = table.entries.len();
    if n < 2 {
        return Err(Error::Estimation(format!(
            "milestone fit needs at least 2 entries, got {n}"
        )));
    }
    let xs: Vec<f64> = table.entries.iter().map(|e| e.week as f64).collect();
    let ys: Vec<f64> = table.entries.iter().map(|e| e.critical_visits as f64).collect();
    let nf = n as f64;
    let mean_x = xs.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    if sxx == 0.0 {
        return Err(Error::Estimation("milestone fit: all weeks identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(MilestoneFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Milestone outcome: did the member log at least the critical count within
/// the first `week` weeks?
pub fn reaches_milestone(
    visits: &[VisitEvent],
    contract_start: NaiveDate,
    entry: &CriticalEntry,
) -> bool {
    visit_count_in_window(visits, contract_start, entry.week) >= entry.critical_visits
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    /// Exhaustive reference: scan every integer between 0 and the max
    /// observed count and take the first maximizer of the CDF difference.
    fn critical_oracle(short: &[u32], long: &[u32]) -> (u32, f64) {
        let hi = short.iter().chain(long).copied().max().unwrap_or(0);
        let cdf = |vals: &[u32], x: u32| {
            vals.iter().filter(|&&v| v <= x).count() as f64 / vals.len() as f64
        };
        let mut best = (0u32, f64::NEG_INFINITY);
        for x in 0..=hi {
            let d = cdf(short, x) - cdf(long, x);
            if d > best.1 {
                best = (x, d);
            }
        }
        best
    }

    #[test]
    fn separated_groups_split_at_three() {
        let (c, diff) = critical_from_counts(&[1, 2, 3], &[5, 6, 7], 6).unwrap();
        assert_eq!(c, 3);
        assert_relative_eq!(diff, 1.0);
    }

    #[test]
    fn identical_groups_tie_break_smallest() {
        let (c, diff) = critical_from_counts(&[4, 5, 6], &[4, 5, 6], 6).unwrap();
        assert_eq!(c, 0);
        assert_relative_eq!(diff, 0.0);
    }

    #[test]
    fn empty_group_error_names_week() {
        let err = critical_from_counts(&[], &[1], 9).unwrap_err();
        assert!(err.to_string().contains("week 9"));
        let err = critical_from_counts(&[1], &[], 9).unwrap_err();
        assert!(err.to_string().contains("week 9"));
    }

    #[test]
    fn matches_exhaustive_scan_on_random_groups() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let short: Vec<u32> = (0..rng.gen_range(1..40)).map(|_| rng.gen_range(0..30)).collect();
            let long: Vec<u32> = (0..rng.gen_range(1..40)).map(|_| rng.gen_range(0..30)).collect();
            let got = critical_from_counts(&short, &long, 6).unwrap();
            let want = critical_oracle(&short, &long);
            assert_eq!(got.0, want.0);
            assert_relative_eq!(got.1, want.1, epsilon = 1e-12);
            assert!(got.1 <= 1.0 + 1e-12 && got.1 >= -1.0 - 1e-12);
        }
    }

    #[test]
    fn relabeling_members_leaves_estimate_unchanged() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut short: Vec<u32> = (0..25).map(|_| rng.gen_range(0..20)).collect();
        let mut long: Vec<u32> = (0..25).map(|_| rng.gen_range(5..25)).collect();
        let base = critical_from_counts(&short, &long, 6).unwrap();
        short.reverse();
        long.rotate_left(7);
        let permuted = critical_from_counts(&short, &long, 6).unwrap();
        assert_eq!(base, permuted);
    }

    #[test]
    fn ols_on_three_points() {
        let table = CriticalVisitTable {
            entries: vec![
                CriticalEntry { week: 6, critical_visits: 9, max_cdf_diff: 0.5 },
                CriticalEntry { week: 10, critical_visits: 15, max_cdf_diff: 0.5 },
                CriticalEntry { week: 20, critical_visits: 35, max_cdf_diff: 0.5 },
            ],
            skipped_weeks: vec![],
        };
        let fit = fit_milestone_line(&table).unwrap();
        // Closed form: slope = 588/312, intercept = -115/39.
        assert_relative_eq!(fit.slope, 49.0 / 26.0, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, -115.0 / 39.0, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 0.996542, epsilon = 1e-6);
    }

    #[test]
    fn perfect_line_is_recovered_exactly() {
        let entries: Vec<CriticalEntry> = (6..=20)
            .map(|w| CriticalEntry {
                week: w,
                critical_visits: 2 * w - 5,
                max_cdf_diff: 0.4,
            })
            .collect();
        let fit = fit_milestone_line(&CriticalVisitTable { entries, skipped_weeks: vec![] }).unwrap();
        assert_relative_eq!(fit.slope, 2.0, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, -5.0, epsilon = 1e-10);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_needs_two_entries() {
        let table = CriticalVisitTable {
            entries: vec![CriticalEntry { week: 6, critical_visits: 9, max_cdf_diff: 0.5 }],
            skipped_weeks: vec![],
        };
        assert!(matches!(fit_milestone_line(&table), Err(Error::Estimation(_))));
    }

    #[test]
    fn residuals_satisfy_normal_equations() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        let entries: Vec<CriticalEntry> = (6..=52)
            .map(|w| CriticalEntry {
                week: w,
                critical_visits: (2 * w).saturating_sub(rng.gen_range(0..8)),
                max_cdf_diff: 0.3,
            })
            .collect();
        let table = CriticalVisitTable { entries, skipped_weeks: vec![] };
        let fit = fit_milestone_line(&table).unwrap();
        let mut dot_x = 0.0;
        let mut dot_1 = 0.0;
        for e in &table.entries {
            let resid = e.critical_visits as f64 - (fit.slope * e.week as f64 + fit.intercept);
            dot_x += resid * e.week as f64;
            dot_1 += resid;
        }
        assert!(dot_x.abs() < 1e-9 * 52.0 * table.entries.len() as f64);
        assert!(dot_1.abs() < 1e-9 * table.entries.len() as f64);
    }

    #[test]
    fn window_count_examples() {
        let start = NaiveDate::from_ymd_opt(2022, 3, 7).unwrap();
        let mk = |day: i64| {
            VisitEvent::new(MemberId::from("m"), start + chrono::Duration::days(day), 9, 10).unwrap()
        };
        // 3 visits in weeks 1-6 (days 0, 10, 40), 2 more in week 7 (days 42, 44).
        let visits = vec![mk(0), mk(10), mk(40), mk(42), mk(44)];
        assert_eq!(visit_count_in_window(&visits, start, 6), 3);
        assert_eq!(visit_count_in_window(&visits, start, 7), 5);
        assert_eq!(visit_count_in_window(&[], start, 6), 0);
    }

    #[test]
    fn table_csv_layout() {
        let table = CriticalVisitTable {
            entries: vec![CriticalEntry { week: 6, critical_visits: 9, max_cdf_diff: 0.25 }],
            skipped_weeks: vec![],
        };
        assert_eq!(table.to_csv(), "week,critical_visits,max_cdf_diff\n6,9,0.25\n");
    }
}
