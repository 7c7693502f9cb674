//! Visit vectorization: each member's visits inside an observation window
//! become a 7 x 18 day-of-week by hour-bin count grid, flattened to the
//! 126-wide rows that feed the factorization stage.

use chrono::{Datelike, NaiveDate};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{week_index, CohortDataset, MemberId, VisitEvent};
use crate::par;

/// Hour bins run 6:00-24:00, one per hour.
pub const FIRST_HOUR: u8 = 6;
pub const HOUR_BINS: usize = 18;
pub const DAYS: usize = 7;
pub const VECTOR_LEN: usize = DAYS * HOUR_BINS;

/// Exclusive upper hour for weekday visits; clubs close at 23.
pub const WEEKDAY_HOUR_CAP: u8 = 23;
/// Exclusive upper hour for weekend visits; clubs close at 20.
pub const WEEKEND_HOUR_CAP: u8 = 20;

/// Day-of-week with Monday = 0; weekend is days 5 and 6.
pub fn day_of_week(date: NaiveDate) -> usize {
    date.weekday().num_days_from_monday() as usize
}

pub fn is_weekend_day(day: usize) -> bool {
    day >= 5
}

/// Flattened index of (day, hour) with hour in 6..24.
pub fn bin_index(day: usize, hour: u8) -> usize {
    debug_assert!(day < DAYS && (FIRST_HOUR..24).contains(&hour));
    day * HOUR_BINS + (hour - FIRST_HOUR) as usize
}

/// Column name for a flattened bin, e.g. `d0_h06`.
pub fn bin_name(flat: usize) -> String {
    let day = flat / HOUR_BINS;
    let hour = FIRST_HOUR as usize + flat % HOUR_BINS;
    format!("d{day}_h{hour:02}")
}

/// One member's day-by-hour visit counts inside a window of membership weeks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitVector {
    pub member_id: MemberId,
    pub bins: Vec<u32>,
    pub window_weeks: u32,
}

impl VisitVector {
    pub fn total(&self) -> u64 {
        self.bins.iter().map(|&c| c as u64).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.bins.iter().all(|&c| c == 0)
    }
}

/// Accumulates one member's visits into a visit vector.
///
/// A visit increments every hourly bin from its entry hour up to (exclusive)
/// `min(exit + 1, cap)`, where the cap is 20 on weekends and 23 on weekdays;
/// hours below 6 are clipped out. Visits outside the window are ignored.
pub fn build_visit_vector(
    visits: &[VisitEvent],
    contract_start: NaiveDate,
    window_weeks: u32,
) -> Result<VisitVector> {
    if window_weeks == 0 {
        return Err(Error::Domain("window_weeks must be >= 1".into()));
    }
    let member_id = visits
        .first()
        .map(|v| v.member_id.clone())
        .unwrap_or_else(|| MemberId(String::new()));
    let mut bins = vec![0u32; VECTOR_LEN];
    for visit in visits {
        if visit.entry_hour > visit.exit_hour {
            return Err(Error::Domain(format!(
                "entry_hour {} exceeds exit_hour {} for member {}",
                visit.entry_hour, visit.exit_hour, visit.member_id
            )));
        }
        if week_index(visit.date, contract_start)? > window_weeks {
            continue;
        }
        let day = day_of_week(visit.date);
        let cap = if is_weekend_day(day) {
            WEEKEND_HOUR_CAP
        } else {
            WEEKDAY_HOUR_CAP
        };
        let start = visit.entry_hour.max(FIRST_HOUR);
        let end = (visit.exit_hour + 1).min(cap);
        for hour in start..end {
            bins[bin_index(day, hour)] += 1;
        }
    }
    Ok(VisitVector {
        member_id,
        bins,
        window_weeks,
    })
}

/// Stacked visit vectors: one row per cohort member in member-id order.
#[derive(Debug, Clone)]
pub struct VisitMatrix {
    pub row_ids: Vec<MemberId>,
    pub rows: Vec<Vec<u32>>,
    pub window_weeks: u32,
}

impl VisitMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Members whose row is all zero (no visits inside the window).
    pub fn zero_row_ids(&self) -> Vec<MemberId> {
        self.row_ids
            .iter()
            .zip(&self.rows)
            .filter(|(_, row)| row.iter().all(|&c| c == 0))
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Dense nonnegative float view for factorization.
    pub fn to_array(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.rows.len(), VECTOR_LEN));
        for (i, row) in self.rows.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                a[[i, j]] = c as f64;
            }
        }
        a
    }

    /// Like [`to_array`](Self::to_array) but each row is scaled to unit sum,
    /// removing visit-volume differences between members. Zero rows stay zero.
    pub fn to_array_normalized(&self) -> Array2<f64> {
        let mut a = self.to_array();
        for mut row in a.rows_mut() {
            let total = row.sum();
            if total > 0.0 {
                row.mapv_inplace(|v| v / total);
            }
        }
        a
    }

    /// CSV dump: member_id column followed by the 126 named bins.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("member_id");
        for j in 0..VECTOR_LEN {
            out.push(',');
            out.push_str(&bin_name(j));
        }
        out.push('\n');
        for (id, row) in self.row_ids.iter().zip(&self.rows) {
            out.push_str(&id.0);
            for &c in row {
                out.push(',');
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the member x bin count matrix for a window. Members with no
/// in-window visits keep their (all-zero) row; `zero_row_ids` flags them.
pub fn build_matrix(cohort: &CohortDataset, window_weeks: u32) -> Result<VisitMatrix> {
    if window_weeks == 0 {
        return Err(Error::Domain("window_weeks must be >= 1".into()));
    }
    let vectors: Vec<Result<VisitVector>> = par::map_slice(&cohort.members, |m| {
        build_visit_vector(cohort.visits.of(&m.member_id), m.contract_start, window_weeks)
    });
    let mut row_ids = Vec::with_capacity(cohort.members.len());
    let mut rows = Vec::with_capacity(cohort.members.len());
    for (member, vector) in cohort.members.iter().zip(vectors) {
        row_ids.push(member.member_id.clone());
        rows.push(vector?.bins);
    }
    Ok(VisitMatrix {
        row_ids,
        rows,
        window_weeks,
    })
}
