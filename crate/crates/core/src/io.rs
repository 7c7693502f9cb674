//! CSV ingestion and re-serialization for the three cohort input files.
//!
//! Parsing is field-by-field so errors can name the offending row and column.
//! The writers emit the same canonical layout the parsers accept, so a
//! write -> load -> write cycle is byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::model::{Gender, InterventionCounts, MemberId, MemberProfile, VisitEvent, VisitLog};

pub const MEMBERS_HEADER: &str = "member_id,age,gender,bmi,contract_start,main_club,membership_category,experience_level,form_level,est_visit_frequency,contract_type,paid";
pub const VISITS_HEADER: &str = "member_id,date,entry_hour,exit_hour";
pub const INTERVENTIONS_HEADER: &str = "member_id,group_lessons_6w,pt_sessions_6w,invitation_credits_6w,distinct_clubs_6w,distinct_group_lessons_6w";

struct RowReader<'a> {
    path: &'a str,
    row: usize,
    header: &'a [&'a str],
    record: &'a csv::StringRecord,
}

impl<'a> RowReader<'a> {
    fn cell(&self, column: &str) -> Result<&'a str> {
        let idx = self
            .header
            .iter()
            .position(|h| *h == column)
            .ok_or_else(|| Error::Validation(format!("{}: missing column '{column}'", self.path)))?;
        self.record.get(idx).ok_or_else(|| Error::Parse {
            path: self.path.to_string(),
            row: self.row,
            column: column.to_string(),
            message: "row has too few fields".to_string(),
        })
    }

    fn parse<T: FromStr>(&self, column: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.cell(column)?;
        raw.parse::<T>().map_err(|e| Error::Parse {
            path: self.path.to_string(),
            row: self.row,
            column: column.to_string(),
            message: format!("cannot parse '{raw}': {e}"),
        })
    }

    fn parse_optional<T: FromStr>(&self, column: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.cell(column)?;
        if raw.is_empty() {
            Ok(None)
        } else {
            self.parse(column).map(Some)
        }
    }

    fn err(&self, column: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            row: self.row,
            column: column.to_string(),
            message: message.into(),
        }
    }
}

fn read_rows<T>(
    path: &Path,
    expected_header: &str,
    mut parse_row: impl FnMut(&RowReader) -> Result<T>,
) -> Result<Vec<T>> {
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let expected: Vec<&str> = expected_header.split(',').collect();
    for col in &expected {
        if !header.iter().any(|h| h == col) {
            return Err(Error::Validation(format!(
                "{path_str}: missing column '{col}' (expected header: {expected_header})"
            )));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = RowReader {
            path: &path_str,
            row: i + 1,
            header: &header_refs,
            record: &record,
        };
        out.push(parse_row(&row)?);
    }
    Ok(out)
}

fn parse_gender(row: &RowReader) -> Result<Gender> {
    match row.cell("gender")? {
        "female" => Ok(Gender::Female),
        "male" => Ok(Gender::Male),
        other => Err(row.err("gender", format!("expected 'female' or 'male', got '{other}'"))),
    }
}

fn parse_bool(row: &RowReader, column: &str) -> Result<bool> {
    match row.cell(column)? {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(row.err(column, format!("expected true/false, got '{other}'"))),
    }
}

fn check_range(row: &RowReader, column: &str, value: Option<u8>, max: u8) -> Result<Option<u8>> {
    match value {
        Some(v) if v > max => Err(row.err(column, format!("value {v} outside 0-{max}"))),
        other => Ok(other),
    }
}

/// Loads `members.csv`. One profile per row; empty optional cells become `None`.
pub fn load_members(path: &Path) -> Result<Vec<MemberProfile>> {
    let members = read_rows(path, MEMBERS_HEADER, |row| {
        let member_id = MemberId(row.cell("member_id")?.to_string());
        let age: u32 = row.parse("age")?;
        if age < 14 {
            return Err(row.err("age", format!("age {age} below minimum cohort age 14")));
        }
        let bmi: f64 = row.parse("bmi")?;
        if !(bmi > 0.0) {
            return Err(row.err("bmi", format!("bmi must be positive, got {bmi}")));
        }
        Ok(MemberProfile {
            member_id,
            age,
            gender: parse_gender(row)?,
            bmi,
            contract_start: row.parse::<NaiveDate>("contract_start")?,
            main_club: row.cell("main_club")?.to_string(),
            membership_category: row.cell("membership_category")?.to_string(),
            experience_level: check_range(row, "experience_level", row.parse_optional("experience_level")?, 3)?,
            form_level: check_range(row, "form_level", row.parse_optional("form_level")?, 2)?,
            est_visit_frequency: check_range(row, "est_visit_frequency", row.parse_optional("est_visit_frequency")?, 2)?,
            contract_type: row.cell("contract_type")?.to_string(),
            paid: parse_bool(row, "paid")?,
        })
    })?;
    let mut seen = std::collections::BTreeSet::new();
    for m in &members {
        if !seen.insert(&m.member_id) {
            return Err(Error::Validation(format!(
                "duplicate member_id '{}' in {}",
                m.member_id,
                path.display()
            )));
        }
    }
    Ok(members)
}

/// Loads `visits.csv`.
pub fn load_visits(path: &Path) -> Result<VisitLog> {
    let events = read_rows(path, VISITS_HEADER, |row| {
        VisitEvent::new(
            MemberId(row.cell("member_id")?.to_string()),
            row.parse::<NaiveDate>("date")?,
            row.parse("entry_hour")?,
            row.parse("exit_hour")?,
        )
    })?;
    Ok(VisitLog::from_events(events))
}

/// Loads `interventions.csv` into a per-member count map.
pub fn load_interventions(path: &Path) -> Result<BTreeMap<MemberId, InterventionCounts>> {
    let rows = read_rows(path, INTERVENTIONS_HEADER, |row| {
        Ok((
            MemberId(row.cell("member_id")?.to_string()),
            InterventionCounts {
                group_lessons: row.parse("group_lessons_6w")?,
                pt_sessions: row.parse("pt_sessions_6w")?,
                invitation_credits: row.parse("invitation_credits_6w")?,
                distinct_clubs: row.parse("distinct_clubs_6w")?,
                distinct_group_lessons: row.parse("distinct_group_lessons_6w")?,
            },
        ))
    })?;
    let mut map = BTreeMap::new();
    for (id, counts) in rows {
        if map.insert(id.clone(), counts).is_some() {
            return Err(Error::Validation(format!(
                "duplicate member_id '{id}' in {}",
                path.display()
            )));
        }
    }
    Ok(map)
}

fn opt_cell(v: Option<u8>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Serializes members in the canonical column order.
pub fn members_to_csv(members: &[MemberProfile]) -> String {
    let mut out = String::from(MEMBERS_HEADER);
    out.push('\n');
    for m in members {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            m.member_id,
            m.age,
            m.gender.as_str(),
            m.bmi,
            m.contract_start.format("%Y-%m-%d"),
            m.main_club,
            m.membership_category,
            opt_cell(m.experience_level),
            opt_cell(m.form_level),
            opt_cell(m.est_visit_frequency),
            m.contract_type,
            m.paid,
        );
    }
    out
}

/// Serializes a visit log grouped by member id, visits in date order.
pub fn visits_to_csv(visits: &VisitLog) -> String {
    let mut out = String::from(VISITS_HEADER);
    out.push('\n');
    for ev in visits.iter_all() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            ev.member_id,
            ev.date.format("%Y-%m-%d"),
            ev.entry_hour,
            ev.exit_hour
        );
    }
    out
}

/// Serializes intervention counts in member-id order.
pub fn interventions_to_csv(interventions: &BTreeMap<MemberId, InterventionCounts>) -> String {
    let mut out = String::from(INTERVENTIONS_HEADER);
    out.push('\n');
    for (id, c) in interventions {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            id, c.group_lessons, c.pt_sessions, c.invitation_credits, c.distinct_clubs, c.distinct_group_lessons
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const VALID_MEMBERS: &str = "member_id,age,gender,bmi,contract_start,main_club,membership_category,experience_level,form_level,est_visit_frequency,contract_type,paid\n\
m1,34,female,22.4,2022-03-07,club_a,standard,2,1,2,annual,true\n\
m2,19,male,24.1,2022-05-02,club_b,premium,,,,annual,true\n\
m3,51,female,27.9,2022-07-18,club_a,standard,0,,1,annual,false\n";

    #[test]
    fn loads_three_valid_rows() {
        let f = write_temp(VALID_MEMBERS);
        let members = load_members(f.path()).unwrap();
        assert_eq!(members.len(), 3);
        assert_eq!(members[0].experience_level, Some(2));
    }

    #[test]
    fn malformed_age_names_row_and_column() {
        let csv = VALID_MEMBERS.replace("m2,19", "m2,abc");
        let f = write_temp(&csv);
        let err = load_members(f.path()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "age");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_form_level_is_absent() {
        let f = write_temp(VALID_MEMBERS);
        let members = load_members(f.path()).unwrap();
        assert_eq!(members[1].form_level, None);
        assert_eq!(members[2].form_level, None);
        assert_eq!(members[0].form_level, Some(1));
    }

    #[test]
    fn duplicate_member_id_is_rejected() {
        let csv = VALID_MEMBERS.replace("m3,", "m1,");
        let f = write_temp(&csv);
        assert!(matches!(
            load_members(f.path()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn canonical_csv_round_trips_byte_identical() {
        let f = write_temp(VALID_MEMBERS);
        let members = load_members(f.path()).unwrap();
        let first = members_to_csv(&members);
        let f2 = write_temp(&first);
        let reloaded = load_members(f2.path()).unwrap();
        assert_eq!(members_to_csv(&reloaded), first);
        assert_eq!(first, VALID_MEMBERS);
    }

    #[test]
    fn visits_round_trip() {
        let csv = "member_id,date,entry_hour,exit_hour\nm1,2022-03-08,9,10\nm1,2022-03-10,18,19\nm2,2022-05-03,12,12\n";
        let f = write_temp(csv);
        let log = load_visits(f.path()).unwrap();
        assert_eq!(log.total_visits(), 3);
        assert_eq!(visits_to_csv(&log), csv);
    }

    #[test]
    fn visit_entry_after_exit_is_domain_error() {
        let csv = "member_id,date,entry_hour,exit_hour\nm1,2022-03-08,11,10\n";
        let f = write_temp(csv);
        assert!(matches!(load_visits(f.path()), Err(Error::Domain(_))));
    }

    #[test]
    fn interventions_round_trip() {
        let csv = "member_id,group_lessons_6w,pt_sessions_6w,invitation_credits_6w,distinct_clubs_6w,distinct_group_lessons_6w\nm1,3,0,1,2,2\nm2,0,0,0,1,0\n";
        let f = write_temp(csv);
        let map = load_interventions(f.path()).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(interventions_to_csv(&map), csv);
    }
}
