//! Domain types shared by every analysis stage: member profiles, visit events,
//! cohort assembly, and membership-relative week indexing.
//!
//! All types are immutable after construction and safe to share read-only
//! across parallel workers.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque member identifier. Ordering is lexicographic and used wherever a
/// stable member order is required.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MemberId(pub String);

impl fmt::Display for MemberId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MemberId {
    fn from(s: &str) -> Self {
        MemberId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

/// One member's contract-level profile. Self-reported fields are `None` when
/// the member never answered; they are never imputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberProfile {
    pub member_id: MemberId,
    pub age: u32,
    pub gender: Gender,
    pub bmi: f64,
    pub contract_start: NaiveDate,
    pub main_club: String,
    pub membership_category: String,
    /// Self-reported prior experience, 0-3.
    pub experience_level: Option<u8>,
    /// Self-reported form level, 0-2.
    pub form_level: Option<u8>,
    /// Self-reported expected visit frequency, 0-2.
    pub est_visit_frequency: Option<u8>,
    pub contract_type: String,
    pub paid: bool,
}

impl MemberProfile {
    /// True when every self-reported question was answered.
    pub fn complete_responder(&self) -> bool {
        self.experience_level.is_some()
            && self.form_level.is_some()
            && self.est_visit_frequency.is_some()
    }
}

/// A single timestamped gym visit. `entry_hour <= exit_hour`, both 0-23.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitEvent {
    pub member_id: MemberId,
    pub date: NaiveDate,
    pub entry_hour: u8,
    pub exit_hour: u8,
}

impl VisitEvent {
    pub fn new(member_id: MemberId, date: NaiveDate, entry_hour: u8, exit_hour: u8) -> Result<Self> {
        if entry_hour > 23 || exit_hour > 23 {
            return Err(Error::Domain(format!(
                "visit hours must be 0-23, got entry={entry_hour} exit={exit_hour}"
            )));
        }
        if entry_hour > exit_hour {
            return Err(Error::Domain(format!(
                "entry_hour {entry_hour} exceeds exit_hour {exit_hour} for member {member_id}"
            )));
        }
        Ok(VisitEvent {
            member_id,
            date,
            entry_hour,
            exit_hour,
        })
    }
}

/// Visits grouped per member, each member's list sorted by date then entry hour.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VisitLog {
    by_member: BTreeMap<MemberId, Vec<VisitEvent>>,
}

impl VisitLog {
    pub fn from_events(events: Vec<VisitEvent>) -> Self {
        let mut by_member: BTreeMap<MemberId, Vec<VisitEvent>> = BTreeMap::new();
        for ev in events {
            by_member.entry(ev.member_id.clone()).or_default().push(ev);
        }
        for visits in by_member.values_mut() {
            visits.sort_by(|a, b| (a.date, a.entry_hour).cmp(&(b.date, b.entry_hour)));
        }
        VisitLog { by_member }
    }

    pub fn of(&self, member: &MemberId) -> &[VisitEvent] {
        self.by_member.get(member).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn members(&self) -> impl Iterator<Item = &MemberId> {
        self.by_member.keys()
    }

    pub fn iter_all(&self) -> impl Iterator<Item = &VisitEvent> {
        self.by_member.values().flatten()
    }

    pub fn total_visits(&self) -> usize {
        self.by_member.values().map(Vec::len).sum()
    }
}

/// Counts of each intervention a member received in their first six weeks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionCounts {
    pub group_lessons: u32,
    pub pt_sessions: u32,
    pub invitation_credits: u32,
    pub distinct_clubs: u32,
    pub distinct_group_lessons: u32,
}

/// The assembled analysis cohort: profiles, their visits, and intervention
/// counts, with every visit guaranteed to reference a known member.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CohortDataset {
    pub members: Vec<MemberProfile>,
    pub visits: VisitLog,
    pub interventions: BTreeMap<MemberId, InterventionCounts>,
}

impl CohortDataset {
    /// Builds a cohort, checking referential integrity.
    pub fn new(
        members: Vec<MemberProfile>,
        visits: VisitLog,
        interventions: BTreeMap<MemberId, InterventionCounts>,
    ) -> Result<Self> {
        let ids: std::collections::BTreeSet<&MemberId> =
            members.iter().map(|m| &m.member_id).collect();
        if ids.len() != members.len() {
            return Err(Error::Validation("duplicate member_id in cohort".into()));
        }
        for id in visits.members() {
            if !ids.contains(id) {
                return Err(Error::Validation(format!(
                    "visit references unknown member {id}"
                )));
            }
        }
        for id in interventions.keys() {
            if !ids.contains(id) {
                return Err(Error::Validation(format!(
                    "intervention counts reference unknown member {id}"
                )));
            }
        }
        Ok(CohortDataset {
            members,
            visits,
            interventions,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, id: &MemberId) -> Option<&MemberProfile> {
        self.members.iter().find(|m| &m.member_id == id)
    }

    pub fn interventions_of(&self, id: &MemberId) -> InterventionCounts {
        self.interventions.get(id).copied().unwrap_or_default()
    }
}

/// Membership-relative week index: week 1 covers days 0-6 after contract
/// start, week 2 days 7-13, and so on.
pub fn week_index(date: NaiveDate, contract_start: NaiveDate) -> Result<u32> {
    let days = (date - contract_start).num_days();
    if days < 0 {
        return Err(Error::Domain(format!(
            "date {date} precedes contract start {contract_start}"
        )));
    }
    Ok(1 + (days / 7) as u32)
}

/// Declarative cohort admission rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortRules {
    /// Keep only members whose contract type equals this value (case-sensitive).
    pub contract_type: Option<String>,
    /// Keep only members on a paid contract.
    pub paid_only: bool,
}

impl Default for CohortRules {
    fn default() -> Self {
        CohortRules {
            contract_type: Some("annual".to_string()),
            paid_only: true,
        }
    }
}

impl CohortRules {
    pub fn admits(&self, m: &MemberProfile) -> bool {
        if let Some(ct) = &self.contract_type {
            if &m.contract_type != ct {
                return false;
            }
        }
        !self.paid_only || m.paid
    }
}

/// Filters members by the rules and keeps exactly the retained members'
/// visits and intervention counts. An empty result is valid.
pub fn filter_cohort(
    members: Vec<MemberProfile>,
    visits: VisitLog,
    interventions: BTreeMap<MemberId, InterventionCounts>,
    rules: &CohortRules,
) -> Result<CohortDataset> {
    let members: Vec<MemberProfile> = members.into_iter().filter(|m| rules.admits(m)).collect();
    let kept: std::collections::BTreeSet<MemberId> =
        members.iter().map(|m| m.member_id.clone()).collect();
    let events: Vec<VisitEvent> = visits
        .by_member
        .into_iter()
        .filter(|(id, _)| kept.contains(id))
        .flat_map(|(_, evs)| evs)
        .collect();
    let interventions = interventions
        .into_iter()
        .filter(|(id, _)| kept.contains(id))
        .collect();
    CohortDataset::new(members, VisitLog::from_events(events), interventions)
}
