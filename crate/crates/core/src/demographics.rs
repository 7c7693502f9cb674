//! Cluster-level demographic deviations: how much more or less likely a
//! demographic group is inside a cluster than in the cohort overall,
//! measured as P(D|C) / P(D) - 1.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MemberId, MemberProfile};

/// Inclusive age bands; the last band is open-ended.
pub const DEFAULT_AGE_BANDS: [(u32, Option<u32>); 5] = [
    (14, Some(20)),
    (21, Some(27)),
    (28, Some(34)),
    (35, Some(48)),
    (49, None),
];

/// How to partition the cohort into demographic groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Demographic {
    Gender,
    AgeBands(Vec<(u32, Option<u32>)>),
}

impl Demographic {
    pub fn default_age_bands() -> Self {
        Demographic::AgeBands(DEFAULT_AGE_BANDS.to_vec())
    }

    fn group_of(&self, m: &MemberProfile) -> Result<String> {
        match self {
            Demographic::Gender => Ok(m.gender.as_str().to_string()),
            Demographic::AgeBands(bands) => bands
                .iter()
                .find(|(lo, hi)| m.age >= *lo && hi.map_or(true, |h| m.age <= h))
                .map(|(lo, hi)| match hi {
                    Some(h) => format!("{lo}-{h}"),
                    None => format!("{lo}+"),
                })
                .ok_or_else(|| {
                    Error::Validation(format!(
                        "age {} of member {} falls outside every band",
                        m.age, m.member_id
                    ))
                }),
        }
    }

    /// Group labels in reporting order.
    pub fn group_labels(&self) -> Vec<String> {
        match self {
            Demographic::Gender => vec!["female".into(), "male".into()],
            Demographic::AgeBands(bands) => bands
                .iter()
                .map(|(lo, hi)| match hi {
                    Some(h) => format!("{lo}-{h}"),
                    None => format!("{lo}+"),
                })
                .collect(),
        }
    }
}

/// One (cluster, group) cell of the deviation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub cluster: usize,
    pub group: String,
    pub p_conditional: f64,
    pub p_marginal: f64,
    /// `None` when the group has zero marginal mass (ratio undefined).
    pub deviation: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationReport {
    pub rows: Vec<DeviationRow>,
    pub cluster_sizes: Vec<usize>,
    pub n_members: usize,
}

impl DeviationReport {
    /// `cluster,group,p_conditional,p_marginal,deviation` (deviation empty when undefined).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cluster,group,p_conditional,p_marginal,deviation\n");
        for r in &self.rows {
            let dev = r.deviation.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.cluster, r.group, r.p_conditional, r.p_marginal, dev
            );
        }
        out
    }
}

/// Computes per-cluster deviations of a partitioning demographic using hard
/// cluster labels. `labels` must cover every member.
pub fn deviation(
    members: &[MemberProfile],
    labels: &BTreeMap<MemberId, usize>,
    k: usize,
    demographic: &Demographic,
) -> Result<DeviationReport> {
    if members.is_empty() {
        return Err(Error::Validation("deviation over empty cohort".into()));
    }
    let group_labels = demographic.group_labels();
    let group_index: BTreeMap<&str, usize> = group_labels
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i))
        .collect();

    let n = members.len();
    let mut marginal = vec![0usize; group_labels.len()];
    let mut joint = vec![vec![0usize; group_labels.len()]; k];
    let mut cluster_sizes = vec![0usize; k];
    for m in members {
        let cluster = *labels.get(&m.member_id).ok_or_else(|| {
            Error::Validation(format!("no cluster label for member {}", m.member_id))
        })?;
        if cluster >= k {
            return Err(Error::Validation(format!(
                "label {cluster} out of range for k={k}"
            )));
        }
        let group = demographic.group_of(m)?;
        let gi = *group_index.get(group.as_str()).unwrap();
        marginal[gi] += 1;
        joint[cluster][gi] += 1;
        cluster_sizes[cluster] += 1;
    }

    let mut rows = Vec::new();
    for cluster in 0..k {
        for (gi, group) in group_labels.iter().enumerate() {
            let p_marginal = marginal[gi] as f64 / n as f64;
            let p_conditional = if cluster_sizes[cluster] > 0 {
                joint[cluster][gi] as f64 / cluster_sizes[cluster] as f64
            } else {
                0.0
            };
            let deviation = (p_marginal > 0.0).then(|| p_conditional / p_marginal - 1.0);
            rows.push(DeviationRow {
                cluster,
                group: group.clone(),
                p_conditional,
                p_marginal,
                deviation,
            });
        }
    }
    Ok(DeviationReport {
        rows,
        cluster_sizes,
        n_members: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Gender;
    use approx::assert_relative_eq;
    use chrono::NaiveDate;

    fn member(id: usize, age: u32, gender: Gender) -> MemberProfile {
        MemberProfile {
            member_id: MemberId(format!("m{id}")),
            age,
            gender,
            bmi: 22.0,
            contract_start: NaiveDate::from_ymd_opt(2022, 1, 3).unwrap(),
            main_club: "c".into(),
            membership_category: "std".into(),
            experience_level: None,
            form_level: None,
            est_visit_frequency: None,
            contract_type: "annual".into(),
            paid: true,
        }
    }

    fn labels_for(members: &[MemberProfile], mut f: impl FnMut(usize) -> usize) -> BTreeMap<MemberId, usize> {
        members
            .iter()
            .enumerate()
            .map(|(i, m)| (m.member_id.clone(), f(i)))
            .collect()
    }

    #[test]
    fn uniform_composition_gives_zero_deviation() {
        // Two clusters, each exactly half female.
        let members: Vec<MemberProfile> = (0..40)
            .map(|i| member(i, 30, if i % 2 == 0 { Gender::Female } else { Gender::Male }))
            .collect();
        let labels = labels_for(&members, |i| (i / 2) % 2);
        let report = deviation(&members, &labels, 2, &Demographic::Gender).unwrap();
        for row in &report.rows {
            assert_relative_eq!(row.deviation.unwrap(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_percent_overrepresentation() {
        // Population 50% female; cluster 0 is 51% female.
        let mut members = Vec::new();
        for i in 0..100 {
            members.push(member(i, 30, if i < 51 { Gender::Female } else { Gender::Male }));
        }
        for i in 100..200 {
            members.push(member(i, 30, if i < 149 { Gender::Female } else { Gender::Male }));
        }
        let labels = labels_for(&members, |i| if i < 100 { 0 } else { 1 });
        let report = deviation(&members, &labels, 2, &Demographic::Gender).unwrap();
        let row = report
            .rows
            .iter()
            .find(|r| r.cluster == 0 && r.group == "female")
            .unwrap();
        assert_relative_eq!(row.deviation.unwrap(), 0.51 / 0.50 - 1.0, epsilon = 1e-12);
        assert_relative_eq!(row.deviation.unwrap(), 0.02, epsilon = 1e-12);
    }

    #[test]
    fn zero_marginal_mass_is_flagged_undefined() {
        let members: Vec<MemberProfile> = (0..10).map(|i| member(i, 30, Gender::Male)).collect();
        let labels = labels_for(&members, |_| 0);
        let report = deviation(&members, &labels, 1, &Demographic::Gender).unwrap();
        let female = report.rows.iter().find(|r| r.group == "female").unwrap();
        assert!(female.deviation.is_none());
        let male = report.rows.iter().find(|r| r.group == "male").unwrap();
        assert_relative_eq!(male.deviation.unwrap(), 0.0);
    }

    #[test]
    fn mixture_identity_holds_exactly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = rng.gen_range(5..200);
            let k = rng.gen_range(1..6);
            let members: Vec<MemberProfile> = (0..n)
                .map(|i| {
                    member(
                        i,
                        rng.gen_range(14..80),
                        if rng.gen_bool(0.5) { Gender::Female } else { Gender::Male },
                    )
                })
                .collect();
            let labels = labels_for(&members, |_| rng.gen_range(0..k));
            let demo = Demographic::default_age_bands();
            let report = deviation(&members, &labels, k, &demo).unwrap();
            for group in demo.group_labels() {
                let p_marginal = report
                    .rows
                    .iter()
                    .find(|r| r.group == group)
                    .unwrap()
                    .p_marginal;
                let mixture: f64 = report
                    .rows
                    .iter()
                    .filter(|r| r.group == group)
                    .map(|r| {
                        report.cluster_sizes[r.cluster] as f64 / report.n_members as f64
                            * r.p_conditional
                    })
                    .sum();
                assert_relative_eq!(mixture, p_marginal, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn duplicating_every_member_keeps_deviations() {
        let members: Vec<MemberProfile> = (0..30)
            .map(|i| member(i, 20 + (i as u32 % 40), if i % 3 == 0 { Gender::Female } else { Gender::Male }))
            .collect();
        let labels = labels_for(&members, |i| i % 2);
        let report = deviation(&members, &labels, 2, &Demographic::Gender).unwrap();

        let mut doubled = members.clone();
        for (i, m) in members.iter().enumerate() {
            let mut c = m.clone();
            c.member_id = MemberId(format!("dup{i}"));
            doubled.push(c);
        }
        let mut labels2 = labels.clone();
        for (i, m) in members.iter().enumerate() {
            labels2.insert(MemberId(format!("dup{i}")), labels[&m.member_id]);
            let _ = i;
        }
        let report2 = deviation(&doubled, &labels2, 2, &Demographic::Gender).unwrap();
        for (a, b) in report.rows.iter().zip(&report2.rows) {
            assert_eq!(a.deviation.is_some(), b.deviation.is_some());
            if let (Some(da), Some(db)) = (a.deviation, b.deviation) {
                assert_relative_eq!(da, db, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn missing_label_is_validation_error() {
        let members = vec![member(0, 30, Gender::Male)];
        let labels = BTreeMap::new();
        assert!(matches!(
            deviation(&members, &labels, 2, &Demographic::Gender),
            Err(Error::Validation(_))
        ));
    }
}
