//! Covariate encoding for propensity models: one-hot categoricals with a
//! dropped reference level, z-scored numerics, and contract start expressed
//! as standardized days since the earliest start in the subset.

use std::collections::BTreeSet;

use ndarray::Array2;

use crate::model::{CohortDataset, Gender};

/// Which optional covariate blocks to include.
#[derive(Debug, Clone, Copy)]
pub struct CovariateSpec {
    /// Self-reported treatments exclude the (self-reported) experience level.
    pub include_experience: bool,
    /// Cluster-specific reruns exclude the cluster indicator.
    pub include_cluster: bool,
}

impl CovariateSpec {
    pub fn for_interventions() -> Self {
        CovariateSpec {
            include_experience: true,
            include_cluster: true,
        }
    }

    pub fn for_self_reported() -> Self {
        CovariateSpec {
            include_experience: false,
            include_cluster: true,
        }
    }

    pub fn within_cluster(mut self) -> Self {
        self.include_cluster = false;
        self
    }
}

/// Design matrix (leading intercept column) plus column names.
pub struct EncodedCovariates {
    pub x: Array2<f64>,
    pub columns: Vec<String>,
}

fn zscore(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd > 0.0 {
        values.iter().map(|v| (v - mean) / sd).collect()
    } else {
        vec![0.0; values.len()]
    }
}

fn experience_category(v: Option<u8>) -> String {
    // Missing answers form their own category rather than being imputed.
    v.map(|x| x.to_string()).unwrap_or_else(|| "na".to_string())
}

/// Encodes the members selected by `member_idx` (indices into
/// `cohort.members`). `cluster_of` supplies the hard cluster label per
/// selected member when the cluster block is included.
pub fn encode_covariates(
    cohort: &CohortDataset,
    member_idx: &[usize],
    cluster_of: &[usize],
    k: usize,
    spec: &CovariateSpec,
) -> EncodedCovariates {
    let members: Vec<&crate::model::MemberProfile> =
        member_idx.iter().map(|&i| &cohort.members[i]).collect();
    let n = members.len();

    let mut columns: Vec<String> = vec!["intercept".into()];
    let mut data: Vec<Vec<f64>> = vec![vec![1.0; n]];

    let ages: Vec<f64> = members.iter().map(|m| m.age as f64).collect();
    columns.push("age_z".into());
    data.push(zscore(&ages));

    let bmis: Vec<f64> = members.iter().map(|m| m.bmi).collect();
    columns.push("bmi_z".into());
    data.push(zscore(&bmis));

    let epoch = members
        .iter()
        .map(|m| m.contract_start)
        .min()
        .expect("non-empty subset");
    let starts: Vec<f64> = members
        .iter()
        .map(|m| (m.contract_start - epoch).num_days() as f64)
        .collect();
    columns.push("contract_start_z".into());
    data.push(zscore(&starts));

    columns.push("gender_male".into());
    data.push(
        members
            .iter()
            .map(|m| if m.gender == Gender::Male { 1.0 } else { 0.0 })
            .collect(),
    );

    // One-hot blocks drop their first category as the reference.
    let club_cats: BTreeSet<&str> = members.iter().map(|m| m.main_club.as_str()).collect();
    for cat in club_cats.iter().skip(1) {
        columns.push(format!("club_{cat}"));
        data.push(
            members
                .iter()
                .map(|m| if m.main_club == *cat { 1.0 } else { 0.0 })
                .collect(),
        );
    }

    let cat_cats: BTreeSet<&str> = members
        .iter()
        .map(|m| m.membership_category.as_str())
        .collect();
    for cat in cat_cats.iter().skip(1) {
        columns.push(format!("category_{cat}"));
        data.push(
            members
                .iter()
                .map(|m| if m.membership_category == *cat { 1.0 } else { 0.0 })
                .collect(),
        );
    }

    if spec.include_experience {
        let exp_cats: BTreeSet<String> = members
            .iter()
            .map(|m| experience_category(m.experience_level))
            .collect();
        for cat in exp_cats.iter().skip(1) {
            columns.push(format!("experience_{cat}"));
            data.push(
                members
                    .iter()
                    .map(|m| {
                        if experience_category(m.experience_level) == *cat {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            );
        }
    }

    if spec.include_cluster {
        debug_assert_eq!(cluster_of.len(), n);
        for c in 1..k {
            columns.push(format!("cluster_{c}"));
            data.push(
                cluster_of
                    .iter()
                    .map(|&l| if l == c { 1.0 } else { 0.0 })
                    .collect(),
            );
        }
    }

    let mut x = Array2::zeros((n, columns.len()));
    for (j, col) in data.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    EncodedCovariates { x, columns }
}
