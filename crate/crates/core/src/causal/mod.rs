//! Propensity-score-matching causal pipeline: binarize a treatment, model
//! the propensity with ridge logistic regression, match treated members to
//! controls without replacement, and read the treatment effect off the
//! matched milestone outcomes, with a random-common-cause stability check.

pub mod binarize;
pub mod encode;
pub mod matching;
pub mod propensity;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use binarize::{binarize_four_level, binarize_threshold, Level};
pub use encode::{encode_covariates, CovariateSpec, EncodedCovariates};
pub use matching::{match_nearest, MatchResult};
pub use propensity::{fit_propensity, PropensityModel, DEFAULT_LAMBDA};

use crate::critical::{reaches_milestone, CriticalVisitTable};
use crate::error::{Error, Result};
use crate::model::{CohortDataset, MemberId};
use crate::par;

/// A treatment variable under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    GroupLessons,
    PtSessions,
    InvitationCredits,
    DistinctClubs,
    DistinctGroupLessons,
    FormLevel,
    ExperienceLevel,
    EstVisitFrequency,
}

impl Treatment {
    pub const INTERVENTIONS: [Treatment; 5] = [
        Treatment::GroupLessons,
        Treatment::PtSessions,
        Treatment::InvitationCredits,
        Treatment::DistinctClubs,
        Treatment::DistinctGroupLessons,
    ];

    pub const SELF_REPORTED: [Treatment; 3] = [
        Treatment::FormLevel,
        Treatment::ExperienceLevel,
        Treatment::EstVisitFrequency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Treatment::GroupLessons => "group_lessons",
            Treatment::PtSessions => "pt_sessions",
            Treatment::InvitationCredits => "invitation_credits",
            Treatment::DistinctClubs => "distinct_clubs",
            Treatment::DistinctGroupLessons => "distinct_group_lessons",
            Treatment::FormLevel => "form_level",
            Treatment::ExperienceLevel => "experience_level",
            Treatment::EstVisitFrequency => "est_visit_frequency",
        }
    }

    pub fn parse(s: &str) -> Result<Treatment> {
        Treatment::INTERVENTIONS
            .iter()
            .chain(&Treatment::SELF_REPORTED)
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Lookup(format!("unknown treatment '{s}'")))
    }

    pub fn is_self_reported(self) -> bool {
        Treatment::SELF_REPORTED.contains(&self)
    }

    /// Level count of a self-reported ordinal.
    pub fn n_levels(self) -> Option<u8> {
        match self {
            Treatment::FormLevel | Treatment::EstVisitFrequency => Some(3),
            Treatment::ExperienceLevel => Some(4),
            _ => None,
        }
    }

    fn intervention_count(self, cohort: &CohortDataset, id: &MemberId) -> u32 {
        let c = cohort.interventions_of(id);
        match self {
            Treatment::GroupLessons => c.group_lessons,
            Treatment::PtSessions => c.pt_sessions,
            Treatment::InvitationCredits => c.invitation_credits,
            Treatment::DistinctClubs => c.distinct_clubs,
            Treatment::DistinctGroupLessons => c.distinct_group_lessons,
            _ => unreachable!("not an intervention count"),
        }
    }

    fn self_reported_value(self, m: &crate::model::MemberProfile) -> Option<u8> {
        match self {
            Treatment::FormLevel => m.form_level,
            Treatment::ExperienceLevel => m.experience_level,
            Treatment::EstVisitFrequency => m.est_visit_frequency,
            _ => unreachable!("not self-reported"),
        }
    }
}

/// How a treatment is binarized and which contrast is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scheme {
    /// Contrast one intensity level against another (the control defaults to
    /// members with zero exposure).
    FourLevel { treated: Level, control: Level },
    /// Self-reported ordinal split at `value > t`.
    Threshold { t: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreatmentSpec {
    pub treatment: Treatment,
    pub scheme: Scheme,
}

impl TreatmentSpec {
    pub fn four_level(treatment: Treatment, treated: Level) -> Result<Self> {
        if treatment.is_self_reported() {
            return Err(Error::Validation(format!(
                "four-level binarization applies to intervention counts, not {}",
                treatment.as_str()
            )));
        }
        if treated == Level::None {
            return Err(Error::Validation("treated level cannot be 'none'".into()));
        }
        Ok(TreatmentSpec {
            treatment,
            scheme: Scheme::FourLevel {
                treated,
                control: Level::None,
            },
        })
    }

    pub fn threshold(treatment: Treatment, t: u8) -> Result<Self> {
        let n_levels = treatment.n_levels().ok_or_else(|| {
            Error::Validation(format!(
                "threshold binarization applies to self-reported variables, not {}",
                treatment.as_str()
            ))
        })?;
        if t > n_levels - 2 {
            return Err(Error::Validation(format!(
                "threshold {t} out of range for {} (0..={})",
                treatment.as_str(),
                n_levels - 2
            )));
        }
        Ok(TreatmentSpec {
            treatment,
            scheme: Scheme::Threshold { t },
        })
    }

    pub fn level_label(&self) -> String {
        match self.scheme {
            Scheme::FourLevel { treated, control } => {
                if control == Level::None {
                    treated.as_str().to_string()
                } else {
                    format!("{}_vs_{}", treated.as_str(), control.as_str())
                }
            }
            Scheme::Threshold { t } => format!("gt{t}"),
        }
    }
}

/// Everything a causal cell needs, shared read-only across parallel cells.
pub struct CausalContext<'a> {
    pub cohort: &'a CohortDataset,
    pub cluster_labels: &'a BTreeMap<MemberId, usize>,
    pub k: usize,
    pub critical: &'a CriticalVisitTable,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CellOptions {
    pub lambda: f64,
    pub seed: u64,
    /// Random-common-cause draws; 0 skips refutation.
    pub refute_draws: usize,
    pub bootstrap_resamples: usize,
    pub caliper: Option<f64>,
}

impl Default for CellOptions {
    fn default() -> Self {
        CellOptions {
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            refute_draws: 0,
            bootstrap_resamples: 1000,
            caliper: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refutation {
    pub mean_estimate: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalEstimate {
    pub treatment: Treatment,
    pub level: String,
    pub week: u32,
    /// `None` for the whole-cohort run.
    pub cluster: Option<usize>,
    pub att: f64,
    pub n_treated: usize,
    pub n_matched: usize,
    /// 95% pair-level bootstrap band around the estimate.
    pub band: (f64, f64),
    pub refutation: Option<Refutation>,
}

/// Mean paired outcome difference (treated minus matched control).
pub fn estimate_att(pairs: &[(usize, usize)], outcomes: &[f64]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Estimation("no matched pairs".into()));
    }
    let sum: f64 = pairs
        .iter()
        .map(|&(t, c)| outcomes[t] - outcomes[c])
        .sum();
    Ok(sum / pairs.len() as f64)
}

/// 95% percentile band from pair-level bootstrap resampling.
pub fn bootstrap_band(
    pairs: &[(usize, usize)],
    outcomes: &[f64],
    resamples: usize,
    seed: u64,
) -> (f64, f64) {
    let diffs: Vec<f64> = pairs.iter().map(|&(t, c)| outcomes[t] - outcomes[c]).collect();
    let n = diffs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut estimates: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut sum = 0.0;
            for _ in 0..n {
                sum += diffs[rng.gen_range(0..n)];
            }
            sum / n as f64
        })
        .collect();
    estimates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = estimates[(resamples as f64 * 0.025) as usize];
    let hi = estimates[resamples - 1 - (resamples as f64 * 0.025) as usize];
    (lo, hi)
}

/// Unadjusted difference in outcome means between treated and control.
pub fn naive_difference(treated: &[bool], outcomes: &[f64]) -> f64 {
    let (mut ts, mut tn, mut cs, mut cn) = (0.0, 0usize, 0.0, 0usize);
    for (&flag, &y) in treated.iter().zip(outcomes) {
        if flag {
            ts += y;
            tn += 1;
        } else {
            cs += y;
            cn += 1;
        }
    }
    ts / tn.max(1) as f64 - cs / cn.max(1) as f64
}

fn fit_match_estimate(
    x: &Array2<f64>,
    columns: &[String],
    treated: &[bool],
    outcomes: &[f64],
    opts: &CellOptions,
) -> Result<(f64, MatchResult, PropensityModel)> {
    let model = fit_propensity(x, columns, treated, opts.lambda, opts.seed)?;
    let scores = model.scores(x);
    let matched = match_nearest(&scores, treated, opts.caliper)?;
    let att = estimate_att(&matched.pairs, outcomes)?;
    Ok((att, matched, model))
}

/// Re-estimates the effect after appending an independent standard-normal
/// covariate, once per draw. The p-value is the fraction of draws whose
/// estimate stays inside the original bootstrap band; values near 1 mean the
/// estimate does not move under irrelevant common causes.
#[allow(clippy::too_many_arguments)]
pub fn refute_random_common_cause(
    x: &Array2<f64>,
    columns: &[String],
    treated: &[bool],
    outcomes: &[f64],
    band: (f64, f64),
    n_draws: usize,
    opts: &CellOptions,
) -> Result<Refutation> {
    let n = x.nrows();
    let mut aug_columns = columns.to_vec();
    aug_columns.push("random_common_cause".into());
    let estimates: Vec<Result<f64>> = par::map_range(n_draws, |draw| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(draw as u64 + 1)));
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut aug = Array2::zeros((n, x.ncols() + 1));
        aug.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
        for (i, &v) in noise.iter().enumerate() {
            aug[[i, x.ncols()]] = v;
        }
        fit_match_estimate(&aug, &aug_columns, treated, outcomes, opts).map(|(att, _, _)| att)
    });
    let mut values = Vec::with_capacity(n_draws);
    for e in estimates {
        values.push(e?);
    }
    let inside = values
        .iter()
        .filter(|&&v| v >= band.0 - 1e-12 && v <= band.1 + 1e-12)
        .count();
    Ok(Refutation {
        mean_estimate: values.iter().sum::<f64>() / values.len().max(1) as f64,
        p_value: inside as f64 / n_draws.max(1) as f64,
    })
}

/// Members eligible for a cell, with treatment flags resolved.
pub struct CellAssembly {
    /// Indices into `cohort.members`.
    pub member_idx: Vec<usize>,
    pub treated: Vec<bool>,
    pub cluster_of: Vec<usize>,
}

/// Resolves eligibility and treatment flags for a spec.
///
/// Four-level cut points are computed once over the full cohort (or, for
/// self-reported variables, over complete responders) so level definitions
/// do not drift between the overall and per-cluster runs.
pub fn assemble_cell(
    ctx: &CausalContext,
    spec: &TreatmentSpec,
    cluster: Option<usize>,
) -> Result<CellAssembly> {
    let cluster_label = |id: &MemberId| -> Result<usize> {
        ctx.cluster_labels
            .get(id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("no cluster label for member {id}")))
    };

    let mut member_idx = Vec::new();
    let mut treated = Vec::new();
    let mut cluster_of = Vec::new();

    match spec.scheme {
        Scheme::FourLevel {
            treated: t_level,
            control: c_level,
        } => {
            let values: Vec<u32> = ctx
                .cohort
                .members
                .iter()
                .map(|m| spec.treatment.intervention_count(ctx.cohort, &m.member_id))
                .collect();
            let levels = binarize_four_level(&values)?;
            for (i, m) in ctx.cohort.members.iter().enumerate() {
                let label = cluster_label(&m.member_id)?;
                if let Some(c) = cluster {
                    if label != c {
                        continue;
                    }
                }
                if levels[i] == t_level || levels[i] == c_level {
                    member_idx.push(i);
                    treated.push(levels[i] == t_level);
                    cluster_of.push(label);
                }
            }
        }
        Scheme::Threshold { t } => {
            let n_levels = spec
                .treatment
                .n_levels()
                .expect("threshold scheme implies self-reported");
            // Restrict to members who answered every self-reported question.
            let mut values = Vec::new();
            let mut keep = Vec::new();
            for (i, m) in ctx.cohort.members.iter().enumerate() {
                if !m.complete_responder() {
                    continue;
                }
                let label = cluster_label(&m.member_id)?;
                if let Some(c) = cluster {
                    if label != c {
                        continue;
                    }
                }
                values.push(spec.treatment.self_reported_value(m).expect("complete responder"));
                keep.push((i, label));
            }
            let flags = binarize_threshold(&values, t, n_levels)?;
            for ((i, label), flag) in keep.into_iter().zip(flags) {
                member_idx.push(i);
                treated.push(flag);
                cluster_of.push(label);
            }
        }
    }
    Ok(CellAssembly {
        member_idx,
        treated,
        cluster_of,
    })
}

/// Milestone outcomes (0/1) for the assembled members at a given week.
pub fn milestone_outcomes(
    ctx: &CausalContext,
    member_idx: &[usize],
    week: u32,
) -> Result<Vec<f64>> {
    let entry = ctx.critical.get(week).ok_or_else(|| {
        Error::Estimation(format!("no critical visit entry for week {week}"))
    })?;
    Ok(member_idx
        .iter()
        .map(|&i| {
            let m = &ctx.cohort.members[i];
            let hit = reaches_milestone(ctx.cohort.visits.of(&m.member_id), m.contract_start, entry);
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// Runs the full fit-match-estimate pipeline for one (spec, week, cluster) cell.
pub fn estimate_cell(
    ctx: &CausalContext,
    spec: &TreatmentSpec,
    week: u32,
    cluster: Option<usize>,
    opts: &CellOptions,
) -> Result<CausalEstimate> {
    let cell = assemble_cell(ctx, spec, cluster)?;
    let n_treated = cell.treated.iter().filter(|&&t| t).count();
    let n_control = cell.treated.len() - n_treated;
    if n_treated == 0 || n_control == 0 {
        return Err(Error::Matching(format!(
            "cell {}/{} week {week}{}: {} treated vs {} controls",
            spec.treatment.as_str(),
            spec.level_label(),
            cluster.map(|c| format!(" cluster {c}")).unwrap_or_default(),
            n_treated,
            n_control
        )));
    }
    let cov_spec = if spec.treatment.is_self_reported() {
        CovariateSpec::for_self_reported()
    } else {
        CovariateSpec::for_interventions()
    };
    let cov_spec = if cluster.is_some() {
        cov_spec.within_cluster()
    } else {
        cov_spec
    };
    let enc = encode_covariates(ctx.cohort, &cell.member_idx, &cell.cluster_of, ctx.k, &cov_spec);
    let outcomes = milestone_outcomes(ctx, &cell.member_idx, week)?;
    let (att, matched, _model) =
        fit_match_estimate(&enc.x, &enc.columns, &cell.treated, &outcomes, opts)?;
    let band = bootstrap_band(&matched.pairs, &outcomes, opts.bootstrap_resamples, opts.seed);
    let refutation = if opts.refute_draws > 0 {
        Some(refute_random_common_cause(
            &enc.x,
            &enc.columns,
            &cell.treated,
            &outcomes,
            band,
            opts.refute_draws,
            opts,
        )?)
    } else {
        None
    };
    Ok(CausalEstimate {
        treatment: spec.treatment,
        level: spec.level_label(),
        week,
        cluster,
        att,
        n_treated,
        n_matched: matched.n_pairs(),
        band,
        refutation,
    })
}

/// Unadjusted difference in milestone means for a cell, for comparison
/// against the matched estimate.
pub fn naive_cell_estimate(
    ctx: &CausalContext,
    spec: &TreatmentSpec,
    week: u32,
    cluster: Option<usize>,
) -> Result<f64> {
    let cell = assemble_cell(ctx, spec, cluster)?;
    let outcomes = milestone_outcomes(ctx, &cell.member_idx, week)?;
    Ok(naive_difference(&cell.treated, outcomes.as_slice()))
}

/// A cell that could not be estimated, with the reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub treatment: Treatment,
    pub level: String,
    pub week: u32,
    pub cluster: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CausalRun {
    pub estimates: Vec<CausalEstimate>,
    pub failures: Vec<CellFailure>,
}

impl CausalRun {
    /// `treatment,level,week,cluster,att,n_treated,n_matched,refute_estimate,refute_p`
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("treatment,level,week,cluster,att,n_treated,n_matched,refute_estimate,refute_p\n");
        for e in &self.estimates {
            let cluster = e.cluster.map(|c| c.to_string()).unwrap_or_default();
            let (re, rp) = e
                .refutation
                .map(|r| (r.mean_estimate.to_string(), r.p_value.to_string()))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                e.treatment.as_str(),
                e.level,
                e.week,
                cluster,
                e.att,
                e.n_treated,
                e.n_matched,
                re,
                rp
            );
        }
        out
    }
}

/// Runs a batch of cells, parallel across cells; failures are collected
/// rather than aborting the batch.
pub fn run_cells(
    ctx: &CausalContext,
    cells: &[(TreatmentSpec, u32, Option<usize>)],
    opts: &CellOptions,
) -> CausalRun {
    let results = par::map_slice(cells, |(spec, week, cluster)| {
        estimate_cell(ctx, spec, *week, *cluster, opts)
    });
    let mut run = CausalRun::default();
    for ((spec, week, cluster), result) in cells.iter().zip(results) {
        match result {
            Ok(e) => run.estimates.push(e),
            Err(err) => run.failures.push(CellFailure {
                treatment: spec.treatment,
                level: spec.level_label(),
                week: *week,
                cluster: *cluster,
                reason: err.to_string(),
            }),
        }
    }
    run
}

/// One estimate per (level, week): intensity levels against no exposure,
/// outcome weeks over the given range, treatment always measured over the
/// first six weeks.
pub fn effect_timeline(
    ctx: &CausalContext,
    specs: &[TreatmentSpec],
    weeks: std::ops::RangeInclusive<u32>,
    opts: &CellOptions,
) -> CausalRun {
    let cells: Vec<(TreatmentSpec, u32, Option<usize>)> = specs
        .iter()
        .flat_map(|spec| weeks.clone().map(move |w| (*spec, w, None)))
        .collect();
    run_cells(ctx, &cells, opts)
}

/// Reruns the pipeline inside each cluster's member subset (cluster excluded
/// from the matching covariates). Clusters too small to match show up as
/// failures.
pub fn effect_by_cluster(
    ctx: &CausalContext,
    spec: &TreatmentSpec,
    weeks: &[u32],
    opts: &CellOptions,
) -> CausalRun {
    let cells: Vec<(TreatmentSpec, u32, Option<usize>)> = (0..ctx.k)
        .flat_map(|c| weeks.iter().map(move |&w| (*spec, w, Some(c))))
        .collect();
    run_cells(ctx, &cells, opts)
}

/// Permutes the treatment flags of a cell (preserving the marginal rate) and
/// re-runs fit, match, and estimate. Returns the placebo estimate and its
/// bootstrap band.
pub fn placebo_estimate(
    ctx: &CausalContext,
    spec: &TreatmentSpec,
    week: u32,
    opts: &CellOptions,
    permutation_seed: u64,
) -> Result<(f64, (f64, f64))> {
    let cell = assemble_cell(ctx, spec, None)?;
    let mut flags = cell.treated.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(permutation_seed);
    flags.shuffle(&mut rng);
    let cov_spec = if spec.treatment.is_self_reported() {
        CovariateSpec::for_self_reported()
    } else {
        CovariateSpec::for_interventions()
    };
    let enc = encode_covariates(ctx.cohort, &cell.member_idx, &cell.cluster_of, ctx.k, &cov_spec);
    let outcomes = milestone_outcomes(ctx, &cell.member_idx, week)?;
    let (att, matched, _) = fit_match_estimate(&enc.x, &enc.columns, &flags, &outcomes, opts)?;
    let band = bootstrap_band(&matched.pairs, &outcomes, opts.bootstrap_resamples, opts.seed);
    Ok((att, band))
}

/// Drops the given axis-1 block from an encoded matrix (test support for
/// confounder-duplication experiments).
pub fn append_column(x: &Array2<f64>, col: &[f64]) -> Array2<f64> {
    let mut aug = Array2::zeros((x.nrows(), x.ncols() + 1));
    aug.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
    for (i, &v) in col.iter().enumerate() {
        aug[[i, x.ncols()]] = v;
    }
    aug
}

#[allow(unused_imports)]
use ndarray::s;
