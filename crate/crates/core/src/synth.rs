//! Seeded synthetic cohort generator with five time-of-day archetypes,
//! week-level churn hazards, confounded intervention assignment, and
//! injectable treatment effects with exact per-member counterfactuals.
//!
//! Generation runs in two passes. The first draws demographics, the
//! confounder shift, and intervention counts for every member; counts are
//! then binarized cohort-wide so injected effects attach to exactly the
//! levels the analysis will see. The second pass builds each member's
//! survival curve (baseline raised to a confounder-dependent power, plus the
//! additive uplift), draws one uniform variate against it to fix the streak,
//! and fills in gap weeks, comeback episodes, and archetype-timed visits.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::causal::{binarize_four_level, Level, Treatment};
use crate::error::{Error, Result};
use crate::model::{
    CohortDataset, Gender, InterventionCounts, MemberId, MemberProfile, VisitEvent, VisitLog,
};
use crate::par;
use crate::survival::CONTRACT_WEEKS;

pub const ARCHETYPES: usize = 5;
pub const ARCHETYPE_NAMES: [&str; ARCHETYPES] =
    ["morning", "noon", "afternoon", "evening", "night"];

/// Uplift weeks run over the whole contract; outcome weeks of interest are 6..=17.
pub const TRUTH_WEEK_LO: u32 = 6;
pub const TRUTH_WEEK_HI: u32 = 17;

/// One behavioral archetype: preferred entry hours and demographic mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub name: String,
    /// Entry hours drawn uniformly when placing a visit.
    pub peak_hours: Vec<u8>,
    /// Weights over the five age bands 14-20, 21-27, 28-34, 35-48, 49+.
    pub age_band_weights: [f64; 5],
    pub female_share: f64,
}

/// Additive effect of one treatment on the weekly survival probability,
/// applied at the member's realized level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uplift {
    pub treatment: Treatment,
    pub low: f64,
    pub moderate: f64,
    pub high: f64,
    /// Per-archetype multiplier (defaults to 1 everywhere).
    pub cluster_weights: Option<[f64; ARCHETYPES]>,
    /// Per-week multiplier, weeks 1..=52 (defaults to 1 everywhere).
    pub week_weights: Option<Vec<f64>>,
}

impl Uplift {
    pub fn uniform(treatment: Treatment, value: f64) -> Self {
        Uplift {
            treatment,
            low: value,
            moderate: value,
            high: value,
            cluster_weights: None,
            week_weights: None,
        }
    }

    pub fn zero(treatment: Treatment) -> Self {
        Uplift::uniform(treatment, 0.0)
    }

    fn level_value(&self, level: Level) -> f64 {
        match level {
            Level::None => 0.0,
            Level::Low => self.low,
            Level::Moderate => self.moderate,
            Level::High => self.high,
        }
    }

    /// Applied uplift for a member at `level` in `archetype` during curve week `w`.
    pub fn applied(&self, level: Level, archetype: usize, week: u32) -> f64 {
        let base = self.level_value(level);
        let cw = self.cluster_weights.map_or(1.0, |ws| ws[archetype]);
        let ww = self
            .week_weights
            .as_ref()
            .map_or(1.0, |ws| ws[(week - 1) as usize]);
        base * cw * ww
    }
}

/// How intervention counts are assigned from the confounder score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSpec {
    /// Latent = intercept + slope * confounder + noise * logistic draw.
    pub intercept: f64,
    pub slope: f64,
    pub noise: f64,
    /// Positive counts are 1 + floor(latent * count_scale), capped.
    pub count_scale: f64,
    pub max_count: u32,
}

impl Default for AssignmentSpec {
    fn default() -> Self {
        AssignmentSpec {
            intercept: -0.1,
            slope: 1.3,
            noise: 0.9,
            count_scale: 3.0,
            max_count: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_members: usize,
    pub seed: u64,
    /// Archetype mixture weights (normalized at use).
    pub mixture: [f64; ARCHETYPES],
    pub archetypes: Vec<ArchetypeSpec>,
    /// Probability a visit's entry hour shifts by one.
    pub hour_jitter: f64,
    /// Weight of weekend days when picking visit days.
    pub weekend_share: f64,
    /// Baseline P(streak >= w) for w = 1..=52; non-increasing.
    pub base_survival: Vec<f64>,
    /// Scale of the confounder-driven log-hazard shift through bmi and age.
    pub confound_strength: f64,
    /// Per-eligible-week probability of an isolated in-streak gap week.
    pub gap_base: f64,
    /// Linear growth of the gap probability toward the streak's end.
    pub gap_ramp: f64,
    /// Probability of a comeback episode after the streak breaks.
    pub comeback_prob: f64,
    /// Geometric continuation parameter for post-break absence runs.
    pub comeback_continue: f64,
    /// Weekly visit rate: base + slope * (member's no-uplift week-6 survival).
    pub visit_rate_base: f64,
    pub visit_rate_slope: f64,
    /// Visit rate during comeback weeks.
    pub comeback_rate: f64,
    pub assignment: AssignmentSpec,
    pub uplifts: Vec<Uplift>,
    /// Probability a member answers every self-reported question.
    pub complete_responder_rate: f64,
    /// Contract starts are uniform over this many days from the epoch.
    pub start_span_days: i64,
    pub n_clubs: usize,
    pub n_categories: usize,
}

fn default_archetypes() -> Vec<ArchetypeSpec> {
    // Age compositions put older members in the morning and the youngest in
    // the afternoon; the morning youth share is set so the 14-20 band is
    // roughly half as likely there as overall.
    vec![
        ArchetypeSpec {
            name: "morning".into(),
            peak_hours: vec![8, 9],
            age_band_weights: [0.08783, 0.14, 0.20, 0.30, 0.27217],
            female_share: 0.40,
        },
        ArchetypeSpec {
            name: "noon".into(),
            peak_hours: vec![12, 13],
            age_band_weights: [0.12, 0.24, 0.26, 0.26, 0.12],
            female_share: 0.52,
        },
        ArchetypeSpec {
            name: "afternoon".into(),
            peak_hours: vec![15, 16],
            age_band_weights: [0.34, 0.30, 0.16, 0.14, 0.06],
            female_share: 0.38,
        },
        ArchetypeSpec {
            name: "evening".into(),
            peak_hours: vec![18, 19],
            age_band_weights: [0.12, 0.26, 0.28, 0.24, 0.10],
            female_share: 0.50,
        },
        ArchetypeSpec {
            name: "night".into(),
            peak_hours: vec![20, 21],
            age_band_weights: [0.26, 0.34, 0.20, 0.14, 0.06],
            female_share: 0.36,
        },
    ]
}

/// Piecewise-geometric baseline survival curve through the given anchors.
pub fn survival_curve(s1: f64, s6: f64, s17: f64, s52: f64) -> Vec<f64> {
    let mut curve = Vec::with_capacity(CONTRACT_WEEKS);
    let seg = |from: f64, to: f64, steps: u32, w: u32| from * (to / from).powf(w as f64 / steps as f64);
    for w in 1..=CONTRACT_WEEKS as u32 {
        let s = if w <= 6 {
            seg(s1, s6, 5, w - 1)
        } else if w <= 17 {
            seg(s6, s17, 11, w - 6)
        } else {
            seg(s17, s52, 35, w - 17)
        };
        curve.push(s);
    }
    curve
}

impl GeneratorSpec {
    /// Reference defaults: roughly half the cohort loses its streak by
    /// week 6, a fifth is still going at week 17, intermediate gaps are about
    /// half one-week long, and the week-6 critical count sits near nine.
    pub fn calibrated(n_members: usize, seed: u64) -> Self {
        GeneratorSpec {
            n_members,
            seed,
            mixture: [0.16, 0.14, 0.20, 0.30, 0.20],
            archetypes: default_archetypes(),
            hour_jitter: 0.15,
            weekend_share: 0.15,
            base_survival: survival_curve(0.85, 0.515, 0.21, 0.075),
            confound_strength: 0.5,
            gap_base: 0.030,
            gap_ramp: 1.0,
            comeback_prob: 0.60,
            comeback_continue: 0.45,
            visit_rate_base: 1.15,
            visit_rate_slope: 2.45,
            comeback_rate: 1.2,
            assignment: AssignmentSpec::default(),
            uplifts: Vec::new(),
            complete_responder_rate: 0.34,
            start_span_days: 540,
            n_clubs: 6,
            n_categories: 3,
        }
    }

    /// Strongly confounded assignment plus a uniform additive uplift on
    /// personal-trainer sessions, with the baseline lowered so the uplifted
    /// curve stays inside [0, 1].
    pub fn confounded_uplift(n_members: usize, seed: u64, uplift: f64) -> Self {
        let mut spec = GeneratorSpec::calibrated(n_members, seed);
        spec.base_survival = survival_curve(0.58, 0.38, 0.17, 0.07);
        spec.confound_strength = 0.8;
        spec.assignment.slope = 1.6;
        spec.uplifts = vec![Uplift::uniform(Treatment::PtSessions, uplift)];
        spec
    }

    /// Tightly separated archetypes for clustering recovery checks.
    pub fn low_noise(n_members: usize, seed: u64) -> Self {
        let mut spec = GeneratorSpec::calibrated(n_members, seed);
        spec.hour_jitter = 0.03;
        spec.weekend_share = 0.0;
        spec
    }

    /// Zero jitter and weekday-only visits: archetype bins never overlap.
    pub fn noise_free(n_members: usize, seed: u64) -> Self {
        let mut spec = GeneratorSpec::low_noise(n_members, seed);
        spec.hour_jitter = 0.0;
        spec
    }

    pub fn with_uplift(mut self, uplift: Uplift) -> Self {
        self.uplifts.push(uplift);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.archetypes.len() != ARCHETYPES {
            return Err(Error::Spec(format!(
                "expected {ARCHETYPES} archetypes, got {}",
                self.archetypes.len()
            )));
        }
        if self.base_survival.len() != CONTRACT_WEEKS {
            return Err(Error::Spec(format!(
                "base survival curve must have {CONTRACT_WEEKS} weeks"
            )));
        }
        let mut prev = 1.0f64;
        for (i, &s) in self.base_survival.iter().enumerate() {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Spec(format!("base survival week {} = {s}", i + 1)));
            }
            if s > prev + 1e-12 {
                return Err(Error::Spec(format!(
                    "base survival increases at week {}",
                    i + 1
                )));
            }
            prev = s;
        }
        let mix_sum: f64 = self.mixture.iter().sum();
        if (mix_sum - 1.0).abs() > 1e-6 {
            return Err(Error::Spec(format!("mixture weights sum to {mix_sum}")));
        }
        for u in &self.uplifts {
            if u.treatment.is_self_reported() {
                return Err(Error::Spec(format!(
                    "uplift on self-reported variable {} is not supported",
                    u.treatment.as_str()
                )));
            }
            if let Some(w) = &u.week_weights {
                if w.len() != CONTRACT_WEEKS {
                    return Err(Error::Spec(
                        "uplift week weights must cover 52 weeks".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Exact per-member counterfactual bookkeeping for one treatment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpliftContribution {
    pub treatment: Treatment,
    pub level: Level,
    /// Applied uplift at outcome weeks 6..=17.
    pub per_week: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberTruth {
    pub member_id: MemberId,
    pub archetype: usize,
    /// Confounder-driven log-hazard shift.
    pub theta: f64,
    /// Realized streak drawn from the factual curve.
    pub streak_weeks: u32,
    /// Factual P(streak >= w) at weeks 6..=17.
    pub factual_probs: Vec<f64>,
    pub contributions: Vec<UpliftContribution>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: GeneratorSpec,
    pub members: Vec<MemberTruth>,
}

impl GroundTruth {
    /// Analytic ATT implied by the generator spec: the mean applied uplift over members
    /// at the treated level, straight from the counterfactual probabilities.
    pub fn att(&self, treatment: Treatment, level: Level, week: u32) -> Result<f64> {
        if !self.spec.uplifts.iter().any(|u| u.treatment == treatment) {
            return Err(Error::Lookup(format!(
                "no uplift defined for treatment {}",
                treatment.as_str()
            )));
        }
        if !(TRUTH_WEEK_LO..=TRUTH_WEEK_HI).contains(&week) {
            return Err(Error::Lookup(format!(
                "week {week} outside recorded range {TRUTH_WEEK_LO}..={TRUTH_WEEK_HI}"
            )));
        }
        let mut sum = 0.0;
        let mut n = 0usize;
        for m in &self.members {
            if let Some(c) = m
                .contributions
                .iter()
                .find(|c| c.treatment == treatment && c.level == level)
            {
                sum += c.per_week[(week - TRUTH_WEEK_LO) as usize];
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Estimation(format!(
                "no members at level {} of {}",
                level.as_str(),
                treatment.as_str()
            )));
        }
        Ok(sum / n as f64)
    }

    pub fn archetype_labels(&self) -> BTreeMap<MemberId, usize> {
        self.members
            .iter()
            .map(|m| (m.member_id.clone(), m.archetype))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedCohort {
    pub cohort: CohortDataset,
    pub truth: GroundTruth,
}

fn sub_seed(seed: u64, index: u64, salt: u64) -> u64 {
    let mut z = seed
        ^ salt
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn pick_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        draw -= w;
        if draw <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn geometric(rng: &mut ChaCha8Rng, p_continue: f64) -> u32 {
    let mut n = 0;
    while n < 40 && rng.gen_bool(p_continue.clamp(0.0, 0.95)) {
        n += 1;
    }
    n
}

const EPOCH: (i32, u32, u32) = (2022, 1, 1);
const AGE_BANDS: [(u32, u32); 5] = [(14, 20), (21, 27), (28, 34), (35, 48), (49, 72)];

/// First-pass output: everything except attendance.
struct MemberCore {
    profile: MemberProfile,
    archetype: usize,
    theta: f64,
    counts: InterventionCounts,
}

fn draw_member_core(spec: &GeneratorSpec, index: usize) -> MemberCore {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, index as u64, 0xA1));
    let archetype = pick_weighted(&mut rng, &spec.mixture);
    let arch = &spec.archetypes[archetype];

    let band = pick_weighted(&mut rng, &arch.age_band_weights);
    let (lo, hi) = AGE_BANDS[band];
    let age = rng.gen_range(lo..=hi);
    let gender = if rng.gen_bool(arch.female_share) {
        Gender::Female
    } else {
        Gender::Male
    };
    let bmi_dist = Normal::new(25.5, 3.5).expect("valid normal");
    let bmi = (bmi_dist.sample(&mut rng) as f64).clamp(16.0, 42.0);
    let bmi = (bmi * 10.0).round() / 10.0;

    let epoch = NaiveDate::from_ymd_opt(EPOCH.0, EPOCH.1, EPOCH.2).unwrap();
    let contract_start = epoch + chrono::Duration::days(rng.gen_range(0..spec.start_span_days.max(1)));

    let club = pick_weighted(&mut rng, &[0.30, 0.20, 0.15, 0.15, 0.10, 0.10][..spec.n_clubs.clamp(1, 6)]);
    let category = pick_weighted(&mut rng, &[0.5, 0.3, 0.2][..spec.n_categories.clamp(1, 3)]);

    let complete = rng.gen_bool(spec.complete_responder_rate.clamp(0.0, 1.0));
    let mut answer = |weights: &[f64]| -> Option<u8> {
        let value = pick_weighted(&mut rng, weights) as u8;
        if complete || rng.gen_bool(0.15) {
            Some(value)
        } else {
            None
        }
    };
    let experience_level = answer(&[0.30, 0.30, 0.25, 0.15]);
    let form_level = answer(&[0.30, 0.45, 0.25]);
    let est_visit_frequency = answer(&[0.35, 0.40, 0.25]);

    // Confounder score: standardized bmi and age enter both treatment
    // assignment and the survival shift.
    let z_bmi = ((bmi - 25.5) / 3.5).clamp(-2.0, 2.0);
    let z_age = ((age as f64 - 35.0) / 12.0).clamp(-2.0, 2.0);
    let confounder = 0.65 * z_bmi + 0.35 * z_age;
    let theta = spec.confound_strength * (confounder / 2.0).clamp(-1.0, 1.0);

    let mut draw_count = |a: &AssignmentSpec| -> u32 {
        let u: f64 = rng.gen_range(1e-9..1.0 - 1e-9);
        let logistic = (u / (1.0 - u)).ln();
        let latent = a.intercept + a.slope * confounder + a.noise * logistic;
        if latent <= 0.0 {
            0
        } else {
            1 + ((latent * a.count_scale) as u32).min(a.max_count - 1)
        }
    };
    let counts = InterventionCounts {
        group_lessons: draw_count(&spec.assignment),
        pt_sessions: draw_count(&spec.assignment),
        invitation_credits: draw_count(&spec.assignment),
        distinct_clubs: draw_count(&spec.assignment),
        distinct_group_lessons: draw_count(&spec.assignment),
    };

    MemberCore {
        profile: MemberProfile {
            member_id: MemberId(format!("m{index:06}")),
            age,
            gender,
            bmi,
            contract_start,
            main_club: format!("club_{:02}", club + 1),
            membership_category: format!("cat_{}", (b'a' + category as u8) as char),
            experience_level,
            form_level,
            est_visit_frequency,
            contract_type: "annual".into(),
            paid: true,
        },
        archetype,
        theta,
        counts,
    }
}

fn count_of(counts: &InterventionCounts, t: Treatment) -> u32 {
    match t {
        Treatment::GroupLessons => counts.group_lessons,
        Treatment::PtSessions => counts.pt_sessions,
        Treatment::InvitationCredits => counts.invitation_credits,
        Treatment::DistinctClubs => counts.distinct_clubs,
        Treatment::DistinctGroupLessons => counts.distinct_group_lessons,
        _ => 0,
    }
}

/// Places `n_visits` visits inside membership week `week` at the archetype's
/// preferred hours.
fn place_week_visits(
    rng: &mut ChaCha8Rng,
    spec: &GeneratorSpec,
    arch: &ArchetypeSpec,
    member_id: &MemberId,
    contract_start: NaiveDate,
    week: u32,
    n_visits: u32,
    out: &mut Vec<VisitEvent>,
) {
    let start_dow = crate::vectorize::day_of_week(contract_start);
    let mut day_weights = [1.0f64; 7];
    day_weights[5] = spec.weekend_share * 2.5;
    day_weights[6] = spec.weekend_share * 2.5;

    let mut days_used = [false; 7];
    for _ in 0..n_visits {
        // Redraw on collisions so zero-weight days stay unreachable; a
        // repeated day after that just means two visits that day.
        let mut day = pick_weighted(rng, &day_weights);
        for _ in 0..8 {
            if !days_used[day] {
                break;
            }
            day = pick_weighted(rng, &day_weights);
        }
        days_used[day] = true;

        let mut entry = arch.peak_hours[rng.gen_range(0..arch.peak_hours.len())] as i32;
        if spec.hour_jitter > 0.0 && rng.gen_bool(spec.hour_jitter.clamp(0.0, 1.0)) {
            entry += if rng.gen_bool(0.5) { 1 } else { -1 };
        }
        let duration = if rng.gen_bool(0.5) { 1 } else { 0 };
        let weekend = day >= 5;
        let (min_entry, max_exit) = if weekend { (8, 19) } else { (6, 22) };
        let entry = entry.clamp(min_entry, max_exit) as u8;
        let exit = (entry as i32 + duration).clamp(min_entry, max_exit) as u8;

        // Unique calendar date for (week, day-of-week) relative to contract start.
        let offset = (week as i64 - 1) * 7 + ((day + 7 - start_dow) % 7) as i64;
        let date = contract_start + chrono::Duration::days(offset);
        out.push(VisitEvent {
            member_id: member_id.clone(),
            date,
            entry_hour: entry,
            exit_hour: exit,
        });
    }
}

struct MemberBehavior {
    visits: Vec<VisitEvent>,
    truth: MemberTruth,
}

fn draw_member_behavior(
    spec: &GeneratorSpec,
    index: usize,
    core: &MemberCore,
    levels: &[(Treatment, Vec<Level>)],
) -> Result<MemberBehavior> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, index as u64, 0xB2));
    let arch = &spec.archetypes[core.archetype];
    let exponent = (-core.theta).exp();

    // Baseline curve (no uplift) and the factual curve with every configured
    // uplift applied at this member's levels.
    let mut baseline = Vec::with_capacity(CONTRACT_WEEKS);
    let mut factual = Vec::with_capacity(CONTRACT_WEEKS);
    let mut contributions: Vec<UpliftContribution> = spec
        .uplifts
        .iter()
        .map(|u| {
            let level = levels
                .iter()
                .find(|(t, _)| *t == u.treatment)
                .map(|(_, ls)| ls[index])
                .unwrap_or(Level::None);
            UpliftContribution {
                treatment: u.treatment,
                level,
                per_week: Vec::with_capacity((TRUTH_WEEK_HI - TRUTH_WEEK_LO + 1) as usize),
            }
        })
        .collect();

    for w in 1..=CONTRACT_WEEKS as u32 {
        let s_base = spec.base_survival[(w - 1) as usize].powf(exponent);
        let mut s = s_base;
        for (u, c) in spec.uplifts.iter().zip(&mut contributions) {
            let applied = u.applied(c.level, core.archetype, w);
            // Each single-treatment counterfactual must stay a probability.
            if s_base + applied > 1.0 + 1e-12 || s_base + applied < -1e-12 {
                return Err(Error::Spec(format!(
                    "uplift {:+.3} on {} pushes member {} week {w} probability to {:.4}",
                    applied,
                    u.treatment.as_str(),
                    core.profile.member_id,
                    s_base + applied
                )));
            }
            s += applied;
            if (TRUTH_WEEK_LO..=TRUTH_WEEK_HI).contains(&w) {
                c.per_week.push(applied);
            }
        }
        if s > 1.0 + 1e-9 || s < -1e-9 {
            return Err(Error::Spec(format!(
                "combined uplifts push member {} week {w} probability to {s:.4}",
                core.profile.member_id
            )));
        }
        factual.push(s.clamp(0.0, 1.0));
        baseline.push(s_base);
    }
    for w in 1..CONTRACT_WEEKS {
        if factual[w] > factual[w - 1] + 1e-9 {
            return Err(Error::Spec(format!(
                "uplift profile breaks survival monotonicity at week {}",
                w + 1
            )));
        }
    }

    // One uniform draw against the nested survival events fixes the streak.
    let v: f64 = rng.gen();
    let mut streak: u32 = 0;
    for w in (1..=CONTRACT_WEEKS as u32).rev() {
        if v <= factual[(w - 1) as usize] {
            streak = w;
            break;
        }
    }

    let mut attended = vec![false; CONTRACT_WEEKS];
    for w in 1..=streak {
        attended[(w - 1) as usize] = true;
    }
    // Isolated gap weeks, more likely toward the streak's end.
    if streak >= 4 {
        let mut w = 2;
        while w < streak {
            let g = spec.gap_base * (1.0 + spec.gap_ramp * w as f64 / streak as f64);
            if rng.gen_bool(g.clamp(0.0, 0.45)) {
                attended[(w - 1) as usize] = false;
                w += 2; // keep gaps non-adjacent
            } else {
                w += 1;
            }
        }
    }
    // Comeback episodes after the break. The first absence run spans at
    // least two weeks so the recorded streak stays broken; later lulls
    // between comeback runs can be a single week.
    let mut pos = streak as usize;
    let mut p_comeback = spec.comeback_prob;
    let mut min_absent = 2;
    while pos + 3 < CONTRACT_WEEKS && rng.gen_bool(p_comeback.clamp(0.0, 0.95)) {
        let absent = min_absent + geometric(&mut rng, spec.comeback_continue) as usize;
        let ret = pos + absent + 1;
        if ret > CONTRACT_WEEKS {
            break;
        }
        let run = 1 + geometric(&mut rng, 0.5) as usize;
        for w in ret..=(ret + run - 1).min(CONTRACT_WEEKS) {
            attended[w - 1] = true;
        }
        pos = (ret + run - 1).min(CONTRACT_WEEKS);
        p_comeback *= 0.6;
        min_absent = 1;
    }

    // Visits for attended weeks.
    let s6_base = baseline[5];
    let rate = (spec.visit_rate_base + spec.visit_rate_slope * s6_base).clamp(0.5, 3.8);
    let mut visits = Vec::new();
    for w in 1..=CONTRACT_WEEKS as u32 {
        if !attended[(w - 1) as usize] {
            continue;
        }
        let week_rate = if w <= streak { rate } else { spec.comeback_rate };
        let mut n = 0u32;
        for _ in 0..4 {
            if rng.gen_bool((week_rate / 4.0).clamp(0.0, 1.0)) {
                n += 1;
            }
        }
        let n = n.max(1);
        place_week_visits(
            &mut rng,
            spec,
            arch,
            &core.profile.member_id,
            core.profile.contract_start,
            w,
            n,
            &mut visits,
        );
    }

    let factual_probs = (TRUTH_WEEK_LO..=TRUTH_WEEK_HI)
        .map(|w| factual[(w - 1) as usize])
        .collect();
    Ok(MemberBehavior {
        visits,
        truth: MemberTruth {
            member_id: core.profile.member_id.clone(),
            archetype: core.archetype,
            theta: core.theta,
            streak_weeks: streak,
            factual_probs,
            contributions,
        },
    })
}

/// Generates a full cohort with ground-truth labels. Deterministic in
/// (spec, spec.seed): member sub-streams are derived by seed splitting, so
/// parallel generation yields identical output.
pub fn generate_cohort(spec: &GeneratorSpec) -> Result<GeneratedCohort> {
    spec.validate()?;
    let cores: Vec<MemberCore> = par::map_range(spec.n_members, |i| draw_member_core(spec, i));

    // Cohort-wide binarization so injected effects attach to the same levels
    // the analysis recovers. Treatments with no positive counts stay None.
    let mut levels: Vec<(Treatment, Vec<Level>)> = Vec::new();
    for uplift in &spec.uplifts {
        let counts: Vec<u32> = cores.iter().map(|c| count_of(&c.counts, uplift.treatment)).collect();
        let lv = if counts.iter().any(|&c| c > 0) {
            binarize_four_level(&counts)?
        } else {
            vec![Level::None; counts.len()]
        };
        levels.push((uplift.treatment, lv));
    }

    let behaviors: Vec<Result<MemberBehavior>> =
        par::map_range(spec.n_members, |i| draw_member_behavior(spec, i, &cores[i], &levels));

    let mut members = Vec::with_capacity(spec.n_members);
    let mut interventions = BTreeMap::new();
    let mut events = Vec::new();
    let mut truth_members = Vec::with_capacity(spec.n_members);
    for (core, behavior) in cores.into_iter().zip(behaviors) {
        let behavior = behavior?;
        interventions.insert(core.profile.member_id.clone(), core.counts);
        members.push(core.profile);
        events.extend(behavior.visits);
        truth_members.push(behavior.truth);
    }
    let cohort = CohortDataset::new(members, VisitLog::from_events(events), interventions)?;
    Ok(GeneratedCohort {
        cohort,
        truth: GroundTruth {
            spec: spec.clone(),
            members: truth_members,
        },
    })
}

/// Convenience wrapper over [`GroundTruth::att`] that regenerates the truth
/// for a spec.
pub fn ground_truth_att(
    spec: &GeneratorSpec,
    treatment: Treatment,
    level: Level,
    week: u32,
) -> Result<f64> {
    generate_cohort(spec)?.truth.att(treatment, level, week)
}
