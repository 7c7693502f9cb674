//! Subcommand implementations. Each loads its inputs from the documented
//! file formats, writes its outputs plus a manifest, and leaves everything
//! reproducible from that manifest.

pub mod report;

use std::collections::BTreeMap;
use std::fs;

use anyhow::{anyhow, bail, Context, Result};

use habitforge_core::causal::{
    run_cells, CausalContext, CausalRun, CellOptions, Level, Treatment, TreatmentSpec,
};
use habitforge_core::critical::{
    critical_visit_table, fit_milestone_line, CriticalEntry, CriticalVisitTable,
};
use habitforge_core::demographics::{deviation, Demographic};
use habitforge_core::model::{CohortDataset, CohortRules, MemberId};
use habitforge_core::nmf::{transition_matrix, ClusterModel, ModelDump, NmfOptions};
use habitforge_core::survival::{
    gap_usage_stats, intermediate_gap_cdf, records_to_csv, survival_cdf, survival_records,
    weekly_attendance, SurvivalRecord, WeeklyAttendance,
};
use habitforge_core::synth::{generate_cohort, GeneratorSpec};
use habitforge_core::vectorize::build_matrix;
use habitforge_core::{io, Error};

use crate::config::{parse_weeks, write_manifest, RunConfig};

pub fn write_out(cfg: &RunConfig, name: &str, content: &str) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(name);
    fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_cohort(cfg: &RunConfig) -> Result<CohortDataset> {
    let members = io::load_members(&cfg.input.join("members.csv"))?;
    let visits = io::load_visits(&cfg.input.join("visits.csv"))?;
    let interventions_path = cfg.input.join("interventions.csv");
    let interventions = if interventions_path.exists() {
        io::load_interventions(&interventions_path)?
    } else {
        BTreeMap::new()
    };
    let rules = CohortRules {
        contract_type: Some(cfg.contract_type.clone()),
        paid_only: cfg.paid_only,
    };
    Ok(habitforge_core::model::filter_cohort(
        members,
        visits,
        interventions,
        &rules,
    )?)
}

fn nmf_options(cfg: &RunConfig) -> NmfOptions {
    NmfOptions {
        k: cfg.k,
        max_iters: cfg.nmf_max_iters,
        tol: cfg.nmf_tol,
        seed: cfg.seed,
        restarts: cfg.nmf_restarts,
        normalize_rows: cfg.normalize_rows,
    }
}

fn model_dump_path(cfg: &RunConfig) -> std::path::PathBuf {
    cfg.input.join(format!("cluster_model_w{}.json", cfg.window))
}

/// Hard labels plus cluster metadata, either parsed from a model dump
/// produced by `cluster` or fit fresh from the visit matrix.
pub struct Labeling {
    pub k: usize,
    pub labels: BTreeMap<MemberId, usize>,
}

pub fn load_or_fit_labels(cfg: &RunConfig, cohort: &CohortDataset) -> Result<Labeling> {
    let path = model_dump_path(cfg);
    if path.exists() {
        let dump: ModelDump = serde_json::from_str(&fs::read_to_string(&path)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        let labels = dump
            .members
            .iter()
            .map(|m| (m.member_id.clone(), m.label))
            .collect();
        return Ok(Labeling { k: dump.k, labels });
    }
    let matrix = build_matrix(cohort, cfg.window)?;
    let model = ClusterModel::fit(&matrix, &nmf_options(cfg))?;
    Ok(Labeling {
        k: model.k,
        labels: model.labels_by_member(),
    })
}

pub fn attendance_of(cohort: &CohortDataset) -> Result<Vec<WeeklyAttendance>> {
    cohort
        .members
        .iter()
        .map(|m| {
            weekly_attendance(m.member_id.clone(), cohort.visits.of(&m.member_id), m.contract_start)
                .map_err(anyhow::Error::from)
        })
        .collect()
}

fn critical_table_path(cfg: &RunConfig) -> std::path::PathBuf {
    cfg.input.join("critical_table.csv")
}

fn parse_critical_csv(text: &str) -> Result<CriticalVisitTable> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != "week,critical_visits,max_cdf_diff" {
                bail!("unexpected critical table header '{line}'");
            }
            continue;
        }
        let mut cells = line.split(',');
        let week = cells.next().ok_or_else(|| anyhow!("row {i}: missing week"))?.parse()?;
        let critical_visits = cells
            .next()
            .ok_or_else(|| anyhow!("row {i}: missing count"))?
            .parse()?;
        let max_cdf_diff = cells
            .next()
            .ok_or_else(|| anyhow!("row {i}: missing diff"))?
            .parse()?;
        entries.push(CriticalEntry {
            week,
            critical_visits,
            max_cdf_diff,
        });
    }
    Ok(CriticalVisitTable {
        entries,
        skipped_weeks: vec![],
    })
}

/// Uses a previously dumped critical table when it covers the requested
/// weeks; otherwise recomputes one.
pub fn load_or_fit_critical(
    cfg: &RunConfig,
    cohort: &CohortDataset,
    records: &[SurvivalRecord],
    weeks: std::ops::RangeInclusive<u32>,
) -> Result<CriticalVisitTable> {
    let path = critical_table_path(cfg);
    if path.exists() {
        let table = parse_critical_csv(&fs::read_to_string(&path)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        if weeks.clone().all(|w| table.get(w).is_some()) {
            return Ok(table);
        }
    }
    Ok(critical_visit_table(cohort, records, weeks))
}

pub fn cell_options(cfg: &RunConfig) -> CellOptions {
    CellOptions {
        lambda: cfg.lambda,
        seed: cfg.seed,
        refute_draws: cfg.refute,
        bootstrap_resamples: cfg.bootstrap_resamples,
        caliper: cfg.caliper,
    }
}

/// Expands `--treatment` / `--level` into concrete contrast specs.
pub fn build_specs(cfg: &RunConfig) -> Result<Vec<TreatmentSpec>> {
    let treatments: Vec<Treatment> = match cfg.treatment.as_str() {
        "all" => Treatment::INTERVENTIONS.to_vec(),
        "self_reported" => Treatment::SELF_REPORTED.to_vec(),
        name => vec![Treatment::parse(name)?],
    };
    let mut specs = Vec::new();
    for t in treatments {
        if t.is_self_reported() {
            let n_levels = t.n_levels().expect("self-reported");
            match cfg.level.as_str() {
                "all" => {
                    for threshold in 0..=n_levels - 2 {
                        specs.push(TreatmentSpec::threshold(t, threshold)?);
                    }
                }
                lv if lv.starts_with("gt") => {
                    let threshold: u8 = lv[2..]
                        .parse()
                        .map_err(|_| anyhow!("level '{lv}' is not gtN"))?;
                    specs.push(TreatmentSpec::threshold(t, threshold)?);
                }
                other => bail!("level '{other}' does not apply to self-reported {}", t.as_str()),
            }
        } else {
            match cfg.level.as_str() {
                "all" => {
                    for lv in [Level::Low, Level::Moderate, Level::High] {
                        specs.push(TreatmentSpec::four_level(t, lv)?);
                    }
                }
                lv => specs.push(TreatmentSpec::four_level(t, Level::parse(lv)?)?),
            }
        }
    }
    Ok(specs)
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    let spec = GeneratorSpec::calibrated(cfg.n, cfg.seed);
    let generated = generate_cohort(&spec)?;
    write_out(cfg, "members.csv", &io::members_to_csv(&generated.cohort.members))?;
    write_out(cfg, "visits.csv", &io::visits_to_csv(&generated.cohort.visits))?;
    write_out(
        cfg,
        "interventions.csv",
        &io::interventions_to_csv(&generated.cohort.interventions),
    )?;
    write_out(cfg, "truth.json", &generated.truth.to_json()?)?;
    write_manifest("generate", cfg)?;
    println!(
        "generated {} members, {} visits -> {}",
        generated.cohort.len(),
        generated.cohort.visits.total_visits(),
        cfg.out.display()
    );
    Ok(())
}

pub fn vectorize(cfg: &RunConfig) -> Result<()> {
    let cohort = load_cohort(cfg)?;
    let matrix = build_matrix(&cohort, cfg.window)?;
    write_out(cfg, &format!("visit_matrix_w{}.csv", cfg.window), &matrix.to_csv())?;
    write_manifest("vectorize", cfg)?;
    println!(
        "vectorized {} members at window {} ({} zero rows)",
        matrix.n_rows(),
        cfg.window,
        matrix.zero_row_ids().len()
    );
    Ok(())
}

pub fn cluster(cfg: &RunConfig) -> Result<()> {
    let cohort = load_cohort(cfg)?;
    let matrix = build_matrix(&cohort, cfg.window)?;
    let model = ClusterModel::fit(&matrix, &nmf_options(cfg))?;
    write_out(
        cfg,
        &format!("cluster_model_w{}.json", cfg.window),
        &serde_json::to_string_pretty(&model.to_dump())?,
    )?;

    let later_matrix = build_matrix(&cohort, cfg.transition_window)?;
    let later = if cfg.refit {
        ClusterModel::fit(&later_matrix, &nmf_options(cfg))?
    } else {
        model.project(&later_matrix, cfg.nmf_max_iters)?
    };
    let transition = transition_matrix(
        &model.member_ids,
        &model.labels,
        &later.member_ids,
        &later.labels,
        cfg.k,
    )?;
    write_out(cfg, "transition_matrix.csv", &transition.to_csv())?;

    let mut cdf_csv = String::from("cluster,name,probability,cum_fraction\n");
    let names = model.cluster_names();
    for c in 0..model.k {
        for (p, frac) in habitforge_core::nmf::membership_prob_cdf(&model.probabilities, &model.labels, c)
        {
            use std::fmt::Write as _;
            let _ = writeln!(cdf_csv, "{c},{},{p},{frac}", names[c]);
        }
    }
    write_out(cfg, "membership_cdf.csv", &cdf_csv)?;
    write_manifest("cluster", cfg)?;
    println!(
        "clustered k={} (rel err {:.4}); transition diagonal {:.1}%",
        cfg.k,
        model.relative_error,
        100.0 * transition.diagonal_share()
    );
    Ok(())
}

pub fn survival(cfg: &RunConfig) -> Result<()> {
    let cohort = load_cohort(cfg)?;
    let attendance = attendance_of(&cohort)?;
    let records = survival_records(&attendance, cfg.gap_tolerance);
    write_out(cfg, "survival_records.csv", &records_to_csv(&records))?;

    let profile_of: BTreeMap<&MemberId, &habitforge_core::model::MemberProfile> =
        cohort.members.iter().map(|m| (&m.member_id, m)).collect();
    let age_band = |age: u32| -> String {
        for &(lo, hi) in &cfg.age_bands {
            if age >= lo && hi.map_or(true, |h| age <= h) {
                return match hi {
                    Some(h) => format!("{lo}-{h}"),
                    None => format!("{lo}+"),
                };
            }
        }
        "other".into()
    };

    let mut cdf_csv = String::from("group,streak_weeks,cum_fraction\n");
    let mut summary_csv = String::from("group,n,surviving_week6,surviving_week17\n");
    let groupers: Vec<(&str, Box<dyn Fn(&MemberId) -> Option<String>>)> = vec![
        ("all", Box::new(|_: &MemberId| Some("all".to_string()))),
        (
            "gender",
            Box::new(|id: &MemberId| profile_of.get(id).map(|p| p.gender.as_str().to_string())),
        ),
        (
            "age_band",
            Box::new(|id: &MemberId| profile_of.get(id).map(|p| age_band(p.age))),
        ),
    ];
    let mut groupers = groupers;
    // Cluster grouping joins in when a model dump from `cluster` is present.
    let model_path = model_dump_path(cfg);
    if model_path.exists() {
        let dump: ModelDump = serde_json::from_str(&fs::read_to_string(&model_path)?)
            .with_context(|| format!("parsing {}", model_path.display()))?;
        let names = dump.cluster_names.clone();
        let label_of: BTreeMap<MemberId, usize> = dump
            .members
            .iter()
            .map(|m| (m.member_id.clone(), m.label))
            .collect();
        groupers.push((
            "cluster",
            Box::new(move |id: &MemberId| label_of.get(id).map(|&c| format!("cluster_{}", names[c]))),
        ));
    }
    for (_, grouper) in &groupers {
        for cdf in survival_cdf(&records, grouper)? {
            use std::fmt::Write as _;
            for (streak, frac) in &cdf.points {
                let _ = writeln!(cdf_csv, "{},{streak},{frac}", cdf.group);
            }
            let _ = writeln!(
                summary_csv,
                "{},{},{},{}",
                cdf.group, cdf.n, cdf.surviving_week6, cdf.surviving_week17
            );
        }
    }
    write_out(cfg, "survival_cdf.csv", &cdf_csv)?;
    write_out(cfg, "survival_summary.csv", &summary_csv)?;

    let stats = gap_usage_stats(&records, &cfg.survival_bins);
    let mut gaps_csv = String::from("week,gap_count\n");
    for (w, count) in stats.gaps_per_week.iter().enumerate() {
        use std::fmt::Write as _;
        let _ = writeln!(gaps_csv, "{},{count}", w + 1);
    }
    write_out(cfg, "gaps_per_week.csv", &gaps_csv)?;

    let mut pos_csv = String::from("bin,position_decile,gap_count,fraction\n");
    for bin in &stats.by_survival_bin {
        use std::fmt::Write as _;
        for (d, (&count, &frac)) in bin.counts.iter().zip(&bin.fractions).enumerate() {
            let _ = writeln!(pos_csv, "{}-{},{},{count},{frac}", bin.bin_lo, bin.bin_hi, d + 1);
        }
    }
    write_out(cfg, "gap_positions.csv", &pos_csv)?;

    let mut joint_csv = String::from("streak_weeks,gaps_used,members\n");
    for ((streak, gaps), count) in &stats.joint {
        use std::fmt::Write as _;
        let _ = writeln!(joint_csv, "{streak},{gaps},{count}");
    }
    write_out(cfg, "gap_joint.csv", &joint_csv)?;

    let mut inter_csv = String::from("gap_length,cum_fraction\n");
    for (len, frac) in intermediate_gap_cdf(&attendance) {
        use std::fmt::Write as _;
        let _ = writeln!(inter_csv, "{len},{frac}");
    }
    write_out(cfg, "intermediate_gap_cdf.csv", &inter_csv)?;
    write_manifest("survival", cfg)?;
    println!("survival records for {} members -> {}", records.len(), cfg.out.display());
    Ok(())
}

pub fn critical(cfg: &RunConfig) -> Result<()> {
    let cohort = load_cohort(cfg)?;
    let attendance = attendance_of(&cohort)?;
    let records = survival_records(&attendance, cfg.gap_tolerance);
    let weeks = parse_weeks(&cfg.weeks)?;
    let table = critical_visit_table(&cohort, &records, weeks);
    write_out(cfg, "critical_table.csv", &table.to_csv())?;
    match fit_milestone_line(&table) {
        Ok(fit) => write_out(cfg, "milestone_fit.json", &serde_json::to_string_pretty(&fit)?)?,
        Err(e) => eprintln!("milestone fit skipped: {e}"),
    }
    write_manifest("critical", cfg)?;
    println!(
        "critical table: {} entries, {} skipped -> {}",
        table.entries.len(),
        table.skipped_weeks.len(),
        cfg.out.display()
    );
    Ok(())
}

pub fn deviations(cfg: &RunConfig) -> Result<()> {
    let cohort = load_cohort(cfg)?;
    let labeling = load_or_fit_labels(cfg, &cohort)?;
    let gender = deviation(&cohort.members, &labeling.labels, labeling.k, &Demographic::Gender)?;
    write_out(cfg, "deviations_gender.csv", &gender.to_csv())?;
    let age = deviation(
        &cohort.members,
        &labeling.labels,
        labeling.k,
        &Demographic::AgeBands(cfg.age_bands.clone()),
    )?;
    write_out(cfg, "deviations_age.csv", &age.to_csv())?;
    write_manifest("deviations", cfg)?;
    println!("deviation reports -> {}", cfg.out.display());
    Ok(())
}

pub fn causal(cfg: &RunConfig) -> Result<()> {
    let cohort = load_cohort(cfg)?;
    let labeling = load_or_fit_labels(cfg, &cohort)?;
    let attendance = attendance_of(&cohort)?;
    let records = survival_records(&attendance, cfg.gap_tolerance);
    let weeks = parse_weeks(&cfg.weeks)?;
    let table = load_or_fit_critical(cfg, &cohort, &records, weeks.clone())?;
    let ctx = CausalContext {
        cohort: &cohort,
        cluster_labels: &labeling.labels,
        k: labeling.k,
        critical: &table,
    };
    let specs = build_specs(cfg)?;
    let mut cells: Vec<(TreatmentSpec, u32, Option<usize>)> = Vec::new();
    for spec in &specs {
        for week in weeks.clone() {
            cells.push((*spec, week, None));
        }
        if cfg.per_cluster {
            for c in 0..labeling.k {
                for week in [*weeks.start(), *weeks.end()] {
                    cells.push((*spec, week, Some(c)));
                }
            }
        }
    }
    let run = run_cells(&ctx, &cells, &cell_options(cfg));
    write_causal_outputs(cfg, &run)?;
    write_binarization_cuts(cfg, &cohort, &specs)?;
    write_manifest("causal", cfg)?;
    println!(
        "causal run: {} estimates, {} skipped cells -> {}",
        run.estimates.len(),
        run.failures.len(),
        cfg.out.display()
    );
    Ok(())
}

pub fn write_causal_outputs(cfg: &RunConfig, run: &CausalRun) -> Result<()> {
    write_out(cfg, "causal_estimates.csv", &run.to_csv())?;
    if !run.failures.is_empty() {
        let mut csv = String::from("treatment,level,week,cluster,reason\n");
        for f in &run.failures {
            use std::fmt::Write as _;
            let cluster = f.cluster.map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                f.treatment.as_str(),
                f.level,
                f.week,
                cluster,
                f.reason.replace(',', ";")
            );
        }
        write_out(cfg, "causal_skipped.csv", &csv)?;
    }
    Ok(())
}

/// Records the count thresholds the four-level binarization resolved to,
/// per intervention treatment in the run.
pub fn write_binarization_cuts(
    cfg: &RunConfig,
    cohort: &CohortDataset,
    specs: &[TreatmentSpec],
) -> Result<()> {
    use habitforge_core::causal::binarize_four_level;
    let mut cuts = serde_json::Map::new();
    let mut seen = std::collections::BTreeSet::new();
    for spec in specs {
        if spec.treatment.is_self_reported() || !seen.insert(spec.treatment) {
            continue;
        }
        let values: Vec<u32> = cohort
            .members
            .iter()
            .map(|m| {
                let c = cohort.interventions_of(&m.member_id);
                match spec.treatment {
                    Treatment::GroupLessons => c.group_lessons,
                    Treatment::PtSessions => c.pt_sessions,
                    Treatment::InvitationCredits => c.invitation_credits,
                    Treatment::DistinctClubs => c.distinct_clubs,
                    Treatment::DistinctGroupLessons => c.distinct_group_lessons,
                    _ => 0,
                }
            })
            .collect();
        let levels = binarize_four_level(&values)?;
        let max_at = |target| {
            values
                .iter()
                .zip(&levels)
                .filter(|(_, &l)| l == target)
                .map(|(&v, _)| v)
                .max()
        };
        cuts.insert(
            spec.treatment.as_str().to_string(),
            serde_json::json!({
                "low_max": max_at(habitforge_core::causal::Level::Low),
                "moderate_max": max_at(habitforge_core::causal::Level::Moderate),
                "max": values.iter().max(),
            }),
        );
    }
    if !cuts.is_empty() {
        write_out(cfg, "binarization_cuts.json", &serde_json::to_string_pretty(&cuts)?)?;
    }
    Ok(())
}

/// Maps core errors to the module-qualified message contract.
pub fn qualify(stage: &str, err: anyhow::Error) -> anyhow::Error {
    match err.downcast_ref::<Error>() {
        Some(_) => anyhow!("{stage}: {err}"),
        None => err.context(format!("{stage} failed")),
    }
}
