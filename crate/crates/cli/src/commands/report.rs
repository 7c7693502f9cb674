//! The `report` subcommand: runs the whole pipeline in memory and renders
//! the figure set as standalone SVGs plus a machine-readable summary.

use std::collections::BTreeMap;

use anyhow::Result;
use serde::Serialize;

use habitforge_core::causal::{run_cells, CausalContext, TreatmentSpec};
use habitforge_core::critical::{critical_visit_table, fit_milestone_line, MilestoneFit};
use habitforge_core::demographics::{deviation, Demographic};
use habitforge_core::model::MemberId;
use habitforge_core::nmf::{membership_prob_cdf, transition_matrix, ClusterModel, NmfOptions};
use habitforge_core::survival::{
    gap_usage_stats, intermediate_gap_cdf, survival_cdf, survival_records,
    DEFAULT_SURVIVAL_BINS,
};
use habitforge_core::vectorize::{build_matrix, HOUR_BINS};

use crate::config::{parse_weeks, write_manifest, RunConfig};
use crate::svg::{self, Series};

use super::{attendance_of, build_specs, cell_options, load_cohort, write_out};

#[derive(Serialize)]
struct Summary {
    members: usize,
    total_visits: usize,
    k: usize,
    cluster_names: Vec<String>,
    nmf_relative_error: f64,
    transition_diagonal_share: f64,
    fraction_streak_lt6: f64,
    fraction_surviving_week17: f64,
    intermediate_gap_cdf1: f64,
    critical_week6: Option<u32>,
    milestone_fit: Option<MilestoneFit>,
    causal_estimates: usize,
    causal_failures: usize,
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let cohort = load_cohort(cfg)?;
    let attendance = attendance_of(&cohort)?;
    let records = survival_records(&attendance, cfg.gap_tolerance);

    // Clustering at the primary window, projected onto the later window.
    let matrix = build_matrix(&cohort, cfg.window)?;
    let opts = NmfOptions {
        k: cfg.k,
        max_iters: cfg.nmf_max_iters,
        tol: cfg.nmf_tol,
        seed: cfg.seed,
        restarts: cfg.nmf_restarts,
        normalize_rows: cfg.normalize_rows,
    };
    let model = ClusterModel::fit(&matrix, &opts)?;
    let names = model.cluster_names();
    let later = if cfg.refit {
        ClusterModel::fit(&build_matrix(&cohort, cfg.transition_window)?, &opts)?
    } else {
        model.project(&build_matrix(&cohort, cfg.transition_window)?, cfg.nmf_max_iters)?
    };
    let transition = transition_matrix(
        &model.member_ids,
        &model.labels,
        &later.member_ids,
        &later.labels,
        cfg.k,
    )?;

    // Figure: per-cluster hour-of-day profiles.
    let hour_cols: Vec<String> = (0..HOUR_BINS).map(|h| format!("{:02}", h + 6)).collect();
    let profiles: Vec<Vec<f64>> = (0..model.k)
        .map(|c| {
            let mut by_hour = vec![0.0; HOUR_BINS];
            for (j, &v) in model.h.row(c).iter().enumerate() {
                by_hour[j % HOUR_BINS] += v;
            }
            by_hour
        })
        .collect();
    write_out(
        cfg,
        "cluster_profiles.svg",
        &svg::heatmap(&profiles, &names, &hour_cols, "Cluster hour-of-day profiles", false),
    )?;

    // Figure: membership probability CDFs.
    let cdf_series: Vec<Series> = (0..model.k)
        .map(|c| Series {
            label: names[c].clone(),
            points: membership_prob_cdf(&model.probabilities, &model.labels, c)
                .into_iter()
                .collect(),
        })
        .collect();
    write_out(
        cfg,
        "membership_cdf.svg",
        &svg::step_chart(
            &cdf_series,
            "Membership probability CDF by cluster",
            "assigned-cluster probability",
            "cumulative fraction",
        ),
    )?;

    // Figure: transition matrix percentages.
    write_out(
        cfg,
        "transition_matrix.svg",
        &svg::heatmap(
            &transition.percentages,
            &names,
            &names,
            &format!(
                "Cluster transition, weeks {} to {} (% of members)",
                cfg.window, cfg.transition_window
            ),
            true,
        ),
    )?;

    // Figures: survival CDFs for the whole cohort, by gender, by cluster.
    let profile_of: BTreeMap<&MemberId, &habitforge_core::model::MemberProfile> =
        cohort.members.iter().map(|m| (&m.member_id, m)).collect();
    let all_curves = survival_cdf(&records, |_| Some("all".into()))?;
    let gender_curves = survival_cdf(&records, |id| {
        profile_of.get(id).map(|p| p.gender.as_str().to_string())
    })?;
    let label_of: BTreeMap<MemberId, usize> = model.labels_by_member();
    let cluster_curves = survival_cdf(&records, |id| {
        label_of.get(id).map(|&c| names[c].clone())
    })?;
    let to_series = |curves: &[habitforge_core::survival::SurvivalCdf]| -> Vec<Series> {
        curves
            .iter()
            .map(|c| Series {
                label: c.group.clone(),
                points: c.points.iter().map(|&(w, p)| (w as f64, p)).collect(),
            })
            .collect()
    };
    let mut combined = to_series(&all_curves);
    combined.extend(to_series(&gender_curves));
    write_out(
        cfg,
        "survival_cdf.svg",
        &svg::step_chart(&combined, "Survival streak CDF", "streak weeks", "cumulative fraction"),
    )?;
    write_out(
        cfg,
        "survival_cdf_cluster.svg",
        &svg::step_chart(
            &to_series(&cluster_curves),
            "Survival streak CDF by cluster",
            "streak weeks",
            "cumulative fraction",
        ),
    )?;

    // Figures: gap usage.
    let stats = gap_usage_stats(&records, &DEFAULT_SURVIVAL_BINS);
    let gaps_series = [Series {
        label: "gap weeks".into(),
        points: stats
            .gaps_per_week
            .iter()
            .enumerate()
            .map(|(w, &c)| ((w + 1) as f64, c as f64))
            .collect(),
    }];
    write_out(
        cfg,
        "gaps_per_week.svg",
        &svg::line_chart(&gaps_series, "Gap weeks by membership week", "membership week", "gap count"),
    )?;
    let pos_series: Vec<Series> = stats
        .by_survival_bin
        .iter()
        .map(|bin| Series {
            label: format!("streak {}-{}", bin.bin_lo, bin.bin_hi),
            points: bin
                .fractions
                .iter()
                .enumerate()
                .map(|(d, &f)| ((d + 1) as f64 / 10.0, f))
                .collect(),
        })
        .collect();
    write_out(
        cfg,
        "gap_positions.svg",
        &svg::line_chart(
            &pos_series,
            "Gap position inside the streak",
            "relative position",
            "fraction of bin's gaps",
        ),
    )?;
    let max_gaps = stats.joint.keys().map(|&(_, g)| g).max().unwrap_or(0).min(8);
    let joint_grid: Vec<Vec<f64>> = (0..=max_gaps)
        .map(|g| {
            (1..=52u32)
                .map(|s| *stats.joint.get(&(s, g)).unwrap_or(&0) as f64)
                .collect()
        })
        .collect();
    let gap_rows: Vec<String> = (0..=max_gaps).map(|g| format!("{g} gaps")).collect();
    let week_cols: Vec<String> = (1..=52).map(|w| w.to_string()).collect();
    write_out(
        cfg,
        "gap_joint.svg",
        &svg::heatmap(&joint_grid, &gap_rows, &week_cols, "Members by streak length and gaps used", false),
    )?;
    let inter = intermediate_gap_cdf(&attendance);
    write_out(
        cfg,
        "intermediate_gap_cdf.svg",
        &svg::step_chart(
            &[Series {
                label: "gaps".into(),
                points: inter.iter().map(|&(l, p)| (l as f64, p)).collect(),
            }],
            "Intermediate gap length CDF",
            "gap length (weeks)",
            "cumulative fraction",
        ),
    )?;

    // Figure: critical visits and the milestone fit.
    let full_table = critical_visit_table(&cohort, &records, 6..=52);
    let points: Vec<(f64, f64)> = full_table
        .entries
        .iter()
        .map(|e| (e.week as f64, e.critical_visits as f64))
        .collect();
    let milestone_fit = fit_milestone_line(&full_table).ok();
    if let Some(fit) = &milestone_fit {
        write_out(
            cfg,
            "critical_visits.svg",
            &svg::scatter_with_line(
                &points,
                fit.slope,
                fit.intercept,
                "Critical visits per milestone week",
                "week",
                "visits",
            ),
        )?;
    }

    // Figures: demographic deviations.
    for (file, demo, title) in [
        (
            "deviations_gender.svg",
            Demographic::Gender,
            "Gender deviation by cluster",
        ),
        (
            "deviations_age.svg",
            Demographic::AgeBands(cfg.age_bands.clone()),
            "Age band deviation by cluster",
        ),
    ] {
        let rep = deviation(&cohort.members, &label_of, cfg.k, &demo)?;
        let groups = demo.group_labels();
        let grid: Vec<Vec<f64>> = (0..cfg.k)
            .map(|c| {
                groups
                    .iter()
                    .map(|g| {
                        rep.rows
                            .iter()
                            .find(|r| r.cluster == c && &r.group == g)
                            .and_then(|r| r.deviation)
                            .unwrap_or(0.0)
                    })
                    .collect()
            })
            .collect();
        write_out(cfg, file, &svg::heatmap(&grid, &names, &groups, title, true))?;
    }

    // Figure: effect timeline for the configured treatment, plus per-cluster
    // effects at the window endpoints.
    let weeks = parse_weeks(&cfg.weeks)?;
    let table = critical_visit_table(&cohort, &records, weeks.clone());
    let ctx = CausalContext {
        cohort: &cohort,
        cluster_labels: &label_of,
        k: cfg.k,
        critical: &table,
    };
    let specs = build_specs(cfg)?;
    let mut cells: Vec<(TreatmentSpec, u32, Option<usize>)> = Vec::new();
    for spec in &specs {
        for week in weeks.clone() {
            cells.push((*spec, week, None));
        }
        for c in 0..cfg.k {
            for week in [*weeks.start(), *weeks.end()] {
                cells.push((*spec, week, Some(c)));
            }
        }
    }
    let run = run_cells(&ctx, &cells, &cell_options(cfg));
    super::write_causal_outputs(cfg, &run)?;

    let mut timeline: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for e in run.estimates.iter().filter(|e| e.cluster.is_none()) {
        timeline
            .entry(format!("{} {}", e.treatment.as_str(), e.level))
            .or_default()
            .push((e.week as f64, e.att));
    }
    let timeline_series: Vec<Series> = timeline
        .into_iter()
        .map(|(label, points)| Series { label, points })
        .collect();
    write_out(
        cfg,
        "causal_timeline.svg",
        &svg::line_chart(
            &timeline_series,
            "Estimated effect on the milestone outcome",
            "outcome week",
            "matched effect (ATT)",
        ),
    )?;

    let week_lo = *weeks.start();
    let week_hi = *weeks.end();
    let cluster_grid: Vec<Vec<f64>> = (0..cfg.k)
        .map(|c| {
            [week_lo, week_hi]
                .iter()
                .map(|&w| {
                    run.estimates
                        .iter()
                        .find(|e| e.cluster == Some(c) && e.week == w)
                        .map(|e| e.att)
                        .unwrap_or(0.0)
                })
                .collect()
        })
        .collect();
    write_out(
        cfg,
        "causal_by_cluster.svg",
        &svg::heatmap(
            &cluster_grid,
            &names,
            &[format!("week {week_lo}"), format!("week {week_hi}")],
            &format!("Per-cluster effects ({} {})", cfg.treatment, cfg.level),
            true,
        ),
    )?;

    let all_cdf = &all_curves[0];
    let summary = Summary {
        members: cohort.len(),
        total_visits: cohort.visits.total_visits(),
        k: cfg.k,
        cluster_names: names,
        nmf_relative_error: model.relative_error,
        transition_diagonal_share: transition.diagonal_share(),
        fraction_streak_lt6: 1.0 - all_cdf.surviving_week6,
        fraction_surviving_week17: all_cdf.surviving_week17,
        intermediate_gap_cdf1: inter
            .iter()
            .find(|(l, _)| *l == 1)
            .map(|&(_, p)| p)
            .unwrap_or(0.0),
        critical_week6: full_table.get(6).map(|e| e.critical_visits),
        milestone_fit,
        causal_estimates: run.estimates.len(),
        causal_failures: run.failures.len(),
    };
    write_out(cfg, "summary.json", &serde_json::to_string_pretty(&summary)?)?;
    write_manifest("report", cfg)?;
    println!("report figures + summary.json -> {}", cfg.out.display());
    Ok(())
}
