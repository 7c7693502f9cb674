//! Acceptance suite: every release criterion as one test, each printing a
//! pass line with its runtime. Heavy criteria serialize on a shared lock so
//! the wall-clock bounds are not distorted by concurrent tests.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use habitforge_core::causal::{
    estimate_cell, naive_cell_estimate, placebo_estimate, CausalContext, CellOptions, Level,
    Treatment, TreatmentSpec,
};
use habitforge_core::critical::{critical_from_counts, critical_visit_table, fit_milestone_line};
use habitforge_core::demographics::{deviation, Demographic};
use habitforge_core::model::{CohortDataset, MemberId};
use habitforge_core::nmf::{nmf_factorize, transition_matrix, ClusterModel, NmfOptions};
use habitforge_core::survival::{
    intermediate_gap_cdf, survival_cdf, survival_records, survival_streak, weekly_attendance,
    SurvivalRecord, WeeklyAttendance, CONTRACT_WEEKS,
};
use habitforge_core::synth::{generate_cohort, GeneratedCohort, GeneratorSpec};
use habitforge_core::vectorize::build_matrix;

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy_lock() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: &str, elapsed: Duration) {
    println!("acceptance {criterion}: PASS [{elapsed:.2?}]");
}

fn attendance_of(cohort: &CohortDataset) -> Vec<WeeklyAttendance> {
    cohort
        .members
        .iter()
        .map(|m| weekly_attendance(m.member_id.clone(), cohort.visits.of(&m.member_id), m.contract_start).unwrap())
        .collect()
}

fn records_of(cohort: &CohortDataset) -> Vec<SurvivalRecord> {
    survival_records(&attendance_of(cohort), 1)
}

/// Prefix-enumeration reference for the streak metric: the longest attended
/// week whose prefix contains no two consecutive absent weeks.
fn streak_oracle(attended: &[bool]) -> u32 {
    let mut best = 0;
    for l in 1..=attended.len() {
        if !attended[l - 1] {
            continue;
        }
        let mut run = 0;
        let mut broken = false;
        for &p in &attended[..l] {
            run = if p { 0 } else { run + 1 };
            if run >= 2 {
                broken = true;
                break;
            }
        }
        if !broken {
            best = l as u32;
        }
    }
    best
}

#[test]
fn criterion_01_streak_oracle_equivalence() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    for i in 0..10_000 {
        let density = 0.05 + 0.9 * (i % 97) as f64 / 97.0;
        let attended: Vec<bool> = (0..CONTRACT_WEEKS).map(|_| rng.gen_bool(density)).collect();
        let att = WeeklyAttendance::from_bools(MemberId::from("m"), attended.clone()).unwrap();
        let got = survival_streak(&att, 1).streak_weeks;
        let want = streak_oracle(&attended);
        assert_eq!(got, want, "series {i}: {attended:?}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    report("criterion 1 (streak oracle equivalence, 10k series)", elapsed);
}

fn permutations_of_five() -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut perm = vec![0, 1, 2, 3, 4];
    fn rec(perm: &mut Vec<usize>, l: usize, out: &mut Vec<Vec<usize>>) {
        if l == perm.len() {
            out.push(perm.clone());
            return;
        }
        for i in l..perm.len() {
            perm.swap(l, i);
            rec(perm, l + 1, out);
            perm.swap(l, i);
        }
    }
    rec(&mut perm, 0, &mut out);
    out
}

/// Permutation-matched label accuracy against archetype truth, over members
/// the model actually labels (zero-visit members are flagged, not labeled).
fn recovery_accuracy(gen: &GeneratedCohort, model: &ClusterModel) -> f64 {
    let truth = gen.truth.archetype_labels();
    let mut best = 0usize;
    let mut total = 0usize;
    for &z in &model.zero_row {
        if !z {
            total += 1;
        }
    }
    for p in permutations_of_five() {
        let acc = model
            .member_ids
            .iter()
            .zip(&model.labels)
            .zip(&model.zero_row)
            .filter(|((id, &l), &z)| !z && p[l] == truth[id])
            .count();
        best = best.max(acc);
    }
    best as f64 / total as f64
}

#[test]
fn criterion_02_nmf_monotonicity_and_recovery() {
    let _guard = heavy_lock();
    let start = Instant::now();

    // Objective non-increasing on every iteration across 20 seeds.
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let a = Array2::from_shape_fn((40, 25), |_| rng.gen::<f64>() * 4.0);
        let fit = nmf_factorize(
            &a,
            &NmfOptions {
                k: 5,
                max_iters: 120,
                tol: 0.0,
                seed,
                restarts: 1,
                normalize_rows: false,
            },
        )
        .unwrap();
        for pair in fit.objective.windows(2) {
            assert!(
                pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-12,
                "seed {seed}: objective rose {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    // Rank-1 exact reconstruction.
    let u = ndarray::array![2.0, 0.5, 1.0, 3.0, 0.1, 1.7, 0.9];
    let v = ndarray::array![1.0, 0.0, 0.4, 2.2, 0.8];
    let rank1 = u
        .view()
        .insert_axis(Axis(1))
        .dot(&v.view().insert_axis(Axis(0)));
    let fit = nmf_factorize(
        &rank1,
        &NmfOptions {
            k: 1,
            max_iters: 1000,
            tol: 0.0,
            seed: 3,
            restarts: 1,
                normalize_rows: false,
        },
    )
    .unwrap();
    assert!(fit.relative_error < 1e-6, "rank-1 rel err {}", fit.relative_error);

    // Archetype recovery on a low-noise cohort of 5,000.
    let gen = generate_cohort(&GeneratorSpec::low_noise(5000, 7)).unwrap();
    let matrix = build_matrix(&gen.cohort, 6).unwrap();
    let model = ClusterModel::fit(&matrix, &NmfOptions::default()).unwrap();
    let accuracy = recovery_accuracy(&gen, &model);
    assert!(accuracy >= 0.95, "recovery accuracy {accuracy}");

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    report(
        &format!("criterion 2 (NMF monotone objective, rank-1 exact, recovery {accuracy:.3})"),
        elapsed,
    );
}

/// Exhaustive reference for the critical count: scan every integer up to the
/// max observed count.
fn critical_oracle(short: &[u32], long: &[u32]) -> (u32, f64) {
    let hi = short.iter().chain(long).copied().max().unwrap_or(0);
    let cdf =
        |vals: &[u32], x: u32| vals.iter().filter(|&&v| v <= x).count() as f64 / vals.len() as f64;
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
fn criterion_03_critical_visits_oracle_equivalence() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC817);
    for case in 0..200 {
        let n_short = rng.gen_range(1..120);
        let n_long = rng.gen_range(1..120);
        let spread = rng.gen_range(5..60);
        let short: Vec<u32> = (0..n_short).map(|_| rng.gen_range(0..spread)).collect();
        let long: Vec<u32> = (0..n_long).map(|_| rng.gen_range(0..spread)).collect();
        let got = critical_from_counts(&short, &long, 6).unwrap();
        let want = critical_oracle(&short, &long);
        assert_eq!(got.0, want.0, "case {case}");
        assert!((got.1 - want.1).abs() < 1e-12, "case {case}");
    }
    let (c, diff) = critical_from_counts(&[1, 2, 3], &[5, 6, 7], 6).unwrap();
    assert_eq!(c, 3);
    assert!((diff - 1.0).abs() < 1e-12);

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    report("criterion 3 (critical visits oracle equivalence, 200 cohorts)", elapsed);
}

#[test]
fn criterion_04_milestone_linear_fit() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let gen = generate_cohort(&GeneratorSpec::calibrated(20_000, 4242)).unwrap();
    let records = records_of(&gen.cohort);
    let table = critical_visit_table(&gen.cohort, &records, 6..=52);
    let fit = fit_milestone_line(&table).unwrap();
    assert!(
        (1.8..=2.2).contains(&fit.slope),
        "slope {} outside [1.8, 2.2]",
        fit.slope
    );
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    report(
        &format!("criterion 4 (milestone fit slope {:.3})", fit.slope),
        elapsed,
    );
}

#[test]
fn criterion_05_deviation_mixture_identity() {
    let start = Instant::now();

    // Mixture identity on generated cohorts of several sizes and seeds.
    for (n, seed) in [(500usize, 1u64), (2000, 2), (5000, 3)] {
        let gen = generate_cohort(&GeneratorSpec::calibrated(n, seed)).unwrap();
        let labels: BTreeMap<MemberId, usize> = gen.truth.archetype_labels();
        for demo in [Demographic::Gender, Demographic::default_age_bands()] {
            let report = deviation(&gen.cohort.members, &labels, 5, &demo).unwrap();
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
                assert!(
                    (mixture - p_marginal).abs() < 1e-12,
                    "mixture {mixture} vs marginal {p_marginal}"
                );
            }
        }
    }

    // A cohort whose clusters all share the population composition has zero
    // deviation everywhere.
    let gen = generate_cohort(&GeneratorSpec::calibrated(400, 9)).unwrap();
    let labels: BTreeMap<MemberId, usize> = gen
        .cohort
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| (m.member_id.clone(), i % 2))
        .collect();
    // Duplicate members across both clusters to force identical composition.
    let mut members = gen.cohort.members.clone();
    let mut dup_labels = BTreeMap::new();
    for (i, m) in gen.cohort.members.iter().enumerate() {
        let mut c = m.clone();
        c.member_id = MemberId(format!("dup_{}", m.member_id));
        dup_labels.insert(c.member_id.clone(), 1 - i % 2);
        members.push(c);
        let _ = labels;
        dup_labels.insert(m.member_id.clone(), i % 2);
    }
    let report_rows = deviation(&members, &dup_labels, 2, &Demographic::Gender).unwrap();
    for row in &report_rows.rows {
        if let Some(d) = row.deviation {
            assert!(d.abs() < 1e-12, "cluster {} group {} deviation {d}", row.cluster, row.group);
        }
    }

    let elapsed = start.elapsed();
    report("criterion 5 (deviation mixture identity to 1e-12)", elapsed);
}

struct CausalFixture {
    gen: GeneratedCohort,
    labels: BTreeMap<MemberId, usize>,
    table: habitforge_core::critical::CriticalVisitTable,
}

fn causal_fixture(n: usize, seed: u64, uplift: f64) -> CausalFixture {
    let gen = generate_cohort(&GeneratorSpec::confounded_uplift(n, seed, uplift)).unwrap();
    let records = records_of(&gen.cohort);
    let table = critical_visit_table(&gen.cohort, &records, 6..=17);
    let matrix = build_matrix(&gen.cohort, 6).unwrap();
    let model = ClusterModel::fit(&matrix, &NmfOptions::default()).unwrap();
    let labels = model.labels_by_member();
    CausalFixture { gen, labels, table }
}

#[test]
fn criterion_06_att_recovery_beats_naive() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let fx = causal_fixture(20_000, 99, 0.2);
    let ctx = CausalContext {
        cohort: &fx.gen.cohort,
        cluster_labels: &fx.labels,
        k: 5,
        critical: &fx.table,
    };
    let spec = TreatmentSpec::four_level(Treatment::PtSessions, Level::High).unwrap();
    let week = 6;
    let truth = fx.gen.truth.att(Treatment::PtSessions, Level::High, week).unwrap();
    let est = estimate_cell(&ctx, &spec, week, None, &CellOptions::default()).unwrap();
    let naive = naive_cell_estimate(&ctx, &spec, week, None).unwrap();

    let psm_err = (est.att - truth).abs();
    let naive_err = (naive - truth).abs();
    assert!(psm_err <= 0.05, "PSM err {psm_err} (att {} truth {truth})", est.att);
    assert!(
        naive_err > psm_err,
        "matching did not beat the naive contrast: naive err {naive_err}, PSM err {psm_err}"
    );

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    report(
        &format!(
            "criterion 6 (ATT recovery: truth {truth:.3}, PSM {:.3}, naive {naive:.3})",
            est.att
        ),
        elapsed,
    );
}

#[test]
fn criterion_07_placebo_null() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let fx = causal_fixture(10_000, 17, 0.2);
    let ctx = CausalContext {
        cohort: &fx.gen.cohort,
        cluster_labels: &fx.labels,
        k: 5,
        critical: &fx.table,
    };
    let spec = TreatmentSpec::four_level(Treatment::PtSessions, Level::High).unwrap();
    let opts = CellOptions::default();
    let mut contained = 0;
    for rep in 0..20u64 {
        let (att, band) = placebo_estimate(&ctx, &spec, 6, &opts, 0x71AC_EB0 ^ rep).unwrap();
        if band.0 <= 0.0 && 0.0 <= band.1 {
            contained += 1;
        } else {
            println!("placebo rep {rep}: att {att:.4} band [{:.4}, {:.4}] misses 0", band.0, band.1);
        }
    }
    assert!(contained >= 18, "only {contained}/20 placebo bands contained 0");
    let elapsed = start.elapsed();
    report(
        &format!("criterion 7 (placebo null: {contained}/20 bands contain 0)"),
        elapsed,
    );
}

#[test]
fn criterion_08_refuter_stability() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let fx = causal_fixture(10_000, 23, 0.2);
    let ctx = CausalContext {
        cohort: &fx.gen.cohort,
        cluster_labels: &fx.labels,
        k: 5,
        critical: &fx.table,
    };
    let spec = TreatmentSpec::four_level(Treatment::PtSessions, Level::High).unwrap();
    let opts = CellOptions {
        refute_draws: 20,
        ..Default::default()
    };
    let est = estimate_cell(&ctx, &spec, 6, None, &opts).unwrap();
    let refutation = est.refutation.expect("refutation requested");
    assert!(
        (refutation.p_value - 1.0).abs() < 1e-12,
        "refuter p {} (mean estimate {})",
        refutation.p_value,
        refutation.mean_estimate
    );
    let elapsed = start.elapsed();
    report(
        &format!(
            "criterion 8 (refuter stability: p = {}, mean {:.3})",
            refutation.p_value, refutation.mean_estimate
        ),
        elapsed,
    );
}

#[test]
fn criterion_09_calibration_reproduction() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let gen = generate_cohort(&GeneratorSpec::calibrated(20_000, 4242)).unwrap();
    let attendance = attendance_of(&gen.cohort);
    let records = survival_records(&attendance, 1);

    // Survival shape: about half lose the streak before week 6, about a
    // fifth keep it through week 17 (both within three points).
    let cdf = &survival_cdf(&records, |_| Some("all".into())).unwrap()[0];
    let frac_lt6 = 1.0 - cdf.surviving_week6;
    assert!((frac_lt6 - 0.50).abs() <= 0.03, "frac streak<6 = {frac_lt6}");
    assert!(
        (cdf.surviving_week17 - 0.20).abs() <= 0.03,
        "frac streak>=17 = {}",
        cdf.surviving_week17
    );

    // Half of intermediate gaps are one week long (within five points).
    let gaps = intermediate_gap_cdf(&attendance);
    let cdf1 = gaps.iter().find(|(l, _)| *l == 1).map(|(_, p)| *p).unwrap_or(0.0);
    assert!((cdf1 - 0.50).abs() <= 0.05, "intermediate gap CDF(1) = {cdf1}");

    // Critical count at week 6 sits at nine, plus or minus one.
    let table = critical_visit_table(&gen.cohort, &records, 6..=17);
    let c6 = table.get(6).expect("week 6 entry").critical_visits;
    assert!((8..=10).contains(&c6), "c_6 = {c6}");

    // Window-6 to window-17 transition stays on the diagonal for low-noise
    // archetypes.
    let ln = generate_cohort(&GeneratorSpec::low_noise(5000, 7)).unwrap();
    let m6 = build_matrix(&ln.cohort, 6).unwrap();
    let model = ClusterModel::fit(&m6, &NmfOptions::default()).unwrap();
    let m17 = build_matrix(&ln.cohort, 17).unwrap();
    let proj = model.project(&m17, 200).unwrap();
    let trans = transition_matrix(
        &model.member_ids,
        &model.labels,
        &proj.member_ids,
        &proj.labels,
        5,
    )
    .unwrap();
    assert!(
        trans.diagonal_share() >= 0.84,
        "transition diagonal {}",
        trans.diagonal_share()
    );

    let elapsed = start.elapsed();
    report(
        &format!(
            "criterion 9 (calibration: <6w {frac_lt6:.3}, >=17w {:.3}, gapCDF1 {cdf1:.3}, c6 {c6}, diag {:.3})",
            cdf.surviving_week17,
            trans.diagonal_share()
        ),
        elapsed,
    );
}
