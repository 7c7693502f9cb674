//! Benchmarks for the data-parallel stages, labeled by dispatch mode so the
//! rayon and sequential builds can be compared:
//!
//! ```sh
//! cargo bench -p habitforge-core
//! cargo bench -p habitforge-core --no-default-features
//! ```

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use habitforge_core::causal::{estimate_cell, CausalContext, CellOptions, Level, TreatmentSpec, Treatment};
use habitforge_core::critical::critical_visit_table;
use habitforge_core::nmf::{ClusterModel, NmfOptions};
use habitforge_core::par;
use habitforge_core::survival::{survival_records, weekly_attendance};
use habitforge_core::synth::{generate_cohort, GeneratorSpec};
use habitforge_core::vectorize::build_matrix;

fn mode() -> &'static str {
    if par::is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

fn bench_pipeline(c: &mut Criterion) {
    let spec = GeneratorSpec::confounded_uplift(4000, 42, 0.2);
    let gen = generate_cohort(&spec).expect("generator");
    let cohort = &gen.cohort;

    c.bench_with_input(
        BenchmarkId::new("generate_cohort_n1000", mode()),
        &GeneratorSpec::calibrated(1000, 7),
        |b, spec| b.iter(|| generate_cohort(spec).unwrap()),
    );

    c.bench_with_input(BenchmarkId::new("build_matrix_w6", mode()), cohort, |b, cohort| {
        b.iter(|| build_matrix(cohort, 6).unwrap())
    });

    let attendance: Vec<_> = cohort
        .members
        .iter()
        .map(|m| weekly_attendance(m.member_id.clone(), cohort.visits.of(&m.member_id), m.contract_start).unwrap())
        .collect();
    c.bench_with_input(
        BenchmarkId::new("survival_records", mode()),
        &attendance,
        |b, att| b.iter(|| survival_records(att, 1)),
    );

    let records = survival_records(&attendance, 1);
    c.bench_with_input(
        BenchmarkId::new("critical_visit_table_6_52", mode()),
        &records,
        |b, records| b.iter(|| critical_visit_table(cohort, records, 6..=52)),
    );

    let matrix = build_matrix(cohort, 6).unwrap();
    c.bench_function(&format!("nmf_fit_k5/{}", mode()), |b| {
        b.iter(|| {
            ClusterModel::fit(
                &matrix,
                &NmfOptions {
                    k: 5,
                    max_iters: 60,
                    tol: 0.0,
                    seed: 11,
                    restarts: 1,
                normalize_rows: false,
                },
            )
            .unwrap()
        })
    });

    let model = ClusterModel::fit(&matrix, &NmfOptions::default()).expect("cluster model");
    let labels = model.labels_by_member();
    let table = critical_visit_table(cohort, &records, 6..=17);
    let ctx = CausalContext {
        cohort,
        cluster_labels: &labels,
        k: 5,
        critical: &table,
    };
    let spec = TreatmentSpec::four_level(Treatment::PtSessions, Level::High).unwrap();
    c.bench_function(&format!("causal_cell_week6/{}", mode()), |b| {
        b.iter(|| estimate_cell(&ctx, &spec, 6, None, &CellOptions::default()).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_pipeline
}
criterion_main!(benches);
