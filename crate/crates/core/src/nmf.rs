//! Non-negative matrix factorization of the visit matrix (A ~ WH) with
//! multiplicative updates under Frobenius loss, softmax cluster membership
//! probabilities, hard labels, membership-probability CDFs, and the
//! window-6 to window-17 cluster transition matrix.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MemberId;
use crate::vectorize::{VisitMatrix, FIRST_HOUR, HOUR_BINS};

/// Multiplicative-update denominators never drop below this.
const MIN_DENOM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NmfOptions {
    pub k: usize,
    pub max_iters: usize,
    /// Stop when the relative objective improvement falls below this.
    pub tol: f64,
    pub seed: u64,
    /// Independent seeded runs; the one with the lowest final objective wins.
    /// Multiplicative updates can stall in local minima that duplicate a
    /// heavy cluster, and those land visibly above the separating solution.
    pub restarts: usize,
    /// Scale each member's row to unit sum before factorizing (zero rows
    /// stay zero). Off by default: the counts go in raw.
    pub normalize_rows: bool,
}

impl Default for NmfOptions {
    fn default() -> Self {
        NmfOptions {
            k: 5,
            max_iters: 400,
            tol: 1e-9,
            seed: 0,
            restarts: 5,
            normalize_rows: false,
        }
    }
}

/// Raw factorization output.
#[derive(Debug, Clone)]
pub struct NmfFit {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    /// Squared Frobenius error after each iteration, preceded by the initial error.
    pub objective: Vec<f64>,
    pub iterations: usize,
    /// ||A - WH||_F / ||A||_F at the final iterate.
    pub relative_error: f64,
}

fn frobenius_sq(a: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let wh = w.dot(h);
    a.iter()
        .zip(wh.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn seeded_positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| (1.0 - rng.gen::<f64>()) * scale)
}

/// Components start from k data rows chosen by distance-weighted sampling
/// on the unit sphere (farthest-point style), plus a strictly positive
/// noise floor so no entry is zero-locked. Plain uniform random init
/// collapses onto duplicated components for heavy clusters often enough to
/// matter; seeding from spread-out exemplar rows lands the updates in the
/// separating basin.
fn init_exemplar_components(
    rng: &mut ChaCha8Rng,
    a: &Array2<f64>,
    k: usize,
    scale: f64,
) -> Array2<f64> {
    let (n, m) = a.dim();
    let floor = (scale * 0.05).max(1e-9);
    let mut h = seeded_positive(rng, k, m, floor);

    let norms: Vec<f64> = (0..n)
        .map(|i| a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if norms.iter().sum::<f64>() <= 0.0 {
        // Degenerate all-zero matrix: noise-only init is already exact.
        return h;
    }
    // Direction-only copies so the seeding geometry ignores visit volume.
    let mut unit = a.clone();
    for (i, mut row) in unit.outer_iter_mut().enumerate() {
        if norms[i] > 0.0 {
            row.mapv_inplace(|v| v / norms[i]);
        }
    }
    let sq_dist = |i: usize, j: usize| -> f64 {
        unit.row(i)
            .iter()
            .zip(unit.row(j).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };
    let sample_weighted = |rng: &mut ChaCha8Rng, weights: &[f64]| -> usize {
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return rng.gen_range(0..weights.len());
        }
        let mut draw = rng.gen::<f64>() * sum;
        for (i, &w) in weights.iter().enumerate() {
            draw -= w;
            if draw <= 0.0 {
                return i;
            }
        }
        weights.len() - 1
    };

    let mut chosen = sample_weighted(rng, &norms);
    for (j, &v) in unit.row(chosen).iter().enumerate() {
        h[[0, j]] += v;
    }
    let mut dist: Vec<f64> = (0..n)
        .map(|i| if norms[i] > 0.0 { sq_dist(i, chosen) } else { 0.0 })
        .collect();
    for c in 1..k {
        chosen = sample_weighted(rng, &dist);
        for (j, &v) in unit.row(chosen).iter().enumerate() {
            h[[c, j]] += v;
        }
        for i in 0..n {
            if norms[i] > 0.0 {
                dist[i] = dist[i].min(sq_dist(i, chosen));
            }
        }
    }
    h
}

/// Factorizes a nonnegative matrix into k nonnegative factors with
/// multiplicative updates, keeping the best of `opts.restarts` seeded runs.
/// Each run's objective sequence is non-increasing and the factors stay
/// exactly nonnegative because every update multiplies by a nonnegative
/// ratio.
pub fn nmf_factorize(a: &Array2<f64>, opts: &NmfOptions) -> Result<NmfFit> {
    let restarts = opts.restarts.max(1);
    let runs: Vec<Result<NmfFit>> = crate::par::map_range(restarts, |r| {
        let seed = opts.seed.wrapping_add((r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        nmf_single_run(a, opts, seed)
    });
    let mut best: Option<NmfFit> = None;
    for run in runs {
        let run = run?;
        let better = best
            .as_ref()
            .map_or(true, |b| run.objective.last() < b.objective.last());
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn nmf_single_run(a: &Array2<f64>, opts: &NmfOptions, seed: u64) -> Result<NmfFit> {
    let (n, m) = a.dim();
    if a.iter().any(|&x| x < 0.0) {
        return Err(Error::Domain("matrix has negative entries".into()));
    }
    if opts.k == 0 || opts.k > n.min(m) {
        return Err(Error::Domain(format!(
            "k={} out of range for a {n}x{m} matrix",
            opts.k
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = a.sum() / (n * m) as f64;
    let scale = (mean / opts.k as f64).max(1e-6);
    let mut w = seeded_positive(&mut rng, n, opts.k, scale);
    let mut h = init_exemplar_components(&mut rng, a, opts.k, scale);

    let norm_sq: f64 = a.iter().map(|&x| x * x).sum();
    let mut objective = Vec::with_capacity(opts.max_iters + 1);
    objective.push(frobenius_sq(a, &w, &h));

    let mut iterations = 0;
    for _ in 0..opts.max_iters {
        // H <- H .* (W'A) ./ (W'W H)
        let wt_a = w.t().dot(a);
        let wt_w = w.t().dot(&w);
        let mut den = wt_w.dot(&h);
        den.mapv_inplace(|x| x.max(MIN_DENOM));
        h = h * wt_a / den;

        // W <- W .* (A H') ./ (W H H')
        let a_ht = a.dot(&h.t());
        let h_ht = h.dot(&h.t());
        let mut den = w.dot(&h_ht);
        den.mapv_inplace(|x| x.max(MIN_DENOM));
        w = w * a_ht / den;

        iterations += 1;
        let err = frobenius_sq(a, &w, &h);
        let prev = *objective.last().unwrap();
        objective.push(err);
        if prev <= 0.0 || (prev - err) / prev < opts.tol {
            break;
        }
    }

    let relative_error = if norm_sq > 0.0 {
        (objective.last().unwrap() / norm_sq).sqrt()
    } else {
        0.0
    };
    normalize_components(&mut w, &mut h);
    Ok(NmfFit {
        w,
        h,
        objective,
        iterations,
        relative_error,
    })
}

/// Fixes the factorization's scale indeterminacy: each component row of H is
/// scaled to unit L2 norm and the inverse scale folded into W's column, so
/// WH is unchanged and W activations are comparable across components.
fn normalize_components(w: &mut Array2<f64>, h: &mut Array2<f64>) {
    let k = h.nrows();
    for c in 0..k {
        let norm = h.row(c).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            h.row_mut(c).mapv_inplace(|v| v / norm);
            w.column_mut(c).mapv_inplace(|v| v * norm);
        }
    }
}

/// Nonnegative projection of new rows onto fixed components: multiplicative
/// updates on W only, leaving H untouched. Used to score a later window
/// against the clusters fit on an earlier one.
pub fn project_onto_components(
    a: &Array2<f64>,
    h: &Array2<f64>,
    max_iters: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let (n, m) = a.dim();
    let (k, hm) = h.dim();
    if m != hm {
        return Err(Error::Domain(format!(
            "column mismatch: matrix has {m}, components have {hm}"
        )));
    }
    if a.iter().any(|&x| x < 0.0) {
        return Err(Error::Domain("matrix has negative entries".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = a.sum() / (n * m).max(1) as f64;
    let scale = (mean / k as f64).max(1e-6);
    let mut w = seeded_positive(&mut rng, n, k, scale);
    let h_ht = h.dot(&h.t());
    for _ in 0..max_iters {
        let a_ht = a.dot(&h.t());
        let mut den = w.dot(&h_ht);
        den.mapv_inplace(|x| x.max(MIN_DENOM));
        w = w * a_ht / den;
    }
    Ok(w)
}

/// Row-wise stable softmax.
pub fn cluster_probabilities(w: &Array2<f64>) -> Array2<f64> {
    let mut probs = w.clone();
    for mut row in probs.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    probs
}

fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Fitted clustering over a visit matrix.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub k: usize,
    pub seed: u64,
    pub member_ids: Vec<MemberId>,
    /// Per-member basis activations (zero rows for members excluded from the fit).
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    /// Softmax membership per member; zero-visit members get a uniform row.
    pub probabilities: Array2<f64>,
    pub labels: Vec<usize>,
    /// True where the member had no in-window visits.
    pub zero_row: Vec<bool>,
    pub iterations: usize,
    pub relative_error: f64,
    /// Rows were scaled to unit sum before the fit.
    pub normalized: bool,
}

impl ClusterModel {
    /// Factorizes the matrix, excluding all-zero rows from the fit; those
    /// members get a uniform probability row (no evidence either way).
    pub fn fit(matrix: &VisitMatrix, opts: &NmfOptions) -> Result<Self> {
        let a_full = if opts.normalize_rows {
            matrix.to_array_normalized()
        } else {
            matrix.to_array()
        };
        let zero_row: Vec<bool> = matrix.rows.iter().map(|r| r.iter().all(|&c| c == 0)).collect();
        let nonzero_idx: Vec<usize> = (0..matrix.n_rows()).filter(|&i| !zero_row[i]).collect();
        if nonzero_idx.len() < opts.k {
            return Err(Error::Domain(format!(
                "k={} exceeds the {} members with in-window visits",
                opts.k,
                nonzero_idx.len()
            )));
        }
        let a = a_full.select(Axis(0), &nonzero_idx);
        let fit = nmf_factorize(&a, opts)?;

        let n = matrix.n_rows();
        let mut w = Array2::zeros((n, opts.k));
        for (sub, &orig) in nonzero_idx.iter().enumerate() {
            w.row_mut(orig).assign(&fit.w.row(sub));
        }
        let sub_probs = cluster_probabilities(&fit.w);
        let uniform = 1.0 / opts.k as f64;
        let mut probabilities = Array2::from_elem((n, opts.k), uniform);
        for (sub, &orig) in nonzero_idx.iter().enumerate() {
            probabilities.row_mut(orig).assign(&sub_probs.row(sub));
        }
        let labels = (0..n)
            .map(|i| argmax_row(probabilities.row(i)))
            .collect();
        Ok(ClusterModel {
            k: opts.k,
            seed: opts.seed,
            member_ids: matrix.row_ids.clone(),
            w,
            h: fit.h,
            probabilities,
            labels,
            zero_row,
            iterations: fit.iterations,
            relative_error: fit.relative_error,
            normalized: opts.normalize_rows,
        })
    }

    /// Labels a later-window matrix against this model's components without
    /// refitting them. Member order must match.
    pub fn project(&self, matrix: &VisitMatrix, max_iters: usize) -> Result<ClusterModel> {
        if matrix.row_ids != self.member_ids {
            return Err(Error::Validation(
                "projection matrix covers a different member set".into(),
            ));
        }
        let a = if self.normalized {
            matrix.to_array_normalized()
        } else {
            matrix.to_array()
        };
        let w = project_onto_components(&a, &self.h, max_iters, self.seed)?;
        let zero_row: Vec<bool> = matrix.rows.iter().map(|r| r.iter().all(|&c| c == 0)).collect();
        let uniform = 1.0 / self.k as f64;
        let mut probabilities = cluster_probabilities(&w);
        for (i, &z) in zero_row.iter().enumerate() {
            if z {
                probabilities.row_mut(i).fill(uniform);
            }
        }
        let labels = (0..matrix.n_rows())
            .map(|i| argmax_row(probabilities.row(i)))
            .collect();
        Ok(ClusterModel {
            k: self.k,
            seed: self.seed,
            member_ids: matrix.row_ids.clone(),
            w,
            h: self.h.clone(),
            probabilities,
            labels,
            zero_row,
            iterations: max_iters,
            relative_error: f64::NAN,
            normalized: self.normalized,
        })
    }

    /// Hard labels keyed by member id.
    pub fn labels_by_member(&self) -> BTreeMap<MemberId, usize> {
        self.member_ids
            .iter()
            .cloned()
            .zip(self.labels.iter().copied())
            .collect()
    }

    /// Peak hour of day (6..23) per component, aggregated across days.
    pub fn peak_hours(&self) -> Vec<u8> {
        (0..self.k)
            .map(|c| {
                let mut by_hour = [0.0f64; HOUR_BINS];
                for (j, &v) in self.h.row(c).iter().enumerate() {
                    by_hour[j % HOUR_BINS] += v;
                }
                let peak = by_hour
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                FIRST_HOUR + peak as u8
            })
            .collect()
    }

    /// Reproducible cluster names ordered by peak hour. With k = 5 the names
    /// are the canonical time-of-day labels; otherwise they carry the peak
    /// hour itself.
    pub fn cluster_names(&self) -> Vec<String> {
        let peaks = self.peak_hours();
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by_key(|&c| (peaks[c], c));
        let mut names = vec![String::new(); self.k];
        if self.k == 5 {
            const CANON: [&str; 5] = ["morning", "noon", "afternoon", "evening", "night"];
            for (rank, &c) in order.iter().enumerate() {
                names[c] = CANON[rank].to_string();
            }
        } else {
            for (rank, &c) in order.iter().enumerate() {
                names[c] = format!("t{rank}_peak{:02}h", peaks[c]);
            }
        }
        names
    }

    /// Index of the cluster with a given name, if present.
    pub fn cluster_by_name(&self, name: &str) -> Option<usize> {
        self.cluster_names().iter().position(|n| n == name)
    }

    /// Serializable dump: components, per-member label and probability row.
    pub fn to_dump(&self) -> ModelDump {
        ModelDump {
            k: self.k,
            seed: self.seed,
            iterations: self.iterations,
            relative_error: self.relative_error,
            cluster_names: self.cluster_names(),
            peak_hours: self.peak_hours(),
            components: self
                .h
                .axis_iter(Axis(0))
                .map(|row| row.to_vec())
                .collect(),
            members: self
                .member_ids
                .iter()
                .enumerate()
                .map(|(i, id)| MemberAssignment {
                    member_id: id.clone(),
                    label: self.labels[i],
                    zero_row: self.zero_row[i],
                    probabilities: self.probabilities.row(i).to_vec(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberAssignment {
    pub member_id: MemberId,
    pub label: usize,
    pub zero_row: bool,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDump {
    pub k: usize,
    pub seed: u64,
    pub iterations: usize,
    pub relative_error: f64,
    pub cluster_names: Vec<String>,
    pub peak_hours: Vec<u8>,
    pub components: Vec<Vec<f64>>,
    pub members: Vec<MemberAssignment>,
}

/// Counts of members moving from cluster i (earlier window) to cluster j
/// (later window), with percentages over the whole cohort.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
    pub percentages: Vec<Vec<f64>>,
    pub total: u64,
}

impl TransitionMatrix {
    pub fn diagonal_share(&self) -> f64 {
        let diag: u64 = (0..self.k).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total as f64
    }

    /// `from,to,count,percent`
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("from,to,count,percent\n");
        for i in 0..self.k {
            for j in 0..self.k {
                let _ = writeln!(out, "{i},{j},{},{}", self.counts[i][j], self.percentages[i][j]);
            }
        }
        out
    }
}

/// Builds the transition matrix between two labelings of the same member set.
pub fn transition_matrix(
    ids_a: &[MemberId],
    labels_a: &[usize],
    ids_b: &[MemberId],
    labels_b: &[usize],
    k: usize,
) -> Result<TransitionMatrix> {
    if ids_a.len() != labels_a.len() || ids_b.len() != labels_b.len() {
        return Err(Error::Validation("label vector length mismatch".into()));
    }
    let map_b: BTreeMap<&MemberId, usize> = ids_b.iter().zip(labels_b.iter().copied()).collect();
    if map_b.len() != ids_a.len() {
        return Err(Error::Validation(
            "transition windows cover different member sets".into(),
        ));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (id, &la) in ids_a.iter().zip(labels_a) {
        let lb = *map_b
            .get(id)
            .ok_or_else(|| Error::Validation(format!("member {id} missing from second window")))?;
        if la >= k || lb >= k {
            return Err(Error::Validation(format!("label out of range for k={k}")));
        }
        counts[la][lb] += 1;
    }
    let total = ids_a.len() as u64;
    let percentages = counts
        .iter()
        .map(|row| {
            row.iter()
                .map(|&c| 100.0 * c as f64 / total as f64)
                .collect()
        })
        .collect();
    Ok(TransitionMatrix {
        k,
        counts,
        percentages,
        total,
    })
}

/// Empirical CDF of the membership probability for `cluster`, over members
/// hard-assigned to that cluster. Empty when no member is assigned to it.
pub fn membership_prob_cdf(
    probabilities: &Array2<f64>,
    labels: &[usize],
    cluster: usize,
) -> Vec<(f64, f64)> {
    let mut values: Vec<f64> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == cluster)
        .map(|(i, _)| probabilities[[i, cluster]])
        .collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len() as f64;
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, (i + 1) as f64 / n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn rank_one_matrix_reconstructs_exactly() {
        let u = array![1.0, 2.0, 0.5, 3.0, 1.5, 0.2];
        let v = array![0.3, 1.0, 2.0, 0.0, 0.7];
        let a = u
            .view()
            .insert_axis(Axis(1))
            .dot(&v.view().insert_axis(Axis(0)));
        let fit = nmf_factorize(
            &a,
            &NmfOptions {
                k: 1,
                max_iters: 1000,
                tol: 0.0,
                seed: 42,
                restarts: 1,
                normalize_rows: false,
            },
        )
        .unwrap();
        assert!(fit.relative_error < 1e-6, "rel err {}", fit.relative_error);
    }

    #[test]
    fn objective_is_monotone_non_increasing() {
        use rand::{Rng, SeedableRng};
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let a = Array2::from_shape_fn((30, 20), |_| rng.gen::<f64>() * 5.0);
            let fit = nmf_factorize(
                &a,
                &NmfOptions {
                    k: 5,
                    max_iters: 150,
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
                    "objective rose: {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn factors_stay_nonnegative() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Array2::from_shape_fn((25, 15), |_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() });
        let fit = nmf_factorize(&a, &NmfOptions { k: 4, max_iters: 200, tol: 0.0, seed: 1, restarts: 1, normalize_rows: false }).unwrap();
        assert!(fit.w.iter().all(|&x| x >= 0.0));
        assert!(fit.h.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn negative_entries_are_rejected() {
        let a = array![[1.0, -0.1], [0.5, 2.0]];
        assert!(matches!(
            nmf_factorize(&a, &NmfOptions::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        let a = Array2::<f64>::ones((3, 4));
        let opts = NmfOptions { k: 4, ..Default::default() };
        assert!(matches!(nmf_factorize(&a, &opts), Err(Error::Domain(_))));
        let opts = NmfOptions { k: 0, ..Default::default() };
        assert!(matches!(nmf_factorize(&a, &opts), Err(Error::Domain(_))));
    }

    #[test]
    fn softmax_of_constant_row_is_uniform() {
        let w = array![[3.0, 3.0, 3.0, 3.0, 3.0]];
        let p = cluster_probabilities(&w);
        for &v in p.row(0) {
            assert_relative_eq!(v, 0.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_favors_dominant_entry() {
        let w = array![[0.1, 4.0, 0.3, 0.2, 0.9]];
        let p = cluster_probabilities(&w);
        let row = p.row(0);
        assert!(row[1] > row[0] && row[1] > row[2] && row[1] > row[3] && row[1] > row[4]);
    }

    #[test]
    fn softmax_unit_spike_value() {
        let w = array![[1.0, 0.0, 0.0, 0.0, 0.0]];
        let p = cluster_probabilities(&w);
        let e = std::f64::consts::E;
        assert_relative_eq!(p[[0, 0]], e / (e + 4.0), epsilon = 1e-12);
        for j in 1..5 {
            assert_relative_eq!(p[[0, j]], 1.0 / (e + 4.0), epsilon = 1e-12);
        }
        let sum: f64 = p.row(0).sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn probability_rows_sum_to_one_and_keep_argmax() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Array2::from_shape_fn((40, 5), |_| rng.gen::<f64>() * 3.0);
        let p = cluster_probabilities(&w);
        for i in 0..40 {
            let sum: f64 = p.row(i).sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert_eq!(argmax_row(p.row(i)), argmax_row(w.row(i)));
            assert!(p.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    fn ids(n: usize) -> Vec<MemberId> {
        (0..n).map(|i| MemberId(format!("m{i}"))).collect()
    }

    #[test]
    fn identical_labelings_are_diagonal() {
        let labels = vec![0, 1, 2, 3, 4, 0, 1];
        let t = transition_matrix(&ids(7), &labels, &ids(7), &labels, 5).unwrap();
        assert_eq!(t.total, 7);
        assert_relative_eq!(t.diagonal_share(), 1.0);
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert_eq!(t.counts[i][j], 0);
                }
            }
        }
    }

    #[test]
    fn single_mover_among_ten() {
        let a = vec![0; 10];
        let mut b = vec![0; 10];
        b[3] = 1;
        let t = transition_matrix(&ids(10), &a, &ids(10), &b, 5).unwrap();
        assert_eq!(t.counts[0][1], 1);
        assert_relative_eq!(t.percentages[0][1], 10.0);
        let pct_sum: f64 = t.percentages.iter().flatten().sum();
        assert_relative_eq!(pct_sum, 100.0, epsilon = 1e-9);
    }

    #[test]
    fn mismatched_member_sets_are_rejected() {
        let t = transition_matrix(&ids(4), &[0, 0, 0, 0], &ids(5), &[0, 0, 0, 0, 0], 5);
        assert!(matches!(t, Err(Error::Validation(_))));
    }

    #[test]
    fn membership_cdf_examples() {
        let p = array![[1.0, 0.0], [1.0, 0.0]];
        let cdf = membership_prob_cdf(&p, &[0, 0], 0);
        assert_eq!(cdf, vec![(1.0, 0.5), (1.0, 1.0)]);

        let p = array![[0.4, 0.6], [0.6, 0.4]];
        let cdf = membership_prob_cdf(&p, &[0, 0], 0);
        assert_eq!(cdf, vec![(0.4, 0.5), (0.6, 1.0)]);

        assert!(membership_prob_cdf(&p, &[0, 0], 1).is_empty());
    }

    #[test]
    fn normalized_fit_carries_through_projection() {
        use crate::model::MemberId;
        use crate::vectorize::{VisitMatrix, VECTOR_LEN};
        let mut rows = Vec::new();
        let mut ids = Vec::new();
        for i in 0..30 {
            let mut row = vec![0u32; VECTOR_LEN];
            let block = i % 3;
            row[block * 30] = 2 + (i % 4) as u32;
            row[block * 30 + 1] = 1;
            rows.push(row);
            ids.push(MemberId(format!("m{i}")));
        }
        let matrix = VisitMatrix {
            row_ids: ids,
            rows,
            window_weeks: 6,
        };
        let opts = NmfOptions {
            k: 3,
            max_iters: 200,
            tol: 0.0,
            seed: 2,
            restarts: 2,
            normalize_rows: true,
        };
        let model = ClusterModel::fit(&matrix, &opts).unwrap();
        assert!(model.normalized);
        let projected = model.project(&matrix, 100).unwrap();
        assert_eq!(projected.labels, model.labels);
    }

    #[test]
    fn projection_recovers_labels_for_same_data() {
        use rand::{Rng, SeedableRng};
        // Block-structured matrix: rows concentrated in disjoint column groups.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 60;
        let mut a = Array2::zeros((n, 126));
        for i in 0..n {
            let block = i % 3;
            for _ in 0..6 {
                let col = block * 20 + rng.gen_range(0..4);
                a[[i, col]] += 1.0 + rng.gen::<f64>() * 0.1;
            }
        }
        let fit = nmf_factorize(&a, &NmfOptions { k: 3, max_iters: 300, tol: 0.0, seed: 5, restarts: 1, normalize_rows: false }).unwrap();
        let w2 = project_onto_components(&a, &fit.h, 200, 5).unwrap();
        for i in 0..n {
            assert_eq!(argmax_row(fit.w.row(i)), argmax_row(w2.row(i)));
        }
    }
}
