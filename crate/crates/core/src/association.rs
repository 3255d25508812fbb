//! Optimal matching of unlabeled 3D measurements to predicted marker positions.

use nalgebra::Vector3;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(measured index, predicted marker id)` pairs, sorted by measured index.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of squared distances over the retained pairs (m²).
    pub total_cost: f64,
    pub unmatched_measurements: Vec<usize>,
    /// Ids of predicted markers left without a measurement.
    pub unmatched_predictions: Vec<usize>,
}

/// Minimum-cost assignment of every row of a `rows × cols` matrix (rows ≤ cols)
/// using the shortest augmenting path form of the Hungarian method.
fn hungarian(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> (Vec<usize>, f64) {
    let n = rows.len();
    let m = cols.len();
    debug_assert!(n <= m);
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let a = |i: usize, j: usize| cost[rows[i - 1]][cols[j - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[rows[i]][cols[col_of_row[i]]]).sum();
    (col_of_row, total)
}

/// Optimal assignment with ties resolved towards the lexicographically
/// smallest pairing in row order.
fn lexicographic_optimum(cost: &[Vec<f64>], n_rows: usize, n_cols: usize) -> Vec<(usize, usize)> {
    let mut rows: Vec<usize> = (0..n_rows).collect();
    let mut cols: Vec<usize> = (0..n_cols).collect();
    let (mut assign, mut best) = hungarian(cost, &rows, &cols);
    let mut pairs = Vec::with_capacity(n_rows);
    while !rows.is_empty() {
        let row = rows[0];
        let mut chosen = cols[assign[0]];
        let tol = 1e-12 * (1.0 + best.abs());
        for (k, &c) in cols.iter().enumerate() {
            if c >= chosen {
                break;
            }
            let sub_cols: Vec<usize> = cols.iter().enumerate().filter(|(kk, _)| *kk != k).map(|(_, &cc)| cc).collect();
            let (_, sub) = hungarian(cost, &rows[1..], &sub_cols);
            if cost[row][c] + sub <= best + tol {
                chosen = c;
                break;
            }
        }
        pairs.push((row, chosen));
        rows.remove(0);
        cols.retain(|&c| c != chosen);
        let (a, b) = hungarian(cost, &rows, &cols);
        assign = a;
        best = b;
    }
    pairs
}

fn optimal_pairs(measured: &[Vector3<f64>], predicted: &[Vector3<f64>]) -> Vec<(usize, usize)> {
    let nm = measured.len();
    let np = predicted.len();
    let d2 = |i: usize, j: usize| (measured[i] - predicted[j]).norm_squared();
    let mut raw: Vec<(usize, usize)> = if nm <= np {
        let cost: Vec<Vec<f64>> = (0..nm).map(|i| (0..np).map(|j| d2(i, j)).collect()).collect();
        lexicographic_optimum(&cost, nm, np)
    } else {
        let cost: Vec<Vec<f64>> = (0..np).map(|j| (0..nm).map(|i| d2(i, j)).collect()).collect();
        lexicographic_optimum(&cost, np, nm).into_iter().map(|(j, i)| (i, j)).collect()
    };
    raw.sort_unstable();
    raw
}

fn gated(measured: &[Vector3<f64>], predicted: &[(usize, Vector3<f64>)], raw: Vec<(usize, usize)>, gate: f64) -> Assignment {
    let d2 = |i: usize, j: usize| (measured[i] - predicted[j].1).norm_squared();
    let kept: Vec<(usize, usize)> = raw.into_iter().filter(|&(i, j)| d2(i, j) <= gate).collect();
    let total_cost = kept.iter().map(|&(i, j)| d2(i, j)).sum();
    let unmatched_measurements = (0..measured.len()).filter(|i| !kept.iter().any(|p| p.0 == *i)).collect();
    let unmatched_predictions = (0..predicted.len())
        .filter(|j| !kept.iter().any(|p| p.1 == *j))
        .map(|j| predicted[j].0)
        .collect();
    Assignment {
        pairs: kept.into_iter().map(|(i, j)| (i, predicted[j].0)).collect(),
        total_cost,
        unmatched_measurements,
        unmatched_predictions,
    }
}

/// Match measurements to predictions minimising the total squared distance.
///
/// `min(|measured|, |predicted|)` pairs are formed optimally; pairs whose
/// squared distance exceeds `gate` are then released as unmatched.
pub fn associate(measured: &[Vector3<f64>], predicted: &[(usize, Vector3<f64>)], gate: f64) -> Assignment {
    let points: Vec<Vector3<f64>> = predicted.iter().map(|p| p.1).collect();
    gated(measured, predicted, optimal_pairs(measured, &points), gate)
}

/// Pairing reached by alternating the optimal assignment with a re-estimate
/// of the common translation, starting from `shift`.
fn register(measured: &[Vector3<f64>], predicted: &[Vector3<f64>], mut shift: Vector3<f64>, iterations: usize) -> (Vec<(usize, usize)>, Vector3<f64>) {
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for _ in 0..iterations.max(1) {
        let points: Vec<Vector3<f64>> = predicted.iter().map(|p| p + shift).collect();
        let next = optimal_pairs(measured, &points);
        if next == pairs || next.is_empty() {
            pairs = next;
            break;
        }
        pairs = next;
        shift = pairs.iter().map(|&(i, j)| measured[i] - predicted[j]).sum::<Vector3<f64>>() / pairs.len() as f64;
    }
    (pairs, shift)
}

/// Association allowing for a common translation of all predictions.
///
/// A position error larger than half the marker spacing makes the plain
/// optimum pick a shifted set of corners. Registration is started from no
/// shift and from every shift that puts the first measurement on a
/// prediction; starts whose converged shift has a squared length above
/// `gate` are discarded. The pairing with the smallest registered residual
/// wins, the unshifted start on ties, and pairs whose registered squared
/// distance exceeds `gate` are released. The other starts are skipped when
/// the unshifted pairing fits to within 1% of the gate per pair.
pub fn associate_registered(
    measured: &[Vector3<f64>],
    predicted: &[(usize, Vector3<f64>)],
    gate: f64,
    iterations: usize,
) -> Assignment {
    let points: Vec<Vector3<f64>> = predicted.iter().map(|p| p.1).collect();
    let residual = |pairs: &[(usize, usize)], t: &Vector3<f64>| -> f64 {
        pairs.iter().map(|&(i, j)| (measured[i] - points[j] - t).norm_squared()).sum()
    };
    let mut starts = vec![Vector3::zeros()];
    if let Some(m0) = measured.first() {
        starts.extend(points.iter().map(|p| m0 - p));
    }
    let mut best: Option<(f64, Vec<(usize, usize)>, Vector3<f64>)> = None;
    for (k, start) in starts.into_iter().enumerate() {
        let (pairs, t) = register(measured, &points, start, iterations);
        if k > 0 && t.norm_squared() > gate {
            continue;
        }
        let cost = residual(&pairs, &t);
        // An unshifted pairing that already fits at a small fraction of the
        // gate cannot be beaten by a shifted one that passes the gate.
        let settled = k == 0 && !pairs.is_empty() && cost < 0.01 * gate * pairs.len() as f64;
        let better = match &best {
            None => true,
            Some((c, _, _)) => cost < c * (1.0 - 1e-9) - 1e-12,
        };
        if better {
            best = Some((cost, pairs, t));
        }
        if settled {
            break;
        }
    }
    let Some((_, pairs, t)) = best else {
        return associate(measured, predicted, gate);
    };
    let shifted: Vec<(usize, Vector3<f64>)> = predicted.iter().map(|(id, p)| (*id, p + t)).collect();
    let mut a = gated(measured, &shifted, pairs, gate);
    a.total_cost = a.pairs.iter().map(|&(i, id)| {
        let p = predicted.iter().find(|q| q.0 == id).expect("paired id").1;
        (measured[i] - p).norm_squared()
    }).sum();
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive search over all injections of the smaller side.
    pub(crate) fn brute_force(measured: &[Vector3<f64>], predicted: &[(usize, Vector3<f64>)]) -> f64 {
        fn rec(i: usize, rows: usize, cols: usize, used: &mut Vec<bool>, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
            if i == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cols {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost(i, j) + rec(i + 1, rows, cols, used, cost));
                    used[j] = false;
                }
            }
            best
        }
        let d2 = |i: usize, j: usize| (measured[i] - predicted[j].1).norm_squared();
        if measured.len() <= predicted.len() {
            rec(0, measured.len(), predicted.len(), &mut vec![false; predicted.len()], &d2)
        } else {
            rec(0, predicted.len(), measured.len(), &mut vec![false; measured.len()], &|j, i| d2(i, j))
        }
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)))
            .collect()
    }

    #[test]
    fn picks_the_nearer_of_two() {
        let a = associate(
            &[Vector3::new(0.1, 0.0, 0.0), Vector3::new(5.0, 0.0, 0.0)],
            &[(3, Vector3::zeros())],
            f64::INFINITY,
        );
        assert_eq!(a.pairs, vec![(0, 3)]);
        assert!((a.total_cost - 0.01).abs() < 1e-15);
        assert_eq!(a.unmatched_measurements, vec![1]);
        assert!(a.unmatched_predictions.is_empty());
    }

    #[test]
    fn recovers_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 6);
        let perm = [4, 0, 5, 2, 1, 3];
        let measured: Vec<_> = perm.iter().map(|&k| pts[k]).collect();
        let predicted: Vec<_> = pts.iter().enumerate().map(|(k, p)| (10 + k, *p)).collect();
        let a = associate(&measured, &predicted, f64::INFINITY);
        assert_eq!(a.total_cost, 0.0);
        for (i, id) in a.pairs {
            assert_eq!(id, 10 + perm[i]);
        }
    }

    #[test]
    fn empty_inputs() {
        let a = associate(&[], &[], 1.0);
        assert!(a.pairs.is_empty() && a.total_cost == 0.0);
        let a = associate(&[Vector3::zeros()], &[], 1.0);
        assert_eq!(a.unmatched_measurements, vec![0]);
        let a = associate(&[], &[(7, Vector3::zeros())], 1.0);
        assert_eq!(a.unmatched_predictions, vec![7]);
    }

    #[test]
    fn ties_prefer_lexicographic_order() {
        // Two measurements equidistant from two predictions.
        let measured = [Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.0, -1.0, 0.0)];
        let predicted = [(0, Vector3::new(1.0, 0.0, 0.0)), (1, Vector3::new(-1.0, 0.0, 0.0))];
        let a = associate(&measured, &predicted, f64::INFINITY);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn gate_rejects_outliers() {
        let measured = [Vector3::new(0.1, 0.0, 0.0), Vector3::new(10.0, 0.0, 0.0)];
        let predicted = [(0, Vector3::zeros()), (1, Vector3::new(0.0, 1.0, 0.0))];
        let a = associate(&measured, &predicted, 1.0);
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.unmatched_measurements, vec![1]);
        assert_eq!(a.unmatched_predictions, vec![1]);
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let nm = rng.random_range(0..=7);
            let np = rng.random_range(0..=7);
            let measured = random_points(&mut rng, nm);
            let predicted: Vec<_> = random_points(&mut rng, np).into_iter().enumerate().collect();
            let a = associate(&measured, &predicted, f64::INFINITY);
            let best = brute_force(&measured, &predicted);
            assert!((a.total_cost - best).abs() <= 1e-12 * (1.0 + best));
            assert_eq!(a.pairs.len(), nm.min(np));
        }
    }

    #[test]
    fn shuffling_inputs_keeps_geometric_pairs() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let measured = random_points(&mut rng, 6);
            let predicted: Vec<_> = random_points(&mut rng, 5).into_iter().enumerate().collect();
            let a = associate(&measured, &predicted, f64::INFINITY);
            let mut order: Vec<usize> = (0..6).collect();
            order.shuffle(&mut rng);
            let shuffled: Vec<_> = order.iter().map(|&k| measured[k]).collect();
            let mut pred_shuffled = predicted.clone();
            pred_shuffled.shuffle(&mut rng);
            let b = associate(&shuffled, &pred_shuffled, f64::INFINITY);
            assert!((a.total_cost - b.total_cost).abs() < 1e-12);
            let mut ga: Vec<_> = a.pairs.iter().map(|&(i, id)| (i, id)).collect();
            let mut gb: Vec<_> = b.pairs.iter().map(|&(i, id)| (order[i], id)).collect();
            ga.sort_unstable();
            gb.sort_unstable();
            assert_eq!(ga, gb);
        }
    }

    #[test]
    fn raising_the_gate_only_adds_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let measured = random_points(&mut rng, 7);
            let predicted: Vec<_> = random_points(&mut rng, 7).into_iter().enumerate().collect();
            let mut prev: Option<Assignment> = None;
            for gate in [0.05, 0.2, 0.5, 1.0, f64::INFINITY] {
                let a = associate(&measured, &predicted, gate);
                for &(i, id) in &a.pairs {
                    assert!((measured[i] - predicted[id].1).norm_squared() <= gate);
                }
                if let Some(p) = &prev {
                    assert!(p.pairs.iter().all(|pair| a.pairs.contains(pair)));
                    assert!(a.total_cost >= p.total_cost);
                }
                prev = Some(a);
            }
        }
    }

    fn box_corners() -> Vec<(usize, Vector3<f64>)> {
        (0..8)
            .map(|k| {
                let sx = if k & 1 == 0 { -5.0 } else { 5.0 };
                let sy = if k & 2 == 0 { -2.5 } else { 2.5 };
                let sz = if k & 4 == 0 { -2.5 } else { 2.5 };
                (k, Vector3::new(sx, sy, sz))
            })
            .collect()
    }

    #[test]
    fn registration_recovers_a_shifted_corner_set() {
        let predicted = box_corners();
        let offset = Vector3::new(0.3, 3.1, -0.2);
        let visible = [0usize, 1, 2, 4, 5, 6, 7];
        let measured: Vec<_> = visible.iter().map(|&k| predicted[k].1 + offset).collect();
        let plain = associate(&measured, &predicted, f64::INFINITY);
        assert!(plain.pairs.iter().any(|&(i, id)| visible[i] != id));
        let reg = associate_registered(&measured, &predicted, 16.0, 10);
        assert_eq!(reg.pairs, visible.iter().enumerate().map(|(i, &k)| (i, k)).collect::<Vec<_>>());
    }

    #[test]
    fn registration_keeps_an_aligned_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let predicted = box_corners();
        for _ in 0..50 {
            let measured: Vec<_> = predicted[..7].iter().map(|(_, p)| p + random_points(&mut rng, 1)[0] * 0.1).collect();
            let plain = associate(&measured, &predicted, 4.0);
            let reg = associate_registered(&measured, &predicted, 4.0, 10);
            assert_eq!(plain, reg);
        }
    }
}
