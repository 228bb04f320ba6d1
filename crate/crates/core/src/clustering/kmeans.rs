use rand::{Rng, RngCore};

use crate::scenario::Position;

fn dist2(a: &Position, b: &Position) -> f64 {
    (a.x - b.x).powi(2) + (a.y - b.y).powi(2)
}

fn nearest(p: &Position, centers: &[Position], allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (c, center) in centers.iter().enumerate() {
        if !allowed(c) {
            continue;
        }
        let d = dist2(p, center);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((c, d));
        }
    }
    best.map(|(c, _)| c)
}

/// k-means++ seeding.
fn seed_centers(points: &[Position], k: usize, rng: &mut dyn RngCore) -> Vec<Position> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[idx];
        centers.push(c);
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(dist2(p, &c));
        }
    }
    centers
}

fn update_centers(points: &[Position], assign: &[usize], centers: &mut [Position]) {
    let mut sums = vec![(0.0, 0.0, 0usize); centers.len()];
    for (p, &c) in points.iter().zip(assign) {
        sums[c].0 += p.x;
        sums[c].1 += p.y;
        sums[c].2 += 1;
    }
    for (center, (sx, sy, cnt)) in centers.iter_mut().zip(&sums) {
        if *cnt > 0 {
            *center = Position::new(sx / *cnt as f64, sy / *cnt as f64);
        }
    }
}

/// Keeps the `capacity` points closest to each centroid and moves the rest,
/// in index order, to the nearest centroid with room.
fn repair(points: &[Position], centers: &[Position], assign: &[usize], capacity: usize) -> Vec<usize> {
    let k = centers.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assign.iter().enumerate() {
        members[c].push(i);
    }
    let mut out = assign.to_vec();
    let mut overflow = Vec::new();
    let mut counts = vec![0usize; k];
    for (c, list) in members.iter_mut().enumerate() {
        list.sort_by(|&a, &b| {
            dist2(&points[a], &centers[c])
                .total_cmp(&dist2(&points[b], &centers[c]))
                .then(a.cmp(&b))
        });
        if list.len() > capacity {
            overflow.extend(list.drain(capacity..));
        }
        counts[c] = list.len();
    }
    overflow.sort_unstable();
    for i in overflow {
        let c = nearest(&points[i], centers, |c| counts[c] < capacity)
            .expect("k * capacity covers every point");
        out[i] = c;
        counts[c] += 1;
    }
    out
}

/// Lloyd iterations to convergence, then alternating capacity repair and
/// centroid updates until the repaired assignment is stable. Returns the
/// cluster index of every point; indices are in `0..k` but some clusters
/// may be empty.
pub fn capacity_kmeans(
    points: &[Position],
    k: usize,
    capacity: usize,
    max_iterations: usize,
    rng: &mut dyn RngCore,
) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let k = k.min(n);
    let mut centers = seed_centers(points, k, rng);
    let assign_nearest = |centers: &[Position]| -> Vec<usize> {
        points.iter().map(|p| nearest(p, centers, |_| true).unwrap_or(0)).collect()
    };
    let mut assign = assign_nearest(&centers);
    for _ in 0..max_iterations {
        update_centers(points, &assign, &mut centers);
        let next = assign_nearest(&centers);
        if next == assign {
            break;
        }
        assign = next;
    }

    let mut repaired = repair(points, &centers, &assign, capacity);
    for _ in 0..max_iterations {
        update_centers(points, &repaired, &mut centers);
        let next = repair(points, &centers, &assign_nearest(&centers), capacity);
        if next == repaired {
            break;
        }
        repaired = next;
    }
    repaired
}
