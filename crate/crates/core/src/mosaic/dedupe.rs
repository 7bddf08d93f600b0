use std::collections::HashMap;

use crate::types::ScoreVector;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterInput {
    pub position: (f64, f64),
    pub scores: ScoreVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Input indices, ascending.
    pub members: Vec<usize>,
    /// Medoid member position.
    pub position: (f64, f64),
    /// Mean member score vector.
    pub scores: ScoreVector,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Single-linkage clustering: points within `radius` of each other share a
/// cluster, transitively. Clusters are ordered by their smallest member.
///
/// Each cluster is placed at its medoid, which is a member point, so the
/// placements of distinct clusters stay more than `radius` apart and
/// re-clustering them is the identity.
pub fn dedupe_cross_pass(points: &[ClusterInput], radius: f64) -> Vec<Cluster> {
    let n = points.len();
    let mut uf = UnionFind((0..n).collect());
    let cell = if radius > 0.0 { radius } else { 1.0 };
    let key = |p: (f64, f64)| ((p.0 / cell).floor() as i64, (p.1 / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p.position)).or_default().push(i);
    }
    for (i, p) in points.iter().enumerate() {
        let (kx, ky) = key(p.position);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = grid.get(&(kx + dx, ky + dy)) {
                    for &j in bucket {
                        if j > i && dist(p.position, points[j].position) <= radius {
                            uf.union(i, j);
                        }
                    }
                }
            }
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let r = uf.find(i);
        let g = *slot.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }

    groups
        .into_iter()
        .map(|members| {
            let position = points[medoid(points, &members)].position;
            let scores = ScoreVector::mean(members.iter().map(|&i| &points[i].scores))
                .expect("cluster members share one score length");
            Cluster {
                members,
                position,
                scores,
            }
        })
        .collect()
}

/// Member minimizing the summed distance to the others (lowest index on
/// ties). Large clusters fall back to the member nearest the mean.
fn medoid(points: &[ClusterInput], members: &[usize]) -> usize {
    if members.len() > 1000 {
        let n = members.len() as f64;
        let mx = members.iter().map(|&i| points[i].position.0).sum::<f64>() / n;
        let my = members.iter().map(|&i| points[i].position.1).sum::<f64>() / n;
        return *members
            .iter()
            .min_by(|&&a, &&b| {
                dist(points[a].position, (mx, my)).total_cmp(&dist(points[b].position, (mx, my)))
            })
            .expect("non-empty cluster");
    }
    let mut best = members[0];
    let mut best_sum = f64::INFINITY;
    for &i in members {
        let s: f64 = members
            .iter()
            .map(|&j| dist(points[i].position, points[j].position))
            .sum();
        if s < best_sum {
            best_sum = s;
            best = i;
        }
    }
    best
}
