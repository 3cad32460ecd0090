//! Complete-linkage agglomerative clustering of the PB points of one concept
//! and the compactness test that decides which subtrees become prototypes.

use serde::{Deserialize, Serialize};

use crate::memory::EntryKind;
use crate::rnnpb::PbVector;
use crate::scalar::Scalar;

/// One entry of the concept being clustered.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterItem<T> {
    /// Position of the entry in memory.
    pub index: usize,
    pub pb: PbVector<T>,
    pub num_samples: usize,
    pub kind: EntryKind,
}

/// A merge of two nodes. Leaves are nodes `0..n`; merge `k` creates node `n + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge<T> {
    pub left: usize,
    pub right: usize,
    pub height: T,
    /// Leaf positions under the new node, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram<T> {
    pub leaves: usize,
    pub merges: Vec<Merge<T>>,
}

impl<T: Scalar> Dendrogram<T> {
    pub fn members(&self, node: usize) -> Vec<usize> {
        if node < self.leaves {
            vec![node]
        } else {
            self.merges[node - self.leaves].members.clone()
        }
    }

    pub fn root(&self) -> Option<usize> {
        match self.leaves {
            0 => None,
            n => Some(n + self.merges.len() - 1),
        }
    }
}

/// A subtree accepted as a cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidCluster<T> {
    /// Memory indices of the members, ascending.
    pub members: Vec<usize>,
    /// Memory index of the medoid.
    pub medoid: usize,
    pub mean_distance: T,
}

pub fn distance_matrix<T: Scalar>(points: &[PbVector<T>]) -> Vec<Vec<T>> {
    points
        .iter()
        .map(|a| points.iter().map(|b| a.distance(b)).collect())
        .collect()
}

/// Upper-triangle distances `d[i][j]`, `i < j`.
pub fn pairwise<T: Scalar>(dist: &[Vec<T>], members: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(members.len() * members.len().saturating_sub(1) / 2);
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            out.push(dist[i][j]);
        }
    }
    out
}

pub fn mean_std<T: Scalar>(values: &[T]) -> (T, T) {
    if values.is_empty() {
        return (T::zero(), T::zero());
    }
    let n = T::of(values.len() as f64);
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
    (mean, var.sqrt())
}

/// Compactness threshold `mu - k * sigma` over a multiset of distances
/// (population standard deviation).
pub fn d_cutoff<T: Scalar>(distances: &[T], k_cutoff: T) -> T {
    let (mu, sigma) = mean_std(distances);
    mu - k_cutoff * sigma
}

/// Complete-linkage merge tree. Among equally close pairs the one whose
/// smallest leaves come first is merged; the left child is the node with the
/// smaller leaf.
pub fn complete_linkage<T: Scalar>(dist: &[Vec<T>]) -> Dendrogram<T> {
    let n = dist.len();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    // (node id, members) of active clusters, ordered by smallest member
    let mut active: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut link: Vec<Vec<T>> = dist.to_vec();
    while active.len() > 1 {
        let mut best = (0, 1);
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                if link[a][b] < link[best.0][best.1] {
                    best = (a, b);
                }
            }
        }
        let (a, b) = best;
        let height = link[a][b];
        for c in 0..active.len() {
            let merged = link[a][c].max(link[b][c]);
            link[a][c] = merged;
            link[c][a] = merged;
        }
        link[a][a] = T::zero();
        let (right_id, right_members) = active.remove(b);
        link.remove(b);
        for row in &mut link {
            row.remove(b);
        }
        let (left_id, left_members) = std::mem::take(&mut active[a]);
        let mut members = left_members;
        members.extend(right_members);
        members.sort_unstable();
        active[a] = (n + merges.len(), members.clone());
        merges.push(Merge {
            left: left_id,
            right: right_id,
            height,
            members,
        });
    }
    Dendrogram { leaves: n, merges }
}

/// Member minimizing the summed distance to the others; ties go to the
/// first member.
pub fn medoid<T: Scalar>(dist: &[Vec<T>], members: &[usize]) -> usize {
    let mut best = members[0];
    let mut best_sum = T::infinity();
    for &i in members {
        let s: T = members.iter().map(|&j| dist[i][j]).sum();
        if s < best_sum {
            best = i;
            best_sum = s;
        }
    }
    best
}

fn mean_of<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() {
        T::zero()
    } else {
        values.iter().copied().sum::<T>() / T::of(values.len() as f64)
    }
}

/// Whether a merge node is an acceptable cluster.
pub fn is_valid<T: Scalar>(
    items: &[ClusterItem<T>],
    dist: &[Vec<T>],
    members: &[usize],
    cutoff: T,
    num_threshold: usize,
) -> bool {
    let samples: usize = members.iter().map(|&m| items[m].num_samples).sum();
    let has_exemplar = members.iter().any(|&m| items[m].kind == EntryKind::Exemplar);
    members.len() >= 2 && samples > num_threshold && has_exemplar && mean_of(&pairwise(dist, members)) < cutoff
}

/// Clusters the entries of one concept and returns the largest disjoint
/// subtrees that pass both the size and the compactness test.
///
/// When every point coincides the spread is zero and the whole set is
/// returned as a single cluster.
pub fn cluster_concept<T: Scalar>(items: &[ClusterItem<T>], k_cutoff: f64, num_threshold: usize) -> Vec<ValidCluster<T>> {
    if items.len() < 2 {
        return Vec::new();
    }
    let points: Vec<PbVector<T>> = items.iter().map(|it| it.pb.clone()).collect();
    let dist = distance_matrix(&points);
    let all: Vec<usize> = (0..items.len()).collect();
    let distances = pairwise(&dist, &all);
    let to_cluster = |members: Vec<usize>| {
        let mean_distance = mean_of(&pairwise(&dist, &members));
        ValidCluster {
            medoid: items[medoid(&dist, &members)].index,
            members: {
                let mut m: Vec<usize> = members.iter().map(|&k| items[k].index).collect();
                m.sort_unstable();
                m
            },
            mean_distance,
        }
    };
    if distances.iter().all(|d| *d == T::zero()) {
        return vec![to_cluster(all)];
    }
    let cutoff = d_cutoff(&distances, T::of(k_cutoff));
    let tree = complete_linkage(&dist);
    let mut accepted = Vec::new();
    let mut stack: Vec<usize> = tree.root().into_iter().collect();
    while let Some(node) = stack.pop() {
        if node < tree.leaves {
            continue;
        }
        let members = tree.members(node);
        if is_valid(items, &dist, &members, cutoff, num_threshold) {
            accepted.push(members);
        } else {
            let m = &tree.merges[node - tree.leaves];
            stack.push(m.right);
            stack.push(m.left);
        }
    }
    accepted.sort();
    accepted.into_iter().map(to_cluster).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(index: usize, pb: &[f64], n: usize, kind: EntryKind) -> ClusterItem<f64> {
        ClusterItem {
            index,
            pb: PbVector(pb.to_vec()),
            num_samples: n,
            kind,
        }
    }

    #[test]
    fn cutoff_arithmetic() {
        // mean 1.0, population std 0.4
        let d = [0.6, 1.4];
        assert!((d_cutoff(&d, 0.5) - 0.8f64).abs() < 1e-12);
    }

    #[test]
    fn nearest_pair_merges_first() {
        let pts: Vec<PbVector<f64>> = [0.0, 0.1, 0.9].iter().map(|x| PbVector(vec![*x])).collect();
        let tree = complete_linkage(&distance_matrix(&pts));
        assert_eq!(tree.merges[0].members, vec![0, 1]);
        assert!((tree.merges[0].height - 0.1).abs() < 1e-12);
        assert_eq!(tree.merges[1].members, vec![0, 1, 2]);
        assert!((tree.merges[1].height - 0.9).abs() < 1e-12);
        assert_eq!((tree.merges[1].left, tree.merges[1].right), (3, 2));
    }

    #[test]
    fn medoid_prefers_the_center() {
        let pts: Vec<PbVector<f64>> = [0.0, 0.4, 0.5, 1.0].iter().map(|x| PbVector(vec![*x])).collect();
        let d = distance_matrix(&pts);
        assert_eq!(medoid(&d, &[0, 1, 2, 3]), 1);
        assert_eq!(medoid(&d, &[0, 3]), 0);
    }

    #[test]
    fn tight_group_is_accepted_and_outlier_left_alone() {
        let e = EntryKind::Exemplar;
        let items = vec![
            item(10, &[0.10, 0.10], 1, e),
            item(11, &[0.14, 0.10], 2, e),
            item(12, &[0.12, 0.11], 1, e),
            item(13, &[0.90, 0.90], 1, e),
        ];
        let got = cluster_concept(&items, 0.5, 3);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].members, vec![10, 11, 12]);
        assert_eq!(got[0].medoid, 12);
    }

    #[test]
    fn size_and_exemplar_rules() {
        let e = EntryKind::Exemplar;
        let p = EntryKind::Prototype;
        let items = vec![
            item(0, &[0.10], 1, e),
            item(1, &[0.11], 1, e),
            item(2, &[0.12], 1, e),
            item(3, &[0.90], 1, e),
        ];
        assert!(cluster_concept(&items, 0.5, 3).is_empty(), "3 samples do not exceed 3");
        let protos: Vec<_> = items
            .iter()
            .map(|it| ClusterItem {
                kind: p,
                num_samples: 2,
                ..it.clone()
            })
            .collect();
        assert!(cluster_concept(&protos, 0.5, 3).is_empty(), "no exemplar");
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let items: Vec<_> = (0..3).map(|i| item(i, &[0.3, 0.3], 1, EntryKind::Prototype)).collect();
        let got = cluster_concept(&items, 0.5, 3);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].members, vec![0, 1, 2]);
        assert_eq!(got[0].medoid, 0);
    }

    #[test]
    fn fewer_than_two_items() {
        assert!(cluster_concept(&[item(0, &[0.1], 9, EntryKind::Exemplar)], 0.5, 3).is_empty());
    }
}
