use std::collections::BTreeMap;

use crate::scene::Reconstruction;

/// Cameras linked by the number of points they both observe.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewGraph {
    adjacency: Vec<BTreeMap<usize, usize>>,
}

impl ViewGraph {
    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(BTreeMap::len).sum::<usize>() / 2
    }

    /// Co-observation count, 0 if the cameras are not linked.
    pub fn weight(&self, a: usize, b: usize) -> usize {
        self.adjacency[a].get(&b).copied().unwrap_or(0)
    }

    /// Neighbours of `a` with edge weights, by increasing index.
    pub fn neighbors(&self, a: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency[a].iter().map(|(&b, &w)| (b, w))
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.n_nodes()];
        let mut out = Vec::new();
        for start in 0..self.n_nodes() {
            if label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            label[start] = id;
            let mut stack = vec![start];
            while let Some(a) = stack.pop() {
                for (b, _) in self.neighbors(a) {
                    if label[b] == usize::MAX {
                        label[b] = id;
                        members.push(b);
                        stack.push(b);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }
}

pub fn build_view_graph(rec: &Reconstruction) -> ViewGraph {
    build_view_graph_with(rec, 1)
}

/// View graph keeping only edges with at least `min_covis` shared points.
pub fn build_view_graph_with(rec: &Reconstruction, min_covis: usize) -> ViewGraph {
    let mut adjacency = vec![BTreeMap::new(); rec.n_cameras()];
    for j in 0..rec.n_points() {
        let cams: Vec<usize> = rec
            .point_track(j)
            .iter()
            .map(|&t| rec.observations()[t].camera)
            .collect();
        for (k, &a) in cams.iter().enumerate() {
            for &b in &cams[k + 1..] {
                if a != b {
                    *adjacency[a].entry(b).or_insert(0) += 1;
                    *adjacency[b].entry(a).or_insert(0) += 1;
                }
            }
        }
    }
    for row in &mut adjacency {
        row.retain(|_, w| *w >= min_covis.max(1));
    }
    ViewGraph { adjacency }
}
