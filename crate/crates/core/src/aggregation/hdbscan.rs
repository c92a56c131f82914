use serde::Serialize;

use crate::error::{Error, Result};

/// Result of a largest-cluster query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Clustering {
    /// Sorted member indices.
    pub members: Vec<usize>,
    /// Set when there were fewer points than `min_cluster_size`; `members`
    /// is then every point.
    pub degenerate: bool,
}

struct Node {
    birth: f64,
    death: f64,
    /// Members at birth, sorted.
    members: Vec<usize>,
    /// Lambda at which each member left, parallel to `members`.
    exit: Vec<f64>,
    children: Vec<usize>,
}

fn lambda(w: f64) -> f64 {
    1.0 / w.max(1e-300)
}

fn validate(dist: &[Vec<f64>]) -> Result<()> {
    let n = dist.len();
    for (i, row) in dist.iter().enumerate() {
        if row.len() != n {
            return Err(Error::shape(format!(
                "distance row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        for (j, &d) in row.iter().enumerate() {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::invalid(format!(
                    "distance ({i}, {j}) = {d} is not a finite non-negative number"
                )));
            }
            if d != dist[j][i] {
                return Err(Error::invalid(format!(
                    "distance matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn core_distances(dist: &[Vec<f64>], min_samples: usize) -> Vec<f64> {
    dist.iter()
        .map(|row| {
            let mut r = row.clone();
            r.sort_by(f64::total_cmp);
            r[min_samples - 1]
        })
        .collect()
}

fn mutual_reachability(dist: &[Vec<f64>], core: &[f64]) -> Vec<Vec<f64>> {
    let n = dist.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        dist[i][j].max(core[i]).max(core[j])
                    }
                })
                .collect()
        })
        .collect()
}

fn prim(mr: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let n = mr.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut cur = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if !in_tree[j] && mr[cur][j] < best[j] {
                best[j] = mr[cur][j];
                from[j] = cur;
            }
        }
        let next = (0..n)
            .filter(|&j| !in_tree[j])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b)))
            .expect("a vertex remains outside the tree");
        edges.push((from[next], next, best[next]));
        in_tree[next] = true;
        cur = next;
    }
    edges
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components of `points` under `edges`, each sorted, ordered by
/// smallest member.
fn components(points: &[usize], edges: &[(usize, usize, f64)], n: usize) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b, _) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for &p in points {
        let r = find(&mut parent, p);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => g.1.push(p),
            None => groups.push((r, vec![p])),
        }
    }
    let mut out: Vec<Vec<usize>> = groups.into_iter().map(|g| g.1).collect();
    for c in &mut out {
        c.sort_unstable();
    }
    out.sort_by_key(|c| c[0]);
    out
}

/// Condensed cluster tree. All MST edges of equal weight are cut together,
/// so the tree does not depend on how ties were broken inside the MST.
fn condense(n: usize, mst: Vec<(usize, usize, f64)>, mcs: usize) -> Vec<Node> {
    let mut nodes = vec![Node {
        birth: 0.0,
        death: 0.0,
        members: (0..n).collect(),
        exit: vec![0.0; n],
        children: Vec::new(),
    }];
    let mut work = vec![(0usize, mst)];
    while let Some((id, mut edges)) = work.pop() {
        let mut alive = nodes[id].members.clone();
        let mut exits: Vec<(usize, f64)> = Vec::new();
        loop {
            let w = edges.iter().map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
            let lam = lambda(w);
            edges.retain(|e| e.2 < w);
            let comps = components(&alive, &edges, n);
            let big: Vec<&Vec<usize>> = comps.iter().filter(|c| c.len() >= mcs).collect();
            if big.len() == 1 {
                let keep = big[0].clone();
                exits.extend(
                    comps
                        .iter()
                        .filter(|c| c.len() < mcs)
                        .flatten()
                        .map(|&p| (p, lam)),
                );
                edges.retain(|e| keep.binary_search(&e.0).is_ok());
                alive = keep;
                continue;
            }
            exits.extend(alive.iter().map(|&p| (p, lam)));
            nodes[id].death = lam;
            for c in big {
                let child = nodes.len();
                let child_edges = edges
                    .iter()
                    .copied()
                    .filter(|e| c.binary_search(&e.0).is_ok())
                    .collect();
                nodes.push(Node {
                    birth: lam,
                    death: lam,
                    members: c.clone(),
                    exit: vec![lam; c.len()],
                    children: Vec::new(),
                });
                nodes[id].children.push(child);
                work.push((child, child_edges));
            }
            break;
        }
        let node = &mut nodes[id];
        for (p, lam) in exits {
            let k = node.members.binary_search(&p).expect("exit of a member");
            node.exit[k] = lam;
        }
    }
    nodes
}

/// HDBSCAN with `min_samples == min_cluster_size` (core distance counts the
/// point itself), excess-of-mass selection with the root eligible, then the
/// largest selected cluster; ties go to the cluster with the smallest index.
///
/// A selected child cluster owns every point it had at birth. When the root
/// itself is selected, only the points that stay until its final split count.
pub fn hdbscan_largest_cluster(dist: &[Vec<f64>], min_cluster_size: usize) -> Result<Clustering> {
    if min_cluster_size < 2 {
        return Err(Error::invalid(format!(
            "min_cluster_size must be at least 2, got {min_cluster_size}"
        )));
    }
    validate(dist)?;
    let n = dist.len();
    if n < min_cluster_size {
        return Ok(Clustering {
            members: (0..n).collect(),
            degenerate: true,
        });
    }
    let core = core_distances(dist, min_cluster_size);
    let mst = prim(&mutual_reachability(dist, &core));
    let nodes = condense(n, mst, min_cluster_size);

    let stability: Vec<f64> = nodes
        .iter()
        .map(|c| c.exit.iter().map(|&l| l - c.birth).sum())
        .collect();
    let mut best = vec![0.0; nodes.len()];
    let mut selected = vec![false; nodes.len()];
    for id in (0..nodes.len()).rev() {
        let below: f64 = nodes[id].children.iter().map(|&c| best[c]).sum();
        if nodes[id].children.is_empty() || stability[id] >= below {
            selected[id] = true;
            best[id] = stability[id];
        } else {
            best[id] = below;
        }
    }
    let mut chosen: Vec<usize> = Vec::new();
    let mut stack = vec![0];
    while let Some(id) = stack.pop() {
        if selected[id] {
            chosen.push(id);
        } else {
            stack.extend(nodes[id].children.iter().rev());
        }
    }
    let winner = chosen
        .into_iter()
        .min_by(|&a, &b| {
            nodes[b]
                .members
                .len()
                .cmp(&nodes[a].members.len())
                .then(nodes[a].members[0].cmp(&nodes[b].members[0]))
        })
        .expect("the root is always eligible");
    let node = &nodes[winner];
    let members = if winner == 0 {
        node.members
            .iter()
            .zip(&node.exit)
            .filter(|(_, &l)| l == node.death)
            .map(|(&p, _)| p)
            .collect()
    } else {
        node.members.clone()
    };
    Ok(Clustering {
        members,
        degenerate: false,
    })
}
