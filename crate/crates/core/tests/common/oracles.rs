//! Slow reference implementations used to cross-check the library.

fn sq(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = f64::from(a[i]) - f64::from(b[i]);
        s += d * d;
    }
    s
}

fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if items.len() < k {
        return vec![];
    }
    let mut out = subsets(&items[1..], k - 1);
    for s in &mut out {
        s.insert(0, items[0]);
    }
    out.extend(subsets(&items[1..], k));
    out
}

/// Minimum over every neighbour set of size n-f-2 of the summed distances.
pub fn krum_scores(updates: &[Vec<f32>], f: usize, squared: bool) -> Vec<f64> {
    let n = updates.len();
    let k = n - f - 2;
    (0..n)
        .map(|i| {
            let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            subsets(&others, k)
                .into_iter()
                .map(|s| {
                    let mut v: Vec<f64> = s
                        .iter()
                        .map(|&j| {
                            let d = sq(&updates[i], &updates[j]);
                            if squared {
                                d
                            } else {
                                d.sqrt()
                            }
                        })
                        .collect();
                    v.sort_by(f64::total_cmp);
                    v.iter().sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// The unique m-subset that beats every outsider on (score, id), and its
/// scaled mean.
pub fn multi_krum(
    updates: &[Vec<f32>],
    f: usize,
    m: usize,
    eta: f64,
    squared: bool,
) -> (Vec<usize>, Vec<f32>) {
    let n = updates.len();
    let scores = krum_scores(updates, f, squared);
    let all: Vec<usize> = (0..n).collect();
    let beats = |i: usize, j: usize| scores[i] < scores[j] || (scores[i] == scores[j] && i < j);
    let chosen: Vec<Vec<usize>> = subsets(&all, m)
        .into_iter()
        .filter(|s| {
            s.iter()
                .all(|&i| (0..n).filter(|j| !s.contains(j)).all(|j| beats(i, j)))
        })
        .collect();
    assert_eq!(chosen.len(), 1);
    let s = chosen.into_iter().next().unwrap();
    let dim = updates[0].len();
    let mut acc = vec![0.0f64; dim];
    for &i in &s {
        for d in 0..dim {
            acc[d] += f64::from(updates[i][d]);
        }
    }
    let scale = eta / m as f64;
    (s, acc.iter().map(|a| (a * scale) as f32).collect())
}

struct Cluster {
    birth: f64,
    death: f64,
    points: Vec<usize>,
    exit: Vec<f64>,
    children: Vec<usize>,
}

fn threshold_components(set: &[usize], mr: &[Vec<f64>], below: f64) -> Vec<Vec<usize>> {
    let mut seen = vec![false; set.len()];
    let mut out = Vec::new();
    for s in 0..set.len() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![set[s]];
        let mut frontier = vec![s];
        while let Some(a) = frontier.pop() {
            for b in 0..set.len() {
                if !seen[b] && mr[set[a]][set[b]] < below {
                    seen[b] = true;
                    comp.push(set[b]);
                    frontier.push(b);
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out.sort_by_key(|c| c[0]);
    out
}

/// HDBSCAN straight from the definition: threshold graphs on the full
/// mutual-reachability matrix instead of a spanning tree.
pub fn hdbscan_largest(dist: &[Vec<f64>], mcs: usize) -> (Vec<usize>, bool) {
    let n = dist.len();
    if n < mcs {
        return ((0..n).collect(), true);
    }
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut cands = dist[i].clone();
            cands.sort_by(f64::total_cmp);
            *cands
                .iter()
                .find(|&&d| dist[i].iter().filter(|&&e| e <= d).count() >= mcs)
                .unwrap()
        })
        .collect();
    let mr: Vec<Vec<f64>> = (0..n)
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
        .collect();

    let mut clusters = vec![Cluster {
        birth: 0.0,
        death: 0.0,
        points: (0..n).collect(),
        exit: vec![0.0; n],
        children: vec![],
    }];
    let mut todo = vec![0usize];
    while let Some(c) = todo.pop() {
        let mut alive = clusters[c].points.clone();
        loop {
            let mut weights: Vec<f64> = Vec::new();
            for &a in &alive {
                for &b in &alive {
                    if a < b {
                        weights.push(mr[a][b]);
                    }
                }
            }
            weights.sort_by(|x, y| y.total_cmp(x));
            weights.dedup();
            let mut split = None;
            for &w in &weights {
                let comps = threshold_components(&alive, &mr, w);
                if comps.len() > 1 {
                    split = Some((w, comps));
                    break;
                }
            }
            let (w, comps) = split.expect("a connected set eventually disconnects");
            let lam = 1.0 / w.max(1e-300);
            let big: Vec<Vec<usize>> = comps.iter().filter(|x| x.len() >= mcs).cloned().collect();
            let set_exit = |cl: &mut Cluster, p: usize| {
                let k = cl.points.iter().position(|&q| q == p).unwrap();
                cl.exit[k] = lam;
            };
            if big.len() == 1 {
                for comp in comps.iter().filter(|x| x.len() < mcs) {
                    for &p in comp {
                        set_exit(&mut clusters[c], p);
                    }
                }
                alive = big[0].clone();
                continue;
            }
            for &p in &alive {
                set_exit(&mut clusters[c], p);
            }
            clusters[c].death = lam;
            for b in big {
                let id = clusters.len();
                let len = b.len();
                clusters.push(Cluster {
                    birth: lam,
                    death: lam,
                    points: b,
                    exit: vec![lam; len],
                    children: vec![],
                });
                clusters[c].children.push(id);
                todo.push(id);
            }
            break;
        }
    }

    let stab: Vec<f64> = clusters
        .iter()
        .map(|cl| {
            let mut s = 0.0;
            for &e in &cl.exit {
                s += e - cl.birth;
            }
            s
        })
        .collect();
    // Children always have larger ids than their parent.
    let mut best = vec![0.0; clusters.len()];
    let mut keep = vec![false; clusters.len()];
    for c in (0..clusters.len()).rev() {
        let mut below = 0.0;
        for &ch in &clusters[c].children {
            below += best[ch];
        }
        if clusters[c].children.is_empty() || stab[c] >= below {
            keep[c] = true;
            best[c] = stab[c];
        } else {
            best[c] = below;
        }
    }
    fn collect(c: usize, cl: &[Cluster], keep: &[bool], out: &mut Vec<usize>) {
        if keep[c] {
            out.push(c);
        } else {
            for &ch in &cl[c].children {
                collect(ch, cl, keep, out);
            }
        }
    }
    let mut selected = Vec::new();
    collect(0, &clusters, &keep, &mut selected);
    let members = |c: usize| -> Vec<usize> {
        let cl = &clusters[c];
        if c == 0 {
            cl.points
                .iter()
                .zip(&cl.exit)
                .filter(|(_, &e)| e == cl.death)
                .map(|(&p, _)| p)
                .collect()
        } else {
            cl.points.clone()
        }
    };
    let mut winner = selected[0];
    for &c in &selected[1..] {
        let (a, b) = (&clusters[c].points, &clusters[winner].points);
        if a.len() > b.len() || (a.len() == b.len() && a[0] < b[0]) {
            winner = c;
        }
    }
    (members(winner), false)
}
