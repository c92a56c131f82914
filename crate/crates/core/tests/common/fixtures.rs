//! Seeded random inputs shared by the oracle comparisons.

use fedkd::rng::RngStream;
use rand::Rng;

/// `count` update sets with 4..=8 members and 1..=16 coordinates; some sets
/// carry duplicated updates so distance ties occur.
pub fn krum_sets(count: usize, seed: u64) -> Vec<Vec<Vec<f32>>> {
    let mut rng = RngStream::new(seed).rng();
    (0..count)
        .map(|_| {
            let n = rng.random_range(4..=8);
            let dim = rng.random_range(1..=16);
            let mut set: Vec<Vec<f32>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect())
                .collect();
            if rng.random_bool(0.3) {
                let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
                set[a] = set[b].clone();
            }
            if rng.random_bool(0.2) {
                for v in &mut set {
                    for x in v.iter_mut() {
                        *x = x.round();
                    }
                }
            }
            set
        })
        .collect()
}

/// Distance matrices with up to 12 points: clustered points in the plane,
/// integer grids (many exact ties) and cosine distances.
pub fn hdbscan_fixtures(count: usize, seed: u64) -> Vec<(Vec<Vec<f64>>, usize)> {
    let mut rng = RngStream::new(seed).rng();
    (0..count)
        .map(|case| {
            let n = rng.random_range(2..=12);
            let mcs = rng.random_range(2..=5);
            let dist = match case % 3 {
                0 => {
                    let centers: Vec<(f64, f64)> = (0..rng.random_range(1..=3))
                        .map(|_| (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
                        .collect();
                    let pts: Vec<(f64, f64)> = (0..n)
                        .map(|_| {
                            let c = centers[rng.random_range(0..centers.len())];
                            (
                                c.0 + rng.random_range(-1.0..1.0),
                                c.1 + rng.random_range(-1.0..1.0),
                            )
                        })
                        .collect();
                    euclid(&pts)
                }
                1 => {
                    let pts: Vec<(f64, f64)> = (0..n)
                        .map(|_| (rng.random_range(0..4) as f64, rng.random_range(0..4) as f64))
                        .collect();
                    euclid(&pts)
                }
                _ => {
                    let v: Vec<Vec<f64>> = (0..n)
                        .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0) + 0.5).collect())
                        .collect();
                    (0..n)
                        .map(|i| {
                            (0..n)
                                .map(|j| {
                                    if i == j {
                                        return 0.0;
                                    }
                                    let dot: f64 = v[i].iter().zip(&v[j]).map(|(a, b)| a * b).sum();
                                    let ni: f64 = v[i].iter().map(|a| a * a).sum::<f64>().sqrt();
                                    let nj: f64 = v[j].iter().map(|a| a * a).sum::<f64>().sqrt();
                                    (1.0 - dot / (ni * nj)).max(0.0)
                                })
                                .collect()
                        })
                        .collect::<Vec<Vec<f64>>>()
                }
            };
            (symmetrize(dist), mcs)
        })
        .collect()
}

fn euclid(p: &[(f64, f64)]) -> Vec<Vec<f64>> {
    p.iter()
        .map(|a| {
            p.iter()
                .map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
                .collect()
        })
        .collect()
}

#[allow(clippy::needless_range_loop)]
fn symmetrize(mut d: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    for i in 0..d.len() {
        for j in 0..i {
            d[i][j] = d[j][i];
        }
    }
    d
}
