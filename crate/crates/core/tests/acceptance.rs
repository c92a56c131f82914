#![allow(clippy::needless_range_loop)]

//! Acceptance checks, one PASS/FAIL line each. Run with
//! `cargo test -p fedkd --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{cases::random_case, desk, fixtures, oracles};
use fedkd::aggregation::{
    hdbscan_largest_cluster, krum_scores, multi_krum, pairwise_distance, DefenseRule, Metric,
    UpdateSet,
};
use fedkd::attacks::{poisoned_soft_target, AttackMethod};
use fedkd::cli::run::metrics_csv;
use fedkd::data::Dataset;
use fedkd::federation::{run_simulation, SimConfig, Simulation};
use fedkd::metrics::{gain_report, rolling_average};
use fedkd::nn::{
    cross_entropy, grad_wrt_logits, gradient_check, kd_loss, DenseTensor, FlatUpdate, LossWeights,
};
use fedkd::rng::{purpose, RngStream};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs() < limit_s, || {
        format!("took {elapsed:.1?}, limit {limit_s}s")
    })
}

fn gradient_oracle() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let (model, params, batch) = random_case(1000 + seed);
        let alpha = [0.0, 0.5, 1.0][seed as usize % 3];
        let r = gradient_check(
            &model,
            &params,
            &batch,
            LossWeights::distill(alpha),
            1.0,
            1e-5,
            None,
            false,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_error);
        ensure(r.max_rel_error < 1e-4, || {
            format!("case {seed} (alpha {alpha}): error {:.3e}", r.max_rel_error)
        })?;
    }
    within(t.elapsed(), 60)?;
    Ok(format!(
        "20 cases, worst relative error {worst:.2e}, {:.1?}",
        t.elapsed()
    ))
}

fn logit_gradient_signs() -> Outcome {
    let mut rng = RngStream::new(2).rng();
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=12);
        let logits: Vec<f32> = (0..n).map(|_| rng.random_range(-15.0..15.0)).collect();
        let label = rng.random_range(0..n);
        let g = grad_wrt_logits(&DenseTensor::new(vec![1, n], logits).unwrap(), label).unwrap();
        violations += g
            .values()
            .iter()
            .enumerate()
            .filter(|&(j, &v)| if j == label { v >= 0.0 } else { v <= 0.0 })
            .count();
    }
    ensure(violations == 0, || format!("{violations} sign violations"))?;
    Ok("1000 pairs, 0 violations".into())
}

fn soft_target_rule() -> Outcome {
    let out = poisoned_soft_target(&[2.0, 0.0, -1.0], &[1.0, 0.0, 0.5], 0, 2, 2.0, 0.5)
        .map_err(|e| e.to_string())?;
    ensure(out == [2.0, 0.0, 7.5], || format!("fixture gave {out:?}"))?;
    let mut rng = RngStream::new(3).rng();
    for case in 0..1000 {
        let n = rng.random_range(2..=10);
        let clean: Vec<f32> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let poison: Vec<f32> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let label = rng.random_range(0..n);
        let target = (label + rng.random_range(1..n)) % n;
        let (gamma, beta) = (rng.random_range(0.0..4.0), rng.random_range(0.0..2.0));
        let t = poisoned_soft_target(&clean, &poison, label, target, gamma, beta).unwrap();
        let l = f64::from(clean[label]);
        let min = clean
            .iter()
            .map(|&v| f64::from(v))
            .fold(f64::INFINITY, f64::min);
        let floor = beta * (l - min);
        ensure(
            f64::from(t[target]) - l >= floor - 1e-4 * (1.0 + floor.abs()),
            || {
                format!(
                    "case {case}: target {} below floor {}",
                    t[target],
                    l + floor
                )
            },
        )?;
    }
    Ok("fixture exact, floor holds on 1000 random inputs".into())
}

fn aggregation_oracles() -> Outcome {
    let mut compared = 0;
    for (case, set) in fixtures::krum_sets(200, 41).into_iter().enumerate() {
        let n = set.len();
        let s = UpdateSet::from_updates(set.iter().map(|x| FlatUpdate::new(x.clone())).collect())
            .unwrap();
        for f in 0..=(n - 3) {
            let got = krum_scores(&s, f, true).unwrap();
            ensure(got == oracles::krum_scores(&set, f, true), || {
                format!("krum_scores case {case} f {f}")
            })?;
            if 2 * f + 2 <= n {
                for m in 1..=n {
                    let got = multi_krum(&s, f, m, 1.0, true).unwrap();
                    let (ids, agg) = oracles::multi_krum(&set, f, m, 1.0, true);
                    ensure(
                        got.accepted_ids == ids && got.aggregate.values() == agg.as_slice(),
                        || format!("multi_krum case {case} f {f} m {m}"),
                    )?;
                    compared += 1;
                }
            }
        }
    }
    for (case, (dist, mcs)) in fixtures::hdbscan_fixtures(100, 7).into_iter().enumerate() {
        let got = hdbscan_largest_cluster(&dist, mcs).unwrap();
        let want = oracles::hdbscan_largest(&dist, mcs);
        ensure((got.members, got.degenerate) == want, || {
            format!("hdbscan fixture {case}")
        })?;
    }
    Ok(format!(
        "200 krum sets ({compared} multi_krum settings), 100 hdbscan fixtures"
    ))
}

fn fedavg_attack() -> Outcome {
    let t = Instant::now();
    let attack = run_simulation(desk::fedavg_attack(1)).map_err(|e| e.to_string())?;
    let mut benign = desk::fedavg_attack(1);
    benign.attack.method = AttackMethod::Benign;
    let clean = run_simulation(benign).map_err(|e| e.to_string())?;
    let asr: Vec<f64> = attack
        .iter()
        .map(|r| r.asr.expect("evaluated every round"))
        .collect();
    let smoothed = *rolling_average(&asr, 5).unwrap().last().unwrap();
    let acc = attack.last().unwrap().accuracy.unwrap();
    let acc_clean = clean.last().unwrap().accuracy.unwrap();
    ensure(smoothed >= 0.9, || {
        format!("smoothed ASR {smoothed:.3} < 0.9")
    })?;
    ensure((acc - acc_clean).abs() <= 0.02, || {
        format!("accuracy {acc:.3} vs clean {acc_clean:.3}")
    })?;
    within(t.elapsed(), 600)?;
    Ok(format!(
        "smoothed ASR {smoothed:.3}, accuracy {acc:.3} vs clean {acc_clean:.3}, {:.0?}",
        t.elapsed()
    ))
}

fn percentile95(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = 0.95 * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Mean adversary-to-benign distance and the benign 95th percentile after
/// one round with adversaries 0..4.
fn one_round_distances(method: AttackMethod) -> Result<(f64, f64), String> {
    let adversaries = 4;
    let mut c = desk::stealth(1, method, adversaries);
    c.rounds = 1;
    let mut sim = Simulation::new(c).map_err(|e| e.to_string())?;
    let out = sim.run_round().map_err(|e| e.to_string())?;
    let ids = out.updates.ids();
    let d = pairwise_distance(&out.updates, Metric::Euclidean).map_err(|e| e.to_string())?;
    let adv = |i: usize| ids[i] < adversaries;
    ensure(
        ids.iter().filter(|&&id| id < adversaries).count() == adversaries,
        || "adversaries not all selected".into(),
    )?;
    let (mut cross, mut benign) = (Vec::new(), Vec::new());
    for i in 0..ids.len() {
        for j in 0..ids.len() {
            if adv(i) && !adv(j) {
                cross.push(d[i][j]);
            }
            if !adv(i) && !adv(j) && i < j {
                benign.push(d[i][j]);
            }
        }
    }
    Ok((
        cross.iter().sum::<f64>() / cross.len() as f64,
        percentile95(benign),
    ))
}

fn outlier_visibility() -> Outcome {
    let (naive, p95) = one_round_distances(AttackMethod::Naive)?;
    let (enh, _) = one_round_distances(AttackMethod::AdvkdEnh)?;
    ensure(naive > p95, || {
        format!("naive mean {naive:.4} <= benign p95 {p95:.4}")
    })?;
    ensure(enh < naive, || {
        format!("advkd_enh mean {enh:.4} >= naive {naive:.4}")
    })?;
    Ok(format!(
        "naive {naive:.4} > benign p95 {p95:.4}; advkd_enh {enh:.4}"
    ))
}

fn defense_bypass() -> Outcome {
    let t = Instant::now();
    let cum = |method| -> Result<Vec<usize>, String> {
        let records = run_simulation(desk::multi_krum(desk::stealth(1, method, 1), 30))
            .map_err(|e| e.to_string())?;
        Ok(records.iter().map(|r| r.adversary_selected_cum).collect())
    };
    let naive = cum(AttackMethod::Naive)?;
    let advkd = cum(AttackMethod::AdvkdReg)?;
    ensure(naive.iter().all(|&c| c == 0), || {
        format!("naive accepted: {naive:?}")
    })?;
    ensure(advkd[29] > advkd[14] && advkd[14] > 0, || {
        format!("advkd accepted counts {advkd:?}")
    })?;
    within(t.elapsed(), 900)?;
    Ok(format!(
        "naive 0 over 30 rounds; advkd_reg {} at round 15, {} at round 30, {:.0?}",
        advkd[14],
        advkd[29],
        t.elapsed()
    ))
}

fn gain_direction() -> Outcome {
    let seed = 3;
    let mut medians = Vec::new();
    for method in [
        AttackMethod::Naive,
        AttackMethod::AdvkdEnh,
        AttackMethod::AdvkdReg,
    ] {
        let c = desk::gains(seed, method);
        let sim = Simulation::new(c.clone()).map_err(|e| e.to_string())?;
        let locals: Vec<(usize, Dataset)> = (0..c.num_participants)
            .map(|i| (i, sim.local_data(i).unwrap().clone()))
            .collect();
        let report = gain_report(
            sim.model(),
            &sim.state().params,
            &locals,
            &c.attack,
            &c.train,
            c.analysis.top_k,
            RngStream::new(seed).derive(purpose::GAINS),
        )
        .map_err(|e| e.to_string())?;
        medians.push(report.median_sign_gain().unwrap());
    }
    let [naive, enh, reg] = medians[..] else {
        unreachable!()
    };
    ensure(naive < enh && enh < reg, || {
        format!("naive {naive}, advkd_enh {enh}, advkd_reg {reg}")
    })?;
    Ok(format!(
        "median sign gain naive {naive} < advkd_enh {enh} < advkd_reg {reg}"
    ))
}

fn metrics_of(config: &SimConfig, threads: usize) -> Result<String, String> {
    let mut sim = Simulation::new(config.clone())
        .and_then(|s| s.with_threads(threads))
        .map_err(|e| e.to_string())?;
    let mut records = Vec::new();
    while !sim.is_finished() {
        records.push(sim.run_round().map_err(|e| e.to_string())?.record);
    }
    Ok(metrics_csv(&records))
}

fn determinism() -> Outcome {
    let rules = [
        ("fedavg", DefenseRule::Fedavg),
        (
            "multi_krum",
            DefenseRule::MultiKrum {
                f: 1,
                m: 3,
                krum_squared: true,
            },
        ),
        (
            "weak_dp",
            DefenseRule::NormClipDp {
                clip_norm: 0.5,
                sigma: 0.01,
            },
        ),
        (
            "flame",
            DefenseRule::Flame {
                lambda: 0.001,
                min_cluster_fraction: 0.5,
            },
        ),
    ];
    for (name, rule) in rules {
        let mut c = desk::fedavg_attack(1);
        c.rounds = 8;
        c.attack_start_round = 2;
        c.defense.rule = rule;
        let first = metrics_of(&c, 1)?;
        ensure(first == metrics_of(&c, 1)?, || {
            format!("{name}: reruns differ")
        })?;
        ensure(first == metrics_of(&c, 4)?, || {
            format!("{name}: 1 vs 4 workers differ")
        })?;
    }
    Ok("fedavg, multi_krum, weak_dp, flame: reruns and 1/4 workers byte-identical".into())
}

fn analytic_constants() -> Outcome {
    let ce = cross_entropy(&DenseTensor::new(vec![1, 10], vec![0.3; 10]).unwrap(), &[4]).unwrap();
    ensure((ce - 10f64.ln()).abs() < 1e-6, || {
        format!("cross entropy {ce}")
    })?;
    let x = DenseTensor::new(
        vec![2, 5],
        vec![0.5, -1.0, 3.0, 0.0, 2.0, 1.0, 1.0, -4.0, 0.25, 7.0],
    )
    .unwrap();
    for t in [0.5, 1.0, 4.0] {
        let kd = kd_loss(&x, &x, t).unwrap();
        ensure(kd.abs() < 1e-7, || format!("kd_loss(x, x, {t}) = {kd}"))?;
    }
    let series = [0.1, 0.9, 0.4, 0.35, 1.0];
    ensure(rolling_average(&series, 1).unwrap() == series, || {
        "window 1 changed the series".into()
    })?;
    Ok(format!("ce {ce:.9}, kd 0, window-1 identity"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gradient oracle", gradient_oracle),
        ("logit gradient signs", logit_gradient_signs),
        ("poisoned soft target", soft_target_rule),
        ("aggregation oracles", aggregation_oracles),
        ("fedavg attack", fedavg_attack),
        ("outlier visibility", outlier_visibility),
        ("multi-krum bypass", defense_bypass),
        ("gain direction", gain_direction),
        ("determinism", determinism),
        ("analytic constants", analytic_constants),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
