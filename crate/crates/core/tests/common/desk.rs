//! Desk-scale experiment fixtures: 20 participants on 16x16 blobs with a
//! small CNN, warmed up centrally before federated rounds start.

use fedkd::aggregation::DefenseRule;
use fedkd::attacks::{AttackMethod, LocalTrainConfig};
use fedkd::data::{TriggerPixel, TriggerSpec};
use fedkd::federation::SimConfig;
use fedkd::nn::LayerSpec;

pub fn small_cnn() -> Vec<LayerSpec> {
    serde_json::from_value(serde_json::json!([
        {"conv2d": {"out_channels": 8, "kernel_h": 3, "kernel_w": 3}}, "relu", {"max_pool": {"size": 2}},
        {"conv2d": {"out_channels": 16, "kernel_h": 3, "kernel_w": 3}}, "relu", {"max_pool": {"size": 2}},
        "flatten", {"dense": {"out_features": 32}}, "relu", {"dense": {"out_features": 10}}
    ]))
    .unwrap()
}

/// White `size`x`size` square in the top-left corner.
pub fn square_trigger(size: usize, target: usize) -> TriggerSpec {
    let pixels = (0..size)
        .flat_map(|row| {
            (0..size).map(move |col| TriggerPixel {
                row,
                col,
                channel: 0,
                value: 1.0,
            })
        })
        .collect();
    TriggerSpec::new(pixels, target).unwrap()
}

fn warm(epochs: usize, lr: f64) -> LocalTrainConfig {
    LocalTrainConfig {
        epochs,
        batch_size: 32,
        lr,
    }
}

pub fn desk(seed: u64, sigma: f64, pretrain: LocalTrainConfig) -> SimConfig {
    let mut c: SimConfig = serde_json::from_value(serde_json::json!({
        "seed": seed,
        "dataset": {"blobs": {"per_class": 200, "test_per_class": 50, "sigma": sigma}},
        "num_participants": 20,
        "per_round": 6,
        "rounds": 40,
        "attack_start_round": 5,
        "partition": {"alpha": 5.0},
        "train": {"epochs": 3, "batch_size": 32, "lr": 0.1},
        "attack": {"method": "naive", "poison_fraction": 0.5},
    }))
    .unwrap();
    c.model = Some(small_cnn());
    c.attack.trigger = square_trigger(4, 0);
    c.pretrain = Some(pretrain);
    c
}

/// One naive adversary under FedAvg from round 5 of 40.
pub fn fedavg_attack(seed: u64) -> SimConfig {
    desk(seed, 0.2, warm(4, 0.2))
}

/// Moderately trained model on noisier blobs; attackers use long local
/// training and heavy poisoning so label flipping shows up in the updates.
pub fn stealth(seed: u64, method: AttackMethod, adversaries: usize) -> SimConfig {
    let mut c = desk(seed, 0.35, warm(2, 0.1));
    c.per_round = 12;
    c.attack_start_round = 0;
    c.adversary_ids = Some((0..adversaries).collect());
    c.train.epochs = 6;
    c.attack.poison_fraction = 0.7;
    c.attack.method = method;
    c.attack.alpha = if method == AttackMethod::Naive {
        0.0
    } else {
        0.7
    };
    c
}

pub fn multi_krum(mut c: SimConfig, rounds: usize) -> SimConfig {
    c.rounds = rounds;
    c.defense.rule = DefenseRule::MultiKrum {
        f: 4,
        m: 8,
        krum_squared: true,
    };
    c
}

/// Well-converged global model for update-gain comparisons.
pub fn gains(seed: u64, method: AttackMethod) -> SimConfig {
    let mut c = desk(seed, 0.2, warm(8, 0.2));
    c.train.epochs = 6;
    c.attack.poison_fraction = 0.7;
    c.attack.method = method;
    c.attack.alpha = if method == AttackMethod::Naive {
        0.0
    } else {
        0.7
    };
    c
}
