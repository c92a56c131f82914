use fedkd::nn::{forward, Batch, DenseTensor, FlatParams, LayerSpec, ModelSpec};
use fedkd::rng::RngStream;
use rand::Rng;

/// Random small conv or dense net with a random batch carrying soft targets.
pub fn random_case(seed: u64) -> (ModelSpec, FlatParams, Batch) {
    let mut rng = RngStream::new(seed).rng();
    let classes = rng.random_range(2..=6);
    let conv = rng.random_bool(0.6);
    let model = if conv {
        let c = rng.random_range(1..=2);
        let hw = rng.random_range(6..=9);
        ModelSpec::new(
            vec![
                LayerSpec::Conv2d {
                    out_channels: rng.random_range(2..=4),
                    kernel_h: 3,
                    kernel_w: 3,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    out_features: rng.random_range(4..=12),
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    out_features: classes,
                },
            ],
            vec![c, hw, hw],
            classes,
        )
        .unwrap()
    } else {
        ModelSpec::new(
            vec![
                LayerSpec::Dense {
                    out_features: rng.random_range(4..=16),
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    out_features: rng.random_range(4..=16),
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    out_features: classes,
                },
            ],
            vec![rng.random_range(3..=20)],
            classes,
        )
        .unwrap()
    };
    assert!(model.num_params() <= 5000);
    let params = model.init_params(RngStream::new(seed).derive(1));
    let b = rng.random_range(1..=8);
    let mut shape = vec![b];
    shape.extend(model.input_shape());
    let n: usize = shape.iter().product();
    let inputs = DenseTensor::new(shape, (0..n).map(|_| rng.random::<f32>()).collect()).unwrap();
    let labels = (0..b).map(|_| rng.random_range(0..classes)).collect();
    let teacher_params = model.init_params(RngStream::new(seed).derive(2));
    let soft = forward(&model, &teacher_params, &inputs).unwrap();
    (model, params, Batch::new(inputs, labels, Some(soft)))
}
