use moe_neural::gradcheck::{check_gradients, Objective};
use moe_neural::layers::*;
use moe_neural::network::{ArchSpec, Network};
use moe_neural::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const EPS: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
}

fn assert_layer(name: &str, layer: &mut dyn Layer, x: &Tensor) {
    let r = check_gradients(layer, x, &Objective::Projection(5), EPS).unwrap();
    println!("{name}: max relative error {:.2e} at {} over {}", r.max_relative_error, r.worst, r.checked);
    assert!(r.max_relative_error < TOL, "{name}: {r:?}");
}

#[test]
fn every_layer_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x4 = input(&[4, 4, 6, 6], 2);
    assert_layer("conv 3x3", &mut Conv2d::new("c", 4, 3, (3, 3), 1, &mut rng).unwrap(), &x4);
    assert_layer("conv 1x3", &mut Conv2d::new("c", 4, 2, (1, 3), 1, &mut rng).unwrap(), &x4);
    assert_layer("conv 3x1 grouped", &mut Conv2d::new("c", 4, 4, (3, 1), 2, &mut rng).unwrap(), &x4);
    assert_layer("batch norm 2d", &mut BatchNorm::new("b", 4), &x4);
    assert_layer("batch norm 1d", &mut BatchNorm::new("b", 5), &input(&[4, 5], 3));
    assert_layer("relu", &mut Relu::new(), &x4);
    assert_layer("max pool", &mut MaxPool2d::new(), &x4);
    assert_layer("dropout", &mut Dropout::new(0.3, 9).unwrap(), &x4);
    assert_layer("flatten", &mut Flatten::new(), &x4);
    assert_layer("dense", &mut Dense::new("d", 7, 3, &mut rng), &input(&[4, 7], 4));
    let par = Parallel::new(vec![
        Box::new(Conv2d::new("a", 4, 2, (1, 3), 1, &mut rng).unwrap()),
        Box::new(Conv2d::new("b", 4, 3, (3, 1), 1, &mut rng).unwrap()),
    ]);
    assert_layer("parallel", &mut { par }, &x4);
    let res = Residual::new(Box::new(Conv2d::new("r", 4, 4, (3, 3), 1, &mut rng).unwrap()));
    assert_layer("residual", &mut { res }, &x4);
}

#[test]
fn toy_rcnn_matches_finite_differences() {
    let spec = ArchSpec {
        branch_channels: 2,
        hidden: vec![8],
        ..ArchSpec::rcnn(18, 6, 11)
    };
    let mut net = Network::build(&spec).unwrap();
    let x = input(&[4, 2, 6, 6], 12);
    let r = check_gradients(net.as_layer_mut(), &x, &Objective::CrossEntropy(vec![1, 5, 9, 18]), EPS).unwrap();
    println!("toy rcnn: max relative error {:.2e} at {} over {}", r.max_relative_error, r.worst, r.checked);
    assert!(r.max_relative_error < TOL, "{r:?}");
}
