//! Analytic gradients of every primitive against central finite differences.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use woodvol_autodiff::gradcheck::{check_op, Build, Tolerance};
use woodvol_autodiff::Graph;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn check(name: &str, inputs: Vec<Array2<f64>>, build: &Build) {
    if let Err(m) = check_op(&inputs, build, Tolerance::default()) {
        panic!("{name}: {m}");
    }
}

#[test]
fn matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ins = vec![random(&mut rng, 5, 3), random(&mut rng, 3, 2)];
    check("matmul", ins, &|g, v| g.matmul(v[0], v[1]).unwrap());
}

#[test]
fn add_sub_and_row_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ins = vec![random(&mut rng, 5, 2), random(&mut rng, 5, 2), random(&mut rng, 1, 2)];
    check("add/sub/add_row", ins, &|g, v| {
        let a = g.add(v[0], v[1]).unwrap();
        let s = g.sub(a, v[1]).unwrap();
        let s = g.sub(s, v[1]).unwrap();
        g.add_row(s, v[2]).unwrap()
    });
}

#[test]
fn relu_and_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ins = vec![random(&mut rng, 5, 1)];
    check("relu", ins, &|g, v| {
        let r = g.relu(v[0]);
        g.scale(r, -1.7)
    });
}

#[test]
fn batch_norm_train() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ins = vec![random(&mut rng, 5, 2), random(&mut rng, 1, 2), random(&mut rng, 1, 2)];
    check("batch_norm(train)", ins, &|g, v| {
        g.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap().0
    });
}

#[test]
fn batch_norm_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ins = vec![random(&mut rng, 5, 2), random(&mut rng, 1, 2), random(&mut rng, 1, 2)];
    let mean = ndarray::array![0.3, -0.2];
    let var = ndarray::array![0.5, 2.0];
    check("batch_norm(eval)", ins, &move |g, v| {
        g.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5).unwrap()
    });
}

#[test]
fn segment_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ins = vec![random(&mut rng, 6, 2)];
    check("segment_max", ins, &|g, v| g.segment_max(v[0], 3).unwrap());
}

#[test]
fn concat_cols() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ins = vec![random(&mut rng, 5, 1), random(&mut rng, 5, 2)];
    check("concat", ins, &|g, v| g.concat_cols(&[v[0], v[1], v[0]]).unwrap());
}

#[test]
fn gather_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ins = vec![random(&mut rng, 5, 2)];
    check("gather", ins, &|g, v| {
        g.gather_rows(v[0], vec![4, 0, 0, 2, 4, 4]).unwrap()
    });
}

#[test]
fn segment_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ins = vec![random(&mut rng, 6, 3), random(&mut rng, 2, 6)];
    check("segment_matmul", ins, &|g, v| g.segment_matmul(v[0], v[1], 3).unwrap());
}

#[test]
fn composed_shared_affine_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ins = vec![
        random(&mut rng, 5, 3),
        random(&mut rng, 3, 4),
        random(&mut rng, 1, 4),
        random(&mut rng, 1, 4),
        random(&mut rng, 1, 4),
    ];
    check("affine+bn+relu+max", ins, &|g, v| {
        let y = g.affine(v[0], v[1], Some(v[2])).unwrap();
        let (y, _) = g.batch_norm_train(y, v[3], v[4], 1e-5).unwrap();
        let y = g.relu(y);
        g.max_rows(y).unwrap()
    });
}

#[test]
fn fused_batch_norm_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ins = vec![random(&mut rng, 6, 3), random(&mut rng, 1, 3), random(&mut rng, 1, 3)];
    check("bn_relu train", ins.clone(), &|g, v| {
        g.batch_norm_relu_train(v[0], v[1], v[2], 1e-5).unwrap().0
    });
    let mean = ndarray::Array1::from(vec![0.1, -0.2, 0.3]);
    let var = ndarray::Array1::from(vec![0.5, 1.5, 0.8]);
    check("bn_relu eval", ins, &move |g, v| {
        g.batch_norm_relu_eval(v[0], v[1], v[2], &mean, &var, 1e-5).unwrap()
    });
}

#[test]
fn fused_matches_unfused() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&mut rng, 7, 4);
    let gamma = random(&mut rng, 1, 4);
    let beta = random(&mut rng, 1, 4);
    let mut g = Graph::new();
    let (x, gamma, beta) = (g.constant(x), g.constant(gamma), g.constant(beta));
    let (y, _) = g.batch_norm_train(x, gamma, beta, 1e-5).unwrap();
    let y = g.relu(y);
    let (z, _) = g.batch_norm_relu_train(x, gamma, beta, 1e-5).unwrap();
    assert_eq!(g.value(y), g.value(z));
}
