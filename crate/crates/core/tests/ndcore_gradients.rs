//! Finite-difference checks of every differentiable primitive in f64.

use mmfuse_core::ndcore::gradcheck::check;
use mmfuse_core::ndcore::{ConvGeom, MhsaVars, PoolGeom, Tape, Tensor, Var};
use mmfuse_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero, for kinked ops.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() { m } else { -m }
    })
}

fn run<F>(name: &str, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>, build: F)
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 13);
        let inputs = make(&mut rng);
        let report = check(&inputs, H, seed, &build).unwrap();
        let err = report.max_rel_error();
        assert!(err < TOL, "{name}: seed {seed} relative error {err:.3e} ({:?})", report.rel_errors);
    }
}

#[test]
fn elementwise_arithmetic() {
    run("add", |r| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[3, 4])], |t, v| t.add(v[0], v[1]));
    run("sub", |r| vec![rand_tensor(r, &[5]), rand_tensor(r, &[5])], |t, v| t.sub(v[0], v[1]));
    run("mul", |r| vec![rand_tensor(r, &[2, 3]), rand_tensor(r, &[2, 3])], |t, v| t.mul(v[0], v[1]));
    run("add_broadcast", |r| vec![rand_tensor(r, &[2, 3, 4]), rand_tensor(r, &[3, 4])], |t, v| {
        t.add_broadcast(v[0], v[1])
    });
    run("scale", |r| vec![rand_tensor(r, &[4])], |t, v| Ok(t.scale(v[0], -2.5)));
    run("sum", |r| vec![rand_tensor(r, &[3, 2])], |t, v| Ok(t.sum(v[0])));
}

#[test]
fn shape_ops() {
    run("mean_axis", |r| vec![rand_tensor(r, &[2, 3, 4])], |t, v| t.mean_axis(v[0], 1));
    run("reshape", |r| vec![rand_tensor(r, &[2, 6])], |t, v| t.reshape(v[0], &[3, 4]));
    run("permute", |r| vec![rand_tensor(r, &[2, 3, 4])], |t, v| t.permute(v[0], &[2, 0, 1]));
    run("concat", |r| vec![rand_tensor(r, &[2, 3]), rand_tensor(r, &[2, 5])], |t, v| t.concat(&[v[0], v[1]], 1));
    run("narrow", |r| vec![rand_tensor(r, &[3, 5])], |t, v| t.narrow(v[0], 1, 1, 3));
}

#[test]
fn linear_and_bmm() {
    run("linear", |r| vec![rand_tensor(r, &[2, 4]), rand_tensor(r, &[3, 4]), rand_tensor(r, &[3])], |t, v| {
        t.linear(v[0], v[1], Some(v[2]))
    });
    run("linear_3d", |r| vec![rand_tensor(r, &[2, 3, 4]), rand_tensor(r, &[5, 4])], |t, v| {
        t.linear(v[0], v[1], None)
    });
    run("bmm", |r| vec![rand_tensor(r, &[2, 3, 4]), rand_tensor(r, &[2, 4, 5])], |t, v| t.bmm(v[0], v[1], false));
    run("bmm_transposed", |r| vec![rand_tensor(r, &[2, 3, 4]), rand_tensor(r, &[2, 5, 4])], |t, v| {
        t.bmm(v[0], v[1], true)
    });
}

#[test]
fn convolution() {
    run(
        "conv2d_strided_padded",
        |r| vec![rand_tensor(r, &[2, 2, 5, 5]), rand_tensor(r, &[3, 2, 3, 3]), rand_tensor(r, &[3])],
        |t, v| t.conv(v[0], v[1], Some(v[2]), ConvGeom::cubic(2, 3, 2, 1)),
    );
    run(
        "conv3d",
        |r| vec![rand_tensor(r, &[1, 2, 4, 4, 3]), rand_tensor(r, &[2, 2, 3, 3, 3])],
        |t, v| t.conv(v[0], v[1], None, ConvGeom::cubic(3, 3, 1, 1)),
    );
    run(
        "conv3d_pointwise",
        |r| vec![rand_tensor(r, &[2, 3, 2, 2, 2]), rand_tensor(r, &[4, 3, 1, 1, 1]), rand_tensor(r, &[4])],
        |t, v| t.conv(v[0], v[1], Some(v[2]), ConvGeom::cubic(3, 1, 1, 0)),
    );
}

#[test]
fn pooling() {
    run("maxpool2d", |r| vec![rand_tensor(r, &[2, 2, 5, 5])], |t, v| t.maxpool(v[0], PoolGeom::cubic(2, 3, 2, 1)));
    run("maxpool3d", |r| vec![rand_tensor(r, &[1, 2, 4, 4, 4])], |t, v| t.maxpool(v[0], PoolGeom::cubic(3, 2, 2, 0)));
    run("avgpool3d", |r| vec![rand_tensor(r, &[1, 2, 4, 4, 2])], |t, v| t.avgpool(v[0], PoolGeom::cubic(3, 2, 2, 0)));
    run("avgpool_ceil", |r| vec![rand_tensor(r, &[1, 2, 3, 5])], |t, v| {
        t.avgpool(v[0], PoolGeom::cubic(2, 2, 2, 0).with_ceil_mode(true))
    });
    run("global_avgpool", |r| vec![rand_tensor(r, &[2, 3, 2, 3, 2])], |t, v| t.global_avgpool(v[0]));
}

#[test]
fn normalization() {
    run(
        "batchnorm_train",
        |r| vec![rand_tensor(r, &[3, 2, 2, 2]), rand_tensor(r, &[2]), rand_tensor(r, &[2])],
        |t, v| Ok(t.batch_norm_train(v[0], v[1], v[2])?.0),
    );
    run(
        "batchnorm_eval",
        |r| vec![rand_tensor(r, &[2, 3, 4]), rand_tensor(r, &[3]), rand_tensor(r, &[3])],
        |t, v| t.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0]),
    );
    run(
        "layernorm",
        |r| vec![rand_tensor(r, &[2, 3, 5]), rand_tensor(r, &[5]), rand_tensor(r, &[5])],
        |t, v| t.layer_norm(v[0], v[1], v[2]),
    );
}

#[test]
fn activations() {
    run("relu", |r| vec![away_from_zero(r, &[4, 3])], |t, v| Ok(t.relu(v[0])));
    run("gelu", |r| vec![rand_tensor(r, &[5])], |t, v| Ok(t.gelu(v[0])));
    run("sigmoid", |r| vec![rand_tensor(r, &[2, 3])], |t, v| Ok(t.sigmoid(v[0])));
    run("softmax", |r| vec![rand_tensor(r, &[3, 4])], |t, v| Ok(t.softmax(v[0])));
    run("dropout_mask", |r| vec![rand_tensor(r, &[6])], |t, v| {
        t.dropout_with_mask(v[0], vec![2.0, 0.0, 2.0, 2.0, 0.0, 2.0])
    });
}

#[test]
fn losses() {
    run("cross_entropy", |r| vec![rand_tensor(r, &[4, 2])], |t, v| t.cross_entropy(v[0], &[0, 1, 1, 0], None, None));
    run("cross_entropy_weighted_smoothed", |r| vec![rand_tensor(r, &[3, 3])], |t, v| {
        t.cross_entropy(v[0], &[2, 0, 1], Some(&[0.5, 2.0, 1.5]), Some(0.1))
    });
    run(
        "bce",
        |r| vec![Tensor::from_fn([4, 1], |_| r.random_range(0.05..0.95))],
        |t, v| t.bce(v[0], &[1, 0, 0, 1], Some(&[0.7, 1.8])),
    );
}

#[test]
fn multi_head_attention() {
    run(
        "mhsa",
        |r| {
            let mut v = vec![rand_tensor(r, &[2, 3, 4])];
            for _ in 0..4 {
                v.push(rand_tensor(r, &[4, 4]));
                v.push(rand_tensor(r, &[4]));
            }
            v
        },
        |t, v| {
            let p = MhsaVars { wq: v[1], bq: v[2], wk: v[3], bk: v[4], wv: v[5], bv: v[6], wo: v[7], bo: v[8] };
            t.mhsa(v[0], 2, &p)
        },
    );
}

#[test]
fn composite_graph_with_reuse() {
    // A value consumed twice must accumulate both gradient contributions.
    run("reuse", |r| vec![rand_tensor(r, &[3]), rand_tensor(r, &[3])], |t, v| {
        let a = t.mul(v[0], v[1])?;
        let b = t.gelu(a);
        let c = t.mul(b, v[0])?;
        t.add(c, a)
    });
}
