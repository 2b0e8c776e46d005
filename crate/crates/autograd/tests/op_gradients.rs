use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vivat_autograd::gradcheck::{check_gradients, worst};
use vivat_autograd::{Graph, PadMode, Tensor, Var};

const TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Contract a tensor with fixed random weights so every output element matters.
fn project(g: &mut Graph<f64>, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(x), 1.0);
    let w = g.constant(w);
    let p = g.mul(x, w).unwrap();
    g.sum(p)
}

fn assert_ok(name: &str, inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let reports = check_gradients(inputs, STEP, f);
    let err = worst(&reports);
    assert!(err < TOL, "{name}: relative error {err:e} ({reports:?})");
}

#[test]
fn conv_and_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[2, 3, 6, 5], 1.0);
    let w = rand_tensor(&mut rng, &[4, 3, 3, 3], 0.5);
    for mode in [PadMode::Zero, PadMode::Reflect] {
        for stride in [1, 2] {
            assert_ok("conv", &[x.clone(), w.clone()], |g, v| {
                let p = g.pad(v[0], 1, mode).unwrap();
                let y = g.conv2d(p, v[1], stride).unwrap();
                project(g, y, 7)
            });
        }
    }
    let w1 = rand_tensor(&mut rng, &[2, 3, 1, 1], 0.5);
    assert_ok("conv1x1", &[x, w1], |g, v| {
        let y = g.conv2d(v[0], v[1], 1).unwrap();
        project(g, y, 8)
    });
}

#[test]
fn group_norm_and_channel_affine() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[2, 4, 3, 3], 2.0);
    let s = rand_tensor(&mut rng, &[4], 1.0);
    let b = rand_tensor(&mut rng, &[4], 1.0);
    assert_ok("group_norm", &[x, s, b], |g, v| {
        let y = g.group_norm(v[0], 2, 1e-6).unwrap();
        let y = g.channel_scale(y, v[1]).unwrap();
        let y = g.channel_bias(y, v[2]).unwrap();
        project(g, y, 9)
    });
}

#[test]
fn pointwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[2, 2, 3, 3], 2.0);
    let y = rand_tensor(&mut rng, &[2, 2, 3, 3], 2.0);
    type Unary = fn(&mut Graph<f64>, Var) -> Var;
    let unaries: [(&str, Unary); 8] = [
        ("silu", |g, v| g.silu(v)),
        ("leaky", |g, v| g.leaky_relu(v, 0.2)),
        ("relu", |g, v| g.relu(v)),
        ("exp", |g, v| g.exp(v)),
        ("softplus", |g, v| g.softplus(v)),
        ("abs", |g, v| g.abs(v)),
        ("square", |g, v| g.square(v)),
        ("clamp", |g, v| g.clamp(v, -0.5, 0.7)),
    ];
    for (name, op) in unaries {
        assert_ok(name, &[x.clone()], |g, v| {
            let o = op(g, v[0]);
            project(g, o, 10)
        });
    }
    assert_ok("binary", &[x.clone(), y.clone()], |g, v| {
        let a = g.add(v[0], v[1]).unwrap();
        let m = g.mul(a, v[1]).unwrap();
        let s = g.sub(m, v[0]).unwrap();
        let s = g.scale(s, 0.3);
        let s = g.add_scalar(s, 2.0);
        project(g, s, 11)
    });
    assert_ok("mean", &[x], |g, v| {
        let sq = g.square(v[0]);
        g.mean(sq)
    });
}

#[test]
fn attention_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = rand_tensor(&mut rng, &[2, 3, 5], 1.0);
    let k = rand_tensor(&mut rng, &[2, 3, 5], 1.0);
    let v = rand_tensor(&mut rng, &[2, 3, 5], 1.0);
    assert_ok("qkv", &[q, k, v], |g, x| {
        let s = g.bmm(x[0], x[1], true, false).unwrap();
        let a = g.softmax_last(s);
        let o = g.bmm(x[2], a, false, true).unwrap();
        let o = g.reshape(o, &[2, 15]).unwrap();
        project(g, o, 12)
    });
    let a = rand_tensor(&mut rng, &[2, 4, 3], 1.0);
    let b = rand_tensor(&mut rng, &[2, 4, 3], 1.0);
    assert_ok("bmm_tt", &[a, b], |g, x| {
        let o = g.bmm(x[0], x[1], true, true).unwrap_err();
        let _ = o;
        let o = g.bmm(x[0], x[1], false, true).unwrap();
        project(g, o, 13)
    });
}

#[test]
fn upsample() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[1, 2, 3, 2], 1.0);
    assert_ok("upsample", &[x], |g, v| {
        let u = g.upsample_nearest(v[0], 3).unwrap();
        project(g, u, 14)
    });
}
