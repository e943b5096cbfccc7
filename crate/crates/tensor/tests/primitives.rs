use binpack_tensor::{
    grad_check, Checkpoint, GradCheckConfig, Graph, HostTensor, Result, Scalar, ScalarFunction,
    Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> HostTensor {
    let n = shape.iter().product();
    HostTensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces an arbitrary tensor to a scalar with fixed, non-uniform weights so
/// every output element gets a distinct upstream gradient.
fn weighted_sum<T: Scalar>(g: &mut Graph<T>, t: Tensor) -> Result<Tensor> {
    let n = g.value(t).len();
    let shape = g.shape(t).to_vec();
    let w: Vec<T> = (0..n).map(|i| T::of(0.3 + 0.17 * ((i * 7) % 11) as f64)).collect();
    let w = g.constant(w, &shape)?;
    let p = g.mul(t, w)?;
    Ok(g.sum(p))
}

fn ok(t: Tensor) -> Result<Tensor> {
    Ok(t)
}

macro_rules! check_fn {
    ($name:ident, |$g:ident, $x:ident| $body:expr) => {
        struct $name;
        impl ScalarFunction for $name {
            fn eval<T: Scalar>(&self, $g: &mut Graph<T>, $x: &[Tensor]) -> Result<Tensor> {
                let out = $body?;
                weighted_sum($g, out)
            }
        }
    };
}

check_fn!(MatMul, |g, x| g.matmul(x[0], x[1]));
check_fn!(MatMulBt, |g, x| g.matmul_bt(x[0], x[1]));
check_fn!(AddMul, |g, x| {
    let s = g.add(x[0], x[1])?;
    g.mul(s, x[1])
});
check_fn!(RowOps, |g, x| {
    let a = g.add_row(x[0], x[1])?;
    g.mul_row(a, x[1])
});
check_fn!(Tanh, |g, x| ok(g.tanh(x[0])));
check_fn!(Relu, |g, x| ok(g.relu(x[0])));
check_fn!(Softmax, |g, x| ok(g.softmax(x[0])));
check_fn!(MaskedSoftmax, |g, x| {
    let n = g.value(x[0]).len();
    let mask: Vec<bool> = (0..n).map(|i| i % 3 == 1).collect();
    let m = g.masked_fill(x[0], &mask)?;
    ok(g.softmax(m))
});
check_fn!(MaskedLogSoftmaxPick, |g, x| {
    let n = g.value(x[0]).len();
    let mask: Vec<bool> = (0..n).map(|i| i % 4 == 2).collect();
    let m = g.masked_fill(x[0], &mask)?;
    let l = g.log_softmax(m);
    g.pick(l, 1)
});
check_fn!(LayerNorm, |g, x| ok(g.layer_norm(x[0])));
check_fn!(MeanRows, |g, x| {
    let rows = g.shape(x[0])[0];
    let sel: Vec<bool> = (0..rows).map(|i| i != 1).collect();
    let a = g.mean_rows(x[0], Some(&sel))?;
    let b = g.mean_rows(x[0], None)?;
    g.add(a, b)
});
check_fn!(ShapeOps, |g, x| {
    let t = g.transpose(x[0])?;
    let s = g.slice_cols(t, 1, 2)?;
    let c = g.concat_cols(&[s, t])?;
    let r = g.row(c, 1)?;
    g.reshape(r, &[1, g.value(r).len()])
});
check_fn!(Conv1d, |g, x| g.conv1d(x[0], x[1], x[2], 1, 1));
check_fn!(Conv1dStrided, |g, x| g.conv1d(x[0], x[1], x[2], 2, 0));
check_fn!(Conv2d, |g, x| g.conv2d(x[0], x[1], x[2], 1, 1));
check_fn!(Conv2dStrided, |g, x| g.conv2d(x[0], x[1], x[2], 2, 1));
check_fn!(MeanScale, |g, x| {
    let m = g.mean(x[0]);
    ok(g.scale(m, -2.5))
});

fn run<F: ScalarFunction>(f: &F, shapes: &[&[usize]], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<HostTensor> = shapes.iter().map(|s| random(s, &mut rng)).collect();
    let report = grad_check(
        f,
        &inputs,
        GradCheckConfig {
            eps: 1e-3,
            samples: 400,
            seed,
        },
    )
    .unwrap();
    report.max_rel_error
}

#[test]
fn every_primitive_passes_grad_check() {
    for seed in 0..4 {
        let cases: Vec<(&str, f64)> = vec![
            ("matmul", run(&MatMul, &[&[3, 4], &[4, 5]], seed)),
            ("matmul vector", run(&MatMul, &[&[4], &[4, 2]], seed)),
            ("matmul_bt", run(&MatMulBt, &[&[3, 4], &[5, 4]], seed)),
            ("add/mul", run(&AddMul, &[&[2, 3], &[2, 3]], seed)),
            ("row ops", run(&RowOps, &[&[3, 4], &[4]], seed)),
            ("tanh", run(&Tanh, &[&[7]], seed)),
            ("relu", run(&Relu, &[&[2, 5]], seed)),
            ("softmax", run(&Softmax, &[&[3, 5]], seed)),
            ("masked softmax", run(&MaskedSoftmax, &[&[2, 6]], seed)),
            ("masked log-softmax", run(&MaskedLogSoftmaxPick, &[&[9]], seed)),
            ("layer_norm", run(&LayerNorm, &[&[3, 6]], seed)),
            ("mean_rows", run(&MeanRows, &[&[4, 3]], seed)),
            ("shape ops", run(&ShapeOps, &[&[4, 3]], seed)),
            ("conv1d", run(&Conv1d, &[&[2, 7], &[3, 2, 3], &[3]], seed)),
            ("conv1d strided", run(&Conv1dStrided, &[&[2, 9], &[2, 2, 3], &[2]], seed)),
            ("conv2d", run(&Conv2d, &[&[2, 5, 5], &[3, 2, 3, 3], &[3]], seed)),
            ("conv2d strided", run(&Conv2dStrided, &[&[2, 7, 7], &[2, 2, 3, 3], &[2]], seed)),
            ("mean/scale", run(&MeanScale, &[&[3, 3]], seed)),
        ];
        for (name, err) in cases {
            assert!(err <= TOL, "{name} (seed {seed}): max relative error {err:e}");
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut c = Checkpoint::new(serde_json::json!({"d": 8, "name": "toy"}));
    c.push("a", random(&[3, 4], &mut rng));
    c.push("b", HostTensor::new(vec![2], vec![f32::MIN_POSITIVE, -0.0]).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    c.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.meta, c.meta);
    for ((na, ta), (nb, tb)) in c.tensors.iter().zip(&back.tensors) {
        assert_eq!(na, nb);
        assert_eq!(ta.shape, tb.shape);
        let bits_a: Vec<u32> = ta.data.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u32> = tb.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }
}

#[test]
fn repeated_evaluation_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[5, 8], &mut rng);
    let w = random(&[8, 8], &mut rng);
    let run = || {
        let mut g = Graph::<f32>::new();
        let a = g.param_f32(&x.data, &x.shape).unwrap();
        let b = g.param_f32(&w.data, &w.shape).unwrap();
        let y = g.matmul(a, b).unwrap();
        let y = g.layer_norm(y);
        let y = g.softmax(y);
        let s = weighted_sum(&mut g, y).unwrap();
        g.backward(s).unwrap();
        (g.scalar(s).to_bits(), g.grad(b).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_masked_are_zero(
        rows in 1usize..4,
        vals in prop::collection::vec(-30.0f32..30.0, 1..12),
        mask_bits in prop::collection::vec(any::<bool>(), 12),
    ) {
        let n = vals.len();
        let data: Vec<f32> = (0..rows).flat_map(|r| vals.iter().map(move |v| v + r as f32)).collect();
        let mut mask: Vec<bool> = (0..rows * n).map(|i| mask_bits[i % 12]).collect();
        for r in 0..rows {
            mask[r * n] = false;
        }
        let mut g = Graph::<f32>::new();
        let x = g.constant(data, &[rows, n]).unwrap();
        let x = g.masked_fill(x, &mask).unwrap();
        let p = g.softmax(x);
        let pv = g.value(p);
        for r in 0..rows {
            let s: f32 = pv[r * n..(r + 1) * n].iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
        for (v, m) in pv.iter().zip(&mask) {
            if *m {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }
}
