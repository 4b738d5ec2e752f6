//! Finite-difference checks for every differentiable primitive, over many
//! random seeds. Kinked ops (relu, max) get inputs constructed away from
//! their kinks so the central difference is valid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tapegrad::gradcheck::assert_gradients_close;
use tapegrad::{Tape, Tensor, TensorId};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn rvec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Keep every value at least `margin` away from zero (relu kink).
fn away_from_zero(v: &mut [f64], margin: f64) {
    for x in v.iter_mut() {
        if x.abs() < margin {
            *x += if *x >= 0.0 { margin } else { -margin };
        }
    }
}

/// Ensure the top-2 gap along `axis` of an `m × n` matrix exceeds `margin`
/// so a finite-difference step cannot flip the argmax.
fn widen_max_gaps(v: &mut [f64], m: usize, n: usize, axis: usize, margin: f64) {
    let lanes = if axis == 0 { n } else { m };
    for lane in 0..lanes {
        let idx = |t: usize| if axis == 0 { t * n + lane } else { lane * n + t };
        let len = if axis == 0 { m } else { n };
        let mut best = 0;
        for t in 1..len {
            if v[idx(t)] > v[idx(best)] {
                best = t;
            }
        }
        for t in 0..len {
            if t != best && v[idx(best)] - v[idx(t)] < margin {
                v[idx(t)] = v[idx(best)] - margin;
            }
        }
    }
}

fn grad_leaf(tape: &mut Tape, shape: &[usize], data: &[f64]) -> TensorId {
    tape.leaf(Tensor::new(shape.to_vec(), data.to_vec()).unwrap().with_grad())
}

/// Weighted sum with fixed random weights makes each output element matter
/// differently, catching transposed or misrouted gradients.
fn weighted_scalar(
    tape: &mut Tape,
    id: TensorId,
    weights: &[f64],
) -> tapegrad::Result<TensorId> {
    let shape = tape.shape(id).to_vec();
    let needed: usize = shape.iter().product();
    let w = tape.leaf(Tensor::new(shape, weights[..needed].to_vec())?);
    let prod = tape.mul(id, w)?;
    tape.sum_all(prod)
}

/// Unary op check over `SEEDS` random draws.
fn check_unary(
    name: &str,
    shape: [usize; 2],
    sample: impl Fn(&mut ChaCha8Rng, usize) -> Vec<f64>,
    apply: impl Fn(&mut Tape, TensorId) -> tapegrad::Result<TensorId>,
) {
    let numel = shape[0] * shape[1];
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 1);
        let x = sample(&mut rng, numel);
        let w = rvec(&mut rng, numel, -1.0, 1.0);
        let mut build = |tape: &mut Tape, ins: &[Vec<f64>]| {
            let a = grad_leaf(tape, &shape, &ins[0]);
            let y = apply(tape, a)?;
            let out = weighted_scalar(tape, y, &w)?;
            Ok((vec![a], out))
        };
        assert_gradients_close(&mut build, &[x], STEP, TOL);
        let _ = name;
    }
}

#[test]
fn elementwise_binary_ops() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rvec(&mut rng, 6, -2.0, 2.0);
        let mut b = rvec(&mut rng, 6, -2.0, 2.0);
        // divisors away from zero
        for x in b.iter_mut() {
            if x.abs() < 0.5 {
                *x += x.signum().max(0.5) * 0.7;
            }
        }
        let w = rvec(&mut rng, 6, -1.0, 1.0);
        for op in ["add", "sub", "mul", "div"] {
            let mut build = |tape: &mut Tape, ins: &[Vec<f64>]| {
                let x = grad_leaf(tape, &[2, 3], &ins[0]);
                let y = grad_leaf(tape, &[2, 3], &ins[1]);
                let z = match op {
                    "add" => tape.add(x, y)?,
                    "sub" => tape.sub(x, y)?,
                    "mul" => tape.mul(x, y)?,
                    _ => tape.div(x, y)?,
                };
                let out = weighted_scalar(tape, z, &w)?;
                Ok((vec![x, y], out))
            };
            assert_gradients_close(&mut build, &[a.clone(), b.clone()], STEP, TOL);
        }
    }
}

#[test]
fn scalar_constant_ops() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let a = rvec(&mut rng, 4, -2.0, 2.0);
        let c = rng.random_range(-1.5..1.5);
        let w = rvec(&mut rng, 4, -1.0, 1.0);
        for op in ["add_scalar", "mul_scalar"] {
            let mut build = |tape: &mut Tape, ins: &[Vec<f64>]| {
                let x = grad_leaf(tape, &[2, 2], &ins[0]);
                let z = if op == "add_scalar" {
                    tape.add_scalar(x, c)?
                } else {
                    tape.mul_scalar(x, c)?
                };
                let out = weighted_scalar(tape, z, &w)?;
                Ok((vec![x], out))
            };
            assert_gradients_close(&mut build, &[a.clone()], STEP, TOL);
        }
    }
}

#[test]
fn add_bias_broadcast() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
        let a = rvec(&mut rng, 6, -2.0, 2.0);
        let b = rvec(&mut rng, 3, -2.0, 2.0);
        let w = rvec(&mut rng, 6, -1.0, 1.0);
        let mut build = |tape: &mut Tape, ins: &[Vec<f64>]| {
            let x = grad_leaf(tape, &[2, 3], &ins[0]);
            let bias = grad_leaf(tape, &[3], &ins[1]);
            let z = tape.add_bias(x, bias)?;
            let out = weighted_scalar(tape, z, &w)?;
            Ok((vec![x, bias], out))
        };
        assert_gradients_close(&mut build, &[a, b], STEP, TOL);
    }
}

#[test]
fn matmul_and_transpose() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 300);
        let a = rvec(&mut rng, 6, -1.5, 1.5);
        let b = rvec(&mut rng, 8, -1.5, 1.5);
        let w = rvec(&mut rng, 3 * 4, -1.0, 1.0);
        let mut build = |tape: &mut Tape, ins: &[Vec<f64>]| {
            let x = grad_leaf(tape, &[3, 2], &ins[0]);
            let y = grad_leaf(tape, &[2, 4], &ins[1]);
            let z = tape.matmul(x, y)?;
            let out = weighted_scalar(tape, z, &w)?;
            Ok((vec![x, y], out))
        };
        assert_gradients_close(&mut build, &[a.clone(), b.clone()], STEP, TOL);

        let wt = rvec(&mut rng, 6, -1.0, 1.0);
        let mut build_t = |tape: &mut Tape, ins: &[Vec<f64>]| {
            let x = grad_leaf(tape, &[3, 2], &ins[0]);
            let z = tape.transpose(x)?;
            let out = weighted_scalar(tape, z, &wt)?;
            Ok((vec![x], out))
        };
        assert_gradients_close(&mut build_t, &[a.clone()], STEP, TOL);
    }
}

#[test]
fn activations() {
    check_unary("sigmoid", [2, 3], |r, n| rvec(r, n, -3.0, 3.0), |t, x| t.sigmoid(x));
    check_unary("tanh", [2, 3], |r, n| rvec(r, n, -3.0, 3.0), |t, x| t.tanh(x));
    check_unary("swish", [2, 3], |r, n| rvec(r, n, -3.0, 3.0), |t, x| t.swish(x));
    check_unary(
        "relu",
        [2, 3],
        |r, n| {
            let mut v = rvec(r, n, -2.0, 2.0);
            away_from_zero(&mut v, 1e-2);
            v
        },
        |t, x| t.relu(x),
    );
    check_unary("sqrt", [2, 3], |r, n| rvec(r, n, 0.2, 4.0), |t, x| t.sqrt(x));
}

#[test]
fn reductions() {
    check_unary("sum_all", [3, 2], |r, n| rvec(r, n, -2.0, 2.0), |t, x| t.sum_all(x));
    check_unary("mean_all", [3, 2], |r, n| rvec(r, n, -2.0, 2.0), |t, x| t.mean_all(x));
    for axis in [0usize, 1] {
        check_unary("sum_axis", [3, 4], |r, n| rvec(r, n, -2.0, 2.0), move |t, x| {
            t.sum_axis(x, axis)
        });
        check_unary("mean_axis", [3, 4], |r, n| rvec(r, n, -2.0, 2.0), move |t, x| {
            t.mean_axis(x, axis)
        });
        check_unary(
            "max_axis",
            [3, 4],
            move |r, n| {
                let mut v = rvec(r, n, -2.0, 2.0);
                widen_max_gaps(&mut v, 3, 4, axis, 1e-2);
                v
            },
            move |t, x| Ok(t.max_axis(x, axis)?.0),
        );
    }
}

#[test]
fn structural_ops() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 400);
        let a = rvec(&mut rng, 6, -2.0, 2.0);
        let b = rvec(&mut rng, 4, -2.0, 2.0);

        // concat_rows: [3,2] + [2,2]
        let w = rvec(&mut rng, 10, -1.0, 1.0);
        let mut build = |tape: &mut Tape, ins: &[Vec<f64>]| {
            let x = grad_leaf(tape, &[3, 2], &ins[0]);
            let y = grad_leaf(tape, &[2, 2], &ins[1]);
            let z = tape.concat_rows(&[x, y])?;
            let out = weighted_scalar(tape, z, &w)?;
            Ok((vec![x, y], out))
        };
        assert_gradients_close(&mut build, &[a.clone(), b.clone()], STEP, TOL);

        // concat_cols: [2,3] + [2,2]
        let w2 = rvec(&mut rng, 10, -1.0, 1.0);
        let mut build2 = |tape: &mut Tape, ins: &[Vec<f64>]| {
            let x = grad_leaf(tape, &[2, 3], &ins[0]);
            let y = grad_leaf(tape, &[2, 2], &ins[1]);
            let z = tape.concat_cols(&[x, y])?;
            let out = weighted_scalar(tape, z, &w2)?;
            Ok((vec![x, y], out))
        };
        assert_gradients_close(&mut build2, &[a.clone(), b.clone()], STEP, TOL);

        // gather_rows with a repeated index exercises scatter-add
        let w3 = rvec(&mut rng, 8, -1.0, 1.0);
        let mut build3 = |tape: &mut Tape, ins: &[Vec<f64>]| {
            let x = grad_leaf(tape, &[3, 2], &ins[0]);
            let z = tape.gather_rows(x, &[2, 0, 2, 1])?;
            let out = weighted_scalar(tape, z, &w3)?;
            Ok((vec![x], out))
        };
        assert_gradients_close(&mut build3, &[a.clone()], STEP, TOL);

        let w4 = rvec(&mut rng, 4, -1.0, 1.0);
        let mut build4 = |tape: &mut Tape, ins: &[Vec<f64>]| {
            let x = grad_leaf(tape, &[3, 2], &ins[0]);
            let z = tape.slice_rows(x, 1, 3)?;
            let out = weighted_scalar(tape, z, &w4)?;
            Ok((vec![x], out))
        };
        assert_gradients_close(&mut build4, &[a.clone()], STEP, TOL);

        let w5 = rvec(&mut rng, 4, -1.0, 1.0);
        let mut build5 = |tape: &mut Tape, ins: &[Vec<f64>]| {
            let x = grad_leaf(tape, &[2, 3], &ins[0]);
            let z = tape.slice_cols(x, 1, 3)?;
            let out = weighted_scalar(tape, z, &w5)?;
            Ok((vec![x], out))
        };
        assert_gradients_close(&mut build5, &[a.clone()], STEP, TOL);

        // select + stack_scalars round through single elements
        let mut build6 = |tape: &mut Tape, ins: &[Vec<f64>]| {
            let x = grad_leaf(tape, &[2, 3], &ins[0]);
            let s1 = tape.select(x, 0, 1)?;
            let s2 = tape.select(x, 1, 2)?;
            let s3 = tape.select(x, 1, 0)?;
            let s4 = tape.select(x, 0, 0)?;
            let packed = tape.stack_scalars(&[s1, s2, s3, s4], 2, 2)?;
            let sq = tape.mul(packed, packed)?;
            tape.sum_all(sq).map(|out| (vec![x], out))
        };
        assert_gradients_close(&mut build6, &[a.clone()], STEP, TOL);
    }
}

#[test]
fn batch_norm_both_modes() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let x = rvec(&mut rng, 12, -2.0, 2.0);
        let gamma = rvec(&mut rng, 3, 0.5, 1.5);
        let beta = rvec(&mut rng, 3, -0.5, 0.5);
        let w = rvec(&mut rng, 12, -1.0, 1.0);
        let run_mean = rvec(&mut rng, 3, -0.5, 0.5);
        let run_var = rvec(&mut rng, 3, 0.5, 1.5);

        let mut train = |tape: &mut Tape, ins: &[Vec<f64>]| {
            let xt = grad_leaf(tape, &[4, 3], &ins[0]);
            let g = grad_leaf(tape, &[3], &ins[1]);
            let b = grad_leaf(tape, &[3], &ins[2]);
            let (y, _, _) = tape.batch_norm_train(xt, g, b, 1e-5)?;
            let out = weighted_scalar(tape, y, &w)?;
            Ok((vec![xt, g, b], out))
        };
        assert_gradients_close(
            &mut train,
            &[x.clone(), gamma.clone(), beta.clone()],
            STEP,
            TOL,
        );

        let mut eval = |tape: &mut Tape, ins: &[Vec<f64>]| {
            let xt = grad_leaf(tape, &[4, 3], &ins[0]);
            let g = grad_leaf(tape, &[3], &ins[1]);
            let b = grad_leaf(tape, &[3], &ins[2]);
            let y = tape.batch_norm_eval(xt, g, b, &run_mean, &run_var, 1e-5)?;
            let out = weighted_scalar(tape, y, &w)?;
            Ok((vec![xt, g, b], out))
        };
        assert_gradients_close(&mut eval, &[x.clone(), gamma.clone(), beta.clone()], STEP, TOL);
    }
}
