//! Verify the analytic gradients of the readout, matching score, and hinge
//! loss against central finite differences, printing the worst relative
//! error per operation.
//!
//!     cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgmatch::config::Mining;
use sgmatch::readout::{embed_graph, ReadoutRefs};
use sgmatch::score::match_score;
use sgmatch::train::batch_loss;
use tapegrad::gradcheck::max_relative_error;
use tapegrad::{Tape, Tensor, TensorId};

fn rvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn grad_leaf(tape: &mut Tape, shape: &[usize], data: &[f64]) -> TensorId {
    tape.leaf(Tensor::new(shape.to_vec(), data.to_vec()).unwrap().with_grad())
}

fn main() -> sgmatch::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let d = 4usize;

    // graph readout
    let ins = [rvec(&mut rng, 3 * d), rvec(&mut rng, 2 * d), rvec(&mut rng, d * d), rvec(&mut rng, d * d)];
    let mut build = |tape: &mut Tape, ins: &[Vec<f64>]| {
        let nodes = grad_leaf(tape, &[3, d], &ins[0]);
        let edges = grad_leaf(tape, &[2, d], &ins[1]);
        let refs = ReadoutRefs {
            w_node: grad_leaf(tape, &[d, d], &ins[2]),
            w_edge: grad_leaf(tape, &[d, d], &ins[3]),
        };
        let a = embed_graph(tape, nodes, Some(edges), &refs).expect("embed");
        let sq = tape.mul(a, a)?;
        let out = tape.sum_all(sq)?;
        Ok((vec![nodes, edges, refs.w_node, refs.w_edge], out))
    };
    let err = max_relative_error(&mut build, &ins, 1e-5).expect("readout forward");
    println!("readout embed_graph     max relative error {err:.3e}");

    // local matching score
    let ins = [rvec(&mut rng, 3 * d), rvec(&mut rng, 5 * d)];
    let mut build = |tape: &mut Tape, ins: &[Vec<f64>]| {
        let q = grad_leaf(tape, &[3, d], &ins[0]);
        let c = grad_leaf(tape, &[5, d], &ins[1]);
        let s = match_score(tape, q, c).expect("match_score");
        Ok((vec![q, c], s))
    };
    let err = max_relative_error(&mut build, &ins, 1e-5).expect("match forward");
    println!("local match score       max relative error {err:.3e}");

    // hinge triplet loss over a 4x4 in-batch score matrix
    let ins = [rvec(&mut rng, 16)];
    let mut build = |tape: &mut Tape, ins: &[Vec<f64>]| {
        let s = grad_leaf(tape, &[4, 4], &ins[0]);
        let l = batch_loss(tape, s, 0.35, Mining::Hardest).expect("loss");
        Ok((vec![s], l))
    };
    let err = max_relative_error(&mut build, &ins, 1e-5).expect("loss forward");
    println!("hinge triplet loss      max relative error {err:.3e}");

    println!("\n(tolerance used by the test suites: 1e-4)");
    Ok(())
}
