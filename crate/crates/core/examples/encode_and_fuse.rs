//! Encodes a context into vectors and fuses it into decoder query content.
//!
//! `cargo run --example encode_and_fuse`

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use motion_context::context::fusion::{fuse, grad_check, FusionParams, SquaredLoss};
use motion_context::context::{encode_affordance, encode_intention, encode_scenario, ContextVocabulary, EncodedContext};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = ContextVocabulary::default();
    let intention = encode_intention(&["Straight", "Right-Turn"], &vocab)?;
    let ctx = EncodedContext {
        intention: intention.vector,
        affordance: encode_affordance(&["Slow-Allow", "Right-Allow"], &vocab)?,
        scenario: encode_scenario(&["Intersection"], &vocab)?,
    };
    println!("I = {:?}  (slots {:?})", ctx.intention, vocab.intention_words);
    println!("A = {:?}", ctx.affordance);
    println!("S = {:?}", ctx.scenario);

    let (k, d) = (6, 16);
    let params = FusionParams::init(d, k, 42);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q0 = Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0));
    let q_tc = fuse(&ctx, &q0, &params)?;
    let spread = q_tc.rows().into_iter().map(|r| (&r - &q_tc.row(0)).mapv(f64::abs).sum()).fold(0.0, f64::max);
    println!("\nQ_tc is {}x{}; largest row difference {spread:e}", q_tc.nrows(), q_tc.ncols());
    println!("row 0: {:.4}", q_tc.row(0));

    let other_q0 = Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0));
    let moved = (&fuse(&ctx, &other_q0, &params)? - &q_tc).mapv(f64::abs).sum();
    println!("change after replacing Q0: {moved:e}");

    let target = Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0));
    let err = grad_check(&params, &ctx, &q0, &SquaredLoss { target })?;
    println!("gradient check over {} parameters: max relative error {err:.2e}", params.parameter_count());
    Ok(())
}
