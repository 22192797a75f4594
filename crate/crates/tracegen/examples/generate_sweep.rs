//! Train briefly on a block-structured trace, then generate at the five
//! standard temperatures and at a halved network scale, and show how the
//! outputs respond.
//!
//! Run with: cargo run --release --example generate_sweep

use tracegen::fidelity::complexity_profile;
use tracegen::generator::{generate, temperature_sweep, GenerationSpec, DEFAULT_TEMPERATURES};
use tracegen::model::{train, Model, ModelConfig, TrainPlan};
use tracegen::tokenizer::{tokenize, MetaParams};
use tracegen::trace::{matrix_similarity, synth_trace, SynthPattern};

fn main() {
    let meta = MetaParams::src_dst(4, 1);
    let mut block =
        synth_trace(SynthPattern::BlockDiagonal { blocks: 4 }, 32, 100_000, 5, "block", 0).unwrap();
    block.meta.segment_count = meta.segments;
    let stream = tokenize(&block, meta).unwrap();

    let mut model = Model::init(ModelConfig::mini(32, meta, 7)).unwrap();
    let plan = TrainPlan {
        steps: 250,
        tokens_per_step: 2048,
        lr: 1e-3,
        eval_interval: 25,
        seed: 8,
        ..TrainPlan::default()
    };
    let outcome = train(&mut model, std::slice::from_ref(&stream), &["block".into()], &plan).unwrap();
    println!("trained to val loss {:.3} nats/token", outcome.best_val_loss);

    // Temperature sweep: same seed and schedule, five temperatures.
    let base = GenerationSpec::new(0, 20_000, stream.segment_length, 21);
    let traces = temperature_sweep(&model, &base, &DEFAULT_TEMPERATURES).unwrap();
    let original_matrix = block.traffic_matrix();
    println!("\n{:>5}  {:>10}  {:>13}  {:>9}", "t", "matrix-cos", "non-temporal", "temporal");
    for (t, trace) in DEFAULT_TEMPERATURES.iter().zip(&traces) {
        let cos = matrix_similarity(&original_matrix, &trace.traffic_matrix()).unwrap();
        let profile = complexity_profile(trace, 3, 3).unwrap();
        println!(
            "{t:>5}  {cos:>10.4}  {:>13.4}  {:>9.4}",
            profile.non_temporal, profile.temporal
        );
    }

    // Scale restriction: mask the logits down to the first 16 IDs.
    let masked_spec = GenerationSpec {
        scale_mask: Some(16),
        ..GenerationSpec::new(0, 20_000, stream.segment_length, 22)
    };
    let small = generate(&model, &masked_spec).unwrap();
    let max_id = small.max_id().unwrap();
    println!("\nscale-masked trace: n_nodes {}, max observed ID {max_id}", small.meta.n_nodes);
    assert!(max_id < 16);
}
