//! Trains the re-identification embedding on held-out toy identities and
//! reports rank-k CMC on a fresh toy dataset.
//!
//! cargo run --example reid_eval -- [STEPS]

use std::time::Instant;

use incognipipe::ident::{
    build_query_gallery, evaluate_identification, train_embedding, training_accuracy,
    EmbeddingConfig, IdentMode,
};
use incognipipe::scene::{generate_toy_dataset, ToySceneSpec};

fn main() -> anyhow::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(600);
    let held_out = generate_toy_dataset(&ToySceneSpec {
        num_identities: 16,
        seed: 1001,
        ..Default::default()
    })?;
    let test = generate_toy_dataset(&ToySceneSpec::default())?;

    let t = Instant::now();
    let cfg = EmbeddingConfig {
        steps,
        ..Default::default()
    };
    let (model, history) = train_embedding(&held_out, &cfg)?;
    println!(
        "trained {} classes in {:.1}s, loss {:.3} -> {:.3}, train accuracy {:.3}",
        model.num_classes,
        t.elapsed().as_secs_f64(),
        history.first().unwrap_or(&f64::NAN),
        history.last().unwrap_or(&f64::NAN),
        training_accuracy(&model, &held_out)?
    );

    let split = build_query_gallery(&test, 5, 0)?;
    let report = evaluate_identification(&model, &test, &test, &split, &[1, 5], IdentMode::Reid)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
