//! Masked reconstruction metrics of a checkpoint (or a fresh model) on held-out renders.
//!
//! cargo run --release --example evaluate -- [checkpoint]
use attriforge::data::{proxy_samples, AugmentationConfig, PROXY_ATTRIBUTE};
use attriforge::metrics::evaluate_dataset;
use attriforge::trainer::{load_checkpoint, TrainState, TrainingConfig};

fn main() -> attriforge::Result<()> {
    let state = match std::env::args().nth(1) {
        Some(p) => load_checkpoint(p.as_ref())?,
        None => {
            let cfg = TrainingConfig { network: "tiny".into(), ..TrainingConfig::default() };
            TrainState::new(cfg, AugmentationConfig::for_size(64), PROXY_ATTRIBUTE)?
        }
    };
    let size = state.generator.config().image_size;
    let samples = proxy_samples(16, size, 2000);
    let ids: Vec<String> = (0..samples.len()).map(|i| format!("held_out_{i:02}")).collect();
    let report = evaluate_dataset(&state.generator, &samples, &ids)?;
    print!("{}", report.to_csv());
    Ok(())
}
