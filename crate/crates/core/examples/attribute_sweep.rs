//! Does the edit follow the slider? Probe predictions on G(x, a) over a sweep of `a`.
//!
//! cargo run --release --example attribute_sweep -- <checkpoint>
use attriforge::data::proxy_samples;
use attriforge::probe::{edit_sweep, spearman, AttributeProbe, SweepOutput, SWEEP_LEVELS};
use attriforge::trainer::load_checkpoint;

fn main() -> attriforge::Result<()> {
    let path = std::env::args().nth(1).expect("usage: attribute_sweep <checkpoint>");
    let state = load_checkpoint(path.as_ref())?;
    let size = state.generator.config().image_size;
    let probe = AttributeProbe::fit(&proxy_samples(512, size, 1000), 1.0)?;
    let held_out = proxy_samples(32, size, 2000);
    for output in [SweepOutput::Raw, SweepOutput::Quantized] {
        let means = edit_sweep(&state.generator, &probe, &held_out, &SWEEP_LEVELS, output)?;
        println!("{output:?}: {means:.4?} spearman {:.3}", spearman(&SWEEP_LEVELS, &means));
    }
    Ok(())
}
