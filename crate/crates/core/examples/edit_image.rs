//! Re-render one object at several attribute values; the background is kept.
//!
//! cargo run --release --example edit_image -- [checkpoint] [out_dir]
use attriforge::data::{proxy_samples, save_png, AugmentationConfig, PROXY_ATTRIBUTE};
use attriforge::edit::{edit_image, masked_l1};
use attriforge::trainer::{load_checkpoint, TrainState, TrainingConfig};
use attriforge::AttributeValue;

fn main() -> attriforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let state = match args.next() {
        Some(p) if p != "-" => load_checkpoint(p.as_ref())?,
        _ => {
            let cfg = TrainingConfig { network: "tiny".into(), ..TrainingConfig::default() };
            TrainState::new(cfg, AugmentationConfig::for_size(64), PROXY_ATTRIBUTE)?
        }
    };
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "edits".into()));
    std::fs::create_dir_all(&out).map_err(|e| attriforge::Error::io(&out, e))?;
    let sample = &proxy_samples(1, 64, 2000)[0];
    save_png(&out.join("input.png"), &sample.image, None)?;
    println!("source attribute {:.3}", sample.att_source.get());
    for a in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let edited = edit_image(&state.generator, &sample.image, &sample.mask, AttributeValue::new(a)?)?;
        let path = out.join(format!("att_{a:.2}.png"));
        save_png(&path, &edited, None)?;
        println!("att {a:.2}: L1 to input {:.4} -> {}", masked_l1(&edited, &sample.image, &sample.mask), path.display());
    }
    Ok(())
}
