//! Short training run of the tiny preset on in-memory proxy renders.
//!
//! cargo run --release --example train_tiny -- [steps] [ablation] [run_dir]
//! ablation is one of full, no_discriminator, no_stu.
use attriforge::config::ResolvedConfig;
use attriforge::data::{proxy_samples, Dataset, PROXY_ATTRIBUTE};
use attriforge::trainer::{train, RunDir, TrainState};

fn main() -> attriforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().unwrap_or_else(|| "50".into());
    let ablation = args.next().unwrap_or_else(|| "full".into());
    let run = RunDir(args.next().unwrap_or_else(|| "runs/tiny".into()).into());
    let pairs: Vec<(String, String)> = [
        ("network", "tiny".to_string()),
        ("batch_size", "8".into()),
        ("total_steps", steps),
        ("ablation", ablation),
    ]
    .into_iter()
    .map(|(k, v)| (k.into(), v))
    .collect();
    let rc = ResolvedConfig::from_pairs(&pairs)?;
    let ds = Dataset { attribute: PROXY_ATTRIBUTE.into(), samples: proxy_samples(256, 64, 0) };
    let mut state = TrainState::new(rc.training, rc.augmentation, PROXY_ATTRIBUTE)?;
    train(&mut state, &ds, Some(&run), |r| {
        if r.step % 10 == 0 {
            println!("{}", r.csv_row());
        }
    })?;
    println!("final checkpoint: {}", run.final_checkpoint().display());
    Ok(())
}
