//! Render a small proxy dataset (PNG images, masks, JSONL manifest).
//!
//! cargo run --release --example generate_data -- [out_dir] [count]
use attriforge::data::generate_proxy_dataset;

fn main() -> attriforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "proxy_data".into());
    let count: usize = args.next().map(|s| s.parse().expect("count")).unwrap_or(32);
    let manifest = generate_proxy_dataset(count, 64, out.as_ref(), 0)?;
    let labels: Vec<f64> = manifest.records.iter().map(|r| r.attribute(&manifest.attribute).unwrap().get()).collect();
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    println!("wrote {} samples to {out} (mean label {mean:.3})", labels.len());
    Ok(())
}
