//! Trainable-parameter tables for both presets.
//!
//! cargo run --release --example parameter_table
use attriforge::networks::parameter_report;
use attriforge::tensor::DType;
use attriforge::{ArchConfig, Discriminator, Generator, SkipMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> attriforge::Result<()> {
    for (name, arch) in [("tiny", ArchConfig::tiny()), ("full", ArchConfig::full())] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Generator::new(&arch, SkipMode::Stu, DType::F32, &mut rng)?;
        let d = Discriminator::new(&arch, DType::F32, &mut rng)?;
        println!("== {name} ({0}x{0}) ==\n{1}", arch.image_size, parameter_report(&g, &d));
    }
    Ok(())
}
