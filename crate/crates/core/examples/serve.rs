//! HTTP editing service. `/health` answers 503 until the model has loaded.
//!
//! cargo run --release --example serve -- [checkpoint] [port]
//! curl localhost:8089/health
use attriforge::data::{AugmentationConfig, PROXY_ATTRIBUTE};
use attriforge::edit::GeneratorSnapshot;
use attriforge::service::{serve, AppState, DEFAULT_MAX_EDGE, DEFAULT_PORT};
use attriforge::trainer::{TrainState, TrainingConfig};

fn main() -> attriforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let checkpoint = args.next().filter(|p| p != "-");
    let port: u16 = args.next().map(|p| p.parse().expect("port")).unwrap_or(DEFAULT_PORT);
    let state = AppState::empty(DEFAULT_MAX_EDGE);
    let loader = state.clone();
    std::thread::spawn(move || {
        let snapshot = match checkpoint {
            Some(p) => GeneratorSnapshot::load(p.as_ref()),
            None => {
                let cfg = TrainingConfig { network: "tiny".into(), ..TrainingConfig::default() };
                TrainState::new(cfg, AugmentationConfig::for_size(64), PROXY_ATTRIBUTE)
                    .map(|s| GeneratorSnapshot::from_state(&s, "untrained".into()))
            }
        };
        match snapshot {
            Ok(s) => loader.set_model(s),
            Err(e) => eprintln!("model failed to load: {e}"),
        }
    });
    serve(([127, 0, 0, 1], port).into(), state)
}
