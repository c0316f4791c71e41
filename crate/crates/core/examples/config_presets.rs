//! Prints a run configuration preset as TOML, ready to edit and pass to
//! `act --config`.
//!
//! Usage: `cargo run --example config_presets -- [default|desk]`

use act_core::cli_io::RunConfig;

fn main() {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "desk".into());
    let cfg = match preset.as_str() {
        "default" => RunConfig::default(),
        "desk" => RunConfig::desk(),
        other => {
            eprintln!("unknown preset {other:?}; expected `default` or `desk`");
            std::process::exit(2);
        }
    };
    print!("{}", cfg.to_toml_string());
}
