//! Writes the bundled demo pairs and default configs.
//!
//! `cargo run -p evofuse-cli --example make_samples -- samples`

use std::path::PathBuf;

use evofuse_cli::inputs::LabeledBox;
use evofuse_cli::output::write_json;
use evofuse_core::evo::EvoConfig;
use evofuse_core::io::write_pgm;
use evofuse_core::pipeline::InnerConfig;
use evofuse_core::sample::sample_set;

const SAMPLE_COUNT: usize = 5;
const SAMPLE_SIDE: usize = 64;

fn main() -> anyhow::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "samples".into()));
    let pairs_dir = dir.join("pairs");
    std::fs::create_dir_all(&pairs_dir)?;
    for p in sample_set(SAMPLE_COUNT, SAMPLE_SIDE)? {
        write_pgm(&pairs_dir.join(format!("{}_ir.pgm", p.name)), &p.ir)?;
        write_pgm(&pairs_dir.join(format!("{}_vis.pgm", p.name)), &p.vis)?;
        let boxes: Vec<LabeledBox> = p
            .boxes
            .iter()
            .map(|b| LabeledBox { gt: [b.cx, b.cy, b.w, b.h] })
            .collect();
        write_json(&pairs_dir.join(format!("{}_boxes.json", p.name)), &boxes)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    write_json(&dir.join("evo.json"), &EvoConfig::standard(0)).map_err(|e| anyhow::anyhow!("{e}"))?;
    let inner = InnerConfig {
        steps: 4,
        ..InnerConfig::default()
    };
    write_json(&dir.join("inner.json"), &inner).map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(())
}
