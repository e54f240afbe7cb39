//! Generates a self-contained demo: a small conv-stack model plus a clip of
//! PNM frames with a moving object on a static background.
//!
//!     cargo run -p delta-infer --release --example make_demo -- demo
//!     cargo run -p delta-infer --release -- run --model demo/model.json \
//!         --frames demo/frames --out demo/out

use std::io::Write;
use std::path::Path;

use anyhow::Result;
use delta_infer_core::io::write_blob;
use delta_infer_core::synth;
use delta_infer_core::tensor::Shape;

fn main() -> Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "demo".to_string());
    let dir = Path::new(&dir);
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir)?;

    let shape = Shape::new(1, 64, 64, 3);
    let (manifest, blob) = synth::conv_stack_manifest(2024, shape, 8, 4, 0.3, 2, 0.15);
    write_blob(&dir.join("weights.bin"), &blob)?;
    manifest.save(&dir.join("model.json"))?;

    for i in 0..60usize {
        let mut bytes = b"P6\n64 64\n255\n".to_vec();
        let (oy, ox) = ((i * 2) % 48, (i * 3) % 48);
        for y in 0..64 {
            for x in 0..64 {
                let inside = y >= oy && y < oy + 12 && x >= ox && x < ox + 12;
                let base = (40 + (y * 2) as u8 / 2, 60u8, (30 + x) as u8);
                let px = if inside {
                    [230, (40 + y * 2) as u8, 90]
                } else {
                    [base.0, base.1, base.2]
                };
                bytes.extend_from_slice(&px);
            }
        }
        let mut f = std::fs::File::create(frames_dir.join(format!("frame_{i:04}.ppm")))?;
        f.write_all(&bytes)?;
    }
    println!("demo written to {}", dir.display());
    println!("try: delta-infer run --model {}/model.json --frames {}/frames --out {}/out",
        dir.display(), dir.display(), dir.display());
    Ok(())
}
