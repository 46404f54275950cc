//! Desk-scale vessel experiment: clean the central slice for a handful of
//! seeds and print PSNR/CNR before and after.
//!
//! `cargo run --release --example desk -- [iterations] [seeds]`

use paray::desk::{DeskScene, SPACING, SUBSET_SIZE};
use paray::metrics::{cnr, psnr};
use paray::zsa2a::{run_zsa2a, CleanTarget, TrainConfig, ZsOutput};
use std::time::Instant;

fn main() -> paray::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iterations = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);

    let t = Instant::now();
    let d = DeskScene::build(SPACING)?;
    println!("scene {:.1} s", t.elapsed().as_secs_f64());
    println!(
        "sparse psnr {:.2} cnr {:.3}; reference cnr {:.3}",
        psnr(&d.reference, &d.recon)?,
        cnr(&d.recon, &d.signal, &d.background)?,
        cnr(&d.reference, &d.signal, &d.background)?
    );

    for seed in 0..seeds {
        let cfg = TrainConfig {
            iterations,
            seed,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let target = CleanTarget::Image(d.target());
        let ZsOutput::Image(run) = run_zsa2a(&d.sparse_raw, &d.sparse, &d.grid, target, SUBSET_SIZE, &cfg)? else {
            unreachable!()
        };
        let last = run.model.log.last().map(|r| r.total).unwrap_or(f64::NAN);
        println!(
            "seed {seed}: {:.1} s, loss {last:.4}, psnr {:.2} -> {:.2}, cnr {:.3} -> {:.3}",
            t.elapsed().as_secs_f64(),
            psnr(&d.reference, &run.recon)?,
            psnr(&d.reference, &run.clean)?,
            cnr(&run.recon, &d.signal, &d.background)?,
            cnr(&run.clean, &d.signal, &d.background)?
        );
    }
    Ok(())
}
