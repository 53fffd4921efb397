//! Synthetic benchmark: MFC with and without multi-frame aggregation, CBR
//! refinement, and CSS fidelity. Usage: `benchmark [sequences] [seed]`.

use std::time::Instant;

use pseudolabel::geometry::IouMode;
use pseudolabel::pipeline::{compute_pipeline, PipelineConfig};

fn main() -> pseudolabel::Result<()> {
    let mut args = std::env::args().skip(1);
    let sequences = args.next().map_or(20, |s| s.parse().expect("sequence count"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let base = PipelineConfig {
        sequences,
        seed,
        ..Default::default()
    };
    for n in [0, 5] {
        let t = Instant::now();
        let mut cfg = base.clone();
        cfg.mfc.n = n;
        let out = compute_pipeline(&cfg)?;
        let r = &out.report;
        let (i, f) = (r.initial.as_ref().unwrap(), r.refined.as_ref().unwrap());
        println!("n={n}  ({:.1}s)  counts {:?}", t.elapsed().as_secs_f64(), r.counts);
        for (name, m) in [("initial", i), ("refined", f)] {
            let row = |iou: f64| {
                let t = m.get(iou, IouMode::Bev).unwrap();
                format!("R{:.1}={:.3} P={:.3} AP={:.3}", iou, t.recall, t.precision, t.ap)
            };
            println!(
                "  {name:8} bev {} | {} | {}  errors {:?}",
                row(0.3),
                row(0.5),
                row(0.7),
                m.errors
            );
        }
        println!("  css {:?}", r.css);
    }
    Ok(())
}
