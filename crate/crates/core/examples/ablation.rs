//! Runs the four ablations over several seeds on the standard synthetic
//! dataset and prints final mAP, top-1 and mean silhouette per run.
//!
//! cargo run --release -p cgclab --example ablation -- [seeds]

use cgclab::datagen::{generate, DatasetSpec};
use cgclab::trainer::{train, Ablation, TrainConfig};

fn fmt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:.4}"))
}

fn main() -> cgclab::Result<()> {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    println!("seed,ablation,C,outliers,mAP,top1,mean_silhouette,ics_vanilla,ics_cgc");
    for seed in 0..seeds {
        let data = generate(&DatasetSpec::standard(seed))?;
        for ablation in Ablation::ALL {
            let config = TrainConfig {
                seed,
                ..TrainConfig::default()
            }
            .with_ablation(ablation);
            let out = train(&data, &config)?;
            let last = out.final_metrics().expect("at least one epoch");
            let trace = out.traces.last().unwrap();
            println!(
                "{seed},{},{},{},{:.4},{:.4},{:.4},{},{}",
                ablation.name(),
                trace.num_clusters,
                trace.num_outliers,
                last.map,
                last.cmc[&1],
                last.mean_silhouette,
                fmt(last.ics_vanilla),
                fmt(last.ics_cgc)
            );
        }
    }
    Ok(())
}
