//! Dev probe: training dynamics across gamma schedules on the imbalanced
//! mixture. Not part of the test suite.

use srlab_core::gamma::GammaParams;
use srlab_core::pipeline::{
    collapse_fraction, generate_synthetic, novel_accuracy, train, GammaSchedule, SyntheticSpec,
    TrainConfig,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cluster_std: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.9);
    let min_sep: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.8);
    let tau: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let seeds: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(5);
    let trace: bool = args.get(5).map(|s| s == "trace").unwrap_or(false);
    println!("cluster_std {cluster_std} min_sep {min_sep} tau {tau}");

    let t0 = std::time::Instant::now();
    let schedules: Vec<(&str, GammaSchedule)> = vec![
        ("adaptive", GammaSchedule::Adaptive(GammaParams::default())),
        ("fixed-0.01", GammaSchedule::Fixed { gamma: 0.01 }),
        ("fixed-0.5", GammaSchedule::Fixed { gamma: 0.5 }),
        ("fixed-5", GammaSchedule::Fixed { gamma: 5.0 }),
    ];
    for (name, schedule) in &schedules {
        let mut accs = Vec::new();
        let mut collapses = Vec::new();
        for seed in 0..seeds {
            let spec = SyntheticSpec {
                cluster_std,
                min_center_sep: min_sep,
                ..SyntheticSpec::imbalanced_mixture(1000 + seed)
            };
            let dataset = generate_synthetic(&spec).unwrap();
            let cfg = TrainConfig {
                num_novel_classes: spec.novel_classes(),
                gamma_point: *schedule,
                gamma_region: *schedule,
                tau,
                seed,
                ..Default::default()
            };
            let (model, history) = train(&dataset, &cfg).unwrap();
            let acc = novel_accuracy(&model, &dataset).unwrap();
            let col = collapse_fraction(&model, &dataset).unwrap();
            accs.push(acc);
            collapses.push(col);
            let last = history.records.last().unwrap();
            println!(
                "{name} seed {seed}: acc {acc:.3} collapse {col:.3} gp {:.4} klp {:.4} ls {:.3} ind {:.3}",
                last.gamma_point,
                last.kl_point.unwrap_or(f64::NAN),
                last.l_s,
                history.final_indicator(),
            );
            if trace && seed == 0 {
                for r in &history.records {
                    println!(
                        "  step {:3} gp {:.4} klp {:.5} klr {:.5} ls {:.3} lup {:.3} lur {:.3}",
                        r.step,
                        r.gamma_point,
                        r.kl_point.unwrap_or(f64::NAN),
                        r.kl_region.unwrap_or(f64::NAN),
                        r.l_s,
                        r.l_u_p,
                        r.l_u_r
                    );
                }
            }
        }
        let mean_acc: f64 = accs.iter().sum::<f64>() / accs.len() as f64;
        let n_collapsed = collapses.iter().filter(|c| **c >= 0.9).count();
        println!("== {name}: mean acc {mean_acc:.3}, collapsed {n_collapsed}/{}", accs.len());
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
