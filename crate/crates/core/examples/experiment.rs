use std::time::Instant;

use gdsr_core::corpus::Corpus;
use gdsr_core::fixture::{statute_fixture, FixtureConfig};
use gdsr_core::training::{run_experiment, RunConfig};

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn main() {
    let mut fix = serde_json::to_value(FixtureConfig::default()).unwrap();
    if let Ok(p) = std::env::var("FIX") {
        merge(&mut fix, serde_json::from_str(&p).unwrap());
    }
    let fix: FixtureConfig = serde_json::from_value(fix).unwrap();
    let f = statute_fixture(&fix);
    let corpus = Corpus::from_articles(f.articles).unwrap();
    let seeds: Vec<u64> = std::env::args().skip(1).map(|s| s.parse().unwrap()).collect();
    let seeds = if seeds.is_empty() { vec![1, 2, 3, 4, 5] } else { seeds };
    let (mut sd, mut sg, mut sr) = (0.0, 0.0, 0.0);
    for &seed in &seeds {
        let t = Instant::now();
        let patch = std::env::var("CFG").map_or(serde_json::json!({}), |p| serde_json::from_str(&p).unwrap());
        let cfg = RunConfig::from_overrides(patch).unwrap().with_seed(seed);
        let out = run_experiment(&corpus, &f.queries, &cfg).unwrap();
        let (d, g, r) = (
            out.dsr_report.recall(10).unwrap(),
            out.gdsr_report.recall(10).unwrap(),
            out.random_report.recall(10).unwrap(),
        );
        sd += d;
        sg += g;
        sr += r;
        println!(
            "seed {seed}: dsr R@10 {d:.3} gdsr R@10 {g:.3} random {r:.3} | dsr loss {:.3}->{:.3} best {} | lge loss {:.3}->{:.3} best {} | {:.1}s",
            out.dsr_training.initial_loss().unwrap(),
            out.dsr_training.final_loss().unwrap(),
            out.dsr_training.best_epoch,
            out.lge_training.initial_loss().unwrap_or(0.0),
            out.lge_training.final_loss().unwrap_or(0.0),
            out.lge_training.best_epoch,
            t.elapsed().as_secs_f64()
        );
        if std::env::var("VERBOSE").is_ok() {
            let r10: Vec<String> = out.dsr_training.dev.iter().map(|d| format!("{:.2}", d["R@10"])).collect();
            println!("  dsr dev R@10 by epoch: {}", r10.join(" "));
            let step = (out.lge_training.dev.len() / 10).max(1);
            let r10: Vec<String> = out.lge_training.dev.iter().step_by(step).map(|d| format!("{:.2}", d["R@10"])).collect();
            println!("  lge dev R@10: {}", r10.join(" "));
        }
    }
    let n = seeds.len() as f64;
    println!("MEAN dsr {:.3} gdsr {:.3} random {:.3} delta {:.3}", sd / n, sg / n, sr / n, (sg - sd) / n);
}
