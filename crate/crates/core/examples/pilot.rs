//! Scratch experiment runner used while calibrating the convergence tests.
//! Usage: pilot memorize | pilot race

use bnrhn::cells::CellKind;
use bnrhn::dataio::{build_vocab, synth_dataset, DatasetSpec};
use bnrhn::training::{greedy_decode, train, ModelSpec, TrainConfig};
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "memorize".into());
    match which.as_str() {
        "memorize" => memorize(),
        "race" => race(),
        other => eprintln!("unknown pilot {other}"),
    }
}

fn memorize() {
    use bnrhn::cells::Mode;
    use bnrhn::dataio::CaptionSample;
    use bnrhn::training::{forward_unroll, make_batch};

    let dspec = DatasetSpec {
        n_samples: 40,
        feature_width: 32,
        ..DatasetSpec::default()
    };
    let data = synth_dataset(&dspec).unwrap();
    let vocab = build_vocab(&data, 1);
    println!("vocab size {}", vocab.size());

    // (label, gamma, lr0, decay_every, epochs, shared_over_time)
    let grid: Vec<(&str, f64, f64, usize, usize, bool)> = vec![
        ("shared-stats", 1.0, 0.5, 32, 150, true),
        ("per-step", 1.0, 0.5, 32, 150, false),
        ("per-step-lr1", 1.0, 1.0, 32, 150, false),
        ("per-step-lr03", 1.0, 0.3, 32, 150, false),
        ("per-step-g03", 0.3, 0.5, 32, 150, false),
    ];
    for (label, gamma, lr0, every, epochs, shared) in grid {
        let mut mspec = ModelSpec::new(CellKind::RhnDecoupledBn, 32);
        mspec.transform_bias = -1.0;
        mspec.carry_bias = 1.0;
        mspec.bn.gamma_init = gamma;
        mspec.bn.shared_over_time = shared;
        let mut cfg = TrainConfig::new(mspec);
        cfg.lr0 = lr0;
        cfg.decay_every_epochs = every;
        cfg.epochs = epochs;
        cfg.seed = 1;
        let t0 = Instant::now();
        match train(&data, &vocab, &cfg) {
            Ok(out) => {
                let recs = &out.report.records;
                let initial = recs.first().unwrap().loss;
                let final_loss = recs.last().unwrap().loss;
                let mut exact = 0;
                for s in &data {
                    if greedy_decode(&s.feature, &out.params, &vocab, 16).unwrap()
                        == s.references[0]
                    {
                        exact += 1;
                    }
                }
                let refs: Vec<&CaptionSample> = data.iter().collect();
                let batch = make_batch(&refs, &vocab, cfg.max_len).unwrap();
                let (infer_loss, _) =
                    forward_unroll(&batch, &out.params, Mode::infer()).unwrap();
                println!(
                    "{label:14} initial {initial:.3} final {final_loss:.5} ratio {:.4} infer {infer_loss:.4} decode {exact}/40 wall {:?}",
                    final_loss / initial,
                    t0.elapsed()
                );
            }
            Err(e) => println!("{label:14} ABORT {e}"),
        }
    }
}

fn race() {
    let dspec = DatasetSpec {
        n_samples: 200,
        feature_width: 32,
        ..DatasetSpec::default()
    };
    let data = synth_dataset(&dspec).unwrap();
    let vocab = build_vocab(&data, 1);
    println!("vocab size {}", vocab.size());
    for kind in [
        CellKind::Lstm,
        CellKind::RhnCoupled,
        CellKind::RhnDecoupledBn,
    ] {
        for seed in 1..=5u64 {
            let mspec = ModelSpec::new(kind, 32);
            let mut cfg = TrainConfig::new(mspec);
            cfg.epochs = 20;
            cfg.seed = seed;
            let t0 = Instant::now();
            match train(&data, &vocab, &cfg) {
                Ok(out) => {
                    let recs = &out.report.records;
                    let initial = recs.first().unwrap().loss;
                    let target = 0.5 * initial;
                    let crossed = recs.iter().find(|r| r.loss <= target).map(|r| r.step);
                    println!(
                        "{kind:?} seed {seed}: initial {initial:.3} crossed {crossed:?} final {:.4} steps {} wall {:?}",
                        recs.last().unwrap().loss,
                        recs.len(),
                        t0.elapsed()
                    );
                }
                Err(e) => println!("{kind:?} seed {seed}: ABORT {e}"),
            }
        }
    }
}
