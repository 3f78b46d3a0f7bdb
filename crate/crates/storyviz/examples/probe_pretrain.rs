//! Scratch probe: contrastive pretraining trajectory under various budgets.
use storyviz::config::ModelConfig;
use storyviz::data::{load_manifest, load_split, SplitName};
use storyviz::pipeline::text_dims_for;
use storyviz::text::{pretrain_encoders, PretrainConfig, Vocab};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(40);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(5e-4);

    let data = std::path::PathBuf::from("/tmp/ds_small");
    let manifest = load_manifest(&data).unwrap();
    let vocab = Vocab::load(&data.join(&manifest.vocab_path)).unwrap();
    let train = load_split(&data, &manifest, SplitName::Train).unwrap();
    let val = load_split(&data, &manifest, SplitName::Val).unwrap();
    let model = ModelConfig::small();
    let dims = text_dims_for(&data, &model).unwrap();
    let _ = vocab;

    for stage in 1..=4 {
        let cfg = PretrainConfig {
            epochs: epochs * stage / 4,
            learning_rate: lr,
            seed: 7,
            ..Default::default()
        };
        let t0 = std::time::Instant::now();
        let out = pretrain_encoders(&train, &val, &vocab, &dims, &cfg).unwrap();
        println!(
            "epochs {:4} lr {lr:.1e}: loss {:.3} retrieval {:.3} matched {:.3} ({:.0}s)",
            cfg.epochs,
            out.report.final_loss,
            out.report.val_retrieval_top1,
            out.report.matched_beats_mismatched,
            t0.elapsed().as_secs_f64()
        );
    }
}
