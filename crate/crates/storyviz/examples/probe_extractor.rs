//! Scratch probe: per-head extractor accuracy at various budgets.
use storyviz::config::DatasetConfig;
use storyviz::data::{build_dataset, load_manifest, load_split, SplitName};
use storyviz::metrics::{train_extractor, ExtractorConfig};

fn main() {
    let dir = std::path::Path::new("/tmp/ds_probe");
    let cfg = DatasetConfig::small(7);
    if !dir.exists() {
        build_dataset(&cfg, dir, true).unwrap();
    }
    let manifest = load_manifest(dir).unwrap();
    let train = load_split(dir, &manifest, SplitName::Train).unwrap();
    let val = load_split(dir, &manifest, SplitName::Val).unwrap();
    for (epochs, lr) in [(20usize, 1e-3), (60, 1e-3), (60, 2e-3), (120, 2e-3)] {
        let ecfg = ExtractorConfig {
            epochs,
            learning_rate: lr,
            seed: 7,
            ..Default::default()
        };
        let t0 = std::time::Instant::now();
        let ext = train_extractor(&train, &val, &ecfg).unwrap();
        let (style, object) = ext.attribute_accuracy(&val).unwrap();
        println!(
            "epochs {epochs:4} lr {lr:.0e}: style {style:.4} object {object:.4} gate {:.4} ({:.1}s)",
            ext.gate_accuracy,
            t0.elapsed().as_secs_f64()
        );
    }
}
