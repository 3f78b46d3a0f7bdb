//! Scratch probe: can the extractor fit the train split at all?
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
    let ecfg = ExtractorConfig { epochs: 60, seed: 7, ..Default::default() };
    let ext = train_extractor(&train, &val, &ecfg).unwrap();
    let (ts, to) = ext.attribute_accuracy(&train).unwrap();
    let (vs, vo) = ext.attribute_accuracy(&val).unwrap();
    println!("train: style {ts:.4} object {to:.4}");
    println!("val:   style {vs:.4} object {vo:.4}");
}
