//! Scratch probe: object confusion matrix on the validation split.
use ndarray::{Array4, Axis};
use storyviz::config::DatasetConfig;
use storyviz::data::{build_dataset, load_manifest, load_split, RecurringObject, SplitName};
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

    let mut frames = Vec::new();
    let mut truth = Vec::new();
    for st in &val {
        for fi in 0..5 {
            frames.push(st.frame_f64(fi));
            truth.push(st.spec.recurring_object);
        }
    }
    let s = val[0].image_size;
    let mut images = Array4::zeros((frames.len(), 3, s, s));
    for (i, f) in frames.iter().enumerate() {
        images.index_axis_mut(Axis(0), i).assign(f);
    }
    let pred = ext.predict_object(&images);
    let mut confusion = [[0usize; 8]; 8];
    for (t, p) in truth.iter().zip(&pred) {
        confusion[t.index()][p.index()] += 1;
    }
    println!("true \\ pred: {:?}", RecurringObject::ALL.iter().map(|o| o.word()).collect::<Vec<_>>());
    for (i, row) in confusion.iter().enumerate() {
        println!("{:>6}: {row:?}", RecurringObject::ALL[i].word());
    }
    // Count per-object presence in the train split.
    let mut train_counts = [0usize; 8];
    for st in &train {
        train_counts[st.spec.recurring_object.index()] += 1;
    }
    println!("train story counts per object: {train_counts:?}");
}
