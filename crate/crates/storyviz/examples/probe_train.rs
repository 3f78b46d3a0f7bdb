//! Scratch probe: time GAN steps and watch early losses at the small profile.
use storyviz::config::TrainConfig;
use storyviz::data::{load_manifest, load_split, SplitName};
use storyviz::text::Vocab;
use storyviz::train::{load_checkpoint, Trainer};

fn main() {
    let data = std::path::PathBuf::from("/tmp/ds_small");
    let manifest = load_manifest(&data).unwrap();
    let vocab = Vocab::load(&data.join(&manifest.vocab_path)).unwrap();
    let mut stories = load_split(&data, &manifest, SplitName::Train).unwrap();
    stories.truncate(96);
    let (text_params, _) = load_checkpoint(&data.join("encoders")).unwrap();

    let cfg = TrainConfig::small_profile(data.clone());
    let mut trainer = Trainer::new(cfg.clone(), &manifest, text_params, vocab).unwrap();

    let t0 = std::time::Instant::now();
    let mut n = 0;
    for epoch in 0..3 {
        for chunk in stories.chunks(cfg.batch_stories) {
            if chunk.len() < cfg.batch_stories {
                continue;
            }
            let batch: Vec<_> = chunk.iter().collect();
            let m = trainer.train_step(&batch).unwrap();
            n += 1;
            if n % 6 == 0 {
                println!(
                    "step {:3} l_gi {:.3} l_di {:.3} l_gv {:.3} l_dv {:.3} |g| {:.2} |d| {:.2} ({:.2}s/step)",
                    m.step, m.losses.l_gi, m.losses.l_di, m.losses.l_gv, m.losses.l_dv,
                    m.grad_norm_g, m.grad_norm_d,
                    t0.elapsed().as_secs_f64() / n as f64
                );
            }
        }
        let _ = epoch;
    }
}
