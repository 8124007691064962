use gia_core::loss::SsimParams;
use gia_core::raw::{preprocess, synth_scene, Cfa, Sample, SynthConfig, RATIO_CAP};
use gia_core::rng::Rng;
use gia_core::train::{evaluate_pairs, train, TrainConfig};

fn desk_pairs(n: usize, size: usize, base_seed: u64, seed: u64) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let rng = Rng::new(base_seed + i as u64);
            let mut cfg = SynthConfig::new(size, size, Cfa::Bayer);
            cfg.ratio = 1.0;
            cfg.read_noise = 0.2;
            cfg.shot_noise = 0.0;
            let mut crng = Rng::new(7_700 + seed * 31 + size as u64 + 1000 * i as u64);
            let mut gain = || 1.0 - 0.65 * crng.next_f32();
            cfg.cast = Some([gain(), gain(), gain()]);
            let mut off = || 0.1 * (2.0 * crng.next_f32() - 1.0);
            cfg.cast_offset = Some([off(), off(), off()]);
            let (frame, target) = synth_scene(&rng, &cfg).unwrap();
            Sample {
                input: preprocess(&frame, cfg.long_exposure_s, RATIO_CAP).unwrap(),
                target,
                id: format!("p{i}"),
            }
        })
        .collect()
}

fn main() {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2500);
    for seed in [31u64, 32, 33, 34] {
        let k = seed - 31;
        let train_pairs = desk_pairs(6, 96, 70_000 + 100 * k, seed);
        let eval_pairs = desk_pairs(8, 256, 80_000 + 100 * k, seed);
        let handles: Vec<_> = ["sid", "gia"]
            .into_iter()
            .map(|variant| {
                let tp = train_pairs.clone();
                let ep = eval_pairs.clone();
                std::thread::spawn(move || {
                    let mut config = TrainConfig::desk(variant);
                    config.gamma = 1.0;
                    config.seed = seed;
                    config.max_steps = Some(steps);
                    config.patch_b = (6, 6); // full-image patches: pooled stats match scene stats
                    let r = train(&config, &tp, None).unwrap();
                    let rows = evaluate_pairs(&r.net, &ep, &SsimParams::with_levels(2)).unwrap();
                    let psnr = rows.iter().map(|x| x.1).sum::<f32>() / rows.len() as f32;
                    (variant, psnr, r.log.last().unwrap().total)
                })
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        println!(
            "seed {seed} steps {steps}: {:?} margin {:+.3}",
            results,
            results[1].1 - results[0].1
        );
    }
}
