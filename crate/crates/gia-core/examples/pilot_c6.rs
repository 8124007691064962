use gia_core::raw::{preprocess, synth_scene, Cfa, Sample, SynthConfig, RATIO_CAP};
use gia_core::rng::Rng;
use gia_core::train::{train, TrainConfig};

fn pairs(base_seed: u64) -> Vec<Sample> {
    (0..8)
        .map(|i| {
            let rng = Rng::new(base_seed + i as u64);
            let cfg = SynthConfig::new(128, 128, Cfa::Bayer);
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
    let p = pairs(60_000);
    for seed in [3u64, 6, 9] {
        let mut cfg = TrainConfig::desk("gia");
        cfg.seed = seed;
        cfg.max_steps = Some(200);
        let r = train(&cfg, &p, None).unwrap();
        let (i, f) = (r.log[0].total, r.log.last().unwrap().total);
        let (il1, fl1) = (r.log[0].l1, r.log.last().unwrap().l1);
        println!(
            "seed {seed}: initial {i:.4} final {f:.4} ratio {:.4} l1ratio {:.4}",
            f / i,
            fl1 / il1
        );
    }
}
