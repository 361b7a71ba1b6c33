// head-scale x epochs probe
use fed_core::encoder::EncoderConfig;
use fed_core::eval::{cmc_map, embed};
use fed_core::fdm::FdmConfig;
use fed_core::model::{FedModel, ModelConfig};
use fed_core::rng::stream;
use fed_core::synth::{generate_dataset, generate_patch_set, split_query_gallery};
use fed_core::train::{train, Ablation, TrainConfig};

fn main() {
    let seed = 5u64;
    let samples = generate_dataset(30, 6, 64, 32, seed).unwrap();
    let train_set: Vec<_> = samples.iter().filter(|s| s.identity < 20).cloned().collect();
    let patches = generate_patch_set(30, seed).unwrap();
    let t0 = std::time::Instant::now();
    let rows = [
        ("baseline", Ablation::baseline()),
        ("npo-only", Ablation { random_erasing: false, npo: true, oem: false, fdm: false }),
        ("full-fed", Ablation::full()),
    ];
    for epochs in [20usize, 40] {
        for (name, ab) in rows {
            let cfg_m = ModelConfig { encoder: EncoderConfig::desk(), fdm: FdmConfig { heads: 8, k: 8 }, train_ids: 20 };
            let mut model = FedModel::init(cfg_m, seed).unwrap();
            let cfg = TrainConfig { epochs, lr: 0.006, ablation: ab, ..TrainConfig::desk_default(seed) };
            let log = train(&mut model, &train_set, &patches, &cfg).unwrap();
            let id_first: f64 = log.steps[..5].iter().map(|s| s.breakdown.id.iter().map(|&v| v as f64).sum::<f64>()).sum::<f64>() / 5.0;
            let id_last: f64 = log.steps[log.steps.len()-5..].iter().map(|s| s.breakdown.id.iter().map(|&v| v as f64).sum::<f64>()).sum::<f64>() / 5.0;
            let c_last: f64 = log.steps[log.steps.len()-5..].iter().map(|s| s.breakdown.contrastive.iter().map(|&v| v as f64).sum::<f64>()).sum::<f64>() / 5.0;
            let use_oem = ab.oem;
            let mut rng = stream(seed, "eval-split");
            let (q, g) = split_query_gallery(&samples, 10, true, &patches, &mut rng).unwrap();
            let qi = embed(&model, &q, use_oem).unwrap();
            let gi = embed(&model, &g, use_oem).unwrap();
            let res = cmc_map(&qi, &gi, false).unwrap();
            let mut rng2 = stream(seed, "eval-split");
            let (qc, gc) = split_query_gallery(&samples, 10, false, &patches, &mut rng2).unwrap();
            let qci = embed(&model, &qc, use_oem).unwrap();
            let gci = embed(&model, &gc, use_oem).unwrap();
            let resc = cmc_map(&qci, &gci, false).unwrap();
            println!("ep={epochs} {name}: id {id_first:.1}->{id_last:.1} c_end={c_last:.1} occ={:.3} clean={:.3} [{:.0}s]",
                res.rank_k(1), resc.rank_k(1), t0.elapsed().as_secs_f32());
        }
    }
}
