use fwm::eval::{build_ranking_set, RankingConfig};
use fwm::model::load_checkpoint;
use fwm::sim::{read_dataset, ColorScheme, Task};
use fwm::tensor::sq_dist;

fn main() {
    let (model, _) = load_checkpoint(std::path::Path::new("/root/cache/m10a-heads.fwmc")).unwrap();
    let ds = read_dataset(std::path::Path::new("/root/cache/eval-rank-stack3.fwmd")).unwrap();
    let cfg = RankingConfig { epsilon: 4.0, n_negatives: 10, resample_cap: 100, seed: 9 };
    let set = build_ranking_set(Task::Stack3, &ds, &cfg, 1.0, ColorScheme::UniformRed).unwrap();
    for (i, ep) in set.iter().take(3).enumerate() {
        let z0 = model.encode_value(&ep.start_obs).unwrap();
        let target = model.encode_value(&ep.true_final_obs).unwrap();
        let dist = |actions: &[fwm::sim::Action]| -> f64 {
            let states = model.rollout(&z0, actions).unwrap();
            let f = states.last().unwrap();
            (0..f.k).map(|s| sq_dist(f.slot(s), target.slot(s))).sum()
        };
        let d_c = dist(&ep.correct);
        let d_n: Vec<f64> = ep.negatives.iter().map(|n| dist(n)).collect();
        // Also: distance from z0 to target, and rollout drift magnitude.
        let d0: f64 = (0..z0.k).map(|s| sq_dist(z0.slot(s), target.slot(s))).sum();
        println!("ep {i}: len {} d0 {:.3} d_correct {:.3} d_neg {:?}", ep.correct.len(), d0, d_c,
                 d_n.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    }
}
