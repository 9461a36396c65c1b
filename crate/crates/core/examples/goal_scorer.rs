//! Builds a goal vocabulary from expert endpoints, then scores it against a
//! clean and a corrupted endpoint on one scene.

use goaldiff::math::rng;
use goaldiff::scene::{dist, generate_scenario, LayoutKind, Pose};
use goaldiff::scorer::{score_goals, Corruption, ScoreConfig};
use goaldiff::vocab::build_vocabulary;

fn main() -> goaldiff::Result<()> {
    let mut endpoints = Vec::new();
    for seed in 0..120 {
        let kind = LayoutKind::ALL[seed as usize % LayoutKind::ALL.len()];
        endpoints.push(generate_scenario(kind, seed, 0.5)?.gt.endpoint());
    }
    let vocab = build_vocabulary(&endpoints, 64, 0)?;
    println!("vocabulary: {} goals from {} endpoints", vocab.len(), endpoints.len());

    let scene = generate_scenario(LayoutKind::Fork, 9001, 0.5)?;
    let g_end = scene.gt.endpoint();
    let cfg = ScoreConfig::default();
    let corruption = Corruption {
        outlier_prob: 1.0,
        ..Corruption::default()
    };
    let (noisy, _) = corruption.apply(g_end, &mut rng::seeded(3));

    for (label, target) in [("clean", g_end), ("corrupted", noisy)] {
        let s = score_goals(&vocab, &scene.layout, &Pose::IDENTITY, target, &cfg, 5)?;
        let g = vocab.get(s.raw_index);
        println!(
            "{label:<9} target ({:5.1}, {:5.1}) -> goal {:>2} at ({:5.1}, {:5.1})  dac {:.2}  dis {:.3}  error to expert {:.2} m",
            target[0],
            target[1],
            s.raw_index,
            g[0],
            g[1],
            s.dac[s.raw_index],
            s.dis[s.raw_index],
            dist(g, g_end)
        );
    }
    Ok(())
}
