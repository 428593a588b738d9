//! NT-Xent on aligned and shuffled view pairs, and the combined objective.

use contra_cluster::loss::{combined, ntxent, LossConfig};
use contra_nncore::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> contra_cluster::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, d) = (16, 8);
    let z1 = Tensor::<f64>::from_fn(&[b, d], |_| rng.random_range(-1.0..1.0));
    let close = z1.map(|v| v + 0.05);
    let unrelated = Tensor::<f64>::from_fn(&[b, d], |_| rng.random_range(-1.0..1.0));
    let cfg = LossConfig::default();

    for (name, z2) in [("matching views", &close), ("unrelated views", &unrelated)] {
        let tape = Tape::new();
        let l = ntxent(&tape, tape.constant(z1.clone()), tape.constant(z2.clone()), cfg.temperature)?;
        println!("NT-Xent, {name}: {:.4}", tape.value(l).item()?);
    }

    let img = Tensor::<f64>::from_fn(&[b, 1, 28, 28], |_| rng.random());
    let noisy = img.map(|v| (v + 0.1).min(1.0));
    let tape = Tape::new();
    let (x, y) = (tape.constant(img.clone()), tape.constant(noisy));
    let l = combined(&tape, tape.constant(z1.clone()), tape.constant(close), x, y, x, y, &cfg)?;
    println!("contrastive + {} × reconstruction: {:.4}", cfg.alpha, tape.value(l).item()?);
    Ok(())
}
