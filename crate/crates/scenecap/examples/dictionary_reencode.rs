//! Dictionary re-encoding up close: attention weights over the atoms,
//! the convex-combination norm bound, and scale invariance of the
//! winning atom.
//!
//!     cargo run --example dictionary_reencode

use scenecap::dictionary::{atom_norms, init_dictionary, reencode};
use scenecap::params::ParamStore;
use scenecap::rng::SeededRng;
use scenecap::tensor::Tape;

fn main() -> scenecap::Result<()> {
    let (dim, atoms) = (16, 8);
    let mut rng = SeededRng::new(5);
    let mut store = ParamStore::new();
    init_dictionary(&mut store, &mut rng, dim, atoms, None)?;

    let x: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
    let tape = Tape::new();
    let bound = store.bind(&tape)?;
    let xv = tape.constant_vector(x.clone())?;
    let (xhat, alpha) = reencode(&tape, &bound, xv)?;

    let a = tape.value(alpha);
    println!("alpha over {atoms} atoms:");
    for (k, w) in a.iter().enumerate() {
        println!("  atom {k}: {w:.4}");
    }
    println!("sum(alpha) = {:.15}", a.iter().sum::<f64>());

    let xhat_norm = tape.value(xhat).iter().map(|v| v * v).sum::<f64>().sqrt();
    let max_atom = atom_norms(&store)?.into_iter().fold(0.0, f64::max);
    println!("|x_hat| = {xhat_norm:.4} <= max atom norm {max_atom:.4}");

    // alpha = softmax(D'·(c·x)) sharpens with c but keeps the same argmax.
    let argmax = |w: &[f64]| {
        w.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
    };
    let base = argmax(&a);
    for c in [0.5, 2.0, 10.0] {
        let scaled = tape.constant_vector(x.iter().map(|v| c * v).collect())?;
        let (_, alpha_c) = reencode(&tape, &bound, scaled)?;
        let ac = tape.value(alpha_c);
        println!(
            "scale {c:>4}: argmax atom {} (weight {:.4})",
            argmax(&ac),
            ac[argmax(&ac)]
        );
        assert_eq!(argmax(&ac), base);
    }
    Ok(())
}
