//! Elbow search over k on Gaussian blobs.

mod common;

use contra_cluster::cluster::{elbow_select, ClusterConfig};

fn main() -> contra_cluster::Result<()> {
    let (x, _) = common::blobs(6, 80, 16, 1.0, 11);
    let cfg = ClusterConfig::default();
    let elbow = elbow_select(x.view(), &cfg, 0)?;
    for (k, inertia) in &elbow.curve {
        let mark = if *k == elbow.k { "  <- elbow" } else { "" };
        println!("k={k:>2}  inertia {inertia:>12.1}{mark}");
    }
    println!("chosen k = {} (6 blobs generated)", elbow.k);
    Ok(())
}
