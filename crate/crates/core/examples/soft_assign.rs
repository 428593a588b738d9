//! Temperature-scaled cosine soft assignments against fitted prototypes.

mod common;

use contra_cluster::cluster::{kmeans_fit, ClusterConfig, PrototypeMatrix};

fn main() -> contra_cluster::Result<()> {
    let (x, truth) = common::blobs(3, 50, 8, 0.8, 5);
    let cfg = ClusterConfig::default();
    let fit = kmeans_fit(x.view(), 3, &cfg, 0)?;
    for t in [1.0, cfg.assignment_temperature, 0.01] {
        let protos = PrototypeMatrix::from_centroids(&fit.centroids, t)?;
        let c = protos.soft_assign(x.slice(ndarray::s![..1, ..]))?;
        println!("T={t:<5} first point: {:.3?}", c.row(0).to_vec());
    }
    let protos = PrototypeMatrix::from_centroids(&fit.centroids, cfg.assignment_temperature)?;
    let hard = protos.hard_label(x.view())?;
    println!("hard labels of points 0, 50, 100: {:?} (true {:?})", [hard[0], hard[50], hard[100]], [truth[0], truth[50], truth[100]]);
    Ok(())
}
