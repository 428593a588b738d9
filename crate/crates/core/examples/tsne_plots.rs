//! Embeds blob features with t-SNE and writes the three scatter plots.
//! Pass an output directory to keep the files.

mod common;

use std::path::PathBuf;

use contra_cluster::cluster::{kmeans_fit, ClusterConfig, PrototypeMatrix};
use contra_cluster::eval::{export_plots, fit_cluster_label_map, tsne_embed, TsneConfig};

fn main() -> contra_cluster::Result<()> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    let (x, y) = common::blobs(5, 60, 20, 2.0, 9);

    let fit = kmeans_fit(x.view(), 5, &ClusterConfig::default(), 0)?;
    let protos = PrototypeMatrix::from_centroids(&fit.centroids, 0.1)?;
    let map = fit_cluster_label_map(x.view(), &y, 5, &protos)?;
    let clusters = protos.hard_label(x.view())?;
    let mapped: Vec<usize> = clusters.iter().map(|&c| map.mapping[c]).collect();

    let cfg = TsneConfig {
        iterations: 500,
        ..TsneConfig::default()
    };
    let res = tsne_embed(x.view(), &cfg)?;
    if let Some((it, kl)) = res.kl_history.last() {
        println!("KL(P||Q) after {} iterations: {kl:.4}", it + 1);
    }
    let files = export_plots(res.coords.view(), &y, &clusters, &mapped, &out)?;
    for p in [files.real_svg, files.cluster_svg, files.mapped_svg, files.csv] {
        println!("wrote {}", p.display());
    }
    Ok(())
}
