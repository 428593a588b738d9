//! Statistical label mapping, kNN and a linear probe on blob features.

mod common;

use contra_cluster::cluster::{kmeans_fit, ClusterConfig, PrototypeMatrix};
use contra_cluster::eval::{
    compute_metrics, fit_cluster_label_map, knn_predict, linear_probe, predict_stat, MemoryBank, ProbeConfig,
};

fn main() -> contra_cluster::Result<()> {
    let (x, y) = common::blobs(4, 150, 12, 3.0, 2);
    // Interleave so both halves see every class.
    let train_rows: Vec<usize> = (0..x.nrows()).filter(|i| i % 2 == 0).collect();
    let test_rows: Vec<usize> = (0..x.nrows()).filter(|i| i % 2 == 1).collect();
    let (xtr, xte) = (x.select(ndarray::Axis(0), &train_rows), x.select(ndarray::Axis(0), &test_rows));
    let ytr: Vec<usize> = train_rows.iter().map(|&i| y[i]).collect();
    let yte: Vec<usize> = test_rows.iter().map(|&i| y[i]).collect();

    let fit = kmeans_fit(xtr.view(), 4, &ClusterConfig::default(), 0)?;
    let protos = PrototypeMatrix::from_centroids(&fit.centroids, 0.1)?;
    let map = fit_cluster_label_map(xtr.view(), &ytr, 4, &protos)?;
    let stat = predict_stat(xte.view(), &protos, &map)?;

    let bank = MemoryBank::new(xtr.clone(), ytr.clone(), 5)?;
    let knn = knn_predict(&bank, xte.view())?;

    let probe_cfg = ProbeConfig {
        epochs: 50,
        lr: 1e-2,
        ..ProbeConfig::default()
    };
    let probe = linear_probe(xtr.view(), &ytr, 4, &probe_cfg)?;
    let lin = probe.predict(xte.view());

    for (name, pred) in [("stat", stat), ("knn", knn), ("lin", lin)] {
        let m = compute_metrics(&pred, &yte, 4)?;
        println!("{name:<4} accuracy {:.3}  precision {:.3}  recall {:.3}", m.accuracy, m.precision, m.recall);
    }
    Ok(())
}
