//! Round-trips a dataset through IDX files, or loads real ones:
//! `cargo run --example load_data -- <images-idx> <labels-idx>`.

mod common;

use std::path::PathBuf;

use contra_cluster::data::{load_idx, subset, write_idx, Split};

fn main() -> contra_cluster::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tmp = tempfile::tempdir()?;
    let (images, labels) = match args.as_slice() {
        [i, l] => (PathBuf::from(i), PathBuf::from(l)),
        _ => {
            let ds = common::shapes(300, 0, Split::Train);
            let paths = (tmp.path().join("images-idx3-ubyte"), tmp.path().join("labels-idx1-ubyte"));
            write_idx(&ds, &paths.0, &paths.1)?;
            paths
        }
    };
    let ds = load_idx(&images, &labels, Split::Train)?;
    println!("{} images of {}×{}, {} classes", ds.len(), ds.height, ds.width, ds.class_count);
    let mut counts = vec![0usize; ds.class_count];
    for &l in &ds.labels {
        counts[l] += 1;
    }
    println!("class counts: {counts:?}");

    let labelled = subset(&ds, 0.2, 7)?;
    println!("20% labelled subset: {} images", labelled.len());
    let px = ds.image(0);
    println!("first image, pixel range [{:.2}, {:.2}]", px.iter().cloned().fold(f32::MAX, f32::min), px.iter().cloned().fold(f32::MIN, f32::max));
    Ok(())
}
