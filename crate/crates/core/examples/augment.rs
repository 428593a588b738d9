//! Two stochastic views of one image, drawn as ASCII art.

mod common;

use contra_cluster::augment::{augment_pair, AugmentConfig};
use contra_cluster::data::Split;

fn main() -> contra_cluster::Result<()> {
    let ds = common::shapes(3, 1, Split::Train);
    let x = ds.batch(&[1]);
    let (a, b) = augment_pair(&x, &AugmentConfig::default(), 42)?;
    for (title, img) in [("original", x.data()), ("view 1", a.data()), ("view 2", b.data())] {
        println!("{title}:\n{}\n", common::ascii(img, 28));
    }
    Ok(())
}
