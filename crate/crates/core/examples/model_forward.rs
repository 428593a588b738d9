//! Runs a batch through encoder, projector and both decoders and prints shapes.

mod common;

use contra_cluster::cluster::PrototypeMatrix;
use contra_cluster::data::Split;
use contra_cluster::model::{Model, DECODER_PARAMS, ENCODER_PARAMS, PROJECTOR_PARAMS};
use contra_cluster::pipeline::{soft_assign_tensor, to_array};

fn main() -> contra_cluster::Result<()> {
    let mut model = Model::<f32>::new(0)?;
    println!("encoder {ENCODER_PARAMS}, projector {PROJECTOR_PARAMS}, decoder {DECODER_PARAMS} parameters");

    let ds = common::shapes(8, 0, Split::Train);
    let x = ds.batch(&(0..8).collect::<Vec<_>>());
    let h = model.encode_tensor(&x)?;
    let z = model.project_tensor(&h)?;
    println!("x {:?} -> h {:?} -> z {:?}", x.shape(), h.shape(), z.shape());

    let k = 4;
    model.add_conditioning(k, 0)?;
    let protos = PrototypeMatrix::from_centroids(&to_array(&h)?.slice(ndarray::s![..k, ..]).to_owned(), 0.1)?;
    let c = soft_assign_tensor(&protos, &h)?;
    let recon = model.decode_conditional_tensor(&h, &c)?;
    println!("soft assignment {:?}, conditional reconstruction {:?}", c.shape(), recon.shape());
    Ok(())
}
