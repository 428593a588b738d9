//! Encoder, projector, decoder and the conditioning head of the contrastive
//! autoencoder, recorded onto an autodiff [`Tape`].
//!
//! ```text
//! x 1×28×28 ─conv→ 32×14×14 ─conv→ 64×7×7 ─conv→ 128×3×3 ─pool→ 128 ─fc→ h (128)
//! h ─fc→ 128 ─fc→ 128 ─fc→ z (64)
//! h ─fc→ 1152 → 128×3×3 ─convT→ 64×7×7 ─convT→ 32×14×14 ─convT→ 1×28×28 ─sigmoid→ y
//! ```

use contra_nncore::{uniform_fan_in, ConvGeometry, ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed;

pub const IMAGE_SIDE: usize = 28;
pub const LATENT_DIM: usize = 128;
pub const PROJECTION_DIM: usize = 64;
pub const CHANNELS: [usize; 3] = [32, 64, 128];
/// Spatial side of the deepest feature map.
pub const BOTTLENECK_SIDE: usize = 3;
const OUTPUT_PADS: [usize; 3] = [1, 0, 0];
const POOL: usize = 2;

/// Parameter counts, worked out by hand from the layer shapes.
pub const ENCODER_PARAMS: usize = (16 + 1) * 32 + (32 * 16 + 1) * 64 + (64 * 16 + 1) * 128 + (128 + 1) * 128;
pub const PROJECTOR_PARAMS: usize = (128 + 1) * 128 * 2 + (128 + 1) * 64;
pub const DECODER_PARAMS: usize = (128 + 1) * 1152 + 128 * 64 * 16 + 64 + 64 * 32 * 16 + 32 + 32 * 16 + 1;

pub fn conditioning_head_params(k: usize) -> usize {
    (LATENT_DIM + k) * LATENT_DIM + LATENT_DIM
}

pub fn conv_geometry() -> ConvGeometry {
    ConvGeometry {
        kernel: 4,
        stride: 2,
        padding: 1,
    }
}

/// Whether a sub-network's parameters receive gradients in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    Trainable,
    Frozen,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

impl Layer {
    fn bind<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, bind: Binding) -> (Var, Var) {
        match bind {
            Binding::Trainable => (tape.param(store, self.w), tape.param(store, self.b)),
            Binding::Frozen => (tape.frozen(store, self.w), tape.frozen(store, self.b)),
        }
    }

    fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

fn add_layer<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    layer_id: &str,
    w_shape: &[usize],
    fan_in: usize,
    bias_len: usize,
    rng: &mut R,
) -> Result<Layer> {
    let w = store.add(&format!("{layer_id}.weight"), layer_id, uniform_fan_in(w_shape, fan_in, rng))?;
    let b = store.add(&format!("{layer_id}.bias"), layer_id, uniform_fan_in(&[bias_len], fan_in, rng))?;
    Ok(Layer { w, b })
}

/// The full network and its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub store: ParamStore<T>,
    convs: [Layer; 3],
    enc_fc: Layer,
    proj: [Layer; 3],
    dec_fc: Layer,
    deconvs: [Layer; 3],
    head: Option<(Layer, usize)>,
}

impl<T: Real> Model<T> {
    /// Fresh weights drawn from the `init` stream of `root_seed`.
    pub fn new(root_seed: u64) -> Result<Self> {
        let mut rng = seed::rng(root_seed, "init", 0);
        let mut store = ParamStore::new();
        let k = 16;
        let mut cin = 1;
        let mut convs = Vec::new();
        for (i, &cout) in CHANNELS.iter().enumerate() {
            convs.push(add_layer(
                &mut store,
                &format!("encoder.conv{}", i + 1),
                &[cout, cin, 4, 4],
                cin * k,
                cout,
                &mut rng,
            )?);
            cin = cout;
        }
        let enc_fc = add_layer(&mut store, "encoder.fc", &[LATENT_DIM, 128], 128, LATENT_DIM, &mut rng)?;

        let dims = [LATENT_DIM, 128, 128, PROJECTION_DIM];
        let mut proj = Vec::new();
        for i in 0..3 {
            proj.push(add_layer(
                &mut store,
                &format!("projector.fc{}", i + 1),
                &[dims[i + 1], dims[i]],
                dims[i],
                dims[i + 1],
                &mut rng,
            )?);
        }

        let flat = CHANNELS[2] * BOTTLENECK_SIDE * BOTTLENECK_SIDE;
        let dec_fc = add_layer(&mut store, "decoder.fc", &[flat, LATENT_DIM], LATENT_DIM, flat, &mut rng)?;
        let widths = [CHANNELS[2], CHANNELS[1], CHANNELS[0], 1];
        let mut deconvs = Vec::new();
        for i in 0..3 {
            // transposed weights are Cin×Cout×k×k; frameworks take fan-in from Cout·k·k
            deconvs.push(add_layer(
                &mut store,
                &format!("decoder.deconv{}", i + 1),
                &[widths[i], widths[i + 1], 4, 4],
                widths[i + 1] * k,
                widths[i + 1],
                &mut rng,
            )?);
        }

        Ok(Self {
            store,
            convs: convs.try_into().expect("three convs"),
            enc_fc,
            proj: proj.try_into().expect("three projector layers"),
            dec_fc,
            deconvs: deconvs.try_into().expect("three deconvs"),
            head: None,
        })
    }

    /// Adds the conditioning head for `k` clusters.
    ///
    /// The head starts as the identity on the latent columns, so the
    /// conditional decoder initially reproduces the unconditional one; the
    /// assignment columns get small random weights.
    pub fn add_conditioning(&mut self, k: usize, root_seed: u64) -> Result<()> {
        if k < 2 {
            return Err(Error::Argument(format!("conditioning needs k >= 2, got {k}")));
        }
        if self.head.is_some() {
            return Err(Error::Consistency("conditioning head already present".into()));
        }
        let mut rng = seed::rng(root_seed, "init", 1);
        let n_in = LATENT_DIM + k;
        let bound = 1.0 / (n_in as f64).sqrt();
        let w = Tensor::from_fn(&[LATENT_DIM, n_in], |i| {
            let (r, c) = (i / n_in, i % n_in);
            if c < LATENT_DIM {
                T::of(if r == c { 1.0 } else { 0.0 })
            } else {
                T::of(rng.random_range(-bound..bound))
            }
        });
        let w = self.store.add("decoder.condition.weight", "decoder.condition", w)?;
        let b = self
            .store
            .add("decoder.condition.bias", "decoder.condition", Tensor::zeros(&[LATENT_DIM]))?;
        self.head = Some((Layer { w, b }, k));
        Ok(())
    }

    /// Number of clusters the conditioning head expects, if present.
    pub fn cluster_count(&self) -> Option<usize> {
        self.head.map(|(_, k)| k)
    }

    pub fn encoder_ids(&self) -> Vec<ParamId> {
        self.convs.iter().chain([&self.enc_fc]).flat_map(Layer::ids).collect()
    }

    pub fn projector_ids(&self) -> Vec<ParamId> {
        self.proj.iter().flat_map(Layer::ids).collect()
    }

    /// Decoder trunk plus the conditioning head.
    pub fn decoder_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = [&self.dec_fc].into_iter().chain(&self.deconvs).flat_map(Layer::ids).collect();
        if let Some((head, _)) = &self.head {
            ids.extend(head.ids());
        }
        ids
    }

    pub fn count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.store.get(id).value.len()).sum()
    }

    /// `x` (B×1×28×28) → `h` (B×128).
    pub fn encode(&self, tape: &Tape<T>, x: Var, bind: Binding) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1] != 1 || shape[2] != IMAGE_SIDE || shape[3] != IMAGE_SIDE {
            return Err(Error::Argument(format!("encoder expects B×1×28×28, got {shape:?}")));
        }
        let b = shape[0];
        let mut a = x;
        for layer in &self.convs {
            let (w, bias) = layer.bind(tape, &self.store, bind);
            a = tape.gelu(tape.conv2d(a, w, bias, conv_geometry())?);
        }
        let a = tape.avgpool2d(a, POOL, POOL)?;
        let a = tape.reshape(a, &[b, CHANNELS[2]])?;
        let (w, bias) = self.enc_fc.bind(tape, &self.store, bind);
        Ok(tape.linear(a, w, bias)?)
    }

    /// `h` (B×128) → `z` (B×64); no activation after the last layer.
    pub fn project(&self, tape: &Tape<T>, h: Var, bind: Binding) -> Result<Var> {
        let mut a = h;
        for (i, layer) in self.proj.iter().enumerate() {
            let (w, b) = layer.bind(tape, &self.store, bind);
            a = tape.linear(a, w, b)?;
            if i < 2 {
                a = tape.gelu(a);
            }
        }
        Ok(a)
    }

    /// `h` (B×128) → image (B×1×28×28) in (0, 1).
    pub fn decode(&self, tape: &Tape<T>, h: Var, bind: Binding) -> Result<Var> {
        let shape = tape.shape(h);
        if shape.len() != 2 || shape[1] != LATENT_DIM {
            return Err(Error::Argument(format!("decoder expects B×{LATENT_DIM}, got {shape:?}")));
        }
        let b = shape[0];
        let (w, bias) = self.dec_fc.bind(tape, &self.store, bind);
        let a = tape.gelu(tape.linear(h, w, bias)?);
        let mut a = tape.reshape(a, &[b, CHANNELS[2], BOTTLENECK_SIDE, BOTTLENECK_SIDE])?;
        for (i, layer) in self.deconvs.iter().enumerate() {
            let (w, bias) = layer.bind(tape, &self.store, bind);
            a = tape.conv_transpose2d(a, w, bias, conv_geometry(), OUTPUT_PADS[i])?;
            if i < 2 {
                a = tape.gelu(a);
            }
        }
        Ok(tape.sigmoid(a))
    }

    /// Decodes `h` conditioned on soft assignments `c` (B×k, rows on the simplex).
    pub fn decode_conditional(&self, tape: &Tape<T>, h: Var, c: Var, bind: Binding) -> Result<Var> {
        let Some((head, k)) = self.head else {
            return Err(Error::Consistency("model has no conditioning head".into()));
        };
        let c_val = tape.value(c);
        let (rows, cols) = c_val.dims2()?;
        if cols != k || rows != tape.shape(h)[0] {
            return Err(Error::Argument(format!(
                "assignments must be {}×{k}, got {:?}",
                tape.shape(h)[0],
                c_val.shape()
            )));
        }
        for r in 0..rows {
            let row = c_val.row(r);
            let s: f64 = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum();
            if !((s - 1.0).abs() <= 1e-4) || row.iter().any(|v| *v < T::zero()) {
                return Err(Error::Argument(format!("assignment row {r} is not on the simplex (sum {s})")));
            }
        }
        let hc = tape.concat_cols(h, c)?;
        let (w, b) = head.bind(tape, &self.store, bind);
        let h2 = tape.linear(hc, w, b)?;
        self.decode(tape, h2, bind)
    }
}

impl Model<f32> {
    /// Latent codes of a batch without recording gradients.
    pub fn encode_tensor(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let h = self.encode(&tape, xv, Binding::Frozen)?;
        Ok((*tape.value(h)).clone())
    }

    /// Projections of latent codes without recording gradients.
    pub fn project_tensor(&self, h: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let hv = tape.constant(h.clone());
        let z = self.project(&tape, hv, Binding::Frozen)?;
        Ok((*tape.value(z)).clone())
    }

    /// Conditional reconstructions without recording gradients.
    pub fn decode_conditional_tensor(&self, h: &Tensor<f32>, c: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let hv = tape.constant(h.clone());
        let cv = tape.constant(c.clone());
        let y = self.decode_conditional(&tape, hv, cv, Binding::Frozen)?;
        Ok((*tape.value(y)).clone())
    }

    /// Encodes every image of `images` (N×1×28×28 flattened) in chunks, in parallel.
    /// Rows do not interact, so the result does not depend on the chunking.
    pub fn encode_all(&self, images: &[f32], chunk: usize) -> Result<Tensor<f32>> {
        let per = IMAGE_SIDE * IMAGE_SIDE;
        if images.len() % per != 0 || chunk == 0 {
            return Err(Error::Argument("image buffer is not a whole number of 28×28 images".into()));
        }
        let n = images.len() / per;
        let parts: Vec<Result<Vec<f32>>> = images
            .par_chunks(chunk * per)
            .map(|c| {
                let x = Tensor::new(&[c.len() / per, 1, IMAGE_SIDE, IMAGE_SIDE], c.to_vec())?;
                Ok(self.encode_tensor(&x)?.into_data())
            })
            .collect();
        let mut out = Vec::with_capacity(n * LATENT_DIM);
        for p in parts {
            out.extend(p?);
        }
        Ok(Tensor::new(&[n, LATENT_DIM], out)?)
    }
}
