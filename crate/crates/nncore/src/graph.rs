//! Reverse-mode automatic differentiation on a single-use tape.
//!
//! Every operation records its output value and a backward closure. A tape is
//! consumed by [`Tape::backward`], so a recorded graph is differentiated at
//! most once.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{shape_err, NnError, Result};
use crate::kernels::{self, ConvGeometry};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Computes the gradient with respect to each parent from the output gradient.
/// The mask says which parents need a gradient; entries for the others may be `None`.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Gradients of the leaves of a differentiated tape.
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    /// Gradient of a leaf created with [`Tape::leaf`], if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.id).and_then(Option::as_ref)
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    fn push(
        &self,
        value: Tensor<T>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        leaf_grad: bool,
        param: Option<ParamId>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = leaf_grad || parents.iter().any(|&p| nodes[p].requires_grad);
        let backward = if requires_grad { backward } else { None };
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward,
            requires_grad,
            param,
        });
        Var {
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.push(t, vec![], None, false, None)
    }

    /// A leaf whose gradient is reported in [`Gradients`].
    pub fn leaf(&self, t: Tensor<T>) -> Var {
        self.push(t, vec![], None, true, None)
    }

    /// Binds a trainable parameter; its gradient is accumulated into the store on backward.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), vec![], None, true, Some(id))
    }

    /// Binds a parameter as a constant (frozen layer).
    pub fn frozen(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.constant(store.get(id).value.clone())
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.id].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Records an operation with a caller-supplied analytic backward pass.
    pub fn custom(&self, parents: &[Var], value: Tensor<T>, backward: BackwardFn<T>) -> Var {
        self.push(
            value,
            parents.iter().map(|p| p.id).collect(),
            Some(backward),
            false,
            None,
        )
    }

    /// Differentiates the scalar `loss`, accumulating parameter gradients into `store`.
    pub fn backward(self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let mut nodes = self.nodes.into_inner();
        if nodes[loss.id].value.len() != 1 {
            return Err(NnError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        nodes.truncate(loss.id + 1);
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let shape = nodes[loss.id].value.shape().to_vec();
        grads[loss.id] = Some(Tensor::ones(&shape));
        let mut leaves: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();

        for id in (0..nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Some(pid) = node.param {
                store.accumulate_grad(pid, g)?;
                continue;
            }
            let Some(back) = &node.backward else {
                leaves[id] = Some(g);
                continue;
            };
            let mask: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let outs = back(&g, &mask);
            for ((&p, pg), &need) in node.parents.iter().zip(outs).zip(&mask) {
                let Some(pg) = pg.filter(|_| need) else { continue };
                if pg.shape() != nodes[p].value.shape() {
                    return shape_err(format!(
                        "backward produced gradient {:?} for value {:?}",
                        pg.shape(),
                        nodes[p].value.shape()
                    ));
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot => *slot = Some(pg),
                }
            }
            // Release buffers captured by the closure.
            nodes[id].backward = None;
        }
        Ok(Gradients { leaves })
    }

    // ---- operations ---------------------------------------------------------

    pub fn conv2d(&self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let fwd = kernels::conv2d_forward(&xv, &wv, &bv, geom)?;
        let cols = fwd.cols;
        let x_shape = xv.shape().to_vec();
        Ok(self.custom(
            &[x, w, b],
            fwd.out,
            Box::new(move |g, mask| {
                let (gx, gw, gb) = kernels::conv2d_backward(g, &x_shape, &wv, &cols, geom, mask[0]);
                vec![gx, Some(gw), Some(gb)]
            }),
        ))
    }

    pub fn conv_transpose2d(
        &self,
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
        output_pad: usize,
    ) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let out = kernels::conv_transpose2d_forward(&xv, &wv, &bv, geom, output_pad)?;
        Ok(self.custom(
            &[x, w, b],
            out,
            Box::new(move |g, mask| {
                let (gx, gw, gb) = kernels::conv_transpose2d_backward(g, &xv, &wv, geom, mask[0]);
                vec![gx, Some(gw), Some(gb)]
            }),
        ))
    }

    /// `x·wᵀ + b` for `x` B×N, `w` M×N, `b` M.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let out = kernels::linear_forward(&xv, &wv, &bv)?;
        Ok(self.custom(
            &[x, w, b],
            out,
            Box::new(move |g, mask| {
                let (gx, gw, gb) = kernels::linear_backward(g, &xv, &wv, mask[0]);
                vec![gx, Some(gw), Some(gb)]
            }),
        ))
    }

    pub fn gelu(&self, x: Var) -> Var {
        let xv = self.value(x);
        let out = xv.map(kernels::gelu_scalar);
        self.custom(
            &[x],
            out,
            Box::new(move |g, _| {
                let gx = g
                    .zip_map(&xv, |g, x| g * kernels::gelu_grad_scalar(x))
                    .expect("same shape");
                vec![Some(gx)]
            }),
        )
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.value(x).map(kernels::sigmoid_scalar);
        let y = out.clone();
        self.custom(
            &[x],
            out,
            Box::new(move |g, _| {
                let gx = g
                    .zip_map(&y, |g, y| g * y * (T::one() - y))
                    .expect("same shape");
                vec![Some(gx)]
            }),
        )
    }

    pub fn avgpool2d(&self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xv = self.value(x);
        let out = kernels::avgpool2d_forward(&xv, kernel, stride)?;
        let x_shape = xv.shape().to_vec();
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |g, _| {
                vec![Some(kernels::avgpool2d_backward(g, &x_shape, kernel, stride))]
            }),
        ))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let x_shape = xv.shape().to_vec();
        let out = (*xv).clone().reshape(shape)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |g, _| vec![Some(g.clone().reshape(&x_shape).expect("same size"))]),
        ))
    }

    /// Concatenates two B×N tensors along the feature axis.
    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ra, na) = av.dims2()?;
        let (rb, nb) = bv.dims2()?;
        if ra != rb {
            return shape_err(format!(
                "concat of {:?} and {:?}",
                av.shape(),
                bv.shape()
            ));
        }
        let mut out = Vec::with_capacity(ra * (na + nb));
        for r in 0..ra {
            out.extend_from_slice(av.row(r));
            out.extend_from_slice(bv.row(r));
        }
        let out = Tensor::new(&[ra, na + nb], out)?;
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(move |g, _| {
                let w = na + nb;
                let mut ga = Vec::with_capacity(ra * na);
                let mut gb = Vec::with_capacity(ra * nb);
                for r in 0..ra {
                    ga.extend_from_slice(&g.data()[r * w..r * w + na]);
                    gb.extend_from_slice(&g.data()[r * w + na..(r + 1) * w]);
                }
                vec![
                    Some(Tensor::new(&[ra, na], ga).expect("shape")),
                    Some(Tensor::new(&[ra, nb], gb).expect("shape")),
                ]
            }),
        ))
    }

    /// Stacks two tensors along the leading axis; trailing dimensions must agree.
    pub fn concat_rows(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() == 0 || av.shape()[1..] != bv.shape()[1..] {
            return shape_err(format!(
                "cannot stack {:?} and {:?}",
                av.shape(),
                bv.shape()
            ));
        }
        let mut shape = av.shape().to_vec();
        shape[0] += bv.shape()[0];
        let mut data = Vec::with_capacity(av.len() + bv.len());
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        let split = av.len();
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        Ok(self.custom(
            &[a, b],
            Tensor::new(&shape, data)?,
            Box::new(move |g, _| {
                vec![
                    Some(Tensor::new(&sa, g.data()[..split].to_vec()).expect("shape")),
                    Some(Tensor::new(&sb, g.data()[split..].to_vec()).expect("shape")),
                ]
            }),
        ))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(&self.value(b), |x, y| x + y)?;
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        ))
    }

    pub fn scale(&self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.custom(&[a], out, Box::new(move |g, _| vec![Some(g.map(|v| v * s))]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, a: Var) -> Var {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        let out = Tensor::scalar(av.sum());
        self.custom(
            &[a],
            out,
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.data()[0]))]),
        )
    }

    /// Inner product of two same-shape tensors, as a scalar.
    pub fn dot(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.expect_same_shape(&bv)?;
        let out = Tensor::scalar(av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).sum());
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(move |g, _| {
                let s = g.data()[0];
                vec![Some(bv.map(|v| v * s)), Some(av.map(|v| v * s))]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_grad_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 2], |i| i as f64));
        let loss = tape.sum(x);
        let g = tape.backward(loss, &mut ParamStore::new()).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn self_inner_product_grad_is_twice_x() {
        let tape = Tape::<f64>::new();
        let xs = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let x = tape.leaf(xs.clone());
        let loss = tape.dot(x, x).unwrap();
        let g = tape.backward(loss, &mut ParamStore::new()).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), xs.map(|v| 2.0 * v).data());
    }

    #[test]
    fn backward_on_non_scalar_is_usage_error() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        let y = tape.scale(x, 2.0);
        assert!(matches!(
            tape.backward(y, &mut ParamStore::new()),
            Err(NnError::Usage(_))
        ));
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::ones(&[2]));
        let x = tape.leaf(Tensor::ones(&[2]));
        let loss = tape.dot(c, x).unwrap();
        let g = tape.backward(loss, &mut ParamStore::new()).unwrap();
        assert!(g.wrt(c).is_none());
        assert!(g.wrt(x).is_some());
    }

    #[test]
    fn params_accumulate_into_store() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", "layer", Tensor::full(&[2], 3.0)).unwrap();
        let tape = Tape::new();
        let w = tape.param(&store, id);
        let w2 = tape.param(&store, id);
        let loss = tape.dot(w, w2).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad.as_ref().unwrap().data(), &[6.0, 6.0]);
    }
}
