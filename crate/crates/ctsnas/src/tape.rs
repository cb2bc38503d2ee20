//! Reverse-mode automatic differentiation over dynamic-dimension arrays.
//!
//! A forward pass records one [`Step`] per primitive onto a [`Tape`]; calling
//! [`Tape::backward`] walks the recording in reverse and accumulates gradients.
//! The primitive set is exactly what the forecasting operators need: last-axis
//! linear maps, causal convolution along the time axis, node mixing with a
//! fixed transition matrix, batched matmul for attention, softmax, batch norm,
//! gather/overwrite for sparse attention, and elementwise basics.
//!
//! Every stored value is kept in standard (row-major) layout so views can be
//! reshaped without copies in the hot paths.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayD, ArrayView2, Axis, Ix3, IxDyn, Slice};

use crate::scalar::Scalar;

/// Handle to a value recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vid(pub usize);

/// Batch statistics returned by a training-mode batch norm, used by the
/// owning layer to update its running averages.
pub struct BnBatchStats<F> {
    pub mean: Array1<F>,
    pub var: Array1<F>,
}

enum Step<F: Scalar> {
    Leaf,
    Add(Vid, Vid),
    Sub(Vid, Vid),
    Neg(Vid),
    Mul(Vid, Vid),
    ScaleConst(Vid, F),
    AddScalarConst(Vid),
    AddBias(Vid, Vid),
    MulScalar(Vid, Vid),
    Index(Vid, usize),
    LinearLast(Vid, Vid),
    ConvCausal {
        x: Vid,
        w: Vid,
        b: Vid,
        dilation: usize,
    },
    MixNodes {
        x: Vid,
        support: Arc<Array2<F>>,
    },
    BatMatmul(Vid, Vid),
    SwapAxes(Vid, usize, usize),
    SoftmaxLast(Vid),
    Sigmoid(Vid),
    Relu(Vid),
    MeanAxisKeep(Vid, usize),
    BroadcastAxis(Vid, usize, usize),
    GatherSteps {
        x: Vid,
        idx: Arc<Vec<Vec<usize>>>,
        u: usize,
    },
    OverwriteSteps {
        base: Vid,
        rows: Vid,
        idx: Arc<Vec<Vec<usize>>>,
    },
    SliceAxis(Vid, usize, usize, usize),
    ConcatAxis(Vid, Vid, usize),
    RotateLast(Vid, usize),
    BatchNorm {
        x: Vid,
        gamma: Vid,
        xhat: ArrayD<F>,
        inv_std: Array1<F>,
        batch_stats: bool,
    },
    MaeLoss {
        pred: Vid,
        target: Arc<ArrayD<F>>,
    },
    MseLoss {
        pred: Vid,
        target: Arc<ArrayD<F>>,
    },
}

/// Gradients produced by one backward pass, indexed by [`Vid`].
pub struct Grads<F: Scalar> {
    by_node: Vec<Option<ArrayD<F>>>,
}

impl<F: Scalar> Grads<F> {
    pub fn of(&self, id: Vid) -> Option<&ArrayD<F>> {
        self.by_node[id.0].as_ref()
    }
    pub fn take(&mut self, id: Vid) -> Option<ArrayD<F>> {
        self.by_node[id.0].take()
    }
}

pub struct Tape<F: Scalar> {
    vals: Vec<ArrayD<F>>,
    steps: Vec<Step<F>>,
}

fn as2<F: Scalar>(a: &ArrayD<F>, rows: usize, cols: usize) -> ArrayView2<'_, F> {
    a.view()
        .into_shape_with_order((rows, cols))
        .expect("standard layout reshape")
}

/// `dot` may hand back column-major output (it does for transposed
/// operands); force row-major before any reshape.
fn std2<F: Scalar>(a: Array2<F>) -> Array2<F> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().to_owned()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            vals: Vec::new(),
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn value(&self, id: Vid) -> &ArrayD<F> {
        &self.vals[id.0]
    }

    fn push(&mut self, v: ArrayD<F>, step: Step<F>) -> Vid {
        debug_assert!(v.is_standard_layout() || v.len() <= 1);
        self.vals.push(v);
        self.steps.push(step);
        Vid(self.vals.len() - 1)
    }

    /// Record an input with no gradient history of its own.
    pub fn leaf(&mut self, v: ArrayD<F>) -> Vid {
        let v = if v.is_standard_layout() {
            v
        } else {
            v.as_standard_layout().to_owned()
        };
        self.push(v, Step::Leaf)
    }

    pub fn add(&mut self, a: Vid, b: Vid) -> Vid {
        let v = &self.vals[a.0] + &self.vals[b.0];
        self.push(v, Step::Add(a, b))
    }

    pub fn add_n(&mut self, ids: &[Vid]) -> Vid {
        assert!(!ids.is_empty());
        let mut acc = ids[0];
        for &id in &ids[1..] {
            acc = self.add(acc, id);
        }
        acc
    }

    pub fn sub(&mut self, a: Vid, b: Vid) -> Vid {
        let v = &self.vals[a.0] - &self.vals[b.0];
        self.push(v, Step::Sub(a, b))
    }

    pub fn neg(&mut self, a: Vid) -> Vid {
        let v = self.vals[a.0].mapv(|x| -x);
        self.push(v, Step::Neg(a))
    }

    pub fn mul(&mut self, a: Vid, b: Vid) -> Vid {
        let v = &self.vals[a.0] * &self.vals[b.0];
        self.push(v, Step::Mul(a, b))
    }

    pub fn scale(&mut self, a: Vid, c: F) -> Vid {
        let v = self.vals[a.0].mapv(|x| x * c);
        self.push(v, Step::ScaleConst(a, c))
    }

    pub fn add_scalar(&mut self, a: Vid, c: F) -> Vid {
        let v = self.vals[a.0].mapv(|x| x + c);
        self.push(v, Step::AddScalarConst(a))
    }

    /// `x + bias` with `bias` broadcast along the last axis.
    pub fn add_bias(&mut self, x: Vid, bias: Vid) -> Vid {
        let d = *self.vals[x.0].shape().last().unwrap();
        assert_eq!(self.vals[bias.0].len(), d, "bias length");
        let xv = &self.vals[x.0];
        let l = xv.len() / d;
        let b1 = self.vals[bias.0]
            .view()
            .into_shape_with_order(d)
            .unwrap()
            .to_owned();
        let mut v = xv.clone();
        {
            let mut v2 = v.view_mut().into_shape_with_order((l, d)).unwrap();
            v2 += &b1;
        }
        self.push(v, Step::AddBias(x, bias))
    }

    /// Multiply a tensor by a single-element node (architecture weights).
    pub fn mul_scalar(&mut self, x: Vid, s: Vid) -> Vid {
        assert_eq!(self.vals[s.0].len(), 1);
        let c = *self.vals[s.0].iter().next().unwrap();
        let v = self.vals[x.0].mapv(|e| e * c);
        self.push(v, Step::MulScalar(x, s))
    }

    /// Extract element `i` of a 1-D node as a single-element node.
    pub fn index(&mut self, v: Vid, i: usize) -> Vid {
        let val = self.vals[v.0][IxDyn(&[i])];
        let out = ArrayD::from_elem(IxDyn(&[1]), val);
        self.push(out, Step::Index(v, i))
    }

    /// `x[..., Din] @ w[Din, Dout]`.
    pub fn linear_last(&mut self, x: Vid, w: Vid) -> Vid {
        let (xs, ws) = (self.vals[x.0].shape(), self.vals[w.0].shape());
        let din = *xs.last().unwrap();
        assert_eq!(ws[0], din, "linear_last input width");
        let dout = ws[1];
        let l = self.vals[x.0].len() / din;
        let x2 = as2(&self.vals[x.0], l, din);
        let w2 = as2(&self.vals[w.0], din, dout);
        let y2 = std2(x2.dot(&w2));
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = dout;
        let y = y2.into_shape_with_order(IxDyn(&shape)).unwrap();
        self.push(y, Step::LinearLast(x, w))
    }

    /// Causal convolution along axis 2 of `[B, N, T, Din]` with kernel
    /// `w[k, Din, Dout]`, bias `b[Dout]` and left zero padding `(k-1)*dilation`.
    pub fn conv_causal(&mut self, x: Vid, w: Vid, b: Vid, dilation: usize) -> Vid {
        assert!(dilation >= 1);
        let xs = self.vals[x.0].shape().to_vec();
        let ws = self.vals[w.0].shape().to_vec();
        assert_eq!(xs.len(), 4);
        assert_eq!(ws.len(), 3);
        assert_eq!(ws[1], xs[3], "conv input channels");
        let (bsz, n, t, _din) = (xs[0], xs[1], xs[2], xs[3]);
        let (k, din, dout) = (ws[0], ws[1], ws[2]);

        let mut y = ArrayD::<F>::zeros(IxDyn(&[bsz, n, t, dout]));
        {
            let b1 = self.vals[b.0]
                .view()
                .into_shape_with_order(dout)
                .unwrap()
                .to_owned();
            let l = bsz * n * t;
            let mut y2 = y.view_mut().into_shape_with_order((l, dout)).unwrap();
            y2 += &b1;
        }
        for kk in 0..k {
            let shift = kk * dilation;
            if shift >= t {
                continue;
            }
            let wk = self.vals[w.0].index_axis(Axis(0), kk).to_owned();
            let wk2 = wk.view().into_shape_with_order((din, dout)).unwrap();
            let xsl = self.vals[x.0]
                .slice_axis(Axis(2), Slice::from(0..t - shift))
                .to_owned();
            let l = bsz * n * (t - shift);
            let part = std2(as2(&xsl, l, din).dot(&wk2));
            let part4 = part
                .into_shape_with_order(IxDyn(&[bsz, n, t - shift, dout]))
                .unwrap();
            let mut dst = y.slice_axis_mut(Axis(2), Slice::from(shift..t));
            dst += &part4;
        }
        self.push(y, Step::ConvCausal { x, w, b, dilation })
    }

    /// Apply a fixed transition matrix over the node axis:
    /// `y[b, i, t, d] = sum_j support[i, j] * x[b, j, t, d]`.
    pub fn mix_nodes(&mut self, support: Arc<Array2<F>>, x: Vid) -> Vid {
        let xs = self.vals[x.0].shape().to_vec();
        assert_eq!(xs.len(), 4);
        let (bsz, n, t, d) = (xs[0], xs[1], xs[2], xs[3]);
        assert_eq!(support.nrows(), n);
        assert_eq!(support.ncols(), n);
        let mut y = ArrayD::<F>::zeros(IxDyn(&xs));
        for bi in 0..bsz {
            let xb = self.vals[x.0].index_axis(Axis(0), bi);
            let xb2 = xb.into_shape_with_order((n, t * d)).unwrap();
            let yb = support.dot(&xb2);
            y.index_axis_mut(Axis(0), bi)
                .into_shape_with_order((n, t * d))
                .unwrap()
                .assign(&yb);
        }
        self.push(y, Step::MixNodes { x, support })
    }

    /// Matrix product over the trailing two axes with shared leading axes.
    pub fn bat_matmul(&mut self, a: Vid, b: Vid) -> Vid {
        let ash = self.vals[a.0].shape().to_vec();
        let bsh = self.vals[b.0].shape().to_vec();
        let rank = ash.len();
        assert_eq!(rank, bsh.len());
        assert!(rank >= 2);
        assert_eq!(&ash[..rank - 2], &bsh[..rank - 2], "leading axes");
        let (m, p) = (ash[rank - 2], ash[rank - 1]);
        let (p2, n) = (bsh[rank - 2], bsh[rank - 1]);
        assert_eq!(p, p2, "inner dimension");
        let l: usize = ash[..rank - 2].iter().product();
        let a3 = self.vals[a.0]
            .view()
            .into_shape_with_order((l, m, p))
            .unwrap();
        let b3 = self.vals[b.0]
            .view()
            .into_shape_with_order((l, p, n))
            .unwrap();
        let mut y3 = ndarray::Array3::<F>::zeros((l, m, n));
        for i in 0..l {
            let yi = a3.index_axis(Axis(0), i).dot(&b3.index_axis(Axis(0), i));
            y3.index_axis_mut(Axis(0), i).assign(&yi);
        }
        let mut shape = ash;
        shape[rank - 2] = m;
        shape[rank - 1] = n;
        let y = y3.into_shape_with_order(IxDyn(&shape)).unwrap();
        self.push(y, Step::BatMatmul(a, b))
    }

    pub fn swap_axes(&mut self, x: Vid, ax1: usize, ax2: usize) -> Vid {
        let mut v = self.vals[x.0].clone();
        v.swap_axes(ax1, ax2);
        let v = v.as_standard_layout().to_owned();
        self.push(v, Step::SwapAxes(x, ax1, ax2))
    }

    pub fn softmax_last(&mut self, x: Vid) -> Vid {
        let d = *self.vals[x.0].shape().last().unwrap();
        let l = self.vals[x.0].len() / d;
        let mut y = self.vals[x.0].clone();
        {
            let mut y2 = y.view_mut().into_shape_with_order((l, d)).unwrap();
            for mut row in y2.rows_mut() {
                let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
                row.mapv_inplace(|v| (v - mx).exp());
                let s: F = row.iter().cloned().sum();
                row.mapv_inplace(|v| v / s);
            }
        }
        self.push(y, Step::SoftmaxLast(x))
    }

    pub fn sigmoid(&mut self, x: Vid) -> Vid {
        let one = F::one();
        let v = self.vals[x.0].mapv(|e| one / (one + (-e).exp()));
        self.push(v, Step::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Vid) -> Vid {
        let z = F::zero();
        let v = self.vals[x.0].mapv(|e| if e > z { e } else { z });
        self.push(v, Step::Relu(x))
    }

    pub fn mean_axis_keep(&mut self, x: Vid, axis: usize) -> Vid {
        let v = self.vals[x.0].mean_axis(Axis(axis)).unwrap();
        let v = v.insert_axis(Axis(axis)).as_standard_layout().to_owned();
        self.push(v, Step::MeanAxisKeep(x, axis))
    }

    pub fn broadcast_axis(&mut self, x: Vid, axis: usize, n: usize) -> Vid {
        assert_eq!(self.vals[x.0].shape()[axis], 1);
        let mut shape = self.vals[x.0].shape().to_vec();
        shape[axis] = n;
        let v = self.vals[x.0]
            .broadcast(IxDyn(&shape))
            .unwrap()
            .as_standard_layout()
            .to_owned();
        self.push(v, Step::BroadcastAxis(x, axis, n))
    }

    /// Gather `u` positions along axis 2 of `[B, N, T, D]`; `idx` holds one
    /// sorted index list per `(b, n)` pair, flattened row-major.
    pub fn gather_steps(&mut self, x: Vid, idx: Arc<Vec<Vec<usize>>>, u: usize) -> Vid {
        let xs = self.vals[x.0].shape().to_vec();
        assert_eq!(xs.len(), 4);
        let (bsz, n, _t, d) = (xs[0], xs[1], xs[2], xs[3]);
        assert_eq!(idx.len(), bsz * n);
        let mut y = ArrayD::<F>::zeros(IxDyn(&[bsz, n, u, d]));
        for bi in 0..bsz {
            for ni in 0..n {
                let list = &idx[bi * n + ni];
                assert_eq!(list.len(), u);
                for (r, &ti) in list.iter().enumerate() {
                    for di in 0..d {
                        y[IxDyn(&[bi, ni, r, di])] = self.vals[x.0][IxDyn(&[bi, ni, ti, di])];
                    }
                }
            }
        }
        self.push(y, Step::GatherSteps { x, idx, u })
    }

    /// `base` with rows along axis 2 replaced at `idx` by `rows`.
    pub fn overwrite_steps(&mut self, base: Vid, rows: Vid, idx: Arc<Vec<Vec<usize>>>) -> Vid {
        let bs = self.vals[base.0].shape().to_vec();
        let rs = self.vals[rows.0].shape().to_vec();
        assert_eq!(bs.len(), 4);
        let (bsz, n, _t, d) = (bs[0], bs[1], bs[2], bs[3]);
        assert_eq!(rs[0], bsz);
        assert_eq!(rs[1], n);
        assert_eq!(rs[3], d);
        let u = rs[2];
        assert_eq!(idx.len(), bsz * n);
        let mut y = self.vals[base.0].clone();
        for bi in 0..bsz {
            for ni in 0..n {
                let list = &idx[bi * n + ni];
                assert_eq!(list.len(), u);
                for (r, &ti) in list.iter().enumerate() {
                    for di in 0..d {
                        y[IxDyn(&[bi, ni, ti, di])] = self.vals[rows.0][IxDyn(&[bi, ni, r, di])];
                    }
                }
            }
        }
        self.push(y, Step::OverwriteSteps { base, rows, idx })
    }

    pub fn slice_axis(&mut self, x: Vid, axis: usize, from: usize, to: usize) -> Vid {
        let v = self.vals[x.0]
            .slice_axis(Axis(axis), Slice::from(from..to))
            .to_owned();
        self.push(v, Step::SliceAxis(x, axis, from, to))
    }

    pub fn concat_axis(&mut self, a: Vid, b: Vid, axis: usize) -> Vid {
        let v = ndarray::concatenate(
            Axis(axis),
            &[self.vals[a.0].view(), self.vals[b.0].view()],
        )
        .unwrap()
        .as_standard_layout()
        .to_owned();
        self.push(v, Step::ConcatAxis(a, b, axis))
    }

    /// Rotate the last axis left by `shift`: `y[..., i] = x[..., (i+shift) % D]`.
    pub fn rotate_last(&mut self, x: Vid, shift: usize) -> Vid {
        let d = *self.vals[x.0].shape().last().unwrap();
        let shift = shift % d;
        let l = self.vals[x.0].len() / d;
        let mut y = self.vals[x.0].clone();
        {
            let x2 = as2(&self.vals[x.0], l, d);
            let mut y2 = y.view_mut().into_shape_with_order((l, d)).unwrap();
            for i in 0..d {
                y2.column_mut(i).assign(&x2.column((i + shift) % d));
            }
        }
        self.push(y, Step::RotateLast(x, shift))
    }

    /// Batch normalization (without shift) over all leading axes, per
    /// last-axis channel: `y = gamma * (x - mean) / sqrt(var + eps)`.
    /// The additive shift is left to the caller via [`Tape::add_bias`].
    ///
    /// With `running = None` the batch statistics are used (training mode) and
    /// returned so the caller can update its running averages; otherwise the
    /// provided running statistics are treated as constants (eval mode).
    pub fn batch_norm(
        &mut self,
        x: Vid,
        gamma: Vid,
        running: Option<(&Array1<F>, &Array1<F>)>,
        eps: F,
    ) -> (Vid, Option<BnBatchStats<F>>) {
        let d = *self.vals[x.0].shape().last().unwrap();
        let l = self.vals[x.0].len() / d;
        let x2 = as2(&self.vals[x.0], l, d).to_owned();
        let m = F::from_usize(l).unwrap();

        let (mean, var, batch_stats) = match running {
            Some((rm, rv)) => (rm.clone(), rv.clone(), false),
            None => {
                let mean = x2.sum_axis(Axis(0)).mapv(|v| v / m);
                let mut var = Array1::<F>::zeros(d);
                for row in x2.rows() {
                    for (j, &v) in row.iter().enumerate() {
                        let c = v - mean[j];
                        var[j] += c * c;
                    }
                }
                var.mapv_inplace(|v| v / m);
                (mean, var, true)
            }
        };
        let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());

        let mut xhat = x2;
        for mut row in xhat.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
        }
        let g1 = self.vals[gamma.0]
            .view()
            .into_shape_with_order(d)
            .unwrap()
            .to_owned();
        let mut y2 = xhat.clone();
        for mut row in y2.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * g1[j];
            }
        }
        let y = y2
            .into_shape_with_order(IxDyn(self.vals[x.0].shape()))
            .unwrap();
        let xhat_d = xhat
            .into_shape_with_order(IxDyn(self.vals[x.0].shape()))
            .unwrap();
        let stats = if batch_stats {
            Some(BnBatchStats {
                mean: mean.clone(),
                var: var.clone(),
            })
        } else {
            None
        };
        let id = self.push(
            y,
            Step::BatchNorm {
                x,
                gamma,
                xhat: xhat_d,
                inv_std,
                batch_stats,
            },
        );
        (id, stats)
    }

    /// Mean absolute error against a constant target, as a `[1]` node.
    pub fn mae_loss(&mut self, pred: Vid, target: Arc<ArrayD<F>>) -> Vid {
        assert_eq!(self.vals[pred.0].shape(), target.shape());
        let m = F::from_usize(target.len()).unwrap();
        let mut acc = F::zero();
        for (p, t) in self.vals[pred.0].iter().zip(target.iter()) {
            acc += (*p - *t).abs();
        }
        let v = ArrayD::from_elem(IxDyn(&[1]), acc / m);
        self.push(v, Step::MaeLoss { pred, target })
    }

    /// Mean squared error against a constant target, as a `[1]` node.
    pub fn mse_loss(&mut self, pred: Vid, target: Arc<ArrayD<F>>) -> Vid {
        assert_eq!(self.vals[pred.0].shape(), target.shape());
        let m = F::from_usize(target.len()).unwrap();
        let mut acc = F::zero();
        for (p, t) in self.vals[pred.0].iter().zip(target.iter()) {
            let d = *p - *t;
            acc += d * d;
        }
        let v = ArrayD::from_elem(IxDyn(&[1]), acc / m);
        self.push(v, Step::MseLoss { pred, target })
    }

    /// Run reverse accumulation from a single-element root node.
    pub fn backward(&self, root: Vid) -> Grads<F> {
        assert_eq!(self.vals[root.0].len(), 1, "backward root must be scalar");
        let mut g: Vec<Option<ArrayD<F>>> = vec![None; self.vals.len()];
        g[root.0] = Some(ArrayD::from_elem(IxDyn(&[1]), F::one()));

        for i in (0..self.steps.len()).rev() {
            let dy = match g[i].take() {
                Some(d) => d,
                None => continue,
            };
            self.step_backward(i, &dy, &mut g);
            g[i] = Some(dy);
        }
        Grads { by_node: g }
    }

    fn acc(g: &mut Vec<Option<ArrayD<F>>>, id: Vid, delta: ArrayD<F>) {
        match &mut g[id.0] {
            Some(existing) => *existing += &delta,
            slot @ None => {
                let delta = if delta.is_standard_layout() || delta.len() <= 1 {
                    delta
                } else {
                    delta.as_standard_layout().to_owned()
                };
                *slot = Some(delta);
            }
        }
    }

    fn step_backward(&self, i: usize, dy: &ArrayD<F>, g: &mut Vec<Option<ArrayD<F>>>) {
        match &self.steps[i] {
            Step::Leaf => {}
            Step::Add(a, b) => {
                Self::acc(g, *a, dy.clone());
                Self::acc(g, *b, dy.clone());
            }
            Step::Sub(a, b) => {
                Self::acc(g, *a, dy.clone());
                Self::acc(g, *b, dy.mapv(|v| -v));
            }
            Step::Neg(a) => Self::acc(g, *a, dy.mapv(|v| -v)),
            Step::Mul(a, b) => {
                Self::acc(g, *a, dy * &self.vals[b.0]);
                Self::acc(g, *b, dy * &self.vals[a.0]);
            }
            Step::ScaleConst(a, c) => {
                let c = *c;
                Self::acc(g, *a, dy.mapv(|v| v * c));
            }
            Step::AddScalarConst(a) => Self::acc(g, *a, dy.clone()),
            Step::AddBias(x, b) => {
                Self::acc(g, *x, dy.clone());
                let d = self.vals[b.0].len();
                let l = dy.len() / d;
                let dy2 = as2(dy, l, d);
                let db = dy2
                    .sum_axis(Axis(0))
                    .into_shape_with_order(IxDyn(self.vals[b.0].shape()))
                    .unwrap();
                Self::acc(g, *b, db);
            }
            Step::MulScalar(x, s) => {
                let c = *self.vals[s.0].iter().next().unwrap();
                Self::acc(g, *x, dy.mapv(|v| v * c));
                let mut acc = F::zero();
                for (d, x0) in dy.iter().zip(self.vals[x.0].iter()) {
                    acc += *d * *x0;
                }
                Self::acc(g, *s, ArrayD::from_elem(IxDyn(&[1]), acc));
            }
            Step::Index(v, idx) => {
                let mut dv = ArrayD::<F>::zeros(IxDyn(self.vals[v.0].shape()));
                dv[IxDyn(&[*idx])] = dy[IxDyn(&[0])];
                Self::acc(g, *v, dv);
            }
            Step::LinearLast(x, w) => {
                let din = *self.vals[x.0].shape().last().unwrap();
                let dout = self.vals[w.0].shape()[1];
                let l = self.vals[x.0].len() / din;
                let x2 = as2(&self.vals[x.0], l, din);
                let w2 = as2(&self.vals[w.0], din, dout);
                let dy2 = as2(dy, l, dout);
                let dw = std2(x2.t().dot(&dy2)).into_dyn();
                let dx = std2(dy2.dot(&w2.t()))
                    .into_shape_with_order(IxDyn(self.vals[x.0].shape()))
                    .unwrap();
                Self::acc(g, *w, dw);
                Self::acc(g, *x, dx);
            }
            Step::ConvCausal { x, w, b, dilation } => {
                let xs = self.vals[x.0].shape().to_vec();
                let ws = self.vals[w.0].shape().to_vec();
                let (bsz, n, t) = (xs[0], xs[1], xs[2]);
                let (k, din, dout) = (ws[0], ws[1], ws[2]);
                let l_all = bsz * n * t;
                let db = as2(dy, l_all, dout)
                    .sum_axis(Axis(0))
                    .into_shape_with_order(IxDyn(self.vals[b.0].shape()))
                    .unwrap();
                Self::acc(g, *b, db);

                let mut dw = ArrayD::<F>::zeros(IxDyn(&ws));
                let mut dx = ArrayD::<F>::zeros(IxDyn(&xs));
                for kk in 0..k {
                    let shift = kk * *dilation;
                    if shift >= t {
                        continue;
                    }
                    let len = t - shift;
                    let l = bsz * n * len;
                    let dys = dy.slice_axis(Axis(2), Slice::from(shift..t)).to_owned();
                    let dys2 = as2(&dys, l, dout);
                    let xsl = self.vals[x.0]
                        .slice_axis(Axis(2), Slice::from(0..len))
                        .to_owned();
                    let xs2 = as2(&xsl, l, din);
                    let dwk = xs2.t().dot(&dys2);
                    dw.index_axis_mut(Axis(0), kk)
                        .into_shape_with_order((din, dout))
                        .unwrap()
                        .zip_mut_with(&dwk, |a, &bv| *a += bv);
                    let wk = self.vals[w.0].index_axis(Axis(0), kk).to_owned();
                    let wk2 = wk.view().into_shape_with_order((din, dout)).unwrap();
                    let dxs = std2(dys2.dot(&wk2.t()));
                    let dxs4 = dxs
                        .into_shape_with_order(IxDyn(&[bsz, n, len, din]))
                        .unwrap();
                    let mut dst = dx.slice_axis_mut(Axis(2), Slice::from(0..len));
                    dst += &dxs4;
                }
                Self::acc(g, *w, dw);
                Self::acc(g, *x, dx);
            }
            Step::MixNodes { x, support } => {
                let xs = self.vals[x.0].shape().to_vec();
                let (bsz, n, t, d) = (xs[0], xs[1], xs[2], xs[3]);
                let st = support.t();
                let mut dx = ArrayD::<F>::zeros(IxDyn(&xs));
                for bi in 0..bsz {
                    let dyb = dy.index_axis(Axis(0), bi);
                    let dyb2 = dyb.into_shape_with_order((n, t * d)).unwrap();
                    let dxb = st.dot(&dyb2);
                    dx.index_axis_mut(Axis(0), bi)
                        .into_shape_with_order((n, t * d))
                        .unwrap()
                        .assign(&dxb);
                }
                Self::acc(g, *x, dx);
            }
            Step::BatMatmul(a, b) => {
                let ash = self.vals[a.0].shape().to_vec();
                let bsh = self.vals[b.0].shape().to_vec();
                let rank = ash.len();
                let (m, p) = (ash[rank - 2], ash[rank - 1]);
                let n = bsh[rank - 1];
                let l: usize = ash[..rank - 2].iter().product();
                let a3 = self.vals[a.0]
                    .view()
                    .into_shape_with_order((l, m, p))
                    .unwrap();
                let b3 = self.vals[b.0]
                    .view()
                    .into_shape_with_order((l, p, n))
                    .unwrap();
                let dy3 = dy.view().into_shape_with_order((l, m, n)).unwrap();
                let mut da = ndarray::Array3::<F>::zeros((l, m, p));
                let mut db = ndarray::Array3::<F>::zeros((l, p, n));
                for i in 0..l {
                    let dyi = dy3.index_axis(Axis(0), i);
                    da.index_axis_mut(Axis(0), i)
                        .assign(&dyi.dot(&b3.index_axis(Axis(0), i).t()));
                    db.index_axis_mut(Axis(0), i)
                        .assign(&a3.index_axis(Axis(0), i).t().dot(&dyi));
                }
                Self::acc(
                    g,
                    *a,
                    da.into_dimensionality::<Ix3>()
                        .unwrap()
                        .into_shape_with_order(IxDyn(&ash))
                        .unwrap(),
                );
                Self::acc(g, *b, db.into_shape_with_order(IxDyn(&bsh)).unwrap());
            }
            Step::SwapAxes(x, ax1, ax2) => {
                let mut dx = dy.clone();
                dx.swap_axes(*ax1, *ax2);
                Self::acc(g, *x, dx.as_standard_layout().to_owned());
            }
            Step::SoftmaxLast(x) => {
                let y = &self.vals[i];
                let d = *y.shape().last().unwrap();
                let l = y.len() / d;
                let y2 = as2(y, l, d);
                let dy2 = as2(dy, l, d);
                let mut dx = ndarray::Array2::<F>::zeros((l, d));
                for r in 0..l {
                    let mut dot = F::zero();
                    for c in 0..d {
                        dot += dy2[(r, c)] * y2[(r, c)];
                    }
                    for c in 0..d {
                        dx[(r, c)] = y2[(r, c)] * (dy2[(r, c)] - dot);
                    }
                }
                Self::acc(
                    g,
                    *x,
                    dx.into_shape_with_order(IxDyn(self.vals[x.0].shape()))
                        .unwrap(),
                );
            }
            Step::Sigmoid(x) => {
                let y = &self.vals[i];
                let one = F::one();
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |d, &yv| *d = *d * yv * (one - yv));
                Self::acc(g, *x, dx);
            }
            Step::Relu(x) => {
                let z = F::zero();
                let mut dx = dy.clone();
                dx.zip_mut_with(&self.vals[x.0], |d, &xv| {
                    if xv <= z {
                        *d = z;
                    }
                });
                Self::acc(g, *x, dx);
            }
            Step::MeanAxisKeep(x, axis) => {
                let n = self.vals[x.0].shape()[*axis];
                let scale = F::one() / F::from_usize(n).unwrap();
                let dx = dy
                    .broadcast(IxDyn(self.vals[x.0].shape()))
                    .unwrap()
                    .mapv(|v| v * scale);
                Self::acc(g, *x, dx.as_standard_layout().to_owned());
            }
            Step::BroadcastAxis(x, axis, _n) => {
                let dx = dy
                    .sum_axis(Axis(*axis))
                    .insert_axis(Axis(*axis))
                    .as_standard_layout()
                    .to_owned();
                Self::acc(g, *x, dx);
            }
            Step::GatherSteps { x, idx, u } => {
                let xs = self.vals[x.0].shape().to_vec();
                let (bsz, n, _t, d) = (xs[0], xs[1], xs[2], xs[3]);
                let mut dx = ArrayD::<F>::zeros(IxDyn(&xs));
                for bi in 0..bsz {
                    for ni in 0..n {
                        let list = &idx[bi * n + ni];
                        for r in 0..*u {
                            let ti = list[r];
                            for di in 0..d {
                                dx[IxDyn(&[bi, ni, ti, di])] += dy[IxDyn(&[bi, ni, r, di])];
                            }
                        }
                    }
                }
                Self::acc(g, *x, dx);
            }
            Step::OverwriteSteps { base, rows, idx } => {
                let bs = self.vals[base.0].shape().to_vec();
                let rs = self.vals[rows.0].shape().to_vec();
                let (bsz, n, d) = (bs[0], bs[1], bs[3]);
                let u = rs[2];
                let mut dbase = dy.clone();
                let mut drows = ArrayD::<F>::zeros(IxDyn(&rs));
                for bi in 0..bsz {
                    for ni in 0..n {
                        let list = &idx[bi * n + ni];
                        for r in 0..u {
                            let ti = list[r];
                            for di in 0..d {
                                drows[IxDyn(&[bi, ni, r, di])] = dy[IxDyn(&[bi, ni, ti, di])];
                                dbase[IxDyn(&[bi, ni, ti, di])] = F::zero();
                            }
                        }
                    }
                }
                Self::acc(g, *base, dbase);
                Self::acc(g, *rows, drows);
            }
            Step::SliceAxis(x, axis, from, to) => {
                let mut dx = ArrayD::<F>::zeros(IxDyn(self.vals[x.0].shape()));
                dx.slice_axis_mut(Axis(*axis), Slice::from(*from..*to))
                    .assign(dy);
                Self::acc(g, *x, dx);
            }
            Step::ConcatAxis(a, b, axis) => {
                let na = self.vals[a.0].shape()[*axis];
                let ntot = dy.shape()[*axis];
                let da = dy
                    .slice_axis(Axis(*axis), Slice::from(0..na))
                    .as_standard_layout()
                    .to_owned();
                let db = dy
                    .slice_axis(Axis(*axis), Slice::from(na..ntot))
                    .as_standard_layout()
                    .to_owned();
                Self::acc(g, *a, da);
                Self::acc(g, *b, db);
            }
            Step::RotateLast(x, shift) => {
                let d = *dy.shape().last().unwrap();
                let l = dy.len() / d;
                let dy2 = as2(dy, l, d);
                let mut dx = ndarray::Array2::<F>::zeros((l, d));
                for c in 0..d {
                    // forward: y[., c] = x[., (c+shift) % d]
                    dx.column_mut((c + shift) % d).assign(&dy2.column(c));
                }
                Self::acc(
                    g,
                    *x,
                    dx.into_shape_with_order(IxDyn(self.vals[x.0].shape()))
                        .unwrap(),
                );
            }
            Step::BatchNorm {
                x,
                gamma,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let d = *xhat.shape().last().unwrap();
                let l = xhat.len() / d;
                let m = F::from_usize(l).unwrap();
                let dy2 = as2(dy, l, d);
                let xh2 = as2(xhat, l, d);
                let g1 = self.vals[gamma.0]
                    .view()
                    .into_shape_with_order(d)
                    .unwrap()
                    .to_owned();

                let mut dgamma = Array1::<F>::zeros(d);
                let mut sum_dy = Array1::<F>::zeros(d);
                for r in 0..l {
                    for c in 0..d {
                        dgamma[c] += dy2[(r, c)] * xh2[(r, c)];
                        sum_dy[c] += dy2[(r, c)];
                    }
                }
                let mut dx = ndarray::Array2::<F>::zeros((l, d));
                if *batch_stats {
                    for c in 0..d {
                        let coef = g1[c] * inv_std[c];
                        let mean_dy = sum_dy[c] / m;
                        let mean_dy_xhat = dgamma[c] / m;
                        for r in 0..l {
                            dx[(r, c)] =
                                coef * (dy2[(r, c)] - mean_dy - xh2[(r, c)] * mean_dy_xhat);
                        }
                    }
                } else {
                    for c in 0..d {
                        let coef = g1[c] * inv_std[c];
                        for r in 0..l {
                            dx[(r, c)] = coef * dy2[(r, c)];
                        }
                    }
                }
                Self::acc(
                    g,
                    *x,
                    dx.into_shape_with_order(IxDyn(self.vals[x.0].shape()))
                        .unwrap(),
                );
                Self::acc(
                    g,
                    *gamma,
                    dgamma
                        .into_shape_with_order(IxDyn(self.vals[gamma.0].shape()))
                        .unwrap(),
                );
            }
            Step::MaeLoss { pred, target } => {
                let m = F::from_usize(target.len()).unwrap();
                let scale = dy[IxDyn(&[0])] / m;
                let mut dp = ArrayD::<F>::zeros(IxDyn(self.vals[pred.0].shape()));
                for ((d, p), t) in dp
                    .iter_mut()
                    .zip(self.vals[pred.0].iter())
                    .zip(target.iter())
                {
                    let diff = *p - *t;
                    *d = if diff > F::zero() {
                        scale
                    } else if diff < F::zero() {
                        -scale
                    } else {
                        F::zero()
                    };
                }
                Self::acc(g, *pred, dp);
            }
            Step::MseLoss { pred, target } => {
                let m = F::from_usize(target.len()).unwrap();
                let two = F::from_f64(2.0).unwrap();
                let scale = dy[IxDyn(&[0])] * two / m;
                let mut dp = ArrayD::<F>::zeros(IxDyn(self.vals[pred.0].shape()));
                for ((d, p), t) in dp
                    .iter_mut()
                    .zip(self.vals[pred.0].iter())
                    .zip(target.iter())
                {
                    *d = scale * (*p - *t);
                }
                Self::acc(g, *pred, dp);
            }
        }
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    fn fill(shape: &[usize], salt: u64) -> ArrayD<f64> {
        let n: usize = shape.iter().product();
        let mut v = Vec::with_capacity(n);
        let mut s = salt.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        for _ in 0..n {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = ((s >> 11) as f64) / ((1u64 << 53) as f64);
            v.push(u * 2.0 - 1.0 + 0.013); // keep away from exact zero
        }
        ArrayD::from_shape_vec(IxDyn(shape), v).unwrap()
    }

    /// Central finite differences against the analytic backward pass.
    fn fd_check(
        inputs: &[ArrayD<f64>],
        build: impl Fn(&mut Tape<f64>, &[Vid]) -> Vid,
        tol: f64,
    ) {
        let eval = |xs: &[ArrayD<f64>]| -> (f64, Option<Vec<ArrayD<f64>>>) {
            let mut t = Tape::<f64>::new();
            let ids: Vec<Vid> = xs.iter().map(|x| t.leaf(x.clone())).collect();
            let root = build(&mut t, &ids);
            let loss = t.value(root)[IxDyn(&[0])];
            (loss, Some({
                let g = t.backward(root);
                ids.iter()
                    .map(|&id| {
                        g.of(id)
                            .cloned()
                            .unwrap_or_else(|| ArrayD::zeros(IxDyn(t.value(id).shape())))
                    })
                    .collect()
            }))
        };
        let (_, grads) = eval(inputs);
        let grads = grads.unwrap();
        let h = 1e-5;
        for (i, x) in inputs.iter().enumerate() {
            for flat in 0..x.len() {
                let mut plus = inputs.to_vec();
                let mut minus = inputs.to_vec();
                {
                    let p = plus[i].as_slice_mut().unwrap();
                    p[flat] += h;
                    let m = minus[i].as_slice_mut().unwrap();
                    m[flat] -= h;
                }
                let (fp, _) = eval(&plus);
                let (fm, _) = eval(&minus);
                let fd = (fp - fm) / (2.0 * h);
                let a = grads[i].as_slice().unwrap()[flat];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (a - fd).abs() / denom < tol,
                    "input {i} elem {flat}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    fn loss_of(t: &mut Tape<f64>, y: Vid) -> Vid {
        let target = Arc::new(fill(t.value(y).shape(), 99));
        t.mse_loss(y, target)
    }

    #[test]
    fn grad_elementwise_ops() {
        let a = fill(&[2, 3], 1);
        let b = fill(&[2, 3], 2);
        fd_check(&[a.clone(), b.clone()], |t, ids| {
            let s = t.add(ids[0], ids[1]);
            let d = t.sub(s, ids[1]);
            let m = t.mul(d, ids[1]);
            let n = t.neg(m);
            let sc = t.scale(n, 1.7);
            let sh = t.add_scalar(sc, 0.3);
            loss_of(t, sh)
        }, 1e-6);
    }

    #[test]
    fn grad_bias_and_scalar_ops() {
        let x = fill(&[2, 2, 3], 3);
        let b = fill(&[3], 4);
        let v = fill(&[4], 5);
        fd_check(&[x, b, v], |t, ids| {
            let y = t.add_bias(ids[0], ids[1]);
            let s = t.index(ids[2], 2);
            let y2 = t.mul_scalar(y, s);
            loss_of(t, y2)
        }, 1e-6);
    }

    #[test]
    fn grad_linear_last() {
        let x = fill(&[2, 3, 4], 6);
        let w = fill(&[4, 5], 7);
        fd_check(&[x, w], |t, ids| {
            let y = t.linear_last(ids[0], ids[1]);
            loss_of(t, y)
        }, 1e-6);
    }

    #[test]
    fn grad_conv_causal() {
        let x = fill(&[2, 2, 6, 3], 8);
        let w = fill(&[2, 3, 3], 9);
        let b = fill(&[3], 10);
        for dilation in [1usize, 2] {
            fd_check(&[x.clone(), w.clone(), b.clone()], move |t, ids| {
                let y = t.conv_causal(ids[0], ids[1], ids[2], dilation);
                loss_of(t, y)
            }, 1e-6);
        }
    }

    #[test]
    fn conv_causal_is_causal() {
        let x = fill(&[1, 1, 8, 2], 11);
        let w = fill(&[3, 2, 2], 12);
        let b = fill(&[2], 13);
        let mut t = Tape::<f64>::new();
        let (xi, wi, bi) = (t.leaf(x.clone()), t.leaf(w.clone()), t.leaf(b.clone()));
        let y = t.conv_causal(xi, wi, bi, 2);
        let base = t.value(y).clone();

        let mut x2 = x.clone();
        x2[IxDyn(&[0, 0, 5, 0])] += 1.0;
        let mut t2 = Tape::<f64>::new();
        let (xi2, wi2, bi2) = (t2.leaf(x2), t2.leaf(w), t2.leaf(b));
        let y2 = t2.conv_causal(xi2, wi2, bi2, 2);
        let pert = t2.value(y2).clone();
        for ti in 0..5 {
            for d in 0..2 {
                assert_eq!(base[IxDyn(&[0, 0, ti, d])], pert[IxDyn(&[0, 0, ti, d])]);
            }
        }
        assert_ne!(base[IxDyn(&[0, 0, 5, 0])], pert[IxDyn(&[0, 0, 5, 0])]);
    }

    #[test]
    fn grad_mix_nodes() {
        let support = Arc::new(arr2(&[[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 0.0, 0.0]]));
        let x = fill(&[2, 3, 4, 2], 14);
        fd_check(&[x], move |t, ids| {
            let y = t.mix_nodes(support.clone(), ids[0]);
            loss_of(t, y)
        }, 1e-6);
    }

    #[test]
    fn grad_bat_matmul_and_swap() {
        let a = fill(&[2, 2, 3, 4], 15);
        let b = fill(&[2, 2, 4, 2], 16);
        fd_check(&[a, b], |t, ids| {
            let y = t.bat_matmul(ids[0], ids[1]);
            let z = t.swap_axes(y, 1, 2);
            loss_of(t, z)
        }, 1e-6);
    }

    #[test]
    fn grad_softmax_sigmoid_relu() {
        let x = fill(&[3, 5], 17);
        fd_check(&[x], |t, ids| {
            let s = t.softmax_last(ids[0]);
            let g = t.sigmoid(s);
            let r = t.relu(g);
            loss_of(t, r)
        }, 1e-5);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = fill(&[4, 6], 18);
        let mut t = Tape::<f64>::new();
        let xi = t.leaf(x);
        let y = t.softmax_last(xi);
        let v = t.value(y);
        let v2 = v.view().into_shape_with_order((4, 6)).unwrap();
        for row in v2.rows() {
            let s: f64 = row.sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_mean_broadcast() {
        let x = fill(&[2, 3, 4, 2], 19);
        fd_check(&[x], |t, ids| {
            let m = t.mean_axis_keep(ids[0], 2);
            let b = t.broadcast_axis(m, 2, 4);
            loss_of(t, b)
        }, 1e-6);
    }

    #[test]
    fn grad_gather_overwrite() {
        let x = fill(&[2, 2, 5, 3], 20);
        let rows_idx: Arc<Vec<Vec<usize>>> =
            Arc::new(vec![vec![0, 3], vec![1, 4], vec![2, 3], vec![0, 1]]);
        let idx2 = rows_idx.clone();
        fd_check(&[x], move |t, ids| {
            let gathered = t.gather_steps(ids[0], idx2.clone(), 2);
            let mean = t.mean_axis_keep(ids[0], 2);
            let base = t.broadcast_axis(mean, 2, 5);
            let y = t.overwrite_steps(base, gathered, idx2.clone());
            loss_of(t, y)
        }, 1e-6);
    }

    #[test]
    fn grad_slice_concat_rotate() {
        let x = fill(&[2, 2, 3, 6], 21);
        fd_check(&[x], |t, ids| {
            let a = t.slice_axis(ids[0], 3, 0, 2);
            let b = t.slice_axis(ids[0], 3, 2, 6);
            let a2 = t.scale(a, 1.5);
            let c = t.concat_axis(a2, b, 3);
            let r = t.rotate_last(c, 2);
            loss_of(t, r)
        }, 1e-6);
    }

    #[test]
    fn rotate_is_cyclic_shift() {
        let x = ArrayD::from_shape_vec(IxDyn(&[1, 4]), vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let mut t = Tape::<f64>::new();
        let xi = t.leaf(x);
        let y = t.rotate_last(xi, 1);
        assert_eq!(
            t.value(y).as_slice().unwrap(),
            &[20.0, 30.0, 40.0, 10.0]
        );
    }

    #[test]
    fn grad_batch_norm_train() {
        let x = fill(&[3, 2, 2, 4], 22);
        let gamma = fill(&[4], 23);
        let beta = fill(&[4], 24);
        fd_check(&[x, gamma, beta], |t, ids| {
            let (y, _) = t.batch_norm(ids[0], ids[1], None, 1e-5);
            let y = t.add_bias(y, ids[2]);
            loss_of(t, y)
        }, 1e-5);
    }

    #[test]
    fn batch_norm_normalizes() {
        let x = fill(&[4, 3, 2, 5], 25);
        let mut t = Tape::<f64>::new();
        let xi = t.leaf(x);
        let ones = t.leaf(ArrayD::from_elem(IxDyn(&[5]), 1.0));
        let (y, stats) = t.batch_norm(xi, ones, None, 1e-9);
        let stats = stats.unwrap();
        assert_eq!(stats.mean.len(), 5);
        let v = t.value(y);
        let l = v.len() / 5;
        let v2 = v.view().into_shape_with_order((l, 5)).unwrap();
        for c in 0..5 {
            let col = v2.column(c);
            let mean: f64 = col.sum() / l as f64;
            let var: f64 = col.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / l as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn grad_batch_norm_eval_mode() {
        let x = fill(&[2, 2, 2, 3], 26);
        let gamma = fill(&[3], 27);
        let rm = arr1(&[0.1, -0.2, 0.3]);
        let rv = arr1(&[1.1, 0.9, 1.4]);
        fd_check(&[x, gamma], move |t, ids| {
            let (y, stats) = t.batch_norm(ids[0], ids[1], Some((&rm, &rv)), 1e-5);
            assert!(stats.is_none());
            loss_of(t, y)
        }, 1e-6);
    }

    #[test]
    fn grad_losses() {
        let p = fill(&[2, 3], 28);
        let target = Arc::new(fill(&[2, 3], 29));
        let t2 = target.clone();
        fd_check(&[p.clone()], move |t, ids| t.mae_loss(ids[0], t2.clone()), 1e-5);
        fd_check(&[p], move |t, ids| t.mse_loss(ids[0], target.clone()), 1e-6);
    }

    #[test]
    fn mae_loss_value() {
        let p = ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0, 2.0]).unwrap();
        let y = Arc::new(ArrayD::from_shape_vec(IxDyn(&[2]), vec![2.0, 4.0]).unwrap());
        let mut t = Tape::<f64>::new();
        let pi = t.leaf(p);
        let l = t.mae_loss(pi, y);
        assert_eq!(t.value(l)[IxDyn(&[0])], 1.5);
    }

    #[test]
    fn reused_node_accumulates_gradient() {
        // y = x*x + x, dy/dx = 2x + 1
        let x = ArrayD::from_elem(IxDyn(&[1]), 3.0);
        let mut t = Tape::<f64>::new();
        let xi = t.leaf(x);
        let sq = t.mul(xi, xi);
        let y = t.add(sq, xi);
        let g = t.backward(y);
        assert_eq!(g.of(xi).unwrap()[IxDyn(&[0])], 7.0);
    }
}
