//! Reverse-mode automatic differentiation over dynamic-rank `f64` arrays.
//!
//! A [`Graph`] is a tape: every operation records its output value and a
//! one-shot backward closure. Calling [`Graph::backward`] walks the tape in
//! reverse, accumulating gradients into leaves. Everything is `f64` so that
//! finite-difference gradient checks hold at tight tolerances, and every
//! operation is sequential and order-stable so that repeated runs are
//! bit-identical.

mod conv;
mod resize;

pub use conv::{col2im, conv2d_raw, conv_out_dim, im2col};
pub use resize::{bilinear_resize_raw, bilinear_resize_backward, ResizePlan};

use ndarray::{ArrayD, IxDyn};
use std::rc::Rc;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

type BackFn = Box<dyn FnOnce(&ArrayD<f64>, &mut [Option<ArrayD<f64>>])>;

struct Node {
    value: Rc<ArrayD<f64>>,
    back: Option<BackFn>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }
}

/// Computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn accumulate(grads: &mut [Option<ArrayD<f64>>], id: usize, delta: ArrayD<f64>) {
    match &mut grads[id] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

fn standard(a: ArrayD<f64>) -> ArrayD<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().to_owned()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: ArrayD<f64>, back: Option<BackFn>, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value: Rc::new(standard(value)),
            back: if needs_grad { back } else { None },
            needs_grad,
        });
        Var { id }
    }

    /// Leaf that participates in gradient computation.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, None, true)
    }

    /// Leaf excluded from gradient computation.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, None, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), value))
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.id].value
    }

    fn rc_value(&self, v: Var) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.nodes[v.id].value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.id].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.id].needs_grad
    }

    /// Value of a rank-0 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        *self.nodes[v.id]
            .value
            .first()
            .expect("scalar_value on empty tensor")
    }

    /// Re-enters a node's value as a constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.id].value.as_ref().clone();
        self.constant(value)
    }

    /// Runs the tape backwards from a rank-0 loss node.
    ///
    /// Intermediate gradients are dropped as soon as they have been consumed;
    /// only gradients of leaves (and of nodes created before any consumer)
    /// remain readable afterwards.
    pub fn backward(&mut self, loss: Var) -> Grads {
        assert!(
            self.nodes[loss.id].value.ndim() == 0,
            "backward expects a rank-0 loss"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.id] = Some(ArrayD::from_elem(IxDyn(&[]), 1.0));
        for id in (0..=loss.id).rev() {
            if grads[id].is_none() {
                continue;
            }
            if let Some(back) = self.nodes[id].back.take() {
                let g = grads[id].take().expect("gradient present");
                back(&g, &mut grads);
            }
        }
        Grads { grads }
    }

    // ---- elementwise arithmetic -------------------------------------------

    fn assert_same_shape(&self, a: Var, b: Var, context: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{context}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "add");
        let value = self.value(a) + self.value(b);
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        let back: BackFn = Box::new(move |g, grads| {
            if na {
                accumulate(grads, a.id, g.clone());
            }
            if nb {
                accumulate(grads, b.id, g.clone());
            }
        });
        self.push(value, Some(back), na || nb)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "sub");
        let value = self.value(a) - self.value(b);
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        let back: BackFn = Box::new(move |g, grads| {
            if na {
                accumulate(grads, a.id, g.clone());
            }
            if nb {
                accumulate(grads, b.id, g.mapv(|x| -x));
            }
        });
        self.push(value, Some(back), na || nb)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "mul");
        let value = self.value(a) * self.value(b);
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        let (va, vb) = (self.rc_value(a), self.rc_value(b));
        let back: BackFn = Box::new(move |g, grads| {
            if na {
                accumulate(grads, a.id, g * vb.as_ref());
            }
            if nb {
                accumulate(grads, b.id, g * va.as_ref());
            }
        });
        self.push(value, Some(back), na || nb)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "div");
        let value = self.value(a) / self.value(b);
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        let (va, vb) = (self.rc_value(a), self.rc_value(b));
        let back: BackFn = Box::new(move |g, grads| {
            if na {
                accumulate(grads, a.id, g / vb.as_ref());
            }
            if nb {
                let d = g * va.as_ref() / (vb.as_ref() * vb.as_ref());
                accumulate(grads, b.id, d.mapv(|x| -x));
            }
        });
        self.push(value, Some(back), na || nb)
    }

    /// Elementwise `k*x + c`.
    pub fn affine(&mut self, x: Var, k: f64, c: f64) -> Var {
        let value = self.value(x).mapv(|v| k * v + c);
        let n = self.needs_grad(x);
        let back: BackFn = Box::new(move |g, grads| {
            accumulate(grads, x.id, g.mapv(|v| k * v));
        });
        self.push(value, Some(back), n)
    }

    /// Broadcast-multiply a `[C,H,W]` tensor by an `[H,W]` map.
    pub fn bmul_map(&mut self, a: Var, map: Var) -> Var {
        let ash = self.shape(a).to_vec();
        let msh = self.shape(map).to_vec();
        assert_eq!(ash.len(), 3, "bmul_map: tensor must be rank 3");
        assert_eq!(&ash[1..], &msh[..], "bmul_map: map dims must match tensor");
        let (c, h, w) = (ash[0], ash[1], ash[2]);
        let hw = h * w;
        let va = self.rc_value(a);
        let vm = self.rc_value(map);
        let mut out = vec![0.0; c * hw];
        {
            let sa = va.as_slice().unwrap();
            let sm = vm.as_slice().unwrap();
            for ch in 0..c {
                let base = ch * hw;
                for i in 0..hw {
                    out[base + i] = sa[base + i] * sm[i];
                }
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&ash), out).unwrap();
        let (na, nm) = (self.needs_grad(a), self.needs_grad(map));
        let back: BackFn = Box::new(move |g, grads| {
            let sg = g.as_slice().unwrap();
            let sa = va.as_slice().unwrap();
            let sm = vm.as_slice().unwrap();
            if na {
                let mut da = vec![0.0; c * hw];
                for ch in 0..c {
                    let base = ch * hw;
                    for i in 0..hw {
                        da[base + i] = sg[base + i] * sm[i];
                    }
                }
                accumulate(grads, a.id, ArrayD::from_shape_vec(IxDyn(&[c, h, w]), da).unwrap());
            }
            if nm {
                let mut dm = vec![0.0; hw];
                for ch in 0..c {
                    let base = ch * hw;
                    for i in 0..hw {
                        dm[i] += sg[base + i] * sa[base + i];
                    }
                }
                accumulate(grads, map.id, ArrayD::from_shape_vec(IxDyn(&[h, w]), dm).unwrap());
            }
        });
        self.push(value, Some(back), na || nm)
    }

    /// Multiply a tensor by a rank-0 scalar node.
    pub fn smul(&mut self, s: Var, a: Var) -> Var {
        assert_eq!(self.shape(s).len(), 0, "smul: first operand must be rank 0");
        let sv = self.scalar_value(s);
        let value = self.value(a).mapv(|v| sv * v);
        let (ns, na) = (self.needs_grad(s), self.needs_grad(a));
        let va = self.rc_value(a);
        let back: BackFn = Box::new(move |g, grads| {
            if na {
                accumulate(grads, a.id, g.mapv(|v| sv * v));
            }
            if ns {
                let dot: f64 = g
                    .as_slice()
                    .unwrap()
                    .iter()
                    .zip(va.as_slice().unwrap())
                    .map(|(x, y)| x * y)
                    .sum();
                accumulate(grads, s.id, ArrayD::from_elem(IxDyn(&[]), dot));
            }
        });
        self.push(value, Some(back), ns || na)
    }

    // ---- nonlinearities ---------------------------------------------------

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let n = self.needs_grad(x);
        let out = Rc::new(standard(value));
        let vo = Rc::clone(&out);
        let back: BackFn = Box::new(move |g, grads| {
            accumulate(grads, x.id, g * &vo.mapv(|y| y * (1.0 - y)));
        });
        let id = self.nodes.len();
        self.nodes.push(Node {
            value: out,
            back: if n { Some(back) } else { None },
            needs_grad: n,
        });
        Var { id }
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::tanh);
        let n = self.needs_grad(x);
        let out = Rc::new(standard(value));
        let vo = Rc::clone(&out);
        let back: BackFn = Box::new(move |g, grads| {
            accumulate(grads, x.id, g * &vo.mapv(|y| 1.0 - y * y));
        });
        let id = self.nodes.len();
        self.nodes.push(Node {
            value: out,
            back: if n { Some(back) } else { None },
            needs_grad: n,
        });
        Var { id }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let n = self.needs_grad(x);
        let vx = self.rc_value(x);
        let back: BackFn = Box::new(move |g, grads| {
            let mask = vx.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            accumulate(grads, x.id, g * &mask);
        });
        self.push(value, Some(back), n)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::ln);
        let n = self.needs_grad(x);
        let vx = self.rc_value(x);
        let back: BackFn = Box::new(move |g, grads| {
            accumulate(grads, x.id, g / vx.as_ref());
        });
        self.push(value, Some(back), n)
    }

    /// Elementwise clamp; gradient is passed through only inside the window.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).mapv(|v| v.clamp(lo, hi));
        let n = self.needs_grad(x);
        let vx = self.rc_value(x);
        let back: BackFn = Box::new(move |g, grads| {
            let mask = vx.mapv(|v| if v >= lo && v <= hi { 1.0 } else { 0.0 });
            accumulate(grads, x.id, g * &mask);
        });
        self.push(value, Some(back), n)
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).iter().sum();
        let value = ArrayD::from_elem(IxDyn(&[]), total);
        let n = self.needs_grad(x);
        let shape = self.shape(x).to_vec();
        let back: BackFn = Box::new(move |g, grads| {
            let gv = *g.first().unwrap();
            accumulate(grads, x.id, ArrayD::from_elem(IxDyn(&shape), gv));
        });
        self.push(value, Some(back), n)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let len = self.value(x).len() as f64;
        let s = self.sum(x);
        self.affine(s, 1.0 / len, 0.0)
    }

    // ---- shape plumbing ----------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let new_len: usize = shape.iter().product();
        assert_eq!(new_len, self.value(x).len(), "reshape: length mismatch");
        let value = self
            .value(x)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape of standard-layout tensor");
        let n = self.needs_grad(x);
        let old_shape = self.shape(x).to_vec();
        let back: BackFn = Box::new(move |g, grads| {
            let d = g
                .clone()
                .into_shape_with_order(IxDyn(&old_shape))
                .expect("reshape gradient");
            accumulate(grads, x.id, d);
        });
        self.push(value, Some(back), n)
    }

    /// Concatenate rank-3 tensors along the channel axis.
    pub fn concat_c(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat_c: empty input list");
        let (h, w) = {
            let s = self.shape(xs[0]);
            assert_eq!(s.len(), 3, "concat_c: rank-3 tensors expected");
            (s[1], s[2])
        };
        let mut channels = Vec::with_capacity(xs.len());
        let mut total_c = 0;
        for &x in xs {
            let s = self.shape(x);
            assert_eq!((s[1], s[2]), (h, w), "concat_c: spatial dims differ");
            channels.push(s[0]);
            total_c += s[0];
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(total_c * hw);
        for &x in xs {
            out.extend_from_slice(self.value(x).as_slice().unwrap());
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[total_c, h, w]), out).unwrap();
        let needs: Vec<bool> = xs.iter().map(|&x| self.needs_grad(x)).collect();
        let any = needs.iter().any(|&b| b);
        let ids: Vec<usize> = xs.iter().map(|x| x.id).collect();
        let back: BackFn = Box::new(move |g, grads| {
            let sg = g.as_slice().unwrap();
            let mut offset = 0;
            for (i, &c) in channels.iter().enumerate() {
                let len = c * hw;
                if needs[i] {
                    let piece = sg[offset..offset + len].to_vec();
                    accumulate(
                        grads,
                        ids[i],
                        ArrayD::from_shape_vec(IxDyn(&[c, h, w]), piece).unwrap(),
                    );
                }
                offset += len;
            }
        });
        self.push(value, Some(back), any)
    }

    /// Channel slice `[start, start+len)` of a rank-3 tensor.
    pub fn slice_c(&mut self, x: Var, start: usize, len: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "slice_c: rank-3 tensor expected");
        assert!(start + len <= s[0], "slice_c: out of range");
        let (h, w) = (s[1], s[2]);
        let hw = h * w;
        let src = self.value(x).as_slice().unwrap();
        let value = ArrayD::from_shape_vec(
            IxDyn(&[len, h, w]),
            src[start * hw..(start + len) * hw].to_vec(),
        )
        .unwrap();
        let n = self.needs_grad(x);
        let full_c = s[0];
        let back: BackFn = Box::new(move |g, grads| {
            let mut d = vec![0.0; full_c * hw];
            d[start * hw..(start + len) * hw].copy_from_slice(g.as_slice().unwrap());
            accumulate(
                grads,
                x.id,
                ArrayD::from_shape_vec(IxDyn(&[full_c, h, w]), d).unwrap(),
            );
        });
        self.push(value, Some(back), n)
    }

    // ---- structured layers --------------------------------------------------

    /// 2-D convolution of `x: [Cin,H,W]` with `w: [Cout,Cin,kh,kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 3, "conv2d: input must be rank 3");
        assert_eq!(ws.len(), 4, "conv2d: weight must be rank 4");
        assert_eq!(xs[0], ws[1], "conv2d: channel mismatch");
        let vx = self.rc_value(x);
        let vw = self.rc_value(w);
        let vb = b.map(|bv| self.rc_value(bv));
        let value = conv2d_raw(&vx, &vw, vb.as_deref(), stride, pad, dilation);
        let nx = self.needs_grad(x);
        let nw = self.needs_grad(w);
        let nb = b.map(|bv| self.needs_grad(bv)).unwrap_or(false);
        let back: BackFn = Box::new(move |g, grads| {
            let (dx, dw, db) =
                conv::conv2d_backward(g, &vx, &vw, stride, pad, dilation, nx, nw, nb);
            if let Some(dx) = dx {
                accumulate(grads, x.id, dx);
            }
            if let Some(dw) = dw {
                accumulate(grads, w.id, dw);
            }
            if let (Some(db), Some(bv)) = (db, b) {
                accumulate(grads, bv.id, db);
            }
        });
        self.push(value, Some(back), nx || nw || nb)
    }

    /// Per-channel normalization over the spatial extent of a `[C,H,W]`
    /// tensor (batch of one), with learnable scale and shift.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "batch_norm: input must be rank 3");
        let c = xs[0];
        assert_eq!(self.shape(gamma), &[c], "batch_norm: gamma shape");
        assert_eq!(self.shape(beta), &[c], "batch_norm: beta shape");
        let hw = xs[1] * xs[2];
        let vx = self.rc_value(x);
        let vg = self.rc_value(gamma);
        let sx = vx.as_slice().unwrap();
        let sg = vg.as_slice().unwrap();
        let sb = self.value(beta).as_slice().unwrap().to_vec();

        let mut xhat = vec![0.0; c * hw];
        let mut inv_std = vec![0.0; c];
        let mut out = vec![0.0; c * hw];
        for ch in 0..c {
            let base = ch * hw;
            let seg = &sx[base..base + hw];
            let mu = seg.iter().sum::<f64>() / hw as f64;
            let var = seg.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / hw as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[ch] = istd;
            for i in 0..hw {
                let xh = (seg[i] - mu) * istd;
                xhat[base + i] = xh;
                out[base + i] = sg[ch] * xh + sb[ch];
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&xs), out).unwrap();
        let nx = self.needs_grad(x);
        let ng = self.needs_grad(gamma);
        let nb = self.needs_grad(beta);
        let xhat = Rc::new(xhat);
        let back: BackFn = Box::new(move |g, grads| {
            let sgr = g.as_slice().unwrap();
            let gvals = vg.as_slice().unwrap();
            if nb {
                let mut db = vec![0.0; c];
                for ch in 0..c {
                    db[ch] = sgr[ch * hw..(ch + 1) * hw].iter().sum();
                }
                accumulate(grads, beta.id, ArrayD::from_shape_vec(IxDyn(&[c]), db).unwrap());
            }
            if ng {
                let mut dg = vec![0.0; c];
                for ch in 0..c {
                    let base = ch * hw;
                    dg[ch] = (0..hw).map(|i| sgr[base + i] * xhat[base + i]).sum();
                }
                accumulate(grads, gamma.id, ArrayD::from_shape_vec(IxDyn(&[c]), dg).unwrap());
            }
            if nx {
                let mut dx = vec![0.0; c * hw];
                let n = hw as f64;
                for ch in 0..c {
                    let base = ch * hw;
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for i in 0..hw {
                        let dxh = sgr[base + i] * gvals[ch];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat[base + i];
                    }
                    let k = inv_std[ch] / n;
                    for i in 0..hw {
                        let dxh = sgr[base + i] * gvals[ch];
                        dx[base + i] =
                            k * (n * dxh - sum_dxhat - xhat[base + i] * sum_dxhat_xhat);
                    }
                }
                accumulate(
                    grads,
                    x.id,
                    ArrayD::from_shape_vec(IxDyn(&[c, xs[1], xs[2]]), dx).unwrap(),
                );
            }
        });
        self.push(value, Some(back), nx || ng || nb)
    }

    /// Bilinear resize of a rank-2 map or rank-3 tensor to `(h, w)`.
    pub fn resize_bilinear(&mut self, x: Var, h: usize, w: usize) -> Var {
        let xs = self.shape(x).to_vec();
        assert!(
            xs.len() == 2 || xs.len() == 3,
            "resize_bilinear: rank 2 or 3 expected"
        );
        let (c, ih, iw) = if xs.len() == 3 {
            (xs[0], xs[1], xs[2])
        } else {
            (1, xs[0], xs[1])
        };
        let plan = ResizePlan::new(ih, iw, h, w);
        let vx = self.rc_value(x);
        let out = bilinear_resize_raw(vx.as_slice().unwrap(), c, &plan);
        let out_shape: Vec<usize> = if xs.len() == 3 {
            vec![c, h, w]
        } else {
            vec![h, w]
        };
        let value = ArrayD::from_shape_vec(IxDyn(&out_shape), out).unwrap();
        let n = self.needs_grad(x);
        let back: BackFn = Box::new(move |g, grads| {
            let dx = bilinear_resize_backward(g.as_slice().unwrap(), c, &plan);
            accumulate(grads, x.id, ArrayD::from_shape_vec(IxDyn(&xs), dx).unwrap());
        });
        self.push(value, Some(back), n)
    }
}
