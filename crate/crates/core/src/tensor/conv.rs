//! im2col-based 2-D convolution kernels shared by the tape op and its backward pass.

use ndarray::{Array2, ArrayD, IxDyn};

/// Output extent of a convolution along one axis.
pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> usize {
    let span = dilation * (k - 1) + 1;
    assert!(
        input + 2 * pad >= span,
        "conv2d: kernel span {span} exceeds padded input {input}+2*{pad}"
    );
    (input + 2 * pad - span) / stride + 1
}

/// Unfolds `x: [Cin,H,W]` into a `[Cin*kh*kw, Hout*Wout]` matrix.
pub fn im2col(
    x: &ArrayD<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
) -> Array2<f64> {
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hout = conv_out_dim(h, kh, stride, pad, dilation);
    let wout = conv_out_dim(w, kw, stride, pad, dilation);
    let sx = x.as_slice().expect("im2col: standard layout input");
    let mut col = Array2::<f64>::zeros((cin * kh * kw, hout * wout));
    let scol = col.as_slice_mut().unwrap();
    for c in 0..cin {
        let xc = &sx[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut scol[row * hout * wout..(row + 1) * hout * wout];
                for oy in 0..hout {
                    let iy = (oy * stride + ki * dilation) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &xc[iy as usize * w..(iy as usize + 1) * w];
                    let out_row = &mut dst[oy * wout..(oy + 1) * wout];
                    for ox in 0..wout {
                        let ix = (ox * stride + kj * dilation) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            out_row[ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Folds a `[Cin*kh*kw, Hout*Wout]` matrix back onto `[Cin,H,W]`, summing overlaps.
pub fn col2im(
    col: &Array2<f64>,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
) -> ArrayD<f64> {
    let hout = conv_out_dim(h, kh, stride, pad, dilation);
    let wout = conv_out_dim(w, kw, stride, pad, dilation);
    let scol = col.as_slice().expect("col2im: standard layout input");
    let mut out = vec![0.0; cin * h * w];
    for c in 0..cin {
        let xc = &mut out[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &scol[row * hout * wout..(row + 1) * hout * wout];
                for oy in 0..hout {
                    let iy = (oy * stride + ki * dilation) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut xc[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oy * wout..(oy + 1) * wout];
                    for ox in 0..wout {
                        let ix = (ox * stride + kj * dilation) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src_row[ox];
                        }
                    }
                }
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[cin, h, w]), out).unwrap()
}

/// Forward convolution. `x: [Cin,H,W]`, `w: [Cout,Cin,kh,kw]`, optional bias `[Cout]`.
pub fn conv2d_raw(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    b: Option<&ArrayD<f64>>,
    stride: usize,
    pad: usize,
    dilation: usize,
) -> ArrayD<f64> {
    let (cout, cin, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (h, wid) = (x.shape()[1], x.shape()[2]);
    let hout = conv_out_dim(h, kh, stride, pad, dilation);
    let wout = conv_out_dim(wid, kw, stride, pad, dilation);
    let col = im2col(x, kh, kw, stride, pad, dilation);
    let wmat = w
        .view()
        .into_shape_with_order((cout, cin * kh * kw))
        .expect("conv2d: weight reshape");
    let mut out = wmat.dot(&col);
    if let Some(bias) = b {
        let sb = bias.as_slice().unwrap();
        for (c, mut row) in out.rows_mut().into_iter().enumerate() {
            row += sb[c];
        }
    }
    out.into_shape_with_order(IxDyn(&[cout, hout, wout]))
        .unwrap()
}

/// Backward convolution: returns the requested gradients among `(dx, dw, db)`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    g: &ArrayD<f64>,
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    stride: usize,
    pad: usize,
    dilation: usize,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> (Option<ArrayD<f64>>, Option<ArrayD<f64>>, Option<ArrayD<f64>>) {
    let (cout, cin, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (h, wid) = (x.shape()[1], x.shape()[2]);
    let (hout, wout) = (g.shape()[1], g.shape()[2]);
    let gmat = g
        .view()
        .into_shape_with_order((cout, hout * wout))
        .expect("conv2d backward: grad reshape");

    let db = if need_b {
        let mut db = vec![0.0; cout];
        for (c, row) in gmat.rows().into_iter().enumerate() {
            db[c] = row.sum();
        }
        Some(ArrayD::from_shape_vec(IxDyn(&[cout]), db).unwrap())
    } else {
        None
    };

    let dw = if need_w {
        let col = im2col(x, kh, kw, stride, pad, dilation);
        let dwmat = gmat.dot(&col.t());
        Some(
            dwmat
                .into_shape_with_order(IxDyn(&[cout, cin, kh, kw]))
                .unwrap(),
        )
    } else {
        None
    };

    let dx = if need_x {
        let wmat = w
            .view()
            .into_shape_with_order((cout, cin * kh * kw))
            .unwrap();
        let dcol = wmat.t().dot(&gmat);
        Some(col2im(&dcol, cin, h, wid, kh, kw, stride, pad, dilation))
    } else {
        None
    };

    (dx, dw, db)
}
