//! Bilinear resampling with half-pixel centers, plus its adjoint.

/// Precomputed source taps for one output axis.
#[derive(Debug, Clone)]
pub struct ResizePlan {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    rows: Vec<(usize, usize, f64)>,
    cols: Vec<(usize, usize, f64)>,
}

fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let mut src = (o as f64 + 0.5) * scale - 0.5;
            if src < 0.0 {
                src = 0.0;
            }
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

impl ResizePlan {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        assert!(in_h > 0 && in_w > 0 && out_h > 0 && out_w > 0, "resize: empty extent");
        ResizePlan {
            in_h,
            in_w,
            out_h,
            out_w,
            rows: axis_taps(in_h, out_h),
            cols: axis_taps(in_w, out_w),
        }
    }
}

/// Resamples `channels` planes of `in_h*in_w` values laid out contiguously.
pub fn bilinear_resize_raw(x: &[f64], channels: usize, plan: &ResizePlan) -> Vec<f64> {
    let (ih, iw, oh, ow) = (plan.in_h, plan.in_w, plan.out_h, plan.out_w);
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        let src = &x[c * ih * iw..(c + 1) * ih * iw];
        let dst = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for (oy, &(y0, y1, wy)) in plan.rows.iter().enumerate() {
            let r0 = &src[y0 * iw..y0 * iw + iw];
            let r1 = &src[y1 * iw..y1 * iw + iw];
            let drow = &mut dst[oy * ow..(oy + 1) * ow];
            for (ox, &(x0, x1, wx)) in plan.cols.iter().enumerate() {
                let top = r0[x0] * (1.0 - wx) + r0[x1] * wx;
                let bot = r1[x0] * (1.0 - wx) + r1[x1] * wx;
                drow[ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_resize_raw`]: scatters output gradients back to the source grid.
pub fn bilinear_resize_backward(g: &[f64], channels: usize, plan: &ResizePlan) -> Vec<f64> {
    let (ih, iw, oh, ow) = (plan.in_h, plan.in_w, plan.out_h, plan.out_w);
    let mut dx = vec![0.0; channels * ih * iw];
    for c in 0..channels {
        let src = &g[c * oh * ow..(c + 1) * oh * ow];
        let dst = &mut dx[c * ih * iw..(c + 1) * ih * iw];
        for (oy, &(y0, y1, wy)) in plan.rows.iter().enumerate() {
            let grow = &src[oy * ow..(oy + 1) * ow];
            for (ox, &(x0, x1, wx)) in plan.cols.iter().enumerate() {
                let gv = grow[ox];
                dst[y0 * iw + x0] += gv * (1.0 - wy) * (1.0 - wx);
                dst[y0 * iw + x1] += gv * (1.0 - wy) * wx;
                dst[y1 * iw + x0] += gv * wy * (1.0 - wx);
                dst[y1 * iw + x1] += gv * wy * wx;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_bitwise() {
        let plan = ResizePlan::new(3, 4, 3, 4);
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.37 - 1.0).collect();
        assert_eq!(bilinear_resize_raw(&x, 1, &plan), x);
    }

    #[test]
    fn constant_stays_constant_at_any_size() {
        let plan = ResizePlan::new(5, 5, 2, 9);
        let x = vec![0.42; 25];
        let out = bilinear_resize_raw(&x, 1, &plan);
        assert!(out.iter().all(|&v| (v - 0.42).abs() < 1e-15));
    }

    #[test]
    fn upsample_midpoint_interpolates() {
        // 1x2 -> 1x4 with half-pixel centers: [a, a, (a+b)/2 interp points..]
        let plan = ResizePlan::new(1, 2, 1, 4);
        let out = bilinear_resize_raw(&[0.0, 1.0], 1, &plan);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[3], 1.0);
        assert!((out[1] - 0.25).abs() < 1e-15);
        assert!((out[2] - 0.75).abs() < 1e-15);
    }
}
