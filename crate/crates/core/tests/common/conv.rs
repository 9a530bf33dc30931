use polypseg::tensor::{effective_field_of_view, ConvSpec, Shape, Tensor};

/// Direct sum over `(ci, i, j)` in that order, out-of-range taps skipped,
/// bias added last.
pub fn naive(x: &Tensor, w: &Tensor, b: Option<&[f32]>, spec: &ConvSpec) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let (oh, ow) = spec.output_size(xs.h, xs.w).unwrap();
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, oh, ow));
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ci in 0..xs.c {
                        for i in 0..ws.h {
                            for j in 0..ws.w {
                                let iy = (oy * spec.stride + i * spec.dilation) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + j * spec.dilation) as isize - spec.padding as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += w.at(co, ci, i, j) * x.at(n, ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    if let Some(b) = b {
                        acc += b[co];
                    }
                    let k = out.index(n, co, oy, ox);
                    out.data_mut()[k] = acc;
                }
            }
        }
    }
    out
}

/// The kernel with `r - 1` zeros between neighbouring taps.
pub fn inflate(w: &Tensor, r: usize) -> Tensor {
    let s = w.shape();
    let (kh, kw) = (effective_field_of_view(s.h, r), effective_field_of_view(s.w, r));
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, kh, kw));
    for o in 0..s.n {
        for c in 0..s.c {
            for i in 0..s.h {
                for j in 0..s.w {
                    let k = out.index(o, c, i * r, j * r);
                    out.data_mut()[k] = w.at(o, c, i, j);
                }
            }
        }
    }
    out
}
