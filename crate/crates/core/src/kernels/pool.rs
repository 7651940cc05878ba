use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
    /// Round the output extent up, so a partial window at the border still
    /// produces an output.
    pub ceil_mode: bool,
}

impl PoolGeometry {
    pub fn new(window: usize, stride: usize) -> Self {
        PoolGeometry {
            window,
            stride,
            padding: 0,
            ceil_mode: false,
        }
    }

    pub fn output_len(&self, input: usize) -> Option<usize> {
        if self.window == 0 || self.stride == 0 {
            return None;
        }
        let padded = input + 2 * self.padding;
        if padded < self.window {
            return None;
        }
        let span = padded - self.window;
        let mut out = if self.ceil_mode {
            span.div_ceil(self.stride) + 1
        } else {
            span / self.stride + 1
        };
        // the last window has to start inside the input or left padding
        if self.ceil_mode && (out - 1) * self.stride >= input + self.padding {
            out -= 1;
        }
        Some(out)
    }
}

/// Max-pooling over each `window × window` patch.
///
/// Returns the pooled tensor and, for each output element, the flat index of
/// the input element it came from. Ties resolve to the lowest flat index.
pub fn maxpool2d(input: &Tensor, g: PoolGeometry) -> Result<(Tensor, Vec<usize>)> {
    const OP: &str = "maxpool2d";
    let [n, c, h, w] = input.dims4(OP)?;
    if g.window == 0 || g.stride == 0 {
        return Err(Error::invalid(OP, "window and stride must be positive"));
    }
    let too_big = || {
        Error::invalid(
            OP,
            format!(
                "window {} larger than padded input {}x{}",
                g.window,
                h + 2 * g.padding,
                w + 2 * g.padding
            ),
        )
    };
    let oh = g.output_len(h).ok_or_else(too_big)?;
    let ow = g.output_len(w).ok_or_else(too_big)?;
    let (s, p) = (g.stride as isize, g.padding as isize);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    let src = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let y0 = oy as isize * s - p;
            let ys = y0.max(0) as usize..((y0 + g.window as isize).min(h as isize)) as usize;
            for ox in 0..ow {
                let x0 = ox as isize * s - p;
                let xs = x0.max(0) as usize..((x0 + g.window as isize).min(w as isize)) as usize;
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for y in ys.clone() {
                    for x in xs.clone() {
                        let i = base + y * w + x;
                        if src[i] > best || best_i == usize::MAX {
                            best = src[i];
                            best_i = i;
                        }
                    }
                }
                if best_i == usize::MAX {
                    return Err(too_big());
                }
                out.push(best);
                idx.push(best_i);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, idx))
}

/// Routes `grad_out` back to the argmax positions recorded by [`maxpool2d`].
pub fn maxpool2d_backward(input_shape: &[usize], indices: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if indices.len() != grad_out.len() {
        return Err(Error::shape(
            "maxpool2d_backward",
            "grad_out length",
            indices.len(),
            grad_out.len(),
        ));
    }
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&i, &v) in indices.iter().zip(grad_out.data()) {
        gd[i] += v;
    }
    Ok(g)
}
