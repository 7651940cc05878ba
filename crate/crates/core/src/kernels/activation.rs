use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Added to the squared channel norm before the square root; keeps the
/// normalization differentiable at the origin.
pub const L2_NORM_EPS: f64 = 1e-20;

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient of [`relu`] given its output; zero at and below the kink.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if !output.same_shape(grad_out) {
        return Err(Error::Mismatch(format!(
            "relu_backward: shapes {:?} and {:?} differ",
            output.shape(),
            grad_out.shape()
        )));
    }
    let mut g = grad_out.clone();
    g.data_mut().iter_mut().zip(output.data()).for_each(|(g, &y)| {
        if y <= 0.0 {
            *g = 0.0
        }
    });
    Ok(g)
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::invalid(
            "softmax",
            format!("axis {axis} out of range for rank {}", shape.len()),
        ));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Numerically stable softmax along `axis`.
pub fn softmax(input: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(input.shape(), axis)?;
    let mut out = input.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| d[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (d[at(j)] - max).exp();
                d[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                d[at(j)] /= total;
            }
        }
    }
    Ok(out)
}

/// Gradient of [`softmax`] given its output `y`: `y ⊙ (g − Σ g·y)`.
pub fn softmax_backward(output: &Tensor, grad_out: &Tensor, axis: usize) -> Result<Tensor> {
    if !output.same_shape(grad_out) {
        return Err(Error::Mismatch("softmax_backward: shape mismatch".into()));
    }
    let (outer, len, inner) = axis_split(output.shape(), axis)?;
    let (y, g) = (output.data(), grad_out.data());
    let mut gx = Tensor::zeros(output.shape());
    let gd = gx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
            for j in 0..len {
                gd[at(j)] = y[at(j)] * (g[at(j)] - dot);
            }
        }
    }
    Ok(gx)
}

fn check_scale(input: &Tensor, scale: &Tensor) -> Result<[usize; 4]> {
    let dims = input.dims4("l2_normalize_scale")?;
    if scale.len() != dims[1] {
        return Err(Error::shape("l2_normalize_scale", "scale length", dims[1], scale.len()));
    }
    Ok(dims)
}

/// Normalizes every spatial position's channel vector to unit L2 norm, then
/// multiplies channel `c` by `scale[c]`.
pub fn l2_normalize_scale(input: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = check_scale(input, scale)?;
    let hw = h * w;
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let y = out.data_mut();
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let sq: f64 = (0..c).map(|ch| x[base + ch * hw + p].powi(2)).sum();
            let norm = (sq + L2_NORM_EPS).sqrt();
            for ch in 0..c {
                let i = base + ch * hw + p;
                y[i] = scale.data()[ch] * x[i] / norm;
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_scale)`.
pub fn l2_normalize_scale_backward(input: &Tensor, scale: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = check_scale(input, scale)?;
    if !input.same_shape(grad_out) {
        return Err(Error::Mismatch("l2_normalize_scale_backward: shape mismatch".into()));
    }
    let hw = h * w;
    let (x, g, s) = (input.data(), grad_out.data(), scale.data());
    let mut gin = Tensor::zeros(input.shape());
    let mut gs = vec![0.0; c];
    let gi = gin.data_mut();
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let sq: f64 = (0..c).map(|ch| x[base + ch * hw + p].powi(2)).sum();
            let norm = (sq + L2_NORM_EPS).sqrt();
            let weighted: f64 = (0..c)
                .map(|ch| {
                    let i = base + ch * hw + p;
                    s[ch] * g[i] * x[i]
                })
                .sum();
            let norm3 = norm * norm * norm;
            for ch in 0..c {
                let i = base + ch * hw + p;
                gi[i] = s[ch] * g[i] / norm - x[i] * weighted / norm3;
                gs[ch] += g[i] * x[i] / norm;
            }
        }
    }
    Ok((gin, Tensor::new(vec![c], gs)?))
}
