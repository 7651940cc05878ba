//! Image ingestion: binary PPM (P6) and MDT1 tensors, as `3×H×W` tensors
//! with values in `[0, 1]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<usize>, usize)> {
    let mut pos = 0;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::invalid("ppm", "truncated header"));
        }
        let tok = std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::invalid("ppm", "bad header"))?;
        out.push(
            tok.parse()
                .map_err(|_| Error::invalid("ppm", format!("bad header value `{tok}`")))?,
        );
    }
    // exactly one whitespace byte separates the header from the raster
    Ok((out, pos + 1))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::invalid("ppm", "missing P6 magic"));
    }
    let (v, start) = header_tokens(&bytes[2..], 3)?;
    let (w, h, maxval) = (v[0], v[1], v[2]);
    if w == 0 || h == 0 || maxval == 0 || maxval > 255 {
        return Err(Error::invalid(
            "ppm",
            format!("unsupported geometry {w}x{h} max {maxval}"),
        ));
    }
    let raster = &bytes[2 + start..];
    if raster.len() < w * h * 3 {
        return Err(Error::invalid("ppm", "truncated raster"));
    }
    let mut data = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            data[c * h * w + p] = raster[p * 3 + c] as f64 / maxval as f64;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// 8-bit P6 encoding of a `3×H×W` tensor; values are clamped to `[0, 1]`.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let [c, h, w] = image3(image, "encode_ppm")?;
    if c != 3 {
        return Err(Error::shape("encode_ppm", "channels", 3, c));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for p in 0..h * w {
        for ch in 0..3 {
            out.push((d[ch * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

fn image3(image: &Tensor, op: &'static str) -> Result<[usize; 3]> {
    match image.shape() {
        &[c, h, w] => Ok([c, h, w]),
        s => Err(Error::shape(op, "rank", 3, s.len())),
    }
}

/// Reads a PPM or MDT1 file; MDT1 tensors may be `3×H×W` or `1×3×H×W`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.starts_with(b"P6") {
        return decode_ppm(&bytes);
    }
    let t = Tensor::read_mdt1(&bytes[..])?;
    let shape = t.shape().to_vec();
    match shape.as_slice() {
        [3, _, _] => Ok(t),
        [1, 3, h, w] => t.reshape(vec![3, *h, *w]),
        _ => Err(Error::invalid(
            "load_image",
            format!("expected a 3xHxW image, got {shape:?}"),
        )),
    }
}

pub fn save_ppm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

/// Bilinear resampling of a `C×H×W` tensor with pixel-center alignment.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [c, h, w] = image3(image, "resize")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize", "empty output size"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let src = image.data();
    let coord = |o: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(n_in - 1);
        (x0, x1, x - x0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|o| coord(o, out_w, w)).collect();
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1, fy) = coord(oy, out_h, h);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out[ch * out_h * out_w + oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let t = Tensor::from_fn(&[3, 4, 5], |i| (i % 256) as f64 / 255.0);
        let back = decode_ppm(&encode_ppm(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn header_comment() {
        let mut bytes = b"P6\n# note\n1 1\n255\n".to_vec();
        bytes.extend([255, 0, 51]);
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.2]);
    }

    #[test]
    fn resize_constant() {
        let t = Tensor::filled(&[3, 7, 9], 0.25);
        let r = resize_bilinear(&t, 4, 4).unwrap();
        assert_eq!(r.shape(), &[3, 4, 4]);
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn rejects_p3() {
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
    }
}
