use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major fp64 array.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid("tensor", format!("zero extent in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("from_rows", "ragged rows"));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap();
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// 2-D matrix product without autodiff.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = dims2("matmul", self)?;
        let (k2, n) = dims2("matmul", rhs)?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &rhs.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &rhs.data, false, &mut out, 0.0);
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOW])
        }
    }
}

pub(crate) fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::invalid(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

pub(crate) fn dims3(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(Error::invalid(op, format!("expected a rank-3 tensor, got shape {s:?}"))),
    }
}

/// `c = op(a) * op(b) + beta * c` for row-major operands, where `op` is an
/// optional transpose. Shapes are given after transposition: `op(a)` is m×k,
/// `op(b)` is k×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe in-bounds views of slices whose lengths were
    // checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a strided 1-D convolution between a "long" signal of length
/// `long` and a "short" one of length `short`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub long: usize,
    pub short: usize,
}

impl ConvGeom {
    pub fn forward(op: &'static str, len: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::invalid(op, "kernel and stride must be positive"));
        }
        let padded = len + 2 * padding;
        if padded < kernel {
            return Err(Error::invalid(
                op,
                format!("input length {len} too short for kernel {kernel} with padding {padding}"),
            ));
        }
        Ok(ConvGeom {
            kernel,
            stride,
            padding,
            long: len,
            short: (padded - kernel) / stride + 1,
        })
    }

    pub fn transposed(op: &'static str, len: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 || len == 0 {
            return Err(Error::invalid(op, "kernel, stride and length must be positive"));
        }
        let full = (len - 1) * stride + kernel;
        if full <= 2 * padding {
            return Err(Error::invalid(op, format!("padding {padding} leaves no output")));
        }
        Ok(ConvGeom {
            kernel,
            stride,
            padding,
            long: full - 2 * padding,
            short: len,
        })
    }

    #[inline]
    fn source(&self, t: usize, k: usize) -> Option<usize> {
        let pos = (t * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < self.long).then_some(pos as usize)
    }

    /// `[C, long]` → `[C*K, short]` patch matrix.
    pub fn im2col(&self, signal: &[f64], channels: usize, cols: &mut [f64]) {
        let (kk, s) = (self.kernel, self.short);
        for c in 0..channels {
            let src = &signal[c * self.long..(c + 1) * self.long];
            for k in 0..kk {
                let dst = &mut cols[(c * kk + k) * s..(c * kk + k + 1) * s];
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = self.source(t, k).map_or(0.0, |p| src[p]);
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-add patches back into `[C, long]`.
    pub fn col2im(&self, cols: &[f64], channels: usize, signal: &mut [f64]) {
        let (kk, s) = (self.kernel, self.short);
        for c in 0..channels {
            let dst = &mut signal[c * self.long..(c + 1) * self.long];
            for k in 0..kk {
                let src = &cols[(c * kk + k) * s..(c * kk + k + 1) * s];
                for (t, v) in src.iter().enumerate() {
                    if let Some(p) = self.source(t, k) {
                        dst[p] += v;
                    }
                }
            }
        }
    }
}

/// Forward 1-D convolution without autodiff. `x`: [N, Cin, L], `w`: [Cout, Cin, K].
pub fn conv1d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let (n, cin, len) = dims3("conv1d", x)?;
    let (cout, cin_w, kernel) = dims3("conv1d", w)?;
    if cin != cin_w {
        return Err(Error::shape("conv1d", x.shape(), w.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape("conv1d", w.shape(), b.shape()));
        }
    }
    let geom = ConvGeom::forward("conv1d", len, kernel, stride, padding)?;
    let lout = geom.short;
    let mut cols = vec![0.0; cin * kernel * lout];
    let mut out = vec![0.0; n * cout * lout];
    for i in 0..n {
        geom.im2col(&x.data[i * cin * len..(i + 1) * cin * len], cin, &mut cols);
        let dst = &mut out[i * cout * lout..(i + 1) * cout * lout];
        gemm(cout, cin * kernel, lout, &w.data, false, &cols, false, dst, 0.0);
        if let Some(b) = bias {
            add_channel_bias(dst, &b.data, lout);
        }
    }
    Ok(Tensor::from_parts(vec![n, cout, lout], out))
}

/// Forward transposed 1-D convolution. `x`: [N, Cin, L], `w`: [Cin, Cout, K].
pub fn conv_transpose1d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, cin, len) = dims3("conv_transpose1d", x)?;
    let (cin_w, cout, kernel) = dims3("conv_transpose1d", w)?;
    if cin != cin_w {
        return Err(Error::shape("conv_transpose1d", x.shape(), w.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape("conv_transpose1d", w.shape(), b.shape()));
        }
    }
    let geom = ConvGeom::transposed("conv_transpose1d", len, kernel, stride, padding)?;
    let lout = geom.long;
    let mut cols = vec![0.0; cout * kernel * len];
    let mut out = vec![0.0; n * cout * lout];
    for i in 0..n {
        gemm(
            cout * kernel,
            cin,
            len,
            &w.data,
            true,
            &x.data[i * cin * len..(i + 1) * cin * len],
            false,
            &mut cols,
            0.0,
        );
        let dst = &mut out[i * cout * lout..(i + 1) * cout * lout];
        geom.col2im(&cols, cout, dst);
        if let Some(b) = bias {
            add_channel_bias(dst, &b.data, lout);
        }
    }
    Ok(Tensor::from_parts(vec![n, cout, lout], out))
}

fn add_channel_bias(dst: &mut [f64], bias: &[f64], len: usize) {
    for (row, b) in dst.chunks_mut(len).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::new(&[3, 3], (1..=9).map(f64::from).collect()).unwrap();
        assert_eq!(Tensor::eye(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn conv_lengths() {
        assert_eq!(ConvGeom::forward("t", 128, 4, 2, 1).unwrap().short, 64);
        assert_eq!(ConvGeom::forward("t", 128, 3, 1, 1).unwrap().short, 128);
        assert_eq!(ConvGeom::transposed("t", 32, 4, 2, 1).unwrap().long, 64);
    }

    #[test]
    fn conv1d_matches_direct_sum() {
        let x = Tensor::new(&[1, 2, 5], (0..10).map(|v| v as f64 * 0.5 - 1.0).collect()).unwrap();
        let w = Tensor::new(&[3, 2, 3], (0..18).map(|v| (v as f64).sin()).collect()).unwrap();
        let b = Tensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let y = conv1d(&x, &w, Some(&b), 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        for o in 0..3 {
            for t in 0..3 {
                let mut acc = b.data()[o];
                for c in 0..2 {
                    for k in 0..3 {
                        let p = (t * 2 + k) as isize - 1;
                        if (0..5).contains(&p) {
                            acc += w.data()[(o * 2 + c) * 3 + k] * x.data()[c * 5 + p as usize];
                        }
                    }
                }
                assert!((y.data()[o * 3 + t] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with shared weights and no bias.
        let x = Tensor::new(&[1, 2, 8], (0..16).map(|v| (v as f64 * 0.37).cos()).collect()).unwrap();
        let w = Tensor::new(&[3, 2, 4], (0..24).map(|v| (v as f64 * 0.11).sin()).collect()).unwrap();
        let cx = conv1d(&x, &w, None, 2, 1).unwrap();
        let y = Tensor::new(cx.shape(), (0..cx.len()).map(|v| v as f64 * 0.1 - 0.3).collect()).unwrap();
        let ty = conv_transpose1d(&y, &w, None, 2, 1).unwrap();
        assert_eq!(ty.shape(), x.shape());
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
