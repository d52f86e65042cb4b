use super::{dims2, Tensor};
use crate::error::{Error, Result};

/// Keeps projected rows strictly inside the radius despite rounding.
const SHRINK: f64 = 1.0 - 4.0 * f64::EPSILON;

/// `C = alpha * A·B + beta * C` on strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose strided extents cover m×k, k×n and m×n.
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

struct Broadcast {
    out_shape: Vec<usize>,
    rows: usize,
    cols: usize,
    a: (usize, usize),
    b: (usize, usize),
}

fn broadcast(a: &[usize], b: &[usize]) -> Result<Broadcast> {
    let (ra, ca) = dims2(a)?;
    let (rb, cb) = dims2(b)?;
    let rows = ra.max(rb);
    let cols = ca.max(cb);
    let ok = |x: usize, full: usize| x == full || x == 1;
    if !(ok(ra, rows) && ok(rb, rows) && ok(ca, cols) && ok(cb, cols)) {
        return Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}")));
    }
    let out_shape = if a == b {
        a.to_vec()
    } else if a.len() == 2 || b.len() == 2 {
        vec![rows, cols]
    } else if cols == 1 && a.is_empty() && b.is_empty() {
        vec![]
    } else {
        vec![cols]
    };
    Ok(Broadcast {
        out_shape,
        rows,
        cols,
        a: (ra, ca),
        b: (rb, cb),
    })
}

#[inline]
fn bidx((r, c): (usize, usize), i: usize, j: usize) -> usize {
    (if r == 1 { 0 } else { i }) * c + if c == 1 { 0 } else { j }
}

fn binary(
    a: &Tensor,
    b: &Tensor,
    f: fn(f64, f64) -> f64,
    da: fn(f64, f64) -> f64,
    db: fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_op(
            a.shape().to_vec(),
            data,
            &[a, b],
            move |_, g, p| {
                let (x, y) = (p[0].data(), p[1].data());
                let ga = p[0].requires_grad().then(|| {
                    g.iter()
                        .zip(x.iter().zip(y))
                        .map(|(g, (&x, &y))| g * da(x, y))
                        .collect()
                });
                let gb = p[1].requires_grad().then(|| {
                    g.iter()
                        .zip(x.iter().zip(y))
                        .map(|(g, (&x, &y))| g * db(x, y))
                        .collect()
                });
                vec![ga, gb]
            },
        ));
    }
    let bc = broadcast(a.shape(), b.shape())?;
    let (rows, cols, sa, sb) = (bc.rows, bc.cols, bc.a, bc.b);
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            data.push(f(a.data()[bidx(sa, i, j)], b.data()[bidx(sb, i, j)]));
        }
    }
    Ok(Tensor::from_op(bc.out_shape, data, &[a, b], move |_, g, p| {
        let (x, y) = (p[0].data(), p[1].data());
        let mut ga = p[0].requires_grad().then(|| vec![0.0; x.len()]);
        let mut gb = p[1].requires_grad().then(|| vec![0.0; y.len()]);
        for i in 0..rows {
            for j in 0..cols {
                let (ia, ib) = (bidx(sa, i, j), bidx(sb, i, j));
                let gij = g[i * cols + j];
                if let Some(ga) = ga.as_mut() {
                    ga[ia] += gij * da(x[ia], y[ib]);
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] += gij * db(x[ia], y[ib]);
                }
            }
        }
        vec![ga, gb]
    }))
}

impl Tensor {
    fn unary(&self, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |y, g, p| {
            let x = p[0].data();
            vec![Some(
                g.iter()
                    .zip(x.iter().zip(y))
                    .map(|(g, (&x, &y))| g * df(x, y))
                    .collect(),
            )]
        })
    }

    pub fn add(&self, o: &Tensor) -> Result<Tensor> {
        binary(self, o, |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, o: &Tensor) -> Result<Tensor> {
        binary(self, o, |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, o: &Tensor) -> Result<Tensor> {
        binary(self, o, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, o: &Tensor) -> Result<Tensor> {
        binary(self, o, |a, b| a / b, |_, b| 1.0 / b, |a, b| -a / (b * b))
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * s).collect();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |_, g, _| {
            vec![Some(g.iter().map(|g| g * s).collect())]
        })
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|x| x + s).collect();
        Tensor::from_op(self.shape().to_vec(), data, &[self], |_, g, _| {
            vec![Some(g.to_vec())]
        })
    }

    pub fn matmul(&self, o: &Tensor) -> Result<Tensor> {
        if self.shape().len() != 2 || o.shape().len() != 2 {
            return Err(Error::shape(format!(
                "matmul needs matrices, got {:?} and {:?}",
                self.shape(),
                o.shape()
            )));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (o.shape()[0], o.shape()[1]);
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {:?} × {:?}",
                self.shape(),
                o.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), (k as isize, 1), o.data(), (n as isize, 1), 0.0, &mut out);
        Ok(Tensor::from_op(vec![m, n], out, &[self, o], move |_, g, p| {
            let (a, b) = (p[0].data(), p[1].data());
            // dA = G · Bᵀ, dB = Aᵀ · G
            let ga = p[0].requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, (n as isize, 1), b, (1, n as isize), 0.0, &mut ga);
                ga
            });
            let gb = p[1].requires_grad().then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, a, (1, k as isize), g, (n as isize, 1), 0.0, &mut gb);
                gb
            });
            vec![ga, gb]
        }))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let x = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        Ok(Tensor::from_op(vec![c, r], out, &[self], move |_, g, _| {
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = g[j * r + i];
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), &[self], |_, g, _| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Concatenates matrices along `axis` (0 = rows, 1 = columns). Vectors
    /// concatenate end to end.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        if first.shape().len() <= 1 {
            if parts.iter().any(|p| p.shape().len() > 1) {
                return Err(Error::shape("concat mixes vectors and matrices"));
            }
            let data: Vec<f64> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
            let lens: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
            return Ok(Tensor::from_op(vec![data.len()], data, parts, move |_, g, _| {
                let mut off = 0;
                lens.iter()
                    .map(|&l| {
                        let s = g[off..off + l].to_vec();
                        off += l;
                        Some(s)
                    })
                    .collect()
            }));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|p| p.dims2()).collect::<Result<_>>()?;
        if parts.iter().any(|p| p.shape().len() != 2) {
            return Err(Error::shape("concat mixes vectors and matrices"));
        }
        match axis {
            0 => {
                let cols = dims[0].1;
                if dims.iter().any(|d| d.1 != cols) {
                    return Err(Error::shape("row concat needs equal column counts"));
                }
                let rows: usize = dims.iter().map(|d| d.0).sum();
                let data: Vec<f64> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
                let lens: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
                Ok(Tensor::from_op(vec![rows, cols], data, parts, move |_, g, _| {
                    let mut off = 0;
                    lens.iter()
                        .map(|&l| {
                            let s = g[off..off + l].to_vec();
                            off += l;
                            Some(s)
                        })
                        .collect()
                }))
            }
            1 => {
                let rows = dims[0].0;
                if dims.iter().any(|d| d.0 != rows) {
                    return Err(Error::shape("column concat needs equal row counts"));
                }
                let widths: Vec<usize> = dims.iter().map(|d| d.1).collect();
                let cols: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    for (p, &w) in parts.iter().zip(&widths) {
                        data.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
                    }
                }
                Ok(Tensor::from_op(vec![rows, cols], data, parts, move |_, g, _| {
                    let mut out: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
                    for i in 0..rows {
                        let mut off = i * cols;
                        for (o, &w) in out.iter_mut().zip(&widths) {
                            o.extend_from_slice(&g[off..off + w]);
                            off += w;
                        }
                    }
                    out.into_iter().map(Some).collect()
                }))
            }
            _ => Err(Error::shape(format!("concat axis {axis} out of range"))),
        }
    }

    /// Half-open range `[start, end)` along `axis`. Vectors use axis 0.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        if self.shape().len() <= 1 {
            if axis != 0 || start > end || end > self.numel() {
                return Err(Error::shape(format!("bad slice {start}..{end} of {:?}", self.shape())));
            }
            let n = self.numel();
            return Ok(Tensor::from_op(
                vec![end - start],
                self.data()[start..end].to_vec(),
                &[self],
                move |_, g, _| {
                    let mut gx = vec![0.0; n];
                    gx[start..end].copy_from_slice(g);
                    vec![Some(gx)]
                },
            ));
        }
        let (r, c) = self.dims2()?;
        let extent = match axis {
            0 => r,
            1 => c,
            _ => return Err(Error::shape(format!("slice axis {axis} out of range"))),
        };
        if start > end || end > extent {
            return Err(Error::shape(format!(
                "bad slice {start}..{end} on axis {axis} of {:?}",
                self.shape()
            )));
        }
        if axis == 0 {
            let data = self.data()[start * c..end * c].to_vec();
            return Ok(Tensor::from_op(vec![end - start, c], data, &[self], move |_, g, _| {
                let mut gx = vec![0.0; r * c];
                gx[start * c..end * c].copy_from_slice(g);
                vec![Some(gx)]
            }));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&self.data()[i * c + start..i * c + end]);
        }
        Ok(Tensor::from_op(vec![r, w], data, &[self], move |_, g, _| {
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                gx[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
            }
            vec![Some(gx)]
        }))
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        Tensor::from_op(vec![], vec![self.data().iter().sum()], &[self], move |_, g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums a matrix along `axis`, keeping it as a unit dimension.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let x = self.data();
        match axis {
            1 => {
                let data: Vec<f64> = (0..r).map(|i| x[i * c..(i + 1) * c].iter().sum()).collect();
                Ok(Tensor::from_op(vec![r, 1], data, &[self], move |_, g, _| {
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        gx[i * c..(i + 1) * c].iter_mut().for_each(|v| *v = g[i]);
                    }
                    vec![Some(gx)]
                }))
            }
            0 => {
                let mut data = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        data[j] += x[i * c + j];
                    }
                }
                Ok(Tensor::from_op(vec![1, c], data, &[self], move |_, g, _| {
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        gx[i * c..(i + 1) * c].copy_from_slice(&g[..c]);
                    }
                    vec![Some(gx)]
                }))
            }
            _ => Err(Error::shape(format!("sum axis {axis} out of range"))),
        }
    }

    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if self.data().iter().any(|&x| x < 0.0) {
            return Err(Error::invalid("sqrt of a negative value"));
        }
        Ok(self.unary(f64::sqrt, |_, y| 0.5 / y))
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(|x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// `max(x, lo)`; gradient passes only where `x > lo`.
    pub fn clamp_min(&self, lo: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x.max(lo)).collect();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |_, g, p| {
            let x = p[0].data();
            vec![Some(
                g.iter()
                    .zip(x)
                    .map(|(g, &x)| if x > lo { *g } else { 0.0 })
                    .collect(),
            )]
        })
    }

    pub fn artanh(&self) -> Result<Tensor> {
        if self.data().iter().any(|x| !(x.abs() < 1.0)) {
            return Err(Error::invalid("artanh input outside (-1, 1)"));
        }
        Ok(self.unary(f64::atanh, |x, _| 1.0 / (1.0 - x * x)))
    }

    /// `acosh(max(x, 1))`. The derivative is evaluated at `max(x, 1 + eps)`
    /// so it stays finite at coincident points.
    pub fn acosh_stable(&self, eps: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x.max(1.0).acosh()).collect();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |_, g, p| {
            let x = p[0].data();
            vec![Some(
                g.iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        let z = x.max(1.0 + eps);
                        g / (z * z - 1.0).sqrt()
                    })
                    .collect(),
            )]
        })
    }

    /// Euclidean norm: a scalar for vectors, one value per row (`[r, 1]`)
    /// for matrices.
    pub fn norm2(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let x = self.data();
        let norms: Vec<f64> = (0..r)
            .map(|i| x[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let shape = if self.shape().len() == 2 { vec![r, 1] } else { vec![] };
        Ok(Tensor::from_op(shape, norms, &[self], move |n, g, p| {
            let x = p[0].data();
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                if n[i] > 0.0 {
                    let s = g[i] / n[i];
                    for j in 0..c {
                        gx[i * c + j] = s * x[i * c + j];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Rescales each row whose norm exceeds `max_norm` back onto that radius.
    pub fn project_ball(&self, max_norm: f64) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let x = self.data();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite value projected onto the ball"));
        }
        let norms: Vec<f64> = (0..r)
            .map(|i| x[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut out = x.to_vec();
        for i in 0..r {
            if norms[i] > max_norm {
                let s = max_norm / norms[i] * SHRINK;
                out[i * c..(i + 1) * c].iter_mut().for_each(|v| *v *= s);
            }
        }
        Ok(Tensor::from_op(self.shape().to_vec(), out, &[self], move |_, g, p| {
            let x = p[0].data();
            let mut gx = g.to_vec();
            for i in 0..r {
                let n = norms[i];
                if n > max_norm {
                    let row = &x[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let proj: f64 = row.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / (n * n);
                    for j in 0..c {
                        gx[i * c + j] = max_norm / n * SHRINK * (gr[j] - row[j] * proj);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}
