//! Dense row-major f64 matrices for the tape engine. Scalars are 1x1.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]{:?}", self.rows, self.cols, self.data)
    }
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape does not match data length");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn row(data: Vec<f64>) -> Self {
        Tensor::from_vec(1, data.len(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The single element of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() requires a scalar tensor");
        self.data[0]
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul inner dimensions must agree");
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    /// Shape the elementwise combination of `a` and `b` broadcasts to, if any.
    ///
    /// Supported: equal shapes, a 1x1 scalar against anything, a 1xC row
    /// against RxC, and an Rx1 column against RxC.
    pub fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
        if a == b {
            return Some(a);
        }
        if a == (1, 1) {
            return Some(b);
        }
        if b == (1, 1) {
            return Some(a);
        }
        let (ar, ac) = a;
        let (br, bc) = b;
        if ac == bc && (ar == 1 || br == 1) {
            return Some((ar.max(br), ac));
        }
        if ar == br && (ac == 1 || bc == 1) {
            return Some((ar, ac.max(bc)));
        }
        None
    }

    fn bc_get(&self, i: usize, j: usize) -> f64 {
        let bi = if self.rows == 1 { 0 } else { i };
        let bj = if self.cols == 1 { 0 } else { j };
        self.get(bi, bj)
    }

    /// Elementwise combine with broadcasting; panics if the shapes are not
    /// broadcast-compatible (the graph builder checks shapes beforehand).
    pub fn zip_broadcast(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (rows, cols) = Tensor::broadcast_shape(self.shape(), other.shape())
            .expect("incompatible shapes for broadcast");
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out.set(i, j, f(self.bc_get(i, j), other.bc_get(i, j)));
            }
        }
        out
    }

    /// Sum a gradient of broadcast shape back down to `shape`.
    pub fn reduce_to_shape(&self, shape: (usize, usize)) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let (r, c) = shape;
        let mut out = Tensor::zeros(r, c);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let bi = if r == 1 { 0 } else { i };
                let bj = if c == 1 { 0 } else { j };
                out.data[bi * c + bj] += self.get(i, j);
            }
        }
        out
    }
}
