use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

/// Tolerance on `|‖k‖ − 1|` for anything entering the queue or the loss.
pub const UNIT_TOL: f64 = 1e-9;

/// FIFO ring of at most `capacity` unit-norm key encodings.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeQueue {
    capacity: usize,
    dim: usize,
    buf: Vec<f64>,
    /// Slot the next key is written to.
    head: usize,
    len: usize,
}

pub(crate) fn check_unit_rows(data: &[f64], dim: usize, what: &str) -> Result<()> {
    for (i, row) in data.chunks(dim).enumerate() {
        let n = dot(row, row).sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::Contract(format!("{what} row {i} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::Config("queue capacity and dimension must be positive".into()));
        }
        Ok(Self {
            capacity,
            dim,
            buf: vec![0.0; capacity * dim],
            head: 0,
            len: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.capacity
    }

    /// Appends the rows of `keys[B×D]` as the newest entries, evicting the
    /// oldest once full.
    pub fn enqueue(&mut self, keys: &Tensor) -> Result<()> {
        let (b, d) = keys.dims2()?;
        if d != self.dim {
            return Err(Error::Dimension {
                op: "enqueue",
                lhs: keys.shape().to_vec(),
                rhs: vec![self.capacity, self.dim],
            });
        }
        if b > self.capacity {
            return Err(Error::Usage(format!(
                "batch of {b} keys exceeds queue capacity {}",
                self.capacity
            )));
        }
        check_unit_rows(keys.data(), d, "queued key")?;
        for row in keys.data().chunks(d) {
            self.buf[self.head * d..(self.head + 1) * d].copy_from_slice(row);
            self.head = (self.head + 1) % self.capacity;
            self.len = (self.len + 1).min(self.capacity);
        }
        Ok(())
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let start = (self.head + self.capacity - self.len) % self.capacity;
        (0..self.len).map(move |i| {
            let slot = (start + i) % self.capacity;
            &self.buf[slot * self.dim..(slot + 1) * self.dim]
        })
    }

    /// `[len×D]`, oldest first.
    pub fn to_tensor(&self) -> Result<Tensor> {
        if self.len == 0 {
            return Err(Error::Usage("negative queue is empty".into()));
        }
        Tensor::new(vec![self.len, self.dim], self.iter().flatten().copied().collect())
    }

    /// `[D×len]`, the layout the score matmul consumes.
    pub fn to_tensor_transposed(&self) -> Result<Tensor> {
        if self.len == 0 {
            return Err(Error::Usage("negative queue is empty".into()));
        }
        let mut out = vec![0.0; self.len * self.dim];
        for (j, row) in self.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                out[i * self.len + j] = *v;
            }
        }
        Tensor::new(vec![self.dim, self.len], out)
    }
}
