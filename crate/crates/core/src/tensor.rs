//! Dense row-major tensors and the NDT1 binary format.
//!
//! NDT1 layout: magic `NDT1`, one dtype byte (0 = f64, 1 = f32), one rank
//! byte, `rank` little-endian u64 dims, then the row-major payload in the
//! stated dtype (little-endian). Computation is always carried out in f64;
//! the f32 code only affects what is stored on disk.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NDT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F64 => 0,
            DType::F32 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F64),
            1 => Ok(DType::F32),
            other => Err(Error::format("NDT1", format!("unknown dtype code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
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

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn expect_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn dims4(&self, op: &str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!(
                "{op}: expected NCHW tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims3(&self, op: &str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(format!(
                "{op}: expected CHW tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims2(&self, op: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!(
                "{op}: expected matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::invalid("stack of zero tensors"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            first.expect_same_shape(t, "stack")?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::new(shape, data)
    }

    /// Slice `index` along the leading axis.
    pub fn index0(&self, index: usize) -> Result<Tensor> {
        if self.rank() < 2 || index >= self.shape[0] {
            return Err(Error::shape(format!("index0({index}) on shape {:?}", self.shape)));
        }
        let inner: usize = self.shape[1..].iter().product();
        Tensor::new(
            self.shape[1..].to_vec(),
            self.data[index * inner..(index + 1) * inner].to_vec(),
        )
    }

    pub fn write_ndt1<W: Write>(&self, mut w: W, dtype: DType) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[dtype.code(), self.shape.len() as u8])?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match dtype {
            DType::F64 => {
                for &x in &self.data {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            DType::F32 => {
                for &x in &self.data {
                    w.write_all(&(x as f32).to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn to_ndt1_bytes(&self, dtype: DType) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 8 * self.rank() + 8 * self.numel());
        self.write_ndt1(&mut out, dtype).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_ndt1<R: Read>(mut r: R) -> Result<Tensor> {
        let ctx = "NDT1";
        let mut head = [0u8; 6];
        r.read_exact(&mut head)
            .map_err(|e| Error::format(ctx, format!("truncated header: {e}")))?;
        if &head[..4] != MAGIC {
            return Err(Error::format(ctx, "bad magic"));
        }
        let dtype = DType::from_code(head[4])?;
        let rank = head[5] as usize;
        if rank == 0 {
            return Err(Error::format(ctx, "rank 0"));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut buf8 = [0u8; 8];
        for _ in 0..rank {
            r.read_exact(&mut buf8)
                .map_err(|e| Error::format(ctx, format!("truncated dims: {e}")))?;
            shape.push(u64::from_le_bytes(buf8) as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(ctx, "dimension overflow"))?;
        let width = match dtype {
            DType::F64 => 8,
            DType::F32 => 4,
        };
        let mut raw = vec![0u8; n * width];
        r.read_exact(&mut raw)
            .map_err(|e| Error::format(ctx, format!("truncated payload: {e}")))?;
        let data = match dtype {
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        Tensor::new(shape, data).map_err(|e| Error::format(ctx, e.to_string()))
    }

    pub fn save(&self, path: &Path, dtype: DType) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_ndt1(&mut w, dtype)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Tensor> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Tensor::read_ndt1(BufReader::new(file)).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn ndt1_header_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let bytes = t.to_ndt1_bytes(DType::F64);
        assert_eq!(&bytes[..4], b"NDT1");
        assert_eq!(bytes[4], 0);
        assert_eq!(bytes[5], 2);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[14..22].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 6 + 16 + 16);
        assert_eq!(Tensor::read_ndt1(&bytes[..]).unwrap(), t);
    }

    #[test]
    fn ndt1_f32_rounds_values() {
        let t = Tensor::new(vec![3], vec![0.1, 1.0, -3.25]).unwrap();
        let bytes = t.to_ndt1_bytes(DType::F32);
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes.len(), 6 + 8 + 12);
        let back = Tensor::read_ndt1(&bytes[..]).unwrap();
        assert_eq!(back.data()[1], 1.0);
        assert_eq!(back.data()[0], 0.1f32 as f64);
    }

    #[test]
    fn ndt1_truncated_is_error() {
        let t = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = t.to_ndt1_bytes(DType::F64);
        assert!(Tensor::read_ndt1(&bytes[..bytes.len() - 1]).is_err());
        assert!(Tensor::read_ndt1(&b"NDT2"[..]).is_err());
    }

    #[test]
    fn stack_and_index() {
        let a = Tensor::full(&[2, 2], 1.0);
        let b = Tensor::full(&[2, 2], 2.0);
        let s = Tensor::stack(&[a.clone(), b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.index0(0).unwrap(), a);
    }
}
