//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MODNOCKPT"  magic, 9 bytes
//! u32          format version
//! u32          header length H, then H bytes of caller-defined header
//! u32          network count
//! per network:
//!   u32        number of layer sizes L
//!   u32 × L    layer sizes
//!   u8         activation id
//!   per layer: f64 weights (row-major), then f64 biases
//! ```

use std::io::{Read, Write};

use super::matrix::Matrix;
use super::mlp::{Activation, MlpParams};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"MODNOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, header: &[u8], nets: &[&MlpParams]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_u32(w, header.len())?;
    w.write_all(header)?;
    write_u32(w, nets.len())?;
    for net in nets {
        write_u32(w, net.layer_sizes().len())?;
        for &s in net.layer_sizes() {
            write_u32(w, s)?;
        }
        w.write_all(&[net.activation().id()])?;
        for (weights, bias) in net.weights().iter().zip(net.biases()) {
            for v in weights.as_slice().iter().chain(bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Returns the header bytes and the networks in stored order.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(Vec<u8>, Vec<MlpParams>)> {
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a MODNO checkpoint".into()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let header_len = read_u32(r)? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let count = read_u32(r)? as usize;
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let n_sizes = read_u32(r)? as usize;
        let sizes = (0..n_sizes)
            .map(|_| read_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if sizes.len() < 3 {
            return Err(Error::Format(format!("invalid layer sizes {sizes:?}")));
        }
        let mut act = [0u8; 1];
        r.read_exact(&mut act)?;
        let activation = Activation::from_id(act[0])?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let data = read_f64s(r, pair[0] * pair[1])?;
            weights.push(Matrix::from_vec(pair[1], pair[0], data)?);
            biases.push(read_f64s(r, pair[1])?);
        }
        nets.push(MlpParams::from_parts(weights, biases, activation)?);
    }
    Ok((header, nets))
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let a = MlpParams::init(&[3, 7, 2], Activation::Sine, 1).unwrap();
        let b = MlpParams::init(&[1, 4, 4, 2], Activation::Relu, 2).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, b"hdr", &[&a, &b]).unwrap();
        assert_eq!(&buf[..9], CHECKPOINT_MAGIC);
        let (header, nets) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(header, b"hdr");
        assert_eq!(nets, vec![a, b]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            read_checkpoint(&mut &b"NOTACKPT!\x01\0\0\0"[..]),
            Err(Error::Format(_))
        ));
        let a = MlpParams::init(&[2, 3, 1], Activation::Tanh, 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[], &[&a]).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::Io(_))));
    }
}
