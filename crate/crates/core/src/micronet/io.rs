//! Weight files: 14-byte magic, u16 version, the model spec as
//! length-prefixed JSON, then a directory of named tensors (name, rank,
//! dims) each followed by its little-endian f32 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{Model, ModelSpec, ParamSet};
use super::tensor::Tensor;
use super::NetError;

const MAGIC: &[u8; 14] = b"GRAPHOCOG-WGHT";
const VERSION: u16 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<(), NetError> {
    let v = u32::try_from(v).map_err(|_| NetError::Format(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize, NetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>, NetError> {
    let n = get_u32(r)?;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn write_weights<W: Write>(mut w: W, model: &Model<f32>) -> Result<(), NetError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let spec = serde_json::to_vec(model.spec()).map_err(|e| NetError::Format(e.to_string()))?;
    put_u32(&mut w, spec.len())?;
    w.write_all(&spec)?;
    let params = &model.params;
    put_u32(&mut w, params.names().len())?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        put_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut w, d)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights<R: Read>(mut r: R) -> Result<Model<f32>, NetError> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..14] != MAGIC {
        return Err(NetError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[14], header[15]]);
    if version != VERSION {
        return Err(NetError::Format(format!("unsupported version {version}")));
    }
    let spec: ModelSpec = serde_json::from_slice(&get_bytes(&mut r)?)
        .map_err(|e| NetError::Format(e.to_string()))?;
    let count = get_u32(&mut r)?;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name =
            String::from_utf8(get_bytes(&mut r)?).map_err(|e| NetError::Format(e.to_string()))?;
        let rank = get_u32(&mut r)?;
        let shape = (0..rank)
            .map(|_| get_u32(&mut r))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        names.push(name);
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    Model::from_params(spec, ParamSet::from_parts(names, tensors))
}

pub fn save_weights(path: &Path, model: &Model<f32>) -> Result<(), NetError> {
    write_weights(BufWriter::new(File::create(path)?), model)
}

pub fn load_weights(path: &Path) -> Result<Model<f32>, NetError> {
    read_weights(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micronet::model::{BlstmConfig, CnnConfig};

    fn tiny() -> CnnConfig {
        CnnConfig {
            in_channels: 2,
            in_height: 16,
            in_width: 8,
            conv1_filters: 4,
            conv2_filters: 4,
            kernel: 3,
            fc_hidden: 8,
            n_classes: 2,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = ModelSpec::cnn_blstm(tiny(), BlstmConfig { layers: 2, hidden: 4 });
        let m = Model::<f32>::new(spec, 11).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &m).unwrap();
        let back = read_weights(buf.as_slice()).unwrap();
        assert_eq!(back.spec(), m.spec());
        for (a, b) in back.params.tensors().iter().zip(m.params.tensors()) {
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        let x = Tensor::from_vec(&[2, 16, 8], (0..256).map(|i| (i % 7) as f32 * 0.3).collect())
            .unwrap();
        let la = m.forward(std::slice::from_ref(&x)).unwrap();
        let lb = back.forward(std::slice::from_ref(&x)).unwrap();
        assert_eq!(la[0].to_bits(), lb[0].to_bits());
        assert_eq!(la[1].to_bits(), lb[1].to_bits());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = Model::<f32>::new(ModelSpec::cnn(tiny()), 1).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &m).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_weights(bad.as_slice()), Err(NetError::Format(_))));
        assert!(read_weights(&buf[..buf.len() - 3]).is_err());
    }
}
