//! Portable binary checkpoints.
//!
//! Layout (little endian throughout):
//!   magic   8 bytes  b"PWALKCKP"
//!   version u32      1
//!   iteration u64, env_steps u64
//!   policy net, value net   (see `write_net`)
//!   normalizer              (see `write_normalizer`)
//!
//! Net: out-activation tag u8 (0 sigmoid-symmetric, 1 linear), dim count u32,
//! dims u32 each, then per layer the weight matrix row-major f64 followed by
//! the bias vector. Normalizer: dim u32, count f64, mean, m2.
//!
//! All floats are raw IEEE-754 bits, so a save → load round trip is bit-exact.

use std::io::{self, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::net::{Linear, Mlp, OutputActivation};
use super::normalizer::Normalizer;
use super::Agent;

const MAGIC: &[u8; 8] = b"PWALKCKP";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_net(w: &mut impl Write, net: &Mlp) -> io::Result<()> {
    let tag = match net.out {
        OutputActivation::SigmoidSymmetric => 0u8,
        OutputActivation::Linear => 1u8,
    };
    w.write_all(&[tag])?;
    let dims = net.dims();
    put_u32(w, dims.len() as u32)?;
    for d in &dims {
        put_u32(w, *d as u32)?;
    }
    for layer in &net.layers {
        for i in 0..layer.w.nrows() {
            for j in 0..layer.w.ncols() {
                put_f64(w, layer.w[(i, j)])?;
            }
        }
        for v in layer.b.iter() {
            put_f64(w, *v)?;
        }
    }
    Ok(())
}

fn read_net(r: &mut impl Read) -> Result<Mlp, CheckpointError> {
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let out = match tag[0] {
        0 => OutputActivation::SigmoidSymmetric,
        1 => OutputActivation::Linear,
        t => return Err(CheckpointError::Format(format!("unknown activation tag {t}"))),
    };
    let nd = get_u32(r)? as usize;
    if !(2..=16).contains(&nd) {
        return Err(CheckpointError::Format(format!("bad layer count {nd}")));
    }
    let mut dims = Vec::with_capacity(nd);
    for _ in 0..nd {
        let d = get_u32(r)? as usize;
        if d == 0 || d > 65536 {
            return Err(CheckpointError::Format(format!("bad layer width {d}")));
        }
        dims.push(d);
    }
    let mut layers = Vec::with_capacity(nd - 1);
    for k in 0..nd - 1 {
        let (nin, nout) = (dims[k], dims[k + 1]);
        let mut w = DMatrix::zeros(nout, nin);
        for i in 0..nout {
            for j in 0..nin {
                w[(i, j)] = get_f64(r)?;
            }
        }
        let mut b = DVector::zeros(nout);
        for i in 0..nout {
            b[i] = get_f64(r)?;
        }
        layers.push(Linear { w, b });
    }
    let net = Mlp { layers, out };
    if !net.params_finite() {
        return Err(CheckpointError::Format("non-finite parameters".into()));
    }
    Ok(net)
}

fn write_normalizer(w: &mut impl Write, n: &Normalizer) -> io::Result<()> {
    put_u32(w, n.dim() as u32)?;
    put_f64(w, n.count())?;
    for v in n.mean().iter() {
        put_f64(w, *v)?;
    }
    for v in n.m2_raw().iter() {
        put_f64(w, *v)?;
    }
    Ok(())
}

fn read_normalizer(r: &mut impl Read) -> Result<Normalizer, CheckpointError> {
    let dim = get_u32(r)? as usize;
    if dim == 0 || dim > 4096 {
        return Err(CheckpointError::Format(format!("bad normalizer dim {dim}")));
    }
    let count = get_f64(r)?;
    let mut mean = DVector::zeros(dim);
    for i in 0..dim {
        mean[i] = get_f64(r)?;
    }
    let mut m2 = DVector::zeros(dim);
    for i in 0..dim {
        m2[i] = get_f64(r)?;
    }
    Normalizer::from_raw(count, mean, m2)
        .map_err(|e| CheckpointError::Format(format!("normalizer: {e}")))
}

pub fn save(agent: &Agent, path: &Path) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.write_all(MAGIC)?;
    put_u32(&mut buf, VERSION)?;
    put_u64(&mut buf, agent.iteration)?;
    put_u64(&mut buf, agent.env_steps)?;
    write_net(&mut buf, &agent.policy)?;
    write_net(&mut buf, &agent.value)?;
    write_normalizer(&mut buf, &agent.normalizer)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Agent, CheckpointError> {
    let data = std::fs::read(path)?;
    let mut r = data.as_slice();
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Format(format!("unsupported version {version}")));
    }
    let iteration = get_u64(&mut r)?;
    let env_steps = get_u64(&mut r)?;
    let policy = read_net(&mut r)?;
    let value = read_net(&mut r)?;
    let normalizer = read_normalizer(&mut r)?;
    if normalizer.dim() != policy.input_dim() || normalizer.dim() != value.input_dim() {
        return Err(CheckpointError::Format("dimension mismatch".into()));
    }
    Ok(Agent { policy, value, normalizer, iteration, env_steps })
}
