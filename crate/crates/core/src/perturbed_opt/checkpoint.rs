//! Optimizer checkpoints.
//!
//! Layout, all little-endian: `b"PGO1"`, four zero bytes, then `t`, `epoch`,
//! `seed` and `m` as `u64`, then `w`, `h` and `ρ` as `m` `f64` each. A tail
//! carries what bit-exact resumption also needs: a `u64` flag and `m` values
//! for the previous gradient, the global ρ and the smoothing factor, then a
//! `u64` optimizer tag (0 SGD, 1 Adam) followed for Adam by its step count
//! and both moment vectors.

use std::io::{Read, Write};
use std::path::Path;

use super::{BaseState, OptState};
use crate::error::{Error, Result};
use crate::hessian::HessianState;
use crate::nn::ParamVector;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PGO1";
const KIND: &str = "checkpoint";

fn put_u64(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_all(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn write_checkpoint<W: Write>(mut out: W, state: &OptState) -> std::io::Result<()> {
    let m = state.w.len();
    let mut buf = Vec::with_capacity(64 + 8 * 6 * m);
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&[0; 4]);
    put_u64(&mut buf, state.t);
    put_u64(&mut buf, state.epoch);
    put_u64(&mut buf, state.rng_seed);
    put_u64(&mut buf, m as u64);
    put_all(&mut buf, &state.w);
    put_all(&mut buf, &state.hessian.h);
    put_all(&mut buf, &state.hessian.rho_per_param);
    match &state.prev_grad {
        Some(g) => {
            put_u64(&mut buf, 1);
            put_all(&mut buf, g);
        }
        None => put_u64(&mut buf, 0),
    }
    put_all(&mut buf, &[state.hessian.rho_global, state.hessian.beta1]);
    put_u64(&mut buf, state.hessian.t);
    match &state.base {
        BaseState::Sgd => put_u64(&mut buf, 0),
        BaseState::Adam { m: mom, v, t } => {
            put_u64(&mut buf, 1);
            put_u64(&mut buf, *t);
            put_all(&mut buf, mom);
            put_all(&mut buf, v);
        }
    }
    out.write_all(&buf)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| Error::Truncated { kind: KIND })?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn vec(&mut self, m: usize) -> Result<Vec<f64>> {
        (0..m).map(|_| self.f64()).collect()
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<OptState> {
    let mut head = [0u8; 8];
    input
        .read_exact(&mut head)
        .map_err(|_| Error::Truncated { kind: KIND })?;
    let magic = [head[0], head[1], head[2], head[3]];
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { kind: KIND, found: magic });
    }
    let mut r = Reader { inner: input };
    let t = r.u64()?;
    let epoch = r.u64()?;
    let rng_seed = r.u64()?;
    let m = usize::try_from(r.u64()?).map_err(|_| Error::Truncated { kind: KIND })?;
    let w = r.vec(m)?;
    let h = r.vec(m)?;
    let rho_per_param = r.vec(m)?;
    let prev_grad = match r.u64()? {
        0 => None,
        _ => Some(r.vec(m)?),
    };
    let rho_global = r.f64()?;
    let beta1 = r.f64()?;
    let hessian_t = r.u64()?;
    let base = match r.u64()? {
        0 => BaseState::Sgd,
        1 => {
            let steps = r.u64()?;
            BaseState::Adam {
                t: steps,
                m: r.vec(m)?,
                v: r.vec(m)?,
            }
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown optimizer tag {other} in checkpoint"
            )))
        }
    };
    Ok(OptState {
        w: ParamVector::from(w),
        hessian: HessianState {
            h,
            beta1,
            rho_per_param,
            rho_global,
            t: hessian_t,
        },
        epoch,
        t,
        base,
        rng_seed,
        prev_grad,
    })
}

pub fn write_checkpoint_file(path: impl AsRef<Path>, state: &OptState) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, state).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint_file(path: impl AsRef<Path>) -> Result<OptState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbed_opt::{BaseOptimizer, PerturbedOptConfig};

    fn state(adam: bool) -> OptState {
        let config = PerturbedOptConfig {
            base_optimizer: if adam {
                BaseOptimizer::adam(0.01)
            } else {
                BaseOptimizer::Sgd { lr: 0.1 }
            },
            ..PerturbedOptConfig::default()
        };
        let mut s = OptState::new(ParamVector::from(vec![1.5, -0.25, 3.0]), &config, 77);
        s.t = 12;
        s.epoch = 3;
        s.hessian.h = vec![0.1, 0.2, 0.3];
        s.hessian.rho_per_param = vec![1.0, f64::MIN_POSITIVE, 0.0];
        s.prev_grad = Some(vec![-0.0, 1e-300, 2.0]);
        if let BaseState::Adam { m, v, t } = &mut s.base {
            m[0] = 0.5;
            v[2] = 0.25;
            *t = 12;
        }
        s
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &state(false)).unwrap();
        assert_eq!(&buf[..4], b"PGO1");
        assert_eq!(&buf[8..16], &12u64.to_le_bytes());
        assert_eq!(&buf[16..24], &3u64.to_le_bytes());
        assert_eq!(&buf[24..32], &77u64.to_le_bytes());
        assert_eq!(&buf[32..40], &3u64.to_le_bytes());
        assert_eq!(&buf[40..48], &1.5f64.to_le_bytes());
    }

    #[test]
    fn roundtrip_both_optimizers() {
        for adam in [false, true] {
            let s = state(adam);
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &s).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.prev_grad.as_ref().unwrap()[0].to_bits(), (-0.0f64).to_bits());
            assert!(matches!(
                read_checkpoint(&buf[..buf.len() - 1]),
                Err(Error::Truncated { .. })
            ));
        }
        assert!(matches!(
            read_checkpoint(&b"PGW1\0\0\0\0"[..]),
            Err(Error::BadMagic { .. })
        ));
    }
}
