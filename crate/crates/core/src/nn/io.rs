//! Parameter files: `b"PGW1"`, four zero bytes, `m` as little-endian `u64`,
//! then `m` little-endian `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use super::ParamVector;
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: [u8; 4] = *b"PGW1";
const KIND: &str = "parameter";

pub fn write_params<W: Write>(mut out: W, w: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * w.len());
    buf.extend_from_slice(&PARAMS_MAGIC);
    buf.extend_from_slice(&[0; 4]);
    buf.extend_from_slice(&(w.len() as u64).to_le_bytes());
    for x in w {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read_params<R: Read>(mut input: R) -> Result<ParamVector> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Truncated { kind: KIND })?;
    let magic = [header[0], header[1], header[2], header[3]];
    if magic != PARAMS_MAGIC {
        return Err(Error::BadMagic { kind: KIND, found: magic });
    }
    let m = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    let m = usize::try_from(m).map_err(|_| Error::Truncated { kind: KIND })?;
    let mut values = Vec::with_capacity(m.min(1 << 24));
    let mut word = [0u8; 8];
    for _ in 0..m {
        input
            .read_exact(&mut word)
            .map_err(|_| Error::Truncated { kind: KIND })?;
        values.push(f64::from_le_bytes(word));
    }
    Ok(ParamVector::from(values))
}

pub fn write_params_file(path: impl AsRef<Path>, w: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_params(std::io::BufWriter::new(file), w).map_err(|e| Error::io(path, e))
}

pub fn read_params_file(path: impl AsRef<Path>) -> Result<ParamVector> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_params(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_params(&mut buf, &[1.0]).unwrap();
        assert_eq!(&buf[..4], b"PGW1");
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(&buf[16..], &1.0f64.to_le_bytes());
        assert!(matches!(read_params(&buf[..20]), Err(Error::Truncated { .. })));
        buf[0] = b'X';
        assert!(matches!(read_params(buf.as_slice()), Err(Error::BadMagic { .. })));
    }

    proptest! {
        #[test]
        fn roundtrip_bit_exact(v in prop::collection::vec(any::<f64>(), 0..64)) {
            let mut buf = Vec::new();
            write_params(&mut buf, &v).unwrap();
            let back = read_params(buf.as_slice()).unwrap();
            prop_assert_eq!(
                v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                back.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
