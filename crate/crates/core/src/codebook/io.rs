//! Binary codebook files.
//!
//! Layout, little-endian: magic `RHSCB1`, config hash `u64`, kind `u8`,
//! two dimension fields `u32` (`S, 2` for angular codebooks, `I, J` for
//! single-beam ones), element count `u32`, then every codeword as `N` `f64`
//! values in storage order.

use std::fs;
use std::path::Path;

use super::{AngularCodebook, SingleBeamCodebook};
use crate::error::{Error, Result};
use crate::grid::SampleGrid;
use crate::model::SystemConfig;

pub const MAGIC: &[u8; 6] = b"RHSCB1";
const FAMILY: &[u8] = b"RHSCB";
pub const HEADER_LEN: usize = 6 + 8 + 1 + 4 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CodebookKind {
    Angular = 1,
    SingleBeam = 2,
}

struct Header {
    hash: u64,
    kind: u8,
    dims: (usize, usize),
    n: usize,
}

fn encode<'a>(header: Header, rows: impl Iterator<Item = &'a [f64]>) -> Vec<u8> {
    let count = header.dims.0 * header.dims.1;
    let mut out = Vec::with_capacity(HEADER_LEN + count * header.n * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header.hash.to_le_bytes());
    out.push(header.kind);
    for v in [header.dims.0, header.dims.1, header.n] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for row in rows {
        for x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> usize {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
}

fn decode(bytes: &[u8], kind: CodebookKind, expected_hash: u64) -> Result<(Header, Vec<Vec<f64>>)> {
    let corrupt = |msg: String| Err(Error::CorruptCodebook(msg));
    if bytes.len() < MAGIC.len() {
        return corrupt(format!("{} bytes is shorter than the magic", bytes.len()));
    }
    let magic = &bytes[..MAGIC.len()];
    if magic != MAGIC {
        if magic.starts_with(FAMILY) {
            return Err(Error::VersionMismatch {
                found: String::from_utf8_lossy(magic).into_owned(),
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
            });
        }
        return corrupt("not a codebook file".into());
    }
    if bytes.len() < HEADER_LEN {
        return corrupt(format!("header truncated at {} bytes", bytes.len()));
    }
    let header = Header {
        hash: u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")),
        kind: bytes[14],
        dims: (u32_at(bytes, 15), u32_at(bytes, 19)),
        n: u32_at(bytes, 23),
    };
    if header.kind != kind as u8 {
        return corrupt(format!("kind tag {} where {} was expected", header.kind, kind as u8));
    }
    let count = header.dims.0.checked_mul(header.dims.1);
    let payload = count.and_then(|c| c.checked_mul(header.n)).and_then(|v| v.checked_mul(8));
    let Some(payload) = payload else {
        return corrupt("length fields overflow".into());
    };
    if bytes.len() != HEADER_LEN + payload {
        return corrupt(format!(
            "expected {} bytes from the header, found {}",
            HEADER_LEN + payload,
            bytes.len()
        ));
    }
    if header.hash != expected_hash {
        return Err(Error::ConfigMismatch {
            found: header.hash,
            expected: expected_hash,
        });
    }
    let rows = bytes[HEADER_LEN..]
        .chunks_exact(8 * header.n.max(1))
        .map(|row| {
            row.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        })
        .collect();
    Ok((header, rows))
}

fn as_corrupt(e: Error) -> Error {
    match e {
        Error::Contract(msg) | Error::Config(msg) => Error::CorruptCodebook(msg),
        other => other,
    }
}

fn check_elements(n: usize, config: &SystemConfig) -> Result<()> {
    if n != config.n_elements {
        return Err(Error::CorruptCodebook(format!(
            "file holds {n}-element codewords, array has {}",
            config.n_elements
        )));
    }
    Ok(())
}

impl AngularCodebook {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            hash: self.hash,
            kind: CodebookKind::Angular as u8,
            dims: (self.layers, 2),
            n: self.codewords.first().map_or(0, |c| c.len()),
        };
        encode(header, self.codewords.iter().map(|c| c.amplitudes()))
    }

    /// Decodes a file produced for `grid` on an array with `config`.
    pub fn from_bytes(bytes: &[u8], grid: &SampleGrid, config: &SystemConfig) -> Result<Self> {
        let (header, rows) = decode(bytes, CodebookKind::Angular, grid.codebook_hash(config))?;
        check_elements(header.n, config)?;
        if header.dims.1 != 2 {
            return Err(Error::CorruptCodebook(format!("{} codewords per layer", header.dims.1)));
        }
        Self::from_parts(*grid, header.dims.0, rows, header.hash).map_err(as_corrupt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>, grid: &SampleGrid, config: &SystemConfig) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, grid, config)
    }
}

impl SingleBeamCodebook {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            hash: self.hash,
            kind: CodebookKind::SingleBeam as u8,
            dims: (self.grid.n_psi, self.grid.n_mu),
            n: self.patterns.first().map_or(0, |c| c.len()),
        };
        encode(header, self.patterns.iter().map(|c| c.amplitudes()))
    }

    pub fn from_bytes(bytes: &[u8], grid: &SampleGrid, config: &SystemConfig) -> Result<Self> {
        let (header, rows) = decode(bytes, CodebookKind::SingleBeam, grid.codebook_hash(config))?;
        check_elements(header.n, config)?;
        if header.dims != (grid.n_psi, grid.n_mu) {
            return Err(Error::CorruptCodebook(format!(
                "file grid {:?} differs from {}×{}",
                header.dims, grid.n_psi, grid.n_mu
            )));
        }
        Self::from_parts(*grid, rows, header.hash).map_err(as_corrupt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>, grid: &SampleGrid, config: &SystemConfig) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, grid, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{build_angular_codebook, build_single_beam_codebook, CodebookOptions};
    use crate::model::ArrayModel;
    use crate::optimizer::SweepOptions;

    fn fixture() -> (ArrayModel, SampleGrid) {
        let array = ArrayModel::new(SystemConfig::with_elements(16)).unwrap();
        let grid = SampleGrid::new((-0.5, 0.5), (0.005, 0.33), 4, 2).unwrap();
        (array, grid)
    }

    #[test]
    fn angular_round_trip_and_size() {
        let (array, grid) = fixture();
        let cb = build_angular_codebook(&grid, &array, 2, CodebookOptions::default()).unwrap();
        let bytes = cb.to_bytes();
        assert_eq!(bytes.len(), 27 + 16 * 8 * 4);
        assert_eq!(AngularCodebook::from_bytes(&bytes, &grid, array.config()).unwrap(), cb);
    }

    #[test]
    fn single_beam_round_trip_and_errors() {
        let (array, grid) = fixture();
        let cb = build_single_beam_codebook(&grid, &array, SweepOptions::default()).unwrap();
        let bytes = cb.to_bytes();
        assert_eq!(bytes.len(), 27 + 16 * 8 * 8);
        assert_eq!(SingleBeamCodebook::from_bytes(&bytes, &grid, array.config()).unwrap(), cb);

        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            SingleBeamCodebook::from_bytes(cut, &grid, array.config()),
            Err(Error::CorruptCodebook(_))
        ));
        assert!(matches!(
            SingleBeamCodebook::from_bytes(&bytes[..10], &grid, array.config()),
            Err(Error::CorruptCodebook(_))
        ));

        let mut v2 = bytes.clone();
        v2[5] = b'2';
        assert!(matches!(
            SingleBeamCodebook::from_bytes(&v2, &grid, array.config()),
            Err(Error::VersionMismatch { .. })
        ));

        let other = SystemConfig {
            loss_per_m: 1.0,
            ..array.config().clone()
        };
        assert!(matches!(
            SingleBeamCodebook::from_bytes(&bytes, &grid, &other),
            Err(Error::ConfigMismatch { .. })
        ));
        assert!(matches!(
            AngularCodebook::from_bytes(&bytes, &grid, array.config()),
            Err(Error::CorruptCodebook(_))
        ));
    }
}
