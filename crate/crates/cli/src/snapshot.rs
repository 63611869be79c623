//! Binary field snapshots: an ASCII header `KRFG 1 <kind> <d₁> <d₂> [<d₃> <d₄>]\n`
//! followed by little-endian binary64 blocks, one per component.

use std::fs;
use std::path::Path;

use krflow::{Grid, HermitianField, ScalarField};

pub const MAGIC: &str = "KRFG";
pub const VERSION: u32 = 1;
/// Longest header accepted while searching for the newline.
const MAX_HEADER: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotKind {
    Scalar,
    Hermitian,
}

impl SnapshotKind {
    fn name(&self) -> &'static str {
        match self {
            SnapshotKind::Scalar => "scalar",
            SnapshotKind::Hermitian => "hermitian",
        }
    }

    fn blocks(&self) -> usize {
        match self {
            SnapshotKind::Scalar => 1,
            SnapshotKind::Hermitian => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at byte 0: expected {MAGIC:?}")]
    BadMagic,
    #[error("unsupported snapshot version {version} at byte {offset}")]
    UnsupportedVersion { version: String, offset: usize },
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("size mismatch: data starts at byte {data_offset}, expected {expected} data bytes, found {actual}")]
    SizeMismatch {
        data_offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("snapshot dimensions {found:?} do not match the grid {expected:?}")]
    GridMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("snapshot holds a {found} field, expected {expected}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },
}

/// A decoded snapshot: component blocks in the order
/// `g_zz̄, g_ss̄, Re g_zs̄, Im g_zs̄` for Hermitian fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub kind: SnapshotKind,
    pub dims: Vec<usize>,
    pub blocks: Vec<Vec<f64>>,
}

fn grid_dims(g: &Grid) -> Vec<usize> {
    match g {
        Grid::Base(b) => vec![b.n1, b.n2],
        Grid::Total(t) => t.dims().to_vec(),
    }
}

impl Snapshot {
    pub fn from_scalar(f: &ScalarField) -> Self {
        Self {
            kind: SnapshotKind::Scalar,
            dims: grid_dims(&f.grid),
            blocks: vec![f.values.clone()],
        }
    }

    pub fn from_hermitian(h: &HermitianField) -> Self {
        Self {
            kind: SnapshotKind::Hermitian,
            dims: grid_dims(&h.grid),
            blocks: vec![h.zz.clone(), h.ss.clone(), h.re_zs.clone(), h.im_zs.clone()],
        }
    }

    fn check_grid(&self, grid: &Grid, kind: SnapshotKind) -> Result<(), SnapshotError> {
        if self.kind != kind {
            return Err(SnapshotError::KindMismatch {
                expected: kind.name(),
                found: self.kind.name(),
            });
        }
        let expected = grid_dims(grid);
        if expected != self.dims {
            return Err(SnapshotError::GridMismatch {
                expected,
                found: self.dims.clone(),
            });
        }
        Ok(())
    }

    /// Attach the snapshot to `grid` (the header does not record the chart).
    pub fn to_scalar(&self, grid: Grid) -> Result<ScalarField, SnapshotError> {
        self.check_grid(&grid, SnapshotKind::Scalar)?;
        Ok(ScalarField::new(grid, self.blocks[0].clone()).expect("dimensions checked"))
    }

    pub fn to_hermitian(&self, grid: Grid) -> Result<HermitianField, SnapshotError> {
        self.check_grid(&grid, SnapshotKind::Hermitian)?;
        let mut h = HermitianField::zeros(grid);
        h.zz = self.blocks[0].clone();
        h.ss = self.blocks[1].clone();
        h.re_zs = self.blocks[2].clone();
        h.im_zs = self.blocks[3].clone();
        Ok(h)
    }

    pub fn encode(&self) -> Vec<u8> {
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        let mut out = format!(
            "{MAGIC} {VERSION} {} {}\n",
            self.kind.name(),
            dims.join(" ")
        )
        .into_bytes();
        for b in &self.blocks {
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SnapshotError> {
        if !bytes.starts_with(MAGIC.as_bytes()) {
            return Err(SnapshotError::BadMagic);
        }
        let end = bytes
            .iter()
            .take(MAX_HEADER)
            .position(|&b| b == b'\n')
            .ok_or_else(|| SnapshotError::MalformedHeader {
                offset: bytes.len().min(MAX_HEADER),
                reason: "no newline".into(),
            })?;
        let header =
            std::str::from_utf8(&bytes[..end]).map_err(|e| SnapshotError::MalformedHeader {
                offset: e.valid_up_to(),
                reason: "not ASCII".into(),
            })?;
        let mut offset = 0;
        let mut tokens = Vec::new();
        for tok in header.split(' ') {
            tokens.push((offset, tok));
            offset += tok.len() + 1;
        }
        if tokens.len() < 3 || tokens[0].1 != MAGIC {
            return Err(SnapshotError::MalformedHeader {
                offset: 0,
                reason: format!("header {header:?}"),
            });
        }
        let (voff, version) = tokens[1];
        if version != VERSION.to_string() {
            return Err(SnapshotError::UnsupportedVersion {
                version: version.to_string(),
                offset: voff,
            });
        }
        let (koff, kind) = tokens[2];
        let kind = match kind {
            "scalar" => SnapshotKind::Scalar,
            "hermitian" => SnapshotKind::Hermitian,
            other => {
                return Err(SnapshotError::MalformedHeader {
                    offset: koff,
                    reason: format!("unknown kind {other:?}"),
                })
            }
        };
        let mut dims = Vec::new();
        for &(off, tok) in &tokens[3..] {
            match tok.parse::<usize>() {
                Ok(d) if d > 0 => dims.push(d),
                _ => {
                    return Err(SnapshotError::MalformedHeader {
                        offset: off,
                        reason: format!("bad dimension {tok:?}"),
                    })
                }
            }
        }
        if dims.len() != 2 && dims.len() != 4 {
            return Err(SnapshotError::MalformedHeader {
                offset: koff,
                reason: format!("expected 2 or 4 dimensions, found {}", dims.len()),
            });
        }
        let data_offset = end + 1;
        let n: usize = dims.iter().product();
        let expected = n * kind.blocks() * 8;
        let actual = bytes.len() - data_offset;
        if actual != expected {
            return Err(SnapshotError::SizeMismatch {
                data_offset,
                expected,
                actual,
            });
        }
        let values: Vec<f64> = bytes[data_offset..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let blocks = values.chunks(n).map(<[f64]>::to_vec).collect();
        Ok(Self { kind, dims, blocks })
    }
}

pub fn write_snapshot(snapshot: &Snapshot, path: &Path) -> Result<(), SnapshotError> {
    fs::write(path, snapshot.encode())?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, SnapshotError> {
    Snapshot::decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use krflow::{BaseGrid, TotalGrid};

    #[test]
    fn header_layout() {
        let g = BaseGrid::torus(8, 16).unwrap();
        let f = ScalarField::constant(Grid::Base(g), 1.5);
        let bytes = Snapshot::from_scalar(&f).encode();
        assert!(bytes.starts_with(b"KRFG 1 scalar 8 16\n"));
        assert_eq!(bytes.len(), 19 + 8 * 128);
    }

    #[test]
    fn hermitian_total_roundtrip() {
        let tg = TotalGrid::new(BaseGrid::torus(8, 8).unwrap(), 8, 8).unwrap();
        let mut h = HermitianField::zeros(Grid::Total(tg));
        for i in 0..h.len() {
            h.zz[i] = i as f64 * 0.1;
            h.ss[i] = -(i as f64).sqrt();
            h.re_zs[i] = 1.0 / (i as f64 + 1.0);
            h.im_zs[i] = f64::MIN_POSITIVE * i as f64;
        }
        let s = Snapshot::decode(&Snapshot::from_hermitian(&h).encode()).unwrap();
        assert_eq!(s.to_hermitian(Grid::Total(tg)).unwrap(), h);
        assert!(matches!(
            s.to_scalar(Grid::Total(tg)),
            Err(SnapshotError::KindMismatch { .. })
        ));
    }

    #[test]
    fn version_two_is_rejected() {
        let err = Snapshot::decode(b"KRFG 2 scalar 8 8\n").unwrap_err();
        assert!(
            matches!(err, SnapshotError::UnsupportedVersion { offset: 5, .. }),
            "{err}"
        );
    }

    #[test]
    fn truncated_file_reports_sizes() {
        let g = BaseGrid::torus(8, 8).unwrap();
        let mut bytes = Snapshot::from_scalar(&ScalarField::zeros(Grid::Base(g))).encode();
        bytes.truncate(bytes.len() - 3);
        match Snapshot::decode(&bytes).unwrap_err() {
            SnapshotError::SizeMismatch {
                data_offset,
                expected,
                actual,
            } => {
                assert_eq!((data_offset, expected, actual), (18, 512, 509));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(
            Snapshot::decode(b"KRFX 1 scalar 8 8\n"),
            Err(SnapshotError::BadMagic)
        ));
    }
}
