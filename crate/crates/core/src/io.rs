//! Binary dataset (`HMB1`) and checkpoint (`HMC1`) files.
//!
//! All integers are `u32` and all floats `f64`, little-endian. Complex
//! numbers are stored as `(re, im)` pairs.
//!
//! Dataset layout:
//!
//! ```text
//! "HMB1" | version | N_t | K | L | count | snr_db | flags
//! count x (N_t x K complex, row-major, antenna-major)
//! ```
//!
//! The low 16 bits of `flags` hold the surface width `n_x` (so `n_y = N_t / n_x`).
//!
//! Checkpoint layout:
//!
//! ```text
//! "HMC1" | version | D (layer count) | C_0 .. C_D
//! tensors in `GgnnParams::tensors` order, each entry as a complex pair
//! FNV-1a 64 checksum of the tensor bytes (u64)
//! ```

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use crate::error::{Error, Result};
use crate::ggnn::GgnnParams;
use crate::holo::{noise_var_from_snr_db, ChannelSample, SurfaceConfig};
use crate::linalg::CMatrix;
use crate::scalar::C;

pub const DATASET_MAGIC: [u8; 4] = *b"HMB1";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HMC1";
pub const FORMAT_VERSION: u32 = 1;
const DATASET_HEADER_LEN: usize = 4 + 4 * 5 + 8 + 4;

/// Channels sharing one geometry and SNR, with unit power budget.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n_x: usize,
    pub n_y: usize,
    pub n_rf: usize,
    pub n_users: usize,
    pub snr_db: f64,
    pub samples: Vec<ChannelSample<f64>>,
}

impl Dataset {
    pub fn n_t(&self) -> usize {
        self.n_x * self.n_y
    }

    /// Surface with default spacing and carrier for this geometry.
    pub fn surface(&self) -> Result<SurfaceConfig<f64>> {
        SurfaceConfig::new(self.n_x, self.n_y, self.n_rf)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n_t = self.n_t();
        if self.n_x > u16::MAX as usize {
            return Err(Error::arg(format!("n_x = {} does not fit the header", self.n_x)));
        }
        let mut out = Vec::with_capacity(DATASET_HEADER_LEN + self.samples.len() * n_t * self.n_users * 16);
        out.extend_from_slice(&DATASET_MAGIC);
        for v in [
            FORMAT_VERSION,
            to_u32(n_t)?,
            to_u32(self.n_users)?,
            to_u32(self.n_rf)?,
            to_u32(self.samples.len())?,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.snr_db.to_le_bytes());
        out.extend_from_slice(&(self.n_x as u32).to_le_bytes());
        for (i, s) in self.samples.iter().enumerate() {
            if s.h.shape() != (n_t, self.n_users) {
                return Err(Error::dim(format!(
                    "sample {i} has shape {:?}, expected ({n_t}, {})",
                    s.h.shape(),
                    self.n_users
                )));
            }
            put_complex(&mut out, s.h.as_slice());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(&DATASET_MAGIC)?;
        r.version()?;
        let n_t = r.u32()? as usize;
        let n_users = r.u32()? as usize;
        let n_rf = r.u32()? as usize;
        let count = r.u32()? as usize;
        let snr_at = r.offset();
        let snr_db = r.f64()?;
        if !snr_db.is_finite() {
            return Err(Error::Format {
                offset: snr_at,
                msg: "non-finite SNR".into(),
            });
        }
        let flags_at = r.offset();
        let n_x = (r.u32()? & 0xffff) as usize;
        if n_t == 0 || n_users == 0 || n_rf == 0 {
            return Err(Error::Format {
                offset: 4,
                msg: "N_t, K and L must be positive".into(),
            });
        }
        if n_x == 0 || n_t % n_x != 0 {
            return Err(Error::Format {
                offset: flags_at,
                msg: format!("surface width {n_x} does not divide N_t = {n_t}"),
            });
        }
        let per_sample = n_t * n_users;
        let expected = count.checked_mul(per_sample * 16).ok_or_else(|| Error::Format {
            offset: r.offset(),
            msg: "declared sample count overflows".into(),
        })?;
        if r.remaining() != expected {
            return Err(Error::Format {
                offset: r.offset(),
                msg: format!("body holds {} bytes but {count} samples need {expected}", r.remaining()),
            });
        }
        let noise_var = noise_var_from_snr_db(snr_db);
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let data = r.complex_vec(per_sample)?;
            let h = CMatrix::from_vec(n_t, n_users, data)?;
            samples.push(ChannelSample::new(h, noise_var, 1.0)?);
        }
        Ok(Self {
            n_x,
            n_y: n_t / n_x,
            n_rf,
            n_users,
            snr_db,
            samples,
        })
    }
}

pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    write_atomic(path.as_ref(), &data.to_bytes()?)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_bytes(&bytes)
}

pub fn checkpoint_to_bytes(params: &GgnnParams<f64>) -> Result<Vec<u8>> {
    let dims = params.dims();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(params.n_layers())?.to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&to_u32(d)?.to_le_bytes());
    }
    let body_start = out.len();
    for (_, t) in params.tensors() {
        put_complex(&mut out, t.as_slice());
    }
    let sum = checksum(&out[body_start..]);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<GgnnParams<f64>> {
    let mut r = Reader::new(bytes);
    r.magic(&CHECKPOINT_MAGIC)?;
    r.version()?;
    let layers_at = r.offset();
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 4096 {
        return Err(Error::Format {
            offset: layers_at,
            msg: format!("implausible layer count {n_layers}"),
        });
    }
    let mut dims = Vec::with_capacity(n_layers + 1);
    for _ in 0..=n_layers {
        let at = r.offset();
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(Error::Format {
                offset: at,
                msg: "zero layer width".into(),
            });
        }
        dims.push(d);
    }
    let mut params = GgnnParams::zeros(&dims)?;
    let body_start = r.offset() as usize;
    let body_len: usize = params.tensors().iter().map(|(_, t)| t.as_slice().len() * 16).sum();
    if r.remaining() != body_len + 8 {
        return Err(Error::Format {
            offset: r.offset(),
            msg: format!(
                "expected {} bytes of tensors and checksum, found {}",
                body_len + 8,
                r.remaining()
            ),
        });
    }
    for t in params.tensors_mut() {
        let data = r.complex_vec(t.as_slice().len())?;
        t.as_mut_slice().copy_from_slice(&data);
    }
    let stored = r.u64()?;
    let computed = checksum(&bytes[body_start..body_start + body_len]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(params)
}

pub fn write_checkpoint(path: impl AsRef<Path>, params: &GgnnParams<f64>) -> Result<()> {
    write_atomic(path.as_ref(), &checkpoint_to_bytes(params)?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<GgnnParams<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::arg(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::arg(format!("{n} does not fit in a u32 header field")))
}

fn put_complex(out: &mut Vec<u8>, data: &[C<f64>]) {
    for z in data {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.remaining() < N {
            return Err(Error::Format {
                offset: self.offset(),
                msg: format!("unexpected end of file (needed {N} bytes, {} left)", self.remaining()),
            });
        }
        let mut buf = [0u8; N];
        buf.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        Ok(buf)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take::<4>()?;
        if &got != expected {
            return Err(Error::Format {
                offset: 0,
                msg: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(expected)
                ),
            });
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let at = self.offset();
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format {
                offset: at,
                msg: format!("unsupported version {v}"),
            });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn complex_vec(&mut self, n: usize) -> Result<Vec<C<f64>>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let at = self.offset();
            let z = C::new(self.f64()?, self.f64()?);
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::Format {
                    offset: at,
                    msg: "non-finite value".into(),
                });
            }
            out.push(z);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::holo::{generate_samples, DEFAULT_PATH_VARIANCES};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_dataset(count: usize) -> Dataset {
        let cfg = SurfaceConfig::new(3, 2, 2).unwrap();
        let samples = generate_samples(&cfg, 2, &DEFAULT_PATH_VARIANCES, 5.0, count, 11).unwrap();
        let samples = samples
            .into_iter()
            .map(|s| ChannelSample::new(s.h, s.noise_var, s.p_max).unwrap())
            .collect();
        Dataset {
            n_x: 3,
            n_y: 2,
            n_rf: 2,
            n_users: 2,
            snr_db: 5.0,
            samples,
        }
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let d = small_dataset(4);
        let back = Dataset::from_bytes(&d.to_bytes().unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let d = small_dataset(0);
        let bytes = d.to_bytes().unwrap();
        assert_eq!(bytes.len(), DATASET_HEADER_LEN);
        assert!(Dataset::from_bytes(&bytes).unwrap().samples.is_empty());
    }

    #[test]
    fn truncated_dataset_reports_offset() {
        let bytes = small_dataset(2).to_bytes().unwrap();
        match Dataset::from_bytes(&bytes[..bytes.len() - 3]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, DATASET_HEADER_LEN as u64),
            other => panic!("unexpected {other:?}"),
        }
        match Dataset::from_bytes(&bytes[..10]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Dataset::from_bytes(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip_and_checksum() {
        let p = GgnnParams::<f64>::random(&[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let bytes = checkpoint_to_bytes(&p).unwrap();
        assert_eq!(checkpoint_from_bytes(&bytes).unwrap(), p);
        let mut bad = bytes.clone();
        let mid = bytes.len() / 2;
        bad[mid] ^= 0x01;
        assert!(matches!(checkpoint_from_bytes(&bad), Err(Error::Checksum { .. })));
        assert!(matches!(
            checkpoint_from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn checksum_is_fnv1a() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(checksum(b""), 0xcbf29ce484222325);
        assert_eq!(checksum(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
