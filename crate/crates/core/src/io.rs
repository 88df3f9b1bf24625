//! Binary snapshots of fields and chaos lattices.
//!
//! Field file (`ICLF`): magic, version `u16`, model tag `u8` (0 = sine
//! series coefficients, 1 = lattice values, 2 = periodic lattice values),
//! dims `(u32, u32)`, spacing `f64`, origin `(f64, f64)`, then the row-major
//! `f64` payload. Chaos file (`ICCF`): magic, version, beta, eps, dims,
//! spacing, origin, then interleaved `(re, im)` pairs. All little-endian.

use std::io::{Read, Write};

use ndarray::Array2;
use num_complex::Complex64;

use crate::chaos::ChaosField;
use crate::error::{Error, Result};
use crate::field::{LatticeField, SpectralField};

pub const FIELD_MAGIC: &[u8; 4] = b"ICLF";
pub const CHAOS_MAGIC: &[u8; 4] = b"ICCF";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum FieldSnapshot {
    Spectral(SpectralField),
    Lattice(LatticeField),
}

fn put_f64(w: &mut impl Write, x: f64) -> Result<()> {
    Ok(w.write_all(&x.to_le_bytes())?)
}

fn get<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated snapshot".into()),
        _ => Error::Io(e),
    })?;
    Ok(b)
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(get::<8>(r)?))
}

fn header(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let m = get::<4>(r)?;
    if &m != magic {
        return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(&m))));
    }
    let v = u16::from_le_bytes(get::<2>(r)?);
    if v != VERSION {
        return Err(Error::Format(format!("unsupported version {v}")));
    }
    Ok(())
}

fn dims(r: &mut impl Read) -> Result<(usize, usize)> {
    let a = u32::from_le_bytes(get::<4>(r)?) as usize;
    let b = u32::from_le_bytes(get::<4>(r)?) as usize;
    if a.checked_mul(b).is_none_or(|n| n > 1 << 31) {
        return Err(Error::Format(format!("implausible dims {a} x {b}")));
    }
    Ok((a, b))
}

fn put_dims(w: &mut impl Write, (a, b): (usize, usize)) -> Result<()> {
    let c = |x: usize| u32::try_from(x).map_err(|_| Error::Format("dimension exceeds u32".into()));
    w.write_all(&c(a)?.to_le_bytes())?;
    w.write_all(&c(b)?.to_le_bytes())?;
    Ok(())
}

pub fn write_field(w: &mut impl Write, f: &FieldSnapshot) -> Result<()> {
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let (tag, data, spacing, origin) = match f {
        FieldSnapshot::Spectral(s) => (0u8, &s.coeffs, 1.0 / (s.modes as f64 + 1.0), [0.0, 0.0]),
        FieldSnapshot::Lattice(l) => (if l.periodic { 2 } else { 1 }, &l.values, l.spacing, l.origin),
    };
    w.write_all(&[tag])?;
    put_dims(w, data.dim())?;
    put_f64(w, spacing)?;
    put_f64(w, origin[0])?;
    put_f64(w, origin[1])?;
    for &x in data.iter() {
        put_f64(w, x)?;
    }
    Ok(())
}

pub fn read_field(r: &mut impl Read) -> Result<FieldSnapshot> {
    header(r, FIELD_MAGIC)?;
    let tag = get::<1>(r)?[0];
    let d = dims(r)?;
    let spacing = get_f64(r)?;
    let origin = [get_f64(r)?, get_f64(r)?];
    let mut v = Vec::with_capacity(d.0 * d.1);
    for _ in 0..d.0 * d.1 {
        v.push(get_f64(r)?);
    }
    let data = Array2::from_shape_vec(d, v).expect("length checked");
    match tag {
        0 => {
            if d.0 != d.1 {
                return Err(Error::Format("sine-series coefficients must be square".into()));
            }
            Ok(FieldSnapshot::Spectral(SpectralField { modes: d.0, coeffs: data }))
        }
        1 | 2 => Ok(FieldSnapshot::Lattice(LatticeField { values: data, origin, spacing, periodic: tag == 2 })),
        t => Err(Error::Format(format!("unknown model tag {t}"))),
    }
}

pub fn write_chaos(w: &mut impl Write, c: &ChaosField) -> Result<()> {
    w.write_all(CHAOS_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    put_f64(w, c.beta)?;
    put_f64(w, c.eps)?;
    put_dims(w, c.values.dim())?;
    put_f64(w, c.spacing)?;
    put_f64(w, c.origin[0])?;
    put_f64(w, c.origin[1])?;
    for z in c.values.iter() {
        put_f64(w, z.re)?;
        put_f64(w, z.im)?;
    }
    Ok(())
}

pub fn read_chaos(r: &mut impl Read) -> Result<ChaosField> {
    header(r, CHAOS_MAGIC)?;
    let beta = get_f64(r)?;
    let eps = get_f64(r)?;
    let d = dims(r)?;
    let spacing = get_f64(r)?;
    let origin = [get_f64(r)?, get_f64(r)?];
    let mut v = Vec::with_capacity(d.0 * d.1);
    for _ in 0..d.0 * d.1 {
        let re = get_f64(r)?;
        v.push(Complex64::new(re, get_f64(r)?));
    }
    let values = Array2::from_shape_vec(d, v).expect("length checked");
    Ok(ChaosField::from_values(values, origin, spacing, beta, eps))
}
