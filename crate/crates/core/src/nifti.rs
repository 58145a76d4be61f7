//! Minimal NIfTI-1 reader/writer.
//!
//! Supports the subset the pipeline needs: single-file `.nii`, little-endian,
//! 3D/4D, datatypes uint8 / int16 / int32 / float32 / float64. Values are
//! returned as `f32` without applying scale factors, so raw intensities stay
//! inspectable. Voxel order is x-fastest (x, y, z, t) as in the standard.

use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const HEADER_SIZE: i32 = 348;
const VOX_OFFSET: f32 = 352.0;
const MAGIC: &[u8; 4] = b"n+1\0";

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_INT32: i16 = 8;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;

/// A decoded volume: logical dims in (x, y, z, t) order with x varying
/// fastest in `data`, and voxel spacing for the first three axes.
#[derive(Debug, Clone)]
pub struct RawVolume {
    pub dims: Vec<usize>,
    pub spacing: [f32; 3],
    pub data: Vec<f32>,
}

impl RawVolume {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read(path: &Path) -> Result<RawVolume> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let ioe = |e: std::io::Error| Error::io(path, e);

    let sizeof_hdr = r.read_i32::<LittleEndian>().map_err(ioe)?;
    if sizeof_hdr != HEADER_SIZE {
        return Err(Error::Validation(format!(
            "{}: not a little-endian NIfTI-1 file (sizeof_hdr = {sizeof_hdr})",
            path.display()
        )));
    }
    let mut skip = [0u8; 36];
    r.read_exact(&mut skip).map_err(ioe)?; // data_type..dim_info
    let mut dim = [0i16; 8];
    for d in dim.iter_mut() {
        *d = r.read_i16::<LittleEndian>().map_err(ioe)?;
    }
    let mut skip = [0u8; 14];
    r.read_exact(&mut skip).map_err(ioe)?; // intent_p1..intent_code
    let datatype = r.read_i16::<LittleEndian>().map_err(ioe)?;
    let _bitpix = r.read_i16::<LittleEndian>().map_err(ioe)?;
    let _slice_start = r.read_i16::<LittleEndian>().map_err(ioe)?;
    let mut pixdim = [0f32; 8];
    for p in pixdim.iter_mut() {
        *p = r.read_f32::<LittleEndian>().map_err(ioe)?;
    }
    let vox_offset = r.read_f32::<LittleEndian>().map_err(ioe)?;
    // rest of the header is irrelevant here except the magic
    let mut rest = [0u8; 348 - 112];
    r.read_exact(&mut rest).map_err(ioe)?;
    let magic = &rest[rest.len() - 4..];
    if magic != MAGIC && magic != b"ni1\0" {
        return Err(Error::Validation(format!(
            "{}: bad NIfTI magic {magic:?}",
            path.display()
        )));
    }

    let ndim = dim[0] as usize;
    if !(1..=4).contains(&ndim) {
        return Err(Error::Validation(format!(
            "{}: unsupported dimensionality {ndim}",
            path.display()
        )));
    }
    let dims: Vec<usize> = dim[1..=ndim].iter().map(|&d| d.max(1) as usize).collect();
    let n: usize = dims.iter().product();

    // skip to the data offset
    let offset = vox_offset.max(352.0) as usize;
    if offset > 348 {
        let mut pad = vec![0u8; offset - 348];
        r.read_exact(&mut pad).map_err(ioe)?;
    }

    let mut data = Vec::with_capacity(n);
    match datatype {
        DT_UINT8 => {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf).map_err(ioe)?;
            data.extend(buf.into_iter().map(f32::from));
        }
        DT_INT16 => {
            for _ in 0..n {
                data.push(f32::from(r.read_i16::<LittleEndian>().map_err(ioe)?));
            }
        }
        DT_INT32 => {
            for _ in 0..n {
                data.push(r.read_i32::<LittleEndian>().map_err(ioe)? as f32);
            }
        }
        DT_FLOAT32 => {
            for _ in 0..n {
                data.push(r.read_f32::<LittleEndian>().map_err(ioe)?);
            }
        }
        DT_FLOAT64 => {
            for _ in 0..n {
                data.push(r.read_f64::<LittleEndian>().map_err(ioe)? as f32);
            }
        }
        other => {
            return Err(Error::Validation(format!(
                "{}: unsupported NIfTI datatype {other}",
                path.display()
            )));
        }
    }

    Ok(RawVolume {
        dims,
        spacing: [pixdim[1], pixdim[2], pixdim[3]],
        data,
    })
}

/// Writes `data` (x-fastest, length = product of `dims`) as float32 or uint8.
pub fn write(path: &Path, dims: &[usize], spacing: [f32; 3], data: &[f32], datatype: i16) -> Result<()> {
    assert!(
        (1..=4).contains(&dims.len()),
        "nifti supports 1..=4 dims here"
    );
    let n: usize = dims.iter().product();
    assert_eq!(n, data.len(), "data length vs dims");

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let ioe = |e: std::io::Error| Error::io(path, e);

    let bitpix: i16 = match datatype {
        DT_UINT8 => 8,
        DT_FLOAT32 => 32,
        other => {
            return Err(Error::Validation(format!(
                "writer supports uint8/float32, got datatype {other}"
            )))
        }
    };

    w.write_i32::<LittleEndian>(HEADER_SIZE).map_err(ioe)?;
    w.write_all(&[0u8; 36]).map_err(ioe)?; // data_type, db_name, extents, session_error, regular, dim_info
    let mut dim = [1i16; 8];
    dim[0] = dims.len() as i16;
    for (i, &d) in dims.iter().enumerate() {
        dim[i + 1] = d as i16;
    }
    for d in dim {
        w.write_i16::<LittleEndian>(d).map_err(ioe)?;
    }
    w.write_all(&[0u8; 14]).map_err(ioe)?; // intent_p1..intent_code
    w.write_i16::<LittleEndian>(datatype).map_err(ioe)?;
    w.write_i16::<LittleEndian>(bitpix).map_err(ioe)?;
    w.write_i16::<LittleEndian>(0).map_err(ioe)?; // slice_start
    let mut pixdim = [0f32; 8];
    pixdim[0] = 1.0;
    pixdim[1] = spacing[0];
    pixdim[2] = spacing[1];
    pixdim[3] = spacing[2];
    pixdim[4] = 1.0;
    for p in pixdim {
        w.write_f32::<LittleEndian>(p).map_err(ioe)?;
    }
    w.write_f32::<LittleEndian>(VOX_OFFSET).map_err(ioe)?;
    w.write_f32::<LittleEndian>(1.0).map_err(ioe)?; // scl_slope
    w.write_f32::<LittleEndian>(0.0).map_err(ioe)?; // scl_inter
    w.write_all(&[0u8; 2 + 1 + 1]).map_err(ioe)?; // slice_end, slice_code, xyzt_units
    w.write_f32::<LittleEndian>(0.0).map_err(ioe)?; // cal_max
    w.write_f32::<LittleEndian>(0.0).map_err(ioe)?; // cal_min
    w.write_f32::<LittleEndian>(0.0).map_err(ioe)?; // slice_duration
    w.write_f32::<LittleEndian>(0.0).map_err(ioe)?; // toffset
    w.write_all(&[0u8; 8]).map_err(ioe)?; // glmax, glmin
    w.write_all(&[0u8; 80]).map_err(ioe)?; // descrip
    w.write_all(&[0u8; 24]).map_err(ioe)?; // aux_file
    w.write_i16::<LittleEndian>(0).map_err(ioe)?; // qform_code
    w.write_i16::<LittleEndian>(0).map_err(ioe)?; // sform_code
    for _ in 0..6 {
        w.write_f32::<LittleEndian>(0.0).map_err(ioe)?; // quatern/qoffset
    }
    for i in 0..3 {
        for j in 0..4 {
            let v = if i == j { 1.0 } else { 0.0 };
            w.write_f32::<LittleEndian>(v).map_err(ioe)?; // srow
        }
    }
    w.write_all(&[0u8; 16]).map_err(ioe)?; // intent_name
    w.write_all(MAGIC).map_err(ioe)?;
    w.write_all(&[0u8; 4]).map_err(ioe)?; // extension indicator

    match datatype {
        DT_UINT8 => {
            let buf: Vec<u8> = data.iter().map(|&v| v as u8).collect();
            w.write_all(&buf).map_err(ioe)?;
        }
        DT_FLOAT32 => {
            for &v in data {
                w.write_f32::<LittleEndian>(v).map_err(ioe)?;
            }
        }
        _ => unreachable!(),
    }
    w.flush().map_err(ioe)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_f32_4d() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.nii");
        let dims = [3usize, 4, 2, 5];
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|i| i as f32 * 0.5 - 7.0).collect();
        write(&path, &dims, [1.25, 1.25, 8.0], &data, DT_FLOAT32).unwrap();
        let raw = read(&path).unwrap();
        assert_eq!(raw.dims, vec![3, 4, 2, 5]);
        assert_eq!(raw.spacing, [1.25, 1.25, 8.0]);
        assert_eq!(raw.data, data);
    }

    #[test]
    fn roundtrip_u8_3d() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.nii");
        let dims = [4usize, 4, 3];
        let data: Vec<f32> = (0..48).map(|i| (i % 4) as f32).collect();
        write(&path, &dims, [1.0, 1.0, 10.0], &data, DT_UINT8).unwrap();
        let raw = read(&path).unwrap();
        assert_eq!(raw.dims, vec![4, 4, 3]);
        assert_eq!(raw.data, data);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nii");
        std::fs::write(&path, vec![9u8; 700]).unwrap();
        assert!(read(&path).is_err());
    }
}
