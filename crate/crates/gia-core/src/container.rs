//! GIAR v1 container: the self-contained on-disk format for raw mosaics,
//! RGB images and packed network inputs.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "GIAR"
//! version u8       1
//! kind    u8       0 = raw mosaic, 1 = RGB image, 2 = packed input
//! cfa     u8       0 = none, 1 = Bayer, 2 = X-Trans
//! h       u32
//! w       u32
//! black   f32
//! white   f32
//! expo    f32      exposure time in seconds
//! payload          kind 0: h*w u16 counts
//!                  kind 1: 3*h*w f32, CHW order
//!                  kind 2: c*h*w f32, CHW order (c = 4 Bayer / 9 X-Trans)
//! ```
//!
//! For kind 1 the black/white fields carry the nominal value range (0, 1).
//! Kind 2 stores an already normalized and amplified input at packed
//! resolution; its `cfa` field determines the channel count.

use crate::error::{Error, Result};
use crate::raw::{Cfa, RawFrame};
use crate::tensor::{Shape, Tensor};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"GIAR";
const VERSION: u8 = 1;

/// Contents of a GIAR container.
#[derive(Clone, Debug)]
pub enum Payload {
    Raw(RawFrame),
    Rgb {
        /// `(1, 3, h, w)` values, nominally in `[0, 1]`.
        tensor: Tensor,
        exposure_s: f32,
    },
    Packed {
        /// `(1, c, h, w)` normalized and amplified input.
        tensor: Tensor,
        cfa: Cfa,
        exposure_s: f32,
    },
}

fn cfa_code(cfa: Cfa) -> u8 {
    match cfa {
        Cfa::Bayer => 1,
        Cfa::XTrans => 2,
    }
}

fn cfa_from_code(path: &str, code: u8) -> Result<Cfa> {
    match code {
        1 => Ok(Cfa::Bayer),
        2 => Ok(Cfa::XTrans),
        other => Err(Error::Inconsistent {
            path: path.to_string(),
            what: format!("cfa code {other} where a CFA is required"),
        }),
    }
}

/// Writes a raw mosaic container.
pub fn write_raw(path: &Path, frame: &RawFrame) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(
        &mut w,
        0,
        cfa_code(frame.cfa),
        frame.height as u32,
        frame.width as u32,
        frame.black_level,
        frame.white_level,
        frame.exposure_s,
    )?;
    let mut buf = Vec::with_capacity(frame.mosaic.len() * 2);
    for v in &frame.mosaic {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Writes an RGB image container; `tensor` must be `(1, 3, h, w)`.
pub fn write_rgb(path: &Path, tensor: &Tensor, exposure_s: f32) -> Result<()> {
    let s = tensor.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::Invalid {
            op: "write_rgb",
            what: format!("expected (1,3,h,w), got {s}"),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, 1, 0, s.h as u32, s.w as u32, 0.0, 1.0, exposure_s)?;
    write_f32s(&mut w, tensor.data())?;
    w.flush()?;
    Ok(())
}

/// Writes a packed-input container; channel count must match the CFA.
pub fn write_packed(path: &Path, tensor: &Tensor, cfa: Cfa, exposure_s: f32) -> Result<()> {
    let s = tensor.shape();
    if s.n != 1 || s.c != cfa.packed_channels() {
        return Err(Error::Invalid {
            op: "write_packed",
            what: format!("expected (1,{},h,w), got {s}", cfa.packed_channels()),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_header(
        &mut w,
        2,
        cfa_code(cfa),
        s.h as u32,
        s.w as u32,
        0.0,
        1.0,
        exposure_s,
    )?;
    write_f32s(&mut w, tensor.data())?;
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_header(
    w: &mut impl Write,
    kind: u8,
    cfa: u8,
    h: u32,
    width: u32,
    black: f32,
    white: f32,
    exposure: f32,
) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, kind, cfa])?;
    w.write_all(&h.to_le_bytes())?;
    w.write_all(&width.to_le_bytes())?;
    w.write_all(&black.to_le_bytes())?;
    w.write_all(&white.to_le_bytes())?;
    w.write_all(&exposure.to_le_bytes())?;
    Ok(())
}

fn write_f32s(w: &mut impl Write, data: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8], path: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated {
                path: path.to_string(),
            }
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read, path: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read, path: &str) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b, path)?;
    Ok(f32::from_le_bytes(b))
}

/// Reads any GIAR container.
pub fn read(path: &Path) -> Result<Payload> {
    let p = path.display().to_string();
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic, &p)?;
    if magic != MAGIC {
        return Err(Error::BadMagic { path: p });
    }
    let mut head = [0u8; 3];
    read_exact_or_truncated(&mut r, &mut head, &p)?;
    let [version, kind, cfa_byte] = head;
    if version != VERSION {
        return Err(Error::UnsupportedVersion { path: p, version });
    }
    let h = read_u32(&mut r, &p)? as usize;
    let w = read_u32(&mut r, &p)? as usize;
    let black = read_f32(&mut r, &p)?;
    let white = read_f32(&mut r, &p)?;
    let exposure = read_f32(&mut r, &p)?;
    if h == 0 || w == 0 {
        return Err(Error::Inconsistent {
            path: p,
            what: format!("zero dimension {h}x{w}"),
        });
    }

    match kind {
        0 => {
            let cfa = cfa_from_code(&p, cfa_byte)?;
            let mut buf = vec![0u8; h * w * 2];
            read_exact_or_truncated(&mut r, &mut buf, &p)?;
            expect_eof(&mut r, &p)?;
            let mosaic: Vec<u16> = buf
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            let frame =
                RawFrame::new(mosaic, h, w, cfa, black, white, exposure).map_err(|e| {
                    Error::Inconsistent {
                        path: path.display().to_string(),
                        what: e.to_string(),
                    }
                })?;
            Ok(Payload::Raw(frame))
        }
        1 => {
            if cfa_byte != 0 {
                return Err(Error::Inconsistent {
                    path: p,
                    what: format!("RGB image with cfa code {cfa_byte}"),
                });
            }
            let tensor = read_tensor(&mut r, &p, 3, h, w)?;
            expect_eof(&mut r, &p)?;
            Ok(Payload::Rgb {
                tensor,
                exposure_s: exposure,
            })
        }
        2 => {
            let cfa = cfa_from_code(&p, cfa_byte)?;
            let tensor = read_tensor(&mut r, &p, cfa.packed_channels(), h, w)?;
            expect_eof(&mut r, &p)?;
            Ok(Payload::Packed {
                tensor,
                cfa,
                exposure_s: exposure,
            })
        }
        other => Err(Error::Inconsistent {
            path: p,
            what: format!("unknown payload kind {other}"),
        }),
    }
}

fn read_tensor(r: &mut impl Read, path: &str, c: usize, h: usize, w: usize) -> Result<Tensor> {
    let mut buf = vec![0u8; c * h * w * 4];
    read_exact_or_truncated(r, &mut buf, path)?;
    let data: Vec<f32> = buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::from_vec(Shape::new(1, c, h, w), data)
}

fn expect_eof(r: &mut impl Read, path: &str) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Inconsistent {
            path: path.to_string(),
            what: "trailing bytes after payload".to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("gia-container-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn raw_roundtrip_is_field_exact_including_extremes() {
        let mut rng = Rng::new(1);
        let mut mosaic: Vec<u16> = (0..8 * 6).map(|_| (rng.next_u64() & 0xffff) as u16).collect();
        mosaic[0] = 0;
        mosaic[1] = 65535;
        let frame = RawFrame::new(mosaic, 8, 6, Cfa::Bayer, 512.25, 16383.0, 0.0333).unwrap();
        let path = tmp("roundtrip.giar");
        write_raw(&path, &frame).unwrap();
        match read(&path).unwrap() {
            Payload::Raw(f) => {
                assert_eq!(f.mosaic, frame.mosaic);
                assert_eq!(f.height, 8);
                assert_eq!(f.width, 6);
                assert_eq!(f.cfa, Cfa::Bayer);
                assert_eq!(f.black_level.to_bits(), frame.black_level.to_bits());
                assert_eq!(f.white_level.to_bits(), frame.white_level.to_bits());
                assert_eq!(f.exposure_s.to_bits(), frame.exposure_s.to_bits());
            }
            other => panic!("wrong payload {other:?}"),
        }
    }

    #[test]
    fn rgb_and_packed_roundtrip() {
        let rgb = Tensor::from_fn(Shape::new(1, 3, 4, 5), |_, c, h, w| {
            (c * 20 + h * 5 + w) as f32 * 0.01
        });
        let path = tmp("rgb.giar");
        write_rgb(&path, &rgb, 10.0).unwrap();
        match read(&path).unwrap() {
            Payload::Rgb { tensor, exposure_s } => {
                assert_eq!(tensor.data(), rgb.data());
                assert_eq!(exposure_s, 10.0);
            }
            other => panic!("wrong payload {other:?}"),
        }

        let packed = Tensor::from_fn(Shape::new(1, 9, 2, 2), |_, c, h, w| (c + h + w) as f32);
        let path = tmp("packed.giar");
        write_packed(&path, &packed, Cfa::XTrans, 0.1).unwrap();
        match read(&path).unwrap() {
            Payload::Packed { tensor, cfa, .. } => {
                assert_eq!(tensor.data(), packed.data());
                assert_eq!(cfa, Cfa::XTrans);
            }
            other => panic!("wrong payload {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_a_truncation_error() {
        let frame = RawFrame::new(vec![7; 16], 4, 4, Cfa::Bayer, 0.0, 1.0, 0.1).unwrap();
        let path = tmp("trunc.giar");
        write_raw(&path, &frame).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read(&path), Err(Error::Truncated { .. })));

        // also when the header itself is cut short
        std::fs::write(&path, &bytes[..9]).unwrap();
        assert!(matches!(read(&path), Err(Error::Truncated { .. })));
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let frame = RawFrame::new(vec![7; 16], 4, 4, Cfa::Bayer, 0.0, 1.0, 0.1).unwrap();
        let path = tmp("magic.giar");
        write_raw(&path, &frame).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn version_and_consistency_checks() {
        let frame = RawFrame::new(vec![7; 16], 4, 4, Cfa::Bayer, 0.0, 1.0, 0.1).unwrap();
        let path = tmp("version.giar");
        write_raw(&path, &frame).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9; // version
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read(&path),
            Err(Error::UnsupportedVersion { version: 9, .. })
        ));

        // raw frame with dims inconsistent with its CFA
        let mut bytes = std::fs::read(tmp("version.giar")).unwrap();
        bytes[4] = 1;
        bytes[6] = 2; // claim X-Trans; 4x4 is not divisible by 6
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read(&path), Err(Error::Inconsistent { .. })));
    }
}
