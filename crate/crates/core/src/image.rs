//! Minimal raster containers and netpbm I/O.
//!
//! RGB images use binary PPM (`P6`, 8-bit). Label maps use binary PGM
//! (`P5`); 16-bit samples are big-endian as netpbm requires, and 65535 marks
//! an UNASSIGNED pixel.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::ObjectId;

/// Label value reserved for UNASSIGNED pixels in 16-bit PGM files.
pub const PGM_UNASSIGNED: u16 = u16::MAX;

/// Interleaved RGB in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize * 3],
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            data: rgb.iter().copied().cycle().take(n * 3).collect(),
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    /// Keeps pixels where `keep` is true and blacks out the rest.
    pub fn masked(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut out = self.clone();
        for (i, px) in out.data.chunks_exact_mut(3).enumerate() {
            if !keep(i) {
                px.fill(0.0);
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend(img.to_rgb8());
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let header = parse_header(bytes, b"P6")?;
    let samples = read_samples(bytes, &header, 3)?;
    let scale = f32::from(header.maxval);
    Ok(RgbImage {
        width: header.width,
        height: header.height,
        data: samples.into_iter().map(|s| f32::from(s) / scale).collect(),
    })
}

/// Writes a 16-bit PGM.
pub fn write_pgm16(path: &Path, width: u32, height: u32, values: &[u16]) -> Result<()> {
    std::fs::write(path, encode_pgm16(width, height, values)).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm16(width: u32, height: u32, values: &[u16]) -> Vec<u8> {
    assert_eq!(values.len(), width as usize * height as usize);
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in values {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes
}

/// Writes an 8-bit PGM.
pub fn write_pgm8(path: &Path, width: u32, height: u32, values: &[u8]) -> Result<()> {
    assert_eq!(values.len(), width as usize * height as usize);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(values);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an 8- or 16-bit PGM into `(width, height, samples)`.
pub fn read_pgm(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(u32, u32, Vec<u16>)> {
    let header = parse_header(bytes, b"P5")?;
    let samples = read_samples(bytes, &header, 1)?;
    Ok((header.width, header.height, samples))
}

pub fn labels_to_pgm(labels: &[Option<ObjectId>]) -> Result<Vec<u16>> {
    labels
        .iter()
        .map(|l| match l {
            None => Ok(PGM_UNASSIGNED),
            Some(id) if *id < u32::from(PGM_UNASSIGNED) => Ok(*id as u16),
            Some(id) => Err(Error::Image(format!("object id {id} does not fit a 16-bit label map"))),
        })
        .collect()
}

pub fn pgm_to_labels(values: &[u16]) -> Vec<Option<ObjectId>> {
    values
        .iter()
        .map(|&v| (v != PGM_UNASSIGNED).then_some(ObjectId::from(v)))
        .collect()
}

/// Raw little-endian f32, channel-planar (`C x H x W`), no header.
/// `interleaved` is `H x W x C`.
pub fn write_planar_f32(path: &Path, interleaved: &[f32], channels: usize) -> Result<()> {
    std::fs::write(path, planar_f32_bytes(interleaved, channels)).map_err(|e| Error::io(path, e))
}

pub fn planar_f32_bytes(interleaved: &[f32], channels: usize) -> Vec<u8> {
    let pixels = interleaved.len() / channels;
    let mut out = Vec::with_capacity(interleaved.len() * 4);
    for c in 0..channels {
        for p in 0..pixels {
            out.extend_from_slice(&interleaved[p * channels + c].to_le_bytes());
        }
    }
    out
}

struct Header {
    width: u32,
    height: u32,
    maxval: u16,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Image(format!(
            "expected {} netpbm magic",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text
            .parse()
            .map_err(|_| Error::Image("malformed netpbm header".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Image("malformed netpbm header".into()));
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Image(format!("unsupported maxval {maxval}")));
    }
    Ok(Header {
        width,
        height,
        maxval: maxval as u16,
        data_start: pos + 1,
    })
}

fn read_samples(bytes: &[u8], h: &Header, channels: usize) -> Result<Vec<u16>> {
    let count = h.width as usize * h.height as usize * channels;
    let wide = h.maxval > 255;
    let need = count * if wide { 2 } else { 1 };
    let data = &bytes[h.data_start..];
    if data.len() < need {
        return Err(Error::Image(format!(
            "netpbm data truncated: {} of {need} bytes",
            data.len()
        )));
    }
    Ok(if wide {
        data[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        data[..need].iter().map(|&b| u16::from(b)).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        let img = RgbImage::filled(3, 2, [1.0, 0.0, 0.2]);
        write_ppm(&p, &img).unwrap();
        let back = read_ppm(&p).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn pgm16_is_big_endian_with_sentinel() {
        let labels = [Some(1), None, Some(258)];
        let vals = labels_to_pgm(&labels).unwrap();
        let bytes = encode_pgm16(3, 1, &vals);
        let tail = &bytes[bytes.len() - 6..];
        assert_eq!(tail, &[0, 1, 0xff, 0xff, 1, 2]);
        let (_, _, back) = decode_pgm(&bytes).unwrap();
        assert_eq!(pgm_to_labels(&back), labels.to_vec());
    }

    #[test]
    fn pgm8_with_comment() {
        let bytes = b"P5\n# hi\n2 1\n255\n\x00\x07";
        assert_eq!(decode_pgm(bytes).unwrap(), (2, 1, vec![0, 7]));
    }

    #[test]
    fn truncated_pgm_fails() {
        assert!(decode_pgm(b"P5 2 2 255\n\x00").is_err());
        assert!(decode_pgm(b"P6 2 2 255\n").is_err());
    }

    #[test]
    fn planar_layout() {
        let hwc = [1.0f32, 2.0, 3.0, 4.0]; // 2 pixels x 2 channels
        let bytes = planar_f32_bytes(&hwc, 2);
        let vals: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(vals, vec![1.0, 3.0, 2.0, 4.0]);
    }
}
