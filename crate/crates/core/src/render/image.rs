//! Float image buffers and their PPM/PGM encodings.
//!
//! Color is written as binary PPM (P6, 8-bit). Single-channel maps are
//! written as 16-bit binary PGM (P5) with a `# scale=<s>` comment: the
//! stored integer `q` decodes to `q / 65535 * s`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        ImageBuffer {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, value: &[f64]) -> Self {
        let channels = value.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        ImageBuffer {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(width * height * channels, data.len()));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let o = (j * self.width + i) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = (j * self.width + i) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &ImageBuffer) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(
                format!("{}x{}x{}", self.width, self.height, self.channels),
                format!("{}x{}x{}", other.width, other.height, other.channels),
            ))
        }
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Keep the listed channels, in order.
    pub fn select_channels(&self, channels: &[usize]) -> ImageBuffer {
        let mut data = Vec::with_capacity(self.width * self.height * channels.len());
        for px in self.data.chunks(self.channels) {
            data.extend(channels.iter().map(|c| px[*c]));
        }
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: channels.len(),
            data,
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        if self.channels < 3 {
            return Err(Error::shape("at least 3 channels", self.channels));
        }
        let mut bytes = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for px in self.data.chunks(self.channels) {
            for c in &px[..3] {
                bytes.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Write one channel as 16-bit PGM with linear scale `scale`.
    pub fn write_pgm16(&self, channel: usize, scale: f64, path: &Path) -> Result<()> {
        let mut bytes = format!("P5\n# scale={scale}\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for px in self.data.chunks(self.channels) {
            let q = ((px[channel] / scale).clamp(0.0, 1.0) * 65535.0).round() as u16;
            bytes.extend_from_slice(&q.to_be_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<ImageBuffer> {
        let (magic, w, h, maxval, _, body) = read_netpbm(path)?;
        if magic != "P6" || maxval != 255 {
            return Err(bad(path, "expected 8-bit P6"));
        }
        if body.len() < w * h * 3 {
            return Err(bad(path, "truncated pixel data"));
        }
        let data = body[..w * h * 3].iter().map(|b| *b as f64 / 255.0).collect();
        ImageBuffer::from_data(w, h, 3, data)
    }

    pub fn read_pgm16(path: &Path) -> Result<ImageBuffer> {
        let (magic, w, h, maxval, scale, body) = read_netpbm(path)?;
        if magic != "P5" || maxval != 65535 {
            return Err(bad(path, "expected 16-bit P5"));
        }
        if body.len() < w * h * 2 {
            return Err(bad(path, "truncated pixel data"));
        }
        let scale = scale.unwrap_or(1.0);
        let data = body[..w * h * 2]
            .chunks(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0 * scale)
            .collect();
        ImageBuffer::from_data(w, h, 1, data)
    }
}

fn bad(path: &Path, msg: &str) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

type Netpbm = (String, usize, usize, usize, Option<f64>, Vec<u8>);

fn read_netpbm(path: &Path) -> Result<Netpbm> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut tokens: Vec<String> = Vec::new();
    let mut scale = None;
    while tokens.len() < 4 {
        let mut line = String::new();
        if r.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(bad(path, "truncated header"));
        }
        let (content, comment) = match line.split_once('#') {
            Some((a, b)) => (a, Some(b)),
            None => (line.as_str(), None),
        };
        if let Some(s) = comment.and_then(|c| c.trim().strip_prefix("scale=")) {
            scale = s.trim().parse().ok();
        }
        tokens.extend(content.split_whitespace().map(str::to_string));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(path, "bad header number"));
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    Ok((tokens[0].clone(), w, h, maxval, scale, body))
}

/// Write PPM to any writer; used for byte-level comparisons in tests.
pub fn encode_ppm(img: &ImageBuffer, mut w: impl Write) -> std::io::Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    for px in img.data.chunks(img.channels) {
        for c in &px[..3] {
            w.write_all(&[(c.clamp(0.0, 1.0) * 255.0).round() as u8])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = ImageBuffer::new(9, 8, 3);
        for (k, v) in img.data.iter_mut().enumerate() {
            *v = (k % 256) as f64 / 255.0;
        }
        let p = dir.path().join("a.ppm");
        img.write_ppm(&p).unwrap();
        let back = ImageBuffer::read_ppm(&p).unwrap();
        assert!(img.data.iter().zip(&back.data).all(|(a, b)| (a - b).abs() < 1e-9));

        let mut depth = ImageBuffer::new(9, 8, 1);
        for (k, v) in depth.data.iter_mut().enumerate() {
            *v = k as f64 * 0.05;
        }
        let q = dir.path().join("d.pgm");
        depth.write_pgm16(0, 5.0, &q).unwrap();
        let back = ImageBuffer::read_pgm16(&q).unwrap();
        assert!(depth.data.iter().zip(&back.data).all(|(a, b)| (a - b).abs() < 5.0 / 65535.0));
    }
}
