use std::path::Path;

use crate::codec::{read_file, write_file};
use crate::error::{Error, Result};

/// An RGB image with channel values in `[0, 1]`, row-major, top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height * 3 {
            return Err(Error::Contract(format!(
                "{} values for a {width}x{height} RGB image",
                values.len()
            )));
        }
        Ok(Image { width, height, values })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let values = (0..width * height).flat_map(|_| rgb).collect();
        Image { width, height, values }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.values[i], self.values[i + 1], self.values[i + 2]]
    }

    pub fn mean_color(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for px in self.values.chunks_exact(3) {
            for c in 0..3 {
                s[c] += px[c];
            }
        }
        let n = (self.width * self.height).max(1) as f64;
        s.map(|v| v / n)
    }

    /// Bilinear resampling with pixel-centre alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut values = Vec::with_capacity(width * height * 3);
        for r in 0..height {
            let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for c in 0..width {
                let fx = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                let (a, b, cc, d) = (self.pixel(y0, x0), self.pixel(y0, x1), self.pixel(y1, x0), self.pixel(y1, x1));
                for ch in 0..3 {
                    let top = a[ch] * (1.0 - tx) + b[ch] * tx;
                    let bot = cc[ch] * (1.0 - tx) + d[ch] * tx;
                    values.push(top * (1.0 - ty) + bot * ty);
                }
            }
        }
        Image { width, height, values }
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.values.iter().map(|v| quantize(*v)));
        out
    }

    pub fn from_ppm(data: &[u8]) -> Result<Image> {
        let mut pos = 0;
        let err = |offset: usize, msg: &str| Error::parse("ppm", offset, msg);
        if data.len() < 2 || &data[..2] != b"P6" {
            return Err(err(0, "missing P6 magic"));
        }
        pos += 2;
        let mut fields = [0usize; 3];
        for (k, field) in fields.iter_mut().enumerate() {
            // Whitespace and `#` comments separate header fields.
            loop {
                match data.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while data.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while data.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            if start == pos {
                return Err(err(pos, &format!("expected header field {}", ["width", "height", "maxval"][k])));
            }
            *field = std::str::from_utf8(&data[start..pos])
                .unwrap()
                .parse()
                .map_err(|_| err(start, "header number out of range"))?;
        }
        if !data.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(err(pos, "expected whitespace after maxval"));
        }
        pos += 1;
        let [width, height, maxval] = fields;
        if width == 0 || height == 0 {
            return Err(err(pos, "zero image dimension"));
        }
        if !(1..=255).contains(&maxval) {
            return Err(err(pos, &format!("unsupported maxval {maxval}")));
        }
        let need = width * height * 3;
        if data.len() - pos < need {
            return Err(err(data.len(), &format!("truncated pixel data: need {need} bytes, {} left", data.len() - pos)));
        }
        let values = data[pos..pos + need].iter().map(|&b| b as f64 / maxval as f64).collect();
        Ok(Image { width, height, values })
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_ppm())
    }

    pub fn load_ppm(path: &Path) -> Result<Image> {
        Image::from_ppm(&read_file(path)?)
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
