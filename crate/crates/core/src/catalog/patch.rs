use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("patch dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("expected {expected} RGB triples, got {actual}")]
    PixelCount { expected: usize, actual: usize },
    #[error("invalid patch encoding: {0}")]
    Encoding(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Raw appearance carrier: row-major RGB, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl Patch {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self, PatchError> {
        if width == 0 || height == 0 {
            return Err(PatchError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(PatchError::PixelCount {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn uniform(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, PatchError> {
        Self::new(width, height, vec![rgb; width as usize * height as usize])
    }

    pub fn from_rgb_bytes(width: u32, height: u32, bytes: &[u8]) -> Result<Self, PatchError> {
        if bytes.len() % 3 != 0 {
            return Err(PatchError::Encoding(format!(
                "byte length {} is not a multiple of 3",
                bytes.len()
            )));
        }
        let pixels = bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn rgb_bytes(&self) -> Vec<u8> {
        self.pixels.iter().flatten().copied().collect()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.rgb_bytes())
    }

    pub fn from_hex(width: u32, height: u32, text: &str) -> Result<Self, PatchError> {
        let bytes = hex::decode(text).map_err(|e| PatchError::Encoding(e.to_string()))?;
        Self::from_rgb_bytes(width, height, &bytes)
    }

    /// Reads a binary PPM (`P6`, maxval 255).
    pub fn read_ppm(mut reader: impl BufRead) -> Result<Self, PatchError> {
        let mut header = Vec::new();
        // magic, width, height, maxval: four whitespace-separated tokens, '#' comments allowed
        while header.len() < 4 {
            let mut token = Vec::new();
            loop {
                let mut byte = [0u8; 1];
                if reader.read(&mut byte)? == 0 {
                    return Err(PatchError::Encoding("truncated PPM header".into()));
                }
                match byte[0] {
                    b'#' if token.is_empty() => {
                        let mut skip = Vec::new();
                        reader.read_until(b'\n', &mut skip)?;
                    }
                    b if b.is_ascii_whitespace() => {
                        if !token.is_empty() {
                            break;
                        }
                    }
                    b => token.push(b),
                }
            }
            header.push(String::from_utf8_lossy(&token).into_owned());
        }
        if header[0] != "P6" {
            return Err(PatchError::Encoding(format!("unsupported PPM magic {}", header[0])));
        }
        let parse = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| PatchError::Encoding(format!("bad PPM header field {s:?}")))
        };
        let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if maxval != 255 {
            return Err(PatchError::Encoding(format!("unsupported maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width as usize * height as usize * 3];
        reader.read_exact(&mut bytes)?;
        Self::from_rgb_bytes(width, height, &bytes)
    }

    pub fn write_ppm(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.rgb_bytes())
    }
}
