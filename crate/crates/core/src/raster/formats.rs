//! Grid file formats.
//!
//! - Plain PGM, ASCII (`P2`) or binary (`P5`), single channel. Samples are
//!   read as raw integer levels; writing rounds and clamps to `0..=maxval`.
//! - Text grids: a `rows cols channels` header followed by whitespace
//!   separated reals in row-major, channel-interleaved order. Lines starting
//!   with `#` are comments. Values are written in shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::ImageGrid;
use crate::error::{Error, Result};
use crate::geometry::PlaneSize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmEncoding {
    Ascii,
    Binary,
}

/// Whitespace tokenizer that tracks byte offsets and skips `#` comments.
struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next_token(&mut self) -> Option<(usize, &'a str)> {
        self.skip_space();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .map(|s| (start, s))
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let offset = self.pos;
        let (at, tok) = self.next_token().ok_or_else(|| Error::Parse {
            offset,
            message: format!("expected {what}, found end of input"),
        })?;
        tok.parse().map_err(|_| Error::Parse {
            offset: at,
            message: format!("expected {what}, found {tok:?}"),
        })
    }
}

fn plane(width: usize, height: usize, offset: usize) -> Result<PlaneSize> {
    let w = u32::try_from(width).map_err(|_| Error::invalid("grid too wide"))?;
    let h = u32::try_from(height).map_err(|_| Error::invalid("grid too tall"))?;
    PlaneSize::new(w, h).map_err(|e| Error::Parse {
        offset,
        message: e.to_string(),
    })
}

pub fn parse_pgm(bytes: &[u8]) -> Result<ImageGrid> {
    let mut tok = Tokens::new(bytes);
    let (_, magic) = tok.next_token().ok_or(Error::Parse {
        offset: 0,
        message: "empty PGM file".into(),
    })?;
    let binary = match magic {
        "P2" => false,
        "P5" => true,
        other => {
            return Err(Error::Parse {
                offset: 0,
                message: format!("unsupported PGM magic {other:?}"),
            })
        }
    };
    let header_at = tok.pos;
    let width: usize = tok.parse("width")?;
    let height: usize = tok.parse("height")?;
    let maxval: u32 = tok.parse("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse {
            offset: header_at,
            message: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    let size = plane(width, height, header_at)?;
    let n = size.len();
    let mut data = Vec::with_capacity(n);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = tok.pos + 1;
        let bps = if maxval < 256 { 1 } else { 2 };
        let body = bytes.get(start..start + n * bps).ok_or(Error::Parse {
            offset: bytes.len(),
            message: format!("binary raster needs {} bytes", n * bps),
        })?;
        if bps == 1 {
            data.extend(body.iter().map(|&b| f64::from(b)));
        } else {
            data.extend(
                body.chunks_exact(2)
                    .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]]))),
            );
        }
    } else {
        for _ in 0..n {
            let v: u32 = tok.parse("sample")?;
            data.push(f64::from(v));
        }
    }
    ImageGrid::new(size, 1, data)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<ImageGrid> {
    parse_pgm(&fs::read(path)?)
}

/// Encodes channel 0 of `grid` as PGM with the given `maxval`.
pub fn encode_pgm(grid: &ImageGrid, encoding: PgmEncoding, maxval: u16) -> Vec<u8> {
    let maxval = maxval.max(1);
    let level = |v: f64| v.round().clamp(0.0, f64::from(maxval)) as u16;
    let (w, h) = (grid.width(), grid.height());
    let mut out = Vec::new();
    match encoding {
        PgmEncoding::Ascii => {
            let mut text = format!("P2\n{w} {h}\n{maxval}\n");
            for y in 0..h {
                let row: Vec<String> = (0..w).map(|x| level(grid.get(x, y, 0)).to_string()).collect();
                text.push_str(&row.join(" "));
                text.push('\n');
            }
            out.extend_from_slice(text.as_bytes());
        }
        PgmEncoding::Binary => {
            out.extend_from_slice(format!("P5\n{w} {h}\n{maxval}\n").as_bytes());
            for y in 0..h {
                for x in 0..w {
                    let v = level(grid.get(x, y, 0));
                    if maxval < 256 {
                        out.push(v as u8);
                    } else {
                        out.extend_from_slice(&v.to_be_bytes());
                    }
                }
            }
        }
    }
    out
}

pub fn write_pgm(
    grid: &ImageGrid,
    path: impl AsRef<Path>,
    encoding: PgmEncoding,
    maxval: u16,
) -> Result<()> {
    fs::write(path, encode_pgm(grid, encoding, maxval))?;
    Ok(())
}

pub fn parse_grid(text: &str) -> Result<ImageGrid> {
    let mut tok = Tokens::new(text.as_bytes());
    let header_at = tok.pos;
    let rows: usize = tok.parse("rows")?;
    let cols: usize = tok.parse("cols")?;
    let channels: usize = tok.parse("channels")?;
    if channels == 0 {
        return Err(Error::Parse {
            offset: header_at,
            message: "channels must be positive".into(),
        });
    }
    let size = plane(cols, rows, header_at)?;
    let n = size.len() * channels;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let at = tok.pos;
        let v: f64 = tok.parse("value")?;
        if !v.is_finite() {
            return Err(Error::Parse {
                offset: at,
                message: "non-finite value".into(),
            });
        }
        data.push(v);
    }
    if let Some((at, extra)) = tok.next_token() {
        return Err(Error::Parse {
            offset: at,
            message: format!("trailing data {extra:?}"),
        });
    }
    ImageGrid::new(size, channels, data)
}

pub fn format_grid(grid: &ImageGrid) -> String {
    let (w, h, c) = (grid.width(), grid.height(), grid.channels());
    let mut out = format!("{h} {w} {c}\n");
    for row in grid.data().chunks(w * c) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<ImageGrid> {
    parse_grid(&fs::read_to_string(path)?)
}

pub fn write_grid(grid: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_grid(grid))?;
    Ok(())
}
