//! Minimal binary PPM (P6) reader and writer, 8-bit samples only.

use std::io::Read;
#[cfg(test)]
use std::path::Path;

use vistok::{Error, Image, Result};

fn next_token<R: Read>(r: &mut R) -> Result<String> {
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    let mut in_comment = false;
    loop {
        if r.read(&mut byte)? == 0 {
            if buf.is_empty() {
                return Err(Error::Format("unexpected end of header".into()));
            }
            break;
        }
        let b = byte[0];
        if in_comment {
            if b == b'\n' {
                in_comment = false;
            }
            continue;
        }
        if b == b'#' {
            in_comment = true;
            continue;
        }
        if b.is_ascii_whitespace() {
            if buf.is_empty() {
                continue;
            }
            break;
        }
        buf.push(b);
    }
    String::from_utf8(buf).map_err(|_| Error::Format("non-ascii header token".into()))
}

fn parse_dim(tok: &str, what: &str) -> Result<usize> {
    tok.parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::Format(format!("bad {what} {tok:?}")))
}

pub fn read<R: Read>(mut r: R) -> Result<Image> {
    let magic = next_token(&mut r)?;
    if magic != "P6" {
        return Err(Error::Format(format!("expected P6 magic, got {magic:?}")));
    }
    let width = parse_dim(&next_token(&mut r)?, "width")?;
    let height = parse_dim(&next_token(&mut r)?, "height")?;
    let maxval = parse_dim(&next_token(&mut r)?, "maxval")?;
    if maxval > 255 {
        return Err(Error::Format(format!(
            "only 8-bit samples supported, maxval {maxval}"
        )));
    }
    let mut pixels = vec![0u8; height * width * 3];
    r.read_exact(&mut pixels)
        .map_err(|_| Error::Format("truncated pixel data".into()))?;
    let max = maxval as f32;
    let data: Vec<f32> = pixels.iter().map(|&b| (b as f32 / max).min(1.0)).collect();
    Image::new(height, width, 3, data)
}

#[cfg(test)]
pub fn read_file(path: &Path) -> Result<Image> {
    let file = std::fs::File::open(path)?;
    read(std::io::BufReader::new(file))
}

#[cfg(test)]
pub fn write_file(path: &Path, img: &Image) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::InvalidArgument("P6 requires 3 channels".into()));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| (v * 255.0).round() as u8));
    std::fs::write(path, out)?;
    Ok(())
}
