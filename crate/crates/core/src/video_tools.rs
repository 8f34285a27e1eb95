//! Building video packs from frame directories, and the synthetic test pack.
//!
//! Frame directories hold one subdirectory per video, each with numbered
//! binary PPM (`P6`, max value 255) frames. Videos are ordered by
//! subdirectory name and frames by file name. Other image formats must be
//! converted first, e.g. `convert frame.png frame.ppm`.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::distractor::{Video, VideoPack};
use crate::error::{Error, Result};
use crate::prng::{self, Key};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameDirSpec {
    pub root: PathBuf,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackSummary {
    pub videos: usize,
    pub total_frames: usize,
    pub bytes: usize,
    /// Hex SHA-256 of the whole file.
    pub sha256: String,
}

/// A decoded RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err("header ends early".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P6" {
        return Err(format!("expected binary PPM magic P6, found {magic:?}"));
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        t.parse().map_err(|_| format!("bad {what} {t:?}"))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("max value")?;
    if maxval != 255 {
        return Err(format!("only 8-bit PPM is supported (max value {maxval})"));
    }
    if width == 0 || height == 0 {
        return Err("empty image".into());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height * 3;
    if bytes.len() < pos + n {
        return Err(format!("raster truncated: {} of {n} bytes", bytes.len().saturating_sub(pos)));
    }
    Ok(Image { width, height, data: bytes[pos..pos + n].to_vec() })
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

/// Nearest-neighbor resize: output pixel `(x, y)` reads source
/// `(floor(x·W/w), floor(y·H/h))`.
pub fn resize_nearest(image: &Image, width: usize, height: usize) -> Image {
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let sy = y * image.height / height;
        for x in 0..width {
            let sx = x * image.width / width;
            let o = 3 * (sy * image.width + sx);
            data.extend_from_slice(&image.data[o..o + 3]);
        }
    }
    Image { width, height, data }
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        let keep = if want_dirs {
            path.is_dir()
        } else {
            path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
        };
        if keep && !hidden {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_frames(spec: &FrameDirSpec) -> Result<VideoPack> {
    if spec.height == 0 || spec.width == 0 {
        return Err(Error::invalid("target frame size must be at least 1x1"));
    }
    let dirs = sorted_entries(&spec.root, true)?;
    if dirs.is_empty() {
        return Err(Error::invalid(format!("{} has no video subdirectories", spec.root.display())));
    }
    let mut videos = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let files = sorted_entries(&dir, false)?;
        if files.len() < 2 {
            return Err(Error::invalid(format!("{} has {} frames, need at least 2", dir.display(), files.len())));
        }
        let mut frames = Vec::with_capacity(files.len() * spec.height * spec.width * 3);
        for file in &files {
            let bytes = fs::read(file).map_err(|e| Error::io(file, e))?;
            let image = decode_ppm(&bytes).map_err(|message| Error::Decode { path: file.clone(), message })?;
            frames.extend_from_slice(&resize_nearest(&image, spec.width, spec.height).data);
        }
        videos.push(Video { frame_count: files.len(), frames });
    }
    VideoPack::new(spec.height, spec.width, videos)
}

fn write_pack(pack: &VideoPack, out: &Path) -> Result<PackSummary> {
    let bytes = pack.to_bytes();
    fs::write(out, &bytes).map_err(|e| Error::io(out, e))?;
    Ok(PackSummary {
        videos: pack.videos.len(),
        total_frames: pack.total_frames(),
        bytes: bytes.len(),
        sha256: hex(&Sha256::digest(&bytes)),
    })
}

pub fn pack_from_frames(spec: &FrameDirSpec, out: impl AsRef<Path>) -> Result<PackSummary> {
    write_pack(&read_frames(spec)?, out.as_ref())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Triangle wave over `0..=254`, period 510.
#[inline]
fn tri(v: u32) -> u8 {
    let s = v % 510;
    if s < 255 {
        s as u8
    } else {
        (509 - s) as u8
    }
}

/// Procedural pack of moving color gradients, a pure function of `key`.
///
/// Channel `c` of video `v` at frame `f` is a triangle wave of
/// `ax·x + ay·y + speed·f + phase`, with per-video, per-channel integer
/// parameters drawn from `key.child(v)`. Integer-only, so bytes are the same
/// on every platform.
pub fn synthetic_pack(key: Key, videos: usize, frames: usize, height: usize, width: usize) -> Result<VideoPack> {
    if videos == 0 || frames == 0 || height == 0 || width == 0 {
        return Err(Error::invalid("synthetic pack needs videos >= 1, frames >= 1 and a non-empty frame size"));
    }
    let mut out = Vec::with_capacity(videos);
    for v in 0..videos {
        let k = key.child(v as u64);
        let draw = |i: u64, lo: i32, hi: i32| prng::random_int(k.child(i), lo, hi) as u32;
        let params: [[u32; 4]; 3] = [0u64, 1, 2].map(|c| {
            [draw(4 * c, 0, 8), draw(4 * c + 1, 0, 8), draw(4 * c + 2, 3, 24), draw(4 * c + 3, 0, 509)]
        });
        let mut data = Vec::with_capacity(frames * height * width * 3);
        for f in 0..frames as u32 {
            for y in 0..height as u32 {
                for x in 0..width as u32 {
                    for p in &params {
                        data.push(tri(p[0] * x + p[1] * y + p[2] * f + p[3]));
                    }
                }
            }
        }
        out.push(Video { frame_count: frames, frames: data });
    }
    VideoPack::new(height, width, out)
}

pub fn generate_synthetic_pack(
    key: Key,
    videos: usize,
    frames: usize,
    height: usize,
    width: usize,
    out: impl AsRef<Path>,
) -> Result<PackSummary> {
    write_pack(&synthetic_pack(key, videos, frames, height, width)?, out.as_ref())
}
