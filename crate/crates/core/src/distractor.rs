//! Color and video distractors applied to rendered observations.
//!
//! Color mode adds a per-environment RGB bias in `[-60, 60]`, redrawn every
//! step, to every pixel with clamping. Video mode replaces background pixels
//! with the current frame of a per-episode video, nearest-neighbor scaled.
//! Playback reflects at both ends (0, 1, 2, 1, 0, 1, ... for three frames).
//!
//! # Video pack container
//!
//! All integers are little-endian `u32`:
//!
//! ```text
//! "PXVP" | version = 1 | video_count | Hv | Wv
//! per video: frame_count | frame_count × Hv × Wv × 3 RGB bytes (row-major)
//! 32-byte SHA-256 of every preceding byte
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::prng::{self, Key};
use crate::render::Frame;

pub const PACK_MAGIC: &[u8; 4] = b"PXVP";
pub const PACK_VERSION: u32 = 1;
pub const PACK_HEADER_BYTES: usize = 20;
pub const PACK_DIGEST_BYTES: usize = 32;
pub const COLOR_BIAS_MAX: i32 = 60;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Video {
    pub frame_count: usize,
    /// `frame_count × Hv × Wv × 3` bytes.
    pub frames: Vec<u8>,
}

/// A fully memory-resident set of equally sized videos.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VideoPack {
    pub height: usize,
    pub width: usize,
    pub videos: Vec<Video>,
}

impl VideoPack {
    pub fn new(height: usize, width: usize, videos: Vec<Video>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("video frames must be at least 1x1"));
        }
        if videos.is_empty() {
            return Err(Error::invalid("a video pack needs at least one video"));
        }
        let frame_bytes = height * width * 3;
        for (i, v) in videos.iter().enumerate() {
            if v.frame_count == 0 {
                return Err(Error::invalid(format!("video {i} has no frames")));
            }
            if v.frames.len() != v.frame_count * frame_bytes {
                return Err(Error::invalid(format!("video {i} holds {} bytes, expected {}", v.frames.len(), v.frame_count * frame_bytes)));
            }
        }
        Ok(VideoPack { height, width, videos })
    }

    pub fn frame_bytes(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn frame(&self, video: usize, index: usize) -> &[u8] {
        let n = self.frame_bytes();
        &self.videos[video].frames[index * n..(index + 1) * n]
    }

    pub fn total_frames(&self) -> usize {
        self.videos.iter().map(|v| v.frame_count).sum()
    }

    /// Size of the encoded container.
    pub fn encoded_len(&self) -> usize {
        PACK_HEADER_BYTES + self.videos.iter().map(|v| 4 + v.frames.len()).sum::<usize>() + PACK_DIGEST_BYTES
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(PACK_MAGIC);
        for v in [PACK_VERSION, self.videos.len() as u32, self.height as u32, self.width as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.videos {
            out.extend_from_slice(&(v.frame_count as u32).to_le_bytes());
            out.extend_from_slice(&v.frames);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != PACK_MAGIC {
            return Err(format_err(0, format!("bad magic {magic:?}, expected \"PXVP\"")));
        }
        let version = r.u32("version")?;
        if version != PACK_VERSION {
            return Err(format_err(4, format!("unsupported version {version}")));
        }
        let count = r.u32("video count")? as usize;
        if count == 0 {
            return Err(format_err(8, "video count is 0"));
        }
        let height = r.u32("frame height")? as usize;
        let width = r.u32("frame width")? as usize;
        if height == 0 || width == 0 {
            return Err(format_err(12, format!("frame size {height}x{width} is empty")));
        }
        let frame_bytes = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| format_err(12, "frame size overflows"))?;
        let mut videos = Vec::with_capacity(count.min(1024));
        for i in 0..count {
            let at = r.pos;
            let frames = r.u32("frame count")? as usize;
            if frames == 0 {
                return Err(format_err(at as u64, format!("video {i} has no frames")));
            }
            let len = frames
                .checked_mul(frame_bytes)
                .ok_or_else(|| format_err(at as u64, "video size overflows"))?;
            let data = r.take(len, "frame data")?;
            videos.push(Video { frame_count: frames, frames: data.to_vec() });
        }
        let body_end = r.pos;
        let stored = r.take(PACK_DIGEST_BYTES, "digest")?;
        if r.pos != bytes.len() {
            return Err(format_err(r.pos as u64, format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != stored {
            return Err(format_err(body_end as u64, "digest does not match contents"));
        }
        Ok(VideoPack { height, width, videos })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(format_err(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {left} left"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format { offset, message: message.into() }
}

/// Reads and verifies a pack. This is the only file access distractors make.
pub fn load_video_pack(path: impl AsRef<Path>) -> Result<VideoPack> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    VideoPack::from_bytes(&bytes)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DistractorMode {
    #[default]
    None,
    Color,
    Video,
}

impl DistractorMode {
    pub const ALL: [DistractorMode; 3] = [DistractorMode::None, DistractorMode::Color, DistractorMode::Video];

    pub fn as_str(self) -> &'static str {
        match self {
            DistractorMode::None => "none",
            DistractorMode::Color => "color",
            DistractorMode::Video => "video",
        }
    }
}

impl fmt::Display for DistractorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistractorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DistractorMode::None),
            "color" => Ok(DistractorMode::Color),
            "video" => Ok(DistractorMode::Video),
            other => Err(Error::invalid(format!("unknown distractor mode {other:?} (none, color, video)"))),
        }
    }
}

/// Per-environment distractor bookkeeping. Vectors are empty for modes that
/// do not use them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistractorState {
    pub mode: DistractorMode,
    pub color_bias: Vec<[i32; 3]>,
    pub video_index: Vec<usize>,
    pub frame_cursor: Vec<usize>,
    pub direction: Vec<i8>,
    /// Frame count of every video in the pack.
    pub video_lengths: Vec<usize>,
}

fn sample_bias(key: Key) -> [i32; 3] {
    [0u64, 1, 2].map(|c| prng::random_int(key.child(c), -COLOR_BIAS_MAX, COLOR_BIAS_MAX))
}

/// Next cursor and direction for reflecting playback over `len` frames.
#[inline]
pub fn ping_pong(cursor: usize, direction: i8, len: usize) -> (usize, i8) {
    if len < 2 {
        return (0, direction);
    }
    let next = cursor as isize + direction as isize;
    if next < 0 || next >= len as isize {
        let d = -direction;
        ((cursor as isize + d as isize) as usize, d)
    } else {
        (next as usize, direction)
    }
}

impl DistractorState {
    pub fn batch(&self) -> usize {
        match self.mode {
            DistractorMode::None => 0,
            DistractorMode::Color => self.color_bias.len(),
            DistractorMode::Video => self.video_index.len(),
        }
    }

    /// Redraws env `i` as at the start of an episode.
    pub fn reset_env(&mut self, i: usize, key: Key) {
        match self.mode {
            DistractorMode::None => {}
            DistractorMode::Color => self.color_bias[i] = sample_bias(key),
            DistractorMode::Video => {
                self.video_index[i] = prng::random_index_unchecked(key, self.video_lengths.len() as u64) as usize;
                self.frame_cursor[i] = 0;
                self.direction[i] = 1;
            }
        }
    }

    /// Advances env `i` by one step.
    #[inline]
    pub fn advance_env(&mut self, i: usize, key_t: Key) {
        match self.mode {
            DistractorMode::None => {}
            DistractorMode::Color => self.color_bias[i] = sample_bias(prng::fold_in(key_t, i as u64)),
            DistractorMode::Video => {
                let len = self.video_lengths[self.video_index[i]];
                let (c, d) = ping_pong(self.frame_cursor[i], self.direction[i], len);
                self.frame_cursor[i] = c;
                self.direction[i] = d;
            }
        }
    }

    pub fn advance(&mut self, key_t: Key) {
        for i in 0..self.batch() {
            self.advance_env(i, key_t);
        }
    }
}

/// Initial distractor state; env `i` draws from `split(key, batch)[i]`.
pub fn init_distractors(mode: DistractorMode, pack: Option<&VideoPack>, key: Key, batch: usize) -> Result<DistractorState> {
    if batch == 0 {
        return Err(Error::invalid("distractors need batch >= 1"));
    }
    let mut state = DistractorState {
        mode,
        color_bias: Vec::new(),
        video_index: Vec::new(),
        frame_cursor: Vec::new(),
        direction: Vec::new(),
        video_lengths: Vec::new(),
    };
    match mode {
        DistractorMode::None => {}
        DistractorMode::Color => state.color_bias = vec![[0; 3]; batch],
        DistractorMode::Video => {
            let pack = pack.ok_or_else(|| Error::invalid("video distractors need a video pack"))?;
            state.video_lengths = pack.videos.iter().map(|v| v.frame_count).collect();
            state.video_index = vec![0; batch];
            state.frame_cursor = vec![0; batch];
            state.direction = vec![1; batch];
        }
    }
    for i in 0..state.batch() {
        state.reset_env(i, key.child(i as u64));
    }
    Ok(state)
}

pub fn advance_distractors(state: &DistractorState, key_t: Key) -> DistractorState {
    let mut next = state.clone();
    next.advance(key_t);
    next
}

/// Adds `bias` to every channel of one scene's pixels, clamped to `[0, 255]`.
#[inline]
pub fn color_env(pixels: &mut [u8], bias: [i32; 3]) {
    if bias == [0; 3] {
        return;
    }
    // Lookup tables keep the inner loop branch-free.
    let luts = bias.map(|b| {
        let mut t = [0u8; 256];
        for (v, out) in t.iter_mut().enumerate() {
            *out = (v as i32 + b).clamp(0, 255) as u8;
        }
        t
    });
    for px in pixels.chunks_exact_mut(3) {
        px[0] = luts[0][px[0] as usize];
        px[1] = luts[1][px[1] as usize];
        px[2] = luts[2][px[2] as usize];
    }
}

/// Replaces background pixels of one `width × height` scene with `video`,
/// an `vh × vw` RGB frame sampled nearest-neighbor.
#[inline]
pub fn video_env(pixels: &mut [u8], mask: &[bool], width: usize, height: usize, video: &[u8], vh: usize, vw: usize) {
    // Source byte offset of each destination column; inline for the usual sizes.
    let cols: SmallVec<[u32; 256]> = (0..width).map(|x| (3 * (x * vw / width)) as u32).collect();
    for y in 0..height {
        let vy = y * vh / height;
        let src_row = &video[vy * vw * 3..(vy + 1) * vw * 3];
        let row = y * width;
        let dst = &mut pixels[3 * row..3 * (row + width)];
        for ((px, &m), &c) in dst.chunks_exact_mut(3).zip(&mask[row..row + width]).zip(&cols) {
            if m {
                let c = c as usize;
                px.copy_from_slice(&src_row[c..c + 3]);
            }
        }
    }
}

fn check_batch<T>(frame: &Frame<T>, state: &DistractorState) -> Result<()> {
    if frame.batch != state.batch() {
        return Err(Error::invalid(format!(
            "frame batch {} does not match distractor batch {}",
            frame.batch,
            state.batch()
        )));
    }
    Ok(())
}

pub fn apply_color<T: Send>(frame: &mut Frame<T>, state: &DistractorState) -> Result<()> {
    if state.mode != DistractorMode::Color {
        return Err(Error::invalid(format!("apply_color called in {} mode", state.mode)));
    }
    check_batch(frame, state)?;
    let n = 3 * frame.width * frame.height;
    frame
        .pixels
        .par_chunks_mut(n)
        .zip(state.color_bias.par_iter())
        .for_each(|(px, &bias)| color_env(px, bias));
    Ok(())
}

pub fn apply_video<T: Send>(frame: &mut Frame<T>, pack: &VideoPack, state: &DistractorState) -> Result<()> {
    if state.mode != DistractorMode::Video {
        return Err(Error::invalid(format!("apply_video called in {} mode", state.mode)));
    }
    check_batch(frame, state)?;
    if state.video_lengths.len() != pack.videos.len() {
        return Err(Error::invalid("distractor state was built for a different pack"));
    }
    let (w, h) = (frame.width, frame.height);
    let n = w * h;
    frame
        .pixels
        .par_chunks_mut(3 * n)
        .zip(frame.background_mask.par_chunks(n))
        .enumerate()
        .for_each(|(i, (px, mask))| {
            let video = pack.frame(state.video_index[i], state.frame_cursor[i]);
            video_env(px, mask, w, h, video, pack.height, pack.width);
        });
    Ok(())
}
