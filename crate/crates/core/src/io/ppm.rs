//! Binary PPM (P6) decoding and a frame source over a directory of frames
//! named by zero-padded frame number, decoded lazily and cached.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use thiserror::Error;

use crate::losses::FeatureVec;
use crate::scoring::{
    extract_histogram_features, FrameSource, RgbFrame, SourceError, HISTOGRAM_DIM,
};
use crate::types::BoundingBox;

#[derive(Debug, Error)]
pub enum FrameStoreError {
    #[error("cannot read frame directory {path}: {reason}")]
    Directory { path: PathBuf, reason: String },
    #[error("no .ppm frames found in {0}")]
    Empty(PathBuf),
    #[error("frame file {0} is not named by a frame number")]
    BadName(PathBuf),
    #[error("missing frame {0}")]
    MissingFrame(u32),
}

/// Decodes a binary (P6) PPM with 8-bit samples.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbFrame, String> {
    let mut pos = 0usize;

    let mut next_token = |bytes: &[u8]| -> Result<String, String> {
        // Skip whitespace and '#' comments.
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
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".to_string());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(bytes)?;
    if magic != "P6" {
        return Err(format!("expected P6 magic, found {magic:?}"));
    }
    let width: u32 = next_token(bytes)?
        .parse()
        .map_err(|_| "bad width".to_string())?;
    let height: u32 = next_token(bytes)?
        .parse()
        .map_err(|_| "bad height".to_string())?;
    let maxval: u32 = next_token(bytes)?
        .parse()
        .map_err(|_| "bad maxval".to_string())?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}, expected 255"));
    }
    if width == 0 || height == 0 {
        return Err("zero-sized image".to_string());
    }
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing sample separator".to_string());
    }
    pos += 1;
    let expected = width as usize * height as usize * 3;
    let data = bytes[pos..].to_vec();
    if data.len() < expected {
        return Err(format!(
            "truncated sample data: expected {expected} bytes, found {}",
            data.len()
        ));
    }
    Ok(RgbFrame::new(width, height, data[..expected].to_vec()))
}

/// Renders an image as binary PPM; the inverse of [`decode_ppm`].
pub fn encode_ppm(frame: &RgbFrame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.data);
    out
}

/// Frame features from a directory of PPM images. Frames decode on first
/// use; the cache is written once per frame and read concurrently.
#[derive(Debug)]
pub struct PpmFrameSource {
    paths: BTreeMap<u32, PathBuf>,
    cache: RwLock<HashMap<u32, Arc<RgbFrame>>>,
}

impl PpmFrameSource {
    pub fn frame_range(&self) -> Option<(u32, u32)> {
        let first = self.paths.keys().next()?;
        let last = self.paths.keys().next_back()?;
        Some((*first, *last))
    }

    fn frame(&self, frame: u32) -> Result<Arc<RgbFrame>, SourceError> {
        if let Some(cached) = self.cache.read().expect("cache lock").get(&frame) {
            return Ok(cached.clone());
        }
        let path = self
            .paths
            .get(&frame)
            .ok_or(SourceError::MissingFrame { frame })?;
        let bytes = std::fs::read(path).map_err(|e| SourceError::Decode {
            frame,
            reason: e.to_string(),
        })?;
        let decoded =
            Arc::new(decode_ppm(&bytes).map_err(|reason| SourceError::Decode { frame, reason })?);
        self.cache
            .write()
            .expect("cache lock")
            .insert(frame, decoded.clone());
        Ok(decoded)
    }
}

impl FrameSource for PpmFrameSource {
    fn dimensions(&self, frame: u32) -> Result<(u32, u32), SourceError> {
        let frame = self.frame(frame)?;
        Ok((frame.width, frame.height))
    }

    fn features(&self, frame: u32, bbox: &BoundingBox) -> Result<FeatureVec, SourceError> {
        extract_histogram_features(self.frame(frame)?.as_ref(), bbox)
    }

    fn feature_dim(&self) -> usize {
        HISTOGRAM_DIM
    }
}

/// Scans `dir` for `<number>.ppm` files and checks the numbering is
/// contiguous from its first frame; decoding stays lazy.
pub fn load_frames(dir: &Path) -> Result<PpmFrameSource, FrameStoreError> {
    let entries = std::fs::read_dir(dir).map_err(|e| FrameStoreError::Directory {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut paths = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| FrameStoreError::Directory {
            path: dir.to_path_buf(),
            reason: e.to_string(),
        })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("ppm") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| FrameStoreError::BadName(path.clone()))?;
        let frame: u32 = stem
            .parse()
            .map_err(|_| FrameStoreError::BadName(path.clone()))?;
        paths.insert(frame, path);
    }
    if paths.is_empty() {
        return Err(FrameStoreError::Empty(dir.to_path_buf()));
    }
    let first = *paths.keys().next().expect("non-empty");
    let last = *paths.keys().next_back().expect("non-empty");
    for frame in first..=last {
        if !paths.contains_key(&frame) {
            return Err(FrameStoreError::MissingFrame(frame));
        }
    }
    Ok(PpmFrameSource {
        paths,
        cache: RwLock::new(HashMap::new()),
    })
}
