//! Frame sources: image files (directory or glob), video files decoded by an
//! `ffmpeg` subprocess, and TCP sockets carrying length-prefixed RGB frames.
//!
//! Socket framing (little-endian): `len u32 | width u32 | height u32 | RGB`,
//! where `len = width * height * 3`. A clean EOF between frames ends the
//! stream.

use std::io::{self, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::dataset::preprocess::{PreprocessError, RawFrame, FRAME_SIZE};

/// Upper bound on a single socket frame payload.
pub const MAX_FRAME_BYTES: usize = 64 << 20;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("no frames found at {0}")]
    NoFrames(String),
    #[error("bad glob pattern: {0}")]
    Pattern(String),
    #[error("cannot run ffmpeg ({0}); install ffmpeg or extract frames to images")]
    Ffmpeg(String),
    #[error("bad frame header: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

enum Kind {
    Images(std::vec::IntoIter<PathBuf>),
    Pipe { child: Child, out: BufReader<ChildStdout> },
    Socket(BufReader<TcpStream>),
}

/// An iterator of decoded frames.
pub struct FrameSource {
    kind: Kind,
    done: bool,
}

impl FrameSource {
    /// `spec` is `tcp://host:port`, a glob pattern, a directory of images,
    /// a single image, or a video file. Videos are sampled at `rate_hz`.
    pub fn open(spec: &str, rate_hz: f64) -> Result<Self, SourceError> {
        if let Some(addr) = spec.strip_prefix("tcp://") {
            let stream = TcpStream::connect(addr)?;
            return Ok(Self::socket(stream));
        }
        if spec.contains(['*', '?', '[']) {
            let paths = glob::glob(spec)
                .map_err(|e| SourceError::Pattern(e.to_string()))?
                .filter_map(Result::ok)
                .filter(|p| is_image(p))
                .collect();
            return Self::images(paths, spec);
        }
        let path = Path::new(spec);
        if path.is_dir() {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| is_image(p))
                .collect();
            paths.sort();
            return Self::images(paths, spec);
        }
        if !path.exists() {
            return Err(SourceError::NoFrames(spec.to_string()));
        }
        if is_image(path) {
            return Self::images(vec![path.to_path_buf()], spec);
        }
        Self::video(path, rate_hz)
    }

    fn images(mut paths: Vec<PathBuf>, spec: &str) -> Result<Self, SourceError> {
        if paths.is_empty() {
            return Err(SourceError::NoFrames(spec.to_string()));
        }
        paths.sort();
        Ok(FrameSource { kind: Kind::Images(paths.into_iter()), done: false })
    }

    pub fn socket(stream: TcpStream) -> Self {
        FrameSource { kind: Kind::Socket(BufReader::new(stream)), done: false }
    }

    /// Decodes a video to 224x224 RGB frames at `rate_hz`.
    pub fn video(path: &Path, rate_hz: f64) -> Result<Self, SourceError> {
        let filter = format!("fps={rate_hz},scale={FRAME_SIZE}:{FRAME_SIZE}");
        let mut child = Command::new("ffmpeg")
            .args(["-v", "error", "-nostdin", "-i"])
            .arg(path)
            .args(["-vf", &filter, "-f", "rawvideo", "-pix_fmt", "rgb24", "pipe:1"])
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SourceError::Ffmpeg(e.to_string()))?;
        let out = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(FrameSource { kind: Kind::Pipe { child, out }, done: false })
    }

    fn next_frame(&mut self) -> Result<Option<RawFrame>, SourceError> {
        match &mut self.kind {
            Kind::Images(paths) => match paths.next() {
                Some(p) => Ok(Some(RawFrame::open(&p)?)),
                None => Ok(None),
            },
            Kind::Pipe { child, out } => {
                let mut buf = vec![0u8; FRAME_SIZE * FRAME_SIZE * 3];
                if !read_exact_or_eof(out, &mut buf)? {
                    let status = child.wait()?;
                    if !status.success() {
                        return Err(SourceError::Ffmpeg(format!("exited with {status}")));
                    }
                    return Ok(None);
                }
                Ok(Some(RawFrame::rgb(FRAME_SIZE, FRAME_SIZE, buf)?))
            }
            Kind::Socket(r) => read_frame_message(r),
        }
    }
}

impl Iterator for FrameSource {
    type Item = Result<RawFrame, SourceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let r = self.next_frame().transpose();
        if !matches!(r, Some(Ok(_))) {
            self.done = true;
        }
        r
    }
}

impl Drop for FrameSource {
    fn drop(&mut self) {
        if let Kind::Pipe { child, .. } = &mut self.kind {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Fills `buf`, returning `false` on EOF before the first byte.
fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

/// Reads one socket frame; `None` on EOF at a frame boundary.
pub fn read_frame_message(r: &mut impl Read) -> Result<Option<RawFrame>, SourceError> {
    let mut header = [0u8; 12];
    if !read_exact_or_eof(r, &mut header)? {
        return Ok(None);
    }
    let word = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    let (len, width, height) = (word(0), word(1), word(2));
    if len > MAX_FRAME_BYTES || width.checked_mul(height).and_then(|p| p.checked_mul(3)) != Some(len) {
        return Err(SourceError::BadHeader(format!("len={len} width={width} height={height}")));
    }
    let mut data = vec![0u8; len];
    r.read_exact(&mut data)?;
    Ok(Some(RawFrame::rgb(width, height, data)?))
}

pub fn write_frame_message(w: &mut impl Write, frame: &RawFrame) -> io::Result<()> {
    if frame.channels != 3 {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "socket frames are RGB"));
    }
    for v in [frame.data.len(), frame.width, frame.height] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&frame.data)
}

/// Adapts a fallible source into a plain frame iterator. The first error
/// ends iteration and is kept in the returned slot.
pub fn until_error<I>(source: I) -> (impl Iterator<Item = RawFrame> + Send, Arc<Mutex<Option<SourceError>>>)
where
    I: Iterator<Item = Result<RawFrame, SourceError>> + Send,
{
    let slot = Arc::new(Mutex::new(None));
    let writer = slot.clone();
    let iter = source.map_while(move |r| match r {
        Ok(f) => Some(f),
        Err(e) => {
            *writer.lock().expect("error slot") = Some(e);
            None
        }
    });
    (iter, slot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn socket_framing_round_trip() {
        let a = RawFrame::filled(3, 2, [1, 2, 3]);
        let b = RawFrame::filled(1, 1, [9, 8, 7]);
        let mut bytes = Vec::new();
        write_frame_message(&mut bytes, &a).unwrap();
        write_frame_message(&mut bytes, &b).unwrap();
        let mut r = &bytes[..];
        assert_eq!(read_frame_message(&mut r).unwrap(), Some(a));
        assert_eq!(read_frame_message(&mut r).unwrap(), Some(b));
        assert_eq!(read_frame_message(&mut r).unwrap(), None);
    }

    #[test]
    fn inconsistent_header_rejected() {
        let mut bytes = Vec::new();
        for v in [10u32, 2, 2] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[0; 10]);
        assert!(matches!(read_frame_message(&mut &bytes[..]), Err(SourceError::BadHeader(_))));
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let mut bytes = Vec::new();
        write_frame_message(&mut bytes, &RawFrame::filled(2, 2, [5, 5, 5])).unwrap();
        bytes.truncate(bytes.len() - 1);
        assert!(read_frame_message(&mut &bytes[..]).is_err());
    }

    #[test]
    fn image_directory_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("b.png", 20u8), ("a.png", 10), ("c.png", 30)] {
            image::RgbImage::from_pixel(4, 3, image::Rgb([v, v, v])).save(dir.path().join(name)).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let frames: Vec<RawFrame> = FrameSource::open(dir.path().to_str().unwrap(), 10.0)
            .unwrap()
            .map(Result::unwrap)
            .collect();
        assert_eq!(frames.iter().map(|f| f.data[0]).collect::<Vec<_>>(), vec![10, 20, 30]);
        let pattern = format!("{}/[ab].png", dir.path().display());
        assert_eq!(FrameSource::open(&pattern, 10.0).unwrap().count(), 2);
        assert!(matches!(FrameSource::open(&format!("{}/*.bmp", dir.path().display()), 10.0), Err(SourceError::NoFrames(_))));
    }
}
