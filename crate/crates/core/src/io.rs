//! Persistence: line-delimited episode logs and binary checkpoints.
//!
//! Episode log layout: the first line is a header object
//! `{"format":"bandgen-episodes","version":1,"frame_fields":[...]}`; each later
//! line is one episode `{"summary":{...},"frames":[[...], ...]}` with every frame
//! written as an array in `FRAME_FIELDS` order.
//!
//! Checkpoint layout (little endian): magic `BGCK`, `u32` version, 32-byte
//! config hash, `u32` metadata length, metadata JSON, `u32` array count, then
//! per array a `u32` name length, the name, a `u64` element count, and finally
//! all array payloads as `f64` in table order.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::KinematicState;
use crate::microsim::{EpisodeLog, EpisodeSummary, Frame};

pub const LOG_FORMAT: &str = "bandgen-episodes";
pub const LOG_VERSION: u32 = 1;
pub const FRAME_FIELDS: [&str; 22] = [
    "step",
    "ego_x",
    "ego_y",
    "ego_yaw",
    "ego_v_lon",
    "ego_v_lat",
    "ego_half_length",
    "ego_half_width",
    "adv_x",
    "adv_y",
    "adv_yaw",
    "adv_v_lon",
    "adv_v_lat",
    "adv_half_length",
    "adv_half_width",
    "adv_a_lon",
    "adv_a_lat",
    "sigma",
    "phi",
    "eps",
    "collision",
    "reserved",
];

const CKPT_MAGIC: &[u8; 4] = b"BGCK";
pub const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogHeader {
    format: String,
    version: u32,
    frame_fields: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogLine {
    summary: EpisodeSummary,
    frames: Vec<Vec<f64>>,
}

fn state_row(s: &KinematicState, out: &mut Vec<f64>) {
    out.extend([
        s.x,
        s.y,
        s.yaw,
        s.v_lon,
        s.v_lat,
        s.half_length,
        s.half_width,
    ]);
}

fn frame_row(f: &Frame) -> Vec<f64> {
    let mut r = Vec::with_capacity(FRAME_FIELDS.len());
    r.push(f.step as f64);
    state_row(&f.ego, &mut r);
    state_row(&f.adv, &mut r);
    r.extend([f.adv_action[0], f.adv_action[1], f.sigma, f.phi, f.eps]);
    r.push(if f.collision { 1.0 } else { 0.0 });
    r.push(0.0);
    r
}

fn row_state(r: &[f64]) -> KinematicState {
    KinematicState {
        x: r[0],
        y: r[1],
        yaw: r[2],
        v_lon: r[3],
        v_lat: r[4],
        half_length: r[5],
        half_width: r[6],
    }
}

fn row_frame(r: &[f64]) -> Result<Frame> {
    if r.len() != FRAME_FIELDS.len() {
        return Err(Error::format(
            "episode frame",
            format!("{} fields, expected {}", r.len(), FRAME_FIELDS.len()),
        ));
    }
    Ok(Frame {
        step: r[0] as usize,
        ego: row_state(&r[1..8]),
        adv: row_state(&r[8..15]),
        adv_action: [r[15], r[16]],
        sigma: r[17],
        phi: r[18],
        eps: r[19],
        collision: r[20] != 0.0,
    })
}

pub fn log_header() -> String {
    serde_json::to_string(&LogHeader {
        format: LOG_FORMAT.into(),
        version: LOG_VERSION,
        frame_fields: FRAME_FIELDS.iter().map(|s| s.to_string()).collect(),
    })
    .expect("header serializes")
}

pub fn episode_line(log: &EpisodeLog) -> String {
    // serde_json writes f64 in shortest round-trip form, so reads are exact
    serde_json::to_string(&LogLine {
        summary: log.summary.clone(),
        frames: log.frames.iter().map(frame_row).collect(),
    })
    .expect("episode serializes")
}

/// Appends episodes to a log file, writing the header when the file is new.
pub struct LogWriter {
    out: BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl LogWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = Self {
            out: BufWriter::new(file),
            path,
        };
        let h = log_header();
        w.raw(&h)?;
        Ok(w)
    }

    /// Opens an existing log for appending (header already present).
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if !path.exists() {
            return Self::create(path);
        }
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
        })
    }

    fn raw(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, log: &EpisodeLog) -> Result<()> {
        let line = episode_line(log);
        self.raw(&line)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn parse_logs(text: &str) -> Result<Vec<EpisodeLog>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines
        .next()
        .ok_or_else(|| Error::format("episode log", "empty file"))?;
    let h: LogHeader =
        serde_json::from_str(head).map_err(|e| Error::format("episode log header", e))?;
    if h.format != LOG_FORMAT || h.version != LOG_VERSION {
        return Err(Error::format(
            "episode log header",
            format!(
                "format {} v{} (expected {LOG_FORMAT} v{LOG_VERSION})",
                h.format, h.version
            ),
        ));
    }
    if h.frame_fields != FRAME_FIELDS {
        return Err(Error::format(
            "episode log header",
            "frame field list differs",
        ));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let line: LogLine = serde_json::from_str(l)
                .map_err(|e| Error::format(format!("episode log line {}", i + 2), e))?;
            Ok(EpisodeLog {
                frames: line
                    .frames
                    .iter()
                    .map(|r| row_frame(r))
                    .collect::<Result<_>>()?,
                summary: line.summary,
            })
        })
        .collect()
}

pub fn read_logs(path: impl AsRef<Path>) -> Result<Vec<EpisodeLog>> {
    let mut text = String::new();
    let f = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    BufReader::new(f)
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path.as_ref(), e))?;
    parse_logs(&text)
}

/// Streams episodes one at a time without holding the file in memory.
pub fn for_each_log(
    path: impl AsRef<Path>,
    mut f: impl FnMut(EpisodeLog) -> Result<()>,
) -> Result<()> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let mut lines = BufReader::new(file).lines();
    let head = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path.as_ref(), e))?,
        None => return Err(Error::format("episode log", "empty file")),
    };
    parse_logs(&head)?;
    for l in lines {
        let l = l.map_err(|e| Error::io(path.as_ref(), e))?;
        if l.trim().is_empty() {
            continue;
        }
        let mut one = parse_logs(&format!("{head}\n{l}"))?;
        f(one.pop().expect("one line parsed"))?;
    }
    Ok(())
}

/// Named flat arrays plus JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Result<&[f64]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::format("checkpoint", format!("missing array '{name}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(CKPT_MAGIC);
        b.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        b.extend_from_slice(&self.config_hash);
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        b.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        b.extend_from_slice(&meta);
        b.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, v) in &self.arrays {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&(v.len() as u64).to_le_bytes());
        }
        for (_, v) in &self.arrays {
            for x in v {
                b.extend_from_slice(&x.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let mut r = Cursor { b, at: 0 };
        if r.take(4)? != CKPT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("version {version}, expected {CKPT_VERSION}"),
            ));
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);
        let n = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(n)?)
            .map_err(|e| Error::format("checkpoint metadata", e))?;
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let l = r.u32()? as usize;
            let name = String::from_utf8(r.take(l)?.to_vec())
                .map_err(|e| Error::format("checkpoint", e))?;
            table.push((name, r.u64()? as usize));
        }
        let mut arrays = Vec::with_capacity(count);
        for (name, len) in table {
            let raw = r.take(
                len.checked_mul(8)
                    .ok_or_else(|| Error::format("checkpoint", "array too large"))?,
            )?;
            let v = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push((name, v));
        }
        if r.at != b.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Self {
            config_hash,
            meta,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let b = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_bytes(&b)
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}
