//! `clips/<id>.bin`: magic `SFCL`, `u32` version, five `u32` shape fields
//! `(T_f, d_v, C, F, S)`, then little-endian `f32` frames and spectrogram,
//! the `u8` mask, and the per-frame `f32` proximity.

use std::path::Path;

use super::{ClipRecord, CorpusClip, CorpusConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CLIP_MAGIC: &[u8; 4] = b"SFCL";
pub const CLIP_VERSION: u32 = 1;

fn push_f32s(out: &mut Vec<u8>, xs: &[f64]) {
    for &x in xs {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

pub fn write_clip(path: &Path, clip: &CorpusClip) -> Result<()> {
    let [tf, dv] = clip.frames.shape() else { unreachable!("frames are 2-D") };
    let [c, f, s] = clip.spectrogram.shape() else { unreachable!("spectrograms are 3-D") };
    let mut out = Vec::with_capacity(28 + 4 * (clip.frames.len() + clip.spectrogram.len() + tf) + tf);
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    for d in [*tf, *dv, *c, *f, *s] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    push_f32s(&mut out, clip.frames.data());
    push_f32s(&mut out, clip.spectrogram.data());
    out.extend_from_slice(&clip.gt_mask);
    push_f32s(&mut out, &clip.proximity);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::format(self.path, "file is truncated"));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }
}

pub fn read_clip(path: &Path, record: &ClipRecord, cfg: &CorpusConfig) -> Result<CorpusClip> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { buf: &buf, pos: 0, path };
    if cur.take(4)? != CLIP_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = cur.u32()?;
    if version != CLIP_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = cur.u32()? as usize;
    }
    let expected = [cfg.frames, cfg.feat_dim, 1, cfg.freq_bins, cfg.time_bins];
    if dims != expected {
        return Err(Error::format(path, format!("shape header {dims:?} does not match {expected:?}")));
    }
    let [tf, dv, c, f, s] = dims;
    let frames = Tensor::new(&[tf, dv], cur.f32s(tf * dv)?);
    let spectrogram = Tensor::new(&[c, f, s], cur.f32s(c * f * s)?);
    let gt_mask = cur.take(tf)?.to_vec();
    if gt_mask.iter().any(|&b| b > 1) {
        return Err(Error::format(path, "mask must be binary"));
    }
    let proximity = cur.f32s(tf)?;
    if cur.pos != buf.len() {
        return Err(Error::format(path, "trailing bytes"));
    }
    Ok(CorpusClip {
        id: record.id.clone(),
        label: record.label,
        frames,
        spectrogram,
        gt_mask,
        proximity,
        corrupted: record.corrupted,
        scenario: record.scenario,
    })
}
