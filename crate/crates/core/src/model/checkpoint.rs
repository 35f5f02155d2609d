//! Binary checkpoints.
//!
//! Layout (all integers little-endian `u32`):
//! `b"MSBACKPT"`, version, JSON length, JSON `{config, prompts}`, tensor
//! count, then per tensor: name length, UTF-8 name, rank, dims, and the
//! row-major values as little-endian `f32`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::prompts::PromptTable;
use super::text::ToyTextEncoder;
use super::Detector;
use crate::error::{Error, Result};
use crate::tensor::Mat;

const MAGIC: &[u8; 8] = b"MSBACKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    prompts: PromptTable,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn save_checkpoint(det: &Detector, path: &Path) -> Result<()> {
    let text = det
        .toy_text()
        .ok_or_else(|| Error::Checkpoint("external backbones are not serialised".into()))?;
    let header = serde_json::to_vec(&Header {
        config: det.config.clone(),
        prompts: det.prompts.clone(),
    })?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION as usize)?;
    put_u32(&mut buf, header.len())?;
    buf.extend_from_slice(&header);
    let tensors: Vec<(&str, &Mat)> = det
        .params
        .iter()
        .map(|(_, n, m)| (n, m))
        .chain(text.params().iter().map(|(_, n, m)| (n, m)))
        .collect();
    put_u32(&mut buf, tensors.len())?;
    for (name, m) in tensors {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, 2)?;
        put_u32(&mut buf, m.rows)?;
        put_u32(&mut buf, m.cols)?;
        for v in &m.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Detector> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(hlen)?)?;
    let mut det = Detector::new(header.config.clone(), 0)?.with_prompts(header.prompts)?;
    let count = r.u32()?;
    let mut text_tensors = Vec::new();
    let mut seen = 0;
    for _ in 0..count {
        let nlen = r.u32()?;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims[..] {
            [n] => (1, n),
            [a, b] => (a, b),
            _ => return Err(Error::Checkpoint(format!("tensor {name} has rank {rank}"))),
        };
        let n = rows * cols;
        let data: Vec<f64> = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let m = Mat::from_vec(rows, cols, data);
        if name.starts_with("text.") {
            text_tensors.push((name, m));
            continue;
        }
        let id = det
            .params
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
        if det.params.get(id).shape() != m.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} is {:?}, model expects {:?}",
                m.shape(),
                det.params.get(id).shape()
            )));
        }
        *det.params.get_mut(id) = m;
        seen += 1;
    }
    if seen != det.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {seen} of {} model tensors",
            det.params.len()
        )));
    }
    let text = ToyTextEncoder::from_tensors(&header.config, &text_tensors)?;
    det.replace_toy_text(text)?;
    Ok(det)
}
