//! Binary container shared by checkpoints and dataset files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic[4] | version u32 | text_len u32 | text (UTF-8) | section_count u32 | sections…
//! section = name_len u32 | name (UTF-8) | rank u32 | dims u32×rank | payload f32×numel
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{NvcError, Result};
use crate::tensor::Tensor;

pub const CONTAINER_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub tensor: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub text: String,
    pub sections: Vec<Section>,
}

impl Container {
    pub fn new(magic: [u8; 4], text: impl Into<String>) -> Self {
        Container {
            magic,
            text: text.into(),
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<f32>) {
        self.sections.push(Section {
            name: name.into(),
            tensor,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.sections.iter().find(|s| s.name == name).map(|s| &s.tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name)
            .ok_or_else(|| NvcError::Format(format!("missing section `{name}`")))
    }

    /// Sections whose name starts with `prefix`, in file order, prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor<f32>)> {
        self.sections
            .iter()
            .filter_map(move |s| s.name.strip_prefix(prefix).map(|n| (n, &s.tensor)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        put_str(&mut out, &self.text);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            put_str(&mut out, &s.name);
            let dims = s.tensor.dims();
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for &d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in s.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], magic: [u8; 4], origin: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            origin,
        };
        let found = r.take(4, "header")?;
        if found != magic {
            return Err(NvcError::BadMagic {
                kind: "container",
                found: u32::from_be_bytes([found[0], found[1], found[2], found[3]]),
                expected: u32::from_be_bytes(magic),
            });
        }
        let version = r.u32("header")?;
        if version != CONTAINER_VERSION {
            return Err(NvcError::Format(format!(
                "unsupported format version {version} (this build reads version {CONTAINER_VERSION})"
            )));
        }
        let text = r.string("config")?;
        let count = r.u32("header")? as usize;
        let mut sections = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string("section header")?;
            let rank = r.u32(&name)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32(&name)? as usize);
            }
            let numel: usize = dims.iter().product();
            let raw = r.take(numel.saturating_mul(4), &name)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::new(dims, data)
                .map_err(|e| NvcError::Format(format!("section `{name}`: {e}")))?;
            sections.push(Section { name, tensor });
        }
        if r.pos != bytes.len() {
            return Err(NvcError::Format(format!(
                "{} trailing bytes after last section",
                bytes.len() - r.pos
            )));
        }
        Ok(Container {
            magic,
            text,
            sections,
        })
    }

    /// Writes through a temporary sibling and renames it into place, so an
    /// interrupted write never leaves a partial file at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = PathBuf::from(path);
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        tmp.set_file_name(name);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path, magic: [u8; 4]) -> Result<Self> {
        let bytes = fs::read(path)?;
        Container::from_bytes(&bytes, magic, path)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(NvcError::Truncated {
                path: self.origin.to_path_buf(),
                detail: format!("unexpected end of section `{section}`"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        let b = self.take(4, section)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, section: &str) -> Result<String> {
        let len = self.u32(section)? as usize;
        let raw = self.take(len, section)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| NvcError::Format(format!("section `{section}` holds invalid UTF-8")))
    }
}
