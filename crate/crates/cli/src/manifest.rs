//! Run manifests: content hashes of every input and output, the resolved
//! configuration and the tool version.

use std::cell::RefCell;
use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Default)]
struct Tally {
    hasher: Sha256,
    bytes: u64,
}

/// Reader that hashes everything read through it.
pub struct HashingReader<R> {
    inner: R,
    tally: Rc<RefCell<Tally>>,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        let mut t = self.tally.borrow_mut();
        t.hasher.update(&buf[..n]);
        t.bytes += n as u64;
        Ok(n)
    }
}

struct PendingInput {
    path: String,
    tally: Rc<RefCell<Tally>>,
}

#[derive(Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(skip)]
    pending: Vec<PendingInput>,
}

pub fn sha256_file(path: &Path) -> io::Result<FileDigest> {
    let mut f = BufReader::new(File::open(path)?);
    let mut h = Sha256::new();
    let bytes = io::copy(&mut f, &mut h)?;
    Ok(FileDigest { path: path.display().to_string(), sha256: hex::encode(h.finalize()), bytes })
}

impl Manifest {
    pub fn new(subcommand: &str) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            argv: std::env::args().skip(1).collect(),
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            pending: Vec::new(),
        }
    }

    /// Opens an input file (`-` for stdin) so its bytes are hashed as they
    /// are consumed.
    pub fn open(&mut self, path: &Path) -> io::Result<BufReader<HashingReader<Box<dyn Read>>>> {
        let inner: Box<dyn Read> =
            if path == Path::new("-") { Box::new(io::stdin()) } else { Box::new(File::open(path)?) };
        let tally = Rc::new(RefCell::new(Tally::default()));
        self.pending.push(PendingInput { path: path.display().to_string(), tally: tally.clone() });
        Ok(BufReader::new(HashingReader { inner, tally }))
    }

    /// Reads a whole input file as text.
    pub fn read_to_string(&mut self, path: &Path) -> io::Result<String> {
        let mut s = String::new();
        self.open(path)?.read_to_string(&mut s)?;
        Ok(s)
    }

    pub fn output(&mut self, path: &Path) -> io::Result<()> {
        if path != Path::new("-") {
            self.outputs.push(sha256_file(path)?);
        }
        Ok(())
    }

    fn finalize(&mut self) {
        for p in self.pending.drain(..) {
            let t = std::mem::take(&mut *p.tally.borrow_mut());
            self.inputs.push(FileDigest { path: p.path, sha256: hex::encode(t.hasher.finalize()), bytes: t.bytes });
        }
    }

    /// Writes the manifest to `path`, or as one line on stderr without one.
    pub fn emit(mut self, path: Option<PathBuf>) -> io::Result<()> {
        self.finalize();
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        match path {
            Some(p) => std::fs::write(p, json + "\n"),
            None => {
                eprintln!("manifest: {}", serde_json::to_string(&self).expect("manifest serializes"));
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn hashing_reader_matches_file_hash() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"abc").unwrap();
        let mut m = Manifest::new("t");
        let s = m.read_to_string(f.path()).unwrap();
        assert_eq!(s, "abc");
        m.finalize();
        assert_eq!(m.inputs[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(m.inputs[0].sha256, sha256_file(f.path()).unwrap().sha256);
    }
}
