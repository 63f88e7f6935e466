//! JSON Lines readers and writers.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::IoError;

/// Iterator over the records of a JSONL stream. Blank lines are skipped;
/// line numbers in errors are 1-based.
pub struct JsonlReader<R, T> {
    reader: R,
    line: usize,
    buf: String,
    _marker: std::marker::PhantomData<T>,
}

impl<R: BufRead, T: DeserializeOwned> JsonlReader<R, T> {
    pub fn new(reader: R) -> Self {
        JsonlReader { reader, line: 0, buf: String::new(), _marker: std::marker::PhantomData }
    }
}

impl<R: BufRead, T: DeserializeOwned> Iterator for JsonlReader<R, T> {
    type Item = Result<T, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line += 1;
            let text = self.buf.trim();
            if text.is_empty() {
                continue;
            }
            return Some(serde_json::from_str(text).map_err(|source| IoError::Json { line: self.line, source }));
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, IoError> {
    JsonlReader::new(reader).collect()
}

pub fn write_jsonl_line<T: Serialize>(mut w: impl Write, item: &T) -> Result<(), IoError> {
    serde_json::to_writer(&mut w, item).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    mut w: impl Write,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<(), IoError> {
    for item in items {
        write_jsonl_line(&mut w, item)?;
    }
    Ok(())
}

/// JSONL text of `items`.
pub fn to_jsonl_string<'a, T: Serialize + 'a>(items: impl IntoIterator<Item = &'a T>) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, items).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}
