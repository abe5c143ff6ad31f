//! Vocabulary files: one token per line; line `i` (0-based) holds the token
//! with id `i + 4`, after the special tokens.

use std::fs;
use std::path::Path;

use wsdec_core::data::Vocabulary;

use crate::error::{Error, Result};

pub fn to_text(vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for t in vocab.tokens() {
        out.push_str(t);
        out.push('\n');
    }
    out
}

pub fn write(path: &Path, vocab: &Vocabulary) -> Result<()> {
    fs::write(path, to_text(vocab)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocabulary::from_tokens(text.lines().filter(|l| !l.is_empty())).map_err(|e| Error::format(path, e.to_string()))
}
