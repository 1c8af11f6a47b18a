//! Tab-separated corpus manifest files.
//!
//! ```text
//! # fade corpus manifest
//! #slot	name	peter	kathy	lucy
//! #slot	verb	got	sees	bought
//! path	speaker	language	effort	words
//! plain/s01.wav	f1	eng	plain	peter sees toys
//! ```
//!
//! Lines starting with `#slot` declare the grammar in slot order, other `#`
//! lines and blank lines are ignored. The first remaining line must be the
//! column header. Audio paths are resolved relative to the manifest's
//! directory and words are separated by single spaces.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{AudioSource, CorpusEntry, CorpusManifest, MatrixGrammar, SentenceLabel, Slot, SpeechCondition};
use crate::error::{Error, Result};
use crate::frontend::{wav_sample_rate, write_wav};

pub const MANIFEST_HEADER: &str = "path\tspeaker\tlanguage\teffort\twords";

pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let at = |line: usize, msg: String| Error::Manifest(format!("{}:{line}: {msg}", path.display()));

    let mut slots = Vec::new();
    let mut header_seen = false;
    let mut rows = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim_end_matches('\r');
        if let Some(rest) = line.strip_prefix("#slot") {
            let mut fields = rest.split('\t').filter(|f| !f.is_empty());
            let name = fields.next().ok_or_else(|| at(line_no, "slot declaration without a name".into()))?;
            slots.push(Slot { name: name.to_string(), words: fields.map(str::to_string).collect() });
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != MANIFEST_HEADER {
                return Err(at(line_no, format!("expected header '{}'", MANIFEST_HEADER.replace('\t', "<TAB>"))));
            }
            header_seen = true;
            continue;
        }
        rows.push((line_no, line));
    }
    let grammar = MatrixGrammar::new(slots).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(Error::Manifest(format!("{}: empty corpus", path.display())));
    }

    let mut entries = Vec::with_capacity(rows.len());
    let mut rate: Option<(u32, PathBuf)> = None;
    for (line_no, line) in rows {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(at(line_no, format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        let audio_path = base.join(fields[0]);
        if !audio_path.is_file() {
            return Err(at(line_no, format!("audio file not found: {}", audio_path.display())));
        }
        let sr = wav_sample_rate(&audio_path)?;
        match &rate {
            None => rate = Some((sr, audio_path.clone())),
            Some((r, first)) if *r != sr => {
                return Err(at(line_no, format!("sample rate {sr} Hz differs from {r} Hz of {}", first.display())))
            }
            Some(_) => {}
        }
        let label = SentenceLabel::parse(fields[4]);
        grammar.indices(&label).map_err(|e| at(line_no, e.to_string()))?;
        entries.push(CorpusEntry {
            audio: AudioSource::File(audio_path),
            label,
            condition: SpeechCondition {
                speaker: fields[1].to_string(),
                language: fields[2].to_string(),
                effort: fields[3].parse().map_err(|e: Error| at(line_no, e.to_string()))?,
            },
        });
    }
    CorpusManifest::new(grammar, entries)
}

/// Writes a manifest next to its audio. In-memory entries are exported as
/// WAV files under `dir/audio/`.
pub fn save_manifest(m: &CorpusManifest, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("audio")).map_err(|e| Error::io(dir, e))?;
    let mut out = String::from("# fade corpus manifest\n");
    for slot in &m.grammar.slots {
        let _ = writeln!(out, "#slot\t{}\t{}", slot.name, slot.words.join("\t"));
    }
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for (i, e) in m.entries.iter().enumerate() {
        let rel = match &e.audio {
            AudioSource::File(p) => p.to_string_lossy().into_owned(),
            AudioSource::Memory(a) => {
                let rel = format!("audio/{i:05}.wav");
                write_wav(dir.join(&rel), a)?;
                rel
            }
        };
        let c = &e.condition;
        let _ = writeln!(out, "{rel}\t{}\t{}\t{}\t{}", c.speaker, c.language, c.effort, e.label);
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
