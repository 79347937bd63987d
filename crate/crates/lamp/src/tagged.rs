//! Reader for POS-tagged corpora in `surface<TAB>tag` form.

use std::fs;
use std::path::Path;

use lamp_core::templates::{TaggedParagraph, TaggedToken};

use crate::error::{Error, Result};

/// Loads a tagged corpus. Blank lines end a paragraph and a `# id: X` line
/// names the paragraph that follows; unnamed paragraphs get their ordinal.
pub fn load_tagged(path: &Path) -> Result<Vec<TaggedParagraph>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tagged(&text, path)
}

pub fn parse_tagged(text: &str, path: &Path) -> Result<Vec<TaggedParagraph>> {
    let mut out = Vec::new();
    let mut tokens: Vec<TaggedToken> = Vec::new();
    let mut pending_id: Option<String> = None;

    let flush = |tokens: &mut Vec<TaggedToken>, id: &mut Option<String>, out: &mut Vec<TaggedParagraph>| {
        if !tokens.is_empty() {
            let source_id = id.take().unwrap_or_else(|| out.len().to_string());
            out.push(TaggedParagraph { source_id, tokens: std::mem::take(tokens) });
        }
    };

    for (i, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut pending_id, &mut out);
            continue;
        }
        if line.starts_with('#') && !line.contains('\t') {
            if let Some(id) = line[1..].trim().strip_prefix("id:") {
                flush(&mut tokens, &mut pending_id, &mut out);
                pending_id = Some(id.trim().to_owned());
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            [surface, tag] if !surface.is_empty() && !tag.trim().is_empty() => {
                tokens.push(TaggedToken { surface: (*surface).to_owned(), tag: tag.trim().to_owned() })
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected `surface<TAB>tag`, got {} field(s)", fields.len()),
                })
            }
        }
    }
    flush(&mut tokens, &mut pending_id, &mut out);
    Ok(out)
}
