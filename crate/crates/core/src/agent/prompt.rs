use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::retrieval::ScoredChunk;
use crate::util::sha256_hex;

/// A fully rendered prompt plus the bindings it was rendered from. Mock
/// backends read scenario and item keys from `bindings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub digest: String,
    pub bindings: BTreeMap<String, String>,
    /// Repair round, 0 for the first attempt.
    pub round: u32,
}

impl PromptText {
    pub fn new(text: String, bindings: BTreeMap<String, String>, round: u32) -> Self {
        PromptText {
            digest: sha256_hex(text.as_bytes()),
            text,
            bindings,
            round,
        }
    }

    pub fn binding(&self, key: &str) -> Option<&str> {
        self.bindings.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("template placeholder `{0}` has no binding")]
    Unbound(String),
    #[error("unterminated placeholder starting at byte {0}")]
    Unterminated(usize),
    #[error("unmatched `}}` at byte {0}")]
    StrayBrace(usize),
}

/// Names of the `{name}` placeholders in `template`, in order of appearance.
pub fn placeholders(template: &str) -> Result<Vec<String>, RenderError> {
    let mut names = Vec::new();
    substitute(template, |name| {
        names.push(name.to_string());
        Ok(String::new())
    })?;
    Ok(names)
}

fn substitute(
    template: &str,
    mut lookup: impl FnMut(&str) -> Result<String, RenderError>,
) -> Result<String, RenderError> {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push('{');
                i += 2;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push('}');
                i += 2;
            }
            b'{' => {
                let end = template[i + 1..]
                    .find('}')
                    .ok_or(RenderError::Unterminated(i))?;
                let name = template[i + 1..i + 1 + end].trim();
                out.push_str(&lookup(name)?);
                i += end + 2;
            }
            b'}' => return Err(RenderError::StrayBrace(i)),
            _ => {
                let next = template[i..]
                    .find(['{', '}'])
                    .map_or(template.len(), |n| i + n);
                out.push_str(&template[i..next]);
                i = next;
            }
        }
    }
    Ok(out)
}

/// Substitute `bindings` into `template` and append a delimited context
/// block when chunks were retrieved. `{{` and `}}` produce literal braces.
pub fn render_prompt(
    template: &str,
    bindings: &BTreeMap<String, String>,
    retrieved: &[ScoredChunk],
) -> Result<PromptText, RenderError> {
    let mut text = substitute(template, |name| {
        bindings
            .get(name)
            .cloned()
            .ok_or_else(|| RenderError::Unbound(name.to_string()))
    })?;
    if !retrieved.is_empty() {
        text.push_str("\n\n<context>\n");
        for c in retrieved {
            text.push_str(&format!(
                "[{}#{}]\n{}\n",
                c.chunk.doc_id, c.chunk.chunk_index, c.chunk.text
            ));
        }
        text.push_str("</context>\n");
    }
    Ok(PromptText::new(text, bindings.clone(), 0))
}
