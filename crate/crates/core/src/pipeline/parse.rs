use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ir::{Feature, PlanSection, PortDecl, Stage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub sections: Vec<PlanSection>,
    pub signal_table: Vec<PortDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturesDocument {
    pub features: Vec<Feature>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointDraft {
    pub description: String,
    pub signals: Vec<String>,
    pub trigger: String,
    pub expected: String,
    pub timing: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointsDocument {
    pub checkpoints: Vec<CheckpointDraft>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvasDocument {
    pub assertions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageDocument {
    Plan(PlanDocument),
    Features(FeaturesDocument),
    Checkpoints(CheckpointsDocument),
    Svas(SvasDocument),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedOutput {
    pub document: StageDocument,
    /// Earlier blocks that were skipped, with the reason.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct ParseFailure {
    pub message: String,
}

struct Block<'a> {
    line: usize,
    text: &'a str,
}

fn line_of(raw: &str, offset: usize) -> usize {
    raw[..offset].matches('\n').count() + 1
}

/// Fenced code blocks plus bare JSON objects starting a line, in order of
/// appearance.
fn blocks(raw: &str) -> Vec<Block<'_>> {
    let mut out: Vec<(usize, Block)> = Vec::new();
    let mut fenced: Vec<(usize, usize)> = Vec::new();
    let mut offset = 0;
    let mut open: Option<usize> = None;
    for line in raw.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        if !line.trim_start().starts_with("```") {
            continue;
        }
        match open.take() {
            None => open = Some(start),
            Some(fence_start) => {
                let body_start = fence_start + raw[fence_start..].find('\n').map_or(0, |n| n + 1);
                out.push((
                    fence_start,
                    Block {
                        line: line_of(raw, body_start),
                        text: &raw[body_start..start],
                    },
                ));
                fenced.push((fence_start, offset));
            }
        }
    }
    if let Some(fence_start) = open {
        // an unterminated fence still counts as a block
        let body_start = fence_start + raw[fence_start..].find('\n').map_or(raw.len() - fence_start, |n| n + 1);
        out.push((
            fence_start,
            Block {
                line: line_of(raw, body_start),
                text: &raw[body_start..],
            },
        ));
        fenced.push((fence_start, raw.len()));
    }

    let mut pos = 0;
    while pos < raw.len() {
        let line_end = raw[pos..].find('\n').map_or(raw.len(), |n| pos + n + 1);
        let inside = fenced.iter().any(|(s, e)| pos >= *s && pos < *e);
        let trimmed = raw[pos..line_end].trim_start();
        if inside || !trimmed.starts_with('{') {
            pos = line_end;
            continue;
        }
        let start = line_end - trimmed.len();
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        let end = match stream.next() {
            Some(Ok(_)) => start + stream.byte_offset(),
            _ => line_end,
        };
        out.push((
            start,
            Block {
                line: line_of(raw, start),
                text: &raw[start..end],
            },
        ));
        pos = end.max(line_end);
    }
    out.sort_by_key(|(s, _)| *s);
    out.into_iter().map(|(_, b)| b).collect()
}

fn shaped<T: DeserializeOwned>(value: Value) -> Result<T, String> {
    serde_json::from_value(value).map_err(|e| e.to_string())
}

fn to_document(stage: Stage, value: Value) -> Result<StageDocument, String> {
    Ok(match stage {
        Stage::Plan => StageDocument::Plan(shaped(value)?),
        Stage::Features => StageDocument::Features(shaped(value)?),
        Stage::Checkpoints => StageDocument::Checkpoints(shaped(value)?),
        Stage::Svas => StageDocument::Svas(shaped(value)?),
    })
}

/// Extract the first well-formed document for `stage` from a raw reply.
/// Malformed or mis-shaped blocks before it are skipped with a warning.
pub fn parse_stage_output(stage: Stage, raw: &str) -> Result<ParsedOutput, ParseFailure> {
    let mut warnings = Vec::new();
    for block in blocks(raw) {
        let value: Value = match serde_json::from_str(block.text.trim()) {
            Ok(v) => v,
            Err(e) => {
                warnings.push(format!("block at line {} is not valid JSON: {e}", block.line));
                continue;
            }
        };
        match to_document(stage, value) {
            Ok(document) => return Ok(ParsedOutput { document, warnings }),
            Err(e) => warnings.push(format!(
                "block at line {} is not a {stage} document: {e}",
                block.line
            )),
        }
    }
    Err(ParseFailure {
        message: match warnings.last() {
            None => "no document block".to_string(),
            Some(last) => format!("no usable document block; {last}"),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prose_only_fails() {
        let err = parse_stage_output(Stage::Svas, "I think the design is fine.").unwrap_err();
        assert_eq!(err.message, "no document block");
    }

    #[test]
    fn second_block_used_after_malformed_first() {
        let raw = "Here:\n```json\n{\"assertions\": [\n```\nRetry:\n```json\n{\"assertions\": [\"assert property (@(posedge clk) a);\"]}\n```\n";
        let out = parse_stage_output(Stage::Svas, raw).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("line 3"), "{:?}", out.warnings);
        match out.document {
            StageDocument::Svas(d) => assert_eq!(d.assertions.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bare_object_and_wrong_shape() {
        let raw = "{\"features\": []}\n{\"assertions\": [\"x\"]}";
        let out = parse_stage_output(Stage::Svas, raw).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.document, StageDocument::Svas(SvasDocument { assertions: vec!["x".into()] }));
    }

    #[test]
    fn braces_inside_prose_are_ignored() {
        let raw = "Use {curly} text sparingly.\n  {\"assertions\": []}";
        let out = parse_stage_output(Stage::Svas, raw).unwrap();
        assert!(out.warnings.is_empty());
    }
}
