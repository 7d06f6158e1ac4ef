use thiserror::Error;

use super::{ArtifactSource, PipelineArtifact};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LineageError {
    #[error("artifact `{0}` not found")]
    NotFound(String),
    #[error("broken lineage: `{referenced_by}` references missing artifact `{missing}`")]
    Broken {
        missing: String,
        referenced_by: String,
    },
    #[error("lineage of `{0}` does not terminate within five links")]
    TooLong(String),
}

/// The artifact followed by its ancestors, ending at the design spec (or at
/// the first artifact without a parent reference).
pub fn trace_lineage(
    id: &str,
    source: &dyn ArtifactSource,
) -> Result<Vec<PipelineArtifact>, LineageError> {
    let first = source
        .get_artifact(id)
        .ok_or_else(|| LineageError::NotFound(id.to_string()))?;
    let mut chain = vec![first];
    while let Some(parent) = chain.last().and_then(|a| a.parent_ref()).map(str::to_string) {
        if chain.len() == 5 {
            return Err(LineageError::TooLong(id.to_string()));
        }
        let next = source.get_artifact(&parent).ok_or_else(|| LineageError::Broken {
            missing: parent.clone(),
            referenced_by: chain.last().map(|a| a.id().to_string()).unwrap_or_default(),
        })?;
        chain.push(next);
    }
    Ok(chain)
}
