//! Expert review queue with first-verdict-wins semantics.
//!
//! A verdict is appended to the store event log before the item record is
//! rewritten, so a crash between the two is repaired by replaying the log on
//! open.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::store::{Store, StoreError};
use crate::util::{now_ms, sha256_hex};

pub const REVIEW_ITEMS: &str = "review_items";
const VERDICT_EVENT: &str = "review_verdict";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewVerdict {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: ReviewVerdict,
    pub reviewer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub decided_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum ReviewState {
    Open,
    Decided(Decision),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateFilter {
    Open,
    Decided,
}

impl StateFilter {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "open" => Some(Self::Open),
            "decided" => Some(Self::Decided),
            _ => None,
        }
    }

    fn matches(self, state: &ReviewState) -> bool {
        matches!(
            (self, state),
            (Self::Open, ReviewState::Open) | (Self::Decided, ReviewState::Decided(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    pub candidate_ref: String,
    pub golden_ref: String,
    pub task: String,
    /// Snapshot of the candidate payload at enqueue time.
    pub payload: Value,
    /// Snapshot of the golden input it was derived from.
    pub golden: Value,
    pub created_ms: u64,
    #[serde(flatten)]
    pub state: ReviewState,
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("review item `{0}` not found")]
    NotFound(String),
    #[error("review item `{item_id}` was already decided by {}", .existing.reviewer)]
    Conflict { item_id: String, existing: Decision },
    #[error("a reviewer id is required")]
    MissingReviewer,
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// What to put in front of a reviewer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewRequest {
    pub candidate_ref: String,
    pub golden_ref: String,
    pub task: String,
    pub payload: Value,
    pub golden: Value,
}

pub struct ReviewQueue {
    store: Arc<dyn Store>,
    lock: Mutex<()>,
}

pub fn item_id_for(candidate_ref: &str) -> String {
    format!("rev-{}", &sha256_hex(candidate_ref.as_bytes())[..16])
}

impl ReviewQueue {
    /// Open the queue, applying logged verdicts whose record write was lost.
    pub fn open(store: Arc<dyn Store>) -> Result<Self, ReviewError> {
        let queue = ReviewQueue {
            store,
            lock: Mutex::new(()),
        };
        for event in queue.store.events()? {
            if event.get("type").and_then(Value::as_str) != Some(VERDICT_EVENT) {
                continue;
            }
            let (Some(id), Some(decision)) = (
                event.get("item_id").and_then(Value::as_str),
                event.get("decision").and_then(|d| serde_json::from_value::<Decision>(d.clone()).ok()),
            ) else {
                continue;
            };
            if let Ok(mut item) = queue.get(id) {
                if item.state == ReviewState::Open {
                    item.state = ReviewState::Decided(decision);
                    queue.save(&item)?;
                }
            }
        }
        Ok(queue)
    }

    pub fn store(&self) -> &Arc<dyn Store> {
        &self.store
    }

    fn save(&self, item: &ReviewItem) -> Result<(), ReviewError> {
        let value = serde_json::to_value(item).expect("serializable");
        self.store.put_record(REVIEW_ITEMS, &item.item_id, &value)?;
        Ok(())
    }

    /// Add an item for the candidate; enqueuing the same candidate again
    /// returns the existing item unchanged.
    pub fn enqueue(&self, request: ReviewRequest) -> Result<ReviewItem, ReviewError> {
        let _guard = self.lock.lock().expect("review lock");
        let item_id = item_id_for(&request.candidate_ref);
        if let Ok(existing) = self.get(&item_id) {
            return Ok(existing);
        }
        let item = ReviewItem {
            item_id,
            candidate_ref: request.candidate_ref,
            golden_ref: request.golden_ref,
            task: request.task,
            payload: request.payload,
            golden: request.golden,
            created_ms: now_ms(),
            state: ReviewState::Open,
        };
        self.save(&item)?;
        Ok(item)
    }

    pub fn get(&self, item_id: &str) -> Result<ReviewItem, ReviewError> {
        let value = self
            .store
            .get_record(REVIEW_ITEMS, item_id)?
            .ok_or_else(|| ReviewError::NotFound(item_id.to_string()))?;
        serde_json::from_value(value).map_err(|e| {
            ReviewError::Store(StoreError::Corruption {
                id: item_id.to_string(),
                detail: e.to_string(),
            })
        })
    }

    /// Items in creation order, optionally filtered by state.
    pub fn list(&self, filter: Option<StateFilter>) -> Result<Vec<ReviewItem>, ReviewError> {
        let mut items = Vec::new();
        for id in self.store.list_records(REVIEW_ITEMS)? {
            let item = self.get(&id)?;
            if filter.is_none_or(|f| f.matches(&item.state)) {
                items.push(item);
            }
        }
        items.sort_by(|a, b| (a.created_ms, &a.item_id).cmp(&(b.created_ms, &b.item_id)));
        Ok(items)
    }

    /// Record a verdict. Only the first verdict counts; later ones fail with
    /// [`ReviewError::Conflict`] carrying the standing decision.
    pub fn decide(
        &self,
        item_id: &str,
        verdict: ReviewVerdict,
        reviewer: &str,
        reason: Option<String>,
    ) -> Result<ReviewItem, ReviewError> {
        if reviewer.trim().is_empty() {
            return Err(ReviewError::MissingReviewer);
        }
        let _guard = self.lock.lock().expect("review lock");
        let mut item = self.get(item_id)?;
        if let ReviewState::Decided(existing) = item.state {
            return Err(ReviewError::Conflict {
                item_id: item_id.to_string(),
                existing,
            });
        }
        let decision = Decision {
            verdict,
            reviewer: reviewer.to_string(),
            reason: reason.filter(|r| !r.trim().is_empty()),
            decided_ms: now_ms(),
        };
        self.store.append_event(&json!({
            "type": VERDICT_EVENT,
            "item_id": item_id,
            "decision": decision,
        }))?;
        item.state = ReviewState::Decided(decision);
        self.save(&item)?;
        Ok(item)
    }
}
