use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BridgeError, EvidenceStep, Label, Method, OutcomeVerdict, ValidationOutcome};
use crate::agent::{
    AgentRuntime, AgentSpec, Backend, PromptText, StochasticErrorModel, GROUND_TRUTH, ITEM_KEY,
};
use crate::equiv::EquivVerdict;
use crate::metrics::round2;

/// Share of ground-truth positives in a simulated population. Chosen
/// jointly with the bundled error model so that the k=1 false-positive
/// rate and precision both land on their calibration targets.
pub const DEFAULT_GTP_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    /// Number of unanimous checks per item; 0 when outcomes mix methods.
    pub k: usize,
    pub n_items: usize,
    /// FP over ground-truth negatives, in percent; None without negatives.
    pub fp_rate: Option<f64>,
    /// FN over ground-truth positives, in percent; None without positives.
    pub fn_rate: Option<f64>,
    /// TP over accepted items, in percent; None when nothing was accepted.
    pub precision: Option<f64>,
    pub confusion: Confusion,
}

fn percent(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| round2(num as f64 * 100.0 / den as f64))
}

pub fn stats_from_confusion(k: usize, c: Confusion) -> FilterStats {
    FilterStats {
        k,
        n_items: c.tp + c.fp + c.tn + c.fn_,
        fp_rate: percent(c.fp, c.fp + c.tn),
        fn_rate: percent(c.fn_, c.fn_ + c.tp),
        precision: percent(c.tp, c.tp + c.fp),
        confusion: c,
    }
}

/// Confusion counts and rates of labeled outcomes.
pub fn evaluate_precision(outcomes: &[ValidationOutcome]) -> Result<FilterStats, BridgeError> {
    let unlabeled: Vec<String> = outcomes
        .iter()
        .filter(|o| o.label.is_none())
        .map(|o| o.candidate_ref.clone())
        .collect();
    if !unlabeled.is_empty() {
        return Err(BridgeError::Unlabeled(unlabeled));
    }
    let mut c = Confusion::default();
    for o in outcomes {
        match (o.verdict, o.label.expect("checked above")) {
            (OutcomeVerdict::Positive, Label::Gtp) => c.tp += 1,
            (OutcomeVerdict::Positive, Label::Gtn) => c.fp += 1,
            (OutcomeVerdict::Negative, Label::Gtn) => c.tn += 1,
            (OutcomeVerdict::Negative, Label::Gtp) => c.fn_ += 1,
        }
    }
    let ks: Vec<usize> = outcomes
        .iter()
        .map(|o| match o.method {
            Method::ReverseK { k } => k,
            _ => 0,
        })
        .collect();
    let k = match ks.first() {
        Some(&first) if ks.iter().all(|&x| x == first) => first,
        _ => 0,
    };
    Ok(stats_from_confusion(k, c))
}

const MODEL_REF: &str = "simulation";

/// Labeled k-agent outcomes for a simulated population. Item labels and
/// member draws depend only on `seed`, the model and the item index, so
/// populations for different k are paired: member j answers the same way
/// whatever k is.
pub fn simulate_outcomes(
    model: &StochasticErrorModel,
    k: usize,
    n_items: usize,
    gtp_fraction: f64,
    seed: u64,
) -> Result<Vec<ValidationOutcome>, BridgeError> {
    model.validate().map_err(BridgeError::InvalidConfig)?;
    if k == 0 || n_items == 0 {
        return Err(BridgeError::InvalidConfig("k and n_items must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&gtp_fraction) {
        return Err(BridgeError::InvalidConfig(format!("gtp_fraction {gtp_fraction} not in [0, 1]")));
    }
    let mut runtime = AgentRuntime::default();
    runtime.register_error_model(MODEL_REF, model.clone());
    let agent = AgentSpec::new(
        "simulated_checker",
        "check {item_key}",
        Backend::StochasticMock {
            error_model_ref: MODEL_REF.into(),
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<Label> = (0..n_items)
        .map(|_| if rng.random_bool(gtp_fraction) { Label::Gtp } else { Label::Gtn })
        .collect();
    let mut out = Vec::with_capacity(n_items);
    for (i, label) in labels.into_iter().enumerate() {
        let item = format!("item-{seed}-{i}");
        let mut bindings = BTreeMap::new();
        bindings.insert(ITEM_KEY.to_string(), item.clone());
        bindings.insert(
            GROUND_TRUTH.to_string(),
            match label {
                Label::Gtp => "gtp",
                Label::Gtn => "gtn",
            }
            .to_string(),
        );
        let replies = runtime
            .invoke_group(&agent, k, |_| Ok(PromptText::new(format!("check {item}"), bindings.clone(), 0)))
            .map_err(|e| BridgeError::Agent(e.to_string()))?;
        let evidence: Vec<EvidenceStep> = replies
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let equivalent = r.raw_text == "equivalent";
                EvidenceStep {
                    description: format!("simulated check {j}"),
                    inputs: vec![item.clone()],
                    result: r.raw_text.clone(),
                    equivalence: Some(if equivalent {
                        EquivVerdict::Equivalent
                    } else {
                        EquivVerdict::Inequivalent
                    }),
                    check: None,
                    infrastructure: false,
                }
            })
            .collect();
        let positive = evidence.iter().all(|s| s.equivalence == Some(EquivVerdict::Equivalent));
        out.push(ValidationOutcome {
            candidate_ref: item,
            method: Method::ReverseK { k },
            verdict: if positive {
                OutcomeVerdict::Positive
            } else {
                OutcomeVerdict::Negative
            },
            reason: (!positive).then(|| "a simulated check disagreed".to_string()),
            evidence,
            label: Some(label),
            reviewer: None,
            infrastructure_failure: false,
        });
    }
    Ok(out)
}

/// Filter statistics for each k over the same simulated population.
pub fn simulate_filter(
    model: &StochasticErrorModel,
    k_values: &[usize],
    n_items: usize,
    gtp_fraction: f64,
    seed: u64,
) -> Result<Vec<FilterStats>, BridgeError> {
    if k_values.is_empty() {
        return Err(BridgeError::InvalidConfig("k_values must not be empty".into()));
    }
    k_values
        .iter()
        .map(|&k| evaluate_precision(&simulate_outcomes(model, k, n_items, gtp_fraction, seed)?))
        .collect()
}
