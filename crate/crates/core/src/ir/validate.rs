use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{
    quoted_signals, ArtifactKind, ArtifactSource, Checkpoint, DesignSpec, FeatureList,
    PipelineArtifact, PortDecl, SvaAssertion, VerificationPlan,
};
use crate::sva::parse_assertion;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

struct Checker<'a> {
    source: &'a dyn ArtifactSource,
    out: Vec<Violation>,
}

impl Checker<'_> {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.out.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    fn non_empty(&mut self, path: &str, text: &str) {
        if text.trim().is_empty() {
            self.push(path, "must not be empty");
        }
    }

    fn resolve(&mut self, path: &str, id: &str, kind: ArtifactKind) -> Option<PipelineArtifact> {
        match self.source.get_artifact(id) {
            Some(a) if a.kind() == kind => Some(a),
            Some(a) => {
                self.push(
                    path,
                    format!("`{id}` is a {}, expected a {}", a.kind().as_str(), kind.as_str()),
                );
                None
            }
            None => {
                self.push(path, format!("reference `{id}` does not resolve"));
                None
            }
        }
    }

    fn ports(&mut self, path: &str, ports: &[PortDecl]) {
        let mut seen = HashSet::new();
        for (i, p) in ports.iter().enumerate() {
            if !seen.insert(p.name.as_str()) {
                self.push(format!("{path}[{i}].name"), format!("duplicate port `{}`", p.name));
            }
            if p.width < 1 {
                self.push(format!("{path}[{i}].width"), "width must be at least 1");
            }
            if !is_identifier(&p.name) {
                self.push(format!("{path}[{i}].name"), format!("`{}` is not an identifier", p.name));
            }
        }
    }

    fn spec(&mut self, s: &DesignSpec) {
        self.non_empty("body", &s.body);
        self.ports("port_table", &s.port_table);
    }

    fn plan(&mut self, p: &VerificationPlan) {
        if p.sections.is_empty() {
            self.push("sections", "at least one section is required");
        }
        self.ports("signal_table", &p.signal_table);
        let table: HashSet<&str> = p.signal_table.iter().map(|d| d.name.as_str()).collect();
        for (i, section) in p.sections.iter().enumerate() {
            self.non_empty(&format!("sections[{i}].title"), &section.title);
            for (j, rule) in section.signal_relations.iter().enumerate() {
                for sig in quoted_signals(rule) {
                    if !table.contains(sig.as_str()) {
                        self.push(
                            format!("sections[{i}].signal_relations[{j}]"),
                            format!("signal `{sig}` is not in signal_table"),
                        );
                    }
                }
            }
        }
        if let Some(PipelineArtifact::DesignSpec(spec)) =
            self.resolve("spec_ref", &p.spec_ref, ArtifactKind::DesignSpec)
        {
            let ports: HashSet<&str> = spec.port_table.iter().map(|d| d.name.as_str()).collect();
            for (i, d) in p.signal_table.iter().enumerate() {
                if !ports.contains(d.name.as_str()) {
                    self.push(
                        format!("signal_table[{i}]"),
                        format!("signal `{}` is not a port of the design spec", d.name),
                    );
                }
            }
        }
    }

    fn features(&mut self, f: &FeatureList) {
        let mut ids = HashSet::new();
        for (i, feat) in f.features.iter().enumerate() {
            if !ids.insert(feat.feature_id.as_str()) {
                self.push(
                    format!("features[{i}].feature_id"),
                    format!("duplicate feature_id `{}`", feat.feature_id),
                );
            }
            self.non_empty(&format!("features[{i}].feature_id"), &feat.feature_id);
        }
        let Some(PipelineArtifact::VerificationPlan(plan)) =
            self.resolve("plan_ref", &f.plan_ref, ArtifactKind::VerificationPlan)
        else {
            return;
        };
        let table: HashSet<&str> = plan.signal_table.iter().map(|d| d.name.as_str()).collect();
        let sections: HashSet<&str> = plan.sections.iter().map(|s| s.title.as_str()).collect();
        for (i, feat) in f.features.iter().enumerate() {
            let missing: Vec<&str> = feat
                .signals
                .iter()
                .map(String::as_str)
                .filter(|s| !table.contains(s))
                .collect();
            if !missing.is_empty() {
                self.push(
                    format!("features[{i}].signals"),
                    format!("not in plan signal_table: {}", missing.join(", ")),
                );
            }
            if !sections.contains(feat.source_section.as_str()) {
                self.push(
                    format!("features[{i}].source_section"),
                    format!("plan has no section titled `{}`", feat.source_section),
                );
            }
        }
    }

    fn checkpoint(&mut self, c: &Checkpoint) {
        if c.signals.is_empty() {
            self.push("signals", "at least one signal is required");
        }
        self.non_empty("trigger", &c.trigger);
        self.non_empty("expected", &c.expected);
        self.non_empty("timing", &c.timing);
        if let Some(r) = &c.feature_ref {
            if let Some(PipelineArtifact::FeatureList(list)) =
                self.resolve("feature_ref.list_id", &r.list_id, ArtifactKind::FeatureList)
            {
                if !list.features.iter().any(|f| f.feature_id == r.feature_id) {
                    self.push(
                        "feature_ref.feature_id",
                        format!("feature list has no feature `{}`", r.feature_id),
                    );
                }
            }
        }
    }

    fn sva(&mut self, s: &SvaAssertion) {
        if s.syntax_ok != s.ast.is_some() {
            self.push(
                "ast",
                if s.syntax_ok {
                    "syntax_ok is true but ast is absent"
                } else {
                    "ast is present but syntax_ok is false"
                },
            );
        }
        match (parse_assertion(&s.source_text), &s.ast) {
            (Ok(parsed), Some(ast)) if parsed != *ast => {
                self.push("ast", "ast does not match the parse of source_text")
            }
            (Err(_), _) if s.syntax_ok => {
                self.push("syntax_ok", "source_text does not parse")
            }
            (Ok(_), _) if !s.syntax_ok => self.push("syntax_ok", "source_text parses"),
            _ => {}
        }
        if let Some(ck) = &s.checkpoint_ref {
            self.resolve("checkpoint_ref", ck, ArtifactKind::Checkpoint);
        }
        if s.lineage.is_empty() {
            return;
        }
        if s.checkpoint_ref.as_deref() != s.lineage.first().map(String::as_str) {
            self.push("lineage[0]", "lineage must start with checkpoint_ref");
        }
        let expected = [
            ArtifactKind::Checkpoint,
            ArtifactKind::FeatureList,
            ArtifactKind::VerificationPlan,
            ArtifactKind::DesignSpec,
        ];
        if s.lineage.len() > expected.len() {
            self.push("lineage", "lineage is longer than checkpoint, features, plan, spec");
        }
        for (i, (id, kind)) in s.lineage.iter().zip(expected).enumerate() {
            let path = format!("lineage[{i}]");
            let Some(artifact) = self.resolve(&path, id, kind) else {
                continue;
            };
            let next = s.lineage.get(i + 1).map(String::as_str);
            if next.is_some() && artifact.parent_ref() != next {
                self.push(path, format!("`{id}` does not reference the next lineage entry"));
            }
        }
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Check every invariant of `artifact`, resolving references via `source`.
/// Pure and deterministic; violations are listed in a fixed order.
pub fn validate_artifact(artifact: &PipelineArtifact, source: &dyn ArtifactSource) -> SchemaReport {
    let mut c = Checker {
        source,
        out: Vec::new(),
    };
    let expected_id = artifact.compute_id();
    if artifact.id() != expected_id {
        c.push(
            "id",
            format!("id `{}` does not match content address `{expected_id}`", artifact.id()),
        );
    }
    match artifact {
        PipelineArtifact::DesignSpec(s) => c.spec(s),
        PipelineArtifact::VerificationPlan(p) => c.plan(p),
        PipelineArtifact::FeatureList(f) => c.features(f),
        PipelineArtifact::Checkpoint(k) => c.checkpoint(k),
        PipelineArtifact::SvaAssertion(s) => c.sva(s),
    }
    SchemaReport {
        ok: c.out.is_empty(),
        violations: c.out,
    }
}
