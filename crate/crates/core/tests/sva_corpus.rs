mod common;

use assertflow_core::sva::{check_syntax, parse_assertion, DiagnosticKind, Trace};
use common::oracle::{self, Waves};
use common::corpus;

#[test]
fn valid_corpus_parses_and_round_trips() {
    let lines = corpus("valid.sva");
    assert!(lines.len() >= 40, "{}", lines.len());
    for line in lines {
        let ast = parse_assertion(&line).unwrap_or_else(|d| panic!("{line}: {d:?}"));
        let printed = ast.to_source();
        let again = parse_assertion(&printed).unwrap_or_else(|d| panic!("{printed}: {d:?}"));
        assert_eq!(again, ast, "{line} -> {printed}");
        assert_eq!(again.to_source(), printed);
        assert!(check_syntax(&line).ok);
    }
}

#[test]
fn invalid_corpus_is_rejected_with_expected_kind() {
    let lines = corpus("invalid.sva");
    assert!(lines.len() >= 20, "{}", lines.len());
    for line in lines {
        let (kind, text) = line.split_once("::").unwrap();
        let text = text.trim();
        let expected = match kind.trim() {
            "empty" => DiagnosticKind::Empty,
            "lexical" => DiagnosticKind::Lexical,
            "grammar" => DiagnosticKind::Grammar,
            "unsupported" => DiagnosticKind::Unsupported,
            other => panic!("unknown kind {other}"),
        };
        let report = check_syntax(text);
        assert!(!report.ok, "{text} should be rejected");
        let d = &report.diagnostics[0];
        assert_eq!(d.kind, expected, "{text}: {d:?}");
        assert!(d.line >= 1 && d.column >= 1, "{text}: {d:?}");
    }
}

#[test]
fn semantics_corpus_matches_reference_evaluator() {
    let bodies = corpus("semantics.sva");
    assert!(bodies.len() >= 50, "{}", bodies.len());
    let names = ["a", "b"];
    let mut checked = 0u64;
    for body in bodies {
        let ast = parse_assertion(&format!("assert property (@(posedge clk) {body});"))
            .unwrap_or_else(|d| panic!("{body}: {d:?}"));
        for len in 0..=4 {
            for rows in oracle::all_rows(2, len) {
                let trace = Trace::new(names.iter().map(|s| s.to_string()).collect(), &rows).unwrap();
                let got: Vec<_> = assertflow_core::sva::eval_assertion(&ast, &trace)
                    .unwrap()
                    .per_attempt
                    .into_iter()
                    .map(oracle::convert)
                    .collect();
                let want = oracle::attempts(&ast, &Waves::new(&names, &rows));
                assert_eq!(got, want, "{body} on {rows:?}");
                checked += 1;
            }
        }
    }
    assert!(checked > 10_000);
}
