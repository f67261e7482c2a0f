use treewalk_core::nlu::{
    build_prompt, identify_prompt, parse_filter_output, parse_intent_output, parse_mode_output, render_messages,
    serialize_judgments, ModeLabel, PromptInputs, PromptKind, DEFAULT_FILTER_EXAMPLES,
};

const QUERY: &str = "What is the weather usually in Singapore at 9 a.m.?";

const FACTS: [&str; 7] = [
    "In Singapore, at 9 a.m., it is usually around 35 degrees celsius.",
    "In Singapore, between 8 a.m. and 11 a.m., the weather is around 35 degrees celsius.",
    "In London, at 9 a.m., it is usually 25 degrees celsius.",
    "In Singapore, between 10 a.m. and 11 a.m., it is usually around 30 degrees celsius.",
    "In Singapore, there are many tourist attractions.",
    "In Singapore, it is usually around 35 degrees celsius in the mornings, but cooler in the evenings.",
    "In {{ COUNTRY }}, at 9 a.m., it is usually around 35 degrees celsius.",
];

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn mode_prompt_matches_golden() {
    let m = build_prompt(PromptKind::Mode, &PromptInputs { utterance: Some(QUERY.trim_end_matches('?')), ..Default::default() }).unwrap();
    assert_eq!(render_messages(&m), golden("mode.txt"));
}

#[test]
fn intent_prompt_matches_golden() {
    let cands = ["Train", "Plane", "Own car"];
    let m = build_prompt(
        PromptKind::Intent,
        &PromptInputs { utterance: Some("By rail"), candidates: Some(&cands), ..Default::default() },
    )
    .unwrap();
    assert_eq!(render_messages(&m), golden("intent.txt"));
    assert_eq!(identify_prompt(&m), Some((PromptKind::Intent, "By rail".to_string())));
}

#[test]
fn filter_prompt_matches_golden() {
    let m = build_prompt(
        PromptKind::Filter,
        &PromptInputs { utterance: Some(QUERY), candidates: Some(&FACTS), examples: Some(DEFAULT_FILTER_EXAMPLES) },
    )
    .unwrap();
    assert_eq!(render_messages(&m), golden("filter.txt"));
    assert_eq!(identify_prompt(&m), Some((PromptKind::Filter, QUERY.to_string())));
}

#[test]
fn missing_inputs_are_errors() {
    assert!(build_prompt(PromptKind::Mode, &PromptInputs::default()).is_err());
    assert!(build_prompt(PromptKind::Intent, &PromptInputs { utterance: Some("x"), ..Default::default() }).is_err());
}

const REPLY: &str = r#"[{"key": 0, "relevance": 2, "justification": "answers it"},
{"key": 1, "relevance": 2, "justification": "time lies in span"},
{"key": 2, "relevance": 1, "justification": "wrong city"},
{"key": 3, "relevance": 1, "justification": "wrong time"},
{"key": 5, "relevance": 2, "justification": "implies it"},
{"key": 6, "relevance": 2, "justification": "placeholder"}]"#;

#[test]
fn filter_reply_variants_parse_identically() {
    let raw = parse_filter_output(REPLY).unwrap();
    assert_eq!(raw.dropped, 0);
    let keys: Vec<usize> = raw.judgments.iter().map(|j| j.key).collect();
    assert_eq!(keys, [0, 1, 2, 3, 5, 6]);
    let fenced = format!("```json\n{REPLY}\n```");
    let prose = format!("Sure! Here are the relevant facts [as requested]:\n{REPLY}\nHope this helps.");
    for v in [fenced, prose] {
        assert_eq!(parse_filter_output(&v).unwrap(), raw);
    }
    assert_eq!(parse_filter_output(&serialize_judgments(&raw.judgments)).unwrap(), raw);
    assert!(parse_filter_output("nothing here").is_err());
}

#[test]
fn mode_and_intent_replies() {
    for t in ["yes", "Yes.", "command", "It is a request"] {
        assert_eq!(parse_mode_output(t), ModeLabel::Free, "{t}");
    }
    for t in ["no", "No.", "maybe"] {
        assert_eq!(parse_mode_output(t), ModeLabel::Guided, "{t}");
    }
    assert_eq!(parse_mode_output("No"), ModeLabel::Guided);
    assert_eq!(parse_mode_output("yesterday"), ModeLabel::Guided);
    assert_eq!(parse_intent_output("The answer is 2.", 3), Ok(2));
    assert!(parse_intent_output("7", 3).is_err());
    assert!(parse_intent_output("none", 3).is_err());
}
