use std::collections::BTreeSet;

use serde_json::json;

use clerms_core::workflow::{transition_table, StateValue};

#[test]
fn table_serializes_for_the_portal() {
    let doc = serde_json::to_value(transition_table()).unwrap();
    let rules = doc.as_array().unwrap();
    assert_eq!(rules.len(), 18);
    assert_eq!(
        rules[0],
        json!({"from": "PreSubmitted", "to": "AwaitingDocuments", "operation": "submit", "guard": "always"})
    );
    assert!(rules.contains(&json!({
        "from": "Approved", "to": "Escalated", "operation": "escalate", "guard": "disclosure_or_preservation"
    })));
    assert!(rules.contains(&json!({
        "from": "Challenged", "to": "UnderEvaluation", "operation": "reopen_evaluation", "guard": "not_yet_reevaluated"
    })));
}

#[test]
fn every_state_is_reachable_and_closed_is_terminal() {
    let table = transition_table();
    let mut reached = BTreeSet::from([StateValue::PreSubmitted]);
    loop {
        let before = reached.len();
        for r in table {
            if reached.contains(&r.from) {
                reached.insert(r.to);
            }
        }
        if reached.len() == before {
            break;
        }
    }
    assert_eq!(reached, StateValue::ALL.into_iter().collect());
    assert!(table.iter().all(|r| r.from != StateValue::Closed));
}

#[test]
fn refused_requests_never_lead_to_action() {
    for r in transition_table() {
        if matches!(r.from, StateValue::Rejected | StateValue::Challenged) {
            assert_ne!(r.to, StateValue::ActionApplied);
            assert_ne!(r.to, StateValue::Escalated);
        }
    }
}
