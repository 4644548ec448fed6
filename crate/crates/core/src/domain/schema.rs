//! JSON Schema (draft 2020-12) for a pre-submission document.
//!
//! The portal generates its form rules from this document. Each property
//! carries an `x-block` annotation naming the submission block it belongs to.
//! Two rules are left to [`super::validate_submission`] because the schema
//! language cannot state them: a data period's start must not follow its
//! end, and the agency country must be an assigned ISO 3166-1 code (the
//! schema lists the codes but cannot express "officially assigned" beyond that).

use serde_json::{json, Value};

use super::iso3166::ALPHA2;

const NON_BLANK: &str = r"\S";
const EMAIL: &str = r"^[^@\s]+@[^@\s.]+(\.[^@\s.]+)+$";
const DIGEST: &str = "^[0-9a-f]{64}$";

fn text(block: &str) -> Value {
    json!({"type": "string", "pattern": NON_BLANK, "x-block": block})
}

pub fn submission_schema() -> Value {
    let requester = json!({
        "type": "object",
        "x-block": "agent_contact",
        "required": [
            "agent_name", "agent_email", "agent_phone", "badge_id",
            "superior_name", "superior_contact",
            "agency_name", "agency_country", "jurisdiction"
        ],
        "properties": {
            "agent_name": text("agent_contact"),
            "agent_email": {"type": "string", "pattern": EMAIL, "x-block": "agent_contact"},
            "agent_phone": text("agent_contact"),
            "badge_id": text("agent_contact"),
            "superior_name": text("superior_contact"),
            "superior_contact": text("superior_contact"),
            "agency_name": text("agency_contact"),
            "agency_country": {"type": "string", "enum": ALPHA2, "x-block": "agency_contact"},
            "jurisdiction": text("agency_contact"),
            "authority_type": {"type": ["string", "null"], "x-block": "agency_contact"}
        },
        "additionalProperties": false
    });

    let identifier = json!({
        "type": "object",
        "required": ["kind", "value"],
        "properties": {
            "kind": {"enum": ["account", "email", "username", "ip"]},
            "value": {"type": "string", "pattern": NON_BLANK}
        },
        "additionalProperties": false,
        "allOf": [
            {
                "if": {"properties": {"kind": {"const": "ip"}}},
                "then": {"properties": {"value": {"anyOf": [{"format": "ipv4"}, {"format": "ipv6"}]}}}
            },
            {
                "if": {"properties": {"kind": {"const": "email"}}},
                "then": {"properties": {"value": {"pattern": EMAIL}}}
            }
        ]
    });

    let target = json!({
        "type": "object",
        "x-block": "target",
        "required": ["identifiers"],
        "properties": {
            "identifiers": {"type": "array", "minItems": 1, "items": identifier},
            "service_uri": {"type": ["string", "null"], "format": "uri"},
            "data_period": {
                "type": ["object", "null"],
                "required": ["start", "end"],
                "properties": {
                    "start": {"type": "string", "format": "date-time"},
                    "end": {"type": "string", "format": "date-time"}
                },
                "additionalProperties": false
            }
        },
        "additionalProperties": false
    });

    let instrument = json!({
        "type": "object",
        "required": ["kind", "issuing_authority", "reference_number"],
        "properties": {
            "kind": {"enum": [
                "subpoena", "court_order", "search_warrant", "mlat_request",
                "rogatory_letter", "emergency_declaration", "other"
            ]},
            "qualifier": {"type": ["string", "null"]},
            "issuing_authority": {"type": "string", "pattern": NON_BLANK},
            "reference_number": {"type": "string", "pattern": NON_BLANK},
            "document_refs": {"type": ["array", "null"], "items": {"type": "string", "pattern": DIGEST}}
        },
        "additionalProperties": false,
        "if": {"properties": {"kind": {"const": "other"}}},
        "then": {"required": ["qualifier"], "properties": {"qualifier": {"type": "string", "pattern": NON_BLANK}}}
    });

    let origin = json!({
        "x-block": "request",
        "oneOf": [
            {
                "type": "object",
                "required": ["kind"],
                "properties": {"kind": {"const": "domestic"}},
                "additionalProperties": false
            },
            {
                "type": "object",
                "required": ["kind", "channel"],
                "properties": {
                    "kind": {"const": "foreign"},
                    "channel": {"enum": ["mlat", "rogatory", "cloud_act", "direct"]}
                },
                "additionalProperties": false
            }
        ]
    });

    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$id": "clerms:submission",
        "title": "Law-enforcement request pre-submission",
        "type": "object",
        "required": ["requester", "target", "instruments", "objective", "regime", "origin"],
        "properties": {
            "request_id": {"type": ["string", "null"], "format": "uuid", "x-block": "request"},
            "requester": requester,
            "target": target,
            "instruments": {"type": "array", "minItems": 1, "items": instrument, "x-block": "legal_documents"},
            "objective": {"enum": ["disclosure", "preservation", "removal", "testimony"], "x-block": "request"},
            "regime": {"enum": ["emergency", "routine"], "x-block": "request"},
            "origin": origin,
            "narrative": {"type": ["string", "null"], "x-block": "request"},
            "submitted_at": {"type": ["string", "null"], "format": "date-time", "x-block": "request"},
            "state": {"x-block": "request", "description": "ignored on submission"}
        },
        "if": {"properties": {"regime": {"const": "emergency"}}, "required": ["regime"]},
        "then": {"required": ["narrative"], "properties": {"narrative": {"type": "string", "pattern": NON_BLANK}}}
    })
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::super::fixtures::scenario_one;
    use super::super::validate_submission;
    use super::*;
    use crate::time::Timestamp;

    fn schema_accepts(doc: &Value) -> bool {
        jsonschema::options()
            .should_validate_formats(true)
            .build(&submission_schema())
            .expect("schema compiles")
            .is_valid(doc)
    }

    fn server_accepts(doc: &Value) -> bool {
        validate_submission(doc, Timestamp::from_millis(0)).is_ok()
    }

    fn mutated(f: impl FnOnce(&mut Value)) -> Value {
        let mut v = scenario_one();
        f(&mut v);
        v
    }

    #[test]
    fn schema_agrees_with_validator() {
        let cases = vec![
            scenario_one(),
            mutated(|v| v["requester"]["agent_name"] = json!("  ")),
            mutated(|v| v["requester"]["agent_email"] = json!("mike@localhost")),
            mutated(|v| v["requester"]["agency_country"] = json!("XX")),
            mutated(|v| {
                v.as_object_mut().unwrap().remove("requester");
            }),
            mutated(|v| {
                v["requester"].as_object_mut().unwrap().remove("superior_name");
            }),
            mutated(|v| v["instruments"] = json!([])),
            mutated(|v| v["instruments"][0]["kind"] = json!("other")),
            mutated(|v| {
                v["instruments"][0]["kind"] = json!("other");
                v["instruments"][0]["qualifier"] = json!("administrative order");
            }),
            mutated(|v| v["instruments"][0]["document_refs"] = json!(["abc"])),
            mutated(|v| v["instruments"][0]["document_refs"] = json!(["a".repeat(64)])),
            mutated(|v| v["target"]["identifiers"] = json!([])),
            mutated(|v| v["target"]["identifiers"] = json!([{"kind": "ip", "value": "203.0.113.7"}])),
            mutated(|v| v["target"]["identifiers"] = json!([{"kind": "ip", "value": "not-an-ip"}])),
            mutated(|v| v["target"]["identifiers"] = json!([{"kind": "email", "value": "x@y.org"}])),
            mutated(|v| v["target"]["service_uri"] = json!("no scheme here")),
            mutated(|v| v["objective"] = json!("surveillance")),
            mutated(|v| v["regime"] = json!("emergency")),
            mutated(|v| {
                v["regime"] = json!("emergency");
                v["narrative"] = json!("");
            }),
            mutated(|v| v["origin"] = json!({"kind": "foreign", "channel": "mlat"})),
            mutated(|v| v["origin"] = json!({"kind": "foreign"})),
            mutated(|v| v["origin"] = json!({"kind": "martian"})),
            mutated(|v| v["submitted_at"] = json!("yesterday")),
            mutated(|v| v["request_id"] = json!("not-a-uuid")),
        ];
        for (i, doc) in cases.iter().enumerate() {
            assert_eq!(schema_accepts(doc), server_accepts(doc), "case {i}: {doc}");
        }
    }

    #[test]
    fn every_property_names_a_block() {
        let schema = submission_schema();
        for (name, prop) in schema["properties"].as_object().unwrap() {
            assert!(prop.get("x-block").is_some(), "{name}");
        }
        for (name, prop) in schema["properties"]["requester"]["properties"].as_object().unwrap() {
            assert!(prop.get("x-block").is_some(), "requester.{name}");
        }
    }
}
