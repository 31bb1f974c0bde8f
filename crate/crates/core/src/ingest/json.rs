use crate::network::NetworkCase;

use super::IngestError;

pub fn case_to_json(case: &NetworkCase) -> String {
    serde_json::to_string_pretty(case).expect("case serialization cannot fail")
}

pub fn case_from_json(text: &str) -> Result<NetworkCase, IngestError> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use num_complex::Complex64;

    #[test]
    fn two_bus_roundtrip() {
        let case = cases::two_bus(Complex64::new(0.5, 0.1), Complex64::new(0.01, 0.1));
        assert_eq!(case_from_json(&case_to_json(&case)).unwrap(), case);
    }

    #[test]
    fn schema_field_names() {
        let value: serde_json::Value =
            serde_json::from_str(&case_to_json(&cases::three_bus_triangle())).unwrap();
        assert_eq!(value["base_mva"], 100.0);
        let bus = &value["buses"][1];
        for key in ["id", "kind", "p_load", "q_load", "p_gen", "v_setpoint"] {
            assert!(bus.get(key).is_some(), "bus is missing {key}");
        }
        assert_eq!(bus["kind"], "pv");
        let branch = &value["branches"][0];
        for key in ["id", "from", "to", "r", "x"] {
            assert!(branch.get(key).is_some(), "branch is missing {key}");
        }
    }

    #[test]
    fn missing_branches_key_is_an_error() {
        let text = r#"{"base_mva": 100, "buses": [
            {"id": 1, "kind": "slack", "p_load": 0, "q_load": 0, "p_gen": 0, "v_setpoint": 1}
        ]}"#;
        let err = case_from_json(text).unwrap_err();
        assert!(err.to_string().contains("branches"), "{err}");
    }

    #[test]
    fn invalid_topology_is_rejected_on_load() {
        let text = r#"{"base_mva": 100, "buses": [
            {"id": 1, "kind": "pq", "p_load": 0, "q_load": 0, "v_setpoint": 1}
        ], "branches": []}"#;
        assert!(case_from_json(text).unwrap_err().to_string().contains("slack"));
    }
}
