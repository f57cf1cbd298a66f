use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{Branch, Bus, Grid, GridError};

pub const GRID_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDocument {
    format_version: u32,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    #[serde(default)]
    monitored: Option<Vec<usize>>,
    reference: u32,
}

/// Parses the versioned grid document. A missing `monitored` list means
/// every branch is monitored.
pub fn parse_grid_json(text: &str) -> Result<Grid, GridError> {
    let doc: GridDocument = serde_json::from_str(text).map_err(|e| GridError::Schema {
        field: offending_field(&e.to_string()),
        message: e.to_string(),
    })?;
    if doc.format_version != GRID_FORMAT_VERSION {
        return Err(GridError::Schema {
            field: "format_version".into(),
            message: format!(
                "unsupported version {} (expected {GRID_FORMAT_VERSION})",
                doc.format_version
            ),
        });
    }
    let mut seen = HashSet::new();
    for (k, b) in doc.buses.iter().enumerate() {
        if !seen.insert(b.id) {
            return Err(GridError::Schema {
                field: format!("buses[{k}].id"),
                message: format!("duplicate bus id {}", b.id),
            });
        }
    }
    let all = doc.monitored.is_none();
    let grid = Grid::new(
        doc.buses,
        doc.branches,
        doc.monitored.unwrap_or_default(),
        doc.reference,
    )?;
    Ok(if all { grid.monitor_all() } else { grid })
}

pub fn to_grid_json(grid: &Grid) -> String {
    let doc = GridDocument {
        format_version: GRID_FORMAT_VERSION,
        buses: grid.buses().to_vec(),
        branches: grid.branches().to_vec(),
        monitored: Some(grid.monitored().to_vec()),
        reference: grid.reference(),
    };
    serde_json::to_string_pretty(&doc).expect("grid serialises")
}

// serde_json reports fields as "missing field `x`" or "unknown field `x`".
fn offending_field(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_owned)
        .unwrap_or_else(|| "document".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tests::triangle;

    #[test]
    fn round_trip_is_identical() {
        let g = triangle();
        let text = to_grid_json(&g);
        let back = parse_grid_json(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(to_grid_json(&back), text);
    }

    #[test]
    fn missing_field_is_named() {
        let text = r#"{"format_version":1,"buses":[{"id":1,"m":1,"d":1,"p":0,"kind":"load"}],
            "branches":[{"from":1,"to":1,"limit":1}],"reference":1}"#;
        match parse_grid_json(text).unwrap_err() {
            GridError::Schema { field, .. } => assert_eq!(field, "beta"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_schema_error() {
        let text = r#"{"format_version":1,"buses":[
            {"id":1,"m":1,"d":1,"p":0,"kind":"load"},{"id":1,"m":1,"d":1,"p":0,"kind":"load"}],
            "branches":[],"reference":1}"#;
        match parse_grid_json(text).unwrap_err() {
            GridError::Schema { field, .. } => assert_eq!(field, "buses[1].id"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let text = to_grid_json(&triangle()).replace("\"format_version\": 1", "\"format_version\": 7");
        assert!(matches!(
            parse_grid_json(&text),
            Err(GridError::Schema { ref field, .. }) if field == "format_version"
        ));
    }
}
