use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CodegenError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PropertyValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

/// One actor instance in a spawn layout. Positions are centimeters,
/// rotations are (pitch, yaw, roll) degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorPlacement {
    #[serde(rename = "class")]
    pub class_name: String,
    pub position: [f64; 3],
    pub rotation: [f64; 3],
    pub scale: [f64; 3],
    #[serde(default)]
    pub properties: BTreeMap<String, PropertyValue>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub actors: Vec<ActorPlacement>,
}

impl LayoutSpec {
    /// One instance at the origin with identity rotation and unit scale.
    pub fn single_at_origin(class_name: &str) -> Self {
        Self {
            actors: vec![ActorPlacement {
                class_name: class_name.to_string(),
                position: [0.0; 3],
                rotation: [0.0; 3],
                scale: [1.0; 3],
                properties: BTreeMap::new(),
            }],
        }
    }

    pub fn validate(&self) -> Result<(), CodegenError> {
        for (i, a) in self.actors.iter().enumerate() {
            let bad = |why: &str| Err(CodegenError::MalformedLayout(format!("actor {i}: {why}")));
            if a.class_name.trim().is_empty() {
                return bad("empty class name");
            }
            if a.position.iter().chain(&a.rotation).chain(&a.scale).any(|v| !v.is_finite()) {
                return bad("non-finite component");
            }
            if a.scale.iter().any(|s| *s <= 0.0) {
                return bad("scale components must be positive");
            }
            if a.properties.values().any(|p| matches!(p, PropertyValue::Number(n) if !n.is_finite())) {
                return bad("non-finite property value");
            }
        }
        Ok(())
    }

    /// Compact JSON with fixed key order; the layout file format.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("layout serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CodegenError> {
        let layout: LayoutSpec =
            serde_json::from_str(text).map_err(|e| CodegenError::MalformedLayout(e.to_string()))?;
        layout.validate()?;
        Ok(layout)
    }
}

/// Byte range of the balanced `{...}` starting at `start`, honoring strings.
fn balanced_object(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (off, ch) in text[start..].char_indices() {
        if in_string {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + off + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Finds the first JSON object with an `actors` key anywhere in the reply,
/// whether bare, fenced or surrounded by prose.
pub fn parse_layout(response: &str) -> Result<LayoutSpec, CodegenError> {
    let mut malformed = None;
    let mut pos = 0;
    while let Some(rel) = response[pos..].find('{') {
        let start = pos + rel;
        let Some(end) = balanced_object(response, start) else {
            if response[start..].contains("\"actors\"") {
                malformed.get_or_insert_with(|| "unterminated layout document".to_string());
            }
            break;
        };
        match serde_json::from_str::<Value>(&response[start..end]) {
            Ok(Value::Object(map)) if map.contains_key("actors") => {
                let layout: LayoutSpec = serde_json::from_value(Value::Object(map))
                    .map_err(|e| CodegenError::MalformedLayout(e.to_string()))?;
                layout.validate()?;
                return Ok(layout);
            }
            Ok(_) => pos = end,
            Err(e) => {
                let head = &response[start..end.min(start + 64)];
                if head.contains("\"actors\"") {
                    malformed.get_or_insert_with(|| e.to_string());
                }
                pos = start + 1;
            }
        }
    }
    match malformed {
        Some(why) => Err(CodegenError::MalformedLayout(why)),
        None => Err(CodegenError::NoLayoutFound),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{"actors":[{"class":"ASheep","position":[0.0,0.0,0.0],"rotation":[0.0,0.0,0.0],"scale":[1.0,1.0,1.0],"properties":{}}]}"#;

    #[test]
    fn identity_placement() {
        let layout = parse_layout(DOC).unwrap();
        assert_eq!(layout, LayoutSpec::single_at_origin("ASheep"));
        assert_eq!(layout.to_canonical_json(), DOC);
    }

    #[test]
    fn embedded_in_prose_and_fences() {
        let wrapped = format!(
            "I placed the sheep.\n```cpp\nclass A {{ int x; }};\n```\n```json\n{DOC}\n```\nDone."
        );
        assert_eq!(parse_layout(&wrapped).unwrap(), parse_layout(DOC).unwrap());
    }

    #[test]
    fn missing_and_malformed() {
        assert_eq!(parse_layout("no layout here {\"a\": 1}"), Err(CodegenError::NoLayoutFound));
        let bad_scale = DOC.replace("[1.0,1.0,1.0]", "[1.0,0.0,1.0]");
        assert!(matches!(parse_layout(&bad_scale), Err(CodegenError::MalformedLayout(_))));
        let truncated = &DOC[..40];
        assert!(matches!(parse_layout(truncated), Err(CodegenError::MalformedLayout(_))));
        let no_class = DOC.replace("\"ASheep\"", "\"\"");
        assert!(matches!(parse_layout(&no_class), Err(CodegenError::MalformedLayout(_))));
    }

    #[test]
    fn properties_keep_scalar_types() {
        let text = r#"{"actors":[{"class":"AGrass","position":[1.5,-2,3e2],"rotation":[0,90,0],"scale":[2,2,2],"properties":{"Density":0.25,"Animated":true,"Label":"tuft"}}]}"#;
        let layout = parse_layout(text).unwrap();
        let p = &layout.actors[0].properties;
        assert_eq!(p["Density"], PropertyValue::Number(0.25));
        assert_eq!(p["Animated"], PropertyValue::Bool(true));
        assert_eq!(p["Label"], PropertyValue::Text("tuft".into()));
        let again = LayoutSpec::from_json(&layout.to_canonical_json()).unwrap();
        assert_eq!(again.to_canonical_json(), layout.to_canonical_json());
    }
}
