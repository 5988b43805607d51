//! `--set key.path=value` overrides applied to a JSON config tree.

use serde_json::Value;

/// Applies one `path=value` assignment. The value is parsed as JSON when
/// possible and taken as a plain string otherwise. Every intermediate key
/// must already exist; unknown leaf keys are left for strict
/// deserialization to reject.
pub fn apply(root: &mut Value, assignment: &str) -> Result<(), String> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override {assignment:?} is not of the form key=value"))?;
    if path.is_empty() {
        return Err(format!("override {assignment:?} has an empty key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let segments: Vec<&str> = path.split('.').collect();
    let (leaf, parents) = segments.split_last().expect("non-empty path");
    let mut node = root;
    for (i, seg) in parents.iter().enumerate() {
        let at = segments[..=i].join(".");
        node = step(node, seg).ok_or_else(|| format!("unknown config key {at:?}"))?;
    }
    match node {
        Value::Object(map) => {
            map.insert(leaf.to_string(), value);
            Ok(())
        }
        Value::Array(items) => {
            let slot = leaf
                .parse::<usize>()
                .ok()
                .and_then(|i| items.get_mut(i))
                .ok_or_else(|| format!("unknown config key {path:?}"))?;
            *slot = value;
            Ok(())
        }
        _ => Err(format!("config key {path:?} does not address an object or array")),
    }
}

fn step<'a>(node: &'a mut Value, seg: &str) -> Option<&'a mut Value> {
    match node {
        Value::Object(map) => map.get_mut(seg),
        Value::Array(items) => seg.parse::<usize>().ok().and_then(move |i| items.get_mut(i)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn dotted_paths() {
        let mut v = json!({"horizon": {"kind": "fixed", "rounds": 50}, "players": [{"name": "grim"}]});
        apply(&mut v, "horizon.rounds=100").unwrap();
        apply(&mut v, "players.0.name=tit_for_tat").unwrap();
        apply(&mut v, "seeds_per_pairing=3").unwrap();
        assert_eq!(v["horizon"]["rounds"], 100);
        assert_eq!(v["players"][0]["name"], "tit_for_tat");
        assert_eq!(v["seeds_per_pairing"], 3);
    }

    #[test]
    fn bad_paths() {
        let mut v = json!({"horizon": {"rounds": 50}, "players": []});
        assert!(apply(&mut v, "nothing.rounds=1").is_err());
        assert!(apply(&mut v, "players.0=1").is_err());
        assert!(apply(&mut v, "horizon.rounds.x=1").is_err());
        assert!(apply(&mut v, "no_equals").is_err());
    }
}
