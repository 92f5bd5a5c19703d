use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Build a document conforming to `schema`, deterministically derived from
/// `context`. Supports the subset of JSON Schema the workbench emits:
/// `object`/`properties`, `array`/`items`/`minItems`/`maxItems`, `string`
/// with `enum`/`minLength`, `boolean`, `integer`, `number`.
pub fn synthesize(schema: &Value, context: &str) -> Value {
    let digest = Sha256::digest(context.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    gen(schema, "value", &mut rng)
}

fn gen(schema: &Value, name: &str, rng: &mut ChaCha8Rng) -> Value {
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if let Some(v) = options.choose(rng) {
            return v.clone();
        }
    }
    match schema.get("type").and_then(Value::as_str).unwrap_or("object") {
        "object" => {
            let mut out = Map::new();
            if let Some(props) = schema.get("properties").and_then(Value::as_object) {
                for (k, sub) in props {
                    out.insert(k.clone(), gen(sub, k, rng));
                }
            }
            Value::Object(out)
        }
        "array" => {
            let items = schema.get("items").cloned().unwrap_or(Value::Null);
            let min = schema.get("minItems").and_then(Value::as_u64).unwrap_or(0) as usize;
            let max = schema.get("maxItems").and_then(Value::as_u64).unwrap_or(u64::MAX) as usize;
            let want = rng.random_range(1..=2usize).max(min).min(max);
            if let Some(options) = items.get("enum").and_then(Value::as_array) {
                // distinct picks keep "list of names" arrays free of duplicates
                let n = want.min(options.len());
                return Value::Array(options.choose_multiple(rng, n).cloned().collect());
            }
            let singular = name.strip_suffix('s').unwrap_or(name);
            Value::Array((0..want).map(|_| gen(&items, singular, rng)).collect())
        }
        "string" => {
            let min = schema.get("minLength").and_then(Value::as_u64).unwrap_or(0) as usize;
            let mut s = format!("mock {} {:04x}", name.replace('_', " "), rng.random::<u16>());
            while s.chars().count() < min {
                s.push('.');
            }
            Value::String(s)
        }
        "boolean" => Value::Bool(rng.random()),
        "integer" => Value::from(schema.get("minimum").and_then(Value::as_i64).unwrap_or(0)),
        "number" => Value::from(schema.get("minimum").and_then(Value::as_f64).unwrap_or(0.0)),
        _ => Value::Null,
    }
}
