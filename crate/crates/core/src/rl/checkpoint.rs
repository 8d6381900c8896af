//! Text checkpoint: one `statekey action value` line per visited pair, sorted.

use super::{QTable, RlError, StateKey};

pub fn write_checkpoint(table: &QTable) -> String {
    let mut out = String::new();
    for (k, a, v) in table.entries() {
        out.push_str(&format!("{k} {a} {v:.6}\n"));
    }
    out
}

pub fn parse_checkpoint(text: &str, action_count: usize) -> Result<QTable, RlError> {
    let mut table = QTable::new(action_count);
    for (i, line) in text.lines().enumerate() {
        let err = |m: &str| RlError::Checkpoint {
            line: i + 1,
            message: m.to_string(),
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [key, action, value] = fields[..] else {
            return Err(err("expected `statekey action value`"));
        };
        let key = u64::from_str_radix(key, 16).map_err(|_| err("bad state key"))?;
        let action: usize = action.parse().map_err(|_| err("bad action"))?;
        if action >= action_count {
            return Err(err("action out of range"));
        }
        let value: f64 = value.parse().map_err(|_| err("bad value"))?;
        table.set(StateKey(key), action, value);
    }
    Ok(table)
}
