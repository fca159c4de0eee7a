use std::collections::{BTreeMap, BTreeSet};

use super::{Circuit, Device, DeviceKind, NetlistError, Slot, Value, GROUND, MAX_LINE_LEN};

/// A logical line after continuation folding, tagged with its first physical line number.
struct LogicalLine {
    number: usize,
    text: String,
}

/// Parse a netlist. The first line is always the title.
pub fn parse_netlist(text: &str) -> Result<Circuit, NetlistError> {
    if text.trim().is_empty() {
        return Err(NetlistError::Empty);
    }
    let mut lines = text.lines().enumerate();
    let title = lines.next().map(|(_, l)| l.trim().to_string()).unwrap_or_default();

    let mut logical: Vec<LogicalLine> = Vec::new();
    for (idx, raw) in lines {
        let number = idx + 1;
        if raw.len() > MAX_LINE_LEN {
            return Err(syntax(number, format!("line exceeds {MAX_LINE_LEN} characters")));
        }
        let line = strip_inline_comment(raw).trim();
        if line.is_empty() || line.starts_with('*') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('+') {
            match logical.last_mut() {
                Some(prev) => {
                    prev.text.push(' ');
                    prev.text.push_str(rest.trim());
                }
                None => return Err(syntax(number, "continuation with no preceding line")),
            }
            continue;
        }
        logical.push(LogicalLine { number, text: line.to_string() });
    }

    let mut devices: Vec<Device> = Vec::new();
    let mut ids: BTreeSet<String> = BTreeSet::new();
    for line in &logical {
        if line.text.starts_with('.') {
            let directive = line.text.split_whitespace().next().unwrap_or("");
            if directive.eq_ignore_ascii_case(".end") {
                break;
            }
            return Err(syntax(line.number, format!("unsupported directive '{directive}'")));
        }
        let device = parse_device(line)?;
        if !ids.insert(device.id.to_ascii_uppercase()) {
            return Err(NetlistError::DuplicateDevice { line: line.number, id: device.id });
        }
        devices.push(device);
    }

    let mut circuit = Circuit { title, devices, nets: BTreeSet::new(), params: Vec::new() };
    circuit.reindex();
    if !circuit.nets.contains(GROUND) {
        return Err(NetlistError::MissingGround);
    }
    Ok(circuit)
}

fn syntax(line: usize, reason: impl Into<String>) -> NetlistError {
    NetlistError::Syntax { line, reason: reason.into() }
}

fn strip_inline_comment(line: &str) -> &str {
    match line.find(';') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

/// Split on whitespace, gluing `key = value` spellings into one `key=value` token.
fn tokenize(text: &str) -> Vec<String> {
    let mut tokens: Vec<String> = Vec::new();
    let mut glue_next = false;
    for raw in text.split_whitespace() {
        if glue_next || raw.starts_with('=') {
            if let Some(last) = tokens.last_mut() {
                last.push_str(raw);
                glue_next = raw.ends_with('=');
                continue;
            }
        }
        glue_next = raw.ends_with('=');
        tokens.push(raw.to_string());
    }
    tokens
}

fn parse_device(line: &LogicalLine) -> Result<Device, NetlistError> {
    let tokens = tokenize(&line.text);
    let id = tokens[0].clone();
    let prefix = id.chars().next().unwrap_or(' ');
    let kind = DeviceKind::from_prefix(prefix)
        .ok_or(NetlistError::UnknownDevice { line: line.number, prefix })?;
    let n_terms = kind.terminal_count();
    if tokens.len() < 1 + n_terms {
        return Err(syntax(
            line.number,
            format!("{id}: expected {n_terms} terminals, found {}", tokens.len() - 1),
        ));
    }
    let terminals: Vec<String> = tokens[1..=n_terms].to_vec();
    for t in &terminals {
        if t.contains('=') || t.contains('{') {
            return Err(syntax(line.number, format!("{id}: malformed terminal '{t}'")));
        }
    }
    let rest = &tokens[1 + n_terms..];
    let mut values = BTreeMap::new();
    let mut model = None;

    match kind {
        DeviceKind::Mosfet => {
            let (model_name, kvs) = rest
                .split_first()
                .ok_or_else(|| syntax(line.number, format!("{id}: missing model name")))?;
            if model_name.contains('=') {
                return Err(syntax(line.number, format!("{id}: missing model name")));
            }
            model = Some(model_name.clone());
            for kv in kvs {
                let (key, val) = kv
                    .split_once('=')
                    .ok_or_else(|| syntax(line.number, format!("{id}: expected key=value, got '{kv}'")))?;
                let slot = match key.to_ascii_uppercase().as_str() {
                    "W" => Slot::W,
                    "L" => Slot::L,
                    other => {
                        return Err(syntax(line.number, format!("{id}: unsupported parameter '{other}'")))
                    }
                };
                if values.insert(slot, parse_value(val, line.number)?).is_some() {
                    return Err(syntax(line.number, format!("{id}: {key} given twice")));
                }
            }
            for slot in [Slot::W, Slot::L] {
                if !values.contains_key(&slot) {
                    return Err(syntax(line.number, format!("{id}: missing {}", slot.as_str())));
                }
            }
        }
        DeviceKind::Resistor | DeviceKind::Capacitor => {
            let slot = if kind == DeviceKind::Resistor { Slot::R } else { Slot::C };
            match rest {
                [v] => {
                    values.insert(slot, parse_value(v, line.number)?);
                }
                [] => return Err(syntax(line.number, format!("{id}: missing value"))),
                _ => return Err(syntax(line.number, format!("{id}: trailing tokens after value"))),
            }
        }
        DeviceKind::VSource | DeviceKind::ISource => {
            let mut i = 0;
            while i < rest.len() {
                let tok = &rest[i];
                let (slot, val) = if tok.eq_ignore_ascii_case("DC") || tok.eq_ignore_ascii_case("AC") {
                    let slot = if tok.eq_ignore_ascii_case("DC") { Slot::Dc } else { Slot::Ac };
                    let val = rest
                        .get(i + 1)
                        .ok_or_else(|| syntax(line.number, format!("{id}: {tok} without value")))?;
                    i += 2;
                    (slot, val)
                } else if i == 0 {
                    i += 1;
                    (Slot::Dc, tok)
                } else {
                    return Err(syntax(line.number, format!("{id}: unexpected token '{tok}'")));
                };
                if values.insert(slot, parse_value(val, line.number)?).is_some() {
                    return Err(syntax(line.number, format!("{id}: {} given twice", slot.as_str())));
                }
            }
            values.entry(Slot::Dc).or_insert(Value::Num(0.0));
        }
    }

    for (slot, value) in &values {
        if let Value::Num(v) = value {
            if !v.is_finite() {
                return Err(syntax(line.number, format!("{id}: non-finite {}", slot.as_str())));
            }
            if slot.requires_positive() && *v <= 0.0 {
                return Err(syntax(line.number, format!("{id}: {} must be positive", slot.as_str())));
            }
        }
    }

    Ok(Device { id, kind, terminals, model, values })
}

fn parse_value(tok: &str, line: usize) -> Result<Value, NetlistError> {
    if let Some(inner) = tok.strip_prefix('{') {
        let name = inner
            .strip_suffix('}')
            .ok_or_else(|| syntax(line, format!("unterminated placeholder '{tok}'")))?;
        if !is_identifier(name) {
            return Err(syntax(line, format!("invalid placeholder name '{name}'")));
        }
        return Ok(Value::Param(name.to_string()));
    }
    parse_si_value(tok)
        .map(Value::Num)
        .ok_or_else(|| syntax(line, format!("invalid number '{tok}'")))
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parse a number with an optional SI suffix. Trailing letters after the
/// suffix (units such as `1kOhm`) are ignored, as in SPICE.
pub fn parse_si_value(tok: &str) -> Option<f64> {
    let bytes = tok.as_bytes();
    let mut end = 0;
    if end < bytes.len() && (bytes[end] == b'+' || bytes[end] == b'-') {
        end += 1;
    }
    let digits_start = end;
    while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
        end += 1;
    }
    if end == digits_start {
        return None;
    }
    // exponent only when followed by a digit (so "1e" is not a number)
    if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
        let mut k = end + 1;
        if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
            k += 1;
        }
        if k < bytes.len() && bytes[k].is_ascii_digit() {
            while k < bytes.len() && bytes[k].is_ascii_digit() {
                k += 1;
            }
            end = k;
        }
    }
    let mantissa: f64 = tok[..end].parse().ok()?;
    let suffix = tok[end..].to_ascii_lowercase();
    // power of ten for the suffix; negative powers divide so "2.5u" rounds to 2.5e-6 exactly
    let (exp10, unit): (i32, &str) = if let Some(unit) = suffix.strip_prefix("meg") {
        (6, unit)
    } else {
        let mut chars = suffix.chars();
        let exp10 = match chars.next() {
            None => return Some(mantissa),
            Some('f') => -15,
            Some('p') => -12,
            Some('n') => -9,
            Some('u') => -6,
            Some('m') => -3,
            Some('k') => 3,
            Some('g') => 9,
            Some('t') => 12,
            Some(c) if c.is_ascii_alphabetic() => 0,
            Some(_) => return None,
        };
        (exp10, if exp10 == 0 { &suffix[..] } else { &suffix[1..] })
    };
    if !unit.chars().all(|c| c.is_ascii_alphabetic()) {
        return None;
    }
    let scale = 10f64.powi(exp10.abs());
    Some(if exp10 < 0 { mantissa / scale } else { mantissa * scale })
}
