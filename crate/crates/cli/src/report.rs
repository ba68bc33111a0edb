//! Report serialisation with fixed float formatting, expectation checks and
//! CSV mirrors of the JSON arrays.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};
use serde_json::Value;

use crate::scenario::{Expect, Range};

/// Pretty JSON whose floats always carry 17 significant digits.
pub struct FixedFloats<'a> {
    inner: PrettyFormatter<'a>,
}

impl Default for FixedFloats<'_> {
    fn default() -> Self {
        FixedFloats {
            inner: PrettyFormatter::new(),
        }
    }
}

pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.inner.$name(w $(, $arg)*)
        })*
    };
}

impl Formatter for FixedFloats<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_float(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        end_object_key(),
        begin_object_value(),
        end_object_value(),
    );
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloats::default());
    value.serialize(&mut ser).expect("report values serialise");
    out.push(b'\n');
    String::from_utf8(out).expect("json is utf-8")
}

/// Compact single-line rendering used inside diagnostics.
pub fn compact(value: &Value) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CompactFormatter);
    value.serialize(&mut ser).expect("values serialise");
    String::from_utf8(out).expect("json is utf-8")
}

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub path: String,
    pub expected: Value,
    pub actual: Vec<Value>,
    pub passed: bool,
}

/// Values at a dotted path. `len` yields an array or object length and `*`
/// fans out over array elements.
pub fn lookup(root: &Value, path: &str) -> Vec<Value> {
    let mut current = vec![root.clone()];
    if path.is_empty() {
        return current;
    }
    for seg in path.split('.') {
        let mut next = Vec::new();
        for v in &current {
            match (seg, v) {
                ("*", Value::Array(items)) => next.extend(items.iter().cloned()),
                ("len", Value::Array(items)) => next.push(Value::from(items.len())),
                ("len", Value::Object(map)) if !map.contains_key("len") => next.push(Value::from(map.len())),
                (_, Value::Object(map)) => {
                    if let Some(x) = map.get(seg) {
                        next.push(x.clone());
                    }
                }
                (_, Value::Array(items)) => {
                    if let Some(x) = seg.parse::<usize>().ok().and_then(|i| items.get(i)) {
                        next.push(x.clone());
                    }
                }
                _ => {}
            }
        }
        current = next;
    }
    current
}

fn matches(expect: &Expect, actual: &Value) -> bool {
    match expect {
        Expect::Approx { approx, tol } => actual
            .as_f64()
            .is_some_and(|a| (a - approx).abs() <= tol * approx.abs().max(1.0)),
        Expect::Range(Range { min, max }) => actual
            .as_f64()
            .is_some_and(|a| min.is_none_or(|m| a >= m) && max.is_none_or(|m| a <= m)),
        Expect::Exact(v) => match (v.as_f64(), actual.as_f64()) {
            (Some(e), Some(a)) => e == a,
            _ => v == actual,
        },
    }
}

/// Checks every expectation except `error`, which the runner handles.
pub fn check(result: &Value, expect: &BTreeMap<String, Expect>) -> Vec<Assertion> {
    expect
        .iter()
        .filter(|(path, _)| path.as_str() != "error")
        .map(|(path, e)| {
            let actual = lookup(result, path);
            let passed = !actual.is_empty() && actual.iter().all(|a| matches(e, a));
            Assertion {
                path: path.clone(),
                expected: serde_json::to_value(e).unwrap_or(Value::Null),
                actual,
                passed,
            }
        })
        .collect()
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                flatten(&key(k), x, out);
            }
        }
        Value::Array(items) => {
            for (i, x) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), x, out);
            }
        }
        Value::Null => {
            out.insert(prefix.to_string(), String::new());
        }
        Value::Number(n) => {
            let s = match (n.as_u64(), n.as_i64()) {
                (Some(u), _) => u.to_string(),
                (_, Some(i)) => i.to_string(),
                _ => format_float(n.as_f64().unwrap_or(f64::NAN)),
            };
            out.insert(prefix.to_string(), s);
        }
        Value::Bool(b) => {
            out.insert(prefix.to_string(), b.to_string());
        }
        Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
    }
}

/// One CSV table per top-level array of the result, rows flattened to dotted
/// columns. Numeric arrays become single-column tables.
pub fn csv_tables(result: &Value) -> Vec<(String, String)> {
    let Value::Object(map) = result else {
        return Vec::new();
    };
    let mut tables = Vec::new();
    for (name, v) in map {
        let Value::Array(items) = v else { continue };
        let rows: Vec<BTreeMap<String, String>> = items
            .iter()
            .map(|item| {
                let mut row = BTreeMap::new();
                let prefix = if item.is_object() { "" } else { "value" };
                flatten(prefix, item, &mut row);
                row
            })
            .collect();
        let columns: BTreeSet<&String> = rows.iter().flat_map(|r| r.keys()).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(columns.iter().map(|c| c.as_str()).collect::<Vec<_>>())
            .expect("in-memory csv");
        for r in &rows {
            w.write_record(columns.iter().map(|c| r.get(*c).map_or("", |s| s.as_str())))
                .expect("in-memory csv");
        }
        let bytes = w.into_inner().expect("in-memory csv");
        tables.push((name.clone(), String::from_utf8(bytes).expect("csv is utf-8")));
    }
    tables
}
