use clap::ValueEnum;
use infocomp::io::format_value;
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Ordered key-value rows printed as CSV (header plus one line per row) or
/// as JSON (an object, or an array of objects for several rows).
#[derive(Default)]
pub struct Table {
    keys: Vec<&'static str>,
    rows: Vec<Vec<Value>>,
}

/// Number with the report sentinels for undefined and infinite values.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .unwrap_or_else(|| Value::String(format_value(v)))
}

pub fn text(s: impl Into<String>) -> Value {
    Value::String(s.into())
}

impl Table {
    pub fn new(keys: &[&'static str]) -> Self {
        Table {
            keys: keys.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, values: Vec<Value>) {
        debug_assert_eq!(values.len(), self.keys.len());
        self.rows.push(values);
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut out = self.keys.join(",");
                out.push('\n');
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(csv_cell).collect();
                    out.push_str(&cells.join(","));
                    out.push('\n');
                }
                out
            }
            Format::Json => {
                let objects: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        let map = self.keys.iter().map(|k| k.to_string()).zip(row.iter().cloned()).collect();
                        Value::Object(map)
                    })
                    .collect();
                let value = if objects.len() == 1 {
                    objects.into_iter().next().expect("one row")
                } else {
                    Value::Array(objects)
                };
                let mut s = serde_json::to_string_pretty(&value).expect("plain values");
                s.push('\n');
                s
            }
        }
    }

    pub fn print(&self, format: Format) {
        print!("{}", self.render(format));
    }
}

fn csv_cell(v: &Value) -> String {
    let s = match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    };
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}
