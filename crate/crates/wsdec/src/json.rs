//! Hand-rolled JSON output with fixed field order and every float printed
//! with six decimals, so outputs are byte-stable.

/// A float with six decimals; negative zero prints as zero and non-finite
/// values as `null`.
pub fn num(x: f64) -> String {
    if !x.is_finite() {
        return "null".into();
    }
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

pub fn string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Builds a JSON object with fields in insertion order.
#[derive(Debug, Default)]
pub struct Object {
    fields: Vec<(String, String)>,
}

impl Object {
    pub fn new() -> Self {
        Object::default()
    }

    /// Adds a field whose value is already JSON text.
    pub fn raw(mut self, key: &str, value: impl Into<String>) -> Self {
        self.fields.push((key.to_string(), value.into()));
        self
    }

    pub fn num(self, key: &str, value: f64) -> Self {
        self.raw(key, num(value))
    }

    pub fn str(self, key: &str, value: &str) -> Self {
        self.raw(key, string(value))
    }

    pub fn push_raw(&mut self, key: &str, value: impl Into<String>) {
        self.fields.push((key.to_string(), value.into()));
    }

    /// Pretty-printed with two-space indentation at `indent` levels.
    pub fn render(&self, indent: usize) -> String {
        if self.fields.is_empty() {
            return "{}".into();
        }
        let pad = "  ".repeat(indent + 1);
        let body: Vec<String> = self
            .fields
            .iter()
            .map(|(k, v)| format!("{pad}{}: {v}", string(k)))
            .collect();
        format!("{{\n{}\n{}}}", body.join(",\n"), "  ".repeat(indent))
    }
}

/// A JSON array of already-rendered values, one per line.
pub fn array(items: &[String], indent: usize) -> String {
    if items.is_empty() {
        return "[]".into();
    }
    let pad = "  ".repeat(indent + 1);
    let body: Vec<String> = items.iter().map(|v| format!("{pad}{v}")).collect();
    format!("[\n{}\n{}]", body.join(",\n"), "  ".repeat(indent))
}

/// A one-line array of numbers.
pub fn num_array(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|&x| num(x)).collect();
    format!("[{}]", parts.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_decimals() {
        assert_eq!(num(0.1), "0.100000");
        assert_eq!(num(-0.0), "0.000000");
        assert_eq!(num(-1e-9), "0.000000");
        assert_eq!(num(12.3456789), "12.345679");
        assert_eq!(num(f64::NAN), "null");
    }

    #[test]
    fn objects_keep_order_and_parse() {
        let o = Object::new().str("b", "x\"y").num("a", 1.0).raw("c", num_array(&[0.5, 2.0]));
        let text = o.render(0);
        assert!(text.find("\"b\"").unwrap() < text.find("\"a\"").unwrap());
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["b"], "x\"y");
        assert_eq!(v["c"][1], 2.0);
        assert_eq!(array(&[], 0), "[]");
    }
}
