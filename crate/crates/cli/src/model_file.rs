//! Flat `key = value` model files.
//!
//! ```text
//! # comment
//! a = -1
//! b = 1
//! c = 1
//! d = 1
//! lambda.kind = affine
//! lambda.slope = 0
//! lambda.intercept = 1
//! mu.kind = tabulated
//! mu.table = -1:2, 0:1.5, 1:3
//! ```
//!
//! `kind` may be omitted when it is implied by the other keys; a missing
//! affine slope is 0.

use std::collections::BTreeMap;

use hybridgene::model::{ModelParams, RateFunction};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: `{value}` is not a number")]
    Number { key: String, value: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("rate `{rate}`: {msg}")]
    Rate { rate: String, msg: String },
}

const KEYS: [&str; 12] = [
    "a",
    "b",
    "c",
    "d",
    "lambda.kind",
    "lambda.slope",
    "lambda.intercept",
    "lambda.table",
    "mu.kind",
    "mu.slope",
    "mu.intercept",
    "mu.table",
];

fn number(key: &str, value: &str) -> Result<f64, ParseError> {
    value.trim().parse::<f64>().map_err(|_| ParseError::Number {
        key: key.to_string(),
        value: value.trim().to_string(),
    })
}

fn rate(name: &str, kv: &BTreeMap<String, String>) -> Result<RateFunction, ParseError> {
    let get = |k: &str| kv.get(&format!("{name}.{k}"));
    let has_table = get("table").is_some();
    let has_affine = get("slope").is_some() || get("intercept").is_some();
    let err = |msg: String| ParseError::Rate {
        rate: name.to_string(),
        msg,
    };
    let kind = match get("kind").map(|s| s.to_ascii_lowercase()) {
        Some(k) => k,
        None if has_table && !has_affine => "tabulated".into(),
        None if has_affine && !has_table => "affine".into(),
        None => return Err(err("set `kind` to `affine` or `tabulated`".into())),
    };
    match kind.as_str() {
        "affine" => {
            if has_table {
                return Err(err("affine rate must not have a table".into()));
            }
            let key = format!("{name}.intercept");
            let intercept = number(
                &key,
                get("intercept").ok_or(ParseError::Missing(key.clone()))?,
            )?;
            let slope = match get("slope") {
                Some(v) => number(&format!("{name}.slope"), v)?,
                None => 0.0,
            };
            Ok(RateFunction::affine(slope, intercept))
        }
        "tabulated" | "table" => {
            if has_affine {
                return Err(err("tabulated rate must not have slope or intercept".into()));
            }
            let key = format!("{name}.table");
            let text = get("table").ok_or(ParseError::Missing(key.clone()))?;
            let mut nodes = Vec::new();
            for pair in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let (x, v) = pair
                    .split_once(':')
                    .ok_or_else(|| err(format!("table entry `{pair}` is not `x:value`")))?;
                nodes.push((number(&key, x)?, number(&key, v)?));
            }
            Ok(RateFunction::tabulated(nodes))
        }
        other => Err(err(format!("unknown kind `{other}`"))),
    }
}

pub fn parse(text: &str) -> Result<ModelParams, ParseError> {
    let mut kv = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or(ParseError::Syntax { line })?;
        let key = k.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(ParseError::UnknownKey { line, key });
        }
        if kv.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(ParseError::Duplicate { line, key });
        }
    }
    let scalar = |k: &str| -> Result<f64, ParseError> {
        number(
            k,
            kv.get(k)
                .ok_or_else(|| ParseError::Missing(k.to_string()))?,
        )
    };
    Ok(ModelParams::new(
        scalar("a")?,
        scalar("b")?,
        scalar("c")?,
        scalar("d")?,
        rate("lambda", &kv)?,
        rate("mu", &kv)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EX4: &str = "\
# affine rates
a = -1
b = 1
c = 1
d = 1
lambda.kind = affine
lambda.slope = 0
lambda.intercept = 1
mu.kind = affine
mu.slope = -1   # trailing comment
mu.intercept = 3
";

    #[test]
    fn parses_affine_file() {
        let p = parse(EX4).unwrap();
        assert_eq!((p.a, p.b, p.c, p.d), (-1.0, 1.0, 1.0, 1.0));
        assert_eq!(p.mu, RateFunction::affine(-1.0, 3.0));
        assert_eq!(p.lambda, RateFunction::constant(1.0));
    }

    #[test]
    fn parses_table_and_infers_kind() {
        let text = "a=-1\nb=1\nc=1\nd=1\nlambda.table = -1:2, 0:1.5 ,1:3\nmu.intercept = 2\n";
        let p = parse(text).unwrap();
        assert_eq!(
            p.lambda,
            RateFunction::tabulated(vec![(-1.0, 2.0), (0.0, 1.5), (1.0, 3.0)])
        );
        assert_eq!(p.mu, RateFunction::constant(2.0));
    }

    #[test]
    fn reports_errors() {
        assert_eq!(parse("a -1"), Err(ParseError::Syntax { line: 1 }));
        assert!(matches!(parse("e = 1"), Err(ParseError::UnknownKey { .. })));
        assert!(matches!(
            parse("a = 1\na = 2"),
            Err(ParseError::Duplicate { line: 2, .. })
        ));
        assert_eq!(parse("b = 1"), Err(ParseError::Missing("a".into())));
        assert!(matches!(parse("a = x"), Err(ParseError::Number { .. })));
        let bad = EX4.replace("mu.intercept = 3", "mu.intercept = three");
        assert!(matches!(parse(&bad), Err(ParseError::Number { .. })));
        let bad = EX4.replace("mu.kind = affine", "mu.kind = spline");
        assert!(matches!(parse(&bad), Err(ParseError::Rate { .. })));
        let bad = EX4.replace("mu.intercept = 3\n", "mu.table = 0:1\n");
        assert!(matches!(parse(&bad), Err(ParseError::Rate { .. })));
    }
}
