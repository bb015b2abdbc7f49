//! Flat `key=value` text used by config files, run manifests and checkpoint metadata.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Parses `key=value` lines. Blank lines and `#` comments are skipped; later keys win.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key=value, got {line:?}", lineno + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::config(format!("line {}: empty key", lineno + 1)));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub fn render_kv<K: AsRef<str>, V: AsRef<str>>(pairs: impl IntoIterator<Item = (K, V)>) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k.as_ref());
        s.push('=');
        s.push_str(v.as_ref());
        s.push('\n');
    }
    s
}

pub fn kv_map(pairs: &[(String, String)]) -> BTreeMap<&str, &str> {
    pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect()
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("{key}: cannot parse {value:?}: {e}")))
}

/// Comma-separated list; the empty string is the empty list.
pub fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

pub fn render_list<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines_skipped() {
        let pairs = parse_kv("# header\n\nlambda = 1.5  # weight\nseed=3\n").unwrap();
        assert_eq!(
            pairs,
            vec![("lambda".into(), "1.5".into()), ("seed".into(), "3".into())]
        );
    }

    #[test]
    fn missing_equals_names_the_line() {
        let err = parse_kv("a=1\nbogus\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn render_then_parse_is_identity() {
        let pairs = vec![("a".to_string(), "1,2".to_string()), ("b".to_string(), "".to_string())];
        assert_eq!(parse_kv(&render_kv(pairs.clone())).unwrap(), pairs);
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<usize>("k", "0, 1").unwrap(), vec![0, 1]);
        assert!(parse_list::<usize>("k", "").unwrap().is_empty());
        assert!(parse_list::<usize>("k", "x").is_err());
        assert_eq!(render_list(&[512, 256]), "512,256");
    }
}
