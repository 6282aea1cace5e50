//! Minimal `{name}` template syntax with `{{` / `}}` escapes.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unmatched '{brace}' at byte {offset}")]
    StrayBrace { brace: char, offset: usize },
    #[error("invalid placeholder {{{text}}} at byte {offset}")]
    BadPlaceholder { text: String, offset: usize },
    #[error("placeholder {{{0}}} is not allowed here")]
    UnknownPlaceholder(String),
    #[error("placeholder {{{0}}} has no value")]
    Unresolved(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    Var(&'a str),
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn tokenize(template: &str) -> Result<Vec<Piece<'_>>, TemplateError> {
    let bytes = template.as_bytes();
    let mut pieces = Vec::new();
    let mut literal_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                pieces.push(Piece::Text(&template[literal_start..i + 1]));
                i += 2;
                literal_start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                pieces.push(Piece::Text(&template[literal_start..i + 1]));
                i += 2;
                literal_start = i;
            }
            b'{' => {
                let close = template[i + 1..]
                    .find(['}', '{'])
                    .map(|p| p + i + 1)
                    .filter(|&p| bytes[p] == b'}')
                    .ok_or(TemplateError::StrayBrace { brace: '{', offset: i })?;
                let name = &template[i + 1..close];
                if !is_ident(name) {
                    return Err(TemplateError::BadPlaceholder { text: name.to_string(), offset: i });
                }
                pieces.push(Piece::Text(&template[literal_start..i]));
                pieces.push(Piece::Var(name));
                i = close + 1;
                literal_start = i;
            }
            b'}' => return Err(TemplateError::StrayBrace { brace: '}', offset: i }),
            _ => i += 1,
        }
    }
    pieces.push(Piece::Text(&template[literal_start..]));
    pieces.retain(|p| *p != Piece::Text(""));
    Ok(pieces)
}

/// Placeholder names in order of first appearance.
pub fn placeholders(template: &str) -> Result<Vec<String>, TemplateError> {
    let mut names: Vec<String> = Vec::new();
    for piece in tokenize(template)? {
        if let Piece::Var(n) = piece {
            if !names.iter().any(|x| x == n) {
                names.push(n.to_string());
            }
        }
    }
    Ok(names)
}

/// Fails unless every placeholder is in `allowed`.
pub fn check(template: &str, allowed: &[&str]) -> Result<Vec<String>, TemplateError> {
    let names = placeholders(template)?;
    if let Some(bad) = names.iter().find(|n| !allowed.contains(&n.as_str())) {
        return Err(TemplateError::UnknownPlaceholder(bad.clone()));
    }
    Ok(names)
}

/// Substitutes every placeholder; values are inserted literally.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    for piece in tokenize(template)? {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Var(n) => {
                let value = vars
                    .iter()
                    .find(|(k, _)| *k == n)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| TemplateError::Unresolved(n.to_string()))?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn substitution_and_escapes() {
        let t = "We need {N} of {{x}} and {N} again: {{ \"k\": {v} }}";
        assert_eq!(placeholders(t).unwrap(), vec!["N", "v"]);
        assert_eq!(
            render(t, &[("N", "3"), ("v", "true")]).unwrap(),
            "We need 3 of {x} and 3 again: { \"k\": true }"
        );
    }

    #[test]
    fn errors() {
        assert_eq!(render("{a}", &[]), Err(TemplateError::Unresolved("a".into())));
        assert!(matches!(render("a { b", &[]), Err(TemplateError::StrayBrace { brace: '{', .. })));
        assert!(matches!(render("a } b", &[]), Err(TemplateError::StrayBrace { brace: '}', .. })));
        assert!(matches!(render("{0}", &[]), Err(TemplateError::BadPlaceholder { .. })));
        assert!(matches!(render("{a b}", &[]), Err(TemplateError::BadPlaceholder { .. })));
        assert_eq!(check("{N}{zz}", &["N"]), Err(TemplateError::UnknownPlaceholder("zz".into())));
    }

    #[test]
    fn values_are_not_reinterpreted() {
        assert_eq!(render("{a}", &[("a", "{b} }}")]).unwrap(), "{b} }}");
    }

    proptest! {
        #[test]
        fn brace_free_text_renders_verbatim(text in "[^{}]*") {
            prop_assert_eq!(render(&text, &[]).unwrap(), text);
        }

        #[test]
        fn escaped_text_unescapes(text in ".*") {
            let escaped = text.replace('{', "{{").replace('}', "}}");
            prop_assert_eq!(render(&escaped, &[]).unwrap(), text);
        }
    }
}
