/// A token with its half-open character range in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Length in chars of a bracketed marker such as `[title-1]` starting at
/// `chars[i]`, if one starts there.
fn marker_len(chars: &[char], i: usize) -> Option<usize> {
    if chars.get(i) != Some(&'[') {
        return None;
    }
    let mut j = i + 1;
    while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '-' || chars[j] == '_') {
        j += 1;
    }
    (j > i + 1 && chars.get(j) == Some(&']')).then(|| j + 1 - i)
}

/// Word-level tokenizer: bracketed markers are single tokens, alphanumeric
/// runs are tokens, and every other non-space character stands alone.
/// Case is preserved.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let len = if let Some(n) = marker_len(&chars, i) {
            n
        } else if c.is_alphanumeric() {
            chars[i..].iter().take_while(|c| c.is_alphanumeric()).count()
        } else {
            1
        };
        out.push(Token {
            text: chars[i..i + len].iter().collect(),
            start: i,
            end: i + len,
        });
        i += len;
    }
    out
}

/// Token strings only.
pub fn words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}

/// Canonical token-joined form: `"Alien (soundtrack)"` -> `"Alien ( soundtrack )"`.
/// Generated text is whitespace-joined tokens, so comparisons against source
/// strings go through this form.
pub fn token_form(text: &str) -> String {
    words(text).join(" ")
}
