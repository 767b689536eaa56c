/// Splits text into lowercase word tokens.
///
/// A trailing `?` becomes its own token, other punctuation is dropped and
/// number words from zero to ten are rewritten as digits so that counting
/// answers match however they were typed.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let trimmed = lowered.trim_end();
    let (body, question) = match trimmed.strip_suffix('?') {
        Some(rest) => (rest.trim_end_matches('?'), true),
        None => (trimmed, false),
    };
    let mut tokens: Vec<String> = body
        .split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).collect::<String>())
        .filter(|w| !w.is_empty())
        .map(|w| normalize_number(&w).map(str::to_string).unwrap_or(w))
        .collect();
    if question {
        tokens.push("?".to_string());
    }
    tokens
}

const NUMBER_WORDS: [&str; 11] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];
const DIGITS: [&str; 11] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "10"];

fn normalize_number(word: &str) -> Option<&'static str> {
    NUMBER_WORDS
        .iter()
        .position(|&n| n == word)
        .map(|i| DIGITS[i])
}

pub fn is_numeral(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| c.is_ascii_digit()) || normalize_number(token).is_some()
}

pub fn join_tokens<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(|t| t.as_ref())
        .collect::<Vec<_>>()
        .join(" ")
}
