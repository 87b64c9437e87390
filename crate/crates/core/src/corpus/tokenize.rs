//! Rule-based word tokenizer.
//!
//! Lowercases, splits on whitespace, emits every punctuation or symbol
//! character as its own token and splits English clitics (`'s`, `n't`, `'re`,
//! `'m`, `'ll`, `'ve`, `'d`) off the preceding word.

const CLITICS: [&str; 6] = ["s", "re", "m", "ll", "ve", "d"];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Tokenize `text` into lowercase word, clitic and punctuation tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let lowered: Vec<char> = chunk
            .to_lowercase()
            .chars()
            .map(|c| if c == '\u{2019}' { '\'' } else { c })
            .collect();
        tokenize_chunk(&lowered, &mut tokens);
    }
    tokens
}

fn tokenize_chunk(chars: &[char], out: &mut Vec<String>) {
    let mut word = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if is_word_char(c) {
            word.push(c);
            i += 1;
            continue;
        }
        if c == '\'' && !word.is_empty() {
            // Run of word characters right after the apostrophe.
            let mut j = i + 1;
            while j < chars.len() && is_word_char(chars[j]) {
                j += 1;
            }
            let rest: String = chars[i + 1..j].iter().collect();
            if rest == "t" && word.ends_with('n') && word.chars().count() > 1 {
                word.pop();
                out.push(std::mem::take(&mut word));
                out.push("n't".to_string());
                i = j;
                continue;
            }
            if CLITICS.contains(&rest.as_str()) {
                out.push(std::mem::take(&mut word));
                out.push(format!("'{rest}"));
                i = j;
                continue;
            }
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        out.push(c.to_string());
        i += 1;
    }
    if !word.is_empty() {
        out.push(word);
    }
}
