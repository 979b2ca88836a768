//! Text helpers shared across the pipeline: normalization, stable hashing,
//! and Chinese numeral conversion.

use unicode_normalization::UnicodeNormalization;

/// Unicode NFC normalization.
pub fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// Trim and collapse every interior whitespace run to a single space.
pub fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_ws = false;
    for ch in s.trim().chars() {
        if ch.is_whitespace() {
            in_ws = true;
        } else {
            if in_ws && !out.is_empty() {
                out.push(' ');
            }
            in_ws = false;
            out.push(ch);
        }
    }
    out
}

/// FNV-1a 64-bit. Stable across platforms and runs, used for fingerprints
/// and for deriving deterministic values in the mock backend.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// CJK ideograph check (BMP unified blocks plus extension A and the
/// compatibility block). Kana, Hangul and CJK punctuation are excluded.
pub fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{3400}'..='\u{4DBF}' | '\u{4E00}'..='\u{9FFF}' | '\u{F900}'..='\u{FAFF}')
}

const CN_DIGITS: [(char, u64); 10] = [
    ('零', 0),
    ('一', 1),
    ('二', 2),
    ('三', 3),
    ('四', 4),
    ('五', 5),
    ('六', 6),
    ('七', 7),
    ('八', 8),
    ('九', 9),
];

fn cn_digit(c: char) -> Option<u64> {
    CN_DIGITS.iter().find(|(d, _)| *d == c).map(|(_, v)| *v)
}

/// Parse a Chinese numeral built from 零一二三四五六七八九十百千万,
/// covering values up to 99,999,999. Returns `None` on any other character
/// or an empty string.
pub fn parse_chinese_numeral(s: &str) -> Option<u64> {
    if s.is_empty() {
        return None;
    }
    let mut total: u64 = 0;
    let mut section: u64 = 0;
    let mut digit: u64 = 0;
    for c in s.chars() {
        if let Some(d) = cn_digit(c) {
            digit = d;
        } else {
            match c {
                '十' => {
                    section += if digit == 0 { 1 } else { digit } * 10;
                    digit = 0;
                }
                '百' => {
                    section += if digit == 0 { 1 } else { digit } * 100;
                    digit = 0;
                }
                '千' => {
                    section += if digit == 0 { 1 } else { digit } * 1000;
                    digit = 0;
                }
                '万' => {
                    section += digit;
                    total += section * 10_000;
                    section = 0;
                    digit = 0;
                }
                _ => return None,
            }
        }
    }
    Some(total + section + digit)
}

/// Render a value as a Chinese numeral, inverse of [`parse_chinese_numeral`]
/// for values below 100,000,000.
pub fn to_chinese_numeral(value: u64) -> String {
    assert!(value < 100_000_000, "numeral rendering limited to 8 digits");
    if value == 0 {
        return "零".to_string();
    }
    let high = value / 10_000;
    let low = value % 10_000;
    let mut out = String::new();
    if high > 0 {
        render_section(&mut out, high);
        out.push('万');
        if low > 0 && low < 1000 {
            out.push('零');
        }
    }
    if low > 0 {
        render_section(&mut out, low);
    }
    out
}

fn render_section(out: &mut String, section: u64) {
    debug_assert!(section > 0 && section < 10_000);
    let digits = [
        (section / 1000, '千'),
        (section / 100 % 10, '百'),
        (section / 10 % 10, '十'),
        (section % 10, ' '),
    ];
    let digit_char = |d: u64| CN_DIGITS[d as usize].0;
    let mut pending_zero = false;
    let mut started = false;
    for (d, unit) in digits {
        if d == 0 {
            if started {
                pending_zero = true;
            }
            continue;
        }
        if pending_zero {
            out.push('零');
            pending_zero = false;
        }
        // idiomatic 十三 rather than 一十三
        if !(unit == '十' && d == 1 && !started) {
            out.push(digit_char(d));
        }
        if unit != ' ' {
            out.push(unit);
        }
        started = true;
    }
}

/// Parse either an ASCII decimal integer or a Chinese numeral.
pub fn parse_integer_token(s: &str) -> Option<u64> {
    if s.chars().all(|c| c.is_ascii_digit()) && !s.is_empty() {
        s.parse().ok()
    } else {
        parse_chinese_numeral(s)
    }
}
