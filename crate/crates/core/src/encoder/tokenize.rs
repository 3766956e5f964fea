use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Bucket reserved for empty input and for masked positions during pre-training.
pub const RESERVED_BUCKET: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    /// Emit every CJK character as its own token.
    pub split_cjk: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            split_cjk: true,
        }
    }
}

impl TokenizerConfig {
    pub(crate) fn to_flags(self) -> u32 {
        self.lowercase as u32 | (self.split_cjk as u32) << 1
    }

    pub(crate) fn from_flags(flags: u32) -> Self {
        TokenizerConfig {
            lowercase: flags & 1 != 0,
            split_cjk: flags & 2 != 0,
        }
    }
}

/// 64-bit FNV-1a over the UTF-8 bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F
        | 0x3040..=0x30FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF
        | 0xFF00..=0xFFEF
        | 0x20000..=0x2FA1F)
}

/// Splits normalized text into surface tokens (strings, before hashing).
pub fn surface_tokens(text: &str, cfg: TokenizerConfig) -> Vec<String> {
    let mut norm: String = text.nfc().collect();
    if cfg.lowercase {
        norm = norm.to_lowercase();
    }
    let mut out = Vec::new();
    for word in norm.split_whitespace() {
        if !cfg.split_cjk {
            out.push(word.to_string());
            continue;
        }
        let mut run = String::new();
        for c in word.chars() {
            if is_cjk(c) {
                if !run.is_empty() {
                    out.push(std::mem::take(&mut run));
                }
                out.push(c.to_string());
            } else {
                run.push(c);
            }
        }
        if !run.is_empty() {
            out.push(run);
        }
    }
    out
}

/// Maps one surface token to a bucket in `[1, vocab)`; bucket 0 stays reserved.
/// With a single bucket everything lands in bucket 0.
pub fn bucket_of(token: &str, vocab: usize) -> u32 {
    if vocab <= 1 {
        return RESERVED_BUCKET;
    }
    (1 + fnv1a64(token.as_bytes()) % (vocab as u64 - 1)) as u32
}

/// Text to bucket ids. Empty input yields the reserved singleton `[0]`.
pub fn tokenize(text: &str, cfg: TokenizerConfig, vocab: usize) -> Vec<u32> {
    let ids: Vec<u32> = surface_tokens(text, cfg)
        .iter()
        .map(|t| bucket_of(t, vocab))
        .collect();
    if ids.is_empty() {
        vec![RESERVED_BUCKET]
    } else {
        ids
    }
}
