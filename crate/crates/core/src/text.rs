//! Small string helpers shared across modules.

/// Collapses runs of whitespace to single spaces and trims both ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Key used for duplicate detection between labels: whitespace-normalized and
/// lowercased.
pub fn label_key(s: &str) -> String {
    normalize_whitespace(s).to_lowercase()
}

/// True if `id` is a prefix letter followed by one or more ASCII digits.
pub(crate) fn is_prefixed_id(id: &str, prefix: char) -> bool {
    let mut chars = id.chars();
    chars.next() == Some(prefix) && {
        let rest = chars.as_str();
        !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit())
    }
}

/// Numeric suffix of a `Q`/`P` identifier, for natural ordering.
pub(crate) fn id_number(id: &str) -> u64 {
    id.get(1..).and_then(|n| n.parse().ok()).unwrap_or(u64::MAX)
}
