// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicationLink {
    /// `10.<registrant>/<suffix>` or an http(s) URL.
    pub doi: String,
    #[serde(default)]
    pub citation_text: String,
}

impl PublicationLink {
    pub fn new(doi: impl Into<String>, citation_text: impl Into<String>) -> Self {
        Self { doi: doi.into(), citation_text: citation_text.into() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if is_doi(&self.doi) || is_link_url(&self.doi) {
            Ok(())
        } else {
            Err(format!("{:?} is neither a DOI (10.<registrant>/<suffix>) nor an http(s) URL", self.doi))
        }
    }
}

/// `10.` followed by a dotted-numeric registrant, `/`, and a non-empty
/// suffix without whitespace.
pub fn is_doi(raw: &str) -> bool {
    let Some(rest) = raw.strip_prefix("10.") else { return false };
    let Some((registrant, suffix)) = rest.split_once('/') else { return false };
    let registrant_ok = !registrant.is_empty()
        && registrant.split('.').all(|part| !part.is_empty() && part.bytes().all(|b| b.is_ascii_digit()));
    registrant_ok && !suffix.is_empty() && !suffix.chars().any(char::is_whitespace)
}

fn is_link_url(raw: &str) -> bool {
    match url::Url::parse(raw) {
        Ok(u) => matches!(u.scheme(), "http" | "https") && u.host_str().is_some_and(|h| !h.is_empty()),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doi_grammar() {
        assert!(is_doi("10.1000/x1"));
        assert!(is_doi("10.1093.12/bioinformatics/btv123"));
        assert!(!is_doi(""));
        assert!(!is_doi("10./x"));
        assert!(!is_doi("10.1000/"));
        assert!(!is_doi("10.10a0/x"));
        assert!(!is_doi("11.1000/x"));
        assert!(!is_doi("10.1000/with space"));
    }

    #[test]
    fn urls_are_accepted_as_links() {
        assert!(PublicationLink::new("https://doi.org/10.1000/x1", "").validate().is_ok());
        assert!(PublicationLink::new("ftp://example.org/x", "").validate().is_err());
        assert!(PublicationLink::new("", "cite").validate().is_err());
    }
}
