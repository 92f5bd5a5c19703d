use std::fmt;

/// A token that does not name any variant of a closed enum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseEnumError {
    pub what: &'static str,
    pub token: String,
}

impl ParseEnumError {
    pub fn new(what: &'static str, token: &str) -> Self {
        Self {
            what,
            token: token.to_string(),
        }
    }
}

impl fmt::Display for ParseEnumError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown {} `{}`", self.what, self.token)
    }
}

impl std::error::Error for ParseEnumError {}
