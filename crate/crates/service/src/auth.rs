//! Static bearer tokens, one or more per annotator.

use std::collections::HashMap;
use std::path::Path;

use axum::extract::FromRequestParts;
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use cvsa_core::AnnotatorId;

use crate::api::AppState;
use crate::error::ApiError;

#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    tokens: HashMap<String, AnnotatorId>,
}

impl TokenTable {
    /// Reads a JSON object mapping token to annotator id.
    pub fn load(path: &Path) -> cvsa_core::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> cvsa_core::Result<Self> {
        let tokens: HashMap<String, AnnotatorId> = serde_json::from_str(text)
            .map_err(|e| cvsa_core::Error::Invalid(format!("tokens file: {e}")))?;
        if tokens.keys().any(|t| t.trim().is_empty()) {
            return Err(cvsa_core::Error::Invalid("tokens file: empty token".into()));
        }
        Ok(TokenTable { tokens })
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, AnnotatorId)>,
        S: Into<String>,
    {
        TokenTable {
            tokens: pairs.into_iter().map(|(t, a)| (t.into(), a)).collect(),
        }
    }

    pub fn resolve(&self, token: &str) -> Option<&AnnotatorId> {
        self.tokens.get(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// The authenticated annotator behind a request.
#[derive(Debug, Clone)]
pub struct Caller(pub AnnotatorId);

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .ok_or_else(|| ApiError::unauthorized("missing Authorization header"))?
            .to_str()
            .map_err(|_| ApiError::unauthorized("malformed Authorization header"))?;
        let token = header
            .strip_prefix("Bearer ")
            .ok_or_else(|| ApiError::unauthorized("expected a Bearer token"))?;
        state
            .tokens
            .resolve(token.trim())
            .cloned()
            .map(Caller)
            .ok_or_else(|| ApiError::unauthorized("unknown token"))
    }
}
