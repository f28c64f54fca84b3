//! Thin HTTP client for the server API.

use std::time::Duration;

use serde::de::DeserializeOwned;
use thiserror::Error;

use pregcare_core::api::{Ack, ErrorReply, LoginRequest, LoginResponse, Stats};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cannot reach {url}: {source}")]
    Http { url: String, source: reqwest::Error },
    #[error("unexpected reply from {url} (HTTP {status}): {body}")]
    Unexpected { url: String, status: u16, body: String },
}

#[derive(Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
    gateway_key: Option<String>,
}

impl Client {
    pub fn new(base: &str, gateway_key: Option<String>) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .pool_max_idle_per_host(256)
            .build()
            .expect("http client");
        Client {
            http,
            base: base.trim_end_matches('/').to_string(),
            gateway_key,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn decode<T: DeserializeOwned>(
        url: String,
        resp: reqwest::Response,
    ) -> Result<Result<T, ErrorReply>, TransportError> {
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|source| TransportError::Http {
            url: url.clone(),
            source,
        })?;
        if status.is_success() {
            if let Ok(v) = serde_json::from_slice::<T>(&bytes) {
                return Ok(Ok(v));
            }
        } else if let Ok(e) = serde_json::from_slice::<ErrorReply>(&bytes) {
            return Ok(Err(e));
        }
        Err(TransportError::Unexpected {
            url,
            status: status.as_u16(),
            body: String::from_utf8_lossy(&bytes).into_owned(),
        })
    }

    /// Posts a raw payload to the SMS ingress.
    pub async fn send_sms(&self, payload: &[u8], sender: &str) -> Result<Result<Ack, ErrorReply>, TransportError> {
        let url = self.url("/ingress/sms");
        let mut req = self
            .http
            .post(&url)
            .header("x-sender-phone", sender)
            .body(payload.to_vec());
        if let Some(key) = &self.gateway_key {
            req = req.header("x-gateway-key", key);
        }
        let resp = req.send().await.map_err(|source| TransportError::Http {
            url: url.clone(),
            source,
        })?;
        Self::decode(url, resp).await
    }

    pub async fn stats(&self) -> Result<Stats, TransportError> {
        let url = self.url("/stats");
        let resp = self
            .http
            .get(&url)
            .send()
            .await
            .map_err(|source| TransportError::Http {
                url: url.clone(),
                source,
            })?;
        match Self::decode::<Stats>(url.clone(), resp).await? {
            Ok(s) => Ok(s),
            Err(e) => Err(TransportError::Unexpected {
                url,
                status: e.code.http_status(),
                body: e.to_string(),
            }),
        }
    }

    pub async fn login(
        &self,
        username: &str,
        password: &str,
    ) -> Result<Result<LoginResponse, ErrorReply>, TransportError> {
        let body = serde_json::to_value(LoginRequest {
            username: username.into(),
            password: password.into(),
        })
        .expect("login body");
        self.call(reqwest::Method::POST, "/auth/login", None, Some(body)).await
    }

    /// Authenticated JSON call against the operator or doctor API.
    pub async fn call<T: DeserializeOwned>(
        &self,
        method: reqwest::Method,
        path: &str,
        token: Option<&str>,
        body: Option<serde_json::Value>,
    ) -> Result<Result<T, ErrorReply>, TransportError> {
        let url = self.url(path);
        let mut req = self.http.request(method, &url);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.header("content-type", "application/json").body(b.to_string());
        }
        let resp = req.send().await.map_err(|source| TransportError::Http {
            url: url.clone(),
            source,
        })?;
        Self::decode(url, resp).await
    }
}
