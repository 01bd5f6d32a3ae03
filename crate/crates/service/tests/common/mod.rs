#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use cvsa_core::testkit::Fixture;
use cvsa_core::{AnnotatorId, Platform};
use cvsa_service::{router, AppState, TokenTable};
use serde_json::Value;

/// An API server on an ephemeral port, running on its own runtime thread.
pub struct Server {
    pub base: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn start(platform: Platform, tokens: TokenTable, export_root: PathBuf) -> Self {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel::<SocketAddr>();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                let state = AppState {
                    platform,
                    tokens: Arc::new(tokens),
                    export_root,
                };
                axum::serve(listener, router(state))
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Server {
            base: format!("http://{addr}"),
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    /// Serves a fixture; every annotator authenticates with `tok-<id>`.
    pub fn for_fixture(fx: &Fixture) -> Self {
        let tokens = TokenTable::from_pairs(
            fx.platform
                .annotators()
                .unwrap()
                .into_iter()
                .map(|a| (format!("tok-{}", a.annotator_id), a.annotator_id)),
        );
        Self::start(fx.platform.clone(), tokens, fx.path().join("exports"))
    }

    pub fn client(&self, who: &AnnotatorId) -> Http {
        Http::new(&self.base, Some(format!("tok-{who}")))
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub struct Reply {
    pub status: u16,
    pub content_type: Option<String>,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or(Value::Null)
    }
}

#[derive(Clone)]
pub struct Http {
    agent: ureq::Agent,
    base: String,
    token: Option<String>,
}

impl Http {
    pub fn new(base: &str, token: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Http {
            agent,
            base: base.to_owned(),
            token,
        }
    }

    fn finish(result: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Reply, ureq::Error> {
        let mut resp = result?;
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned);
        Ok(Reply {
            status: resp.status().as_u16(),
            content_type,
            bytes: resp.body_mut().read_to_vec()?,
        })
    }

    fn auth(&self) -> String {
        format!("Bearer {}", self.token.as_deref().unwrap_or(""))
    }

    pub fn try_get(&self, path: &str) -> Result<Reply, ureq::Error> {
        let mut req = self.agent.get(format!("{}{path}", self.base));
        if self.token.is_some() {
            req = req.header("Authorization", self.auth());
        }
        Self::finish(req.call())
    }

    pub fn try_send(&self, method: &str, path: &str, body: Option<&Value>) -> Result<Reply, ureq::Error> {
        let url = format!("{}{path}", self.base);
        let req = match method {
            "POST" => self.agent.post(url),
            "PUT" => self.agent.put(url),
            "DELETE" => {
                let mut req = self.agent.delete(url);
                if self.token.is_some() {
                    req = req.header("Authorization", self.auth());
                }
                return Self::finish(req.call());
            }
            other => panic!("unsupported method {other}"),
        };
        let req = if self.token.is_some() {
            req.header("Authorization", self.auth())
        } else {
            req
        };
        Self::finish(match body {
            Some(b) => req.send_json(b),
            None => req.send_empty(),
        })
    }

    /// Posts raw bytes as JSON, for malformed-body checks.
    pub fn post_raw(&self, path: &str, body: &[u8]) -> Reply {
        let req = self
            .agent
            .post(format!("{}{path}", self.base))
            .header("Authorization", self.auth())
            .header("Content-Type", "application/json");
        Self::finish(req.send(body)).unwrap()
    }

    pub fn get(&self, path: &str) -> Reply {
        self.try_get(path).unwrap()
    }

    pub fn post(&self, path: &str, body: &Value) -> Reply {
        self.try_send("POST", path, Some(body)).unwrap()
    }

    pub fn post_empty(&self, path: &str) -> Reply {
        self.try_send("POST", path, None).unwrap()
    }

    pub fn put(&self, path: &str, body: &Value) -> Reply {
        self.try_send("PUT", path, Some(body)).unwrap()
    }

    pub fn delete(&self, path: &str) -> Reply {
        self.try_send("DELETE", path, None).unwrap()
    }
}
