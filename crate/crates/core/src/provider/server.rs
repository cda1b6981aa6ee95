//! A log-probability server that replays any provider over the wire format.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Response, Server};

use super::remote::{LogprobEntry, LogprobRequest, LogprobResponse, LOGPROBS_PATH};
use super::NextTokenProvider;

const WORKERS: usize = 4;

pub struct LogprobServer {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

/// Top-k entries by probability (ties to the lowest id) plus the log of the remaining mass.
pub fn top_k_response(probs: &[f64], top_k: usize) -> LogprobResponse {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let k = top_k.min(probs.len());
    let entries = order[..k]
        .iter()
        .map(|&t| LogprobEntry { token: t as u32, logprob: probs[t].ln() })
        .collect();
    let tail: f64 = order[k..].iter().map(|&t| probs[t]).sum();
    LogprobResponse { entries, tail_logprob: (tail > 0.0).then(|| tail.ln()) }
}

fn json_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_string(body).with_status_code(status).with_header(header)
}

fn handle<P: NextTokenProvider + ?Sized>(provider: &P, mut request: tiny_http::Request) {
    let reply = if request.method() != &Method::Post || request.url() != LOGPROBS_PATH {
        json_response(404, r#"{"error":"not found"}"#.into())
    } else {
        let mut body = String::new();
        match request.as_reader().read_to_string(&mut body) {
            Err(e) => json_response(400, serde_json::json!({ "error": e.to_string() }).to_string()),
            Ok(_) => match serde_json::from_str::<LogprobRequest>(&body) {
                Err(e) => json_response(400, serde_json::json!({ "error": e.to_string() }).to_string()),
                Ok(req) => match provider.next_token(&req.tokens) {
                    Ok(dist) => json_response(200, serde_json::to_string(&top_k_response(dist.probs(), req.top_k.max(1))).unwrap()),
                    Err(e) => json_response(422, serde_json::json!({ "error": e.to_string() }).to_string()),
                },
            },
        }
    };
    let _ = request.respond(reply);
}

impl LogprobServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves in background threads.
    pub fn spawn(provider: Arc<dyn NextTokenProvider>, addr: &str) -> std::io::Result<Self> {
        let server = Arc::new(Server::http(addr).map_err(std::io::Error::other)?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
        let workers = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let provider = Arc::clone(&provider);
                std::thread::spawn(move || {
                    for request in server.incoming_requests() {
                        handle(provider.as_ref(), request);
                    }
                })
            })
            .collect();
        Ok(Self { server, addr, workers })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL suitable for [`super::RemoteProviderConfig::endpoint`].
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Serves until the process exits.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for LogprobServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_orders_by_probability_then_id() {
        let r = top_k_response(&[0.1, 0.4, 0.1, 0.4], 3);
        let ids: Vec<u32> = r.entries.iter().map(|e| e.token).collect();
        assert_eq!(ids, vec![1, 3, 0]);
        assert!((r.tail_logprob.unwrap() - 0.1f64.ln()).abs() < 1e-12);
        let full = top_k_response(&[0.5, 0.5], 8);
        assert_eq!(full.entries.len(), 2);
        assert_eq!(full.tail_logprob, None);
    }
}
