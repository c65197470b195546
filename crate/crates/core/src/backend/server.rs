//! Serves any [`GenerationBackend`] over the worker protocol.
//!
//! Used by `segsynth serve-mock` so the HTTP client can be exercised without
//! a model worker. Requests are handled statelessly on a small thread pool.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::wire::{self, ErrorBody, REQUEST_ID_HEADER};
use super::{BackendError, GenerationBackend, Img2ImgRequest, InpaintRequest};

pub struct MockServer {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and starts `threads` workers.
    pub fn start(
        addr: &str,
        backend: Arc<dyn GenerationBackend>,
        threads: usize,
    ) -> std::io::Result<Self> {
        let server = Server::http(addr).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("server is not bound to an IP socket"))?;
        let server = Arc::new(server);
        let workers = (0..threads.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let backend = Arc::clone(&backend);
                std::thread::spawn(move || {
                    for request in server.incoming_requests() {
                        handle(request, backend.as_ref());
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            addr,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server is shut down from another thread.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}

struct Reply {
    status: u16,
    body: String,
}

impl Reply {
    fn json<T: Serialize>(value: &T) -> Self {
        Reply {
            status: 200,
            body: serde_json::to_string(value).expect("response bodies always serialize"),
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Reply {
            status,
            body: serde_json::to_string(&ErrorBody {
                error: message.into(),
            })
            .expect("error body serializes"),
        }
    }
}

impl From<BackendError> for Reply {
    fn from(e: BackendError) -> Self {
        let status = match &e {
            BackendError::Protocol { .. } => 422,
            BackendError::Unsupported(_) => 501,
            BackendError::Transport(_) => 502,
        };
        Reply::error(status, e.to_string())
    }
}

fn parse<T: DeserializeOwned>(body: &str) -> Result<T, Reply> {
    serde_json::from_str(body).map_err(|e| Reply::error(400, format!("malformed request body: {e}")))
}

fn route(method: &Method, path: &str, body: &str, backend: &dyn GenerationBackend) -> Reply {
    let result: Result<Reply, Reply> = (|| match (method, path) {
        (Method::Get, "/healthz") => Ok(Reply::json(&backend.health()?)),
        (Method::Post, "/v1/img2img") => {
            let req = Img2ImgRequest::from_wire(&parse(body)?).map_err(|e| Reply::error(400, e.to_string()))?;
            Ok(Reply::json(&backend.img2img(&req)?.to_wire()))
        }
        (Method::Post, "/v1/inpaint") => {
            let req = InpaintRequest::from_wire(&parse(body)?).map_err(|e| Reply::error(400, e.to_string()))?;
            Ok(Reply::json(&backend.inpaint(&req)?.to_wire()))
        }
        (Method::Post, "/v1/caption") => {
            let req: wire::CaptionRequestBody = parse(body)?;
            let image = wire::decode_rgb("image", &req.image).map_err(|e| Reply::error(400, e.to_string()))?;
            let caption = backend.caption(&image, &req.class_names)?;
            Ok(Reply::json(&wire::CaptionResponseBody { caption }))
        }
        (Method::Post, "/v1/prior") => {
            let req: wire::PriorRequestBody = parse(body)?;
            if req.kind != "lineart" {
                return Err(Reply::error(400, format!("unsupported prior kind {:?}", req.kind)));
            }
            let image = wire::decode_rgb("image", &req.image).map_err(|e| Reply::error(400, e.to_string()))?;
            let prior = backend.prior(&image)?;
            Ok(Reply::json(&wire::PriorResponseBody {
                prior: wire::encode_prior(&prior),
            }))
        }
        (_, "/healthz" | "/v1/img2img" | "/v1/inpaint" | "/v1/caption" | "/v1/prior") => {
            Err(Reply::error(405, "method not allowed"))
        }
        _ => Err(Reply::error(404, format!("no route for {path}"))),
    })();
    result.unwrap_or_else(|r| r)
}

fn handle(mut request: Request, backend: &dyn GenerationBackend) {
    let request_id = request
        .headers()
        .iter()
        .find(|h| h.field.equiv(REQUEST_ID_HEADER))
        .map(|h| h.value.to_string());
    let mut body = String::new();
    let reply = match request.as_reader().read_to_string(&mut body) {
        Ok(_) => {
            let path = request.url().split('?').next().unwrap_or("").to_string();
            route(request.method(), &path, &body, backend)
        }
        Err(e) => Reply::error(400, format!("unreadable body: {e}")),
    };
    let mut response = Response::from_string(reply.body)
        .with_status_code(reply.status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"));
    if let Some(id) = request_id {
        if let Ok(h) = Header::from_bytes(REQUEST_ID_HEADER.as_bytes(), id.as_bytes()) {
            response.add_header(h);
        }
    }
    if let Err(e) = request.respond(response) {
        log::warn!("failed to send response: {e}");
    }
}
