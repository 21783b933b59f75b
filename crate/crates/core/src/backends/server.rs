//! In-process host for backends over the framed protocol. Used for
//! loopback conformance testing and as a template for real model servers.

use std::collections::BTreeMap;
use std::io::{self, Read};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde::Deserialize;

use super::protocol::{codes, read_frame_len, write_frame, ImagePayload, MaskPayload, Response, MAX_FRAME_BYTES};
use super::{classify, segment, Backend, BackendError, Task};

/// model_id → backend. Immutable once the server starts.
pub type ModelRegistry = BTreeMap<String, Arc<dyn Backend>>;

#[derive(Deserialize)]
struct LooseRequest {
    op: String,
    #[serde(default)]
    task: Option<String>,
    model: String,
    image: ImagePayload,
}

fn backend_error(id: &str, err: BackendError) -> Response {
    match err {
        BackendError::Unsupported { what, .. } => Response::error(id, codes::UNSUPPORTED_TASK, what),
        BackendError::Remote { code, message, .. } => Response::error(id, &code, message),
        other => Response::error(id, codes::INTERNAL, other.to_string()),
    }
}

/// Answers one request payload. Never fails: protocol violations become
/// error envelopes.
pub fn handle_payload(registry: &ModelRegistry, payload: &[u8]) -> Response {
    let value: serde_json::Value = match serde_json::from_slice(payload) {
        Ok(v) => v,
        Err(e) => return Response::error("", codes::BAD_FRAME, format!("payload is not JSON: {e}")),
    };
    let Some(id) = value.get("id").and_then(|v| v.as_str()).map(str::to_owned) else {
        return Response::error("", codes::BAD_REQUEST, "missing string field `id`");
    };
    let req: LooseRequest = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return Response::error(id, codes::BAD_REQUEST, e.to_string()),
    };
    if req.op != "classify" && req.op != "segment" {
        return Response::error(id, codes::UNSUPPORTED_OP, format!("unknown op `{}`", req.op));
    }
    let Some(backend) = registry.get(&req.model) else {
        return Response::error(id, codes::UNKNOWN_MODEL, format!("no model `{}`", req.model));
    };
    let image = match req.image.to_grid() {
        Ok(g) => g,
        Err(e) => return Response::error(id, codes::BAD_IMAGE, e.to_string()),
    };
    if req.op == "segment" {
        return match segment(backend.as_ref(), &image) {
            Ok(mask) => Response {
                id,
                model: Some(req.model),
                mask: Some(MaskPayload::from_mask(&mask)),
                ..Response::default()
            },
            Err(e) => backend_error(&id, e),
        };
    }
    let task = match req.task.as_deref() {
        Some("quality") => Task::Quality,
        Some("pvi") => Task::Pvi,
        Some("edd") => Task::Edd,
        Some(other) => return Response::error(id, codes::UNSUPPORTED_TASK, format!("unknown task `{other}`")),
        None => return Response::error(id, codes::BAD_REQUEST, "classify requires a task"),
    };
    match classify(backend.as_ref(), &image, task) {
        Ok(scores) => Response {
            id,
            model: Some(req.model),
            scores: Some(scores.entries),
            details: (!scores.details.is_empty()).then_some(scores.details),
            ..Response::default()
        },
        Err(e) => backend_error(&id, e),
    }
}

fn serve_connection(mut stream: TcpStream, registry: Arc<ModelRegistry>) -> io::Result<()> {
    loop {
        let len = match read_frame_len(&mut stream) {
            Ok(len) => len,
            Err(_) => return Ok(()),
        };
        if len > MAX_FRAME_BYTES {
            // cannot resynchronise on a garbage length; answer and hang up
            let reply = Response::error("", codes::BAD_FRAME, format!("frame length {len} exceeds limit"));
            write_frame(&mut stream, &reply.to_bytes())?;
            return Ok(());
        }
        let mut body = vec![0u8; len];
        if stream.read_exact(&mut body).is_err() {
            return Ok(());
        }
        let reply = handle_payload(&registry, &body);
        write_frame(&mut stream, &reply.to_bytes())?;
    }
}

pub struct BackendServer;

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_inner();
        }
    }
}

impl BackendServer {
    /// Binds and serves on background threads, one per connection.
    pub fn spawn(addr: impl ToSocketAddrs, registry: ModelRegistry) -> io::Result<ServerHandle> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let registry = Arc::new(registry);
        let flag = stop.clone();
        let accept = thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let _ = stream.set_nodelay(true);
                let reg = registry.clone();
                thread::spawn(move || {
                    let _ = serve_connection(stream, reg);
                });
            }
        });
        Ok(ServerHandle {
            addr: local,
            stop,
            accept: Some(accept),
        })
    }
}
