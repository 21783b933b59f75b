use std::io::{self, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::protocol::{read_frame, FrameError, ImageEncoding, ImagePayload, Op, Request, Response};
use super::{validate_scores, Backend, BackendDescriptor, BackendError, ProbabilityMask, ScoreMap, Task};
use crate::grid::PixelGrid;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

/// Client for a model server. Requests on one handle are serialized over a
/// single persistent connection.
pub struct ExternalBackend {
    descriptor: BackendDescriptor,
    endpoint: String,
    timeout: Duration,
    encoding: ImageEncoding,
    conn: Mutex<Option<TcpStream>>,
    next_id: AtomicU64,
}

enum Failure {
    Connect(io::Error),
    Io(io::Error),
    Timeout,
    Frame(String),
}

impl ExternalBackend {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self, BackendError> {
        descriptor.validate()?;
        let endpoint = descriptor.endpoint.clone().expect("validated external descriptor");
        Ok(Self {
            descriptor,
            endpoint,
            timeout: DEFAULT_TIMEOUT,
            encoding: ImageEncoding::F32leB64,
            conn: Mutex::new(None),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_encoding(mut self, encoding: ImageEncoding) -> Self {
        self.encoding = encoding;
        self
    }

    fn connect(&self) -> Result<TcpStream, io::Error> {
        let mut last = io::Error::new(io::ErrorKind::NotFound, "endpoint resolved to no address");
        for addr in self.endpoint.to_socket_addrs()? {
            match TcpStream::connect_timeout(&addr, self.timeout) {
                Ok(s) => {
                    s.set_read_timeout(Some(self.timeout))?;
                    s.set_write_timeout(Some(self.timeout))?;
                    let _ = s.set_nodelay(true);
                    return Ok(s);
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    fn exchange_once(&self, slot: &mut Option<TcpStream>, payload: &[u8]) -> Result<Vec<u8>, Failure> {
        if slot.is_none() {
            *slot = Some(self.connect().map_err(Failure::Connect)?);
        }
        let stream = slot.as_mut().expect("connected above");
        let mut framed = Vec::with_capacity(payload.len() + 4);
        framed.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        framed.extend_from_slice(payload);
        if let Err(e) = stream.write_all(&framed).and_then(|_| stream.flush()) {
            return Err(if is_timeout(&e) { Failure::Timeout } else { Failure::Io(e) });
        }
        match read_frame(stream) {
            Ok(body) => Ok(body),
            Err(FrameError::Io(e)) if is_timeout(&e) => Err(Failure::Timeout),
            Err(FrameError::Io(e)) => Err(Failure::Io(e)),
            Err(FrameError::Closed) => Err(Failure::Io(io::Error::new(io::ErrorKind::ConnectionReset, "closed"))),
            Err(e) => Err(Failure::Frame(e.to_string())),
        }
    }

    /// One retry on connection failure, none on timeout.
    fn round_trip(&self, req: &Request, task: &str) -> Result<Response, BackendError> {
        let payload = req.to_bytes();
        let mut slot = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let mut attempt = 0;
        let body = loop {
            attempt += 1;
            match self.exchange_once(&mut slot, &payload) {
                Ok(body) => break body,
                Err(failure) => {
                    *slot = None;
                    match failure {
                        Failure::Timeout => {
                            return Err(BackendError::Timeout {
                                backend: self.descriptor.model_id.clone(),
                                task: task.to_string(),
                            })
                        }
                        Failure::Frame(reason) => return Err(self.malformed(reason)),
                        Failure::Connect(e) | Failure::Io(e) if attempt >= 2 => {
                            return Err(BackendError::Unavailable {
                                backend: self.descriptor.model_id.clone(),
                                reason: format!("{}: {e}", self.endpoint),
                            })
                        }
                        Failure::Connect(_) | Failure::Io(_) => continue,
                    }
                }
            }
        };
        let resp: Response =
            serde_json::from_slice(&body).map_err(|e| self.malformed(format!("response is not valid JSON: {e}")))?;
        if resp.id != req.id {
            return Err(self.malformed(format!("response id `{}` does not echo request id `{}`", resp.id, req.id)));
        }
        if let Some(err) = resp.error {
            return Err(BackendError::Remote {
                backend: self.descriptor.model_id.clone(),
                code: err.code,
                message: err.message,
            });
        }
        Ok(resp)
    }

    fn malformed(&self, reason: String) -> BackendError {
        BackendError::MalformedResponse {
            backend: self.descriptor.model_id.clone(),
            reason,
        }
    }

    fn request(&self, op: Op, task: Option<Task>, image: &PixelGrid) -> Result<Request, BackendError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        Ok(Request {
            id: format!("{}-{id}", self.descriptor.model_id),
            op,
            task,
            model: self.descriptor.model_id.clone(),
            image: ImagePayload::from_grid(image, self.encoding).map_err(|e| BackendError::Unsupported {
                backend: self.descriptor.model_id.clone(),
                what: format!("image payload: {e}"),
            })?,
        })
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

impl Backend for ExternalBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn classify_raw(&self, image: &PixelGrid, task: Task) -> Result<ScoreMap, BackendError> {
        let req = self.request(Op::Classify, Some(task), image)?;
        let resp = self.round_trip(&req, task.as_str())?;
        let entries = resp
            .scores
            .ok_or_else(|| self.malformed("classify response has no `scores`".into()))?;
        validate_scores(&self.descriptor.model_id, task, &entries)?;
        Ok(ScoreMap {
            entries,
            model_id: resp.model.unwrap_or_else(|| self.descriptor.model_id.clone()),
            latency_ms: 0.0,
            details: resp.details.unwrap_or_default(),
        })
    }

    fn segment_raw(&self, image: &PixelGrid) -> Result<ProbabilityMask, BackendError> {
        let req = self.request(Op::Segment, None, image)?;
        let resp = self.round_trip(&req, "segment")?;
        let mask = resp
            .mask
            .ok_or_else(|| self.malformed("segment response has no `mask`".into()))?
            .to_mask()
            .map_err(|e| self.malformed(e.to_string()))?;
        if mask.width() != image.width() || mask.height() != image.height() {
            return Err(self.malformed(format!(
                "mask is {}x{}, image is {}x{}",
                mask.width(),
                mask.height(),
                image.width(),
                image.height()
            )));
        }
        Ok(mask)
    }
}
