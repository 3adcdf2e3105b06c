//! Line-delimited JSON client for external model servers.
//!
//! ```text
//! -> {"op":"hello","version":1}
//! <- {"op":"model","n_classes":N,"input_shape":[H,W,C]}
//! -> {"op":"predict","id":7,"shape":[H,W,C],"pixels":"<base64 LE f32>"}
//! <- {"op":"result","id":7,"probs":[...]}  |  {"op":"error","id":7,"message":"..."}
//! ```
//!
//! Batches are pipelined as independent `predict` requests; responses may
//! arrive in any order and are matched by id. The batch form
//! (`"pixels_batch"` + `"count"`, answered with `"probs_batch"`) is part of
//! the message schema for servers that want it.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use log::warn;
use serde::{Deserialize, Serialize};

use super::Oracle;
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
/// One retry after the first transport failure.
const MAX_ATTEMPTS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello {
        version: u32,
    },
    Predict {
        id: u64,
        shape: Shape,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pixels: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pixels_batch: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        count: Option<usize>,
    },
}

impl Request {
    pub fn predict(id: u64, image: &ImageTensor) -> Self {
        Request::Predict {
            id,
            shape: image.shape(),
            pixels: Some(B64.encode(image.to_le_bytes())),
            pixels_batch: None,
            count: None,
        }
    }

    pub fn predict_batch(id: u64, images: &[ImageTensor]) -> Result<Self> {
        let shape = images
            .first()
            .map(ImageTensor::shape)
            .ok_or_else(|| Error::Input("empty batch".into()))?;
        if images.iter().any(|i| i.shape() != shape) {
            return Err(Error::Input("batch images must share one shape".into()));
        }
        let bytes: Vec<u8> = images.iter().flat_map(|i| i.to_le_bytes()).collect();
        Ok(Request::Predict {
            id,
            shape,
            pixels: None,
            pixels_batch: Some(B64.encode(bytes)),
            count: Some(images.len()),
        })
    }

    /// Decodes the image payload(s) of a predict request (server side).
    pub fn decode_images(&self) -> Result<Vec<ImageTensor>> {
        let Request::Predict {
            shape,
            pixels,
            pixels_batch,
            count,
            ..
        } = self
        else {
            return Err(Error::Protocol("not a predict request".into()));
        };
        let decode = |s: &str| {
            B64.decode(s)
                .map_err(|e| Error::Protocol(format!("bad base64 payload: {e}")))
        };
        match (pixels, pixels_batch) {
            (Some(p), None) => Ok(vec![ImageTensor::from_le_bytes(*shape, &decode(p)?)?]),
            (None, Some(b)) => {
                let bytes = decode(b)?;
                let per = shape.len() * 4;
                let n = count.unwrap_or(bytes.len().checked_div(per).unwrap_or(0));
                if bytes.len() != n * per {
                    return Err(Error::Protocol(format!(
                        "pixels_batch holds {} bytes, expected {n} x {per}",
                        bytes.len()
                    )));
                }
                bytes
                    .chunks_exact(per)
                    .map(|c| ImageTensor::from_le_bytes(*shape, c))
                    .collect()
            }
            _ => Err(Error::Protocol(
                "predict needs exactly one of pixels / pixels_batch".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Response {
    Model {
        n_classes: usize,
        input_shape: Shape,
    },
    Result {
        id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        probs: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        probs_batch: Option<Vec<Vec<f64>>>,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
}

/// A byte stream to a model server.
pub struct Channel {
    pub writer: Box<dyn Write + Send>,
    pub reader: Box<dyn BufRead + Send>,
    pub child: Option<Child>,
}

/// Knows how to (re)open a [`Channel`]; reconnects happen on retry.
pub trait Connector: Send + Sync {
    fn open(&self) -> io::Result<Channel>;
    fn describe(&self) -> String;
}

pub struct TcpConnector {
    addr: String,
}

impl TcpConnector {
    pub fn new(addr: impl Into<String>) -> Self {
        TcpConnector { addr: addr.into() }
    }
}

impl Connector for TcpConnector {
    fn open(&self) -> io::Result<Channel> {
        let stream = TcpStream::connect(&self.addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Channel {
            writer: Box::new(stream),
            reader: Box::new(reader),
            child: None,
        })
    }

    fn describe(&self) -> String {
        format!("tcp:{}", self.addr)
    }
}

/// Spawns `sh -c <command>` and talks over its stdin/stdout.
pub struct CommandConnector {
    command: String,
}

impl CommandConnector {
    pub fn new(command: impl Into<String>) -> Self {
        CommandConnector {
            command: command.into(),
        }
    }
}

impl Connector for CommandConnector {
    fn open(&self) -> io::Result<Channel> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Channel {
            writer: Box::new(stdin),
            reader: Box::new(BufReader::new(stdout)),
            child: Some(child),
        })
    }

    fn describe(&self) -> String {
        format!("cmd:{}", self.command)
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Connection {
    fn new(channel: Channel) -> Self {
        let (tx, rx) = mpsc::channel();
        let mut reader = channel.reader;
        thread::spawn(move || loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => {
                    let _ = tx.send(Err(io::Error::new(
                        io::ErrorKind::UnexpectedEof,
                        "model server closed the stream",
                    )));
                    return;
                }
                Ok(_) => {
                    if tx.send(Ok(line)).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return;
                }
            }
        });
        Connection {
            writer: channel.writer,
            lines: rx,
            child: channel.child,
        }
    }

    fn send(&mut self, req: &Request) -> io::Result<()> {
        let mut line = serde_json::to_vec(req).expect("request serializes");
        line.push(b'\n');
        self.writer.write_all(&line)?;
        self.writer.flush()
    }

    fn recv(&mut self, timeout: Duration) -> io::Result<Response> {
        loop {
            let line = match self.lines.recv_timeout(timeout) {
                Ok(r) => r?,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(io::Error::new(
                        io::ErrorKind::TimedOut,
                        format!("no response within {timeout:?}"),
                    ))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(io::Error::new(
                        io::ErrorKind::BrokenPipe,
                        "reader thread gone",
                    ))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return serde_json::from_str(&line).map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("malformed response: {e}"),
                )
            });
        }
    }
}

/// Oracle backed by a remote model speaking the line-delimited JSON protocol.
pub struct ProtocolOracle {
    connector: Box<dyn Connector>,
    conn: Mutex<Option<Connection>>,
    n_classes: usize,
    input_shape: Shape,
    next_id: AtomicU64,
    timeout: Duration,
}

impl ProtocolOracle {
    /// Opens the channel and performs the `hello` handshake (with one retry).
    pub fn connect(connector: impl Connector + 'static, timeout: Duration) -> Result<Self> {
        let connector: Box<dyn Connector> = Box::new(connector);
        let mut last = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            match handshake(connector.as_ref(), timeout) {
                Ok((conn, n_classes, input_shape)) => {
                    if n_classes < 2 || input_shape.is_empty() {
                        return Err(Error::Protocol(format!(
                            "server declared {n_classes} classes and shape {input_shape}"
                        )));
                    }
                    return Ok(ProtocolOracle {
                        connector,
                        conn: Mutex::new(Some(conn)),
                        n_classes,
                        input_shape,
                        next_id: AtomicU64::new(1),
                        timeout,
                    });
                }
                Err(e) => {
                    warn!(
                        "{}: handshake attempt {attempt} failed: {e}",
                        connector.describe()
                    );
                    last = e.to_string();
                }
            }
        }
        Err(Error::Transport {
            message: format!("{}: {last}", connector.describe()),
            attempts: MAX_ATTEMPTS,
        })
    }

    fn exchange(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let mut last = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            if guard.is_none() {
                match handshake(self.connector.as_ref(), self.timeout) {
                    Ok((conn, n, shape)) if n == self.n_classes && shape == self.input_shape => {
                        *guard = Some(conn);
                    }
                    Ok((_, n, shape)) => {
                        return Err(Error::Protocol(format!(
                            "server changed its declaration on reconnect ({n} classes, {shape})"
                        )));
                    }
                    Err(e) => {
                        warn!("reconnect attempt {attempt} failed: {e}");
                        last = e.to_string();
                        continue;
                    }
                }
            }
            let conn = guard.as_mut().expect("connected above");
            match self.exchange_on(conn, images) {
                Ok(result) => return result,
                Err(e) => {
                    warn!(
                        "{}: attempt {attempt} failed: {e}",
                        self.connector.describe()
                    );
                    last = e.to_string();
                    *guard = None;
                }
            }
        }
        Err(Error::Transport {
            message: format!("{}: {last}", self.connector.describe()),
            attempts: MAX_ATTEMPTS,
        })
    }

    /// Outer error: transport (retryable). Inner error: the server refused a request.
    fn exchange_on(
        &self,
        conn: &mut Connection,
        images: &[ImageTensor],
    ) -> io::Result<Result<Vec<Vec<f64>>>> {
        let mut pending = HashMap::with_capacity(images.len());
        for (slot, image) in images.iter().enumerate() {
            let id = self.next_id.fetch_add(1, Ordering::Relaxed);
            pending.insert(id, slot);
            conn.send(&Request::predict(id, image))?;
        }
        let mut out: Vec<Option<Vec<f64>>> = vec![None; images.len()];
        while !pending.is_empty() {
            match conn.recv(self.timeout)? {
                Response::Result { id, probs, .. } => {
                    let Some(slot) = pending.remove(&id) else {
                        continue; // stale answer from an earlier attempt
                    };
                    match probs {
                        Some(p) => out[slot] = Some(p),
                        None => {
                            return Ok(Err(Error::Protocol(format!(
                                "result {id} carries no probs"
                            ))))
                        }
                    }
                }
                Response::Error { id, message } => {
                    if let Some(id) = id {
                        if let Some(slot) = pending.get(&id) {
                            return Ok(Err(Error::Protocol(format!(
                                "server rejected request {id} (batch index {slot}): {message}"
                            ))));
                        }
                        continue;
                    }
                    warn!("server error without id: {message}");
                }
                Response::Model { .. } => {}
            }
        }
        Ok(Ok(out
            .into_iter()
            .map(|p| p.expect("every slot answered"))
            .collect()))
    }
}

fn handshake(
    connector: &dyn Connector,
    timeout: Duration,
) -> io::Result<(Connection, usize, Shape)> {
    let mut conn = Connection::new(connector.open()?);
    conn.send(&Request::Hello {
        version: PROTOCOL_VERSION,
    })?;
    loop {
        match conn.recv(timeout)? {
            Response::Model {
                n_classes,
                input_shape,
            } => return Ok((conn, n_classes, input_shape)),
            Response::Error { message, .. } => {
                return Err(io::Error::other(format!("handshake refused: {message}")))
            }
            Response::Result { .. } => {}
        }
    }
}

/// Answers protocol requests with `oracle` until the input ends, or until
/// `max_requests` predict requests have been answered. Returns that count.
///
/// Unparseable lines get an error response without an id; requests the
/// oracle rejects get one carrying their id.
pub fn serve(
    oracle: &(impl Oracle + ?Sized),
    input: impl BufRead,
    mut output: impl Write,
    max_requests: Option<u64>,
) -> io::Result<u64> {
    let mut served = 0;
    for line in input.lines() {
        if max_requests.is_some_and(|m| served >= m) {
            break;
        }
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Err(e) => Response::Error {
                id: None,
                message: format!("malformed request: {e}"),
            },
            Ok(Request::Hello { version }) if version != PROTOCOL_VERSION => Response::Error {
                id: None,
                message: format!("unsupported protocol version {version}"),
            },
            Ok(Request::Hello { .. }) => Response::Model {
                n_classes: oracle.n_classes(),
                input_shape: oracle.input_shape(),
            },
            Ok(req) => {
                served += 1;
                let Request::Predict {
                    id,
                    ref pixels_batch,
                    ..
                } = req
                else {
                    unreachable!("hello handled above")
                };
                let batch = pixels_batch.is_some();
                let answer = req.decode_images().and_then(|imgs| {
                    match imgs.iter().find(|i| i.shape() != oracle.input_shape()) {
                        Some(bad) => Err(Error::Input(format!(
                            "image shape {} differs from the model's {}",
                            bad.shape(),
                            oracle.input_shape()
                        ))),
                        None => oracle.probabilities_batch(&imgs),
                    }
                });
                match answer {
                    Ok(mut probs) if !batch => Response::Result {
                        id,
                        probs: probs.pop(),
                        probs_batch: None,
                    },
                    Ok(probs) => Response::Result {
                        id,
                        probs: None,
                        probs_batch: Some(probs),
                    },
                    Err(e) => Response::Error {
                        id: Some(id),
                        message: e.to_string(),
                    },
                }
            }
        };
        let mut out = serde_json::to_vec(&response).expect("response serializes");
        out.push(b'\n');
        output.write_all(&out)?;
        output.flush()?;
    }
    Ok(served)
}

impl Oracle for ProtocolOracle {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn input_shape(&self) -> Shape {
        self.input_shape
    }

    fn probabilities(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self
            .exchange(std::slice::from_ref(image))?
            .pop()
            .expect("one answer"))
    }

    fn probabilities_batch(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        self.exchange(images)
    }

    fn is_serial(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        self.connector.describe()
    }
}
