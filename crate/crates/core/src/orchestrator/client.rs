//! Client side of the segmenter protocol.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::Duration;

use super::protocol::{handle_line, RequestHandler, SegmenterRequest, SegmenterResponse};
use crate::{Error, Result};

/// Anything that answers segmenter requests.
pub trait Segmenter: Send {
    fn segment(&mut self, request: &SegmenterRequest) -> Result<SegmenterResponse>;
}

fn decode_response(request: &SegmenterRequest, line: &str) -> Result<SegmenterResponse> {
    let resp: SegmenterResponse = serde_json::from_str(line.trim())
        .map_err(|e| Error::Protocol(format!("undecodable response {line:?}: {e}")))?;
    if resp.request_id != request.request_id {
        return Err(Error::Protocol(format!(
            "response id {:?} does not echo request id {:?}",
            resp.request_id, request.request_id
        )));
    }
    Ok(resp)
}

/// Runs a handler in the calling thread, still passing through the JSON
/// encoding so the wire format is exercised.
pub struct InProcessSegmenter {
    handler: Arc<dyn RequestHandler>,
}

impl InProcessSegmenter {
    pub fn new(handler: Arc<dyn RequestHandler>) -> Self {
        Self { handler }
    }
}

impl Segmenter for InProcessSegmenter {
    fn segment(&mut self, request: &SegmenterRequest) -> Result<SegmenterResponse> {
        let line = serde_json::to_string(request).expect("request serializes");
        decode_response(request, &handle_line(&*self.handler, &line))
    }
}

trait LineChannel: Send {
    fn exchange(&mut self, line: &str, timeout: Duration) -> Result<String>;
}

struct ChildChannel {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<io::Result<String>>,
}

impl ChildChannel {
    fn spawn(argv: &[String]) -> Result<Self> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| Error::Config("segmenter command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Unavailable(format!("cannot start {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                let res = match reader.read_line(&mut line) {
                    Ok(0) => Err(io::Error::new(io::ErrorKind::UnexpectedEof, "segmenter exited")),
                    Ok(_) => Ok(line),
                    Err(e) => Err(e),
                };
                let done = res.is_err();
                if tx.send(res).is_err() || done {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }
}

impl Drop for ChildChannel {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl LineChannel for ChildChannel {
    fn exchange(&mut self, line: &str, timeout: Duration) -> Result<String> {
        let send = |stdin: &mut ChildStdin| -> io::Result<()> {
            stdin.write_all(line.as_bytes())?;
            stdin.write_all(b"\n")?;
            stdin.flush()
        };
        send(&mut self.stdin).map_err(|e| Error::Protocol(format!("write to segmenter: {e}")))?;
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(resp)) => Ok(resp),
            Ok(Err(e)) => Err(Error::Protocol(format!("read from segmenter: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(timeout.as_millis() as u64)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::Protocol("segmenter output closed".into()))
            }
        }
    }
}

struct TcpChannel {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl TcpChannel {
    fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::Unavailable(format!("cannot connect to {addr}: {e}")))?;
        let reader = stream
            .try_clone()
            .map_err(|e| Error::Unavailable(format!("{addr}: {e}")))?;
        Ok(Self {
            writer: stream,
            reader: BufReader::new(reader),
        })
    }
}

impl LineChannel for TcpChannel {
    fn exchange(&mut self, line: &str, timeout: Duration) -> Result<String> {
        let io_err = |e: io::Error| {
            if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) {
                Error::Timeout(timeout.as_millis() as u64)
            } else {
                Error::Protocol(format!("socket: {e}"))
            }
        };
        self.writer
            .set_read_timeout(Some(timeout))
            .map_err(io_err)?;
        self.writer.write_all(line.as_bytes()).map_err(io_err)?;
        self.writer.write_all(b"\n").map_err(io_err)?;
        self.writer.flush().map_err(io_err)?;
        let mut resp = String::new();
        match self.reader.read_line(&mut resp).map_err(io_err)? {
            0 => Err(Error::Protocol("segmenter closed the connection".into())),
            _ => Ok(resp),
        }
    }
}

type Connector = Box<dyn Fn() -> Result<Box<dyn LineChannel>> + Send>;

/// Line-oriented client for a segmenter behind a pipe or socket.
///
/// After any transport or protocol failure the connection is dropped and
/// re-established on the next request, so a late reply can never be paired
/// with the wrong request.
pub struct LineClient {
    connect: Connector,
    channel: Option<Box<dyn LineChannel>>,
    timeout: Duration,
}

impl LineClient {
    /// Spawns `argv` and speaks the protocol over its stdin/stdout.
    pub fn command(argv: Vec<String>, timeout: Duration) -> Result<Self> {
        let connect: Connector =
            Box::new(move || Ok(Box::new(ChildChannel::spawn(&argv)?) as Box<dyn LineChannel>));
        Self::connected(connect, timeout)
    }

    pub fn tcp(addr: String, timeout: Duration) -> Result<Self> {
        let connect: Connector =
            Box::new(move || Ok(Box::new(TcpChannel::connect(&addr)?) as Box<dyn LineChannel>));
        Self::connected(connect, timeout)
    }

    fn connected(connect: Connector, timeout: Duration) -> Result<Self> {
        let channel = Some(connect()?);
        Ok(Self {
            connect,
            channel,
            timeout,
        })
    }
}

impl Segmenter for LineClient {
    fn segment(&mut self, request: &SegmenterRequest) -> Result<SegmenterResponse> {
        let channel = match self.channel.as_mut() {
            Some(c) => c,
            None => self.channel.insert((self.connect)()?),
        };
        let line = serde_json::to_string(request).expect("request serializes");
        let result = channel
            .exchange(&line, self.timeout)
            .and_then(|resp| decode_response(request, &resp));
        if result.is_err() {
            self.channel = None;
        }
        result
    }
}
