//! Newline-delimited JSON protocol spoken by external segmenters.
//!
//! Each request is one JSON object on one line; the server answers with one
//! response line echoing the `request_id`. Masks travel by file path as PFM
//! probability maps.

use std::io::{self, BufRead, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dpc::PromptSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterRequest {
    pub request_id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PromptSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterResponse {
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    pub status: Status,
    #[serde(default)]
    pub message: String,
}

impl SegmenterResponse {
    pub fn ok(request_id: impl Into<String>, mask_path: PathBuf) -> Self {
        Self {
            request_id: request_id.into(),
            mask_path: Some(mask_path),
            status: Status::Ok,
            message: String::new(),
        }
    }

    pub fn error(request_id: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            request_id: request_id.into(),
            mask_path: None,
            status: Status::Error,
            message: message.into(),
        }
    }
}

/// Server-side behaviour of a segmenter.
pub trait RequestHandler: Send + Sync {
    fn handle(&self, request: &SegmenterRequest) -> SegmenterResponse;
}

impl<H: RequestHandler + ?Sized> RequestHandler for Arc<H> {
    fn handle(&self, request: &SegmenterRequest) -> SegmenterResponse {
        (**self).handle(request)
    }
}

/// Request ids double as file stems, so they are restricted to a safe alphabet.
pub fn valid_request_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 200
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
        && !id.starts_with('.')
}

/// Decodes one request line and encodes the response line (without the
/// trailing newline). Undecodable input yields an error response with an
/// empty `request_id`.
pub fn handle_line<H: RequestHandler + ?Sized>(handler: &H, line: &str) -> String {
    let response = match serde_json::from_str::<SegmenterRequest>(line) {
        Ok(req) if !valid_request_id(&req.request_id) => SegmenterResponse::error(
            req.request_id.clone(),
            format!("invalid request_id {:?}", req.request_id),
        ),
        Ok(req) => handler.handle(&req),
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("request_id")?.as_str().map(str::to_owned))
                .unwrap_or_default();
            SegmenterResponse::error(id, format!("malformed request: {e}"))
        }
    };
    serde_json::to_string(&response).expect("response serializes")
}

/// Serves requests until the reader reaches end of input.
pub fn serve<H, R, W>(handler: &H, reader: R, mut writer: W) -> io::Result<()>
where
    H: RequestHandler + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let out = handle_line(handler, &line);
        writer.write_all(out.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Accepts connections forever, one thread per connection.
pub fn serve_tcp(handler: Arc<dyn RequestHandler>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let handler = Arc::clone(&handler);
        std::thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => io::BufReader::new(s),
                Err(e) => {
                    log::warn!("connection setup failed: {e}");
                    return;
                }
            };
            if let Err(e) = serve(&*handler, reader, stream) {
                log::warn!("connection closed with error: {e}");
            }
        });
    }
    Ok(())
}
