//! Line-delimited JSON wire format.
//!
//! Client to server, one object per line: `{"seq": any, "cmd": "...", "params": {...}}`.
//! Server to client, one object per line with a `type` of `ack`, `frame`,
//! `status` or `error`; `seq` echoes the request it answers.
//!
//! Besides the [`Command`](super::Command) names, the server understands
//! `subscribe`, `unsubscribe`, `set_rate` (`{"hz": f}`), `status` and
//! `shutdown`. A frame with
//! `"encoding":"binary"` is followed by exactly `bytes` raw bytes
//! (little-endian `f32` pixels) before the next line.

use std::io::{self, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::session::{Ack, FrameMessage, Payload, RunMode, Session, Subscription, DEFAULT_CAPACITY};
use crate::error::{invalid, Result};
use crate::render::RenderSettings;

/// Longest accepted request line.
pub const MAX_LINE: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub seq: Value,
    pub cmd: String,
    pub params: Value,
}

pub fn parse_request(line: &str) -> std::result::Result<Request, (Value, String)> {
    let v: Value = serde_json::from_str(line).map_err(|e| (Value::Null, format!("malformed JSON: {e}")))?;
    let Value::Object(mut m) = v else {
        return Err((Value::Null, "request must be a JSON object".into()));
    };
    let seq = m.remove("seq").unwrap_or(Value::Null);
    let cmd = match m.remove("cmd") {
        Some(Value::String(s)) => s,
        _ => return Err((seq, "request needs a string `cmd`".into())),
    };
    let params = m.remove("params").unwrap_or(Value::Null);
    Ok(Request { seq, cmd, params })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    #[default]
    Base64,
    Binary,
}

/// Parameters of a `subscribe` request:
/// `{"mode": "slice" | "render", "encoding": "base64" | "binary", "capacity": n, "render": {...}}`.
pub fn parse_subscription(params: &Value) -> Result<(Subscription, Encoding)> {
    let get = |k: &str| params.get(k).filter(|v| !v.is_null());
    let encoding = match get("encoding") {
        None => Encoding::Base64,
        Some(v) => {
            serde_json::from_value(v.clone()).map_err(|_| invalid("encoding must be \"base64\" or \"binary\""))?
        }
    };
    let capacity = match get("capacity") {
        None => DEFAULT_CAPACITY,
        Some(v) => v
            .as_u64()
            .filter(|&c| (1..=4096).contains(&c))
            .ok_or_else(|| invalid("capacity must be an integer in 1..=4096"))? as usize,
    };
    let payload = match get("mode").and_then(Value::as_str) {
        None | Some("slice") => Payload::Slice,
        Some("render") => {
            let settings: RenderSettings = match get("render") {
                None => RenderSettings::default(),
                Some(v) => {
                    serde_json::from_value(v.clone()).map_err(|e| invalid(format!("bad render settings: {e}")))?
                }
            };
            settings.validate()?;
            Payload::Render(settings)
        }
        Some(other) => return Err(invalid(format!("unknown subscription mode `{other}`"))),
    };
    Ok((Subscription { payload, capacity }, encoding))
}

pub fn ack_line(seq: &Value, ack: &Ack, subscriber: Option<u64>) -> String {
    let mut v = json!({
        "type": "ack",
        "seq": seq,
        "session_seq": ack.seq,
        "effective_step": ack.effective_step,
        "steps_run": ack.steps_run,
    });
    if let Some(id) = ack.obstacle_id {
        v["obstacle_id"] = json!(id);
    }
    if let Some(id) = subscriber {
        v["subscriber"] = json!(id);
    }
    v.to_string()
}

/// Reply to `status`: everything a client needs to mirror the session.
pub fn status_line(seq: &Value, session: &Session) -> String {
    let spec = session.spec();
    let bbox = spec.bbox();
    let (mode, rate) = match session.mode() {
        RunMode::Paused => ("paused", None),
        RunMode::Running { rate_hz } => ("running", Some(rate_hz)),
    };
    let obstacles: Vec<Value> = session
        .obstacles()
        .iter()
        .map(|(id, o)| json!({ "id": id, "center": o.center, "radius": o.radius }))
        .collect();
    let config = session.config();
    json!({
        "type": "status",
        "seq": seq,
        "session_seq": session.seq(),
        "step_index": session.state().step_index,
        "clock": session.state().clock,
        "mode": mode,
        "rate_hz": rate,
        "asset_frames": session.asset_frames(),
        "frame": session.start_frame(),
        "grid": { "res": spec.res(), "min": bbox.min, "max": bbox.max },
        "dt": config.dt,
        "buoyancy": config.buoyancy_coeff,
        "wind": config.wind,
        "obstacles": obstacles,
    })
    .to_string()
}

pub fn error_line(seq: &Value, reason: &str) -> String {
    json!({ "type": "error", "seq": seq, "reason": reason }).to_string()
}

fn pixel_bytes(msg: &FrameMessage) -> Vec<u8> {
    msg.pixels.iter().flat_map(|p| p.to_le_bytes()).collect()
}

fn frame_header(msg: &FrameMessage, seq: &Value) -> Value {
    json!({
        "type": "frame",
        "seq": seq,
        "step_index": msg.step_index,
        "clock": msg.clock,
        "max_divergence": msg.max_divergence,
        "total_mass": msg.total_mass,
        "width": msg.width,
        "height": msg.height,
    })
}

/// Writes one frame message; `seq` is `null` for streamed frames and the
/// request's `seq` for snapshots.
pub fn write_frame(out: &mut impl Write, msg: &FrameMessage, encoding: Encoding, seq: &Value) -> io::Result<()> {
    let mut v = frame_header(msg, seq);
    let bytes = pixel_bytes(msg);
    match encoding {
        Encoding::Base64 => {
            v["encoding"] = json!("base64");
            v["data"] = json!(STANDARD.encode(&bytes));
            writeln!(out, "{v}")
        }
        Encoding::Binary => {
            v["encoding"] = json!("binary");
            v["bytes"] = json!(bytes.len());
            writeln!(out, "{v}")?;
            out.write_all(&bytes)
        }
    }
}

/// Decodes the pixels of a base64 frame line (client side helper).
pub fn decode_base64_pixels(frame: &Value) -> Option<Vec<f32>> {
    let data = frame.get("data")?.as_str()?;
    let bytes = STANDARD.decode(data).ok()?;
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
    )
}
