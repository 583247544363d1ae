//! Wire envelope: JSON text messages `{v, type, seq, ...payload}`.

use base64::Engine;
use debris_core::raster::Raster;
use debris_core::session::{CommandPayload, Frame};
use debris_core::Error as CoreError;
use serde::Serialize;
use serde_json::{json, Map, Value};

pub const PROTOCOL_VERSION: u64 = 1;

/// Every `type` a client may send.
pub const REQUEST_TYPES: [&str; 15] = [
    "load_scenario",
    "place_barrier",
    "move_barrier",
    "set_barrier_params",
    "remove_barrier",
    "start",
    "pause",
    "reset",
    "query_point",
    "run_compare",
    "barrier_report",
    "claim_steering",
    "release_steering",
    "status",
    "get_log",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadJson,
    UnknownType,
    BadPayload,
    UnsupportedVersion,
    BadPhase,
    LockHeld,
    NotSteering,
    UnknownBarrier,
    UnknownScenario,
    OutOfBounds,
    Engine,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::BadJson => "bad_json",
            ErrorCode::UnknownType => "unknown_type",
            ErrorCode::BadPayload => "bad_payload",
            ErrorCode::UnsupportedVersion => "unsupported_version",
            ErrorCode::BadPhase => "bad_phase",
            ErrorCode::LockHeld => "lock_held",
            ErrorCode::NotSteering => "not_steering",
            ErrorCode::UnknownBarrier => "unknown_barrier",
            ErrorCode::UnknownScenario => "unknown_scenario",
            ErrorCode::OutOfBounds => "out_of_bounds",
            ErrorCode::Engine => "engine",
            ErrorCode::Internal => "internal",
        }
    }

    pub fn from_core(e: &CoreError) -> Self {
        match e {
            CoreError::BadPhase { .. } => ErrorCode::BadPhase,
            CoreError::UnknownBarrier(_) => ErrorCode::UnknownBarrier,
            CoreError::Scenario(_) => ErrorCode::UnknownScenario,
            CoreError::Domain(_) | CoreError::InvalidGrid(_) => ErrorCode::BadPayload,
            CoreError::Cfl { .. } | CoreError::NonFinite { .. } => ErrorCode::Engine,
            _ => ErrorCode::Internal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    /// Steering commands; these need the steering lock.
    Command(CommandPayload),
    QueryPoint {
        x: f64,
        y: f64,
    },
    RunCompare {
        until: Option<f64>,
    },
    BarrierReport {
        id: String,
    },
    ClaimSteering,
    ReleaseSteering,
    Status,
    GetLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub seq: Option<u64>,
    pub request: Request,
}

/// A message that never reached the session.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub code: ErrorCode,
    pub seq: Option<u64>,
    pub message: String,
}

impl Rejection {
    fn new(code: ErrorCode, seq: Option<u64>, message: impl Into<String>) -> Self {
        Self { code, seq, message: message.into() }
    }

    pub fn to_json(&self) -> String {
        error(self.code, self.seq, &self.message)
    }
}

pub fn parse(text: &str) -> Result<Envelope, Rejection> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Rejection::new(ErrorCode::BadJson, None, e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(Rejection::new(ErrorCode::BadJson, None, "envelope must be a JSON object"));
    };
    let seq = match obj.remove("seq") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64().ok_or_else(|| Rejection::new(ErrorCode::BadJson, None, "seq must be a non-negative integer"))?,
        ),
    };
    match obj.remove("v") {
        Some(v) if v.as_u64() == Some(PROTOCOL_VERSION) => {}
        Some(v) if v.is_u64() => {
            return Err(Rejection::new(
                ErrorCode::UnsupportedVersion,
                seq,
                format!("protocol version {v} not supported"),
            ))
        }
        _ => return Err(Rejection::new(ErrorCode::BadJson, seq, "missing integer protocol version `v`")),
    }
    let kind = match obj.get("type") {
        Some(Value::String(s)) => s.clone(),
        _ => return Err(Rejection::new(ErrorCode::BadJson, seq, "missing string `type`")),
    };
    let bad = |m: String| Rejection::new(ErrorCode::BadPayload, seq, m);
    let request = match kind.as_str() {
        "load_scenario" => {
            obj.insert("type".into(), Value::String("set_scenario".into()));
            Request::Command(command(obj).map_err(bad)?)
        }
        "place_barrier" | "move_barrier" | "set_barrier_params" | "remove_barrier" | "start" | "pause" | "reset" => {
            Request::Command(command(obj).map_err(bad)?)
        }
        "query_point" => {
            let x = finite(&obj, "x").map_err(bad)?;
            let y = finite(&obj, "y").map_err(bad)?;
            Request::QueryPoint { x, y }
        }
        "run_compare" => {
            let until = match obj.get("until") {
                None | Some(Value::Null) => None,
                Some(_) => Some(finite(&obj, "until").map_err(bad)?),
            };
            Request::RunCompare { until }
        }
        "barrier_report" => match obj.get("id") {
            Some(Value::String(id)) => Request::BarrierReport { id: id.clone() },
            _ => return Err(bad("barrier_report needs a string `id`".into())),
        },
        "claim_steering" => Request::ClaimSteering,
        "release_steering" => Request::ReleaseSteering,
        "status" => Request::Status,
        "get_log" => Request::GetLog,
        other => return Err(Rejection::new(ErrorCode::UnknownType, seq, format!("unknown message type `{other}`"))),
    };
    Ok(Envelope { seq, request })
}

fn command(obj: Map<String, Value>) -> Result<CommandPayload, String> {
    let payload: CommandPayload = serde_json::from_value(Value::Object(obj)).map_err(|e| e.to_string())?;
    // the solver rejects non-finite poses only once they are stepped
    let ok = match &payload {
        CommandPayload::PlaceBarrier { barrier: b } => {
            b.center.is_finite()
                && [b.yaw, b.height, b.width, b.thickness, b.face_angle, b.alpha].iter().all(|v| v.is_finite())
        }
        CommandPayload::MoveBarrier { center, yaw, .. } => center.iter().chain([yaw]).all(|v| v.is_finite()),
        CommandPayload::SetBarrierParams { height, width, face_angle, .. } => {
            [height, width, face_angle].iter().all(|v| v.is_none_or(|x| x.is_finite()))
        }
        _ => true,
    };
    if ok {
        Ok(payload)
    } else {
        Err("barrier fields must be finite".into())
    }
}

fn finite(obj: &Map<String, Value>, key: &str) -> Result<f64, String> {
    obj.get(key)
        .and_then(Value::as_f64)
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("`{key}` must be a finite number"))
}

fn envelope(kind: &str, seq: Option<u64>, mut body: Value) -> String {
    let obj = body.as_object_mut().expect("object body");
    obj.insert("v".into(), json!(PROTOCOL_VERSION));
    obj.insert("type".into(), json!(kind));
    obj.insert("seq".into(), json!(seq));
    Value::Object(std::mem::take(obj)).to_string()
}

pub fn error(code: ErrorCode, seq: Option<u64>, message: &str) -> String {
    envelope("error", seq, json!({ "code": code.as_str(), "message": message }))
}

pub fn ack(seq: Option<u64>, body: Value) -> String {
    envelope("ack", seq, body)
}

pub fn analysis(kind: &str, seq: Option<u64>, mut body: Value) -> String {
    body.as_object_mut().expect("object body").insert("kind".into(), json!(kind));
    envelope("analysis", seq, body)
}

pub fn message(kind: &str, body: Value) -> String {
    envelope(kind, None, body)
}

/// Little-endian `f32` bytes, base64.
pub fn encode_f32(values: impl IntoIterator<Item = f32>) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(f32::to_le_bytes).collect();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str) -> Option<Vec<f32>> {
    let bytes = base64::engine::general_purpose::STANDARD.decode(text).ok()?;
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn raster_json(r: &Raster<f64>) -> Value {
    let g = r.geometry;
    json!({
        "n_cols": g.n_cols,
        "n_rows": g.n_rows,
        "cell_size": g.cell_size,
        "origin_x": g.origin_x,
        "origin_y": g.origin_y,
        "values": encode_f32(r.values.iter().map(|&v| v as f32)),
    })
}

pub fn frame(session: &str, f: &Frame) -> String {
    message(
        "frame",
        json!({
            "session": session,
            "epoch": f.epoch,
            "step": f.step,
            "t": f.t,
            "n_cols": f.n_cols,
            "n_rows": f.n_rows,
            "depth": encode_f32(f.depth.iter().copied()),
            "particles": f.particles,
            "stats": f.stats,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(text: &str) -> ErrorCode {
        parse(text).unwrap_err().code
    }

    #[test]
    fn envelopes_map_to_requests() {
        let e = parse(r#"{"v":1,"type":"pause","seq":7}"#).unwrap();
        assert_eq!(e.seq, Some(7));
        assert_eq!(e.request, Request::Command(CommandPayload::Pause));
        let e = parse(r#"{"v":1,"type":"load_scenario","seq":2,"scenario_id":"plane"}"#).unwrap();
        assert_eq!(e.request, Request::Command(CommandPayload::SetScenario { scenario_id: "plane".into() }));
        let e = parse(r#"{"v":1,"type":"move_barrier","seq":3,"id":"b","center":[1,2,3],"yaw":0.5}"#).unwrap();
        assert_eq!(
            e.request,
            Request::Command(CommandPayload::MoveBarrier { id: "b".into(), center: [1.0, 2.0, 3.0], yaw: 0.5 })
        );
        let e = parse(r#"{"v":1,"type":"query_point","seq":9,"x":3.5,"y":4}"#).unwrap();
        assert_eq!(e.request, Request::QueryPoint { x: 3.5, y: 4.0 });
    }

    #[test]
    fn malformed_envelopes_are_classified() {
        assert_eq!(code("{nope"), ErrorCode::BadJson);
        assert_eq!(code("[1,2]"), ErrorCode::BadJson);
        assert_eq!(code(r#"{"type":"start","seq":1}"#), ErrorCode::BadJson);
        assert_eq!(code(r#"{"v":2,"type":"start","seq":1}"#), ErrorCode::UnsupportedVersion);
        assert_eq!(code(r#"{"v":1,"type":"warp","seq":1}"#), ErrorCode::UnknownType);
        assert_eq!(code(r#"{"v":1,"type":"move_barrier","seq":1,"id":"b"}"#), ErrorCode::BadPayload);
        assert_eq!(code(r#"{"v":1,"type":"query_point","seq":1,"x":"a","y":1}"#), ErrorCode::BadPayload);
        assert_eq!(code(r#"{"v":1,"type":"start","seq":-1}"#), ErrorCode::BadJson);
        let r = parse(r#"{"v":1,"type":"warp","seq":4}"#).unwrap_err();
        let v: Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["seq"], 4);
        assert_eq!(v["code"], "unknown_type");
        assert_eq!(v["type"], "error");
    }

    #[test]
    fn every_listed_type_parses_or_asks_for_payload() {
        for t in REQUEST_TYPES {
            let text = format!(r#"{{"v":1,"type":"{t}","seq":1}}"#);
            match parse(&text) {
                Ok(_) => {}
                Err(r) => assert_eq!(r.code, ErrorCode::BadPayload, "{t}"),
            }
        }
    }

    #[test]
    fn f32_rasters_round_trip() {
        let v = vec![0.0f32, 1.5, -2.25, f32::MAX];
        assert_eq!(decode_f32(&encode_f32(v.iter().copied())).unwrap(), v);
        assert!(decode_f32("AAA=").is_none());
    }
}
