//! Routes: `/session/{id}` (WebSocket), `/scenarios`, `/layers/{id}`, `/events`.

use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use debris_core::scenario::{filter_events_by_year, LandslideEvent};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::mpsc;

use crate::hub::{Hub, Input};
use crate::layers::{layers_json, scenario_layers};
use crate::protocol::{self, ErrorCode};

#[derive(Clone)]
pub struct AppState {
    pub hub: Arc<Hub>,
    pub events: Arc<Vec<LandslideEvent>>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session/{id}", get(ws_session))
        .route("/scenarios", get(scenarios))
        .route("/layers/{id}", get(layers))
        .route("/events", get(events))
        .with_state(state)
}

async fn scenarios(State(app): State<AppState>) -> Json<serde_json::Value> {
    let list: Vec<_> = app
        .hub
        .config
        .catalog
        .iter()
        .map(|s| {
            let g = s.terrain.geometry;
            json!({
                "id": s.id,
                "n_cols": g.n_cols,
                "n_rows": g.n_rows,
                "cell_size": g.cell_size,
                "origin_x": g.origin_x,
                "origin_y": g.origin_y,
                "release_volume_m3": s.release.volume_m3,
                "buildings": s.buildings.len(),
                "duration": s.params.duration,
                "dt": s.params.dt,
                "rainfall": s.rainfall.is_some(),
                "default": s.id == app.hub.config.default_scenario,
            })
        })
        .collect();
    Json(json!(list))
}

/// A live session's layers (including run results), else a scenario's static layers.
async fn layers(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    if let Some(h) = app.hub.existing(&id) {
        if let Some((scenario, layers)) = h.layers().await {
            return Json(layers_json(&scenario, &layers)).into_response();
        }
    }
    match app.hub.config.catalog.get(&id) {
        Some(s) => match scenario_layers(&s) {
            Ok(l) => Json(layers_json(&s.id, &l)).into_response(),
            Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
        },
        None => (StatusCode::NOT_FOUND, format!("no session or scenario `{id}`")).into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct YearRange {
    from: Option<i32>,
    to: Option<i32>,
}

async fn events(State(app): State<AppState>, Query(q): Query<YearRange>) -> Response {
    match filter_events_by_year(&app.events, q.from.unwrap_or(i32::MIN), q.to.unwrap_or(i32::MAX)) {
        Ok(list) => Json(json!(list)).into_response(),
        Err(e) => (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    }
}

async fn ws_session(ws: WebSocketUpgrade, State(app): State<AppState>, Path(id): Path<String>) -> Response {
    match app.hub.session(&id) {
        Ok(handle) => ws.on_upgrade(move |socket| connection(socket, app.hub, handle)).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn connection(socket: WebSocket, hub: Arc<Hub>, handle: crate::hub::SessionHandle) {
    let conn = hub.connection_id();
    let (mut sink, mut stream) = socket.split();
    let (out, mut outbox) = mpsc::unbounded_channel::<String>();
    let mut frames = handle.frames();
    let mut status = handle.status();
    // the newest frame already published is not replayed to a late joiner
    frames.mark_unchanged();
    let mut last: Option<(u64, f64)> = None;

    let hello = protocol::message("hello", json!({ "session": handle.id, "connection": conn }));
    if sink.send(Message::Text(hello.into())).await.is_err() {
        return;
    }
    let current = status.borrow_and_update().clone();
    if sink.send(Message::Text(current.as_ref().into())).await.is_err() {
        return;
    }

    loop {
        let text: Arc<str> = tokio::select! {
            biased;
            Some(msg) = outbox.recv() => Arc::from(msg),
            msg = stream.next() => match msg {
                Some(Ok(Message::Text(t))) => {
                    match protocol::parse(t.as_str()) {
                        Ok(env) => handle.send(Input::Request { conn, seq: env.seq, request: env.request, out: out.clone() }),
                        Err(r) => { let _ = out.send(r.to_json()); }
                    }
                    continue;
                }
                Some(Ok(Message::Binary(_))) => {
                    let _ = out.send(protocol::error(ErrorCode::BadJson, None, "binary messages are not accepted"));
                    continue;
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => continue,
            },
            changed = status.changed() => {
                if changed.is_err() { break; }
                status.borrow_and_update().clone()
            }
            changed = frames.changed() => {
                if changed.is_err() { break; }
                let Some(p) = frames.borrow_and_update().clone() else { continue };
                // per-subscriber ordering by (epoch, t)
                if last.is_some_and(|(e, t)| (p.epoch, p.t) <= (e, t)) {
                    continue;
                }
                last = Some((p.epoch, p.t));
                p.text
            }
        };
        if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
            break;
        }
    }
    handle.send(Input::Disconnect { conn });
}
