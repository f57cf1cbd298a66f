//! JSON API consumed by the dashboard.
//!
//! `GET /grid`, `GET /report`, `GET /curves/{branch}`, `POST /whatif` and
//! `GET /jobs/{id}`. Every payload carries `schema_version`; errors have the
//! shape `{"schema_version": 1, "error": {"code", "message"}}`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dynscreen_core::dynamics::DynamicsEngine;
use dynscreen_core::overload::SafetyPolicy;
use dynscreen_core::BusKind;
use serde::Serialize;
use serde_json::{json, Value};

use crate::report::{RiskReport, REPORT_SCHEMA_VERSION};
use crate::whatif::{run_whatif, WhatIfRequest, WhatIfResponse};

pub const API_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ServiceLimits {
    /// Requests with at most this many samples are answered inline.
    pub sync_samples: usize,
    /// Queued or running jobs accepted before the service pushes back.
    pub max_jobs: usize,
}

impl Default for ServiceLimits {
    fn default() -> Self {
        Self { sync_samples: 256, max_jobs: 4 }
    }
}

#[derive(Debug, Clone)]
pub enum ReportState {
    Pending,
    Ready(Arc<RiskReport>),
    Failed(String),
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobStatus {
    Running,
    Done { result: Box<WhatIfResponse> },
    Failed { error: String },
}

pub struct AppState {
    pub engine: Arc<DynamicsEngine>,
    pub policy: SafetyPolicy,
    pub noise_scale: f64,
    pub seed: u64,
    pub limits: ServiceLimits,
    report: RwLock<ReportState>,
    jobs: Mutex<(u64, HashMap<u64, JobStatus>)>,
}

impl AppState {
    pub fn new(engine: Arc<DynamicsEngine>, policy: SafetyPolicy, noise_scale: f64, seed: u64) -> Self {
        Self {
            engine,
            policy,
            noise_scale,
            seed,
            limits: ServiceLimits::default(),
            report: RwLock::new(ReportState::Pending),
            jobs: Mutex::new((0, HashMap::new())),
        }
    }

    /// Atomically replaces the published report state.
    pub fn publish(&self, state: ReportState) {
        *self.report.write().expect("report lock") = state;
    }

    fn active_jobs(&self) -> usize {
        let jobs = self.jobs.lock().expect("job lock");
        jobs.1.values().filter(|j| matches!(j, JobStatus::Running)).count()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/grid", get(grid))
        .route("/report", get(report))
        .route("/curves/{branch}", get(curve))
        .route("/whatif", post(whatif))
        .route("/jobs/{id}", get(job))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    let body = json!({
        "schema_version": API_SCHEMA_VERSION,
        "error": { "code": code, "message": message.into() },
    });
    (status, Json(body)).into_response()
}

async fn grid(State(st): State<Arc<AppState>>) -> Json<Value> {
    let g = st.engine.grid();
    let monitored: std::collections::HashSet<usize> = g.monitored().iter().copied().collect();
    let buses: Vec<Value> = g
        .buses()
        .iter()
        .map(|b| {
            let kind = match b.kind {
                BusKind::Generator => "generator",
                BusKind::Condenser => "condenser",
                BusKind::Load => "load",
            };
            json!({ "id": b.id, "kind": kind, "p": b.injection, "m": b.inertia, "d": b.damping })
        })
        .collect();
    let branches: Vec<Value> = g
        .branches()
        .iter()
        .enumerate()
        .map(|(k, b)| {
            json!({
                "index": k, "from": b.from, "to": b.to, "beta": b.beta, "limit": b.limit,
                "transformer": b.transformer, "monitored": monitored.contains(&k),
            })
        })
        .collect();
    Json(json!({
        "schema_version": API_SCHEMA_VERSION,
        "bus_count": g.n_buses(),
        "branch_count": g.n_branches(),
        "reference": g.reference(),
        "buses": buses,
        "branches": branches,
    }))
}

async fn report(State(st): State<Arc<AppState>>) -> Response {
    let state = st.report.read().expect("report lock").clone();
    match state {
        ReportState::Ready(r) => Json(r.as_ref().clone()).into_response(),
        ReportState::Pending => (
            StatusCode::ACCEPTED,
            Json(json!({ "schema_version": REPORT_SCHEMA_VERSION, "status": "running" })),
        )
            .into_response(),
        ReportState::Failed(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "screening_failed", e),
    }
}

async fn curve(State(st): State<Arc<AppState>>, Path(branch): Path<String>) -> Response {
    let Ok(branch) = branch.parse::<usize>() else {
        return error(StatusCode::BAD_REQUEST, "bad_branch", format!("`{branch}` is not a branch index"));
    };
    let state = st.report.read().expect("report lock").clone();
    let ReportState::Ready(r) = state else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "report_unavailable", "no report has been published");
    };
    match r.curve(branch) {
        Some(c) => Json(json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "branch": c.branch,
            "tau": c.tau,
            "probability": c.probability,
            "overload_seconds": c.overload_seconds,
            "bands": { "warning": r.policy.warning_threshold, "emergency": r.policy.emergency_threshold },
            "threshold_seconds": r.policy.max_overload_seconds,
        }))
        .into_response(),
        None => error(StatusCode::NOT_FOUND, "unknown_branch", format!("branch {branch} is not monitored")),
    }
}

async fn whatif(State(st): State<Arc<AppState>>, body: Result<Json<WhatIfRequest>, JsonRejection>) -> Response {
    let request = match body {
        Ok(Json(r)) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "malformed_request", e.body_text()),
    };
    if let Err(e) = request.validate(st.engine.grid().n_branches()) {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", e.to_string());
    }
    if request.samples <= st.limits.sync_samples {
        let st2 = st.clone();
        let out = tokio::task::spawn_blocking(move || {
            run_whatif(&st2.engine, &st2.policy, st2.noise_scale, st2.seed, &request)
        })
        .await;
        return match out {
            Ok(Ok(r)) => Json(r).into_response(),
            Ok(Err(e)) => error(StatusCode::UNPROCESSABLE_ENTITY, "simulation_failed", e.to_string()),
            Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        };
    }
    if st.active_jobs() >= st.limits.max_jobs {
        let mut resp = error(StatusCode::TOO_MANY_REQUESTS, "busy", "too many what-if jobs in flight; retry later");
        resp.headers_mut().insert("retry-after", axum::http::HeaderValue::from_static("5"));
        return resp;
    }
    let id = {
        let mut jobs = st.jobs.lock().expect("job lock");
        jobs.0 += 1;
        let id = jobs.0;
        jobs.1.insert(id, JobStatus::Running);
        id
    };
    let st2 = st.clone();
    tokio::task::spawn_blocking(move || {
        let status = match run_whatif(&st2.engine, &st2.policy, st2.noise_scale, st2.seed, &request) {
            Ok(r) => JobStatus::Done { result: Box::new(r) },
            Err(e) => JobStatus::Failed { error: e.to_string() },
        };
        st2.jobs.lock().expect("job lock").1.insert(id, status);
    });
    (
        StatusCode::ACCEPTED,
        Json(json!({
            "schema_version": API_SCHEMA_VERSION,
            "job_id": id,
            "status": "running",
            "poll": format!("/jobs/{id}"),
        })),
    )
        .into_response()
}

async fn job(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Ok(id) = id.parse::<u64>() else {
        return error(StatusCode::BAD_REQUEST, "bad_job", format!("`{id}` is not a job id"));
    };
    let status = st.jobs.lock().expect("job lock").1.get(&id).cloned();
    match status {
        Some(s) => {
            let mut v = serde_json::to_value(&s).expect("job status serializes");
            v["schema_version"] = json!(API_SCHEMA_VERSION);
            v["job_id"] = json!(id);
            Json(v).into_response()
        }
        None => error(StatusCode::NOT_FOUND, "unknown_job", format!("no job {id}")),
    }
}
