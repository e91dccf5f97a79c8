//! HTTP service for trust-elicitation sessions and checklist answers.
//!
//! Responses never contain labels, correctness or trust metrics. Session
//! state lives in the per-session logs, so a restarted server resumes where
//! the previous one stopped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;
use xaihealth_core::altai::{evaluate_checklist, items_for_phase, AltaiItem, AnswerEntry, Verdict};
use xaihealth_core::pipeline::{now_ms, PipelineError, Study, StudyContext, StudyPaths};
use xaihealth_core::trust::{SessionStatus, SessionStore, TrustError, TrustSession};
use xaihealth_core::{Phase, StudyState, TrustJudgment};

use crate::view::{render_case, CaseView};

const INDEX_HTML: &str = include_str!("../assets/index.html");

pub struct AppState {
    study_dir: PathBuf,
    study_id: String,
    ctx: StudyContext,
    /// Serializes every write to the study directory.
    writer: Mutex<()>,
}

impl AppState {
    pub fn load(study_dir: &Path) -> Result<Self, PipelineError> {
        let study = Study::open(study_dir)?;
        let ctx = study.context()?;
        Ok(Self {
            study_dir: study_dir.to_path_buf(),
            study_id: study.state().study_id.clone(),
            ctx,
            writer: Mutex::new(()),
        })
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn internal(message: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code,
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<TrustError> for ApiError {
    fn from(e: TrustError) -> Self {
        let message = e.to_string();
        match e {
            TrustError::UnknownSession(_) => Self::new(StatusCode::NOT_FOUND, "unknown_session", message),
            TrustError::UnknownCase(_) => Self::new(StatusCode::NOT_FOUND, "unknown_case", message),
            TrustError::DuplicateJudgment { .. } => Self::new(StatusCode::CONFLICT, "duplicate_judgment", message),
            TrustError::SessionComplete => Self::new(StatusCode::CONFLICT, "session_complete", message),
            _ => Self::internal(message),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        match e {
            PipelineError::PhaseOutOfOrder { .. } => Self::new(StatusCode::CONFLICT, "wrong_phase", message),
            PipelineError::Altai(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_answers", message),
            PipelineError::Trust(t) => t.into(),
            _ => Self::internal(message),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking study I/O off the async executor.
async fn blocking<T: Send + 'static>(
    state: &Arc<AppState>,
    f: impl FnOnce(&AppState) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    let state = Arc::clone(state);
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(ApiError::internal)?
}

fn sessions(state: &AppState) -> SessionStore {
    SessionStore::new(StudyPaths::new(&state.study_dir).sessions)
}

fn load_session(state: &AppState, session_id: &str) -> ApiResult<TrustSession> {
    Ok(sessions(state).load(session_id)?)
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub user_id: String,
    pub study_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub num_cases: usize,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionCreated>)> {
    if req.study_id != state.study_id {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_study",
            format!("unknown study {}", req.study_id),
        ));
    }
    if req.user_id.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_request",
            "user_id is empty",
        ));
    }
    let created = blocking(&state, move |s| {
        let _w = s.writer.lock().map_err(ApiError::internal)?;
        let mut study = Study::open(&s.study_dir)?;
        let session = study.create_session(&s.ctx, &req.user_id)?;
        Ok(SessionCreated {
            session_id: session.session_id,
            num_cases: session.cases.len(),
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub keep_fraction: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NextCase {
    Case { done: bool, case: CaseView },
    Done { done: bool, judged: usize, total: usize },
}

async fn next_case(
    State(state): State<Arc<AppState>>,
    UrlPath(session_id): UrlPath<String>,
    Query(query): Query<NextQuery>,
) -> ApiResult<Json<NextCase>> {
    if let Some(f) = query.keep_fraction {
        if !(f > 0.0 && f <= 1.0) {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "invalid_request",
                format!("keep_fraction must be in (0, 1], got {f}"),
            ));
        }
    }
    let next = blocking(&state, move |s| {
        let _w = s.writer.lock().map_err(ApiError::internal)?;
        let mut session = load_session(s, &session_id)?;
        let Some(case_id) = session.current_case().map(str::to_string) else {
            return Ok(NextCase::Done {
                done: true,
                judged: session.judged(),
                total: session.cases.len(),
            });
        };
        if let Some(f) = query.keep_fraction.filter(|f| *f != session.keep_fraction) {
            sessions(s).record_view(&mut session, f, Some(case_id.clone()), now_ms())?;
        }
        let instance = s
            .ctx
            .dataset
            .get(&case_id)
            .ok_or_else(|| ApiError::internal(format!("case {case_id} missing from dataset")))?;
        let view = render_case(
            &s.ctx,
            instance,
            session.judged() + 1,
            session.cases.len(),
            session.keep_fraction,
        )
        .map_err(ApiError::internal)?;
        Ok(NextCase::Case {
            done: false,
            case: view,
        })
    })
    .await?;
    Ok(Json(next))
}

#[derive(Debug, Deserialize)]
pub struct SubmitJudgment {
    pub case_id: String,
    pub trusted: bool,
    /// Overlay threshold active when the judgment was made; logged as view state.
    #[serde(default)]
    pub keep_fraction: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionStatusBody {
    pub session_id: String,
    pub user_id: String,
    pub status: SessionStatus,
    pub judged: usize,
    pub total: usize,
    pub keep_fraction: f64,
}

impl SessionStatusBody {
    fn of(s: &TrustSession) -> Self {
        Self {
            session_id: s.session_id.clone(),
            user_id: s.user_id.clone(),
            status: s.status,
            judged: s.judged(),
            total: s.cases.len(),
            keep_fraction: s.keep_fraction,
        }
    }
}

async fn submit_judgment(
    State(state): State<Arc<AppState>>,
    UrlPath(session_id): UrlPath<String>,
    Json(req): Json<SubmitJudgment>,
) -> ApiResult<Json<SessionStatusBody>> {
    let body = blocking(&state, move |s| {
        let _w = s.writer.lock().map_err(ApiError::internal)?;
        let mut session = load_session(s, &session_id)?;
        if !session.cases.contains(&req.case_id) {
            return Err(TrustError::UnknownCase(req.case_id).into());
        }
        if session.is_judged(&req.case_id) {
            return Err(TrustError::DuplicateJudgment {
                user_id: session.user_id.clone(),
                case_id: req.case_id,
            }
            .into());
        }
        if session.current_case() != Some(req.case_id.as_str()) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "not_current_case",
                format!("case {} is not the session's current case", req.case_id),
            ));
        }
        let store = sessions(s);
        let ts = now_ms();
        if let Some(f) = req
            .keep_fraction
            .filter(|f| *f > 0.0 && *f <= 1.0 && *f != session.keep_fraction)
        {
            store.record_view(&mut session, f, Some(req.case_id.clone()), ts)?;
        }
        let judgment = TrustJudgment {
            case_id: req.case_id,
            user_id: session.user_id.clone(),
            trusted: req.trusted,
            timestamp_ms: ts,
        };
        store.record_judgment(&mut session, judgment)?;
        Ok(SessionStatusBody::of(&session))
    })
    .await?;
    Ok(Json(body))
}

async fn session_status(
    State(state): State<Arc<AppState>>,
    UrlPath(session_id): UrlPath<String>,
) -> ApiResult<Json<SessionStatusBody>> {
    let body = blocking(&state, move |s| {
        Ok(SessionStatusBody::of(&load_session(s, &session_id)?))
    })
    .await?;
    Ok(Json(body))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AltaiForm {
    pub phase: Phase,
    pub requirements: Vec<usize>,
    pub items: Vec<AltaiItem>,
    pub verdict: Verdict,
}

fn altai_form(s: &AppState, state: &StudyState, phase: Phase) -> ApiResult<AltaiForm> {
    let items = items_for_phase(phase, &s.ctx.bank, &state.altai_answers).map_err(PipelineError::from)?;
    Ok(AltaiForm {
        phase,
        requirements: xaihealth_core::altai::requirements_for(phase)
            .iter()
            .map(|r| r.number())
            .collect(),
        verdict: evaluate_checklist(&items),
        items,
    })
}

async fn altai_items(
    State(state): State<Arc<AppState>>,
    UrlPath(phase): UrlPath<String>,
) -> ApiResult<Json<AltaiForm>> {
    let phase: Phase = phase
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::NOT_FOUND, "unknown_phase", e))?;
    let form = blocking(&state, move |s| altai_form(s, &Study::read_state(&s.study_dir)?, phase)).await?;
    Ok(Json(form))
}

#[derive(Debug, Deserialize)]
pub struct SubmitAnswers {
    pub answers: Vec<AnswerEntry>,
    #[serde(default)]
    pub actor: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswersRecorded {
    pub recorded: usize,
    pub verdicts: BTreeMap<Phase, Verdict>,
}

async fn submit_answers(
    State(state): State<Arc<AppState>>,
    Json(req): Json<SubmitAnswers>,
) -> ApiResult<Json<AnswersRecorded>> {
    let body = blocking(&state, move |s| {
        let _w = s.writer.lock().map_err(ApiError::internal)?;
        let mut study = Study::open(&s.study_dir)?;
        let recorded = req.answers.len();
        let actor = req.actor.unwrap_or_else(|| "api".into());
        study.record_answers(&s.ctx, &actor, req.answers)?;
        let verdicts = Phase::ALL
            .iter()
            .map(|&p| Ok((p, altai_form(s, study.state(), p)?.verdict)))
            .collect::<ApiResult<_>>()?;
        Ok(AnswersRecorded { recorded, verdicts })
    })
    .await?;
    Ok(Json(body))
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

/// All API routes; static assets come from `ui_dir` when given, otherwise a
/// built-in placeholder page is served at `/`.
pub fn router(state: Arc<AppState>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/next", get(next_case))
        .route("/api/sessions/{id}/judgments", post(submit_judgment))
        .route("/api/sessions/{id}/status", get(session_status))
        .route("/api/altai/{phase}", get(altai_items))
        .route("/api/altai/answers", post(submit_answers))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}

pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    ui_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    axum::serve(listener, router(state, ui_dir.as_deref())).await
}
