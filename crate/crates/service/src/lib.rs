//! Single-turn tutoring service: instructor-set questions, moderated and
//! rate-limited submissions, precomputed workflow steps and stored traces.

pub mod http;
pub mod questions;
pub mod store;
pub mod tutor;

pub use http::{router, AppState};
pub use questions::{parse_question_source, PrecomputeStatus, QuestionEntry, SourceError};
pub use store::{DirStore, KvStore, MemoryStore, StoreError};
pub use tutor::{
    FeedbackRequest, FeedbackResponse, IngestReport, QuotaStatus, TraceRecord, Tutor, TutorError,
    TutorSettings,
};

/// Serve `state` on `addr` until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await
}
