use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use async_trait::async_trait;

use super::{Provider, ProviderError, ProviderRequest, ProviderResponse, SharedProvider};

/// Wraps a backend so that its i-th response is delayed by `delays[i]`
/// seconds. Calls past the end of the vector are not delayed.
pub struct InjectedLatency {
    inner: SharedProvider,
    delays: Vec<f64>,
    calls: AtomicUsize,
}

pub fn with_injected_latency(inner: SharedProvider, delays: Vec<f64>) -> Result<InjectedLatency, ProviderError> {
    if delays.is_empty() {
        return Err(ProviderError::Config("injected delay vector is empty".into()));
    }
    if let Some(bad) = delays.iter().find(|d| !d.is_finite() || **d < 0.0) {
        return Err(ProviderError::Config(format!("invalid injected delay {bad}")));
    }
    Ok(InjectedLatency {
        inner,
        delays,
        calls: AtomicUsize::new(0),
    })
}

impl InjectedLatency {
    pub fn delays(&self) -> &[f64] {
        &self.delays
    }
}

#[async_trait]
impl Provider for InjectedLatency {
    fn tag(&self) -> String {
        self.inner.tag()
    }

    async fn generate(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let start = Instant::now();
        let i = self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(delay) = self.delays.get(i) {
            tokio::time::sleep(Duration::from_secs_f64(*delay)).await;
        }
        let mut response = self.inner.generate(request).await?;
        response.latency_seconds = start.elapsed().as_secs_f64();
        Ok(response)
    }
}
