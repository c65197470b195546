//! Blocking HTTP client for a generation worker.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, ErrorBody, REQUEST_ID_HEADER};
use super::{
    check_response_dims, BackendError, GenResponse, GenerationBackend, Health, Img2ImgRequest,
    InpaintRequest,
};
use crate::visual_prior::{PriorSource, VisualPrior};

const MAX_BODY_BYTES: u64 = 512 << 20;

/// Transport failures and 429/503 are retried with exponential backoff;
/// any other non-2xx status is final.
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
    max_retries: u32,
    backoff_base: Duration,
    next_id: AtomicU64,
}

impl HttpBackend {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(Duration::from_secs(10)))
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .new_agent();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn with_retry(mut self, max_retries: u32, backoff_base: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff_base = backoff_base;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn with_retries<T>(&self, mut call: impl FnMut(&str) -> Result<T, BackendError>) -> Result<T, BackendError> {
        let id = format!("req-{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let mut attempt = 0;
        loop {
            match call(&id) {
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    let delay = self.backoff_base * 2u32.pow(attempt);
                    log::warn!("{id}: {e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn finish<T: DeserializeOwned>(
        &self,
        id: &str,
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, BackendError> {
        let mut resp = result.map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if status == 429 || status == 503 {
            return Err(BackendError::Transport(format!("worker busy (HTTP {status})")));
        }
        if !(200..300).contains(&status) {
            let message = serde_json::from_str::<ErrorBody>(&body)
                .map(|b| b.error)
                .unwrap_or(body);
            return Err(BackendError::Protocol {
                status: Some(status),
                message,
            });
        }
        if let Some(echo) = resp.headers().get(REQUEST_ID_HEADER) {
            if echo.to_str().ok() != Some(id) {
                return Err(BackendError::protocol(format!(
                    "response correlation id {echo:?} does not match {id}"
                )));
            }
        }
        serde_json::from_str(&body)
            .map_err(|e| BackendError::protocol(format!("malformed response body: {e}")))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, route: &str, body: &B) -> Result<T, BackendError> {
        let url = format!("{}{route}", self.base_url);
        let payload = serde_json::to_string(body).expect("request bodies always serialize");
        self.with_retries(|id| {
            let result = self
                .agent
                .post(&url)
                .header(REQUEST_ID_HEADER, id)
                .content_type("application/json")
                .send(payload.as_str());
            self.finish(id, result)
        })
    }

    fn get<T: DeserializeOwned>(&self, route: &str) -> Result<T, BackendError> {
        let url = format!("{}{route}", self.base_url);
        self.with_retries(|id| {
            let result = self.agent.get(&url).header(REQUEST_ID_HEADER, id).call();
            self.finish(id, result)
        })
    }
}

impl GenerationBackend for HttpBackend {
    fn health(&self) -> Result<Health, BackendError> {
        self.get("/healthz")
    }

    fn img2img(&self, req: &Img2ImgRequest) -> Result<GenResponse, BackendError> {
        let body: wire::GenBody = self.post("/v1/img2img", &req.to_wire())?;
        let resp = GenResponse::from_wire(&body)?;
        check_response_dims(&resp, req.width, req.height)?;
        Ok(resp)
    }

    fn inpaint(&self, req: &InpaintRequest) -> Result<GenResponse, BackendError> {
        let body: wire::GenBody = self.post("/v1/inpaint", &req.to_wire())?;
        let resp = GenResponse::from_wire(&body)?;
        check_response_dims(&resp, req.base.width, req.base.height)?;
        Ok(resp)
    }

    fn caption(&self, image: &RgbImage, class_names: &[String]) -> Result<String, BackendError> {
        let body = wire::CaptionRequestBody {
            image: wire::encode_rgb(image),
            class_names: class_names.to_vec(),
        };
        let resp: wire::CaptionResponseBody = self.post("/v1/caption", &body)?;
        if resp.caption.trim().is_empty() {
            return Err(BackendError::protocol("empty caption"));
        }
        Ok(resp.caption)
    }

    fn prior(&self, image: &RgbImage) -> Result<VisualPrior, BackendError> {
        let body = wire::PriorRequestBody {
            image: wire::encode_rgb(image),
            kind: "lineart".into(),
        };
        let resp: wire::PriorResponseBody = self.post("/v1/prior", &body)?;
        wire::decode_prior("prior", &resp.prior, PriorSource::Image)
    }
}
