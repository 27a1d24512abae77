use std::sync::Mutex;

use super::{ChatGateway, ChatRequest, GatewayError};

/// Forwards to an inner gateway and keeps every request it sees, in call order.
#[derive(Debug)]
pub struct CaptureGateway<G> {
    inner: G,
    requests: Mutex<Vec<ChatRequest>>,
}

impl<G: ChatGateway> CaptureGateway<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("capture lock").clone()
    }

    pub fn len(&self) -> usize {
        self.requests.lock().expect("capture lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.requests.lock().expect("capture lock").clear();
    }
}

impl<G: ChatGateway> ChatGateway for CaptureGateway<G> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.requests
            .lock()
            .expect("capture lock")
            .push(request.clone());
        self.inner.complete(request)
    }
}
