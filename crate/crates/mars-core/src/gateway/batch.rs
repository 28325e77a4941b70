//! Client-side dynamic batching. [`dispatch_batched`] coalesces a request
//! list into size-capped batches with bounded in-flight dispatch;
//! [`Gateway`] runs a shared queue so concurrent workers' single prompts
//! coalesce across callers within a wait window. Responses always come back
//! in request order, and one bad request is retried solo instead of
//! poisoning its batch.

use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};

use super::{check_budget, GatewayError, GenParams, GenerationBackend};

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub max_batch_size: usize,
    /// How long the queue waits for co-travellers after the first request.
    /// Zero drains whatever is already queued and dispatches immediately.
    pub max_wait: Duration,
    pub max_in_flight: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            max_batch_size: 64,
            max_wait: Duration::from_millis(10),
            max_in_flight: 4,
        }
    }
}

impl BatchConfig {
    /// No waiting, useful for tests and single-caller pipelines.
    pub fn immediate() -> Self {
        BatchConfig {
            max_wait: Duration::ZERO,
            ..Default::default()
        }
    }
}

fn run_batch(
    prompts: &[String],
    params: &GenParams,
    backend: &dyn GenerationBackend,
) -> Vec<Result<String, GatewayError>> {
    match backend.generate(prompts, params) {
        Ok(outputs) if outputs.len() == prompts.len() => outputs.into_iter().map(Ok).collect(),
        Ok(outputs) => {
            let err = GatewayError::Content(format!(
                "backend returned {} outputs for {} prompts",
                outputs.len(),
                prompts.len()
            ));
            prompts.iter().map(|_| Err(err.clone())).collect()
        }
        Err(GatewayError::Transport(_)) if prompts.len() >= 1 => {
            // Isolate the failure: each request gets one solo retry.
            prompts
                .iter()
                .map(|p| {
                    backend
                        .generate(std::slice::from_ref(p), params)
                        .and_then(|mut out| {
                            if out.len() == 1 {
                                Ok(out.remove(0))
                            } else {
                                Err(GatewayError::Content(
                                    "backend returned a non-singleton for one prompt".into(),
                                ))
                            }
                        })
                })
                .collect()
        }
        Err(err) => prompts.iter().map(|_| Err(err.clone())).collect(),
    }
}

/// Dispatch a request list through size-capped batches. Responses are
/// returned in request order; failures are isolated per request with one
/// solo retry on transport errors.
pub fn dispatch_batched(
    requests: &[String],
    params: &GenParams,
    backend: &dyn GenerationBackend,
    config: &BatchConfig,
) -> Result<Vec<String>, GatewayError> {
    params.validate()?;
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    check_budget(requests, backend.max_context_tokens())?;

    let batch_size = config.max_batch_size.max(1);
    let in_flight = if backend.descriptor().single_flight {
        1
    } else {
        config.max_in_flight.max(1)
    };

    let chunks: Vec<&[String]> = requests.chunks(batch_size).collect();
    let mut chunk_results: Vec<Vec<Result<String, GatewayError>>> = Vec::with_capacity(chunks.len());
    for wave in chunks.chunks(in_flight) {
        let wave_results = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|chunk| scope.spawn(move || run_batch(chunk, params, backend)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("batch worker panicked"))
                .collect::<Vec<_>>()
        });
        chunk_results.extend(wave_results);
    }

    let mut out = Vec::with_capacity(requests.len());
    for result in chunk_results.into_iter().flatten() {
        out.push(result?);
    }
    Ok(out)
}

struct QueuedRequest {
    prompt: String,
    respond: Sender<Result<String, GatewayError>>,
}

/// Shared batching front for a backend. Many workers may call
/// [`Gateway::generate_one`] concurrently; their prompts coalesce in a
/// single queue and dispatch as batches on a bounded worker pool.
pub struct Gateway {
    submit: Option<Sender<QueuedRequest>>,
    collector: Option<JoinHandle<()>>,
    workers: Vec<JoinHandle<()>>,
    context_limit: usize,
}

impl Gateway {
    pub fn new(backend: Arc<dyn GenerationBackend>, config: BatchConfig, params: GenParams) -> Self {
        let context_limit = backend.max_context_tokens();
        let (submit_tx, submit_rx) = unbounded::<QueuedRequest>();
        let (work_tx, work_rx) = unbounded::<Vec<QueuedRequest>>();

        let worker_count = if backend.descriptor().single_flight {
            1
        } else {
            config.max_in_flight.max(1)
        };
        let mut workers = Vec::with_capacity(worker_count);
        for _ in 0..worker_count {
            let rx: Receiver<Vec<QueuedRequest>> = work_rx.clone();
            let backend = Arc::clone(&backend);
            let params = params.clone();
            workers.push(std::thread::spawn(move || {
                while let Ok(batch) = rx.recv() {
                    let prompts: Vec<String> =
                        batch.iter().map(|r| r.prompt.clone()).collect();
                    let results = run_batch(&prompts, &params, backend.as_ref());
                    for (req, result) in batch.into_iter().zip(results) {
                        let _ = req.respond.send(result);
                    }
                }
            }));
        }
        drop(work_rx);

        let max_batch = config.max_batch_size.max(1);
        let max_wait = config.max_wait;
        let collector = std::thread::spawn(move || {
            while let Ok(first) = submit_rx.recv() {
                let mut batch = vec![first];
                if max_wait.is_zero() {
                    while batch.len() < max_batch {
                        match submit_rx.try_recv() {
                            Ok(req) => batch.push(req),
                            Err(_) => break,
                        }
                    }
                } else {
                    let deadline = Instant::now() + max_wait;
                    while batch.len() < max_batch {
                        let now = Instant::now();
                        if now >= deadline {
                            break;
                        }
                        match submit_rx.recv_timeout(deadline - now) {
                            Ok(req) => batch.push(req),
                            Err(RecvTimeoutError::Timeout) => break,
                            Err(RecvTimeoutError::Disconnected) => break,
                        }
                    }
                }
                if work_tx.send(batch).is_err() {
                    break;
                }
            }
        });

        Gateway {
            submit: Some(submit_tx),
            collector: Some(collector),
            workers,
            context_limit,
        }
    }

    /// Convenience constructor with immediate (zero-wait) batching.
    pub fn direct(backend: Arc<dyn GenerationBackend>) -> Self {
        Gateway::new(backend, BatchConfig::immediate(), GenParams::default())
    }

    pub fn context_limit(&self) -> usize {
        self.context_limit
    }

    /// Submit one prompt and wait for its response.
    pub fn generate_one(&self, prompt: String) -> Result<String, GatewayError> {
        check_budget(std::slice::from_ref(&prompt), self.context_limit)?;
        let submit = self
            .submit
            .as_ref()
            .ok_or_else(|| GatewayError::Transport("gateway is shut down".into()))?;
        let (tx, rx) = bounded(1);
        submit
            .send(QueuedRequest {
                prompt,
                respond: tx,
            })
            .map_err(|_| GatewayError::Transport("gateway queue closed".into()))?;
        rx.recv()
            .map_err(|_| GatewayError::Transport("gateway dropped the request".into()))?
    }

    /// Submit several prompts at once; they may coalesce into one batch.
    /// Responses align with the input order.
    pub fn generate_many(&self, prompts: Vec<String>) -> Result<Vec<String>, GatewayError> {
        check_budget(&prompts, self.context_limit)?;
        let submit = self
            .submit
            .as_ref()
            .ok_or_else(|| GatewayError::Transport("gateway is shut down".into()))?;
        let mut receivers = Vec::with_capacity(prompts.len());
        for prompt in prompts {
            let (tx, rx) = bounded(1);
            submit
                .send(QueuedRequest {
                    prompt,
                    respond: tx,
                })
                .map_err(|_| GatewayError::Transport("gateway queue closed".into()))?;
            receivers.push(rx);
        }
        receivers
            .into_iter()
            .map(|rx| {
                rx.recv()
                    .map_err(|_| GatewayError::Transport("gateway dropped the request".into()))?
            })
            .collect()
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.submit.take();
        if let Some(collector) = self.collector.take() {
            let _ = collector.join();
        }
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU64, Ordering};

    /// Echoes each prompt back, counting generate invocations.
    struct EchoBackend {
        calls: AtomicU64,
        limit: usize,
    }

    impl EchoBackend {
        fn new() -> Self {
            EchoBackend {
                calls: AtomicU64::new(0),
                limit: 4096,
            }
        }

        fn calls(&self) -> u64 {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl GenerationBackend for EchoBackend {
        fn generate(
            &self,
            prompts: &[String],
            _params: &GenParams,
        ) -> Result<Vec<String>, GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(prompts.iter().map(|p| format!("echo:{p}")).collect())
        }

        fn max_context_tokens(&self) -> usize {
            self.limit
        }
    }

    /// Fails whole batches on a transport error but succeeds solo.
    struct FlakyBatchBackend {
        calls: AtomicU64,
    }

    impl GenerationBackend for FlakyBatchBackend {
        fn generate(
            &self,
            prompts: &[String],
            _params: &GenParams,
        ) -> Result<Vec<String>, GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if prompts.len() > 1 {
                return Err(GatewayError::Transport("batch too spicy".into()));
            }
            Ok(prompts.iter().map(|p| format!("solo:{p}")).collect())
        }

        fn max_context_tokens(&self) -> usize {
            4096
        }
    }

    fn prompts(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn six_hundred_requests_make_ten_calls_at_batch_64() {
        let backend = EchoBackend::new();
        let cfg = BatchConfig {
            max_batch_size: 64,
            max_in_flight: 4,
            max_wait: Duration::ZERO,
        };
        let reqs = prompts(600);
        let out = dispatch_batched(&reqs, &GenParams::default(), &backend, &cfg).unwrap();
        assert_eq!(out.len(), 600);
        assert_eq!(backend.calls(), 10);
    }

    #[test]
    fn single_request_single_call_order_preserved() {
        let backend = EchoBackend::new();
        let out = dispatch_batched(
            &prompts(1),
            &GenParams::default(),
            &backend,
            &BatchConfig::default(),
        )
        .unwrap();
        assert_eq!(out, vec!["echo:p0"]);
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn empty_request_list_makes_no_calls() {
        let backend = EchoBackend::new();
        let out = dispatch_batched(
            &[],
            &GenParams::default(),
            &backend,
            &BatchConfig::default(),
        )
        .unwrap();
        assert!(out.is_empty());
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn responses_align_with_requests_for_any_batch_size() {
        let reqs = prompts(153);
        let serial: Vec<String> = reqs.iter().map(|p| format!("echo:{p}")).collect();
        for batch_size in [1usize, 2, 7, 64] {
            let backend = EchoBackend::new();
            let cfg = BatchConfig {
                max_batch_size: batch_size,
                max_in_flight: 3,
                max_wait: Duration::ZERO,
            };
            let out = dispatch_batched(&reqs, &GenParams::default(), &backend, &cfg).unwrap();
            assert_eq!(out, serial, "batch size {batch_size}");
        }
    }

    #[test]
    fn oversize_prompt_is_rejected_before_dispatch() {
        let backend = EchoBackend::new();
        let huge = vec!["word ".repeat(5000).trim().to_string()];
        let err = dispatch_batched(
            &huge,
            &GenParams::default(),
            &backend,
            &BatchConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GatewayError::OversizePrompt { .. }));
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn failing_batch_is_retried_solo_per_request() {
        let backend = FlakyBatchBackend {
            calls: AtomicU64::new(0),
        };
        let reqs = prompts(10);
        let cfg = BatchConfig {
            max_batch_size: 4,
            max_in_flight: 1,
            max_wait: Duration::ZERO,
        };
        let out = dispatch_batched(&reqs, &GenParams::default(), &backend, &cfg).unwrap();
        assert_eq!(out[0], "solo:p0");
        assert_eq!(out.len(), 10);
        // 3 failed batch attempts + 10 solo retries.
        assert_eq!(backend.calls.load(Ordering::SeqCst), 13);
    }

    #[test]
    fn gateway_coalesces_concurrent_callers() {
        let backend = Arc::new(EchoBackend::new());
        let gateway = Gateway::new(
            Arc::clone(&backend) as Arc<dyn GenerationBackend>,
            BatchConfig {
                max_batch_size: 64,
                max_wait: Duration::from_millis(100),
                max_in_flight: 2,
            },
            GenParams::default(),
        );
        std::thread::scope(|scope| {
            for i in 0..8 {
                let gateway = &gateway;
                scope.spawn(move || {
                    let out = gateway.generate_one(format!("p{i}")).unwrap();
                    assert_eq!(out, format!("echo:p{i}"));
                });
            }
        });
        assert!(backend.calls() < 8, "expected coalescing, got {} calls", backend.calls());
    }

    #[test]
    fn gateway_generate_many_preserves_order() {
        let backend = Arc::new(EchoBackend::new());
        let gateway = Gateway::direct(Arc::clone(&backend) as Arc<dyn GenerationBackend>);
        let out = gateway.generate_many(prompts(20)).unwrap();
        let expected: Vec<String> = prompts(20).iter().map(|p| format!("echo:{p}")).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn gateway_rejects_oversize_prompts() {
        let backend = Arc::new(EchoBackend::new());
        let gateway = Gateway::direct(backend as Arc<dyn GenerationBackend>);
        let huge = "word ".repeat(5000).trim().to_string();
        assert!(matches!(
            gateway.generate_one(huge),
            Err(GatewayError::OversizePrompt { .. })
        ));
    }
}
