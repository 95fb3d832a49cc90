//! FIFO worker pool for solver jobs.

use std::thread::JoinHandle;

use crossbeam_channel::{unbounded, Sender};
use serde::{Deserialize, Serialize};
use tbss_core::solver::RunId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Pending,
    Running,
    Converged,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Converged | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Job {
    pub dataset: String,
    pub run: RunId,
}

/// Fixed set of threads draining one shared queue in submission order.
pub struct WorkerPool {
    sender: Option<Sender<Job>>,
    handles: Vec<JoinHandle<()>>,
}

impl WorkerPool {
    pub fn start<F>(workers: usize, handler: F) -> Self
    where
        F: Fn(Job) + Send + Sync + Clone + 'static,
    {
        let (sender, receiver) = unbounded::<Job>();
        let handles = (0..workers.max(1))
            .map(|i| {
                let rx = receiver.clone();
                let handle = handler.clone();
                std::thread::Builder::new()
                    .name(format!("tbss-worker-{i}"))
                    .spawn(move || {
                        while let Ok(job) = rx.recv() {
                            handle(job);
                        }
                    })
                    .expect("spawn worker thread")
            })
            .collect();
        WorkerPool { sender: Some(sender), handles }
    }

    pub fn workers(&self) -> usize {
        self.handles.len()
    }

    pub fn submit(&self, job: Job) {
        if let Some(tx) = &self.sender {
            // Receivers live as long as the pool, so sending cannot fail here.
            let _ = tx.send(job);
        }
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.sender.take();
        let current = std::thread::current().id();
        for h in self.handles.drain(..) {
            // The last owner may be a worker itself; it cannot join itself.
            if h.thread().id() != current {
                let _ = h.join();
            }
        }
    }
}
