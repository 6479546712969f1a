//! Threaded sweep execution over a result store.
//!
//! Workers pull point indices from a shared counter and send finished records
//! down a channel; the calling thread is the only writer to the store.

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use responder_core::sweep::{run_point, ConfigPoint, RunRecord, RunStatus, SweepGrid, SweepInputs};
use serde::{Deserialize, Serialize};

use crate::bundle::Bundle;
use crate::error::{validation, Result};
use crate::manifest::RunManifest;
use crate::store::ResultStore;

pub const THREADS_ENV: &str = "RESPONDER_BENCH_THREADS";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub grid_points: usize,
    /// Points already in the store before this call.
    pub skipped: usize,
    pub ran: usize,
    pub done: usize,
    pub diverged: usize,
    pub failed: usize,
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    pub workers: usize,
    /// Stop after this many new runs; the rest stay pending for a later resume.
    pub limit: Option<usize>,
}

impl SweepOptions {
    pub fn new(workers: usize) -> Self {
        Self { workers, limit: None }
    }
}

/// Requested workers capped by `RESPONDER_BENCH_THREADS` when it is set.
pub fn effective_workers(requested: usize) -> Result<usize> {
    if requested == 0 {
        return Err(validation!("workers must be at least 1"));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let cap: usize =
                v.trim().parse().ok().filter(|&c| c > 0).ok_or_else(|| validation!("{THREADS_ENV}={v} is not a positive integer"))?;
            Ok(requested.min(cap))
        }
        Err(_) => Ok(requested),
    }
}

/// Points of the grid not yet in the store, in grid order.
pub fn pending(grid: &SweepGrid, store: &ResultStore) -> Result<Vec<ConfigPoint>> {
    if grid.is_empty() {
        return Ok(Vec::new());
    }
    Ok(grid.enumerate()?.into_iter().filter(|p| !store.contains(&p.hash_hex())).collect())
}

pub fn run_sweep(grid: &SweepGrid, inputs: &SweepInputs<'_>, options: SweepOptions, store: &mut ResultStore) -> Result<SweepSummary> {
    run_sweep_with(grid, inputs, options, store, |_, _| {})
}

/// Runs every pending point. `on_record` sees each record after it is stored,
/// with the count stored so far in this call.
pub fn run_sweep_with(
    grid: &SweepGrid,
    inputs: &SweepInputs<'_>,
    options: SweepOptions,
    store: &mut ResultStore,
    mut on_record: impl FnMut(usize, &RunRecord),
) -> Result<SweepSummary> {
    let workers = effective_workers(options.workers)?;
    let mut todo = pending(grid, store)?;
    let mut summary = SweepSummary { grid_points: grid.len(), workers, ..Default::default() };
    summary.skipped = summary.grid_points - todo.len();
    if let Some(limit) = options.limit {
        todo.truncate(limit);
    }
    if todo.is_empty() {
        return Ok(summary);
    }
    let workers = workers.min(todo.len());
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<RunRecord>();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (todo, next, stop) = (&todo, &next, &stop);
            scope.spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(point) = todo.get(i) else { break };
                    let start = Instant::now();
                    let mut record = run_point(point, inputs);
                    record.wall_time_s = start.elapsed().as_secs_f64();
                    if tx.send(record).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        for record in rx {
            match record.status {
                RunStatus::Done => summary.done += 1,
                RunStatus::Diverged => summary.diverged += 1,
                RunStatus::Failed => summary.failed += 1,
            }
            summary.ran += 1;
            if let Err(e) = store.append(record.clone()) {
                stop.store(true, Ordering::Relaxed);
                return Err(e);
            }
            on_record(summary.ran, &record);
        }
        Ok(())
    })?;
    Ok(summary)
}

/// Manifest for a sweep: the grid, worker count and bundle fingerprints.
pub fn sweep_manifest(grid: &SweepGrid, bundle_dir: &Path, workers: usize, started_at: u64) -> Result<RunManifest> {
    let config = serde_json::json!({
        "grid": grid,
        "grid_points": grid.len(),
        "workers": workers,
        "bundle": bundle_dir.display().to_string(),
    });
    let mut m = RunManifest::new("sweep", config, None, started_at);
    for f in Bundle::files(bundle_dir) {
        m.add_input(&f)?;
    }
    Ok(m)
}
