//! File formats, trajectory evaluation and the glue behind the `ctlo`
//! command-line tool.

pub mod metrics;
pub mod points;
pub mod tum;

use ctlo_core::pipeline::{Counters, Odometry, OdometryConfig, OdometryOutput, PipelineError};
use thiserror::Error;

use crate::points::{PointRecord, PointsError};

pub use metrics::{compute_ate, compute_rte, AteReport, MetricsError, RteReport};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Points(#[from] PointsError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Feeds a point stream through a fresh pipeline in batches, so the file is
/// never held in memory.
pub fn run_stream<I>(config: OdometryConfig, records: I) -> Result<(OdometryOutput, Counters), RunError>
where
    I: IntoIterator<Item = Result<PointRecord, PointsError>>,
{
    const BATCH: usize = 4096;
    let mut odo = Odometry::new(config)?;
    let mut batch = Vec::with_capacity(BATCH);
    for r in records {
        batch.push(r?.measurement());
        if batch.len() == BATCH {
            odo.push(&batch)?;
            batch.clear();
        }
    }
    odo.push(&batch)?;
    odo.finish()?;
    Ok((odo.output().clone(), *odo.counters()))
}
